use std::fmt::Write as _;

use ecgz::analysis::kl_variance_vs_window;
use ecgz::codec::{
    baseline_uniform, compress as run_compress, decode, encode_prepared, evaluate, PreparedSegments, TrainedCurves,
};
use ecgz::io::write_csv;
use ecgz::{synthesize_ecg, CodecConfig, CompressedRecord, Mode, RWaveAnnotation, RdCurve, SynthConfig};
use serde::Serialize;

use crate::io::{
    coding_samples, detect as detect_signal, emit, load_annotations, load_config, load_signal, read_bytes, usage,
    write_atomic, CliError, CliResult, FileConfig,
};
use crate::{CompareArgs, CompressArgs, DecompressArgs, DesignArgs, DetectArgs, KlArgs, QuantArgs, SynthArgs};

const DEFAULT_WINDOWS: [usize; 4] = [64, 128, 256, 512];
const DEFAULT_RATES: [f64; 13] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0];

fn codec_config(
    cfg: &FileConfig,
    quant: &QuantArgs,
    mode: Option<Mode>,
    group_size: Option<usize>,
    rate: Option<f64>,
) -> CliResult<CodecConfig> {
    let d = CodecConfig::default();
    let c = CodecConfig {
        mode: mode.or(cfg.mode).unwrap_or(d.mode),
        segment_len: cfg.segment_len.unwrap_or(d.segment_len),
        group_size: group_size.or(cfg.group_size).unwrap_or(d.group_size),
        rate_budget: rate.or(cfg.rate).unwrap_or(d.rate_budget),
        levels: quant.levels.clone().or_else(|| cfg.levels.clone()).unwrap_or(d.levels),
        lambdas: quant.lambdas.clone().or_else(|| cfg.lambdas.clone()),
        training_segments: cfg.training_segments.unwrap_or(d.training_segments),
    };
    if c.levels.is_empty() {
        return Err(usage("--levels is empty"));
    }
    if c.rate_budget < 0.0 || !c.rate_budget.is_finite() {
        return Err(usage(format!("--rate must be >= 0, got {}", c.rate_budget)));
    }
    c.validate()?;
    Ok(c)
}

pub fn detect(args: DetectArgs) -> CliResult<()> {
    let cfg = load_config(args.input.config.as_ref())?;
    let signal = load_signal(&args.input, &cfg)?;
    let ann = detect_signal(&signal)?;
    let summary = format!(
        "beats {} mean_period {}",
        ann.len(),
        ann.mean_period().map_or("n/a".to_string(), |p| format!("{p:.2}"))
    );
    let json = ann.to_json() + "\n";
    match &args.output {
        Some(p) => {
            write_atomic(p, json.as_bytes())?;
            println!("{summary}");
        }
        None => {
            emit(None, json.as_bytes())?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

pub fn analyze_kl(args: KlArgs) -> CliResult<()> {
    let cfg = load_config(args.input.config.as_ref())?;
    let signal = load_signal(&args.input, &cfg)?;
    let samples = coding_samples(&signal, args.keep_baseline)?;
    let requested = args.windows.clone().or(cfg.windows.clone()).unwrap_or(DEFAULT_WINDOWS.to_vec());
    let mut windows = Vec::new();
    for w in requested {
        if w == 0 || w > samples.len() / 4 {
            eprintln!("warning: skipping window {w} (need 1 <= W <= {})", samples.len() / 4);
        } else {
            windows.push(w);
        }
    }
    if windows.is_empty() {
        return Err(usage("no usable window sizes"));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let points = kl_variance_vs_window(&samples, &windows, seed)?;
    let mut out = String::from("W,kl_variance,mults_per_sample\n");
    for p in points {
        writeln!(out, "{},{},{}", p.window, p.kl_variance, p.mults_per_sample).unwrap();
    }
    emit(args.output.as_ref(), out.as_bytes())
}

#[derive(Serialize)]
struct PointOut {
    rate_bits_per_symbol: f64,
    distortion: f64,
    levels: usize,
    initial_levels: usize,
    lambda: f64,
}

#[derive(Serialize)]
struct CurveOut {
    points: Vec<PointOut>,
    /// Indices into `points`, in increasing rate.
    hull: Vec<usize>,
}

impl From<&RdCurve> for CurveOut {
    fn from(c: &RdCurve) -> Self {
        let points = c
            .points()
            .iter()
            .map(|p| PointOut {
                rate_bits_per_symbol: p.rate_bits_per_symbol,
                distortion: p.distortion,
                levels: p.levels,
                initial_levels: p.initial_levels,
                lambda: p.lambda,
            })
            .collect();
        CurveOut { points, hull: c.hull_indices().to_vec() }
    }
}

#[derive(Serialize)]
struct DesignOut {
    rate_budget: f64,
    key: CurveOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<CurveOut>,
    chosen: ecgz::codec::Sideband,
}

pub fn design(args: DesignArgs) -> CliResult<()> {
    let cfg = load_config(args.input.config.as_ref())?;
    let config = codec_config(&cfg, &args.quant, args.mode, None, args.rate)?;
    let signal = load_signal(&args.input, &cfg)?;
    let ann = load_annotations(&args.ann, &signal)?;
    let samples = coding_samples(&signal, args.ann.keep_baseline)?;
    let prepared = PreparedSegments::new(&samples, &ann, config.segment_len)?;
    let curves = TrainedCurves::train(&prepared, &config)?;
    let out = DesignOut {
        rate_budget: config.rate_budget,
        key: CurveOut::from(&curves.key),
        delta: curves.delta.as_ref().map(CurveOut::from),
        chosen: curves.sideband(config.rate_budget)?,
    };
    let json = serde_json::to_string_pretty(&out).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
    emit(args.output.as_ref(), json.as_bytes())
}

pub fn compress(args: CompressArgs) -> CliResult<()> {
    let cfg = load_config(args.input.config.as_ref())?;
    let config = codec_config(&cfg, &args.quant, args.mode, args.group_size, args.rate)?;
    let signal = load_signal(&args.input, &cfg)?;
    let ann = load_annotations(&args.ann, &signal)?;
    let samples = coding_samples(&signal, args.ann.keep_baseline)?;
    let (record, report) = run_compress(&samples, &ann, &config, signal.resolution_bits())?;
    write_atomic(&args.output, &record.to_bytes()?)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{json}");
    Ok(())
}

pub fn decompress(args: DecompressArgs) -> CliResult<()> {
    let bytes = read_bytes(&args.input)?;
    let record = CompressedRecord::from_bytes(&bytes).map_err(|e| CliError::Format(e.to_string()))?;
    let decoded = decode(&record).map_err(|e| CliError::Format(e.to_string()))?;
    emit(args.output.as_ref(), write_csv(&decoded.samples).as_bytes())
}

/// Measured `(bits_per_sample, mse)` points; modes with difference frames
/// try every pair of key and delta budgets and keep the lower frontier.
fn structure_points(
    samples: &[f64],
    prepared: &PreparedSegments,
    config: &CodecConfig,
    rates: &[f64],
    resolution_bits: u8,
) -> CliResult<Vec<(f64, f64)>> {
    let curves = TrainedCurves::train(prepared, config)?;
    let mut pts = Vec::new();
    for &rk in rates {
        for &rd in rates {
            if config.mode == Mode::Direct && rd != rk {
                continue;
            }
            let sb = curves.sideband_split(rk, rd)?;
            let enc = encode_prepared(prepared, config.mode, config.group_size, &sb)?;
            let dec = decode(&enc.record)?;
            let r = evaluate(samples, prepared, &enc.record, &dec, resolution_bits)?;
            pts.push((r.bits_per_sample, r.mse_original));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut front: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if front.last().is_none_or(|l| p.1 < l.1) {
            front.push(p);
        }
    }
    Ok(front)
}

pub fn compare(args: CompareArgs) -> CliResult<()> {
    let cfg = load_config(args.input.config.as_ref())?;
    let base = codec_config(&cfg, &args.quant, None, args.group_size, None)?;
    let rates = cfg.rates.clone().unwrap_or(DEFAULT_RATES.to_vec());
    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || rates.is_empty() {
        return Err(usage("rates must be nonnegative and nonempty"));
    }
    let signal = load_signal(&args.input, &cfg)?;
    let ann = load_annotations(&args.ann, &signal)?;
    let samples = coding_samples(&signal, args.ann.keep_baseline)?;
    let prepared = PreparedSegments::new(&samples, &ann, base.segment_len)?;
    let res = signal.resolution_bits();

    let mut out = String::from("method,rate_bits_per_sample,mse\n");
    for mode in [Mode::Direct, Mode::Differential, Mode::Joint] {
        let config = CodecConfig { mode, ..base.clone() };
        for (r, m) in structure_points(&samples, &prepared, &config, &rates, res)? {
            writeln!(out, "{mode},{r},{m}").unwrap();
        }
    }
    for (name, update) in [("uniform_update", true), ("uniform_frozen", false)] {
        for bits in 1..=res {
            let (_, r) = baseline_uniform(&samples, &ann, bits, update, res)?;
            writeln!(out, "{name},{},{}", r.bits_per_sample, r.mse_original).unwrap();
        }
    }
    emit(args.output.as_ref(), out.as_bytes())
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let mut cfg = SynthConfig::new(args.beats, args.period, args.jitter, args.seed);
    if let Some(s) = args.snr_db {
        cfg = cfg.with_snr_db(s);
    }
    if let Some(d) = args.drift {
        cfg = cfg.with_baseline_drift(d);
    }
    let (signal, ann): (_, RWaveAnnotation) = synthesize_ecg(&cfg)?;
    write_atomic(&args.output, write_csv(signal.samples()).as_bytes())?;
    if let Some(p) = &args.annotations {
        write_atomic(p, (ann.to_json() + "\n").as_bytes())?;
    }
    println!("samples {} beats {}", signal.len(), ann.len());
    Ok(())
}
