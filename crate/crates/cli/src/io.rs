use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use ecgz::detector::remove_baseline;
use ecgz::io::{read_csv, read_mit_annotations, read_mitbih_212};
use ecgz::{default_template, detect_rwaves, DetectorConfig, EcgSignal, Mode, RWaveAnnotation};
use serde::Deserialize;

use crate::{AnnotationArgs, InputArgs};

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Internal(String),
    Usage(String),
    Format(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Internal(m) | CliError::Usage(m) | CliError::Format(m) => f.write_str(m),
        }
    }
}

impl From<ecgz::Error> for CliError {
    fn from(e: ecgz::Error) -> Self {
        use ecgz::Error as E;
        match e {
            E::Format(_) | E::Truncated { .. } => CliError::Format(e.to_string()),
            E::Framing { .. }
            | E::Parse { .. }
            | E::InvalidParameter(_)
            | E::InsufficientData(_)
            | E::NoSpike { .. }
            | E::Json(_) => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Options readable from `--config`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub fs: Option<f64>,
    pub channel: Option<usize>,
    pub channels: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub group_size: Option<usize>,
    pub rate: Option<f64>,
    pub levels: Option<Vec<usize>>,
    pub lambdas: Option<Vec<f64>>,
    pub windows: Option<Vec<usize>>,
    pub segment_len: Option<usize>,
    pub training_segments: Option<usize>,
    pub rates: Option<Vec<f64>>,
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_config(path: Option<&PathBuf>) -> CliResult<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = String::from_utf8(read_bytes(p)?).map_err(|_| usage(format!("{} is not UTF-8", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn is_dat(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dat"))
}

pub fn load_signal(args: &InputArgs, cfg: &FileConfig) -> CliResult<EcgSignal> {
    let fs = args.fs.or(cfg.fs);
    if let Some(f) = fs {
        if !(f > 0.0 && f.is_finite()) {
            return Err(usage(format!("--fs must be positive, got {f}")));
        }
    }
    let bytes = read_bytes(&args.input)?;
    if bytes.is_empty() {
        return Err(usage(format!("{} is empty", args.input.display())));
    }
    if is_dat(&args.input) {
        let channels = args.channels.or(cfg.channels).unwrap_or(2);
        let channel = args.channel.or(cfg.channel).unwrap_or(0);
        if channel >= channels {
            return Err(usage(format!("channel {channel} out of range for {channels} channels")));
        }
        let mut sigs = read_mitbih_212(&bytes, channels, fs.unwrap_or(360.0))?;
        Ok(sigs.swap_remove(channel))
    } else {
        let fs = fs.ok_or_else(|| usage("--fs is required for CSV input"))?;
        let text = String::from_utf8(bytes).map_err(|_| usage(format!("{} is not UTF-8", args.input.display())))?;
        Ok(read_csv(&text, fs)?)
    }
}

/// Annotations from `--annotations`, or detected on the raw signal.
pub fn load_annotations(args: &AnnotationArgs, signal: &EcgSignal) -> CliResult<RWaveAnnotation> {
    let locations = match &args.annotations {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("atr")) => read_mit_annotations(&read_bytes(p)?)?,
        Some(p) => {
            let text = String::from_utf8(read_bytes(p)?).map_err(|_| usage(format!("{} is not UTF-8", p.display())))?;
            RWaveAnnotation::from_json(&text)?.locations().to_vec()
        }
        None => return detect(signal),
    };
    let inside: Vec<usize> = locations.into_iter().filter(|&l| l < signal.len()).collect();
    Ok(RWaveAnnotation::for_signal(inside, signal.len())?)
}

pub fn detect(signal: &EcgSignal) -> CliResult<RWaveAnnotation> {
    let cfg = DetectorConfig::for_rate(signal.sampling_rate_hz());
    Ok(detect_rwaves(signal, default_template(), &cfg)?)
}

/// Samples handed to the coder.
pub fn coding_samples(signal: &EcgSignal, keep_baseline: bool) -> CliResult<Vec<f64>> {
    if keep_baseline {
        return Ok(signal.samples().to_vec());
    }
    let window = DetectorConfig::for_rate(signal.sampling_rate_hz()).baseline_window;
    Ok(remove_baseline(signal, window)?.into_samples())
}

/// Write via a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, data: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(data).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// Write to `path`, or to stdout when absent.
pub fn emit(path: Option<&PathBuf>, data: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => write_atomic(p, data),
        None => std::io::stdout()
            .write_all(data)
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}
