//! R-wave detection.
//!
//! The record is reduced to an energy signal: moving-median baseline
//! removal, a first difference, then the Teager-Kaiser operator
//! `y[n] = d[n]^2 - d[n-1] d[n+1]`. The first R wave is the argmax of the
//! circular correlation between a spike template and two adjacent 256-sample
//! blocks of that signal. Later beats are tracked by predicting one period
//! ahead and searching a small window with the template's central core.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::{EcgSignal, RWaveAnnotation, DEFAULT_SAMPLING_RATE_HZ};
use crate::synth::{synthesize_ecg, SynthConfig};
use crate::transform::Correlator;

pub const TEMPLATE_LEN: usize = 256;
pub const TEMPLATE_CENTER: usize = TEMPLATE_LEN / 2;

/// Correlation peaks below this are treated as "nothing there".
pub const PEAK_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Moving-median width for baseline removal (odd).
    pub baseline_window: usize,
    /// Half-width of the tracking search window.
    pub search_radius: usize,
    /// Length of the template core used while tracking.
    pub core_len: usize,
    /// Minimum gap between detections.
    pub refractory: usize,
    /// A tracked candidate whose core score falls below this fraction of the
    /// running beat score is treated as a missed beat.
    pub reject_ratio: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::for_rate(DEFAULT_SAMPLING_RATE_HZ)
    }
}

impl DetectorConfig {
    /// Defaults scaled to a sampling rate (±48 samples, 200 ms refractory and
    /// a 0.6 s median at 360 Hz). Template and core lengths stay fixed.
    pub fn for_rate(sampling_rate_hz: f64) -> Self {
        let scale = sampling_rate_hz / DEFAULT_SAMPLING_RATE_HZ;
        let median = (0.6 * sampling_rate_hz).round() as usize;
        Self {
            baseline_window: (median | 1).max(3),
            search_radius: ((48.0 * scale).round() as usize).max(1),
            core_len: 32,
            refractory: ((0.2 * sampling_rate_hz).round() as usize).max(1),
            reject_ratio: 0.25,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.baseline_window < 3 || self.baseline_window.is_multiple_of(2) {
            return Err(invalid("baseline window must be odd and >= 3"));
        }
        if self.core_len < 2 || self.core_len > TEMPLATE_LEN || self.core_len % 2 == 1 {
            return Err(invalid("core length must be even and within the template"));
        }
        if !(0.0..1.0).contains(&self.reject_ratio) {
            return Err(invalid("reject ratio must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Teager-Kaiser energy of the differenced record. `values[j]` sits at
/// record index `j + origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct TkSignal {
    values: Vec<f64>,
    origin: usize,
}

impl TkSignal {
    pub fn new(values: Vec<f64>, origin: usize) -> Self {
        Self { values, origin }
    }

    /// Baseline removal, first difference and TK energy. The output is three
    /// samples shorter than the input.
    pub fn from_samples(samples: &[f64], baseline_window: usize) -> Result<Self> {
        let clean = moving_median_residual(samples, baseline_window)?;
        Ok(Self { values: teager_kaiser(&differentiate(&clean)), origin: 1 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn at(&self, i: isize) -> f64 {
        if i < 0 {
            0.0
        } else {
            self.values.get(i as usize).copied().unwrap_or(0.0)
        }
    }
}

/// Unit-energy spike template of [`TEMPLATE_LEN`] samples with its peak
/// near [`TEMPLATE_CENTER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Template {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Template {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Template::new(v)
    }
}

impl From<Template> for Vec<f64> {
    fn from(t: Template) -> Self {
        t.values
    }
}

impl Template {
    /// Normalizes `values` to unit energy.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != TEMPLATE_LEN {
            return Err(Error::Size(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("template values must be finite"));
        }
        let energy = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if energy < PEAK_FLOOR {
            return Err(invalid("template has no energy"));
        }
        Ok(Self { values: values.into_iter().map(|v| v / energy).collect() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `len` samples centered on the template center.
    pub fn core(&self, len: usize) -> &[f64] {
        let half = len / 2;
        &self.values[TEMPLATE_CENTER - half..TEMPLATE_CENTER - half + len]
    }
}

/// Subtract a moving median (edge windows are truncated to the record).
pub fn remove_baseline(signal: &EcgSignal, window: usize) -> Result<EcgSignal> {
    signal.with_samples(moving_median_residual(signal.samples(), window)?)
}

fn moving_median_residual(x: &[f64], window: usize) -> Result<Vec<f64>> {
    let med = moving_median(x, window)?;
    Ok(x.iter().zip(med).map(|(v, m)| v - m).collect())
}

/// Median of `x[i-h ..= i+h]` clipped to the record, `h = window / 2`.
/// Even-sized edge windows take the mean of the two middle values.
pub fn moving_median(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(invalid(format!("median window {window} must be odd and >= 3")));
    }
    if window >= x.len() {
        return Err(Error::InsufficientData(format!(
            "median window {window} needs a longer signal than {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("signal values must be finite"));
    }
    let h = window / 2;
    let n = x.len();
    let mut sorted: Vec<f64> = x[..=h].to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let m = sorted.len();
        out.push(if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) });
        if i + h + 1 < n {
            let v = x[i + h + 1];
            let at = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.insert(at, v);
        }
        if i >= h {
            let v = x[i - h];
            let at = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.remove(at);
        }
    }
    Ok(out)
}

/// `d[n] = x[n+1] - x[n]`.
pub fn differentiate(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `y[j] = d[j+1]^2 - d[j] d[j+2]`, defined on the interior only.
pub fn teager_kaiser(d: &[f64]) -> Vec<f64> {
    d.windows(3).map(|w| w[1] * w[1] - w[0] * w[2]).collect()
}

/// Template correlation score at every location of a 512-sample span,
/// computed as two independent 256-sample circular correlations.
fn two_block_scores(corr: &Correlator, span: &[f64]) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; 2 * TEMPLATE_LEN];
    for (b, block) in span.chunks_exact(TEMPLATE_LEN).enumerate() {
        let r = corr.correlate(block)?;
        for (tau, v) in r.into_iter().enumerate() {
            scores[b * TEMPLATE_LEN + (tau + TEMPLATE_CENTER) % TEMPLATE_LEN] = v;
        }
    }
    Ok(scores)
}

/// Index of the maximum; near-ties (within 1e-9 relative) go to the
/// smaller index.
fn argmax_low(v: &[f64]) -> Option<(usize, f64)> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let tol = 1e-9 * m.abs();
    v.iter().position(|&x| x >= m - tol).map(|i| (i, m))
}

/// First R wave: argmax over the first 512 TK samples, in record
/// coordinates.
pub fn detect_first_rwave(tk: &TkSignal, template: &Template) -> Result<usize> {
    if tk.len() < 2 * TEMPLATE_LEN {
        return Err(Error::InsufficientData(format!(
            "{} energy samples, need {}",
            tk.len(),
            2 * TEMPLATE_LEN
        )));
    }
    let corr = Correlator::new(template.values())?;
    let scores = two_block_scores(&corr, &tk.values[..2 * TEMPLATE_LEN])?;
    let (loc, peak) = argmax_low(&scores).ok_or(Error::NoSpike { peak: f64::NAN })?;
    if peak < PEAK_FLOOR {
        return Err(Error::NoSpike { peak });
    }
    Ok(tk.origin + loc)
}

/// Full-template score centered at TK index `p`, on the same scale as the
/// circular correlation.
fn template_score(tk: &TkSignal, template: &Template, p: usize) -> f64 {
    let start = p as isize - TEMPLATE_CENTER as isize;
    template.values.iter().enumerate().map(|(i, t)| t * tk.at(start + i as isize)).sum::<f64>()
        / TEMPLATE_LEN as f64
}

fn core_score(tk: &TkSignal, core: &[f64], p: isize) -> f64 {
    let start = p - (core.len() / 2) as isize;
    core.iter().enumerate().map(|(i, c)| c * tk.at(start + i as isize)).sum()
}

/// Period to the next beat, from a second two-block detection starting one
/// refractory gap after `f`. Takes the earliest strong local peak rather than
/// the global one, so a taller beat further on does not double the period.
fn initial_period(tk: &TkSignal, template: &Template, f: usize, cfg: &DetectorConfig) -> Result<Option<usize>> {
    let start = f + cfg.refractory;
    if start >= tk.len() {
        return Ok(None);
    }
    let mut span = vec![0.0; 2 * TEMPLATE_LEN];
    let avail = (tk.len() - start).min(span.len());
    span[..avail].copy_from_slice(&tk.values[start..start + avail]);
    let corr = Correlator::new(template.values())?;
    let scores = two_block_scores(&corr, &span)?;
    let Some((_, peak)) = argmax_low(&scores[..avail]) else {
        return Ok(None);
    };
    let reference = template_score(tk, template, f);
    if peak < PEAK_FLOOR || peak < cfg.reject_ratio * reference {
        return Ok(None);
    }
    let is_peak = |i: usize| {
        let left = if i == 0 { f64::NEG_INFINITY } else { scores[i - 1] };
        let right = if i + 1 >= avail { f64::NEG_INFINITY } else { scores[i + 1] };
        scores[i] >= 0.5 * peak && scores[i] >= left && scores[i] >= right
    };
    Ok((0..avail).find(|&i| is_peak(i)).map(|i| start + i - f))
}

/// Track beats forward and backward from the first detection `first`
/// (record coordinates).
pub fn track_rwaves(
    tk: &TkSignal,
    first: usize,
    template: &Template,
    cfg: &DetectorConfig,
) -> Result<RWaveAnnotation> {
    cfg.validate()?;
    let f = first
        .checked_sub(tk.origin)
        .filter(|&f| f < tk.len())
        .ok_or_else(|| invalid(format!("first detection {first} outside the energy signal")))?;
    let Some(p0) = initial_period(tk, template, f, cfg)? else {
        return RWaveAnnotation::new(vec![first]);
    };
    let core = template.core(cfg.core_len);
    let lo_period = cfg.refractory.max(p0 / 2) as isize;
    let hi_period = (2 * p0) as isize;
    let radius = cfg.search_radius as isize;
    let refractory = cfg.refractory as isize;
    let len = tk.len() as isize;
    let f = f as isize;
    let base_score = core_score(tk, core, f);

    let best_in = |lo: isize, hi: isize| -> Option<(isize, f64)> {
        let mut best: Option<(isize, f64)> = None;
        for p in lo..=hi {
            let s = core_score(tk, core, p);
            if best.is_none_or(|(_, b)| s > b + 1e-12 * b.abs()) {
                best = Some((p, s));
            }
        }
        best
    };

    let mut forward = Vec::new();
    {
        let (mut last, mut period, mut pred, mut missed) = (f, p0 as isize, f + p0 as isize, false);
        let mut reference = base_score;
        loop {
            let lo = (pred - radius).max(last + refractory);
            let hi = (pred + radius).min(len - 1);
            if lo >= len || lo > hi {
                break;
            }
            match best_in(lo, hi) {
                Some((p, s)) if s >= cfg.reject_ratio * reference && s > PEAK_FLOOR => {
                    if !missed {
                        period = (p - last).clamp(lo_period, hi_period);
                    }
                    forward.push(p);
                    reference = 0.875 * reference + 0.125 * s;
                    last = p;
                    pred = p + period;
                    missed = false;
                }
                _ => {
                    pred += period;
                    missed = true;
                }
            }
        }
    }

    let mut backward = Vec::new();
    {
        let (mut next, mut period, mut missed) = (f, p0 as isize, false);
        let mut pred = f - period;
        let mut reference = base_score;
        loop {
            let lo = (pred - radius).max(0);
            let hi = (pred + radius).min(next - refractory);
            if hi < 0 || lo > hi {
                break;
            }
            match best_in(lo, hi) {
                Some((p, s)) if s >= cfg.reject_ratio * reference && s > PEAK_FLOOR => {
                    if !missed {
                        period = (next - p).clamp(lo_period, hi_period);
                    }
                    backward.push(p);
                    reference = 0.875 * reference + 0.125 * s;
                    next = p;
                    pred = p - period;
                    missed = false;
                }
                _ => {
                    pred -= period;
                    missed = true;
                }
            }
        }
    }

    let origin = tk.origin as isize;
    let locations: Vec<usize> = backward
        .into_iter()
        .rev()
        .chain(std::iter::once(f))
        .chain(forward)
        .map(|p| (p + origin) as usize)
        .collect();
    RWaveAnnotation::new(locations)
}

/// Full pipeline on a record.
pub fn detect_rwaves(signal: &EcgSignal, template: &Template, cfg: &DetectorConfig) -> Result<RWaveAnnotation> {
    cfg.validate()?;
    let tk = TkSignal::from_samples(signal.samples(), cfg.baseline_window)?;
    let first = detect_first_rwave(&tk, template)?;
    track_rwaves(&tk, first, template, cfg)
}

/// Average of 256-sample TK windows centered on annotated beats (windows
/// running off either end are skipped), normalized to unit energy.
pub fn build_template_from_tk(sources: &[(TkSignal, RWaveAnnotation)]) -> Result<Template> {
    let mut acc = vec![0.0; TEMPLATE_LEN];
    let mut count = 0usize;
    for (tk, ann) in sources {
        for &r in ann.locations() {
            let Some(c) = r.checked_sub(tk.origin) else { continue };
            let Some(start) = c.checked_sub(TEMPLATE_CENTER) else { continue };
            if start + TEMPLATE_LEN > tk.len() {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(&tk.values[start..start + TEMPLATE_LEN]) {
                *a += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData("no annotated beat has a full template window".into()));
    }
    Template::new(acc.into_iter().map(|v| v / count as f64).collect())
}

/// Template from annotated records, using the detector's preprocessing.
pub fn build_default_template(
    recordings: &[(EcgSignal, RWaveAnnotation)],
    cfg: &DetectorConfig,
) -> Result<Template> {
    let sources = recordings
        .iter()
        .map(|(s, a)| Ok((TkSignal::from_samples(s.samples(), cfg.baseline_window)?, a.clone())))
        .collect::<Result<Vec<_>>>()?;
    build_template_from_tk(&sources)
}

/// Shipped template, averaged over ten synthetic records.
pub fn default_template() -> &'static Template {
    static TEMPLATE: OnceLock<Template> = OnceLock::new();
    TEMPLATE.get_or_init(|| {
        let recordings: Vec<_> = (0..10u64)
            .map(|i| {
                let cfg = SynthConfig::new(30, 260 + 8 * i as usize, 10, 0x5eed_7e3a + i)
                    .with_snr_db(30.0)
                    .with_amplitude_jitter(0.05);
                synthesize_ecg(&cfg).expect("template synthesis parameters are valid")
            })
            .collect();
        build_default_template(&recordings, &DetectorConfig::default()).expect("synthetic beats give a template")
    })
}
