//! Statistics of DCT coefficients across segments: empirical PDFs, K-L
//! distances, the spread of those distances versus window size, and the
//! spread of per-segment codebooks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantizer::{design_ecsq, DEFAULT_MAX_ITER, DEFAULT_XI};
use crate::signal::{partition_equal, NormalizedSegment};
use crate::transform::DctBasis;

/// Additive floor applied to `q` before taking logarithms.
pub const KL_EPSILON: f64 = 1e-9;
pub const DEFAULT_BINS: usize = 64;
pub const MAX_KL_PAIRS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPdf {
    support: Vec<f64>,
    probabilities: Vec<f64>,
}

impl EmpiricalPdf {
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Equal-width bins over `[lo, hi]`; support points are bin centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdfGrid {
    lo: f64,
    hi: f64,
    bins: usize,
}

impl PdfGrid {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(invalid(format!("bins {bins} must be >= 2")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(invalid(format!("grid range [{lo}, {hi}] must be finite and nonempty")));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Grid over the range of all `values`.
    pub fn covering<'a>(values: impl IntoIterator<Item = &'a f64>, bins: usize) -> Result<Option<Self>> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            if !v.is_finite() {
                return Err(invalid("values must be finite"));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return Err(Error::InsufficientData("no values".into()));
        }
        if lo == hi {
            return Ok(None);
        }
        Self::new(lo, hi, bins).map(Some)
    }

    fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    fn bin(&self, v: f64) -> usize {
        (((v - self.lo) / self.width()).floor().max(0.0) as usize).min(self.bins - 1)
    }

    fn centers(&self) -> Vec<f64> {
        let w = self.width();
        (0..self.bins).map(|k| self.lo + (k as f64 + 0.5) * w).collect()
    }
}

/// Histogram PDF over `[min, max]` with `bins` cells. Equal values give a
/// single-cell PDF.
pub fn estimate_pdf(values: &[f64], bins: usize) -> Result<EmpiricalPdf> {
    if bins < 2 {
        return Err(invalid(format!("bins {bins} must be >= 2")));
    }
    match PdfGrid::covering(values, bins)? {
        Some(grid) => estimate_pdf_on_grid(values, &grid),
        None => Ok(EmpiricalPdf { support: vec![values[0]], probabilities: vec![1.0] }),
    }
}

/// Histogram on a fixed grid; values outside fall into the end bins.
pub fn estimate_pdf_on_grid(values: &[f64], grid: &PdfGrid) -> Result<EmpiricalPdf> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no values".into()));
    }
    let mut counts = vec![0usize; grid.bins];
    for &v in values {
        if !v.is_finite() {
            return Err(invalid("values must be finite"));
        }
        counts[grid.bin(v)] += 1;
    }
    let n = values.len() as f64;
    Ok(EmpiricalPdf { support: grid.centers(), probabilities: counts.into_iter().map(|c| c as f64 / n).collect() })
}

/// PDF over the distinct values themselves.
pub fn estimate_pdf_exact(values: &[f64]) -> Result<EmpiricalPdf> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut support = Vec::new();
    let mut probabilities: Vec<f64> = Vec::new();
    for v in sorted {
        if support.last() == Some(&v) {
            *probabilities.last_mut().expect("paired with support") += 1.0;
        } else {
            support.push(v);
            probabilities.push(1.0);
        }
    }
    probabilities.iter_mut().for_each(|p| *p /= n);
    Ok(EmpiricalPdf { support, probabilities })
}

/// `D(p || q) = sum p ln(p / q)` in nats, with `q` floored by
/// [`KL_EPSILON`] and renormalized.
pub fn kl_distance(p: &EmpiricalPdf, q: &EmpiricalPdf) -> Result<f64> {
    if p.support != q.support {
        return Err(Error::GridMismatch);
    }
    if p.probabilities == q.probabilities {
        return Ok(0.0);
    }
    let norm = 1.0 + KL_EPSILON * q.len() as f64;
    let d: f64 = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / ((qk + KL_EPSILON) / norm)).ln())
        .sum();
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlWindowPoint {
    pub window: usize,
    /// Population variance of the pairwise distances.
    pub kl_variance: f64,
    /// A direct `W x W` DCT costs `W` multiplies per sample.
    pub mults_per_sample: usize,
    pub segments: usize,
    pub pairs: usize,
}

/// For each window size: split into equal segments, DCT each, histogram all
/// segments on one pooled grid, and take the variance of `D(i || j)` over
/// ordered pairs `i != j` (a seeded sample of [`MAX_KL_PAIRS`] when there
/// are more).
pub fn kl_variance_vs_window(samples: &[f64], windows: &[usize], seed: u64) -> Result<Vec<KlWindowPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    windows
        .iter()
        .map(|&w| {
            if w < 2 || w * 4 > samples.len() {
                return Err(Error::InsufficientData(format!(
                    "window {w} needs at least {} samples, have {}",
                    4 * w.max(2),
                    samples.len()
                )));
            }
            let basis = DctBasis::new(w)?;
            let segments = partition_equal(samples, w)?;
            let coeffs = segments.iter().map(|s| basis.forward(s.samples())).collect::<Result<Vec<_>>>()?;
            if coeffs.len() < 2 {
                return Err(Error::InsufficientData("fewer than two segments".into()));
            }
            let pdfs = match PdfGrid::covering(coeffs.iter().flatten(), DEFAULT_BINS)? {
                Some(grid) => coeffs.iter().map(|c| estimate_pdf_on_grid(c, &grid)).collect::<Result<Vec<_>>>()?,
                None => return Ok(point(w, 0.0, coeffs.len(), coeffs.len() * (coeffs.len() - 1))),
            };
            let s = pdfs.len();
            let all = s * (s - 1);
            let pairs: Vec<(usize, usize)> = if all <= MAX_KL_PAIRS {
                (0..s).flat_map(|i| (0..s).filter(move |&j| j != i).map(move |j| (i, j))).collect()
            } else {
                (0..MAX_KL_PAIRS)
                    .map(|_| {
                        let i = rng.random_range(0..s);
                        let j = (i + rng.random_range(1..s)) % s;
                        (i, j)
                    })
                    .collect()
            };
            let d = pairs.iter().map(|&(i, j)| kl_distance(&pdfs[i], &pdfs[j])).collect::<Result<Vec<_>>>()?;
            Ok(point(w, population_variance(&d), s, d.len()))
        })
        .collect()
}

fn point(window: usize, kl_variance: f64, segments: usize, pairs: usize) -> KlWindowPoint {
    KlWindowPoint { window, kl_variance, mults_per_sample: window, segments, pairs }
}

pub fn population_variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("spearman needs two equal-length series of at least two values"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookVariance {
    /// Variance of the `l`-th reproduction value across segments.
    pub variances: Vec<f64>,
    /// Segments whose quantizer kept all levels; only these are compared.
    pub segments_used: usize,
}

/// Design a `lambda = 0` quantizer on each segment's DCT coefficients and
/// measure how much each codeword moves between segments.
pub fn codebook_variance(segments: &[NormalizedSegment], levels: usize) -> Result<CodebookVariance> {
    let Some(first) = segments.first() else {
        return Err(Error::InsufficientData("no segments".into()));
    };
    let basis = DctBasis::new(first.len())?;
    let mut books = Vec::with_capacity(segments.len());
    for s in segments {
        let c = basis.forward(s.samples())?;
        let d = design_ecsq(&c, levels, 0.0, DEFAULT_XI, DEFAULT_MAX_ITER)?;
        if d.spec.levels() == levels {
            books.push(d.spec.reproductions().to_vec());
        }
    }
    if books.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} segments kept all {levels} levels",
            books.len()
        )));
    }
    let variances = (0..levels)
        .map(|l| population_variance(&books.iter().map(|b| b[l]).collect::<Vec<_>>()))
        .collect();
    Ok(CodebookVariance { variances, segments_used: books.len() })
}
