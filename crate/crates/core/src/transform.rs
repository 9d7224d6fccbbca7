//! Orthonormal DCT-II and FFT-based circular cross-correlation.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Orthonormal DCT-II of size `W`, evaluated by direct matrix product.
///
/// Row `k` of the basis is `a_k cos(pi (n + 1/2) k / W)` with `a_0 = sqrt(1/W)`
/// and `a_k = sqrt(2/W)` otherwise, so the matrix is orthogonal and the
/// inverse is its transpose. Time-domain and coefficient-domain squared
/// errors are therefore equal.
#[derive(Debug, Clone)]
pub struct DctBasis {
    size: usize,
    // row-major: basis[k * size + n]
    basis: Vec<f64>,
}

impl DctBasis {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(invalid("dct size must be >= 1"));
        }
        let w = size as f64;
        let mut basis = Vec::with_capacity(size * size);
        for k in 0..size {
            let a = if k == 0 { (1.0 / w).sqrt() } else { (2.0 / w).sqrt() };
            for n in 0..size {
                basis.push(a * (PI * (n as f64 + 0.5) * k as f64 / w).cos());
            }
        }
        Ok(Self { size, basis })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Basis row `k` (the `k`-th cosine).
    pub fn row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.size..(k + 1) * self.size]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok((0..self.size)
            .map(|k| self.row(k).iter().zip(x).map(|(b, v)| b * v).sum())
            .collect())
    }

    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check(c.len())?;
        let mut x = vec![0.0; self.size];
        for (k, &ck) in c.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            for (xn, b) in x.iter_mut().zip(self.row(k)) {
                *xn += ck * b;
            }
        }
        Ok(x)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.size {
            return Err(invalid(format!("dct input length {len} != basis size {}", self.size)));
        }
        Ok(())
    }
}

pub fn dct_forward(x: &[f64]) -> Result<Vec<f64>> {
    DctBasis::new(x.len())?.forward(x)
}

pub fn dct_inverse(c: &[f64]) -> Result<Vec<f64>> {
    DctBasis::new(c.len())?.inverse(c)
}

/// Circular cross-correlation against a fixed template, with the template
/// spectrum computed once.
///
/// `correlate(block)[tau] = (1/N) * sum_n template[n] * block[(n + tau) mod N]`.
pub struct Correlator {
    n: usize,
    template_conj: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Correlator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator").field("n", &self.n).finish()
    }
}

impl Correlator {
    pub fn new(template: &[f64]) -> Result<Self> {
        let n = template.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Size(n));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spec: Vec<Complex64> = template.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        forward.process(&mut spec);
        let template_conj = spec.into_iter().map(|c| c.conj()).collect();
        Ok(Self { n, template_conj, forward, inverse })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn correlate(&self, block: &[f64]) -> Result<Vec<f64>> {
        if block.len() != self.n {
            return Err(invalid(format!("block length {} != template length {}", block.len(), self.n)));
        }
        let mut buf: Vec<Complex64> = block.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, t) in buf.iter_mut().zip(&self.template_conj) {
            *b *= t;
        }
        self.inverse.process(&mut buf);
        // unnormalized inverse FFT contributes N, the correlation another N
        let scale = 1.0 / (self.n as f64 * self.n as f64);
        Ok(buf.into_iter().map(|c| c.re * scale).collect())
    }
}

/// One-shot circular cross-correlation; `N` must be a power of two.
pub fn fft_cross_correlate(template: &[f64], block: &[f64]) -> Result<Vec<f64>> {
    if block.len() != template.len() {
        return Err(invalid("template and block lengths differ"));
    }
    Correlator::new(template)?.correlate(block)
}
