//! Length normalization by linear interpolation.

use crate::error::{invalid, Result};

/// Resample `samples` to exactly `target_length` points.
///
/// Output index `j` reads the input at the continuous position
/// `j * (n - 1) / (m - 1)`, so first and last samples map onto each other
/// exactly and equal lengths give the identity.
pub fn resample_to_length(samples: &[f64], target_length: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid(format!("resample input length {n} < 2")));
    }
    if target_length < 2 {
        return Err(invalid(format!("resample target length {target_length} < 2")));
    }
    let num = (n - 1) as f64;
    let den = (target_length - 1) as f64;
    let mut out = Vec::with_capacity(target_length);
    for j in 0..target_length {
        let pos = (j as f64 * num) / den;
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        let v = if frac == 0.0 {
            samples[i]
        } else if frac == 1.0 {
            samples[i + 1]
        } else {
            samples[i] + frac * (samples[i + 1] - samples[i])
        };
        out.push(v);
    }
    out[target_length - 1] = samples[n - 1];
    Ok(out)
}
