//! Core signal types: records, beat-delimited segments and R-wave annotations.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::resample::resample_to_length;

/// MIT-BIH sampling rate, used when nothing else is known.
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 360.0;

/// MIT-BIH ADC resolution.
pub const DEFAULT_RESOLUTION_BITS: u8 = 11;

/// Uniform segment length used by the codec.
pub const DEFAULT_SEGMENT_LEN: usize = 256;

/// A sampled single-lead ECG record.
///
/// Amplitudes are kept as `f64` regardless of the source resolution;
/// `resolution_bits` only feeds compression-ratio reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgSignal {
    samples: Vec<f64>,
    sampling_rate_hz: f64,
    resolution_bits: u8,
}

impl EcgSignal {
    pub fn new(samples: Vec<f64>, sampling_rate_hz: f64, resolution_bits: u8) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("signal has no samples".into()));
        }
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(invalid(format!("sampling rate {sampling_rate_hz} must be positive")));
        }
        if !(8..=16).contains(&resolution_bits) {
            return Err(invalid(format!("resolution {resolution_bits} bits outside [8, 16]")));
        }
        Ok(Self { samples, sampling_rate_hz, resolution_bits })
    }

    /// Signal at the MIT-BIH defaults (360 Hz, 11 bits).
    pub fn with_defaults(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, DEFAULT_SAMPLING_RATE_HZ, DEFAULT_RESOLUTION_BITS)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn resolution_bits(&self) -> u8 {
        self.resolution_bits
    }

    /// Same metadata, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sampling_rate_hz, self.resolution_bits)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Strictly increasing R-wave sample locations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RWaveAnnotation {
    locations: Vec<usize>,
}

impl RWaveAnnotation {
    pub fn new(locations: Vec<usize>) -> Result<Self> {
        if let Some(w) = locations.windows(2).find(|w| w[1] <= w[0]) {
            return Err(invalid(format!(
                "annotation not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { locations })
    }

    /// Like [`RWaveAnnotation::new`], additionally checking every index is
    /// inside a signal of `signal_len` samples.
    pub fn for_signal(locations: Vec<usize>, signal_len: usize) -> Result<Self> {
        if let Some(&last) = locations.last() {
            if last >= signal_len {
                return Err(invalid(format!(
                    "annotation {last} beyond signal length {signal_len}"
                )));
            }
        }
        Self::new(locations)
    }

    pub fn locations(&self) -> &[usize] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// R-to-R periods between consecutive locations.
    pub fn periods(&self) -> Vec<usize> {
        self.locations.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn mean_period(&self) -> Option<f64> {
        let p = self.periods();
        if p.is_empty() {
            None
        } else {
            Some(p.iter().sum::<usize>() as f64 / p.len() as f64)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.locations).expect("usize vec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let locations: Vec<usize> = serde_json::from_str(text)?;
        Self::new(locations)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.locations.len() * 7);
        for l in &self.locations {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }
}

/// One R-to-R run of samples, `[n_i, n_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    start_index: usize,
    samples: Vec<f64>,
}

impl Segment {
    pub fn new(start_index: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid(format!("segment period {} < 2", samples.len())));
        }
        Ok(Self { start_index, samples })
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// R-to-R period; equal to the number of samples.
    pub fn period(&self) -> usize {
        self.samples.len()
    }

    pub fn normalize(&self, target_len: usize) -> Result<NormalizedSegment> {
        Ok(NormalizedSegment {
            samples: resample_to_length(&self.samples, target_len)?,
            original_period: self.period(),
        })
    }
}

/// A segment resampled to the codec's uniform length.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSegment {
    samples: Vec<f64>,
    original_period: usize,
}

impl NormalizedSegment {
    pub fn new(samples: Vec<f64>, original_period: usize) -> Result<Self> {
        if samples.len() < 2 || original_period < 2 {
            return Err(invalid("normalized segment needs length and period >= 2"));
        }
        Ok(Self { samples, original_period })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn original_period(&self) -> usize {
        self.original_period
    }
}

/// Cut `samples` at each annotated R-wave. Samples before the first and
/// from the last annotation onward are not covered.
pub fn partition_rr(samples: &[f64], annotation: &RWaveAnnotation) -> Result<Vec<Segment>> {
    let locs = annotation.locations();
    if let Some(&last) = locs.last() {
        if last > samples.len() {
            return Err(invalid(format!(
                "annotation {last} beyond signal length {}",
                samples.len()
            )));
        }
    }
    locs.windows(2)
        .map(|w| Segment::new(w[0], samples[w[0]..w[1]].to_vec()))
        .collect()
}

/// Cut `samples` into consecutive equal-length windows, dropping the tail.
pub fn partition_equal(samples: &[f64], window: usize) -> Result<Vec<Segment>> {
    if window < 2 {
        return Err(invalid("window must be >= 2"));
    }
    samples
        .chunks_exact(window)
        .enumerate()
        .map(|(i, c)| Segment::new(i * window, c.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_invariants() {
        assert!(EcgSignal::new(vec![], 360.0, 11).is_err());
        assert!(EcgSignal::new(vec![1.0], 0.0, 11).is_err());
        assert!(EcgSignal::new(vec![1.0], 360.0, 7).is_err());
        assert!(EcgSignal::new(vec![1.0], 360.0, 17).is_err());
        assert!(EcgSignal::new(vec![1.0], 360.0, 16).is_ok());
    }

    #[test]
    fn annotation_must_increase() {
        assert!(RWaveAnnotation::new(vec![1, 1]).is_err());
        assert!(RWaveAnnotation::new(vec![3, 2]).is_err());
        assert!(RWaveAnnotation::for_signal(vec![1, 10], 10).is_err());
        let a = RWaveAnnotation::new(vec![2, 5, 11]).unwrap();
        assert_eq!(a.periods(), vec![3, 6]);
        assert_eq!(RWaveAnnotation::from_json(&a.to_json()).unwrap(), a);
        assert_eq!(a.to_csv(), "2\n5\n11\n");
    }

    #[test]
    fn rr_partition_covers_between_annotations() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let a = RWaveAnnotation::new(vec![2, 7, 15]).unwrap();
        let segs = partition_rr(&x, &a).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].start_index(), 2);
        assert_eq!(segs[0].period(), 5);
        assert_eq!(segs[1].samples()[0], 7.0);
        assert_eq!(segs[1].period(), 8);
    }

    #[test]
    fn rr_partition_rejects_short_period() {
        let x = vec![0.0; 10];
        let a = RWaveAnnotation::new(vec![2, 3]).unwrap();
        assert!(partition_rr(&x, &a).is_err());
    }
}
