//! Beat-synchronous compression.
//!
//! Each R-to-R segment is resampled to a fixed length, transformed by an
//! orthonormal DCT, quantized with an entropy-constrained scalar quantizer and
//! Huffman coded. Three frame structures are supported:
//!
//! * direct: every segment on its own;
//! * differential: after a bootstrap frame, each segment is coded as the
//!   difference from the decoder's reconstruction of the previous one
//!   (closed loop, so errors do not accumulate);
//! * joint: groups of `M` segments, a key frame followed by `M - 1`
//!   differences between adjacent original segments (open loop, reset at each
//!   key).
//!
//! Quantizers travel once per record in the file header.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coding::{build_huffman, BitStream, HuffmanBook};
use crate::error::{invalid, Error, Result};
use crate::quantizer::{default_lambda_grid, pick_operating_point, rd_sweep, QuantizerSpec, RdCurve, DEFAULT_XI};
use crate::resample::resample_to_length;
use crate::signal::{partition_rr, RWaveAnnotation, DEFAULT_SEGMENT_LEN};
use crate::transform::DctBasis;

pub const MAGIC: &[u8; 4] = b"ECGZ";
pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_TRAINING_SEGMENTS: usize = 16;
/// Bits charged per frame for the transmitted period.
pub const PERIOD_BITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Differential,
    Joint,
}

impl Mode {
    fn code(self) -> u8 {
        match self {
            Mode::Direct => 0,
            Mode::Differential => 1,
            Mode::Joint => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Mode::Direct),
            1 => Ok(Mode::Differential),
            2 => Ok(Mode::Joint),
            _ => Err(Error::Format(format!("unknown mode {c}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Direct => "direct",
            Mode::Differential => "differential",
            Mode::Joint => "joint",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "differential" => Ok(Mode::Differential),
            "joint" => Ok(Mode::Joint),
            _ => Err(invalid(format!("unknown mode {s:?} (direct, differential, joint)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameTag {
    Direct = 0,
    Differential = 1,
    JointKey = 2,
    JointDelta = 3,
}

impl FrameTag {
    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FrameTag::Direct),
            1 => Ok(FrameTag::Differential),
            2 => Ok(FrameTag::JointKey),
            3 => Ok(FrameTag::JointDelta),
            _ => Err(Error::Format(format!("unknown frame tag {c}"))),
        }
    }

    fn is_delta(self) -> bool {
        matches!(self, FrameTag::Differential | FrameTag::JointDelta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFrame {
    pub tag: FrameTag,
    /// Original R-to-R period `T_i`.
    pub period: usize,
    pub payload: BitStream,
}

/// Quantizers shared by encoder and decoder: one for key (direct) frames and
/// one for difference frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sideband {
    pub key: QuantizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<QuantizerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedRecord {
    pub mode: Mode,
    pub segment_len: usize,
    pub group_size: usize,
    pub sideband: Sideband,
    pub frames: Vec<CompressedFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub mode: Mode,
    pub segment_len: usize,
    /// Segments per joint group (`M`).
    pub group_size: usize,
    /// Entropy budget in bits per coefficient.
    pub rate_budget: f64,
    /// Initial level counts for the rate-distortion sweep.
    pub levels: Vec<usize>,
    /// Lagrange multipliers; scaled to the training variance when absent.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    pub training_segments: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Direct,
            segment_len: DEFAULT_SEGMENT_LEN,
            group_size: DEFAULT_GROUP_SIZE,
            rate_budget: 2.0,
            levels: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
            lambdas: None,
            training_segments: DEFAULT_TRAINING_SEGMENTS,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 || self.segment_len > u16::MAX as usize {
            return Err(invalid(format!("segment length {} outside [2, 65535]", self.segment_len)));
        }
        if self.mode == Mode::Joint && (self.group_size < 2 || self.group_size > u16::MAX as usize) {
            return Err(invalid(format!("joint group size {} must be in [2, 65535]", self.group_size)));
        }
        if !(self.rate_budget >= 0.0 && self.rate_budget.is_finite()) {
            return Err(invalid("rate budget must be finite and >= 0"));
        }
        if self.levels.is_empty() || self.training_segments == 0 {
            return Err(invalid("need at least one level count and one training segment"));
        }
        Ok(())
    }
}

/// R-to-R segments resampled to the codec length, with their DCT.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSegments {
    pub segment_len: usize,
    pub start: usize,
    pub periods: Vec<usize>,
    pub normalized: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<f64>>,
}

impl PreparedSegments {
    pub fn new(samples: &[f64], annotation: &RWaveAnnotation, segment_len: usize) -> Result<Self> {
        let segments = partition_rr(samples, annotation)?;
        if segments.is_empty() {
            return Err(Error::InsufficientData("need at least two R-waves for one segment".into()));
        }
        let basis = DctBasis::new(segment_len)?;
        let mut periods = Vec::with_capacity(segments.len());
        let mut normalized = Vec::with_capacity(segments.len());
        let mut coefficients = Vec::with_capacity(segments.len());
        for s in &segments {
            if s.period() > u16::MAX as usize {
                return Err(invalid(format!("period {} does not fit in 16 bits", s.period())));
            }
            let x = resample_to_length(s.samples(), segment_len)?;
            coefficients.push(basis.forward(&x)?);
            normalized.push(x);
            periods.push(s.period());
        }
        Ok(Self { segment_len, start: segments[0].start_index(), periods, normalized, coefficients })
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    /// Samples covered, `sum T_i`.
    pub fn covered(&self) -> usize {
        self.periods.iter().sum()
    }

    /// Indices of up to `k` segments spread evenly over the record.
    pub fn training_indices(&self, k: usize) -> Vec<usize> {
        let n = self.len();
        if n <= k {
            return (0..n).collect();
        }
        (0..k).map(|i| i * (n - 1) / (k - 1).max(1)).collect()
    }
}

/// Rate-distortion curves for key coefficients and adjacent-segment
/// coefficient differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedCurves {
    pub key: RdCurve,
    pub delta: Option<RdCurve>,
}

impl TrainedCurves {
    pub fn train(prepared: &PreparedSegments, config: &CodecConfig) -> Result<Self> {
        config.validate()?;
        let picks = prepared.training_indices(config.training_segments);
        let key_data: Vec<f64> = picks.iter().flat_map(|&i| prepared.coefficients[i].iter().copied()).collect();
        let key = sweep(&key_data, config)?;
        let delta = if config.mode == Mode::Direct || prepared.len() < 2 {
            None
        } else {
            let mut pairs: Vec<usize> = prepared.training_indices(config.training_segments).into_iter().map(|i| i.max(1)).collect();
            pairs.dedup();
            let data: Vec<f64> = pairs
                .iter()
                .flat_map(|&i| prepared.coefficients[i].iter().zip(&prepared.coefficients[i - 1]).map(|(a, b)| a - b))
                .collect();
            Some(sweep(&data, config)?)
        };
        Ok(Self { key, delta })
    }

    /// Quantizers at the largest hull rate within the budget.
    pub fn sideband(&self, rate_budget: f64) -> Result<Sideband> {
        self.sideband_split(rate_budget, rate_budget)
    }

    /// Separate budgets for key and difference frames.
    pub fn sideband_split(&self, key_budget: f64, delta_budget: f64) -> Result<Sideband> {
        let key = pick_operating_point(&self.key, key_budget)?.spec.clone();
        let delta = match &self.delta {
            Some(c) => Some(pick_operating_point(c, delta_budget)?.spec.clone()),
            None => None,
        };
        Ok(Sideband { key, delta })
    }
}

fn sweep(data: &[f64], config: &CodecConfig) -> Result<RdCurve> {
    let lambdas = match &config.lambdas {
        Some(l) => l.clone(),
        None => {
            let m = data.iter().sum::<f64>() / data.len() as f64;
            let var = data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / data.len() as f64;
            default_lambda_grid(var.max(f64::MIN_POSITIVE))
        }
    };
    rd_sweep(data, &config.levels, &lambdas, DEFAULT_XI)
}

struct Coder {
    spec: QuantizerSpec,
    book: HuffmanBook,
}

impl Coder {
    fn new(spec: &QuantizerSpec) -> Result<Self> {
        Ok(Self { spec: spec.clone(), book: build_huffman(spec.probabilities())? })
    }

    /// Quantize and encode; returns indices, reproduced values and payload.
    fn code(&self, values: &[f64]) -> Result<(Vec<usize>, Vec<f64>, BitStream)> {
        let idx: Vec<usize> = values.iter().map(|&v| self.spec.quantize(v)).collect();
        let rec = idx.iter().map(|&i| self.spec.reproductions()[i]).collect();
        let payload = self.book.encode(&idx)?;
        Ok((idx, rec, payload))
    }

    fn decode(&self, payload: &BitStream, count: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let idx = self.book.decode(payload, count)?;
        let rec = idx.iter().map(|&i| self.spec.dequantize(i)).collect::<Result<Vec<_>>>()?;
        Ok((idx, rec))
    }
}

/// Encoder output together with what the encoder saw.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub record: CompressedRecord,
    pub indices: Vec<Vec<usize>>,
    /// Coefficients the decoder will reconstruct, frame by frame.
    pub reconstructed_coefficients: Vec<Vec<f64>>,
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Encode prepared segments with a given sideband.
pub fn encode_prepared(
    prepared: &PreparedSegments,
    mode: Mode,
    group_size: usize,
    sideband: &Sideband,
) -> Result<Encoded> {
    if prepared.is_empty() {
        return Err(Error::InsufficientData("no segments to encode".into()));
    }
    if mode == Mode::Joint && group_size < 2 {
        return Err(invalid("joint group size must be >= 2"));
    }
    let key = Coder::new(&sideband.key)?;
    let delta = match (&sideband.delta, mode) {
        (_, Mode::Direct) => None,
        (Some(d), _) => Some(Coder::new(d)?),
        (None, _) if prepared.len() == 1 => None,
        (None, _) => return Err(invalid(format!("{mode} mode needs a delta quantizer"))),
    };
    let n = prepared.len();
    let mut frames = Vec::with_capacity(n);
    let mut indices = Vec::with_capacity(n);
    let mut recon: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let c = &prepared.coefficients[i];
        let is_key = match mode {
            Mode::Direct => true,
            Mode::Differential => i == 0,
            Mode::Joint => i % group_size == 0,
        };
        let (tag, idx, rec, payload) = if is_key {
            let (idx, rec, payload) = key.code(c)?;
            let tag = if mode == Mode::Joint { FrameTag::JointKey } else { FrameTag::Direct };
            (tag, idx, rec, payload)
        } else {
            let coder = delta.as_ref().expect("delta coder exists for non-key frames");
            let prev = &recon[i - 1];
            let (target, tag) = match mode {
                Mode::Differential => (sub(c, prev), FrameTag::Differential),
                _ => (sub(c, &prepared.coefficients[i - 1]), FrameTag::JointDelta),
            };
            let (idx, q, payload) = coder.code(&target)?;
            (tag, idx, add(prev, &q), payload)
        };
        frames.push(CompressedFrame { tag, period: prepared.periods[i], payload });
        indices.push(idx);
        recon.push(rec);
    }
    let group_size = if mode == Mode::Joint { group_size } else { 1 };
    let record = CompressedRecord {
        mode,
        segment_len: prepared.segment_len,
        group_size,
        sideband: sideband.clone(),
        frames,
    };
    Ok(Encoded { record, indices, reconstructed_coefficients: recon })
}

pub fn encode_direct(prepared: &PreparedSegments, sideband: &Sideband) -> Result<Encoded> {
    encode_prepared(prepared, Mode::Direct, 1, sideband)
}

pub fn encode_differential(prepared: &PreparedSegments, sideband: &Sideband) -> Result<Encoded> {
    encode_prepared(prepared, Mode::Differential, 1, sideband)
}

pub fn encode_joint(prepared: &PreparedSegments, group_size: usize, sideband: &Sideband) -> Result<Encoded> {
    encode_prepared(prepared, Mode::Joint, group_size, sideband)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Concatenated reconstruction, `sum T_i` samples.
    pub samples: Vec<f64>,
    /// Reconstructed fixed-length segments.
    pub normalized: Vec<Vec<f64>>,
    pub indices: Vec<Vec<usize>>,
    pub periods: Vec<usize>,
}

/// Decode frames in order. Difference frames add to the previous
/// reconstruction, so frame order matters.
pub fn decode(record: &CompressedRecord) -> Result<Decoded> {
    let basis = DctBasis::new(record.segment_len)?;
    let key = Coder::new(&record.sideband.key)?;
    let delta = record.sideband.delta.as_ref().map(Coder::new).transpose()?;
    let mut samples = Vec::new();
    let mut normalized = Vec::with_capacity(record.frames.len());
    let mut indices = Vec::with_capacity(record.frames.len());
    let mut periods = Vec::with_capacity(record.frames.len());
    let mut prev: Option<Vec<f64>> = None;
    for (i, f) in record.frames.iter().enumerate() {
        let coeffs = if f.tag.is_delta() {
            let coder = delta.as_ref().ok_or_else(|| Error::Format("difference frame without delta quantizer".into()))?;
            let base = prev.as_ref().ok_or_else(|| Error::Format(format!("frame {i} is a difference with no predecessor")))?;
            let (idx, q) = coder.decode(&f.payload, record.segment_len)?;
            indices.push(idx);
            add(base, &q)
        } else {
            let (idx, c) = key.decode(&f.payload, record.segment_len)?;
            indices.push(idx);
            c
        };
        let x = basis.inverse(&coeffs)?;
        samples.extend(resample_to_length(&x, f.period)?);
        normalized.push(x);
        periods.push(f.period);
        prev = Some(coeffs);
    }
    Ok(Decoded { samples, normalized, indices, periods })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    /// Payload bits plus [`PERIOD_BITS`] per frame (side information such as
    /// the quantizer header is excluded).
    pub bits_total: usize,
    pub bits_per_sample: f64,
    /// Mean squared error between fixed-length segments.
    pub mse_normalized: f64,
    /// Mean squared error against the original samples.
    pub mse_original: f64,
    pub compression_ratio: f64,
    pub frames: usize,
    pub samples: usize,
}

impl CodecReport {
    fn new(bits_total: usize, samples: usize, mse_normalized: f64, mse_original: f64, resolution_bits: u8) -> Self {
        let bits_per_sample = if samples == 0 { 0.0 } else { bits_total as f64 / samples as f64 };
        let compression_ratio = if bits_per_sample > 0.0 { resolution_bits as f64 / bits_per_sample } else { f64::INFINITY };
        Self { bits_total, bits_per_sample, mse_normalized, mse_original, compression_ratio, frames: 0, samples }
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Compare a decoded record with its source.
pub fn evaluate(
    samples: &[f64],
    prepared: &PreparedSegments,
    record: &CompressedRecord,
    decoded: &Decoded,
    resolution_bits: u8,
) -> Result<CodecReport> {
    if decoded.normalized.len() != prepared.len() {
        return Err(invalid("decoded frame count differs from the source segments"));
    }
    let covered = prepared.covered();
    let original = &samples[prepared.start..prepared.start + covered];
    let mse_norm = prepared.normalized.iter().zip(&decoded.normalized).map(|(a, b)| mse(a, b)).sum::<f64>()
        / prepared.len() as f64;
    let bits: usize = record.frames.iter().map(|f| f.payload.bit_len() + PERIOD_BITS).sum();
    let mut r = CodecReport::new(bits, covered, mse_norm, mse(original, &decoded.samples), resolution_bits);
    r.frames = record.frames.len();
    Ok(r)
}

/// Train quantizers, encode, decode and report in one call.
pub fn compress(
    samples: &[f64],
    annotation: &RWaveAnnotation,
    config: &CodecConfig,
    resolution_bits: u8,
) -> Result<(CompressedRecord, CodecReport)> {
    config.validate()?;
    let prepared = PreparedSegments::new(samples, annotation, config.segment_len)?;
    let curves = TrainedCurves::train(&prepared, config)?;
    let sideband = curves.sideband(config.rate_budget)?;
    let enc = encode_prepared(&prepared, config.mode, config.group_size, &sideband)?;
    let dec = decode(&enc.record)?;
    let report = evaluate(samples, &prepared, &enc.record, &dec, resolution_bits)?;
    Ok((enc.record, report))
}

impl CompressedRecord {
    /// Serialize as an ECGZ file:
    ///
    /// ```text
    /// "ECGZ" | version u8 | mode u8 | L_seg u16 | M u16 | sideband len u32 |
    /// sideband JSON | frame count u32 | frames
    /// frame = tag u8 | T_i u16 | payload bits u32 | payload bytes
    /// ```
    ///
    /// Integers are little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let side = serde_json::to_vec(&self.sideband)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.mode.code());
        out.extend_from_slice(&to_u16(self.segment_len, "segment length")?.to_le_bytes());
        out.extend_from_slice(&to_u16(self.group_size, "group size")?.to_le_bytes());
        out.extend_from_slice(&to_u32(side.len(), "sideband length")?.to_le_bytes());
        out.extend_from_slice(&side);
        out.extend_from_slice(&to_u32(self.frames.len(), "frame count")?.to_le_bytes());
        for f in &self.frames {
            out.push(f.tag as u8);
            out.extend_from_slice(&to_u16(f.period, "period")?.to_le_bytes());
            out.extend_from_slice(&to_u32(f.payload.bit_len(), "payload length")?.to_le_bytes());
            out.extend_from_slice(f.payload.bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mode = Mode::from_code(r.u8()?)?;
        let segment_len = r.u16()? as usize;
        let group_size = r.u16()? as usize;
        if segment_len < 2 {
            return Err(Error::Format(format!("segment length {segment_len} < 2")));
        }
        let side_len = r.u32()? as usize;
        let sideband: Sideband = serde_json::from_slice(r.take(side_len)?)
            .map_err(|e| Error::Format(format!("sideband: {e}")))?;
        let count = r.u32()? as usize;
        let mut frames = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let tag = FrameTag::from_code(r.u8()?)?;
            let period = r.u16()? as usize;
            if period < 2 {
                return Err(Error::Format(format!("period {period} < 2")));
            }
            let bits = r.u32()? as usize;
            let payload = BitStream::from_parts(r.take(bits.div_ceil(8))?.to_vec(), bits)?;
            frames.push(CompressedFrame { tag, period, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { mode, segment_len, group_size, sideband, frames })
    }
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| invalid(format!("{what} {v} does not fit in 16 bits")))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(format!("{what} {v} does not fit in 32 bits")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

/// Per-segment uniform quantization of raw samples at `2^bits` levels.
///
/// With `update_range` each segment sends its own `[min, max]` (two 16-bit
/// values); otherwise the first segment's range is sent once and reused,
/// with out-of-range samples clamped.
pub fn baseline_uniform(
    samples: &[f64],
    annotation: &RWaveAnnotation,
    bits: u8,
    update_range: bool,
    resolution_bits: u8,
) -> Result<(Vec<f64>, CodecReport)> {
    if !(1..=16).contains(&bits) {
        return Err(invalid(format!("bits {bits} outside [1, 16]")));
    }
    let segments = partition_rr(samples, annotation)?;
    if segments.is_empty() {
        return Err(Error::InsufficientData("need at least two R-waves for one segment".into()));
    }
    let range = |s: &[f64]| {
        s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let frozen = range(segments[0].samples());
    let top = ((1u32 << bits) - 1) as f64;
    let mut recon = Vec::new();
    let mut original = Vec::new();
    for s in &segments {
        let (lo, hi) = if update_range { range(s.samples()) } else { frozen };
        let step = (hi - lo) / top;
        for &x in s.samples() {
            let r = if step > 0.0 { lo + ((x - lo) / step).round().clamp(0.0, top) * step } else { lo };
            recon.push(r);
            original.push(x);
        }
    }
    let side = if update_range { 32 * segments.len() } else { 32 };
    let bits_total = original.len() * bits as usize + side;
    let e = mse(&original, &recon);
    let mut report = CodecReport::new(bits_total, original.len(), e, e, resolution_bits);
    report.frames = segments.len();
    Ok((recon, report))
}

/// Keep only points that improve on every lower-rate point, sorted by rate.
fn frontier(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = points.iter().copied().filter(|(r, d)| r.is_finite() && *d > 0.0).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for q in p {
        if out.last().is_none_or(|l| q.1 < l.1) {
            out.push(q);
        }
    }
    out
}

/// Rate needed to reach `target_mse`, interpolating linearly in log-MSE
/// between measured `(bits_per_sample, mse)` points.
pub fn rate_at_mse(points: &[(f64, f64)], target_mse: f64) -> Option<f64> {
    let f = frontier(points);
    f.windows(2).find_map(|w| {
        let ((r0, d0), (r1, d1)) = (w[0], w[1]);
        (target_mse <= d0 && target_mse >= d1).then(|| {
            let t = (d0.ln() - target_mse.ln()) / (d0.ln() - d1.ln());
            r0 + t * (r1 - r0)
        })
    })
}

/// MSE reached at `rate`, interpolating linearly in log-MSE.
pub fn mse_at_rate(points: &[(f64, f64)], rate: f64) -> Option<f64> {
    let f = frontier(points);
    f.windows(2).find_map(|w| {
        let ((r0, d0), (r1, d1)) = (w[0], w[1]);
        (rate >= r0 && rate <= r1).then(|| {
            let t = (rate - r0) / (r1 - r0);
            (d0.ln() + t * (d1.ln() - d0.ln())).exp()
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize_ecg, SynthConfig};

    fn fixture(beats: usize, seed: u64) -> (Vec<f64>, RWaveAnnotation) {
        let (sig, ann) = synthesize_ecg(&SynthConfig::new(beats, 300, 10, seed).with_snr_db(30.0)).unwrap();
        (sig.into_samples(), ann)
    }

    fn config(mode: Mode, rate: f64) -> CodecConfig {
        CodecConfig { mode, rate_budget: rate, levels: vec![1, 2, 4, 8, 16, 32, 64], ..CodecConfig::default() }
    }

    fn trained(prepared: &PreparedSegments, mode: Mode, rate: f64) -> Sideband {
        TrainedCurves::train(prepared, &config(mode, rate)).unwrap().sideband(rate).unwrap()
    }

    #[test]
    fn mode_names() {
        for m in [Mode::Direct, Mode::Differential, Mode::Joint] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn constant_signal_trace() {
        // 16-sample segments of a constant: only the DC coefficient is nonzero
        let w = 16;
        let x = vec![0.5; 64];
        let ann = RWaveAnnotation::new(vec![0, 16, 32, 48]).unwrap();
        let prepared = PreparedSegments::new(&x, &ann, w).unwrap();
        let dc = 0.5 * (w as f64).sqrt();
        let spec = QuantizerSpec::from_parts(
            vec![-1.0, 0.5, 3.0],
            vec![0.0, dc - 0.01],
            vec![0.9, 0.1],
            0.0,
        )
        .unwrap();
        let side = Sideband { key: spec, delta: None };
        let enc = encode_direct(&prepared, &side).unwrap();
        let dec = decode(&enc.record).unwrap();
        for idx in &dec.indices {
            assert_eq!(idx[0], 1);
            assert!(idx[1..].iter().all(|&i| i == 0));
        }
        let r = evaluate(&x, &prepared, &enc.record, &dec, 11).unwrap();
        // one coefficient off by 0.01 spreads 1e-4 of energy over w samples
        assert!((r.mse_normalized - 1e-4 / w as f64).abs() < 1e-15);
        assert!((r.mse_original - 1e-4 / w as f64).abs() < 1e-12);
    }

    #[test]
    fn unresampled_segment_obeys_parseval() {
        let (x, _) = fixture(3, 1);
        let ann = RWaveAnnotation::new(vec![100, 356]).unwrap();
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let side = trained(&prepared, Mode::Direct, 2.0);
        let enc = encode_direct(&prepared, &side).unwrap();
        let dec = decode(&enc.record).unwrap();
        let r = evaluate(&x, &prepared, &enc.record, &dec, 11).unwrap();
        let c = &prepared.coefficients[0];
        let ch = &enc.reconstructed_coefficients[0];
        let coef_mse = c.iter().zip(ch).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 256.0;
        assert!((r.mse_normalized - coef_mse).abs() < 1e-12);
        assert!((r.mse_original - coef_mse).abs() < 1e-12);
    }

    #[test]
    fn empty_annotation_is_an_error() {
        let x = vec![0.0; 100];
        assert!(PreparedSegments::new(&x, &RWaveAnnotation::default(), 256).is_err());
        assert!(PreparedSegments::new(&x, &RWaveAnnotation::new(vec![5]).unwrap(), 256).is_err());
    }

    #[test]
    fn frame_counts_and_tags() {
        let (x, ann) = fixture(20, 2);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let n = prepared.len();
        let side = trained(&prepared, Mode::Joint, 2.0);
        let diff = encode_differential(&prepared, &side).unwrap().record;
        assert_eq!(diff.frames[0].tag, FrameTag::Direct);
        assert!(diff.frames[1..].iter().all(|f| f.tag == FrameTag::Differential));
        let j2 = encode_joint(&prepared, 2, &side).unwrap().record;
        for (i, f) in j2.frames.iter().enumerate() {
            assert_eq!(f.tag, if i % 2 == 0 { FrameTag::JointKey } else { FrameTag::JointDelta });
        }
        let jall = encode_joint(&prepared, n, &side).unwrap().record;
        assert_eq!(jall.frames.iter().filter(|f| f.tag == FrameTag::JointKey).count(), 1);
        assert_eq!(jall.frames.len(), n);

        let two = RWaveAnnotation::new(ann.locations()[..3].to_vec()).unwrap();
        let p2 = PreparedSegments::new(&x, &two, 256).unwrap();
        let d2 = encode_differential(&p2, &side).unwrap().record;
        assert_eq!(d2.frames.iter().map(|f| f.tag).collect::<Vec<_>>(), vec![FrameTag::Direct, FrameTag::Differential]);
    }

    #[test]
    fn all_modes_round_trip_indices_and_length() {
        let (x, ann) = fixture(40, 3);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        for mode in [Mode::Direct, Mode::Differential, Mode::Joint] {
            let side = trained(&prepared, mode, 1.5);
            let enc = encode_prepared(&prepared, mode, 8, &side).unwrap();
            let bytes = enc.record.to_bytes().unwrap();
            let back = CompressedRecord::from_bytes(&bytes).unwrap();
            assert_eq!(back, enc.record);
            let dec = decode(&back).unwrap();
            assert_eq!(dec.indices, enc.indices);
            assert_eq!(dec.samples.len(), prepared.covered());
            for (a, b) in dec.normalized.iter().zip(&enc.reconstructed_coefficients) {
                let basis = DctBasis::new(256).unwrap();
                let expect = basis.inverse(b).unwrap();
                assert!(a.iter().zip(&expect).all(|(u, v)| (u - v).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn closed_loop_does_not_drift() {
        let seg: Vec<f64> = (0..256).map(|n| (n as f64 * 0.07).sin() + if n == 30 { 1.0 } else { 0.0 }).collect();
        let x: Vec<f64> = (0..101).flat_map(|_| seg.iter().copied()).collect();
        let ann = RWaveAnnotation::new((0..=100).map(|i| i * 256).collect()).unwrap();
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let key = trained(&prepared, Mode::Direct, 2.0).key;
        // a delta quantizer whose middle cell maps small residuals to zero
        let delta = QuantizerSpec::from_parts(
            vec![-10.0, -0.3, 0.3, 10.0],
            vec![-0.5, 0.0, 0.5],
            vec![0.1, 0.8, 0.1],
            0.0,
        )
        .unwrap();
        let enc = encode_differential(&prepared, &Sideband { key, delta: Some(delta) }).unwrap();
        let dec = decode(&enc.record).unwrap();
        let errs: Vec<f64> = prepared.normalized.iter().zip(&dec.normalized).map(|(a, b)| mse(a, b)).collect();
        let first = errs[0];
        assert!(errs.iter().all(|&e| e <= 2.0 * first + 1e-15), "first {first}, max {:?}", errs.iter().cloned().fold(0.0, f64::max));
        // identical segments: every delta symbol is the zero cell
        assert!(enc.indices[1..].iter().all(|idx| idx.iter().all(|&i| i == 1)));
    }

    #[test]
    fn joint_drift_is_bounded_by_per_frame_errors() {
        let (x, ann) = fixture(20, 4);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let m = 8;
        let side = trained(&prepared, Mode::Joint, 1.0);
        let enc = encode_joint(&prepared, m, &side).unwrap();
        let delta = side.delta.as_ref().unwrap();
        let c = &prepared.coefficients;
        for g in (0..prepared.len()).step_by(m) {
            let mut bound = c[g].iter().zip(&enc.reconstructed_coefficients[g]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            for i in g + 1..(g + m).min(prepared.len()) {
                // per-frame error of the delta quantizer on this difference
                let frame_err = c[i]
                    .iter()
                    .zip(&c[i - 1])
                    .map(|(a, b)| {
                        let d = a - b;
                        (d - delta.reproductions()[delta.quantize(d)]).abs()
                    })
                    .fold(0.0, f64::max);
                bound += frame_err;
                let err = c[i].iter().zip(&enc.reconstructed_coefficients[i]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= bound + 1e-9, "frame {i}: {err} > {bound}");
            }
        }
    }

    #[test]
    fn fine_uniform_quantizer_is_near_lossless() {
        let (x, ann) = fixture(30, 5);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let training: Vec<f64> = prepared.coefficients.iter().flatten().copied().collect();
        let side = Sideband { key: QuantizerSpec::uniform(&training, 1 << 11).unwrap(), delta: None };
        let enc = encode_direct(&prepared, &side).unwrap();
        let dec = decode(&enc.record).unwrap();
        let r = evaluate(&x, &prepared, &enc.record, &dec, 11).unwrap();
        let covered = &x[prepared.start..prepared.start + prepared.covered()];
        let m = covered.iter().sum::<f64>() / covered.len() as f64;
        let var = covered.iter().map(|v| (v - m).powi(2)).sum::<f64>() / covered.len() as f64;
        assert!(r.mse_original < 1e-3 * var, "mse {} var {var}", r.mse_original);
    }

    #[test]
    fn reordered_frames_change_the_output() {
        let (x, ann) = fixture(10, 6);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let side = trained(&prepared, Mode::Differential, 2.0);
        let enc = encode_differential(&prepared, &side).unwrap();
        let mut rec = enc.record.clone();
        rec.frames.swap(1, 2);
        assert_ne!(decode(&rec).unwrap().samples, decode(&enc.record).unwrap().samples);
        rec.frames.swap(0, 1);
        assert!(matches!(decode(&rec), Err(Error::Format(_))));
    }

    #[test]
    fn header_layout_is_exact() {
        let (x, ann) = fixture(6, 7);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let side = trained(&prepared, Mode::Joint, 2.0);
        let rec = encode_joint(&prepared, 4, &side).unwrap().record;
        let b = rec.to_bytes().unwrap();
        assert_eq!(&b[..4], b"ECGZ");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 2);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 256);
        assert_eq!(u16::from_le_bytes([b[8], b[9]]), 4);
        let side_len = u32::from_le_bytes(b[10..14].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&b[14..14 + side_len]).unwrap();
        assert!(json.get("key").is_some() && json.get("delta").is_some());
        let mut pos = 14 + side_len;
        assert_eq!(u32::from_le_bytes(b[pos..pos + 4].try_into().unwrap()) as usize, rec.frames.len());
        pos += 4;
        for f in &rec.frames {
            assert_eq!(b[pos], f.tag as u8);
            assert_eq!(u16::from_le_bytes([b[pos + 1], b[pos + 2]]) as usize, f.period);
            let bits = u32::from_le_bytes(b[pos + 3..pos + 7].try_into().unwrap()) as usize;
            assert_eq!(bits, f.payload.bit_len());
            pos += 7 + bits.div_ceil(8);
        }
        assert_eq!(pos, b.len());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (x, ann) = fixture(6, 8);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let side = trained(&prepared, Mode::Direct, 2.0);
        let b = encode_direct(&prepared, &side).unwrap().record.to_bytes().unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        match CompressedRecord::from_bytes(&bad) {
            Err(Error::Format(m)) => assert_eq!(m, "bad magic"),
            other => panic!("expected bad magic, got {other:?}"),
        }
        assert!(CompressedRecord::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(CompressedRecord::from_bytes(&extra).is_err());
        let side_len = u32::from_le_bytes(b[10..14].try_into().unwrap()) as usize;
        let mut tag = b.clone();
        tag[14 + side_len + 4] = 9;
        assert!(matches!(CompressedRecord::from_bytes(&tag), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let (x, ann) = fixture(4, 9);
        let prepared = PreparedSegments::new(&x, &ann, 256).unwrap();
        let side = trained(&prepared, Mode::Direct, 3.0);
        let mut rec = encode_direct(&prepared, &side).unwrap().record;
        let p = &rec.frames[0].payload;
        let cut = p.bit_len() / 2;
        let mut short = BitStream::new();
        for i in 0..cut {
            short.push_bits(p.bit(i).unwrap() as u64, 1);
        }
        rec.frames[0].payload = short;
        assert!(matches!(decode(&rec), Err(Error::Truncated { .. })));
    }

    #[test]
    fn baseline_full_resolution_is_near_lossless() {
        let x: Vec<f64> = (0..3000).map(|n| (n as f64 * 0.013).sin()).collect();
        let ann = RWaveAnnotation::new(vec![0, 1000, 2000, 3000]).unwrap();
        let (_, r) = baseline_uniform(&x, &ann, 11, true, 11).unwrap();
        let step = 2.0 / 2047.0;
        assert!(r.mse_original <= 1.05 * step * step / 12.0);
        assert!((r.bits_per_sample - (11.0 + 96.0 / 3000.0)).abs() < 1e-12);
    }

    #[test]
    fn baseline_one_bit_snaps_to_range_ends() {
        let x: Vec<f64> = (0..400).map(|n| ((n * 37) % 101) as f64 / 100.0).collect();
        let ann = RWaveAnnotation::new(vec![0, 400]).unwrap();
        let (rec, r) = baseline_uniform(&x, &ann, 1, true, 11).unwrap();
        let (lo, hi) = (0.0, 1.0);
        let expect: f64 = x.iter().map(|&v| (v - lo).powi(2).min((v - hi).powi(2))).sum::<f64>() / x.len() as f64;
        assert!((r.mse_original - expect).abs() < 1e-12);
        assert!(rec.iter().all(|&v| v == lo || v == hi));
    }

    #[test]
    fn frozen_range_loses_on_drift() {
        let (sig, ann) = synthesize_ecg(&SynthConfig::new(30, 300, 10, 10).with_baseline_drift(3.0)).unwrap();
        for bits in [4u8, 6, 8] {
            let (_, upd) = baseline_uniform(sig.samples(), &ann, bits, true, 11).unwrap();
            let (_, frz) = baseline_uniform(sig.samples(), &ann, bits, false, 11).unwrap();
            assert!(frz.mse_original > upd.mse_original);
        }
    }

    #[test]
    fn interpolation_helpers() {
        let pts = [(1.0, 1.0), (2.0, 0.1), (3.0, 0.01), (2.5, 0.5)];
        assert!((rate_at_mse(&pts, 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert!((rate_at_mse(&pts, 10f64.powf(-1.5)).unwrap() - 2.5).abs() < 1e-12);
        assert!((mse_at_rate(&pts, 1.5).unwrap() - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!(rate_at_mse(&pts, 5.0).is_none());
        assert!(mse_at_rate(&pts, 0.5).is_none());
    }
}
