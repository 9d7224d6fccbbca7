//! ECG compression by R-wave-synchronized segmentation, DCT and
//! entropy-constrained scalar quantization.

pub mod analysis;
pub mod codec;
pub mod coding;
pub mod detector;
pub mod error;
pub mod io;
pub mod quantizer;
pub mod resample;
pub mod signal;
pub mod synth;
pub mod transform;

pub use codec::{CodecConfig, CodecReport, CompressedRecord, Mode};
pub use detector::{default_template, detect_rwaves, DetectorConfig, Template, TkSignal};
pub use error::{Error, Result};
pub use quantizer::{design_ecsq, pick_operating_point, rd_sweep, QuantizerSpec, RdCurve, RdPoint};
pub use signal::{EcgSignal, NormalizedSegment, RWaveAnnotation, Segment};
pub use synth::{synthesize_ecg, SynthConfig};
