use ecgz::codec::{compress, decode, CompressedRecord};
use ecgz::io::{encode_212, read_mitbih_212};
use ecgz::{default_template, detect_rwaves, synthesize_ecg, CodecConfig, DetectorConfig, Mode, SynthConfig};

#[test]
fn format_212_record_detect_and_compress() {
    let (sig, truth) = synthesize_ecg(&SynthConfig::new(40, 290, 8, 21).with_snr_db(25.0)).unwrap();
    // to 11-bit ADC counts and back through the on-disk format
    let counts: Vec<i16> = sig.samples().iter().map(|v| (v * 400.0).round() as i16).collect();
    let read = read_mitbih_212(&encode_212(&counts), 1, 360.0).unwrap().swap_remove(0);
    let read = read.with_samples(read.samples()[..counts.len()].to_vec()).unwrap();

    let ann = detect_rwaves(&read, default_template(), &DetectorConfig::default()).unwrap();
    assert_eq!(ann.len(), truth.len());
    for (a, t) in ann.locations().iter().zip(truth.locations()) {
        assert!(a.abs_diff(*t) <= 10);
    }

    for mode in [Mode::Direct, Mode::Differential, Mode::Joint] {
        let cfg = CodecConfig { mode, rate_budget: 3.0, ..CodecConfig::default() };
        let (record, report) = compress(read.samples(), &ann, &cfg, 11).unwrap();
        let back = CompressedRecord::from_bytes(&record.to_bytes().unwrap()).unwrap();
        let dec = decode(&back).unwrap();
        assert_eq!(dec.samples.len(), report.samples);
        assert_eq!(report.frames, ann.len() - 1);
        assert!(report.compression_ratio > 1.0, "{mode}: ratio {}", report.compression_ratio);
        let var = {
            let x = &read.samples()[ann.locations()[0]..];
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
        };
        assert!(report.mse_original < 0.05 * var, "{mode}: mse {} var {var}", report.mse_original);
    }
}
