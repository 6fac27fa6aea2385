//! IQ recordings and their on-disk form: raw little-endian cf32 plus a JSON sidecar.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

pub const DATATYPE_CF32_LE: &str = "cf32_le";

/// Immutable complex-baseband capture. Every sample is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct IqRecording {
    samples: Vec<Complex32>,
    sample_rate_hz: f64,
    center_frequency_hz: f64,
    capture_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub sample_rate_hz: f64,
    pub center_frequency_hz: f64,
    pub sample_count: u64,
    pub datatype: String,
    pub capture_id: String,
}

impl IqRecording {
    pub fn new(
        samples: Vec<Complex32>,
        sample_rate_hz: f64,
        center_frequency_hz: f64,
        capture_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyRecording);
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return config_err(format!("sample rate must be positive, got {sample_rate_hz}"));
        }
        if !(center_frequency_hz.is_finite() && center_frequency_hz >= 0.0) {
            return config_err(format!(
                "center frequency must be non-negative, got {center_frequency_hz}"
            ));
        }
        if let Some(index) = first_non_finite(&samples) {
            return Err(Error::NonFinite { index });
        }
        Ok(IqRecording {
            samples,
            sample_rate_hz,
            center_frequency_hz,
            capture_id: capture_id.into(),
        })
    }

    pub fn samples(&self) -> &[Complex32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for the `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn center_frequency_hz(&self) -> f64 {
        self.center_frequency_hz
    }

    pub fn capture_id(&self) -> &str {
        &self.capture_id
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn meta(&self) -> RecordingMeta {
        RecordingMeta {
            sample_rate_hz: self.sample_rate_hz,
            center_frequency_hz: self.center_frequency_hz,
            sample_count: self.samples.len() as u64,
            datatype: DATATYPE_CF32_LE.to_string(),
            capture_id: self.capture_id.clone(),
        }
    }

    /// Same samples, new labels.
    pub fn relabel(self, center_frequency_hz: f64, capture_id: impl Into<String>) -> Result<Self> {
        IqRecording::new(self.samples, self.sample_rate_hz, center_frequency_hz, capture_id)
    }
}

fn first_non_finite(samples: &[Complex32]) -> Option<usize> {
    samples
        .iter()
        .position(|s| !(s.re.is_finite() && s.im.is_finite()))
}

pub fn read_meta(meta_path: &Path) -> Result<RecordingMeta> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: RecordingMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(meta_path, e))?;
    if meta.datatype != DATATYPE_CF32_LE {
        return Err(Error::format(
            meta_path,
            format!("unsupported datatype {:?}, expected {DATATYPE_CF32_LE:?}", meta.datatype),
        ));
    }
    Ok(meta)
}

pub fn load_recording(raw_path: &Path, meta_path: &Path) -> Result<IqRecording> {
    let meta = read_meta(meta_path)?;
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Truncated {
            bytes: bytes.len() as u64,
        });
    }
    let actual = (bytes.len() / 8) as u64;
    if actual != meta.sample_count {
        return Err(Error::LengthMismatch {
            declared: meta.sample_count,
            actual,
        });
    }
    let samples: Vec<Complex32> = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect();
    IqRecording::new(
        samples,
        meta.sample_rate_hz,
        meta.center_frequency_hz,
        meta.capture_id,
    )
}

pub fn save_recording(rec: &IqRecording, raw_path: &Path, meta_path: &Path) -> Result<()> {
    if let Some(index) = first_non_finite(&rec.samples) {
        return Err(Error::NonFinite { index });
    }
    let file = fs::File::create(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let mut out = BufWriter::new(file);
    for s in &rec.samples {
        out.write_all(&s.re.to_le_bytes())
            .and_then(|_| out.write_all(&s.im.to_le_bytes()))
            .map_err(|e| Error::io(raw_path, e))?;
    }
    out.flush().map_err(|e| Error::io(raw_path, e))?;
    write_json(meta_path, &rec.meta())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invariant(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Cuts the recording into consecutive `segment_len` pieces; a short tail is dropped.
pub fn segment(rec: &IqRecording, segment_len: usize) -> Result<Vec<IqRecording>> {
    if segment_len == 0 {
        return config_err("segment length must be at least 1");
    }
    rec.samples
        .chunks_exact(segment_len)
        .map(|chunk| {
            IqRecording::new(
                chunk.to_vec(),
                rec.sample_rate_hz,
                rec.center_frequency_hz,
                rec.capture_id.clone(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn rec(samples: Vec<Complex32>) -> IqRecording {
        IqRecording::new(samples, 8e6, 2.44e9, "t").unwrap()
    }

    fn write_meta(path: &Path, count: u64) {
        let meta = RecordingMeta {
            sample_rate_hz: 8e6,
            center_frequency_hz: 2.44e9,
            sample_count: count,
            datatype: DATATYPE_CF32_LE.into(),
            capture_id: "t".into(),
        };
        write_json(path, &meta).unwrap();
    }

    #[test]
    fn decodes_interleaved_pairs() {
        let dir = tempdir().unwrap();
        let raw = dir.path().join("x.cf32");
        let meta = dir.path().join("x.json");
        let bytes: Vec<u8> = [1.0f32, 0.0, 0.0, 1.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        assert_eq!(bytes.len(), 16);
        fs::write(&raw, bytes).unwrap();
        write_meta(&meta, 2);
        let r = load_recording(&raw, &meta).unwrap();
        assert_eq!(r.samples(), &[Complex32::new(1.0, 0.0), Complex32::new(0.0, 1.0)]);
        assert_eq!(r.capture_id(), "t");
    }

    #[test]
    fn length_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let raw = dir.path().join("x.cf32");
        let meta = dir.path().join("x.json");
        fs::write(&raw, [0u8; 16]).unwrap();
        write_meta(&meta, 3);
        assert!(matches!(
            load_recording(&raw, &meta),
            Err(Error::LengthMismatch { declared: 3, actual: 2 })
        ));
    }

    #[test]
    fn odd_float_count_is_truncated() {
        let dir = tempdir().unwrap();
        let raw = dir.path().join("x.cf32");
        let meta = dir.path().join("x.json");
        fs::write(&raw, [0u8; 12]).unwrap();
        write_meta(&meta, 1);
        assert!(matches!(
            load_recording(&raw, &meta),
            Err(Error::Truncated { bytes: 12 })
        ));
    }

    #[test]
    fn non_finite_payload_reports_index() {
        let dir = tempdir().unwrap();
        let raw = dir.path().join("x.cf32");
        let meta = dir.path().join("x.json");
        let bytes: Vec<u8> = [0.0f32, 0.0, 1.0, f32::NAN]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(&raw, bytes).unwrap();
        write_meta(&meta, 2);
        assert!(matches!(
            load_recording(&raw, &meta),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn non_finite_never_reaches_disk() {
        let built = IqRecording::new(vec![Complex32::new(f32::INFINITY, 0.0)], 1.0, 0.0, "x");
        assert!(matches!(built, Err(Error::NonFinite { index: 0 })));
    }

    #[test]
    fn save_writes_eight_bytes_per_sample() {
        let dir = tempdir().unwrap();
        let raw = dir.path().join("a.cf32");
        let meta = dir.path().join("a.json");
        save_recording(&rec(vec![Complex32::new(0.5, -0.5); 2]), &raw, &meta).unwrap();
        assert_eq!(fs::metadata(&raw).unwrap().len(), 16);
        let m = read_meta(&meta).unwrap();
        assert_eq!(m.sample_count, 2);
        assert_eq!(m.datatype, "cf32_le");
    }

    #[test]
    fn four_million_samples_is_32_mb() {
        let dir = tempdir().unwrap();
        let raw = dir.path().join("big.cf32");
        let meta = dir.path().join("big.json");
        save_recording(&rec(vec![Complex32::new(0.0, 0.0); 4_000_000]), &raw, &meta).unwrap();
        assert_eq!(fs::metadata(&raw).unwrap().len(), 32_000_000);
    }

    #[test]
    fn rejects_wrong_datatype() {
        let dir = tempdir().unwrap();
        let meta = dir.path().join("m.json");
        fs::write(
            &meta,
            r#"{"sample_rate_hz":1.0,"center_frequency_hz":0.0,"sample_count":1,"datatype":"ci16_le","capture_id":"a"}"#,
        )
        .unwrap();
        assert!(read_meta(&meta).is_err());
    }

    #[test]
    fn segmentation_drops_tail() {
        let r = rec((0..10).map(|i| Complex32::new(i as f32, 0.0)).collect());
        let segs = segment(&r, 4).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].samples()[0].re, 4.0);
        assert!(segment(&rec(vec![Complex32::new(1.0, 0.0); 3]), 4)
            .unwrap()
            .is_empty());
        assert!(segment(&r, 0).is_err());
    }

    #[test]
    fn twenty_million_in_four_million_pieces() {
        let r = rec(vec![Complex32::new(0.0, 0.0); 20_000_000]);
        let segs = segment(&r, 4_000_000).unwrap();
        assert_eq!(segs.len(), 5);
        assert!(segs.iter().all(|s| s.len() == 4_000_000));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn save_load_is_bit_exact(
            parts in prop::collection::vec((any::<f32>(), any::<f32>()), 1..200)
        ) {
            let samples: Vec<Complex32> = parts
                .into_iter()
                .map(|(a, b)| Complex32::new(
                    if a.is_finite() { a } else { 0.0 },
                    if b.is_finite() { b } else { -0.0 },
                ))
                .collect();
            let r = rec(samples);
            let dir = tempdir().unwrap();
            let raw = dir.path().join("p.cf32");
            let meta = dir.path().join("p.json");
            save_recording(&r, &raw, &meta).unwrap();
            let back = load_recording(&raw, &meta).unwrap();
            let bits = |x: &IqRecording| -> Vec<(u32, u32)> {
                x.samples().iter().map(|s| (s.re.to_bits(), s.im.to_bits())).collect()
            };
            prop_assert_eq!(bits(&back), bits(&r));
            prop_assert_eq!(back.meta(), r.meta());
        }

        #[test]
        fn segments_concatenate_to_prefix(n in 1usize..300, len in 1usize..50) {
            let r = rec((0..n).map(|i| Complex32::new(i as f32, 1.0)).collect());
            let joined: Vec<Complex32> = segment(&r, len)
                .unwrap()
                .iter()
                .flat_map(|s| s.samples().to_vec())
                .collect();
            prop_assert_eq!(&joined[..], &r.samples()[..(n / len) * len]);
        }
    }
}
