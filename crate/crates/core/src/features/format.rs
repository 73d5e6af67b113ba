//! Binary feature file layout (all integers and floats little-endian):
//!
//! ```text
//! "LOCOFT01" | u32 T | u32 D | u32 fps | u8 label | u32 n_segments
//! | n_segments x (f64 start_s, f64 end_s) | T*D x f32, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureSequence, Segment};
use crate::error::{LocoError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"LOCOFT01";

const FIXED_HEADER: usize = 8 + 4 + 4 + 4 + 1 + 4;

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    seq.validate()?;
    fs::write(path, encode(seq)).map_err(|e| LocoError::io(path, e))
}

/// Loads and validates a feature file. The sequence id is the file stem.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LocoError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_features(&bytes, id)
}

pub(crate) fn encode(seq: &FeatureSequence) -> Vec<u8> {
    let (t, d) = seq.feats.dim();
    let mut out = Vec::with_capacity(FIXED_HEADER + 16 * seq.gt_segments.len() + 4 * t * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&seq.fps.to_le_bytes());
    out.push(seq.utterance_label);
    out.extend_from_slice(&(seq.gt_segments.len() as u32).to_le_bytes());
    for seg in &seq.gt_segments {
        out.extend_from_slice(&seg.start.to_le_bytes());
        out.extend_from_slice(&seg.end.to_le_bytes());
    }
    for v in seq.feats.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(LocoError::SizeMismatch {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_features(bytes: &[u8], id: impl Into<String>) -> Result<FeatureSequence> {
    if bytes.len() < FIXED_HEADER {
        return Err(LocoError::MalformedHeader(format!(
            "{} bytes is shorter than the {FIXED_HEADER}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(LocoError::MalformedHeader("bad magic bytes".into()));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let t = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    let fps = cur.u32()?;
    let label = cur.take(1)?[0];
    let n_segments = cur.u32()? as usize;

    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| LocoError::MalformedHeader(format!("T={t}, D={d} overflows")))?;
    let expected = n_segments
        .checked_mul(16)
        .and_then(|n| n.checked_add(FIXED_HEADER + payload))
        .ok_or_else(|| LocoError::MalformedHeader("segment count overflows".into()))?;
    if expected != bytes.len() {
        return Err(LocoError::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }

    let mut gt_segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let start = cur.f64()?;
        let end = cur.f64()?;
        gt_segments.push(Segment { start, end });
    }
    let values: Vec<f32> = cur
        .take(payload)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let feats = Array2::from_shape_vec((t, d), values).map_err(|e| LocoError::MalformedHeader(e.to_string()))?;

    let seq = FeatureSequence {
        id: id.into(),
        feats,
        utterance_label: label,
        gt_segments,
        fps,
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(feats: Array2<f32>) -> FeatureSequence {
        FeatureSequence {
            id: "u".into(),
            feats,
            utterance_label: 0,
            gt_segments: vec![],
            fps: 50,
        }
    }

    #[test]
    fn minimal_file_has_zero_payload() {
        let bytes = encode(&seq(Array2::zeros((1, 1))));
        assert_eq!(bytes.len(), FIXED_HEADER + 4);
        assert_eq!(&bytes[FIXED_HEADER..], &[0, 0, 0, 0]);
        assert_eq!(&bytes[..8], FEATURE_MAGIC);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let bytes = encode(&seq(Array2::ones((3, 2))));
        let err = read_features(&bytes[..bytes.len() - 3], "u").unwrap_err();
        assert!(matches!(err, LocoError::SizeMismatch { .. }));
    }

    #[test]
    fn zero_frames_fail_validation() {
        let mut bytes = encode(&seq(Array2::ones((1, 2))));
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        bytes.truncate(FIXED_HEADER);
        let err = read_features(&bytes, "u").unwrap_err();
        assert!(matches!(err, LocoError::InvalidInput(_)));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut feats = Array2::zeros((2, 2));
        feats[[1, 0]] = f32::NAN;
        let bytes = encode(&seq(feats));
        assert!(matches!(read_features(&bytes, "u"), Err(LocoError::NonFinite(_))));
    }

    #[test]
    fn bad_magic_is_malformed() {
        let mut bytes = encode(&seq(Array2::ones((1, 1))));
        bytes[0] = b'X';
        assert!(matches!(read_features(&bytes, "u"), Err(LocoError::MalformedHeader(_))));
    }

    #[test]
    fn single_value_change_changes_file() {
        let a = seq(Array2::zeros((2, 3)));
        let mut b = a.clone();
        b.feats[[1, 2]] = 1e-3;
        assert_ne!(encode(&a), encode(&b));
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.feat");
        let mut s = seq(Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f32 * 0.25 - 1.0));
        s.utterance_label = 1;
        s.gt_segments = vec![Segment::new(0.02, 0.1), Segment::new(0.14, 0.2)];
        write_features(&s, &path).unwrap();
        assert_eq!(load_features(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            t in 1usize..12,
            d in 1usize..6,
            seed in proptest::collection::vec(-1e6f32..1e6, 72),
        ) {
            let feats = Array2::from_shape_fn((t, d), |(i, j)| seed[(i * d + j) % seed.len()]);
            let s = seq(feats);
            let back = read_features(&encode(&s), "u").unwrap();
            let a: Vec<u32> = s.feats.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.feats.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
