//! Binary feature files and their line-delimited JSON manifests.
//!
//! Feature file layout, all integers little-endian:
//!
//! ```text
//! magic   b"FVLF"
//! version u16
//! count   u32
//! count × { id u32, K u16, d u16, K·d × f32 }
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, PairExample};
use crate::encoders::{FrameFeatures, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"FVLF";
pub const FEATURE_VERSION: u16 = 1;
pub const FEATURES_FILE: &str = "features.fvlf";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

const HEADER_LEN: usize = 4 + 2 + 4;
const RECORD_HEADER_LEN: usize = 4 + 2 + 2;

pub fn encode_features(videos: &[&FrameFeatures]) -> Result<Vec<u8>> {
    let count = u32::try_from(videos.len()).map_err(|_| Error::invalid("too many records"))?;
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for v in videos {
        let k = u16::try_from(v.valid_length()).map_err(|_| Error::invalid("K exceeds 65535"))?;
        let d = u16::try_from(v.dim()).map_err(|_| Error::invalid("d exceeds 65535"))?;
        out.extend_from_slice(&v.video_id.to_le_bytes());
        out.extend_from_slice(&k.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        for &x in v.frames.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<FrameFeatures>> {
    let truncated = |expected: usize| Error::Truncated {
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::UnknownVersion {
            found: version.into(),
            expected: FEATURE_VERSION.into(),
        });
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let mut pos = HEADER_LEN;
    let mut videos = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        if bytes.len() < pos + RECORD_HEADER_LEN {
            return Err(truncated(pos + RECORD_HEADER_LEN));
        }
        let id = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        let k = u16::from_le_bytes([bytes[pos + 4], bytes[pos + 5]]) as usize;
        let d = u16::from_le_bytes([bytes[pos + 6], bytes[pos + 7]]) as usize;
        pos += RECORD_HEADER_LEN;
        let payload = k * d * 4;
        if bytes.len() < pos + payload {
            return Err(truncated(pos + payload));
        }
        let data: Vec<f64> = bytes[pos..pos + payload]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        pos += payload;
        videos.push(FrameFeatures::new(id, Tensor::new(vec![k, d], data)?)?);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "length mismatch: records end at byte {pos}, file has {}",
            bytes.len()
        )));
    }
    Ok(videos)
}

pub fn write_features(videos: &[&FrameFeatures], path: &Path) -> Result<()> {
    fs::write(path, encode_features(videos)?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FrameFeatures>> {
    decode_features(&fs::read(path)?)
}

/// Text-side record of one pair, one JSON object per line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u32,
    pub tokens: Vec<u32>,
    pub planted: Vec<usize>,
    pub answer: Option<u32>,
}

pub fn write_manifest(records: &[ManifestRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes `features.fvlf` and `manifest.jsonl` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let videos: Vec<&FrameFeatures> = dataset.examples.iter().map(|e| &e.features).collect();
    write_features(&videos, &dir.join(FEATURES_FILE))?;
    let records: Vec<ManifestRecord> = dataset
        .examples
        .iter()
        .map(|e| ManifestRecord {
            id: e.features.video_id,
            tokens: e.tokens.ids().to_vec(),
            planted: e.planted.clone(),
            answer: e.answer,
        })
        .collect();
    write_manifest(&records, &dir.join(MANIFEST_FILE))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let videos = read_features(&dir.join(FEATURES_FILE))?;
    let records = read_manifest(&dir.join(MANIFEST_FILE))?;
    if videos.len() != records.len() {
        return Err(Error::Format(format!(
            "{} feature records but {} manifest records",
            videos.len(),
            records.len()
        )));
    }
    let mut examples = Vec::with_capacity(videos.len());
    for (features, rec) in videos.into_iter().zip(records) {
        if features.video_id != rec.id {
            return Err(Error::Format(format!(
                "feature id {} paired with manifest id {}",
                features.video_id, rec.id
            )));
        }
        if rec.planted.is_empty() || rec.planted.iter().any(|&p| p >= features.valid_length()) {
            return Err(Error::Format(format!("planted set of record {} is invalid", rec.id)));
        }
        examples.push(PairExample {
            features,
            tokens: TokenSequence::new(rec.tokens)?,
            planted: rec.planted,
            answer: rec.answer,
        });
    }
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: u32, k: usize, d: usize) -> FrameFeatures {
        let data = (0..k * d).map(|i| (i as f32 * 0.37 - 1.1) as f64).collect();
        FrameFeatures::new(id, Tensor::new(vec![k, d], data).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = video(3, 4, 5);
        let b = video(9, 1, 5);
        let bytes = encode_features(&[&a, &b]).unwrap();
        let back = decode_features(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_features(&[&video(1, 2, 3)]).unwrap();
        assert_eq!(&bytes[..4], b"FVLF");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[1, 0, 0, 0]);
        assert_eq!(&bytes[14..16], &[2, 0]);
        assert_eq!(&bytes[16..18], &[3, 0]);
        assert_eq!(bytes.len(), 18 + 2 * 3 * 4);
    }

    #[test]
    fn empty_file_is_valid() {
        let bytes = encode_features(&[]).unwrap();
        assert_eq!(bytes.len(), 10);
        assert!(decode_features(&bytes).unwrap().is_empty());
    }

    #[test]
    fn truncation_names_byte_counts() {
        let bytes = encode_features(&[&video(1, 2, 3)]).unwrap();
        let err = decode_features(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Truncated { expected, actual } => {
                assert_eq!(expected, 42);
                assert_eq!(actual, 39);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_is_truncated(&bytes[..5]));
    }

    fn err_is_truncated(b: &[u8]) -> bool {
        matches!(decode_features(b), Err(Error::Truncated { .. }))
    }

    #[test]
    fn bad_magic_version_and_trailing_bytes() {
        let mut bytes = encode_features(&[&video(1, 2, 3)]).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_features(&wrong), Err(Error::Format(_))));
        let mut wrong = bytes.clone();
        wrong[4] = 2;
        assert!(matches!(
            decode_features(&wrong),
            Err(Error::UnknownVersion { found: 2, expected: 1 })
        ));
        bytes.push(0);
        assert!(matches!(decode_features(&bytes), Err(Error::Format(_))));
    }
}
