//! Feature archives: labeled frame matrices for one or more splits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{payload_path, push_f32, read_block, write_atomic};
use crate::corpus::{Corpus, LabeledUtterance, Split};
use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT: &str = "amtl-features";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEntry {
    pub id: String,
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset of this utterance's block in the payload.
    pub offset: u64,
    pub speaker: usize,
    pub age_group: usize,
    pub senones: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub payload: String,
    pub payload_bytes: u64,
    pub utterances: Vec<ArchiveEntry>,
}

/// Serializes `utts` into a manifest (pretty JSON) and payload bytes.
pub fn encode_archive(utts: &[(Split, &LabeledUtterance)], payload_name: &str) -> Result<(String, Vec<u8>)> {
    let feature_dim = utts.first().map_or(0, |(_, u)| u.features.cols());
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(utts.len());
    for &(split, u) in utts {
        if u.features.cols() != feature_dim {
            return Err(Error::Data(format!(
                "utterance `{}` has {} coefficients, archive has {feature_dim}",
                u.id,
                u.features.cols()
            )));
        }
        if u.senones.len() != u.features.rows() {
            return Err(Error::Data(format!(
                "utterance `{}` has {} labels for {} frames",
                u.id,
                u.senones.len(),
                u.features.rows()
            )));
        }
        entries.push(ArchiveEntry {
            id: u.id.clone(),
            split,
            rows: u.features.rows(),
            cols: u.features.cols(),
            offset: payload.len() as u64,
            speaker: u.speaker,
            age_group: u.age_group,
            senones: u.senones.clone(),
        });
        push_f32(&mut payload, &u.features);
    }
    let manifest = ArchiveManifest {
        format: ARCHIVE_FORMAT.into(),
        version: ARCHIVE_VERSION,
        feature_dim,
        payload: payload_name.into(),
        payload_bytes: payload.len() as u64,
        utterances: entries,
    };
    Ok((serde_json::to_string_pretty(&manifest)? + "\n", payload))
}

/// Parses a manifest and its payload. Every entry's block must sit exactly
/// where the previous one ended and the payload must hold nothing else.
pub fn decode_archive(manifest: &[u8], payload: &[u8]) -> Result<Vec<(Split, LabeledUtterance)>> {
    let m: ArchiveManifest = serde_json::from_slice(manifest).map_err(|e| Error::format("archive manifest", e.to_string()))?;
    if m.format != ARCHIVE_FORMAT || m.version != ARCHIVE_VERSION {
        return Err(Error::format(
            "archive manifest",
            format!("unsupported format {} v{}", m.format, m.version),
        ));
    }
    if m.payload_bytes != payload.len() as u64 {
        return Err(Error::format(
            "archive",
            format!("manifest declares {} payload bytes, found {}", m.payload_bytes, payload.len()),
        ));
    }
    let mut expected_offset = 0u64;
    let mut out = Vec::with_capacity(m.utterances.len());
    for e in m.utterances {
        if e.cols != m.feature_dim {
            return Err(Error::format(
                "archive",
                format!("utterance `{}` has {} columns, manifest says {}", e.id, e.cols, m.feature_dim),
            ));
        }
        if e.offset != expected_offset {
            return Err(Error::format(
                "archive",
                format!("utterance `{}` starts at byte {}, expected {expected_offset}", e.id, e.offset),
            ));
        }
        if e.senones.len() != e.rows {
            return Err(Error::format(
                "archive",
                format!("utterance `{}` has {} labels for {} frames", e.id, e.senones.len(), e.rows),
            ));
        }
        let features = read_block("archive", payload, e.offset, e.rows, e.cols)?;
        expected_offset += (features.data().len() * 4) as u64;
        out.push((
            e.split,
            LabeledUtterance {
                id: e.id,
                features,
                senones: e.senones,
                speaker: e.speaker,
                age_group: e.age_group,
            },
        ));
    }
    if expected_offset != payload.len() as u64 {
        return Err(Error::format(
            "archive",
            format!("{} trailing payload bytes", payload.len() as u64 - expected_offset),
        ));
    }
    Ok(out)
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.f32`.
pub fn write_archive(dir: &Path, stem: &str, utts: &[(Split, &LabeledUtterance)]) -> Result<()> {
    let payload_name = format!("{stem}.f32");
    let (manifest, payload) = encode_archive(utts, &payload_name)?;
    write_atomic(&dir.join(&payload_name), &payload)?;
    write_atomic(&dir.join(format!("{stem}.json")), manifest.as_bytes())
}

pub fn read_archive(manifest_path: &Path) -> Result<Vec<(Split, LabeledUtterance)>> {
    let manifest = std::fs::read(manifest_path)?;
    let m: ArchiveManifest = serde_json::from_slice(&manifest).map_err(|e| Error::format("archive manifest", e.to_string()))?;
    let payload = std::fs::read(payload_path(manifest_path, &m.payload)?)?;
    decode_archive(&manifest, &payload)
}

/// Groups archived utterances by split, keeping archive order.
pub fn corpus_from_entries(entries: impl IntoIterator<Item = (Split, LabeledUtterance)>) -> Corpus {
    let mut c = Corpus {
        train: vec![],
        dev: vec![],
        test: vec![],
    };
    for (split, u) in entries {
        match split {
            Split::Train => c.train.push(u),
            Split::Dev => c.dev.push(u),
            Split::Test => c.test.push(u),
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::numerics::Matrix;

    fn small() -> Corpus {
        generate_corpus(&CorpusSpec {
            utterances_per_speaker: 1,
            frames_per_utterance: [5, 9],
            feature_dim: 6,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    fn tagged(c: &Corpus) -> Vec<(Split, &LabeledUtterance)> {
        Split::ALL.iter().flat_map(|&s| c.split(s).iter().map(move |u| (s, u))).collect()
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let c = small();
        let (manifest, payload) = encode_archive(&tagged(&c), "x.f32").unwrap();
        let back = decode_archive(manifest.as_bytes(), &payload).unwrap();
        assert_eq!(back.len(), tagged(&c).len());
        for ((s, u), (s0, u0)) in back.iter().zip(tagged(&c)) {
            assert_eq!(*s, s0);
            let mut rounded = u0.features.clone();
            rounded.round_to_f32();
            assert_eq!(u.features, rounded);
            assert_eq!((&u.id, &u.senones, u.speaker, u.age_group), (&u0.id, &u0.senones, u0.speaker, u0.age_group));
        }
        // a second pass is byte-identical
        let again: Vec<(Split, &LabeledUtterance)> = back.iter().map(|(s, u)| (*s, u)).collect();
        let (m2, p2) = encode_archive(&again, "x.f32").unwrap();
        assert_eq!((m2, p2), (manifest, payload));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        write_archive(dir.path(), "all", &tagged(&c)).unwrap();
        let back = corpus_from_entries(read_archive(&dir.path().join("all.json")).unwrap());
        assert_eq!(back.train.len(), c.train.len());
        assert_eq!(back.test.len(), c.test.len());
    }

    #[test]
    fn corrupted_archives_rejected() {
        let c = small();
        let (manifest, payload) = encode_archive(&tagged(&c), "x.f32").unwrap();
        assert!(decode_archive(manifest.as_bytes(), &payload[..payload.len() - 4]).is_err());
        let mut extra = payload.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(decode_archive(manifest.as_bytes(), &extra).is_err());
        let mut nan = payload.clone();
        nan[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_archive(manifest.as_bytes(), &nan).is_err());
        let shifted = manifest.replacen("\"offset\": 0", "\"offset\": 4", 1);
        assert!(decode_archive(shifted.as_bytes(), &payload).is_err());
        let unknown = manifest.replacen("\"version\"", "\"colour\": 1, \"version\"", 1);
        assert!(decode_archive(unknown.as_bytes(), &payload).is_err());
        assert!(decode_archive(b"{", &payload).is_err());
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let a = LabeledUtterance {
            id: "a".into(),
            features: Matrix::zeros(2, 3),
            senones: vec![0, 0],
            speaker: 0,
            age_group: 0,
        };
        let mut b = a.clone();
        b.features = Matrix::zeros(2, 4);
        assert!(encode_archive(&[(Split::Train, &a), (Split::Train, &b)], "p").is_err());
    }

    #[test]
    fn payload_names_must_be_plain() {
        assert!(payload_path(Path::new("/x/m.json"), "../etc/passwd").is_err());
        assert_eq!(payload_path(Path::new("/x/m.json"), "m.f32").unwrap(), Path::new("/x/m.f32"));
    }
}
