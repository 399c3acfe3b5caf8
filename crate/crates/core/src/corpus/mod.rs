//! Corpus handling: JSONL manifests, label files, and in-memory utterances.
//!
//! A manifest is one JSON object per line with fields `utterance_id`,
//! `audio_path` and/or `feature_path`, optional `label_path`, and a free
//! `condition` tag. Paths are relative to the manifest's directory.

pub mod container;
pub mod synth;
pub mod wav;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{gfb_extract, FeatureMatrix, GfbConfig};
use crate::ioutil;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
    pub condition: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against (the manifest's parent).
    pub dir: PathBuf,
}

impl Manifest {
    /// Parses and validates a JSONL manifest: every line must parse, ids
    /// must be unique, each entry needs at least one data path, and every
    /// referenced file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = ioutil::read_string(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
        let mut entries = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
                Error::input(format!(
                    "{}:{lineno}: invalid manifest entry: {e}",
                    path.display()
                ))
            })?;
            if entry.utterance_id.is_empty() {
                return Err(Error::input(format!(
                    "{}:{lineno}: empty utterance_id",
                    path.display()
                )));
            }
            if !seen.insert(entry.utterance_id.clone()) {
                return Err(Error::input(format!(
                    "{}:{lineno}: duplicate utterance_id {:?}",
                    path.display(),
                    entry.utterance_id
                )));
            }
            if entry.audio_path.is_none() && entry.feature_path.is_none() {
                return Err(Error::input(format!(
                    "{}:{lineno}: entry {:?} has neither audio_path nor feature_path",
                    path.display(),
                    entry.utterance_id
                )));
            }
            for rel in [&entry.audio_path, &entry.feature_path, &entry.label_path]
                .into_iter()
                .flatten()
            {
                let target = dir.join(rel);
                if !target.is_file() {
                    return Err(Error::input(format!(
                        "{}:{lineno}: referenced file {:?} does not exist",
                        path.display(),
                        target.display().to_string()
                    )));
                }
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::input(format!(
                "{}: manifest is empty",
                path.display()
            )));
        }
        Ok(Manifest { entries, dir })
    }

    pub fn save(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
        let mut out = String::new();
        for entry in entries {
            out.push_str(
                &serde_json::to_string(entry)
                    .map_err(|e| Error::runtime(format!("serializing manifest entry: {e}")))?,
            );
            out.push('\n');
        }
        ioutil::write_string(path, &out)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Frame labels as a text file, one class index per line.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let text = ioutil::read_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: u32 = line.parse().map_err(|_| {
            Error::input(format!(
                "{}:{}: invalid label {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        labels.push(v);
    }
    if labels.is_empty() {
        return Err(Error::input(format!("{}: no labels", path.display())));
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    ioutil::write_string(path, &out)
}

/// One utterance held in memory: extracted features plus optional
/// reference frame labels.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub utterance_id: String,
    pub features: FeatureMatrix,
    pub labels: Option<Vec<u32>>,
    pub condition: String,
}

fn load_one(manifest: &Manifest, entry: &ManifestEntry, gfb: &GfbConfig) -> Result<Utterance> {
    let features = if let Some(rel) = &entry.feature_path {
        let f = container::load_features(&manifest.resolve(rel))?;
        if f.utterance_id != entry.utterance_id {
            return Err(Error::input(format!(
                "feature file {rel:?} holds utterance {:?}, manifest says {:?}",
                f.utterance_id, entry.utterance_id
            )));
        }
        f
    } else {
        let rel = entry.audio_path.as_ref().expect("manifest validation");
        let mut audio = wav::read_wav(&manifest.resolve(rel))?;
        audio.utterance_id = entry.utterance_id.clone();
        gfb_extract(&audio, gfb)?
    };
    let labels = match &entry.label_path {
        Some(rel) => {
            let labels = read_labels(&manifest.resolve(rel))?;
            if labels.len() != features.num_frames() {
                return Err(Error::input(format!(
                    "utterance {:?} has {} label frames but {} feature frames",
                    entry.utterance_id,
                    labels.len(),
                    features.num_frames()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    Ok(Utterance {
        utterance_id: entry.utterance_id.clone(),
        features,
        labels,
        condition: entry.condition.clone(),
    })
}

/// Loads every utterance in a manifest, extracting features from audio
/// where no cached features exist. Work is parallel per utterance; the
/// output preserves manifest order.
pub fn load_utterances(manifest: &Manifest, gfb: &GfbConfig) -> Result<Vec<Utterance>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| load_one(manifest, entry, gfb))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AudioBuffer, SAMPLE_RATE};
    use tempfile::tempdir;

    fn write_manifest(path: &Path, lines: &[&str]) {
        std::fs::write(path, lines.join("\n")).unwrap();
    }

    #[test]
    fn manifest_round_trip_and_relative_resolution() {
        let dir = tempdir().unwrap();
        let audio = AudioBuffer::new("u1", vec![0.1; 1000], SAMPLE_RATE).unwrap();
        std::fs::create_dir(dir.path().join("wavs")).unwrap();
        wav::write_wav(&dir.path().join("wavs/u1.wav"), &audio).unwrap();
        let entries = vec![ManifestEntry {
            utterance_id: "u1".into(),
            audio_path: Some("wavs/u1.wav".into()),
            feature_path: None,
            label_path: None,
            condition: "clean".into(),
        }];
        let mpath = dir.path().join("set.jsonl");
        Manifest::save(&mpath, &entries).unwrap();
        let m = Manifest::load(&mpath).unwrap();
        assert_eq!(m.entries, entries);
        assert!(m.resolve("wavs/u1.wav").is_file());
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let dir = tempdir().unwrap();
        let mpath = dir.path().join("bad.jsonl");

        write_manifest(&mpath, &["{not json"]);
        let err = Manifest::load(&mpath).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");

        let audio = AudioBuffer::new("a", vec![0.1; 500], SAMPLE_RATE).unwrap();
        wav::write_wav(&dir.path().join("a.wav"), &audio).unwrap();
        let good = r#"{"utterance_id":"a","audio_path":"a.wav","condition":"clean"}"#;

        write_manifest(&mpath, &[good, good]);
        let err = Manifest::load(&mpath).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.to_string().contains("duplicate"), "{err}");

        write_manifest(
            &mpath,
            &[
                good,
                r#"{"utterance_id":"b","audio_path":"missing.wav","condition":"clean"}"#,
            ],
        );
        let err = Manifest::load(&mpath).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.to_string().contains("does not exist"), "{err}");

        write_manifest(&mpath, &[r#"{"utterance_id":"c","condition":"clean"}"#]);
        let err = Manifest::load(&mpath).unwrap_err();
        assert!(
            err.to_string()
                .contains("neither audio_path nor feature_path"),
            "{err}"
        );
    }

    #[test]
    fn labels_round_trip_and_reject_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("u.labels");
        write_labels(&path, &[0, 3, 7, 7, 1]).unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec![0, 3, 7, 7, 1]);
        std::fs::write(&path, "0\nx\n").unwrap();
        let err = read_labels(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn load_utterances_extracts_features_and_checks_label_length() {
        let dir = tempdir().unwrap();
        let audio = AudioBuffer::new("u1", vec![0.2; 416 + 160 * 4], SAMPLE_RATE).unwrap();
        wav::write_wav(&dir.path().join("u1.wav"), &audio).unwrap();
        write_labels(&dir.path().join("u1.labels"), &[1, 1, 0, 0, 2]).unwrap();
        let entries = vec![ManifestEntry {
            utterance_id: "u1".into(),
            audio_path: Some("u1.wav".into()),
            feature_path: None,
            label_path: Some("u1.labels".into()),
            condition: "clean".into(),
        }];
        let mpath = dir.path().join("set.jsonl");
        Manifest::save(&mpath, &entries).unwrap();
        let utts =
            load_utterances(&Manifest::load(&mpath).unwrap(), &GfbConfig::default()).unwrap();
        assert_eq!(utts.len(), 1);
        assert_eq!(utts[0].features.num_frames(), 5);
        assert_eq!(utts[0].labels.as_deref(), Some(&[1, 1, 0, 0, 2][..]));

        write_labels(&dir.path().join("u1.labels"), &[1, 1, 0]).unwrap();
        let err =
            load_utterances(&Manifest::load(&mpath).unwrap(), &GfbConfig::default()).unwrap_err();
        assert!(err.to_string().contains("label frames"), "{err}");
    }

    #[test]
    fn cached_features_shortcut_audio() {
        let dir = tempdir().unwrap();
        let feats = FeatureMatrix {
            utterance_id: "u9".into(),
            frames: ndarray::Array2::from_elem((6, 40), 0.25f32),
            frame_period: 0.01,
        };
        container::save_features(&dir.path().join("u9.feat"), &feats).unwrap();
        let entries = vec![ManifestEntry {
            utterance_id: "u9".into(),
            audio_path: None,
            feature_path: Some("u9.feat".into()),
            label_path: None,
            condition: "noisy".into(),
        }];
        let mpath = dir.path().join("set.jsonl");
        Manifest::save(&mpath, &entries).unwrap();
        let utts =
            load_utterances(&Manifest::load(&mpath).unwrap(), &GfbConfig::default()).unwrap();
        assert_eq!(utts[0].features.frames, feats.frames);
        assert_eq!(utts[0].condition, "noisy");
    }
}
