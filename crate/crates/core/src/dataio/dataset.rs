//! Datasets on disk: one `VCLP` file per clip plus a JSON manifest, and the
//! participant-level train/validation/test split.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::clip::{read_clip, write_clip};
use super::labels::{weak_label, WeakLabel};
use super::sequence::RecoverySequence;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sequences: Vec<ManifestSequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub video_id: String,
    pub participant_id: String,
    pub clips: Vec<ManifestClip>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub clip_index: usize,
    /// Absent for sequences too short to label.
    pub label: Option<WeakLabel>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<RecoverySequence>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(sequences: Vec<RecoverySequence>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sequences.len());
        for (i, s) in sequences.iter().enumerate() {
            if index.insert(s.video_id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate video id {}", s.video_id)));
            }
        }
        Ok(Self { sequences, index })
    }

    pub fn get(&self, video_id: &str) -> Option<&RecoverySequence> {
        self.index.get(video_id).map(|&i| &self.sequences[i])
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequences whose ids are listed, in list order.
    pub fn subset(&self, ids: &[String]) -> Result<Vec<&RecoverySequence>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Dataset(format!("unknown video id {id}")))
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            sequences: self
                .sequences
                .iter()
                .map(|s| ManifestSequence {
                    video_id: s.video_id.clone(),
                    participant_id: s.participant_id.clone(),
                    clips: s
                        .clips
                        .iter()
                        .map(|c| ManifestClip {
                            path: clip_path(&s.video_id, c.clip_index),
                            clip_index: c.clip_index,
                            label: weak_label(c.clip_index, s.num_clips()).ok(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Writes `clips/*.vclp` and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("clips")).map_err(|e| Error::io(dir, e))?;
        for s in &self.sequences {
            for c in &s.clips {
                write_clip(c, &dir.join(clip_path(&s.video_id, c.clip_index)))?;
            }
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self.manifest())?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format {
                field: "manifest version",
                detail: manifest.version.to_string(),
            });
        }
        let sequences = manifest
            .sequences
            .iter()
            .map(|ms| {
                let clips = ms
                    .clips
                    .iter()
                    .map(|mc| {
                        let clip = read_clip(&dir.join(&mc.path))?;
                        if clip.clip_index != mc.clip_index || clip.video_id != ms.video_id {
                            return Err(Error::Dataset(format!(
                                "{}: header says {}#{}, manifest says {}#{}",
                                mc.path.display(),
                                clip.video_id,
                                clip.clip_index,
                                ms.video_id,
                                mc.clip_index
                            )));
                        }
                        Ok(clip)
                    })
                    .collect::<Result<Vec<_>>>()?;
                RecoverySequence::new(ms.video_id.clone(), ms.participant_id.clone(), clips)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sequences)
    }
}

fn clip_path(video_id: &str, clip_index: usize) -> PathBuf {
    PathBuf::from("clips").join(format!("{video_id}_{clip_index:04}.vclp"))
}

/// Video ids per split. Splitting is by participant so no person appears in
/// two splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles participants with `seed`, sends `round(test_fraction·P)` to test
/// and `round(validation_fraction·rest)` of the remainder to validation.
pub fn split_by_participant(
    sequences: &[RecoverySequence],
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Split> {
    for (name, f) in [("test", test_fraction), ("validation", validation_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("{name} fraction {f} outside [0,1)")));
        }
    }
    let participants: BTreeSet<&str> = sequences.iter().map(|s| s.participant_id.as_str()).collect();
    let mut order: Vec<&str> = participants.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * order.len() as f64).round() as usize;
    let rest = order.len() - n_test;
    let n_val = (validation_fraction * rest as f64).round() as usize;
    if rest - n_val == 0 {
        return Err(Error::Dataset(format!(
            "{} participants leave none for training",
            order.len()
        )));
    }
    let role: HashMap<&str, u8> = order
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                *p,
                if i < n_test {
                    2
                } else if i < n_test + n_val {
                    1
                } else {
                    0
                },
            )
        })
        .collect();
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for s in sequences {
        let dest = match role[s.participant_id.as_str()] {
            0 => &mut split.train,
            1 => &mut split.validation,
            _ => &mut split.test,
        };
        dest.push(s.video_id.clone());
    }
    Ok(split)
}
