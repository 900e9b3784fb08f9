//! Line-delimited JSON manifests and in-memory datasets.
//!
//! A dataset is a directory holding `manifest.jsonl` and `vocab.tsv`.
//! Each manifest line describes one caption:
//!
//! ```json
//! {"video_id":"v0001","caption_id":"v0001_c0",
//!  "slow":"features/v0001_slow.vten","fast":"features/v0001_fast.vten",
//!  "tokens":[["a","OTHER"],["dog","NOUN"],["runs","VERB"]],
//!  "masks":{"slow":"masks/v0001_slow.vten","fast":"masks/v0001_fast.vten"}}
//! ```
//!
//! Paths are relative to the dataset directory. `masks` is optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::read_tensor;
use crate::encoders::{NegativeSampler, PartOfSpeech, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{Branch, FeatureVolume};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskPaths {
    pub slow: String,
    pub fast: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub video_id: String,
    pub caption_id: String,
    pub slow: String,
    pub fast: String,
    pub tokens: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskPaths>,
}

impl ManifestRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("manifest record serializes")
    }
}

/// Parses manifest text, reporting the 1-based line of the first bad record.
pub fn parse_manifest(text: &str) -> Result<Vec<(usize, ManifestRecord)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(line).map_err(|e| Error::InvalidDataset(format!("manifest line {}: {e}", n + 1)))?;
        out.push((n + 1, rec));
    }
    Ok(out)
}

/// Ground-truth planted regions, `[T, H, W]` of 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobMasks<T> {
    pub slow: Tensor<T>,
    pub fast: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Video<T> {
    pub id: String,
    pub slow: FeatureVolume<T>,
    pub fast: FeatureVolume<T>,
    pub masks: Option<BlobMasks<T>>,
    /// Indices into [`Dataset::captions`].
    pub captions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub id: String,
    /// Index into [`Dataset::videos`].
    pub video: usize,
    pub tokens: Vec<usize>,
    pub verbs: Vec<usize>,
    pub nouns: Vec<usize>,
}

/// Validated dataset with every feature volume loaded.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub root: PathBuf,
    pub vocab: Vocabulary,
    pub videos: Vec<Video<T>>,
    pub captions: Vec<Caption>,
}

/// Resolves a dataset argument: a directory or a manifest file inside one.
pub fn resolve_manifest(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (root, path.to_path_buf())
    }
}

fn load_volume<T: Scalar>(
    root: &Path,
    rel: &str,
    branch: Branch,
    video: &str,
    line: usize,
) -> Result<FeatureVolume<T>> {
    let t = read_tensor(&root.join(rel))
        .map_err(|e| Error::InvalidDataset(format!("manifest line {line}: feature file {rel}: {e}")))?;
    FeatureVolume::new(branch, video, t).map_err(|e| Error::InvalidDataset(format!("manifest line {line}: {rel}: {e}")))
}

impl<T: Scalar> Dataset<T> {
    /// Loads and validates a dataset directory (or its manifest path).
    pub fn load(path: &Path) -> Result<Self> {
        let (root, manifest) = resolve_manifest(path);
        let vocab = Vocabulary::load(&root.join(VOCAB_FILE))?;
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        Self::from_records(root, vocab, &parse_manifest(&text)?)
    }

    pub fn from_records(root: PathBuf, vocab: Vocabulary, records: &[(usize, ManifestRecord)]) -> Result<Self> {
        let mut videos: Vec<Video<T>> = Vec::new();
        let mut by_id: BTreeMap<String, (usize, String, String)> = BTreeMap::new();
        let mut captions = Vec::new();
        let mut caption_ids = std::collections::BTreeSet::new();
        let bad = |line: usize, msg: String| Error::InvalidDataset(format!("manifest line {line}: {msg}"));

        for (line, rec) in records {
            let line = *line;
            if rec.video_id.is_empty() || rec.caption_id.is_empty() {
                return Err(bad(line, "empty video_id or caption_id".into()));
            }
            if !caption_ids.insert(rec.caption_id.clone()) {
                return Err(bad(line, format!("duplicate caption_id {:?}", rec.caption_id)));
            }
            let video = match by_id.get(&rec.video_id) {
                Some((idx, slow, fast)) => {
                    if *slow != rec.slow || *fast != rec.fast {
                        return Err(bad(
                            line,
                            format!("video {:?} listed with different feature files", rec.video_id),
                        ));
                    }
                    *idx
                }
                None => {
                    let slow = load_volume(&root, &rec.slow, Branch::Slow, &rec.video_id, line)?;
                    let fast = load_volume(&root, &rec.fast, Branch::Fast, &rec.video_id, line)?;
                    let (gs, gf) = (slow.grid(), fast.grid());
                    if (gs.h, gs.w) != (gf.h, gf.w) {
                        return Err(bad(
                            line,
                            format!(
                                "slow {:?} and fast {:?} disagree on H, W",
                                slow.data().shape(),
                                fast.data().shape()
                            ),
                        ));
                    }
                    if let Some(first) = videos.first() {
                        if first.slow.channels() != slow.channels() || first.fast.channels() != fast.channels() {
                            return Err(bad(line, "channel widths differ from earlier videos".into()));
                        }
                    }
                    let masks = match &rec.masks {
                        Some(m) => {
                            let ms: Tensor<T> = read_tensor(&root.join(&m.slow))
                                .map_err(|e| bad(line, format!("mask {}: {e}", m.slow)))?;
                            let mf: Tensor<T> = read_tensor(&root.join(&m.fast))
                                .map_err(|e| bad(line, format!("mask {}: {e}", m.fast)))?;
                            if ms.shape() != gs.shape() || mf.shape() != gf.shape() {
                                return Err(bad(line, "mask shape does not match its volume".into()));
                            }
                            Some(BlobMasks { slow: ms, fast: mf })
                        }
                        None => None,
                    };
                    let idx = videos.len();
                    by_id.insert(rec.video_id.clone(), (idx, rec.slow.clone(), rec.fast.clone()));
                    videos.push(Video {
                        id: rec.video_id.clone(),
                        slow,
                        fast,
                        masks,
                        captions: Vec::new(),
                    });
                    idx
                }
            };

            if rec.tokens.is_empty() {
                return Err(bad(line, "caption has no tokens".into()));
            }
            let mut tokens = Vec::with_capacity(rec.tokens.len());
            let mut verbs = Vec::new();
            let mut nouns = Vec::new();
            for (text, tag) in &rec.tokens {
                let pos = PartOfSpeech::parse(tag).ok_or_else(|| bad(line, format!("unknown tag {tag:?}")))?;
                let (id, vpos) = vocab
                    .lookup(text)
                    .ok_or_else(|| bad(line, format!("token {text:?} not in vocabulary")))?;
                if vpos != pos {
                    return Err(bad(
                        line,
                        format!("token {text:?} tagged {tag}, vocabulary says {vpos}"),
                    ));
                }
                tokens.push(id);
                match pos {
                    PartOfSpeech::Verb => verbs.push(id),
                    PartOfSpeech::Noun => nouns.push(id),
                    PartOfSpeech::Other => {}
                }
            }
            videos[video].captions.push(captions.len());
            captions.push(Caption {
                id: rec.caption_id.clone(),
                video,
                tokens,
                verbs,
                nouns,
            });
        }
        if videos.is_empty() {
            return Err(Error::InvalidDataset("manifest has no records".into()));
        }
        Ok(Dataset {
            root,
            vocab,
            videos,
            captions,
        })
    }

    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.videos.iter().position(|v| v.id == id)
    }

    pub fn slow_channels(&self) -> usize {
        self.videos[0].slow.channels()
    }

    pub fn fast_channels(&self) -> usize {
        self.videos[0].fast.channels()
    }

    /// Negative-token index over every caption of the dataset.
    pub fn negative_sampler(&self) -> NegativeSampler {
        let mut s = NegativeSampler::new();
        for c in &self.captions {
            let tagged: Vec<(usize, PartOfSpeech)> = c
                .verbs
                .iter()
                .map(|&v| (v, PartOfSpeech::Verb))
                .chain(c.nouns.iter().map(|&n| (n, PartOfSpeech::Noun)))
                .collect();
            s.add_caption(&self.videos[c.video].id, &tagged);
        }
        s
    }
}
