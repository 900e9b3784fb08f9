//! Planted-correspondence dataset generator.
//!
//! Every video gets one verb and one noun. Both feature volumes are Gaussian
//! noise except for an axis-aligned box carrying the token's fixed unit
//! pattern (plus noise): the verb's pattern in the fast volume, the noun's
//! in the slow volume. Captions list fillers, then the noun, then the verb.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::container::write_tensor;
use super::kv::KeyValues;
use super::manifest::{ManifestRecord, MaskPaths, MANIFEST_FILE, VOCAB_FILE};
use crate::encoders::{PartOfSpeech, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Dtype;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_videos: usize,
    pub test_videos: usize,
    pub captions_per_video: usize,
    pub verbs: usize,
    pub nouns: usize,
    pub fillers: usize,
    pub fillers_per_caption: usize,
    pub slow_channels: usize,
    pub fast_channels: usize,
    pub t_slow: usize,
    pub t_fast: usize,
    pub height: usize,
    pub width: usize,
    /// Blob extent as a fraction of each axis.
    pub blob_t: f64,
    pub blob_h: f64,
    pub blob_w: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_videos: 200,
            test_videos: 50,
            captions_per_video: 2,
            verbs: 20,
            nouns: 20,
            fillers: 10,
            fillers_per_caption: 2,
            slow_channels: 16,
            fast_channels: 16,
            t_slow: 4,
            t_fast: 8,
            height: 6,
            width: 6,
            blob_t: 0.5,
            blob_h: 0.34,
            blob_w: 0.5,
            noise: 0.1,
            seed: 7,
        }
    }
}

const KEYS: &[&str] = &[
    "train_videos",
    "test_videos",
    "captions_per_video",
    "verbs",
    "nouns",
    "fillers",
    "fillers_per_caption",
    "slow_channels",
    "fast_channels",
    "t_slow",
    "t_fast",
    "height",
    "width",
    "blob_t",
    "blob_h",
    "blob_w",
    "noise",
    "seed",
];

/// Box extent along one axis for a fraction of `dim`.
pub fn blob_extent(frac: f64, dim: usize) -> usize {
    ((frac * dim as f64).round() as usize).clamp(1, dim)
}

impl SyntheticSpec {
    /// Parses `key=value` text; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, KEYS)?;
        let mut s = SyntheticSpec::default();
        kv.set("train_videos", &mut s.train_videos)?;
        kv.set("test_videos", &mut s.test_videos)?;
        kv.set("captions_per_video", &mut s.captions_per_video)?;
        kv.set("verbs", &mut s.verbs)?;
        kv.set("nouns", &mut s.nouns)?;
        kv.set("fillers", &mut s.fillers)?;
        kv.set("fillers_per_caption", &mut s.fillers_per_caption)?;
        kv.set("slow_channels", &mut s.slow_channels)?;
        kv.set("fast_channels", &mut s.fast_channels)?;
        kv.set("t_slow", &mut s.t_slow)?;
        kv.set("t_fast", &mut s.t_fast)?;
        kv.set("height", &mut s.height)?;
        kv.set("width", &mut s.width)?;
        kv.set("blob_t", &mut s.blob_t)?;
        kv.set("blob_h", &mut s.blob_h)?;
        kv.set("blob_w", &mut s.blob_w)?;
        kv.set("noise", &mut s.noise)?;
        kv.set("seed", &mut s.seed)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "train_videos={}", self.train_videos);
        let _ = writeln!(o, "test_videos={}", self.test_videos);
        let _ = writeln!(o, "captions_per_video={}", self.captions_per_video);
        let _ = writeln!(o, "verbs={}", self.verbs);
        let _ = writeln!(o, "nouns={}", self.nouns);
        let _ = writeln!(o, "fillers={}", self.fillers);
        let _ = writeln!(o, "fillers_per_caption={}", self.fillers_per_caption);
        let _ = writeln!(o, "slow_channels={}", self.slow_channels);
        let _ = writeln!(o, "fast_channels={}", self.fast_channels);
        let _ = writeln!(o, "t_slow={}", self.t_slow);
        let _ = writeln!(o, "t_fast={}", self.t_fast);
        let _ = writeln!(o, "height={}", self.height);
        let _ = writeln!(o, "width={}", self.width);
        let _ = writeln!(o, "blob_t={}", self.blob_t);
        let _ = writeln!(o, "blob_h={}", self.blob_h);
        let _ = writeln!(o, "blob_w={}", self.blob_w);
        let _ = writeln!(o, "noise={}", self.noise);
        let _ = writeln!(o, "seed={}", self.seed);
        o
    }

    pub fn validate(&self) -> Result<()> {
        let reject = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("captions_per_video", self.captions_per_video),
            ("slow_channels", self.slow_channels),
            ("fast_channels", self.fast_channels),
            ("t_slow", self.t_slow),
            ("t_fast", self.t_fast),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return reject(format!("{name} must be positive"));
            }
        }
        if self.train_videos + self.test_videos == 0 {
            return reject("at least one video is required".into());
        }
        if self.verbs < 2 || self.nouns < 2 {
            return reject("at least two verbs and two nouns are needed for negatives".into());
        }
        if self.fillers_per_caption > 0 && self.fillers == 0 {
            return reject("fillers_per_caption > 0 needs fillers > 0".into());
        }
        for (name, f) in [
            ("blob_t", self.blob_t),
            ("blob_h", self.blob_h),
            ("blob_w", self.blob_w),
        ] {
            if !(f > 0.0) {
                return reject(format!("{name}={f}: blob extent must be > 0"));
            }
            if f > 1.0 {
                return reject(format!("{name}={f}: blob larger than volume (must be <= 1)"));
            }
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return reject(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        Ok(())
    }

    /// Box extents `(t, h, w)` in a volume with `t_dim` frames.
    pub fn blob_dims(&self, t_dim: usize) -> (usize, usize, usize) {
        (
            blob_extent(self.blob_t, t_dim),
            blob_extent(self.blob_h, self.height),
            blob_extent(self.blob_w, self.width),
        )
    }
}

/// Mutually distinct random unit vectors (pairwise cosine < 0.99).
fn patterns(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-9 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        let distinct = out
            .iter()
            .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < 0.99);
        if distinct {
            out.push(v);
        }
    }
    out
}

struct Planted {
    volume: Tensor<f64>,
    mask: Tensor<f64>,
}

fn plant(pattern: &[f64], t_dim: usize, spec: &SyntheticSpec, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Planted {
    let (c, h, w) = (pattern.len(), spec.height, spec.width);
    let (bt, bh, bw) = spec.blob_dims(t_dim);
    let t0 = rng.random_range(0..=t_dim - bt);
    let h0 = rng.random_range(0..=h - bh);
    let w0 = rng.random_range(0..=w - bw);
    let voxels = t_dim * h * w;
    let mut data: Vec<f64> = (0..c * voxels).map(|_| noise.sample(rng)).collect();
    let mut mask = vec![0.0; voxels];
    for t in t0..t0 + bt {
        for y in h0..h0 + bh {
            for x in w0..w0 + bw {
                let v = (t * h + y) * w + x;
                mask[v] = 1.0;
                for (ch, &p) in pattern.iter().enumerate() {
                    data[ch * voxels + v] += p;
                }
            }
        }
    }
    Planted {
        volume: Tensor::new(vec![c, t_dim, h, w], data).expect("volume shape"),
        mask: Tensor::new(vec![t_dim, h, w], mask).expect("mask shape"),
    }
}

/// Summary of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSummary {
    pub vocab: Vocabulary,
    /// Planted (verb id, noun id) per video, train videos first.
    pub planted: Vec<(String, usize, usize)>,
}

/// Writes `train/` and `test/` dataset directories under `out`.
///
/// Each split holds `manifest.jsonl`, `vocab.tsv`, `features/` and `masks/`.
/// The output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticSummary> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;

    let mut vocab = Vocabulary::new();
    let verbs: Vec<usize> = (0..spec.verbs)
        .map(|i| vocab.insert(&format!("verb{i:02}"), PartOfSpeech::Verb))
        .collect::<Result<_>>()?;
    let nouns: Vec<usize> = (0..spec.nouns)
        .map(|i| vocab.insert(&format!("noun{i:02}"), PartOfSpeech::Noun))
        .collect::<Result<_>>()?;
    let fillers: Vec<usize> = (0..spec.fillers)
        .map(|i| vocab.insert(&format!("word{i:02}"), PartOfSpeech::Other))
        .collect::<Result<_>>()?;

    let verb_patterns = patterns(spec.verbs, spec.fast_channels, &mut rng);
    let noun_patterns = patterns(spec.nouns, spec.slow_channels, &mut rng);

    let mut planted = Vec::new();
    let splits = [("train", spec.train_videos), ("test", spec.test_videos)];
    let mut video_no = 0usize;
    for (split, count) in splits {
        let dir = out.join(split);
        for sub in ["features", "masks"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        vocab.save(&dir.join(VOCAB_FILE))?;
        let mut manifest = String::new();
        for _ in 0..count {
            let id = format!("v{video_no:04}");
            video_no += 1;
            let verb = rng.random_range(0..spec.verbs);
            let noun = rng.random_range(0..spec.nouns);
            let fast = plant(&verb_patterns[verb], spec.t_fast, spec, &noise, &mut rng);
            let slow = plant(&noun_patterns[noun], spec.t_slow, spec, &noise, &mut rng);

            let rel = |kind: &str, branch: &str| format!("{kind}/{id}_{branch}.vten");
            write_tensor(&dir.join(rel("features", "slow")), &slow.volume, Dtype::F64)?;
            write_tensor(&dir.join(rel("features", "fast")), &fast.volume, Dtype::F64)?;
            write_tensor(&dir.join(rel("masks", "slow")), &slow.mask, Dtype::F64)?;
            write_tensor(&dir.join(rel("masks", "fast")), &fast.mask, Dtype::F64)?;

            for k in 0..spec.captions_per_video {
                let mut tokens = Vec::new();
                for _ in 0..spec.fillers_per_caption {
                    let f = fillers[rng.random_range(0..fillers.len())];
                    tokens.push((vocab.token(f).unwrap().to_string(), "OTHER".to_string()));
                }
                tokens.push((vocab.token(nouns[noun]).unwrap().to_string(), "NOUN".into()));
                tokens.push((vocab.token(verbs[verb]).unwrap().to_string(), "VERB".into()));
                let rec = ManifestRecord {
                    video_id: id.clone(),
                    caption_id: format!("{id}_c{k}"),
                    slow: rel("features", "slow"),
                    fast: rel("features", "fast"),
                    tokens,
                    masks: Some(MaskPaths {
                        slow: rel("masks", "slow"),
                        fast: rel("masks", "fast"),
                    }),
                };
                manifest.push_str(&rec.to_line());
                manifest.push('\n');
            }
            planted.push((id, verbs[verb], nouns[noun]));
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    }
    let spec_path = out.join("synthetic.spec");
    std::fs::write(&spec_path, spec.to_text()).map_err(|e| Error::io(&spec_path, e))?;
    Ok(SyntheticSummary { vocab, planted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train_videos: 4,
            test_videos: 2,
            verbs: 3,
            nouns: 3,
            fillers: 2,
            slow_channels: 4,
            fast_channels: 5,
            t_slow: 2,
            t_fast: 4,
            height: 4,
            width: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn spec_text_round_trip_and_unknown_keys() {
        let s = small();
        assert_eq!(SyntheticSpec::parse(&s.to_text()).unwrap(), s);
        assert!(SyntheticSpec::parse("bogus=1\n").is_err());
    }

    #[test]
    fn oversize_blob_is_rejected() {
        let err = SyntheticSpec::parse("blob_h=1.5\n").unwrap_err().to_string();
        assert!(err.contains("blob larger than volume"), "{err}");
    }

    #[test]
    fn noiseless_blob_equals_pattern() {
        let spec = SyntheticSpec { noise: 0.0, ..small() };
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&spec, dir.path()).unwrap();
        let ds = Dataset::<f64>::load(&dir.path().join("train")).unwrap();
        for v in &ds.videos {
            let mask = &v.masks.as_ref().unwrap().fast;
            let rows = v.fast.voxel_rows();
            let mut pattern: Option<Vec<f64>> = None;
            for (i, &m) in mask.data().iter().enumerate() {
                let row = rows.row(i);
                if m == 1.0 {
                    let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!((n - 1.0).abs() < 1e-12);
                    match &pattern {
                        Some(p) => assert_eq!(p.as_slice(), row),
                        None => pattern = Some(row.to_vec()),
                    }
                } else {
                    assert!(row.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn blob_fraction_matches_extents() {
        let spec = SyntheticSpec::default();
        for (t_dim, name) in [(spec.t_fast, "fast"), (spec.t_slow, "slow")] {
            let (bt, bh, bw) = spec.blob_dims(t_dim);
            for (e, f, d) in [
                (bt, spec.blob_t, t_dim),
                (bh, spec.blob_h, spec.height),
                (bw, spec.blob_w, spec.width),
            ] {
                assert!((e as f64 - f * d as f64).abs() <= 0.5, "{name}");
            }
        }
    }

    #[test]
    fn patterns_are_distinct_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = patterns(20, 16, &mut rng);
        for (i, a) in p.iter().enumerate() {
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            for b in &p[..i] {
                assert!(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() < 0.99);
            }
        }
    }
}
