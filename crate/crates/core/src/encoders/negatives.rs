use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::PartOfSpeech;
use crate::error::{Error, Result};

/// Draws negative verbs/nouns that never occur in any caption of a video.
#[derive(Debug, Clone, Default)]
pub struct NegativeSampler {
    verbs: BTreeSet<usize>,
    nouns: BTreeSet<usize>,
    used: BTreeMap<String, (BTreeSet<usize>, BTreeSet<usize>)>,
}

impl NegativeSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers one caption's tagged tokens under its video.
    pub fn add_caption(&mut self, video_id: &str, tokens: &[(usize, PartOfSpeech)]) {
        let entry = self.used.entry(video_id.to_string()).or_default();
        for &(id, pos) in tokens {
            match pos {
                PartOfSpeech::Verb => {
                    self.verbs.insert(id);
                    entry.0.insert(id);
                }
                PartOfSpeech::Noun => {
                    self.nouns.insert(id);
                    entry.1.insert(id);
                }
                PartOfSpeech::Other => {}
            }
        }
    }

    /// Tokens of `pos` that may serve as negatives for `video_id`, ascending.
    pub fn candidates(&self, pos: PartOfSpeech, video_id: &str) -> Result<Vec<usize>> {
        let (global, used) = match (pos, self.used.get(video_id)) {
            (PartOfSpeech::Verb, Some(u)) => (&self.verbs, &u.0),
            (PartOfSpeech::Noun, Some(u)) => (&self.nouns, &u.1),
            (PartOfSpeech::Other, _) => return Err(Error::input("negatives are only drawn for VERB and NOUN")),
            (_, None) => return Err(Error::InvalidDataset(format!("unknown video {video_id:?}"))),
        };
        Ok(global.difference(used).copied().collect())
    }

    /// Uniform draw from [`candidates`](Self::candidates).
    pub fn sample<R: Rng + ?Sized>(&self, pos: PartOfSpeech, video_id: &str, rng: &mut R) -> Result<usize> {
        let pool = self.candidates(pos, video_id)?;
        if pool.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "video {video_id:?} uses every {pos} in the dataset; no negative available"
            )));
        }
        Ok(pool[rng.random_range(0..pool.len())])
    }
}

/// Indices of batch entries whose video differs from `video_id`.
pub fn sample_negative_caption(video_id: &str, batch_videos: &[&str]) -> Result<Vec<usize>> {
    let distinct: BTreeSet<&str> = batch_videos.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidBatch(
            "in-batch negatives need at least two distinct videos".into(),
        ));
    }
    Ok(batch_videos
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != video_id)
        .map(|(i, _)| i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const V: PartOfSpeech = PartOfSpeech::Verb;
    const N: PartOfSpeech = PartOfSpeech::Noun;

    fn sampler() -> NegativeSampler {
        // verbs run=0 jump=1 swim=2, nouns dog=3 cat=4
        let mut s = NegativeSampler::new();
        s.add_caption("a", &[(0, V), (3, N)]);
        s.add_caption("b", &[(1, V), (4, N)]);
        s.add_caption("c", &[(2, V), (3, N)]);
        s
    }

    #[test]
    fn draws_only_from_complement_uniformly() {
        let s = sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..4000 {
            let t = s.sample(V, "a", &mut rng).unwrap();
            assert_ne!(t, 0);
            counts[t] += 1;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            assert!((*c as f64 / 4000.0 - 0.5).abs() < 0.05, "{counts:?}");
        }
    }

    #[test]
    fn exhausted_vocabulary_is_an_error() {
        let mut s = sampler();
        s.add_caption("a", &[(1, V), (2, V)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = s.sample(V, "a", &mut rng).unwrap_err();
        assert!(err.to_string().contains("\"a\""));
    }

    #[test]
    fn same_seed_same_draws() {
        let s = sampler();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| s.sample(N, "b", &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn complement_is_exhaustively_disjoint() {
        let s = sampler();
        for vid in ["a", "b", "c"] {
            for pos in [V, N] {
                let used = &s.used[vid];
                let used = if pos == V { &used.0 } else { &used.1 };
                for c in s.candidates(pos, vid).unwrap() {
                    assert!(!used.contains(&c));
                }
            }
        }
    }

    #[test]
    fn in_batch_caption_negatives() {
        assert_eq!(sample_negative_caption("A", &["A", "B"]).unwrap(), vec![1]);
        assert!(sample_negative_caption("A", &["A"]).is_err());
        assert!(sample_negative_caption("A", &["A", "A"]).is_err());
        let batch = ["A", "A", "B", "B", "C", "C"];
        assert_eq!(sample_negative_caption("A", &batch).unwrap().len(), 4);
    }
}
