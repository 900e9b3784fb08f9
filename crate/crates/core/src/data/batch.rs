use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One (video, caption) pair, as indices into a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub video: usize,
    pub caption: usize,
}

/// Items of distinct videos; at most one caption per video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One epoch of batches.
///
/// `captions[v]` lists the caption indices of video `v`. Videos are visited
/// in a shuffled order, one randomly chosen caption each. A trailing batch
/// with fewer than two videos is dropped.
pub fn assemble_epoch<R: Rng + ?Sized>(captions: &[Vec<usize>], batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    if let Some(v) = captions.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(format!("video {v} has no captions")));
    }
    let mut order: Vec<usize> = (0..captions.len()).collect();
    order.shuffle(rng);
    let items: Vec<BatchItem> = order
        .into_iter()
        .map(|video| {
            let c = &captions[video];
            BatchItem {
                video,
                caption: c[rng.random_range(0..c.len())],
            }
        })
        .collect();
    Ok(items
        .chunks(batch_size)
        .filter(|chunk| chunk.len() >= 2)
        .map(|chunk| Batch { items: chunk.to_vec() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn caps(n: usize, per: usize) -> Vec<Vec<usize>> {
        (0..n).map(|v| (v * per..(v + 1) * per).collect()).collect()
    }

    #[test]
    fn five_videos_in_pairs_drop_the_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = assemble_epoch(&caps(5, 1), 2, &mut rng).unwrap();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![2, 2]);
    }

    #[test]
    fn short_tail_with_two_videos_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = assemble_epoch(&caps(7, 2), 5, &mut rng).unwrap();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![5, 2]);
    }

    #[test]
    fn epoch_is_a_permutation_with_valid_captions() {
        let c = caps(23, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = assemble_epoch(&c, 4, &mut rng).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.items.iter().map(|i| i.video)).collect();
        // 23 = 5·4 + 3, nothing dropped
        assert_eq!(seen.len(), 23);
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        for item in batches.iter().flat_map(|b| &b.items) {
            assert!(c[item.video].contains(&item.caption));
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let c = caps(10, 2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..3)
                .map(|_| assemble_epoch(&c, 3, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn batch_size_below_two_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(assemble_epoch(&caps(3, 1), 1, &mut rng).is_err());
    }
}
