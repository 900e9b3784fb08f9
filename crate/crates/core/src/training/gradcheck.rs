//! Finite-difference checks of the objective on small random problems.

use rand::Rng;

use crate::encoders::PartOfSpeech;
use crate::error::{Error, Result};
use crate::model::{Model, ModelDims};
use crate::objectives::{total_loss, LossConfig, LossItem};
use crate::tensor::{grad_check, GradCheckReport, Tensor};
use crate::video::{Branch, FeatureVolume};

/// Which scalar of the objective is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Total,
    Joint,
    Motion,
    Visual,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Total, LossTerm::Joint, LossTerm::Motion, LossTerm::Visual];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Total => "total",
            LossTerm::Joint => "joint",
            LossTerm::Motion => "motion",
            LossTerm::Visual => "visual",
        }
    }
}

/// Upper bounds for randomly drawn problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseLimits {
    pub max_dim: usize,
    pub max_extent: usize,
    pub max_batch: usize,
}

impl Default for CaseLimits {
    fn default() -> Self {
        CaseLimits {
            max_dim: 8,
            max_extent: 3,
            max_batch: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseItem {
    pub video_id: String,
    pub slow: FeatureVolume<f64>,
    pub fast: FeatureVolume<f64>,
    pub caption: Vec<usize>,
    pub verbs: Vec<(usize, usize)>,
    pub nouns: Vec<(usize, usize)>,
}

/// A random model with a random batch.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub model: Model<f64>,
    pub items: Vec<CaseItem>,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive extents")
}

/// Vocabulary layout of random cases: two verbs, two nouns, two fillers.
const VERBS: [usize; 2] = [0, 1];
const NOUNS: [usize; 2] = [2, 3];
const CASE_VOCAB: usize = 6;

impl GradCheckCase {
    pub fn random<R: Rng + ?Sized>(limits: CaseLimits, rng: &mut R) -> Self {
        let mut pick = |hi: usize, lo: usize| rng.random_range(lo..=hi.max(lo));
        let dims = ModelDims {
            vocab: CASE_VOCAB,
            word_dim: pick(limits.max_dim, 2),
            embed_dim: pick(limits.max_dim, 2),
            slow_channels: pick(limits.max_dim, 1),
            fast_channels: pick(limits.max_dim, 1),
        };
        let t_slow = pick(limits.max_extent, 1);
        let t_fast = pick(limits.max_extent, 1);
        let h = pick(limits.max_extent, 1);
        let w = pick(limits.max_extent, 1);
        let batch = pick(limits.max_batch, 2);
        let model = Model::init(dims, rng.random());
        let items = (0..batch)
            .map(|b| {
                let id = format!("v{b}");
                let verb = VERBS[rng.random_range(0..2)];
                let noun = NOUNS[rng.random_range(0..2)];
                let mut caption = vec![verb, noun];
                for _ in 0..rng.random_range(0..3) {
                    caption.insert(rng.random_range(0..=caption.len()), rng.random_range(4..CASE_VOCAB));
                }
                CaseItem {
                    slow: FeatureVolume::new(Branch::Slow, &id, uniform(&[dims.slow_channels, t_slow, h, w], rng))
                        .expect("4-D"),
                    fast: FeatureVolume::new(Branch::Fast, &id, uniform(&[dims.fast_channels, t_fast, h, w], rng))
                        .expect("4-D"),
                    video_id: id,
                    caption,
                    verbs: vec![(verb, VERBS[0] + VERBS[1] - verb)],
                    nouns: vec![(noun, NOUNS[0] + NOUNS[1] - noun)],
                }
            })
            .collect();
        GradCheckCase { model, items }
    }

    fn loss_items(&self) -> Vec<LossItem<'_, f64>> {
        self.items
            .iter()
            .map(|i| LossItem {
                video_id: &i.video_id,
                slow: &i.slow,
                fast: &i.fast,
                caption: &i.caption,
                verbs: i.verbs.clone(),
                nouns: i.nouns.clone(),
            })
            .collect()
    }

    /// Compares analytic and central-difference gradients of `term`.
    pub fn check(&self, cfg: &LossConfig<f64>, term: LossTerm, h: f64) -> Result<GradCheckReport> {
        let items = self.loss_items();
        let mut params = self.model.params().to_vec();
        grad_check(&mut params, h, |tape, vars| {
            let mv = Model::<f64>::vars_from_slice(vars);
            let l = total_loss(tape, &mv, &items, cfg)?;
            match term {
                LossTerm::Total => Ok(l.total),
                LossTerm::Joint => Ok(l.joint),
                LossTerm::Motion => l.motion.ok_or_else(|| Error::Internal("no motion term".into())),
                LossTerm::Visual => l.visual.ok_or_else(|| Error::Internal("no visual term".into())),
            }
        })
    }
}

/// Worst report over `cases` random problems and every loss term.
pub fn check_random_cases<R: Rng + ?Sized>(
    cases: usize,
    limits: CaseLimits,
    cfg: &LossConfig<f64>,
    h: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut worst = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        skipped: 0,
    };
    for _ in 0..cases {
        let case = GradCheckCase::random(limits, rng);
        for term in LossTerm::ALL {
            let r = case.check(cfg, term, h)?;
            worst.merge(&r, 0);
        }
    }
    Ok(worst)
}

/// Part-of-speech tag of a random-case token id.
pub fn case_pos(id: usize) -> PartOfSpeech {
    if VERBS.contains(&id) {
        PartOfSpeech::Verb
    } else if NOUNS.contains(&id) {
        PartOfSpeech::Noun
    } else {
        PartOfSpeech::Other
    }
}
