//! Relevance maps and the training objective.

use crate::encoders::{EncodedText, Space};
use crate::error::{Error, Result};
use crate::model::{check_branches, ModelVars};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::video::{FeatureVolume, Grid, Projected};

/// Softmax-normalized voxel relevance of one token, shaped `[T, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap<T> {
    pub space: Space,
    pub token_id: usize,
    pub grid: Grid,
    pub beta: T,
    pub data: Tensor<T>,
}

impl<T: Scalar> RelevanceMap<T> {
    pub(crate) fn from_tape(tape: &Tape<T>, map: Var, proj: &Projected, token_id: usize, beta: T) -> Result<Self> {
        let data = tape.value(map).clone().reshape(&proj.grid.shape())?;
        Ok(RelevanceMap {
            space: proj.space,
            token_id,
            grid: proj.grid,
            beta,
            data,
        })
    }

    /// Total weight on voxels where `mask` is nonzero.
    pub fn mass_inside(&self, mask: &Tensor<T>) -> Result<T> {
        if mask.shape() != self.data.shape() {
            return Err(Error::input(format!(
                "mask {:?} does not match map {:?}",
                mask.shape(),
                self.data.shape()
            )));
        }
        Ok(self
            .data
            .data()
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m != T::zero())
            .map(|(&x, _)| x)
            .sum())
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> T {
        entropy(self.data.data())
    }

    pub fn max(&self) -> T {
        self.data
            .data()
            .iter()
            .fold(T::neg_infinity(), |m, &x| if x > m { x } else { m })
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.data
            .data()
            .iter()
            .zip(other.data.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum()
    }
}

pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter().filter(|&&x| x > T::zero()).map(|&x| x * x.ln()).sum::<T>()
}

/// Voxel relevance `softmax_ijk(s(v_ijk, c⁺) / β)` as a flat `[T·H·W]` var.
pub fn relevance_map<T: Scalar>(tape: &mut Tape<T>, v: &Projected, c_pos: &EncodedText, beta: T) -> Result<Var> {
    if v.space != c_pos.space {
        return Err(Error::input(format!(
            "{} volume cannot be matched with a {} embedding",
            v.space.name(),
            c_pos.space.name()
        )));
    }
    let scores = tape.cosine_rows(v.var, c_pos.var, T::norm_eps())?;
    tape.softmax_positions(scores, beta)
}

/// Relevance-weighted hinge `Σ m_ijk ⌊α − s(v_ijk, c⁺) + s(v_ijk, c⁻)⌋₊`.
///
/// Only the caption side supplies a negative. Gradients flow through the
/// relevance weights as well as the hinge.
pub fn alignment_loss<T: Scalar>(
    tape: &mut Tape<T>,
    v: &Projected,
    c_pos: &EncodedText,
    c_neg: &EncodedText,
    beta: T,
    alpha: T,
) -> Result<Var> {
    if v.space != c_pos.space || v.space != c_neg.space {
        return Err(Error::input("alignment loss needs volume and tokens in one space"));
    }
    if !(beta > T::zero()) {
        return Err(Error::InvalidConfig(format!("beta must be > 0, got {beta}")));
    }
    if alpha < T::zero() {
        return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
    }
    let s_pos = tape.cosine_rows(v.var, c_pos.var, T::norm_eps())?;
    let map = tape.softmax_positions(s_pos, beta)?;
    let s_neg = tape.cosine_rows(v.var, c_neg.var, T::norm_eps())?;
    let margin = tape.sub(s_neg, s_pos)?;
    let margin = tape.add_scalar(margin, alpha);
    let hinge = tape.relu(margin);
    let weighted = tape.mul(map, hinge)?;
    tape.sum_all(weighted)
}

/// Bidirectional in-batch triplet loss over joint embeddings.
///
/// For item `i`, every item of another video is a negative both as a caption
/// (`s(v_i, c_j)`) and as a video (`s(v_j, c_i)`). Hinges are averaged over
/// negatives per direction, the two directions summed, then averaged over items.
pub fn joint_loss<T: Scalar>(
    tape: &mut Tape<T>,
    videos: &[Var],
    captions: &[Var],
    video_ids: &[&str],
    alpha: T,
) -> Result<Var> {
    let b = videos.len();
    if captions.len() != b || video_ids.len() != b {
        return Err(Error::input("joint loss needs one video, caption and id per item"));
    }
    let mut distinct: Vec<&str> = video_ids.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidBatch(
            "joint loss needs at least two distinct videos".into(),
        ));
    }
    let eps = T::norm_eps();
    let v = tape.stack(videos)?;
    let v = tape.l2_normalize(v, eps)?;
    let c = tape.stack(captions)?;
    let c = tape.l2_normalize(c, eps)?;
    let ct = tape.transpose(c)?;
    // sim[i][j] = s(v_i, c_j)
    let sim = tape.matmul(v, ct)?;
    let sim = tape.reshape(sim, &[b * b])?;

    let mut pos_idx = Vec::new();
    let mut neg_idx = Vec::new();
    let mut weights = Vec::new();
    let items = T::from_usize(b).unwrap();
    for i in 0..b {
        let negs: Vec<usize> = (0..b).filter(|&j| video_ids[j] != video_ids[i]).collect();
        let w = T::one() / (T::from_usize(negs.len()).unwrap() * items);
        for &j in &negs {
            // caption negative, then video negative
            pos_idx.extend([i * b + i, i * b + i]);
            neg_idx.extend([i * b + j, j * b + i]);
            weights.extend([w, w]);
        }
    }
    let pos = tape.select_rows(sim, &pos_idx)?;
    let neg = tape.select_rows(sim, &neg_idx)?;
    let margin = tape.sub(neg, pos)?;
    let margin = tape.add_scalar(margin, alpha);
    let hinge = tape.relu(margin);
    let w = tape.constant(Tensor::from_vec(weights));
    let weighted = tape.mul(hinge, w)?;
    tape.sum_all(weighted)
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub alpha: T,
    pub beta: T,
    pub lambda_m: T,
    pub lambda_s: T,
}

/// One training pair with its sampled token negatives.
#[derive(Debug, Clone)]
pub struct LossItem<'a, T> {
    pub video_id: &'a str,
    pub slow: &'a FeatureVolume<T>,
    pub fast: &'a FeatureVolume<T>,
    /// Every caption token, in order.
    pub caption: &'a [usize],
    /// (positive, negative) verb ids.
    pub verbs: Vec<(usize, usize)>,
    /// (positive, negative) noun ids.
    pub nouns: Vec<(usize, usize)>,
}

/// Loss vars recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TotalLoss {
    pub total: Var,
    pub joint: Var,
    pub motion: Option<Var>,
    pub visual: Option<Var>,
}

/// Values of each objective term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub l_joint: T,
    pub l_mot: T,
    pub l_vis: T,
    pub l_total: T,
    pub lambda_m: T,
    pub lambda_s: T,
    pub alpha: T,
}

impl TotalLoss {
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<T>, cfg: &LossConfig<T>) -> LossBreakdown<T> {
        let get = |v: Option<Var>| v.map_or(T::zero(), |v| tape.value(v).data()[0]);
        LossBreakdown {
            l_joint: get(Some(self.joint)),
            l_mot: get(self.motion),
            l_vis: get(self.visual),
            l_total: get(Some(self.total)),
            lambda_m: cfg.lambda_m,
            lambda_s: cfg.lambda_s,
            alpha: cfg.alpha,
        }
    }
}

fn mean_of<T: Scalar>(tape: &mut Tape<T>, xs: &[Var]) -> Result<Option<Var>> {
    if xs.is_empty() {
        return Ok(None);
    }
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(Some(tape.scale(acc, T::one() / T::from_usize(xs.len()).unwrap())))
}

/// `L_joint + λ_m·L_mot + λ_s·L_vis` over a batch.
///
/// Alignment terms average over a caption's tokens of one tag, then over
/// the items that have such tokens. A term with weight zero is recorded but
/// not added, so it contributes no gradient.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    items: &[LossItem<'_, T>],
    cfg: &LossConfig<T>,
) -> Result<TotalLoss> {
    let mut joint_v = Vec::with_capacity(items.len());
    let mut joint_c = Vec::with_capacity(items.len());
    let mut mot_terms = Vec::new();
    let mut vis_terms = Vec::new();

    for item in items {
        check_branches(item.slow, item.fast)?;
        let mot = vars.motion_head.project(tape, item.fast)?;
        let vis = vars.visual_head.project(tape, item.slow)?;
        joint_v.push(vars.fusion.fuse(tape, &mot, &vis)?);
        joint_c.push(vars.caption.encode(tape, vars.embedding, item.caption)?.var);

        for (pairs, proj, out) in [(&item.verbs, &mot, &mut mot_terms), (&item.nouns, &vis, &mut vis_terms)] {
            let pos = match proj.space {
                Space::Motion => crate::encoders::PartOfSpeech::Verb,
                _ => crate::encoders::PartOfSpeech::Noun,
            };
            let mut per_token = Vec::with_capacity(pairs.len());
            for &(p, n) in pairs.iter() {
                let cp = vars.token.encode(tape, vars.embedding, p, pos)?;
                let cn = vars.token.encode(tape, vars.embedding, n, pos)?;
                per_token.push(alignment_loss(tape, proj, &cp, &cn, cfg.beta, cfg.alpha)?);
            }
            if let Some(m) = mean_of(tape, &per_token)? {
                out.push(m);
            }
        }
    }

    let ids: Vec<&str> = items.iter().map(|i| i.video_id).collect();
    let joint = joint_loss(tape, &joint_v, &joint_c, &ids, cfg.alpha)?;
    let motion = mean_of(tape, &mot_terms)?;
    let visual = mean_of(tape, &vis_terms)?;
    if motion.is_none() && visual.is_none() {
        log::warn!("batch has no verbs and no nouns; alignment terms are zero");
    }

    let mut total = joint;
    for (term, lambda) in [(motion, cfg.lambda_m), (visual, cfg.lambda_s)] {
        if let Some(t) = term {
            if lambda != T::zero() {
                let scaled = tape.scale(t, lambda);
                total = tape.add(total, scaled)?;
            }
        }
    }
    Ok(TotalLoss {
        total,
        joint,
        motion,
        visual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamId;

    fn text(tape: &mut Tape<f64>, space: Space, v: &[f64]) -> EncodedText {
        let var = tape.variable(Tensor::from_f64(&[v.len()], v).unwrap());
        EncodedText { space, var }
    }

    fn two_voxels(tape: &mut Tape<f64>) -> Projected {
        let var = tape.variable(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        Projected {
            space: Space::Motion,
            grid: Grid::new(1, 1, 2),
            var,
        }
    }

    #[test]
    fn two_voxel_relevance_map() {
        let mut tape = Tape::new();
        let v = two_voxels(&mut tape);
        let c = text(&mut tape, Space::Motion, &[1., 0.]);
        let m = relevance_map(&mut tape, &v, &c, 1.0).unwrap();
        let d = tape.value(m).data();
        let e = std::f64::consts::E;
        assert!((d[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((d[0] - 0.7311).abs() < 1e-4 && (d[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn space_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let v = two_voxels(&mut tape);
        let c = text(&mut tape, Space::Visual, &[1., 0.]);
        assert!(matches!(
            relevance_map(&mut tape, &v, &c, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn uniform_voxels_give_uniform_map() {
        let mut tape = Tape::new();
        let var = tape.constant(Tensor::from_f64(&[3, 2], &[0.3, 0.4, 0.3, 0.4, 0.3, 0.4]).unwrap());
        let v = Projected {
            space: Space::Visual,
            grid: Grid::new(1, 3, 1),
            var,
        };
        let c = text(&mut tape, Space::Visual, &[-0.2, 0.9]);
        let m = relevance_map(&mut tape, &v, &c, 0.05).unwrap();
        for &x in tape.value(m).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_voxel_alignment_loss() {
        let mut tape = Tape::new();
        let v = two_voxels(&mut tape);
        let cp = text(&mut tape, Space::Motion, &[1., 0.]);
        let cn = text(&mut tape, Space::Motion, &[0., 1.]);
        let l = alignment_loss(&mut tape, &v, &cp, &cn, 1.0, 0.2).unwrap();
        let e = std::f64::consts::E;
        let want = 1.0 / (e + 1.0) * 1.2;
        let got = tape.value(l).data()[0];
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.322_73).abs() < 1e-5);
    }

    #[test]
    fn degenerate_negative_costs_alpha() {
        let mut tape = Tape::new();
        let var = tape.constant(Tensor::from_f64(&[3, 2], &[1., 2., -1., 0.5, 0.3, -0.7]).unwrap());
        let v = Projected {
            space: Space::Motion,
            grid: Grid::new(3, 1, 1),
            var,
        };
        let c = text(&mut tape, Space::Motion, &[0.6, 0.8]);
        let l = alignment_loss(&mut tape, &v, &c, &c, 0.1, 0.2).unwrap();
        assert!((tape.value(l).data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn satisfied_margin_costs_nothing() {
        let mut tape = Tape::new();
        let var = tape.constant(Tensor::from_f64(&[2, 2], &[2., 0., 5., 0.]).unwrap());
        let v = Projected {
            space: Space::Visual,
            grid: Grid::new(1, 2, 1),
            var,
        };
        let cp = text(&mut tape, Space::Visual, &[1., 0.]);
        let cn = text(&mut tape, Space::Visual, &[0., 1.]);
        let l = alignment_loss(&mut tape, &v, &cp, &cn, 0.1, 0.2).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }

    #[test]
    fn joint_loss_hand_cases() {
        let mut tape = Tape::<f64>::new();
        let v1 = tape.constant(Tensor::from_f64(&[2], &[1., 0.]).unwrap());
        let v2 = tape.constant(Tensor::from_f64(&[2], &[-1., 0.]).unwrap());
        let l = joint_loss(&mut tape, &[v1, v2], &[v1, v2], &["a", "b"], 0.2).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);

        let same = tape.constant(Tensor::from_f64(&[2], &[0.6, 0.8]).unwrap());
        let l = joint_loss(&mut tape, &[same; 3], &[same; 3], &["a", "b", "c"], 0.2).unwrap();
        assert!((tape.value(l).data()[0] - 0.4).abs() < 1e-15);

        assert!(matches!(
            joint_loss(&mut tape, &[v1, v2], &[v1, v2], &["a", "a"], 0.2),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn zero_weights_leave_joint_loss_alone() {
        use crate::model::{Model, ModelDims};
        use crate::video::Branch;
        let dims = ModelDims {
            vocab: 4,
            word_dim: 2,
            embed_dim: 3,
            slow_channels: 2,
            fast_channels: 2,
        };
        let model = Model::<f64>::init(dims, 8);
        let vol = |b, seed: f64| {
            let data = (0..16).map(|i| ((i as f64 + seed) * 0.37).sin()).collect();
            FeatureVolume::new(b, "x", Tensor::new(vec![2, 2, 2, 2], data).unwrap()).unwrap()
        };
        let (s0, f0, s1, f1) = (
            vol(Branch::Slow, 0.),
            vol(Branch::Fast, 1.),
            vol(Branch::Slow, 2.),
            vol(Branch::Fast, 3.),
        );
        let items = vec![
            LossItem {
                video_id: "a",
                slow: &s0,
                fast: &f0,
                caption: &[0, 1, 2],
                verbs: vec![(0, 3)],
                nouns: vec![(1, 2)],
            },
            LossItem {
                video_id: "b",
                slow: &s1,
                fast: &f1,
                caption: &[3, 2],
                verbs: vec![(3, 0)],
                nouns: vec![(2, 1)],
            },
        ];
        let cfg = LossConfig {
            alpha: 0.2,
            beta: 0.5,
            lambda_m: 0.0,
            lambda_s: 0.0,
        };
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let loss = total_loss(&mut tape, &vars, &items, &cfg).unwrap();
        let b = loss.breakdown(&tape, &cfg);
        assert_eq!(b.l_total.to_bits(), b.l_joint.to_bits());
        assert!(b.l_mot > 0.0 && b.l_vis > 0.0);
        let g = tape.backward(loss.total).unwrap();
        for name in ["token.w1", "token.b2", "token.w3", "token.b4"] {
            let id = ParamId(model.param_index(name).unwrap());
            assert!(g.param(id).unwrap().data().iter().all(|&x| x == 0.0), "{name}");
        }
    }
}
