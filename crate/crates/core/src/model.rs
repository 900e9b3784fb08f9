//! Parameter store for the full model and its binding onto a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{CaptionEncoder, PartOfSpeech, Space, TextEmbedding, TokenEncoder};
use crate::error::{Error, Result};
use crate::objectives::{self, RelevanceMap};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Tape, Tensor, Var};
use crate::video::{self, Branch, FeatureVolume, Grid, JointFusion, Projected, ProjectionHead};

/// Widths that fix every parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Vocabulary size `V`.
    pub vocab: usize,
    /// Word embedding width `E`.
    pub word_dim: usize,
    /// Shared width `C` of the motion, visual and joint spaces.
    pub embed_dim: usize,
    pub slow_channels: usize,
    pub fast_channels: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.vocab,
            self.word_dim,
            self.embed_dim,
            self.slow_channels,
            self.fast_channels,
        ];
        if all.contains(&0) {
            return Err(Error::InvalidConfig(format!("model widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Parameter names with shapes and initialization fan-in, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        let (v, e, c) = (self.vocab, self.word_dim, self.embed_dim);
        let (cs, cf) = (self.slow_channels, self.fast_channels);
        vec![
            ("embedding", vec![v, e], 1),
            ("token.w1", vec![e, c], e),
            ("token.b1", vec![c], e),
            ("token.w2", vec![e, c], e),
            ("token.b2", vec![c], e),
            ("token.w3", vec![e, c], e),
            ("token.b3", vec![c], e),
            ("token.w4", vec![e, c], e),
            ("token.b4", vec![c], e),
            ("caption.w_z", vec![e, c], e),
            ("caption.u_z", vec![c, c], c),
            ("caption.b_z", vec![c], c),
            ("caption.w_r", vec![e, c], e),
            ("caption.u_r", vec![c, c], c),
            ("caption.b_r", vec![c], c),
            ("caption.w_n", vec![e, c], e),
            ("caption.u_n", vec![c, c], c),
            ("caption.b_n", vec![c], c),
            ("head.motion.w", vec![cf, c], cf),
            ("head.motion.b", vec![c], cf),
            ("head.visual.w", vec![cs, c], cs),
            ("head.visual.b", vec![c], cs),
            ("fusion.w", vec![2 * c, c], 2 * c),
            ("fusion.b", vec![c], 2 * c),
        ]
    }
}

/// Every parameter of the model bound to one tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub embedding: Var,
    pub token: TokenEncoder,
    pub caption: CaptionEncoder,
    pub motion_head: ProjectionHead,
    pub visual_head: ProjectionHead,
    pub fusion: JointFusion,
}

impl ModelVars {
    pub fn head(&self, branch: Branch) -> &ProjectionHead {
        match branch {
            Branch::Fast => &self.motion_head,
            Branch::Slow => &self.visual_head,
        }
    }
}

/// Joint, pooled-motion and pooled-visual vectors of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding<T> {
    pub joint: Tensor<T>,
    pub motion: Tensor<T>,
    pub visual: Tensor<T>,
}

/// Projected volume detached from a tape, `[T·H·W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedVolume<T> {
    pub space: Space,
    pub grid: Grid,
    pub data: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    dims: ModelDims,
    names: Vec<&'static str>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Uniform(±1/√fan_in) initialization from `seed`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, fan_in) in dims.layout() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
            names.push(name);
            params.push(Tensor::new(shape, data).expect("layout shape"));
        }
        Model { dims, names, params }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let layout = dims.layout();
        Model {
            dims,
            names: layout.iter().map(|l| l.0).collect(),
            params: layout.iter().map(|l| Tensor::zeros(&l.1)).collect(),
        }
    }

    /// Rebuilds a model from named tensors; names and shapes must match the layout.
    pub fn from_named(dims: ModelDims, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let layout = dims.layout();
        if named.len() != layout.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.len());
        for ((name, shape, _), (got_name, t)) in layout.iter().zip(named) {
            if *name != got_name || t.shape() != shape.as_slice() {
                return Err(Error::InvalidInput(format!(
                    "parameter {got_name:?} {:?} does not match expected {name:?} {shape:?}",
                    t.shape()
                )));
            }
            params.push(t);
        }
        Ok(Model {
            dims,
            names: layout.iter().map(|l| l.0).collect(),
            params,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|&n| n == name)
    }

    /// Panics on an unknown name.
    pub fn param(&self, name: &str) -> &Tensor<T> {
        &self.params[self.param_index(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.param_index(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &mut self.params[i]
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            dims: self.dims,
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Places every parameter on `tape`, tagged with its storage index.
    pub fn bind(&self, tape: &mut Tape<T>) -> ModelVars {
        let vars: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect();
        Self::vars_from_slice(&vars)
    }

    /// Interprets leaves in layout order (used by gradient checks).
    pub fn vars_from_slice(v: &[Var]) -> ModelVars {
        ModelVars {
            embedding: v[0],
            token: TokenEncoder {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
                w3: v[5],
                b3: v[6],
                w4: v[7],
                b4: v[8],
            },
            caption: CaptionEncoder {
                w_z: v[9],
                u_z: v[10],
                b_z: v[11],
                w_r: v[12],
                u_r: v[13],
                b_r: v[14],
                w_n: v[15],
                u_n: v[16],
                b_n: v[17],
            },
            motion_head: ProjectionHead {
                branch: Branch::Fast,
                w: v[18],
                b: v[19],
            },
            visual_head: ProjectionHead {
                branch: Branch::Slow,
                w: v[20],
                b: v[21],
            },
            fusion: JointFusion { w: v[22], b: v[23] },
        }
    }

    pub fn token_embedding(&self, token: usize, pos: PartOfSpeech) -> Result<TextEmbedding<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = vars.token.encode(&mut tape, vars.embedding, token, pos)?;
        Ok(TextEmbedding {
            space: enc.space,
            vector: tape.value(enc.var).clone(),
        })
    }

    pub fn caption_embedding(&self, tokens: &[usize]) -> Result<TextEmbedding<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = vars.caption.encode(&mut tape, vars.embedding, tokens)?;
        Ok(TextEmbedding {
            space: enc.space,
            vector: tape.value(enc.var).clone(),
        })
    }

    pub fn project(&self, fv: &FeatureVolume<T>) -> Result<ProjectedVolume<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let p = vars.head(fv.branch).project(&mut tape, fv)?;
        Ok(ProjectedVolume {
            space: p.space,
            grid: p.grid,
            data: tape.value(p.var).clone(),
        })
    }

    pub fn video_embedding(&self, slow: &FeatureVolume<T>, fast: &FeatureVolume<T>) -> Result<VideoEmbedding<T>> {
        check_branches(slow, fast)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mot = vars.motion_head.project(&mut tape, fast)?;
        let vis = vars.visual_head.project(&mut tape, slow)?;
        let joint = vars.fusion.fuse(&mut tape, &mot, &vis)?;
        let pm = video::pool(&mut tape, &mot)?;
        let pv = video::pool(&mut tape, &vis)?;
        Ok(VideoEmbedding {
            joint: tape.value(joint).clone(),
            motion: tape.value(pm).clone(),
            visual: tape.value(pv).clone(),
        })
    }

    /// Relevance map of a token over the matching branch's volume.
    pub fn relevance_map(
        &self,
        fv: &FeatureVolume<T>,
        token: usize,
        pos: PartOfSpeech,
        beta: T,
    ) -> Result<RelevanceMap<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = vars.token.encode(&mut tape, vars.embedding, token, pos)?;
        let proj: Projected = vars.head(fv.branch).project(&mut tape, fv)?;
        let m = objectives::relevance_map(&mut tape, &proj, &enc, beta)?;
        RelevanceMap::from_tape(&tape, m, &proj, token, beta)
    }
}

pub(crate) fn check_branches<T: Scalar>(slow: &FeatureVolume<T>, fast: &FeatureVolume<T>) -> Result<()> {
    if slow.branch != Branch::Slow || fast.branch != Branch::Fast {
        return Err(Error::input("expected a slow and a fast volume"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 6,
            word_dim: 3,
            embed_dim: 4,
            slow_channels: 5,
            fast_channels: 2,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Model::<f64>::init(dims(), 3);
        assert_eq!(a, Model::init(dims(), 3));
        assert_ne!(a, Model::init(dims(), 4));
        for ((_, _, fan_in), p) in dims().layout().iter().zip(a.params()) {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            assert!(p.data().iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn named_round_trip_checks_layout() {
        let m = Model::<f64>::init(dims(), 1);
        let named: Vec<_> = m
            .names()
            .iter()
            .zip(m.params())
            .map(|(n, p)| (n.to_string(), p.clone()))
            .collect();
        assert_eq!(Model::from_named(dims(), named.clone()).unwrap(), m);
        let mut wrong = named;
        wrong.swap(1, 3);
        wrong[1].0 = "token.w9".into();
        assert!(Model::from_named(dims(), wrong).is_err());
    }
}
