//! Text side: token embeddings, the gated token encoder and the recurrent
//! caption encoder.

mod negatives;
mod vocab;

pub use negatives::{sample_negative_caption, NegativeSampler};
pub use vocab::{PartOfSpeech, Vocabulary};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Embedding space a vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    /// Verbs and fast-branch voxels.
    Motion,
    /// Nouns and slow-branch voxels.
    Visual,
    /// Whole captions and whole videos.
    Joint,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Motion => "motion",
            Space::Visual => "visual",
            Space::Joint => "joint",
        }
    }

    /// Space a tagged token is encoded into.
    pub fn for_pos(pos: PartOfSpeech) -> Result<Space> {
        match pos {
            PartOfSpeech::Verb => Ok(Space::Motion),
            PartOfSpeech::Noun => Ok(Space::Visual),
            PartOfSpeech::Other => Err(Error::input("only VERB and NOUN tokens have a token embedding")),
        }
    }
}

/// Unit-norm text vector produced on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedText {
    pub space: Space,
    pub var: Var,
}

/// Unit-norm text vector detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding<T> {
    pub space: Space,
    pub vector: Tensor<T>,
}

/// Token encoder parameters bound to a tape.
///
/// Verbs use the `(w1, b1)` gate and `(w2, b2)` value projections into the
/// motion space; nouns use `(w3, b3)` and `(w4, b4)` into the visual space.
#[derive(Debug, Clone, Copy)]
pub struct TokenEncoder {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
    pub w4: Var,
    pub b4: Var,
}

impl TokenEncoder {
    /// `normalize(σ(t·W_a + b_a) ⊙ tanh(t·W_b + b_b))` with `t` the token's
    /// embedding row. No recurrent state is involved.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        embedding: Var,
        token: usize,
        pos: PartOfSpeech,
    ) -> Result<EncodedText> {
        let space = Space::for_pos(pos)?;
        let (wa, ba, wb, bb) = match space {
            Space::Motion => (self.w1, self.b1, self.w2, self.b2),
            _ => (self.w3, self.b3, self.w4, self.b4),
        };
        let t = tape.embed_lookup(embedding, token)?;
        let gate = tape.affine(t, wa, Some(ba))?;
        let gate = tape.sigmoid(gate);
        let value = tape.affine(t, wb, Some(bb))?;
        let value = tape.tanh(value);
        let c = tape.mul(gate, value)?;
        let var = tape.l2_normalize(c, T::norm_eps())?;
        Ok(EncodedText { space, var })
    }
}

/// Gated recurrent caption encoder bound to a tape.
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// ñ  = tanh(x·W_n + (r ⊙ h)·U_n + b_n)
/// h' = (1 − z) ⊙ ñ + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct CaptionEncoder {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
}

impl CaptionEncoder {
    /// One recurrent step.
    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, h: Var) -> Result<Var> {
        let xz = tape.affine(x, self.w_z, Some(self.b_z))?;
        let hz = tape.matmul(h, self.u_z)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);

        let xr = tape.affine(x, self.w_r, Some(self.b_r))?;
        let hr = tape.matmul(h, self.u_r)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);

        let rh = tape.mul(r, h)?;
        let xn = tape.affine(x, self.w_n, Some(self.b_n))?;
        let hn = tape.matmul(rh, self.u_n)?;
        let n = tape.add(xn, hn)?;
        let n = tape.tanh(n);

        // (1 − z) ⊙ ñ + z ⊙ h  ==  ñ + z ⊙ (h − ñ)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// Runs the tokens left to right from a zero state and returns the
    /// normalized final hidden state.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, embedding: Var, tokens: &[usize]) -> Result<EncodedText> {
        if tokens.is_empty() {
            return Err(Error::input("cannot encode an empty caption"));
        }
        let hidden = tape.shape(self.u_z)[0];
        let mut h = tape.constant(Tensor::zeros(&[hidden]));
        for &tok in tokens {
            let x = tape.embed_lookup(embedding, tok)?;
            h = self.step(tape, x, h)?;
        }
        let var = tape.l2_normalize(h, T::norm_eps())?;
        Ok(EncodedText {
            space: Space::Joint,
            var,
        })
    }
}
