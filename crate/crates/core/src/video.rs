//! Video side: per-voxel projection heads, joint fusion and pooling.
//!
//! Projected volumes are kept voxel-major as `[T·H·W, C]` matrices so each
//! 1×1×1 convolution is a single affine map over rows.

use crate::encoders::Space;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ReduceKind, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Higher spatial detail; projected to the visual space.
    Slow,
    /// Higher frame rate; projected to the motion space.
    Fast,
}

impl Branch {
    pub fn space(self) -> Space {
        match self {
            Branch::Slow => Space::Visual,
            Branch::Fast => Space::Motion,
        }
    }
}

/// Spatiotemporal extent `(T, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Grid { t, h, w }
    }

    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.t, self.h, self.w]
    }

    pub fn index(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.h + h) * self.w + w
    }
}

/// One branch of one video: `[C, T, H, W]`, channel-first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume<T> {
    pub branch: Branch,
    pub video_id: String,
    data: Tensor<T>,
}

impl<T: Scalar> FeatureVolume<T> {
    pub fn new(branch: Branch, video_id: impl Into<String>, data: Tensor<T>) -> Result<Self> {
        if data.ndim() != 4 {
            return Err(Error::input(format!(
                "feature volume must be [C, T, H, W], got {:?}",
                data.shape()
            )));
        }
        Ok(FeatureVolume {
            branch,
            video_id: video_id.into(),
            data,
        })
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn grid(&self) -> Grid {
        let s = self.data.shape();
        Grid::new(s[1], s[2], s[3])
    }

    /// Channel-last copy `[T·H·W, C]`.
    pub fn voxel_rows(&self) -> Tensor<T> {
        let c = self.channels();
        let n = self.grid().len();
        let src = self.data.data();
        let mut out = vec![T::zero(); n * c];
        for ch in 0..c {
            for v in 0..n {
                out[v * c + ch] = src[ch * n + v];
            }
        }
        Tensor::new(vec![n, c], out).expect("voxel rows shape")
    }
}

/// Projected volume on a tape: `var` is `[T·H·W, C]`.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    pub space: Space,
    pub grid: Grid,
    pub var: Var,
}

/// 1×1×1 convolution from a branch's channels to the embedding width.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionHead {
    pub branch: Branch,
    pub w: Var,
    pub b: Var,
}

impl ProjectionHead {
    pub fn project<T: Scalar>(&self, tape: &mut Tape<T>, fv: &FeatureVolume<T>) -> Result<Projected> {
        self.project_rows(tape, fv.voxel_rows(), fv.grid())
    }

    /// Projects precomputed channel-last voxel rows.
    pub fn project_rows<T: Scalar>(&self, tape: &mut Tape<T>, rows: Tensor<T>, grid: Grid) -> Result<Projected> {
        let cin = tape.shape(self.w)[0];
        if rows.shape() != [grid.len(), cin] {
            return Err(Error::input(format!(
                "{:?} head expects {cin} channels over {} voxels, got {:?}",
                self.branch,
                grid.len(),
                rows.shape()
            )));
        }
        let x = tape.constant(rows);
        let var = tape.affine(x, self.w, Some(self.b))?;
        Ok(Projected {
            space: self.branch.space(),
            grid,
            var,
        })
    }
}

/// Row indices mapping a `src_t`-frame grid onto `dst_t` frames by nearest
/// neighbour in time.
pub fn temporal_resample_rows(src: Grid, dst_t: usize) -> Vec<usize> {
    let plane = src.h * src.w;
    let mut rows = Vec::with_capacity(dst_t * plane);
    for t in 0..dst_t {
        let s = (((t as f64 + 0.5) * src.t as f64 / dst_t as f64) as usize).min(src.t - 1);
        rows.extend(s * plane..(s + 1) * plane);
    }
    rows
}

/// Fuses motion and visual volumes into the joint video embedding.
#[derive(Debug, Clone, Copy)]
pub struct JointFusion {
    /// `[2C, C]`
    pub w: Var,
    pub b: Var,
}

impl JointFusion {
    /// Concatenates per voxel, applies affine + sigmoid, averages over voxels
    /// and normalizes. The visual volume is resampled to the motion volume's
    /// frame count first.
    pub fn fuse<T: Scalar>(&self, tape: &mut Tape<T>, mot: &Projected, vis: &Projected) -> Result<Var> {
        if mot.space != Space::Motion || vis.space != Space::Visual {
            return Err(Error::input("fusion takes a motion and a visual volume"));
        }
        if (mot.grid.h, mot.grid.w) != (vis.grid.h, vis.grid.w) {
            return Err(Error::input(format!(
                "spatial extents differ between branches: {:?} vs {:?}",
                mot.grid, vis.grid
            )));
        }
        let vis_var = if vis.grid.t == mot.grid.t {
            vis.var
        } else {
            let rows = temporal_resample_rows(vis.grid, mot.grid.t);
            tape.select_rows(vis.var, &rows)?
        };
        if tape.shape(vis_var)[0] != tape.shape(mot.var)[0] {
            return Err(Error::Internal("voxel counts differ after resampling".into()));
        }
        let cat = tape.concat(&[mot.var, vis_var], 1)?;
        let z = tape.affine(cat, self.w, Some(self.b))?;
        let z = tape.sigmoid(z);
        let pooled = tape.reduce(z, ReduceKind::Mean, &[0])?;
        tape.l2_normalize(pooled, T::norm_eps())
    }
}

/// Mean voxel vector of a projected volume over its own voxel count.
pub fn pool<T: Scalar>(tape: &mut Tape<T>, v: &Projected) -> Result<Var> {
    tape.reduce(v.var, ReduceKind::Mean, &[0])
}
