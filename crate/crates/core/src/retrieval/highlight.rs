//! Token-conditioned relevance maps, resampled and written to disk.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::container::write_tensor;
use crate::encoders::{PartOfSpeech, Space, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objectives::RelevanceMap;
use crate::scalar::Dtype;
use crate::tensor::Tensor;
use crate::video::FeatureVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    #[default]
    Trilinear,
    Nearest,
}

impl Interp {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trilinear" => Some(Interp::Trilinear),
            "nearest" => Some(Interp::Nearest),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Interp::Trilinear => "trilinear",
            Interp::Nearest => "nearest",
        }
    }
}

/// Half-pixel source coordinate of output index `i` when resizing `n_in → n_out`.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    let x = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    x.clamp(0.0, (n_in - 1) as f64)
}

/// `(lower index, upper index, upper weight)` per output index.
fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let x = source_coord(i, n_in, n_out);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

fn nearest_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let s = (((i as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
            (s, s, 0.0)
        })
        .collect()
}

/// Resamples a `[T, H, W]` map to `out` with half-pixel alignment.
///
/// Output values are convex combinations of inputs, so nonnegativity is
/// kept; resampling to the same shape returns the input unchanged.
pub fn upsample(map: &Tensor<f64>, out: [usize; 3], interp: Interp) -> Result<Tensor<f64>> {
    let &[t, h, w] = map.shape() else {
        return Err(Error::input(format!("expected a [T, H, W] map, got {:?}", map.shape())));
    };
    if out.contains(&0) {
        return Err(Error::input(format!("output resolution {out:?} has a zero extent")));
    }
    let taps = |n_in, n_out| match interp {
        Interp::Trilinear => linear_taps(n_in, n_out),
        Interp::Nearest => nearest_taps(n_in, n_out),
    };
    let (tt, th, tw) = (taps(t, out[0]), taps(h, out[1]), taps(w, out[2]));
    let src = map.data();
    let at = |a: usize, b: usize, c: usize| src[(a * h + b) * w + c];
    let mut data = Vec::with_capacity(out.iter().product());
    for &(t0, t1, ft) in &tt {
        for &(h0, h1, fh) in &th {
            for &(w0, w1, fw) in &tw {
                let plane = |ti: usize| {
                    let top = at(ti, h0, w0) * (1.0 - fw) + at(ti, h0, w1) * fw;
                    let bottom = at(ti, h1, w0) * (1.0 - fw) + at(ti, h1, w1) * fw;
                    top * (1.0 - fh) + bottom * fh
                };
                let v = if ft == 0.0 {
                    plane(t0)
                } else {
                    plane(t0) * (1.0 - ft) + plane(t1) * ft
                };
                data.push(v);
            }
        }
    }
    Tensor::new(out.to_vec(), data)
}

/// 8-bit grayscale frames of a `[T, H, W]` map, min-max scaled over the
/// whole map. A constant map renders black.
pub fn to_gray_frames(map: &Tensor<f64>) -> Result<Vec<Vec<u8>>> {
    let &[_, h, w] = map.shape() else {
        return Err(Error::input(format!("expected a [T, H, W] map, got {:?}", map.shape())));
    };
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(map
        .data()
        .chunks(h * w)
        .map(|frame| {
            frame
                .iter()
                .map(|&x| {
                    if span > 0.0 {
                        ((x - lo) / span * 255.0).round() as u8
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect())
}

/// Binary portable graymap (`P5`) bytes.
pub fn pgm_bytes(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighlightRequest {
    pub token: String,
    pub pos: PartOfSpeech,
    pub beta: f64,
    /// Output `[T, H, W]`; `None` exports only the raw map.
    pub resolution: Option<[usize; 3]>,
    pub interp: Interp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighlightExport {
    pub video_id: String,
    pub token: String,
    pub pos: PartOfSpeech,
    pub space: Space,
    pub beta: f64,
    pub interp: Interp,
    pub map: RelevanceMap<f64>,
    pub upsampled: Option<Tensor<f64>>,
}

/// Relevance map of a vocabulary token over the branch matching its tag:
/// verbs over the fast (motion) volume, nouns over the slow (visual) one.
pub fn highlight(
    model: &Model<f64>,
    vocab: &Vocabulary,
    slow: &FeatureVolume<f64>,
    fast: &FeatureVolume<f64>,
    req: &HighlightRequest,
) -> Result<HighlightExport> {
    let (id, vpos) = vocab
        .lookup(&req.token)
        .ok_or_else(|| Error::input(format!("token {:?} is not in the vocabulary", req.token)))?;
    if vpos != req.pos {
        return Err(Error::input(format!(
            "token {:?} is tagged {vpos} in the vocabulary, not {}",
            req.token, req.pos
        )));
    }
    let volume = match req.pos {
        PartOfSpeech::Verb => fast,
        PartOfSpeech::Noun => slow,
        PartOfSpeech::Other => {
            return Err(Error::input("highlighting needs a VERB or NOUN token"));
        }
    };
    let map = model.relevance_map(volume, id, req.pos, req.beta)?;
    let upsampled = req.resolution.map(|r| upsample(&map.data, r, req.interp)).transpose()?;
    Ok(HighlightExport {
        video_id: volume.video_id.clone(),
        token: req.token.clone(),
        pos: req.pos,
        space: map.space,
        beta: req.beta,
        interp: req.interp,
        map,
        upsampled,
    })
}

impl HighlightExport {
    /// The map that frames are rendered from: upsampled if requested.
    pub fn display_map(&self) -> &Tensor<f64> {
        self.upsampled.as_ref().unwrap_or(&self.map.data)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "video_id={}", self.video_id);
        let _ = writeln!(s, "token={}", self.token);
        let _ = writeln!(s, "pos={}", self.pos);
        let _ = writeln!(s, "space={}", self.space.name());
        let _ = writeln!(s, "beta={}", self.beta);
        let g = self.map.grid;
        let _ = writeln!(s, "raw_shape={}x{}x{}", g.t, g.h, g.w);
        if let Some(u) = &self.upsampled {
            let d = u.shape();
            let _ = writeln!(s, "output_shape={}x{}x{}", d[0], d[1], d[2]);
            let _ = writeln!(s, "interp={}", self.interp.name());
        }
        let _ = writeln!(s, "entropy={}", self.map.entropy());
        let _ = writeln!(s, "max={}", self.map.max());
        s
    }

    /// Writes `map.vten`, optionally `upsampled.vten`, `frame_NNNN.pgm` per
    /// frame of the display map, and `highlight.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(&dir.join("map.vten"), &self.map.data, Dtype::F64)?;
        if let Some(u) = &self.upsampled {
            write_tensor(&dir.join("upsampled.vten"), u, Dtype::F64)?;
        }
        let shown = self.display_map();
        let (h, w) = (shown.shape()[1], shown.shape()[2]);
        for (i, frame) in to_gray_frames(shown)?.iter().enumerate() {
            let p = dir.join(format!("frame_{i:04}.pgm"));
            std::fs::write(&p, pgm_bytes(frame, w, h)).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("highlight.txt");
        std::fs::write(&p, self.summary()).map_err(|e| Error::io(&p, e))
    }
}
