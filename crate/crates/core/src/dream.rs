//! Depth-aware non-linear adaptive mask refinement.
//!
//! Every pixel gets one weight per 8-connected neighbor, built from ELU-shaped
//! intensity differences scaled by the local standard deviation. RGB and depth
//! weights are blended, normalized with a per-pixel softmax, and used to
//! diffuse a one-hot encoding of the mask for a fixed number of steps.

use crate::error::{Error, Result};
use crate::maskgen::LabelMask;
use crate::solver::argmax;
use crate::tensor_io::{PipelineConfig, Tensor};

/// Neighbor offsets `(d_row, d_col)` in the order NW, N, NE, W, E, SW, S, SE.
pub const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Per-pixel weights over the eight neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborField {
    height: usize,
    width: usize,
    weights: Vec<[f64; 8]>,
}

impl NeighborField {
    pub fn new(height: usize, width: usize, weights: Vec<[f64; 8]>) -> Result<Self> {
        if weights.len() != height * width || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} field needs {} weight vectors, got {}",
                height * width,
                weights.len()
            )));
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput("neighbor weights"));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[[f64; 8]] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64; 8] {
        &self.weights[row * self.width + col]
    }

    fn same_dims(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel class probabilities, row-major with `k` entries per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    k: usize,
    probs: Vec<f64>,
}

impl SoftMask {
    pub fn one_hot(mask: &LabelMask, k: usize) -> Result<Self> {
        if let Some(&bad) = mask.labels().iter().find(|&&l| l >= k) {
            return Err(Error::ShapeMismatch(format!(
                "label {bad} out of range for k = {k}"
            )));
        }
        let mut probs = vec![0.0; mask.labels().len() * k];
        for (p, &l) in mask.labels().iter().enumerate() {
            probs[p * k + l] = 1.0;
        }
        Ok(Self {
            height: mask.height(),
            width: mask.width(),
            k,
            probs,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let p = row * self.width + col;
        &self.probs[p * self.k..(p + 1) * self.k]
    }

    /// Largest deviation of any pixel's probability sum from 1.
    pub fn max_mass_error(&self) -> f64 {
        self.probs
            .chunks_exact(self.k)
            .map(|px| (px.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_labels(&self) -> Result<LabelMask> {
        let labels = self
            .probs
            .chunks_exact(self.k)
            .map(|px| argmax(px.iter().copied()))
            .collect();
        LabelMask::new(self.height, self.width, labels)
    }
}

fn elu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn clamp_offset(i: usize, d: isize, len: usize) -> usize {
    (i as isize + d).clamp(0, len as isize - 1) as usize
}

/// Standardized directional measure for a `C×H×W` (or `H×W`) plane stack.
///
/// For each neighbor the channel-summed difference `δ` gives the term
/// `δ + λ·ELU(δ)`, which is scaled to `−term / (ε + η·σ)` with `σ` the
/// population standard deviation of the channel-mean plane over the 3×3
/// window. Borders replicate the edge pixel.
pub fn neighborhood_affinity(
    plane: &Tensor,
    lambda_elu: f64,
    eta_std: f64,
    epsilon: f64,
) -> Result<NeighborField> {
    let (c, h, w) = match plane.shape() {
        &[c, h, w] => (c, h, w),
        &[h, w] => (1, h, w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "expected C×H×W plane, got {other:?}"
            )))
        }
    };
    if !plane.is_finite() {
        return Err(Error::NonFiniteInput("refinement plane"));
    }
    let data = plane.data();
    let value = |ch: usize, r: usize, col: usize| data[(ch * h + r) * w + col] as f64;
    let mean_plane: Vec<f64> = (0..h * w)
        .map(|p| (0..c).map(|ch| value(ch, p / w, p % w)).sum::<f64>() / c as f64)
        .collect();

    let mut weights = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let mut window = [0.0f64; 9];
            let mut slot = 0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    window[slot] =
                        mean_plane[clamp_offset(r, dr, h) * w + clamp_offset(col, dc, w)];
                    slot += 1;
                }
            }
            let mean = window.iter().sum::<f64>() / 9.0;
            let sigma = (window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
            let scale = epsilon + eta_std * sigma;

            let mut px = [0.0f64; 8];
            for (slot, &(dr, dc)) in NEIGHBORS.iter().enumerate() {
                let (nr, nc) = (clamp_offset(r, dr, h), clamp_offset(col, dc, w));
                let delta: f64 = (0..c).map(|ch| value(ch, nr, nc) - value(ch, r, col)).sum();
                let term = delta + lambda_elu * elu(delta);
                px[slot] = -term / scale;
            }
            weights.push(px);
        }
    }
    NeighborField::new(h, w, weights)
}

/// Blends RGB and optional depth measures and softmax-normalizes each pixel
/// over its eight neighbors.
pub fn fuse_affinities(
    rgb: &NeighborField,
    depth: Option<&NeighborField>,
    alpha_rgb: f64,
    alpha_depth: f64,
) -> Result<NeighborField> {
    let depth = match depth {
        Some(d) if !d.same_dims(rgb) => {
            return Err(Error::ShapeMismatch(format!(
                "rgb field is {}x{}, depth field is {}x{}",
                rgb.height, rgb.width, d.height, d.width
            )));
        }
        Some(d) => Some(d),
        None if alpha_depth != 0.0 => return Err(Error::MissingDepthWithNonzeroWeight),
        None => None,
    };
    // A zero depth weight takes the RGB-only path so both modes agree bit for bit.
    let depth = depth.filter(|_| alpha_depth != 0.0);

    let weights = rgb
        .weights
        .iter()
        .enumerate()
        .map(|(p, rgb_px)| {
            let mut raw = [0.0f64; 8];
            for s in 0..8 {
                raw[s] = alpha_rgb * rgb_px[s];
                if let Some(d) = depth {
                    raw[s] += alpha_depth * d.weights[p][s];
                }
            }
            softmax8(raw)
        })
        .collect();
    NeighborField::new(rgb.height, rgb.width, weights)
}

fn softmax8(raw: [f64; 8]) -> [f64; 8] {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = raw.map(|v| (v - max).exp());
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// One diffusion step: each pixel becomes the weighted mix of its neighbors'
/// distributions.
pub fn diffuse_step(mask: &SoftMask, fused: &NeighborField) -> Result<SoftMask> {
    if mask.height != fused.height || mask.width != fused.width {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, weights are {}x{}",
            mask.height, mask.width, fused.height, fused.width
        )));
    }
    let (h, w, k) = (mask.height, mask.width, mask.k);
    let mut next = vec![0.0; mask.probs.len()];
    for r in 0..h {
        for c in 0..w {
            let out = &mut next[(r * w + c) * k..(r * w + c + 1) * k];
            for (slot, &(dr, dc)) in NEIGHBORS.iter().enumerate() {
                let q = clamp_offset(r, dr, h) * w + clamp_offset(c, dc, w);
                let weight = fused.weights[r * w + c][slot];
                for (o, &m) in out.iter_mut().zip(&mask.probs[q * k..(q + 1) * k]) {
                    *o += weight * m;
                }
            }
        }
    }
    Ok(SoftMask {
        height: h,
        width: w,
        k,
        probs: next,
    })
}

/// Diffuses the one-hot mask `t_ref` times and takes the per-pixel argmax.
pub fn dream_refine(mask: &LabelMask, fused: &NeighborField, t_ref: usize) -> Result<LabelMask> {
    if mask.height() != fused.height || mask.width() != fused.width {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, weights are {}x{}",
            mask.height(),
            mask.width(),
            fused.height,
            fused.width
        )));
    }
    if t_ref == 0 {
        return Ok(mask.clone());
    }
    let mut soft = SoftMask::one_hot(mask, mask.label_bound())?;
    for _ in 0..t_ref {
        soft = diffuse_step(&soft, fused)?;
    }
    soft.to_labels()
}

/// Rescales a plane to `[0, 1]`; a constant plane maps to zeros.
pub fn minmax_normalize(plane: &Tensor) -> Result<Tensor> {
    let (lo, hi) = plane
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data = plane
        .data()
        .iter()
        .map(|&v| if range > 0.0 { (v - lo) / range } else { 0.0 })
        .collect();
    Tensor::new(plane.shape().to_vec(), data)
}

/// Full refinement from image planes: measures, fusion, diffusion.
/// A depth plane is min-max normalized first.
pub fn refine_with_planes(
    mask: &LabelMask,
    rgb: &Tensor,
    depth: Option<&Tensor>,
    config: &PipelineConfig,
) -> Result<LabelMask> {
    let rgb_field = neighborhood_affinity(rgb, config.lambda_elu, config.eta_std, config.epsilon)?;
    let depth_field = depth
        .map(|d| {
            let d = minmax_normalize(d)?;
            neighborhood_affinity(&d, config.lambda_elu, config.eta_std, config.epsilon)
        })
        .transpose()?;
    let fused = fuse_affinities(
        &rgb_field,
        depth_field.as_ref(),
        config.alpha_rgb,
        config.alpha_depth,
    )?;
    dream_refine(mask, &fused, config.t_ref)
}
