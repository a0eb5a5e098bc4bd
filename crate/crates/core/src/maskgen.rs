//! Low-resolution labels from the soft assignment, nearest-neighbor
//! upsampling, and relabeling by similarity to partition feature centers.

use ndarray::{Array2, ArrayView3};

use crate::error::{Error, Result};
use crate::solver::{argmax, SoftAssignment};
use crate::tensor_io::Tensor;

/// Row-major grid of cluster labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "mask must be at least 1x1, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: usize) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    /// One past the largest label present.
    pub fn label_bound(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Distinct labels in ascending order.
    pub fn distinct_labels(&self) -> Vec<usize> {
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCenters {
    /// `K×C`; rows of unpopulated partitions are zero.
    pub centers: Array2<f64>,
    pub populated: Vec<bool>,
    /// Pixels per partition.
    pub counts: Vec<usize>,
}

/// Hard label per node (argmax over clusters), laid out row-major on the token grid.
pub fn argmax_mask(asg: &SoftAssignment, grid_h: usize, grid_w: usize) -> Result<LabelMask> {
    if grid_h * grid_w != asg.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "grid {grid_h}x{grid_w} does not hold {} nodes",
            asg.n_nodes()
        )));
    }
    LabelMask::new(grid_h, grid_w, asg.hard_labels())
}

pub fn upsample_nearest(mask: &LabelMask, out_h: usize, out_w: usize) -> Result<LabelMask> {
    if out_h < mask.height || out_w < mask.width {
        return Err(Error::ShapeMismatch(format!(
            "cannot upsample {}x{} to smaller {out_h}x{out_w}",
            mask.height, mask.width
        )));
    }
    let mut labels = Vec::with_capacity(out_h * out_w);
    for h in 0..out_h {
        let src_row = h * mask.height / out_h;
        for w in 0..out_w {
            labels.push(mask.get(src_row, w * mask.width / out_w));
        }
    }
    LabelMask::new(out_h, out_w, labels)
}

/// Rearranges an `N×C` token matrix on a `grid_h×grid_w` grid into `C×H×W`.
pub fn tokens_to_planes(features: &Tensor, grid_h: usize, grid_w: usize) -> Result<Tensor> {
    let (n, c) = match features.shape() {
        &[n, c] => (n, c),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "expected N×C tokens, got {other:?}"
            )))
        }
    };
    if n != grid_h * grid_w {
        return Err(Error::ShapeMismatch(format!(
            "{n} tokens do not fill a {grid_h}x{grid_w} grid"
        )));
    }
    let src = features.data();
    let mut out = vec![0.0f32; n * c];
    for i in 0..n {
        for ch in 0..c {
            out[ch * n + i] = src[i * c + ch];
        }
    }
    Tensor::new(vec![c, grid_h, grid_w], out)
}

/// Bilinear resize of a `C×H×W` tensor using half-pixel centers with edge clamping.
pub fn upsample_bilinear(planes: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = chw(planes)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::ShapeMismatch("output size must be positive".into()));
    }
    let src = planes.data();
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f32) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(src_len - 1);
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, (pos - lo as f64) as f32)
    };
    let rows: Vec<_> = (0..out_h).map(|y| axis(y, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Mean feature vector of each partition.
pub fn feature_centers(features: &Tensor, mask: &LabelMask, k: usize) -> Result<PartitionCenters> {
    let z = planes_view(features)?;
    let (c, h, w) = z.dim();
    check_mask_dims(mask, h, w)?;
    if let Some(&bad) = mask.labels.iter().find(|&&l| l >= k) {
        return Err(Error::ShapeMismatch(format!(
            "label {bad} out of range for k = {k}"
        )));
    }
    let mut sums = Array2::<f64>::zeros((k, c));
    let mut counts = vec![0usize; k];
    for row in 0..h {
        for col in 0..w {
            let label = mask.get(row, col);
            counts[label] += 1;
            for ch in 0..c {
                sums[[label, ch]] += z[[ch, row, col]] as f64;
            }
        }
    }
    for (label, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(label).mapv_inplace(|v| v / count as f64);
        }
    }
    Ok(PartitionCenters {
        centers: sums,
        populated: counts.iter().map(|&n| n > 0).collect(),
        counts,
    })
}

/// Reassigns each pixel to the populated partition whose center has the
/// largest dot product with the pixel feature; ties go to the smaller index.
pub fn refine_by_similarity(features: &Tensor, centers: &PartitionCenters) -> Result<LabelMask> {
    let z = planes_view(features)?;
    let (c, h, w) = z.dim();
    if centers.centers.ncols() != c {
        return Err(Error::ShapeMismatch(format!(
            "centers have {} channels, features have {c}",
            centers.centers.ncols()
        )));
    }
    let live: Vec<usize> = (0..centers.populated.len())
        .filter(|&k| centers.populated[k])
        .collect();
    if live.is_empty() {
        return Err(Error::NoPopulatedPartition);
    }
    let mut labels = Vec::with_capacity(h * w);
    let mut pixel = vec![0.0f64; c];
    for row in 0..h {
        for col in 0..w {
            for (ch, p) in pixel.iter_mut().enumerate() {
                *p = z[[ch, row, col]] as f64;
            }
            let scores = live.iter().map(|&k| {
                centers
                    .centers
                    .row(k)
                    .iter()
                    .zip(&pixel)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            });
            labels.push(live[argmax(scores)]);
        }
    }
    LabelMask::new(h, w, labels)
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        &[h, w] => Ok((1, h, w)),
        other => Err(Error::ShapeMismatch(format!(
            "expected C×H×W planes, got {other:?}"
        ))),
    }
}

fn planes_view(t: &Tensor) -> Result<ArrayView3<'_, f32>> {
    let dims = chw(t)?;
    Ok(ArrayView3::from_shape(dims, t.data()).expect("shape validated by Tensor"))
}

fn check_mask_dims(mask: &LabelMask, h: usize, w: usize) -> Result<()> {
    if mask.height != h || mask.width != w {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, features are {h}x{w}",
            mask.height, mask.width
        )));
    }
    Ok(())
}
