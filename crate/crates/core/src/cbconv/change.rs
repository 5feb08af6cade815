use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;
use crate::tensor::FrameTensor;

use super::index::ChangeIndexList;

/// Boolean per-pixel mask over one spatial grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMap {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl ChangeMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "{} bits for a {height}x{width} change map",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    /// Marks every pixel in `indices` on an otherwise clear map.
    pub fn from_indices(height: usize, width: usize, indices: &ChangeIndexList) -> Result<Self> {
        let mut map = Self::empty(height, width);
        for &p in indices.indices() {
            *map.bits
                .get_mut(p)
                .ok_or_else(|| Error::Bounds(format!("pixel index {p} outside {height}x{width} grid")))? =
                true;
        }
        Ok(map)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, j: usize, i: usize) -> bool {
        self.bits[j * self.width + i]
    }

    pub fn set(&mut self, j: usize, i: usize, value: bool) {
        self.bits[j * self.width + i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Fraction of marked pixels in `[0, 1]`.
    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// `true` when every pixel marked here is also marked in `other`.
    pub fn is_subset_of(&self, other: &ChangeMap) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Marks pixel `(j, i)` when the absolute difference between `cur` and `prev`
/// exceeds `threshold` (strictly) in any channel.
pub fn detect_changes(cur: &FrameTensor, prev: &FrameTensor, threshold: f32) -> Result<ChangeMap> {
    if cur.dims() != prev.dims() {
        return Err(Error::shape(format!(
            "current frame {} vs previous {}",
            cur.dims(),
            prev.dims()
        )));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Argument(format!("threshold {threshold} must be >= 0")));
    }
    let (h, w) = (cur.height(), cur.width());
    let mut bits = vec![false; h * w];
    if w > 0 {
        bits.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
            for c in 0..cur.channels() {
                let a = &cur.plane(c)[j * w..(j + 1) * w];
                let b = &prev.plane(c)[j * w..(j + 1) * w];
                for ((m, &x), &y) in row.iter_mut().zip(a).zip(b) {
                    *m |= (x - y).abs() > threshold;
                }
            }
        });
    }
    Ok(ChangeMap {
        height: h,
        width: w,
        bits,
    })
}

/// Maps an input-grid change map to the output pixels whose receptive field
/// contains at least one changed input.
pub fn dilate_changes(m: &ChangeMap, geom: &ConvGeometry) -> Result<ChangeMap> {
    let (oh, ow) = geom.output_hw(m.height, m.width)?;
    let mut out = ChangeMap::empty(oh, ow);
    for y in 0..m.height {
        let row = &m.bits[y * m.width..(y + 1) * m.width];
        if !row.iter().any(|&b| b) {
            continue;
        }
        let Some((ylo, yhi)) = ConvGeometry::affected_range(y, geom.kernel_h, geom.stride_h, geom.pad_h, oh)
        else {
            continue;
        };
        for (x, _) in row.iter().enumerate().filter(|(_, &b)| b) {
            let Some((xlo, xhi)) =
                ConvGeometry::affected_range(x, geom.kernel_w, geom.stride_w, geom.pad_w, ow)
            else {
                continue;
            };
            for yo in ylo..=yhi {
                out.bits[yo * ow + xlo..=yo * ow + xhi].fill(true);
            }
        }
    }
    Ok(out)
}

/// The change map the next convolution would have to assume if it skipped
/// its own change detection: every updated output pixel of this layer,
/// dilated by the next layer's support.
pub fn worst_case_propagation(
    updated: &ChangeIndexList,
    geom_next: &ConvGeometry,
    height: usize,
    width: usize,
) -> Result<ChangeMap> {
    let dense = ChangeMap::from_indices(height, width, updated)?;
    dilate_changes(&dense, geom_next)
}

/// Carries a change map through a max-pooling layer: a pooled pixel may have
/// changed if any pixel of its window did.
pub fn pool_changes(m: &ChangeMap, window: usize, stride: usize) -> Result<ChangeMap> {
    if window == 0 || stride == 0 || window > m.height || window > m.width {
        return Err(Error::geometry(format!(
            "pooling window {window}/stride {stride} invalid for {}x{} map",
            m.height, m.width
        )));
    }
    let oh = (m.height - window) / stride + 1;
    let ow = (m.width - window) / stride + 1;
    let mut out = ChangeMap::empty(oh, ow);
    for yo in 0..oh {
        for xo in 0..ow {
            out.bits[yo * ow + xo] = (0..window).any(|j| {
                let start = (yo * stride + j) * m.width + xo * stride;
                m.bits[start..start + window].iter().any(|&b| b)
            });
        }
    }
    Ok(out)
}
