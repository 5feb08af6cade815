use rayon::prelude::*;

use crate::error::{Error, Result};

use super::change::ChangeMap;

/// Pixels scanned per independent extraction block (the area of a 16×16 tile).
pub const EXTRACT_BLOCK: usize = 256;

/// Strictly ascending linear indices of changed output pixels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChangeIndexList {
    indices: Vec<usize>,
}

impl ChangeIndexList {
    /// Every pixel of an `n`-pixel grid.
    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    /// Validates ordering and bounds against a grid of `grid_len` pixels.
    pub fn from_sorted(indices: Vec<usize>, grid_len: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(
                "change indices must be strictly ascending".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= grid_len {
                return Err(Error::Bounds(format!(
                    "change index {last} outside a {grid_len}-pixel grid"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Condenses a change map into the ascending list of its set pixels.
///
/// The map is cut into runs of [`EXTRACT_BLOCK`] consecutive pixels. Blocks
/// are counted in parallel, an exclusive prefix sum assigns each block its
/// output offset, and blocks then write their indices in parallel. Runs are
/// contiguous in linear order, so concatenation preserves global ordering.
pub fn extract_indexes(m: &ChangeMap) -> ChangeIndexList {
    let bits = m.bits();
    let counts: Vec<usize> = bits
        .par_chunks(EXTRACT_BLOCK)
        .map(|block| block.iter().filter(|&&b| b).count())
        .collect();
    let total = counts.iter().sum();
    let mut indices = vec![0usize; total];

    let mut slots = Vec::with_capacity(counts.len());
    let mut rest = indices.as_mut_slice();
    for &c in &counts {
        let (head, tail) = rest.split_at_mut(c);
        slots.push(head);
        rest = tail;
    }
    slots
        .into_par_iter()
        .zip(bits.par_chunks(EXTRACT_BLOCK))
        .enumerate()
        .for_each(|(block, (dst, src))| {
            let base = block * EXTRACT_BLOCK;
            let set = src.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| base + i);
            for (slot, idx) in dst.iter_mut().zip(set) {
                *slot = idx;
            }
        });
    ChangeIndexList { indices }
}
