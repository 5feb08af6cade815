//! Shared fixtures for the criterion benches.

use cbinfer::{ConvGeometry, FilterMatrix, FrameTensor, TensorDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_frame(dims: TensorDims, seed: u64) -> FrameTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FrameTensor::from_vec(
        dims,
        (0..dims.len()).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .expect("length matches dims")
}

pub fn random_filter(geom: &ConvGeometry, seed: u64) -> FilterMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (3.0 / geom.patch_rows() as f32).sqrt();
    let kernel = (0..geom.out_channels * geom.patch_rows())
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    FilterMatrix::new(geom, kernel, vec![0.0; geom.out_channels]).expect("sizes match geometry")
}

/// Copy of `frame` with a `size`×`size` square (all channels) raised by 0.5,
/// top-left at (`y`, `x`).
pub fn with_square(frame: &FrameTensor, y: usize, x: usize, size: usize) -> FrameTensor {
    let mut out = frame.clone();
    let d = frame.dims();
    for c in 0..d.channels {
        for j in y..(y + size).min(d.height) {
            for i in x..(x + size).min(d.width) {
                let v = out.get(c, j, i).expect("in bounds");
                out.set(c, j, i, v + 0.5).expect("in bounds");
            }
        }
    }
    out
}
