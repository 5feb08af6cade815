//! Full-frame reference operators: im2col, direct convolution, ReLU,
//! max-pooling and per-pixel classification.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;
use crate::matrix::{gemm, FilterMatrix, PatchMatrix, ResultMatrix};
use crate::tensor::{FrameTensor, LabelMap, TensorDims};

/// Writes the zero-padded receptive field of output pixel `pixel` (linear
/// index on the `h_o × w_o` grid) into `col`, rows ordered `(c, j, i)`.
pub(crate) fn fill_column(
    input: &FrameTensor,
    geom: &ConvGeometry,
    out_w: usize,
    pixel: usize,
    col: &mut [f32],
) {
    let (h, w) = (input.height() as isize, input.width() as isize);
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let y0 = ((pixel / out_w) * geom.stride_h) as isize - geom.pad_h as isize;
    let x0 = ((pixel % out_w) * geom.stride_w) as isize - geom.pad_w as isize;
    let interior_x = x0 >= 0 && x0 + kw as isize <= w;

    let mut dst = col.chunks_exact_mut(kw);
    for c in 0..geom.in_channels {
        let plane = input.plane(c);
        for j in 0..kh as isize {
            let seg = dst.next().expect("column sized to patch rows");
            let y = y0 + j;
            if y < 0 || y >= h {
                seg.fill(0.0);
                continue;
            }
            let row = &plane[(y * w) as usize..((y + 1) * w) as usize];
            if interior_x {
                seg.copy_from_slice(&row[x0 as usize..x0 as usize + kw]);
            } else {
                for (i, v) in seg.iter_mut().enumerate() {
                    let x = x0 + i as isize;
                    *v = if x >= 0 && x < w { row[x as usize] } else { 0.0 };
                }
            }
        }
    }
}

fn check_input(input: &FrameTensor, geom: &ConvGeometry) -> Result<TensorDims> {
    geom.output_dims(input.dims())
}

/// Builds the full patch matrix: one column per output pixel `y_o·w_o + x_o`.
///
/// Strided geometries only materialize the columns of pixels that are
/// actually produced.
pub fn im2col_full(input: &FrameTensor, geom: &ConvGeometry) -> Result<PatchMatrix> {
    let out = check_input(input, geom)?;
    let rows = geom.patch_rows();
    let cols = out.plane_len();
    let mut data = vec![0.0f32; rows * cols];
    data.par_chunks_mut(rows)
        .enumerate()
        .for_each(|(n, col)| fill_column(input, geom, out.width, n, col));
    PatchMatrix::from_columns(rows, cols, data)
}

/// Reshapes a full-frame result matrix into planar output channels.
pub fn result_to_tensor(y: &ResultMatrix, height: usize, width: usize) -> Result<FrameTensor> {
    let n = height * width;
    if y.cols() != n {
        return Err(Error::shape(format!(
            "result has {} columns, output grid has {n} pixels",
            y.cols()
        )));
    }
    let m = y.rows();
    let mut data = vec![0.0f32; m * n];
    for (p, col) in y.data().chunks_exact(m.max(1)).enumerate().take(n) {
        for (o, &v) in col.iter().enumerate() {
            data[o * n + p] = v;
        }
    }
    FrameTensor::from_vec(TensorDims::new(m, height, width), data)
}

fn check_filter(k: &FilterMatrix, geom: &ConvGeometry) -> Result<()> {
    if k.rows() != geom.out_channels || k.cols() != geom.patch_rows() {
        return Err(Error::shape(format!(
            "filter matrix is {}x{}, geometry needs {}x{}",
            k.rows(),
            k.cols(),
            geom.out_channels,
            geom.patch_rows()
        )));
    }
    Ok(())
}

/// Full-frame convolution through im2col and GEMM.
pub fn conv_gemm(input: &FrameTensor, k: &FilterMatrix, geom: &ConvGeometry) -> Result<FrameTensor> {
    check_filter(k, geom)?;
    let out = check_input(input, geom)?;
    let x = im2col_full(input, geom)?;
    let y = gemm(k, &x)?;
    result_to_tensor(&y, out.height, out.width)
}

/// Direct nested-loop convolution (cross-correlation with zero padding).
///
/// Padding taps are accumulated as `k·0.0` rather than skipped so the
/// floating-point sequence matches [`conv_gemm`] exactly.
pub fn conv_full(input: &FrameTensor, k: &FilterMatrix, geom: &ConvGeometry) -> Result<FrameTensor> {
    check_filter(k, geom)?;
    let out = check_input(input, geom)?;
    let (h, w) = (input.height() as isize, input.width() as isize);
    let mut result = FrameTensor::zeros(out);
    let plane = out.plane_len();
    let data = result.data_mut();
    for o in 0..geom.out_channels {
        for yo in 0..out.height {
            for xo in 0..out.width {
                let mut acc = k.bias()[o];
                let mut r = 0;
                for c in 0..geom.in_channels {
                    let src = input.plane(c);
                    for j in 0..geom.kernel_h {
                        let y = (yo * geom.stride_h + j) as isize - geom.pad_h as isize;
                        for i in 0..geom.kernel_w {
                            let x = (xo * geom.stride_w + i) as isize - geom.pad_w as isize;
                            let v = if y >= 0 && y < h && x >= 0 && x < w {
                                src[(y * w + x) as usize]
                            } else {
                                0.0
                            };
                            acc += k.get(o, r) * v;
                            r += 1;
                        }
                    }
                }
                data[o * plane + yo * out.width + xo] = acc;
            }
        }
    }
    Ok(result)
}

#[inline]
pub(crate) fn relu_value(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn relu(t: &FrameTensor) -> FrameTensor {
    let mut out = t.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut FrameTensor) {
    for v in t.data_mut() {
        *v = relu_value(*v);
    }
}

/// Per-channel max over `window × window` blocks. Windows that would cross
/// the bottom or right edge are dropped.
pub fn maxpool(t: &FrameTensor, window: usize, stride: usize) -> Result<FrameTensor> {
    let out = maxpool_dims(t.dims(), window, stride)?;
    let (w, oh, ow) = (t.width(), out.height, out.width);
    let mut result = FrameTensor::zeros(out);
    result
        .data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(c, dst)| {
            let src = t.plane(c);
            for yo in 0..oh {
                for xo in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for j in 0..window {
                        let row = &src[(yo * stride + j) * w + xo * stride..][..window];
                        for &v in row {
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    dst[yo * ow + xo] = best;
                }
            }
        });
    Ok(result)
}

pub fn maxpool_dims(input: TensorDims, window: usize, stride: usize) -> Result<TensorDims> {
    if window == 0 || stride == 0 {
        return Err(Error::geometry("pooling window and stride must be at least 1"));
    }
    if window > input.height || window > input.width {
        return Err(Error::geometry(format!(
            "pooling window {window} exceeds {}x{} input",
            input.height, input.width
        )));
    }
    Ok(TensorDims::new(
        input.channels,
        (input.height - window) / stride + 1,
        (input.width - window) / stride + 1,
    ))
}

/// Per-pixel index of the largest channel; ties go to the lowest index.
pub fn argmax_classify(t: &FrameTensor) -> Result<LabelMap> {
    if t.channels() == 0 {
        return Err(Error::shape("classification needs at least one channel"));
    }
    let n = t.dims().plane_len();
    let mut best = t.plane(0).to_vec();
    let mut labels = vec![0u32; n];
    for c in 1..t.channels() {
        for ((b, l), &v) in best.iter_mut().zip(labels.iter_mut()).zip(t.plane(c)) {
            if v > *b {
                *b = v;
                *l = c as u32;
            }
        }
    }
    LabelMap::new(t.height(), t.width(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: TensorDims) -> FrameTensor {
        FrameTensor::from_vec(
            dims,
            (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_filter(rng: &mut ChaCha8Rng, geom: &ConvGeometry) -> FilterMatrix {
        let n = geom.out_channels * geom.patch_rows();
        FilterMatrix::new(
            geom,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..geom.out_channels)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    /// Receptive-field gather written straight from the coordinate formula.
    fn gather_oracle(input: &FrameTensor, geom: &ConvGeometry, yo: usize, xo: usize) -> Vec<f32> {
        let mut col = Vec::new();
        for c in 0..geom.in_channels {
            for j in 0..geom.kernel_h {
                for i in 0..geom.kernel_w {
                    let y = (yo * geom.stride_h + j) as isize - geom.pad_h as isize;
                    let x = (xo * geom.stride_w + i) as isize - geom.pad_w as isize;
                    col.push(if y < 0 || x < 0 {
                        0.0
                    } else {
                        input.get(c, y as usize, x as usize).unwrap_or(0.0)
                    });
                }
            }
        }
        col
    }

    #[test]
    fn im2col_pointwise_is_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, TensorDims::new(3, 4, 5));
        let geom = ConvGeometry::same(1, 3, 2);
        let x = im2col_full(&input, &geom).unwrap();
        assert_eq!((x.rows(), x.cols()), (3, 20));
        for n in 0..20 {
            for c in 0..3 {
                assert_eq!(x.get(c, n), input.plane(c)[n]);
            }
        }
    }

    #[test]
    fn im2col_corner_column() {
        let input =
            FrameTensor::from_vec(TensorDims::new(1, 4, 4), (1..=16).map(|v| v as f32).collect()).unwrap();
        let geom = ConvGeometry::same(3, 1, 1);
        let x = im2col_full(&input, &geom).unwrap();
        let col = x.column(0);
        assert_eq!(col, &gather_oracle(&input, &geom, 0, 0)[..]);
        assert_eq!(col, &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 5.0, 6.0]);
        assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 5);
    }

    #[test]
    fn im2col_strided_dims() {
        let input = FrameTensor::zeros(TensorDims::new(2, 5, 5));
        let geom = ConvGeometry::same(3, 2, 1).with_stride(2);
        let x = im2col_full(&input, &geom).unwrap();
        assert_eq!((x.rows(), x.cols()), (18, 9));
    }

    #[test]
    fn im2col_rejects_bad_geometry() {
        let input = FrameTensor::zeros(TensorDims::new(1, 3, 3));
        let geom = ConvGeometry::same(5, 1, 1).with_pad(0);
        assert!(matches!(im2col_full(&input, &geom), Err(Error::Geometry(_))));
        let geom = ConvGeometry::same(3, 2, 1);
        assert!(matches!(im2col_full(&input, &geom), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let geom = ConvGeometry::same(3, 2, 3);
        let k = FilterMatrix::new(&geom, vec![0.3; 54], vec![1.0, -2.0, 0.5]).unwrap();
        let out = conv_full(&FrameTensor::zeros(TensorDims::new(2, 4, 4)), &k, &geom).unwrap();
        for (o, b) in [1.0, -2.0, 0.5].into_iter().enumerate() {
            assert!(out.plane(o).iter().all(|&v| v == b));
        }
    }

    #[test]
    fn conv_scaling_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&mut rng, TensorDims::new(1, 3, 4));
        let geom = ConvGeometry::same(1, 1, 1);
        let k = FilterMatrix::new(&geom, vec![2.0], vec![0.0]).unwrap();
        let out = conv_full(&input, &k, &geom).unwrap();
        for (a, b) in out.data().iter().zip(input.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn conv_direct_matches_gemm_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&mut rng, TensorDims::new(2, 6, 6));
        let geom = ConvGeometry::same(3, 2, 3);
        let k = random_filter(&mut rng, &geom);
        let direct = conv_full(&input, &k, &geom).unwrap();
        let via_gemm = conv_gemm(&input, &k, &geom).unwrap();
        assert_eq!(direct.dims(), TensorDims::new(3, 6, 6));
        assert!(direct
            .data()
            .iter()
            .zip(via_gemm.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn oracle_equality_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let kh = rng.random_range(1..=4);
            let kw = rng.random_range(1..=4);
            let geom = ConvGeometry {
                kernel_h: kh,
                kernel_w: kw,
                stride_h: rng.random_range(1..=3),
                stride_w: rng.random_range(1..=3),
                pad_h: rng.random_range(0..kh),
                pad_w: rng.random_range(0..kw),
                in_channels: rng.random_range(1..=4),
                out_channels: rng.random_range(1..=5),
            };
            let dims = TensorDims::new(
                geom.in_channels,
                rng.random_range(kh..=8),
                rng.random_range(kw..=8),
            );
            let input = random_tensor(&mut rng, dims);
            let k = random_filter(&mut rng, &geom);
            let x = im2col_full(&input, &geom).unwrap();
            let (oh, ow) = geom.output_hw(dims.height, dims.width).unwrap();
            for n in 0..x.cols() {
                assert_eq!(x.column(n), &gather_oracle(&input, &geom, n / ow, n % ow)[..]);
            }
            let direct = conv_full(&input, &k, &geom).unwrap();
            let via_gemm = result_to_tensor(&gemm(&k, &x).unwrap(), oh, ow).unwrap();
            assert_eq!(direct.dims(), via_gemm.dims());
            assert!(direct
                .data()
                .iter()
                .zip(via_gemm.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn relu_sign_cases() {
        let d = TensorDims::new(1, 1, 3);
        let t = FrameTensor::from_vec(d, vec![-0.5, 0.0, 0.25]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 0.25]);
        let neg = FrameTensor::filled(d, -1.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = FrameTensor::filled(d, 3.0);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn maxpool_examples() {
        let t =
            FrameTensor::from_vec(TensorDims::new(1, 4, 4), (1..=16).map(|v| v as f32).collect()).unwrap();
        let p = maxpool(&t, 2, 2).unwrap();
        assert_eq!(p.dims(), TensorDims::new(1, 2, 2));
        assert_eq!(p.data(), &[6.0, 8.0, 14.0, 16.0]);
        assert_eq!(maxpool(&t, 1, 1).unwrap(), t);

        let c = FrameTensor::filled(TensorDims::new(2, 5, 7), 0.75);
        let p = maxpool(&c, 2, 2).unwrap();
        assert_eq!(p.dims(), TensorDims::new(2, 2, 3));
        assert!(p.data().iter().all(|&v| v == 0.75));

        assert!(matches!(maxpool(&t, 5, 1), Err(Error::Geometry(_))));
    }

    #[test]
    fn maxpool_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_tensor(&mut rng, TensorDims::new(3, 9, 7));
        let p = maxpool(&t, 3, 2).unwrap();
        for c in 0..3 {
            for yo in 0..p.height() {
                for xo in 0..p.width() {
                    let mut m = f32::NEG_INFINITY;
                    for j in 0..3 {
                        for i in 0..3 {
                            m = m.max(t.get(c, yo * 2 + j, xo * 2 + i).unwrap());
                        }
                    }
                    assert_eq!(p.get(c, yo, xo).unwrap(), m);
                }
            }
        }
    }

    #[test]
    fn argmax_examples() {
        let one = FrameTensor::filled(TensorDims::new(1, 2, 2), 0.3);
        assert!(argmax_classify(&one).unwrap().labels().iter().all(|&l| l == 0));

        let t = FrameTensor::from_vec(TensorDims::new(3, 1, 1), vec![0.1, 0.9, 0.3]).unwrap();
        assert_eq!(argmax_classify(&t).unwrap().labels(), &[1]);

        let tie = FrameTensor::from_vec(TensorDims::new(3, 1, 1), vec![0.7, 0.2, 0.7]).unwrap();
        assert_eq!(argmax_classify(&tie).unwrap().labels(), &[0]);
    }

    proptest! {
        #[test]
        fn conv_is_linear_without_bias(seed in 0u64..1000, a in -4.0f32..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geom = ConvGeometry::same(3, 2, 2);
            let n = geom.out_channels * geom.patch_rows();
            let k = FilterMatrix::new(
                &geom,
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                vec![0.0; 2],
            ).unwrap();
            let x = random_tensor(&mut rng, TensorDims::new(2, 5, 5));
            let mut scaled = x.clone();
            for v in scaled.data_mut() { *v *= a; }
            let lhs = conv_full(&scaled, &k, &geom).unwrap();
            let rhs = conv_full(&x, &k, &geom).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                let expected = a * r;
                prop_assert!((l - expected).abs() <= 1e-5 * expected.abs().max(1.0));
            }
        }

        #[test]
        fn unit_maxpool_is_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, TensorDims::new(2, 4, 6));
            let once = maxpool(&t, 1, 1).unwrap();
            prop_assert_eq!(&once, &t);
            prop_assert_eq!(maxpool(&once, 1, 1).unwrap(), once);
        }
    }
}
