//! Filter, patch and result matrices of the im2col formulation `Y = K·X`,
//! and the GEMM that multiplies them.
//!
//! Every output element is accumulated as `bias_o + K(o,0)·X(0,n) + K(o,1)·X(1,n) + …`
//! in ascending row order, independently of tiling or thread count. The
//! direct convolution in [`crate::baseline::conv_full`] uses the same order,
//! so the two paths agree bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;

/// Row-major `|C_out| × |C_in|·h_k·w_k` filter bank plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    bias: Vec<f32>,
}

impl FilterMatrix {
    /// `kernel` holds `k(o, c, j, i)` with `o` outermost, which is exactly the
    /// row-major layout `K(o, (c·h_k + j)·w_k + i)`.
    pub fn new(geom: &ConvGeometry, kernel: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        geom.validate()?;
        let rows = geom.out_channels;
        let cols = geom.patch_rows();
        if kernel.len() != rows * cols {
            return Err(Error::shape(format!(
                "kernel has {} values, geometry needs {}",
                kernel.len(),
                rows * cols
            )));
        }
        if bias.len() != rows {
            return Err(Error::shape(format!(
                "bias has {} values, geometry needs {rows}",
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data: kernel,
            bias,
        })
    }

    /// Plain `rows × cols` matrix, for callers that are not convolutions.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols || bias.len() != rows {
            return Err(Error::shape(format!(
                "{}+{} values for a {rows}x{cols} matrix with bias",
                data.len(),
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            bias,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn get(&self, o: usize, r: usize) -> f32 {
        self.data[o * self.cols + r]
    }

    fn row(&self, o: usize) -> &[f32] {
        &self.data[o * self.cols..(o + 1) * self.cols]
    }
}

/// Column-major patch matrix: column `n` holds the receptive field of one output pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl PatchMatrix {
    pub fn from_columns(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for a {rows}x{cols} patch matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn column(&self, n: usize) -> &[f32] {
        &self.data[n * self.rows..(n + 1) * self.rows]
    }

    pub fn get(&self, r: usize, n: usize) -> f32 {
        self.data[n * self.rows + r]
    }
}

/// Column-major `|C_out| × n` product; column `n` holds every output channel of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl ResultMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, o: usize, n: usize) -> f32 {
        self.data[n * self.rows + o]
    }

    pub fn column(&self, n: usize) -> &[f32] {
        &self.data[n * self.rows..(n + 1) * self.rows]
    }
}

// Register tile: MR output channels × NR pixels.
const MR: usize = 4;
const NR: usize = 8;
// Pixels handed to one rayon task.
const COLS_PER_TASK: usize = 128;

/// `Y = K·X` with the bias folded into the accumulator's initial value.
pub fn gemm(k: &FilterMatrix, x: &PatchMatrix) -> Result<ResultMatrix> {
    if k.cols != x.rows {
        return Err(Error::shape(format!(
            "K is {}x{} but X has {} rows",
            k.rows, k.cols, x.rows
        )));
    }
    let (m, depth, n) = (k.rows, k.cols, x.cols);
    let mut y = vec![0.0f32; m * n];
    if m > 0 && n > 0 {
        y.par_chunks_mut(m * COLS_PER_TASK)
            .enumerate()
            .for_each(|(task, out)| {
                let first = task * COLS_PER_TASK;
                gemm_block(k, &x.data[first * depth..], out, out.len() / m);
            });
    }
    Ok(ResultMatrix {
        rows: m,
        cols: n,
        data: y,
    })
}

/// Computes `ncols` consecutive result columns into `out` (column-major).
fn gemm_block(k: &FilterMatrix, x: &[f32], out: &mut [f32], ncols: usize) {
    let (m, depth) = (k.rows, k.cols);
    let mut panel = vec![0.0f32; depth * NR];
    for tile in (0..ncols).step_by(NR) {
        let width = NR.min(ncols - tile);
        // Pack the tile row-major so each depth step is one NR-wide vector.
        for lane in 0..NR {
            if lane < width {
                let col = &x[(tile + lane) * depth..(tile + lane + 1) * depth];
                for (r, &v) in col.iter().enumerate() {
                    panel[r * NR + lane] = v;
                }
            } else {
                for r in 0..depth {
                    panel[r * NR + lane] = 0.0;
                }
            }
        }

        let mut o = 0;
        while o + MR <= m {
            let acc = kernel_4xnr(k, o, &panel);
            for lane in 0..width {
                let dst = &mut out[(tile + lane) * m + o..][..MR];
                for a in 0..MR {
                    dst[a] = acc[a][lane];
                }
            }
            o += MR;
        }
        while o < m {
            let acc = kernel_1xnr(k, o, &panel);
            for lane in 0..width {
                out[(tile + lane) * m + o] = acc[lane];
            }
            o += 1;
        }
    }
}

#[inline(always)]
fn kernel_4xnr(k: &FilterMatrix, o: usize, panel: &[f32]) -> [[f32; NR]; MR] {
    let mut acc = [[0.0f32; NR]; MR];
    for (a, row) in acc.iter_mut().enumerate() {
        *row = [k.bias[o + a]; NR];
    }
    let (k0, k1, k2, k3) = (k.row(o), k.row(o + 1), k.row(o + 2), k.row(o + 3));
    let rows = k0.iter().zip(k1).zip(k2).zip(k3);
    for ((((&w0, &w1), &w2), &w3), xv) in rows.zip(panel.chunks_exact(NR)) {
        for l in 0..NR {
            acc[0][l] += w0 * xv[l];
            acc[1][l] += w1 * xv[l];
            acc[2][l] += w2 * xv[l];
            acc[3][l] += w3 * xv[l];
        }
    }
    acc
}

#[inline(always)]
fn kernel_1xnr(k: &FilterMatrix, o: usize, panel: &[f32]) -> [f32; NR] {
    let mut acc = [k.bias[o]; NR];
    for (&w, xv) in k.row(o).iter().zip(panel.chunks_exact(NR)) {
        for l in 0..NR {
            acc[l] += w * xv[l];
        }
    }
    acc
}
