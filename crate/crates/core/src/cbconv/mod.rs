//! Change-based convolution.
//!
//! A [`CbConvState`] remembers the input and output of its previous frame.
//! For each new frame it detects which input pixels moved by more than the
//! layer threshold, marks the output pixels whose receptive fields contain
//! them, and recomputes only those columns of the im2col product before
//! patching them into a copy of the previous output.

mod change;
mod index;

use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use change::{detect_changes, dilate_changes, pool_changes, worst_case_propagation, ChangeMap};
pub use index::{extract_indexes, ChangeIndexList, EXTRACT_BLOCK};

use crate::baseline::{fill_column, relu_value};
use crate::error::{Error, Result};
use crate::geometry::ConvGeometry;
use crate::matrix::{gemm, FilterMatrix, PatchMatrix, ResultMatrix};
use crate::tensor::{FrameTensor, TensorDims};

/// Gathers the im2col columns of the listed output pixels only.
pub fn gen_x_reduced(input: &FrameTensor, idx: &ChangeIndexList, geom: &ConvGeometry) -> Result<PatchMatrix> {
    let out = geom.output_dims(input.dims())?;
    if let Some(&last) = idx.indices().last() {
        if last >= out.plane_len() {
            return Err(Error::Bounds(format!(
                "output pixel {last} outside {}x{} grid",
                out.height, out.width
            )));
        }
    }
    let rows = geom.patch_rows();
    let mut data = vec![0.0f32; rows * idx.count()];
    data.par_chunks_mut(rows.max(1))
        .zip(idx.indices().par_iter())
        .for_each(|(col, &pixel)| fill_column(input, geom, out.width, pixel, col));
    PatchMatrix::from_columns(rows, idx.count(), data)
}

/// Copies `prev_out` and overwrites the listed pixels of every channel with
/// the matching column of `y`, optionally through ReLU.
pub fn update_output(
    prev_out: &FrameTensor,
    y: &ResultMatrix,
    idx: &ChangeIndexList,
    fuse_relu: bool,
) -> Result<FrameTensor> {
    let mut out = prev_out.clone();
    update_output_in_place(&mut out, y, idx, fuse_relu)?;
    Ok(out)
}

fn update_output_in_place(
    out: &mut FrameTensor,
    y: &ResultMatrix,
    idx: &ChangeIndexList,
    fuse_relu: bool,
) -> Result<()> {
    if y.cols() != idx.count() || y.rows() != out.channels() {
        return Err(Error::shape(format!(
            "result {}x{} does not match {} channels and {} changed pixels",
            y.rows(),
            y.cols(),
            out.channels(),
            idx.count()
        )));
    }
    let plane = out.dims().plane_len();
    if idx.indices().last().is_some_and(|&p| p >= plane) {
        return Err(Error::Bounds(format!(
            "changed pixel outside {}x{} output",
            out.height(),
            out.width()
        )));
    }
    let rows = y.rows();
    out.data_mut()
        .par_chunks_mut(plane.max(1))
        .enumerate()
        .for_each(|(o, dst)| {
            for (n, &p) in idx.indices().iter().enumerate() {
                let v = y.data()[n * rows + o];
                dst[p] = if fuse_relu { relu_value(v) } else { v };
            }
        });
    Ok(())
}

/// Wall-clock time spent in each processing step of one layer on one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepTimings {
    /// Change detection including dilation onto the output grid.
    pub detect: Duration,
    pub extract: Duration,
    pub gen_x: Duration,
    pub gemm: Duration,
    pub update: Duration,
}

impl StepTimings {
    pub fn total(&self) -> Duration {
        self.detect + self.extract + self.gen_x + self.gemm + self.update
    }
}

/// Per-frame counters of one change-based layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerStats {
    pub changed_input_pixels: usize,
    pub changed_output_pixels: usize,
    /// Output pixels on the layer's grid, for turning counts into fractions.
    pub output_pixels: usize,
    pub gemm_macs: u64,
    pub steps: StepTimings,
}

#[derive(Debug, Clone)]
struct History {
    input: FrameTensor,
    output: FrameTensor,
}

struct Stopwatch {
    enabled: bool,
    last: Option<Instant>,
}

impl Stopwatch {
    fn start(enabled: bool) -> Self {
        Self {
            enabled,
            last: enabled.then(Instant::now),
        }
    }

    fn lap(&mut self) -> Duration {
        if !self.enabled {
            return Duration::ZERO;
        }
        let now = Instant::now();
        let elapsed = self.last.map_or(Duration::ZERO, |t| now - t);
        self.last = Some(now);
        elapsed
    }
}

/// Stored state of one change-based convolution layer.
#[derive(Debug, Clone)]
pub struct CbConvState {
    geom: ConvGeometry,
    filter: FilterMatrix,
    threshold: f32,
    fuse_relu: bool,
    instrument: bool,
    history: Option<History>,
    last_detected: Option<ChangeMap>,
    last_updated: ChangeIndexList,
}

impl CbConvState {
    pub fn new(geom: ConvGeometry, filter: FilterMatrix, threshold: f32, fuse_relu: bool) -> Result<Self> {
        geom.validate()?;
        if filter.rows() != geom.out_channels || filter.cols() != geom.patch_rows() {
            return Err(Error::shape(format!(
                "filter matrix is {}x{}, geometry needs {}x{}",
                filter.rows(),
                filter.cols(),
                geom.out_channels,
                geom.patch_rows()
            )));
        }
        check_threshold(threshold)?;
        Ok(Self {
            geom,
            filter,
            threshold,
            fuse_relu,
            instrument: true,
            history: None,
            last_detected: None,
            last_updated: ChangeIndexList::default(),
        })
    }

    /// Disables step timing; counters are still collected.
    pub fn with_instrumentation(mut self, enabled: bool) -> Self {
        self.instrument = enabled;
        self
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geom
    }

    pub fn filter(&self) -> &FilterMatrix {
        &self.filter
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn fuse_relu(&self) -> bool {
        self.fuse_relu
    }

    pub fn set_threshold(&mut self, threshold: f32) -> Result<()> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(())
    }

    pub fn set_instrumentation(&mut self, enabled: bool) {
        self.instrument = enabled;
    }

    pub fn has_history(&self) -> bool {
        self.history.is_some()
    }

    pub fn previous_input(&self) -> Option<&FrameTensor> {
        self.history.as_ref().map(|h| &h.input)
    }

    pub fn previous_output(&self) -> Option<&FrameTensor> {
        self.history.as_ref().map(|h| &h.output)
    }

    /// Input pixels flagged by change detection on the most recent frame.
    pub fn last_detected(&self) -> Option<&ChangeMap> {
        self.last_detected.as_ref()
    }

    /// Output pixels recomputed on the most recent frame.
    pub fn last_updated(&self) -> &ChangeIndexList {
        &self.last_updated
    }

    /// Forgets the stored frame; the next call evaluates the full frame.
    pub fn reset(&mut self) {
        self.history = None;
        self.last_detected = None;
        self.last_updated = ChangeIndexList::default();
    }

    pub fn output_dims(&self, input: TensorDims) -> Result<TensorDims> {
        self.geom.output_dims(input)
    }

    /// Processes one frame. The first frame after construction or
    /// [`reset`](Self::reset) treats every output pixel as changed.
    pub fn forward(&mut self, input: &FrameTensor) -> Result<(FrameTensor, LayerStats)> {
        let out_dims = self.geom.output_dims(input.dims())?;
        let mut clock = Stopwatch::start(self.instrument);
        let mut steps = StepTimings::default();

        let (detected, idx, base) = match &self.history {
            None => {
                let detected = ChangeMap::full(input.height(), input.width());
                steps.detect = clock.lap();
                let idx = ChangeIndexList::all(out_dims.plane_len());
                steps.extract = clock.lap();
                (detected, idx, FrameTensor::zeros(out_dims))
            }
            Some(h) => {
                let detected = detect_changes(input, &h.input, self.threshold)?;
                let marked = dilate_changes(&detected, &self.geom)?;
                steps.detect = clock.lap();
                let idx = extract_indexes(&marked);
                steps.extract = clock.lap();
                (detected, idx, h.output.clone())
            }
        };

        let x = gen_x_reduced(input, &idx, &self.geom)?;
        steps.gen_x = clock.lap();
        let y = gemm(&self.filter, &x)?;
        steps.gemm = clock.lap();
        let mut output = base;
        update_output_in_place(&mut output, &y, &idx, self.fuse_relu)?;
        steps.update = clock.lap();

        let stats = LayerStats {
            changed_input_pixels: detected.count(),
            changed_output_pixels: idx.count(),
            output_pixels: out_dims.plane_len(),
            gemm_macs: (self.filter.rows() * self.filter.cols() * idx.count()) as u64,
            steps,
        };
        self.history = Some(History {
            input: input.clone(),
            output: output.clone(),
        });
        self.last_detected = Some(detected);
        self.last_updated = idx;
        Ok((output, stats))
    }
}

fn check_threshold(threshold: f32) -> Result<()> {
    if threshold >= 0.0 && threshold.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "threshold {threshold} must be finite and >= 0"
        )))
    }
}

/// Runs one frame through a change-based layer.
pub fn cbconv_forward(state: &mut CbConvState, input: &FrameTensor) -> Result<(FrameTensor, LayerStats)> {
    state.forward(input)
}
