//! Threshold calibration, accuracy metrics and the threshold-factor sweep.
//!
//! Errors are pixel disagreement percentages averaged over every frame of a
//! sequence except the first (which is always evaluated in full), then
//! averaged over sequences.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::synth::Sequence;
use crate::tensor::LabelMap;

/// Default calibration budget, in percentage points of pixel error.
pub const DEFAULT_BUDGET: f64 = 0.1;
pub const DEFAULT_GRID_POINTS: usize = 16;
pub const GRID_LOW: f32 = 1e-3;

/// Per-CBCONV-layer thresholds, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(pub Vec<f32>);

impl ThresholdVector {
    pub fn scaled(&self, factor: f32) -> Self {
        ThresholdVector(self.0.iter().map(|t| t * factor).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Percentage of pixels whose labels differ.
pub fn pixel_disagreement(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(format!(
            "label maps are {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let n = a.labels().len();
    if n == 0 {
        return Ok(0.0);
    }
    let differ = a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count();
    Ok(100.0 * differ as f64 / n as f64)
}

/// Pixel error of `pred` against ground truth, in percent.
pub fn pixel_error(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    pixel_disagreement(pred, truth)
}

/// Nearest-neighbour resampling of a label map onto a `height`×`width` grid,
/// sampling the centre of each target cell.
pub fn resample_labels(labels: &LabelMap, height: usize, width: usize) -> Result<LabelMap> {
    if height == 0 || width == 0 {
        return Err(Error::shape("cannot resample to an empty grid"));
    }
    let (h, w) = (labels.height(), labels.width());
    let mut out = Vec::with_capacity(height * width);
    for j in 0..height {
        let sj = ((2 * j + 1) * h / (2 * height)).min(h - 1);
        for i in 0..width {
            let si = ((2 * i + 1) * w / (2 * width)).min(w - 1);
            out.push(labels.get(sj, si));
        }
    }
    LabelMap::new(height, width, out)
}

/// What calibration errors are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reference {
    /// Labels of the same network run with every threshold at zero, which
    /// is exactly the full-frame result.
    #[default]
    ExactRun,
    /// The sequences' ground-truth labels, resampled to the output grid.
    GroundTruth,
}

/// Labels, counters and wall time of one pass over a sequence.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub labels: Vec<LabelMap>,
    pub changed_pixels: Vec<usize>,
    pub macs: Vec<u64>,
    pub wall: Vec<Duration>,
}

/// Runs `seq` from a cleared state and records per-frame results.
pub fn run_sequence(net: &mut Network, seq: &Sequence) -> Result<SequenceRun> {
    net.reset_state();
    let mut run = SequenceRun {
        labels: Vec::with_capacity(seq.len()),
        changed_pixels: Vec::with_capacity(seq.len()),
        macs: Vec::with_capacity(seq.len()),
        wall: Vec::with_capacity(seq.len()),
    };
    for frame in &seq.frames {
        let start = Instant::now();
        let (labels, stats) = net.forward_frame(frame)?;
        run.wall.push(start.elapsed());
        run.labels.push(labels);
        run.changed_pixels
            .push(stats.iter().map(|s| s.changed_input_pixels).sum());
        run.macs.push(stats.iter().map(|s| s.gemm_macs).sum());
    }
    Ok(run)
}

fn check_sequences(sequences: &[Sequence]) -> Result<()> {
    if sequences.is_empty() {
        return Err(Error::Argument("no sequences given".into()));
    }
    if sequences.iter().any(|s| s.len() < 2) {
        return Err(Error::Argument("every sequence needs at least two frames".into()));
    }
    Ok(())
}

/// Mean disagreement over frames `1..` of a run against per-frame references.
fn run_error(labels: &[LabelMap], reference: &[LabelMap]) -> Result<f64> {
    let mut sum = 0.0;
    for (a, b) in labels.iter().zip(reference).skip(1) {
        sum += pixel_disagreement(a, b)?;
    }
    Ok(sum / (labels.len() - 1) as f64)
}

fn references(net: &Network, sequences: &[Sequence], reference: Reference) -> Result<Vec<Vec<LabelMap>>> {
    match reference {
        Reference::ExactRun => {
            let mut exact = net.clone();
            exact.set_thresholds(&vec![0.0; net.cbconv_count()])?;
            sequences
                .iter()
                .map(|s| run_sequence(&mut exact, s).map(|r| r.labels))
                .collect()
        }
        Reference::GroundTruth => {
            let out = net.shape_chain().last().copied().expect("non-empty chain");
            sequences
                .iter()
                .map(|s| {
                    let gt = s
                        .ground_truth
                        .as_ref()
                        .ok_or_else(|| Error::Argument("sequence has no ground truth".into()))?;
                    gt.iter()
                        .map(|l| resample_labels(l, out.height, out.width))
                        .collect()
                })
                .collect()
        }
    }
}

/// Mean error of `net` over `sequences` with the given thresholds.
fn mean_error(net: &mut Network, sequences: &[Sequence], refs: &[Vec<LabelMap>]) -> Result<f64> {
    let mut sum = 0.0;
    for (s, r) in sequences.iter().zip(refs) {
        sum += run_error(&run_sequence(net, s)?.labels, r)?;
    }
    Ok(sum / sequences.len() as f64)
}

/// Largest absolute frame-to-frame change seen at each CBCONV layer's input
/// when the sequences run exactly.
pub fn observed_input_deltas(net: &Network, sequences: &[Sequence]) -> Result<Vec<f32>> {
    let mut exact = net.clone();
    exact.set_thresholds(&vec![0.0; net.cbconv_count()])?;
    let mut deltas = vec![0.0f32; net.cbconv_count()];
    for seq in sequences {
        exact.reset_state();
        for frame in &seq.frames {
            let before: Vec<_> = exact.cb_states().map(|s| s.previous_input().cloned()).collect();
            exact.forward_frame(frame)?;
            for ((d, prev), state) in deltas.iter_mut().zip(&before).zip(exact.cb_states()) {
                if let (Some(prev), Some(now)) = (prev, state.previous_input()) {
                    *d = d.max(crate::tensor::max_abs_diff(prev, now)?);
                }
            }
        }
    }
    Ok(deltas)
}

/// `points` log-spaced values from [`GRID_LOW`] up to `high`.
pub fn log_grid(high: f32, points: usize) -> Vec<f32> {
    let high = high.max(2.0 * GRID_LOW);
    if points < 2 {
        return vec![high];
    }
    let (lo, hi) = (GRID_LOW.ln(), high.ln());
    (0..points)
        .map(|k| (lo + (hi - lo) * k as f32 / (points - 1) as f32).exp())
        .collect()
}

/// Per-layer candidate grids reaching twice the largest observed input change.
pub fn default_grid(net: &Network, sequences: &[Sequence]) -> Result<Vec<Vec<f32>>> {
    check_sequences(sequences)?;
    Ok(observed_input_deltas(net, sequences)?
        .into_iter()
        .map(|d| log_grid(2.0 * d, DEFAULT_GRID_POINTS))
        .collect())
}

/// One evaluated candidate of the layer-by-layer search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationRow {
    pub layer: usize,
    pub threshold: f32,
    pub error_increase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: ThresholdVector,
    pub table: Vec<CalibrationRow>,
}

/// Chooses thresholds one CBCONV layer at a time: earlier layers keep their
/// chosen values, later ones stay at zero, and each layer takes the largest
/// grid value whose error increase is within `budget`. A layer with no
/// admissible value gets zero.
pub fn calibrate_thresholds(
    net: &Network,
    sequences: &[Sequence],
    grid: &[Vec<f32>],
    budget: f64,
    reference: Reference,
) -> Result<Calibration> {
    check_sequences(sequences)?;
    let layers = net.cbconv_count();
    if grid.len() != layers {
        return Err(Error::Argument(format!(
            "grid has {} layer entries for {layers} change-based layers",
            grid.len()
        )));
    }
    if grid.iter().flatten().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::Argument("grid thresholds must be >= 0".into()));
    }
    if budget.is_nan() || budget < 0.0 {
        return Err(Error::Argument("error budget must be >= 0".into()));
    }
    let refs = references(net, sequences, reference)?;
    let mut work = net.clone();
    let mut chosen = vec![0.0f32; layers];
    work.set_thresholds(&chosen)?;
    let base = match reference {
        Reference::ExactRun => 0.0,
        Reference::GroundTruth => mean_error(&mut work, sequences, &refs)?,
    };
    let mut table = Vec::new();
    for layer in 0..layers {
        let mut best = 0.0f32;
        for &tau in &grid[layer] {
            let mut trial = chosen.clone();
            trial[layer] = tau;
            work.set_thresholds(&trial)?;
            let error_increase = mean_error(&mut work, sequences, &refs)? - base;
            table.push(CalibrationRow {
                layer,
                threshold: tau,
                error_increase,
            });
            if error_increase <= budget && tau > best {
                best = tau;
            }
        }
        chosen[layer] = best;
    }
    Ok(Calibration {
        thresholds: ThresholdVector(chosen),
        table,
    })
}

/// One (sequence, factor) point of the accuracy/throughput trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TradeoffPoint {
    pub sequence: usize,
    pub threshold_factor: f32,
    /// Signed, in percentage points, against the exact run.
    pub error_increase: f64,
    /// Detected changed input pixels summed over layers and frames `1..`.
    pub changed_pixels_total: u64,
    /// Frames `1..` per second of wall time.
    pub frames_per_second: f64,
    /// CBCONV multiply-accumulates summed over frames `1..`.
    pub macs_total: u64,
    /// What `macs_total` would be if every frame were evaluated in full.
    pub full_macs_total: u64,
}

/// Scales `base` by each factor and measures every sequence. The first
/// frame of each sequence is a warm-up and is left out of all totals.
pub fn sweep_threshold_factor(
    net: &Network,
    sequences: &[Sequence],
    base: &ThresholdVector,
    factors: &[f32],
) -> Result<Vec<TradeoffPoint>> {
    check_sequences(sequences)?;
    if factors.iter().any(|f| f.is_nan() || *f < 0.0) {
        return Err(Error::Argument("threshold factors must be >= 0".into()));
    }
    let refs = references(net, sequences, Reference::ExactRun)?;
    let mut work = net.clone();
    let full = work.full_frame_cb_macs();
    let mut points = Vec::with_capacity(sequences.len() * factors.len());
    for (n, (seq, reference)) in sequences.iter().zip(&refs).enumerate() {
        for &factor in factors {
            work.set_thresholds(base.scaled(factor).as_slice())?;
            let run = run_sequence(&mut work, seq)?;
            let frames = seq.len() - 1;
            let wall: Duration = run.wall[1..].iter().sum();
            points.push(TradeoffPoint {
                sequence: n,
                threshold_factor: factor,
                error_increase: run_error(&run.labels, reference)?,
                changed_pixels_total: run.changed_pixels[1..].iter().map(|&c| c as u64).sum(),
                frames_per_second: frames as f64 / wall.as_secs_f64().max(1e-9),
                macs_total: run.macs[1..].iter().sum(),
                full_macs_total: full * frames as u64,
            });
        }
    }
    Ok(points)
}
