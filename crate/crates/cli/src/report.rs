//! CSV tables written by the subcommands.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use cbinfer::calibrate::{CalibrationRow, TradeoffPoint};
use cbinfer::network::PropagationSample;

use crate::{CliError, CliResult};

/// Column order of the sweep table. The first five mirror the trade-off
/// plot fields; `sequence` identifies which input a row belongs to.
pub const SWEEP_HEADER: [&str; 6] = [
    "factor",
    "errorIncrease",
    "numChangeTotal",
    "throughput",
    "macsTotal",
    "sequence",
];

pub const CALIBRATION_HEADER: [&str; 3] = ["layer", "threshold", "errorIncrease"];

pub const PROPAGATION_HEADER: [&str; 7] = [
    "frameIndex",
    "layer",
    "outputPixels",
    "detected",
    "worstCase",
    "detectedFraction",
    "worstCaseFraction",
];

pub struct Table {
    writer: csv::Writer<Box<dyn Write>>,
    name: String,
}

impl Table {
    /// Opens `path`, or stdout when `None`, and writes the header.
    pub fn create<S: AsRef<str>>(path: Option<&Path>, header: &[S]) -> CliResult<Self> {
        let (sink, name): (Box<dyn Write>, String) = match path {
            Some(p) => {
                let f = File::create(p).map_err(|e| cbinfer::Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                (Box::new(io::BufWriter::new(f)), p.display().to_string())
            }
            None => (Box::new(io::stdout()), "<stdout>".into()),
        };
        let mut t = Table {
            writer: csv::Writer::from_writer(sink),
            name,
        };
        t.row(header.iter().map(|h| h.as_ref().to_string()))?;
        Ok(t)
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> CliResult {
        self.writer.write_record(fields).map_err(|source| CliError::Csv {
            path: self.name.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> CliResult {
        self.writer.flush().map_err(|e| CliError::Csv {
            path: self.name.clone(),
            source: e.into(),
        })
    }
}

/// Header of the per-frame run report for a network with `layers` CBCONV layers.
pub fn run_header(layers: usize) -> Vec<String> {
    let mut h: Vec<String> = ["frameIndex", "engine", "wallNanos", "macsTotal"]
        .map(String::from)
        .into();
    h.extend((0..layers).map(|l| format!("changedL{l}")));
    h.push("disagreement".into());
    h
}

pub fn sweep_row(p: &TradeoffPoint) -> Vec<String> {
    vec![
        p.threshold_factor.to_string(),
        format!("{:.6}", p.error_increase),
        p.changed_pixels_total.to_string(),
        format!("{:.3}", p.frames_per_second),
        p.macs_total.to_string(),
        p.sequence.to_string(),
    ]
}

pub fn calibration_row(r: &CalibrationRow) -> Vec<String> {
    vec![
        r.layer.to_string(),
        r.threshold.to_string(),
        format!("{:.6}", r.error_increase),
    ]
}

pub fn propagation_row(frame: usize, s: &PropagationSample) -> Vec<String> {
    let px = s.output_pixels.max(1) as f64;
    vec![
        frame.to_string(),
        s.cb_index.to_string(),
        s.output_pixels.to_string(),
        s.detected.to_string(),
        s.worst_case.to_string(),
        format!("{:.6}", s.detected as f64 / px),
        format!("{:.6}", s.worst_case as f64 / px),
    ]
}
