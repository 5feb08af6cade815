use std::path::Path;
use std::time::Instant;

use cbinfer::calibrate::{
    calibrate_thresholds, log_grid, observed_input_deltas, pixel_disagreement, sweep_threshold_factor,
    Reference, ThresholdVector,
};
use cbinfer::network::{synthesize, write_weights, WeightInit};
use cbinfer::synth::{load_sequence, synth_generate, Sequence, SynthConfig};
use cbinfer::{load_network, memory_footprint, Engine, LabelMap, MemoryMode, Network, NetworkSpec};

use crate::report::{self, Table};
use crate::{
    AnalyzeArgs, CalibrateArgs, CliError, CliResult, InitKind, MemoryArgs, NetArgs, ReferenceKind, RunArgs,
    SweepArgs, SynthArgs, WeightsArgs,
};

fn load(net: &NetArgs, thresholds: Option<&[f32]>, engine: Engine) -> CliResult<Network> {
    let mut spec = NetworkSpec::from_json_file(&net.net)?;
    if let Some(t) = thresholds {
        spec.set_thresholds(t)?;
    }
    Ok(load_network(&spec, &net.weights, engine)?)
}

fn load_sequences(dirs: &[impl AsRef<Path>]) -> CliResult<Vec<Sequence>> {
    dirs.iter()
        .map(|d| load_sequence(d).map_err(CliError::from))
        .collect()
}

pub fn synth(a: &SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        height: a.height,
        width: a.width,
        channels: a.channels,
        frames: a.frames,
        sprites: a.sprites.clone(),
        noise_amplitude: a.noise,
        seed: a.seed,
    };
    let m = synth_generate(&cfg, &a.out)?;
    println!(
        "wrote {} frames of {}x{}x{} to {}",
        m.frames,
        m.channels,
        m.height,
        m.width,
        a.out.display()
    );
    Ok(())
}

pub fn weights(a: &WeightsArgs) -> CliResult {
    let spec = NetworkSpec::from_json_file(&a.net)?;
    let init = match a.init {
        InitKind::Random => WeightInit::Random { seed: a.seed },
        InitKind::Labeler => WeightInit::Labeler {
            seed: a.seed,
            split: a.split,
        },
    };
    let w = synthesize(&spec, init)?;
    write_weights(&a.out, &spec, &w)?;
    println!("wrote {} weight files to {}", w.len(), a.out.display());
    Ok(())
}

struct EngineRun {
    labels: Vec<LabelMap>,
    rows: Vec<Vec<String>>,
}

fn run_engine(net: &mut Network, seq: &Sequence, reference: Option<&[LabelMap]>) -> CliResult<EngineRun> {
    net.reset_state();
    let mut out = EngineRun {
        labels: Vec::with_capacity(seq.len()),
        rows: Vec::with_capacity(seq.len()),
    };
    for (t, frame) in seq.frames.iter().enumerate() {
        let start = Instant::now();
        let (labels, stats) = net.forward_frame(frame)?;
        let wall = start.elapsed();
        let mut row = vec![
            t.to_string(),
            net.engine().to_string(),
            wall.as_nanos().to_string(),
            stats.iter().map(|s| s.gemm_macs).sum::<u64>().to_string(),
        ];
        row.extend(stats.iter().map(|s| s.changed_input_pixels.to_string()));
        row.push(match reference {
            _ if net.engine() == Engine::Baseline => format!("{:.6}", 0.0),
            Some(r) => format!("{:.6}", pixel_disagreement(&labels, &r[t])?),
            None => String::new(),
        });
        out.rows.push(row);
        out.labels.push(labels);
    }
    Ok(out)
}

pub fn run(a: &RunArgs) -> CliResult {
    let seq = load_sequence(&a.seq)?;
    let mut net = load(&a.net, a.thresholds.as_deref(), Engine::CbInfer)?;
    let engines = match (a.engine, a.verify) {
        (Some(e), false) => vec![e],
        _ => vec![Engine::Baseline, Engine::CbInfer],
    };
    let mut table = Table::create(a.csv.as_deref(), &report::run_header(net.cbconv_count()))?;
    let mut baseline: Option<Vec<LabelMap>> = None;
    let mut cb_labels = None;
    for engine in engines {
        net.set_engine(engine);
        let run = run_engine(&mut net, &seq, baseline.as_deref())?;
        for row in run.rows {
            table.row(row)?;
        }
        match engine {
            Engine::Baseline => baseline = Some(run.labels),
            Engine::CbInfer => cb_labels = Some(run.labels),
        }
    }
    table.finish()?;

    if a.verify {
        let (base, cb) = (
            baseline.expect("both engines ran"),
            cb_labels.expect("both engines ran"),
        );
        let mut worst = 0.0f64;
        for (b, c) in base.iter().zip(&cb) {
            worst = worst.max(pixel_disagreement(c, b)?);
        }
        if net.thresholds().iter().all(|&t| t == 0.0) {
            if let Some(t) = base.iter().zip(&cb).position(|(b, c)| b != c) {
                return Err(CliError::Verify(format!(
                    "frame {t} differs from the baseline at zero thresholds ({worst:.4}% of pixels at worst)"
                )));
            }
            eprintln!("verify: all {} frames identical to the baseline", seq.len());
        } else {
            eprintln!("verify: max disagreement vs baseline {worst:.4}%");
        }
    }
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult {
    let seqs = load_sequences(&a.seq)?;
    let net = load(&a.net, None, Engine::CbInfer)?;
    if a.grid_points == 0 {
        return Err(CliError::Usage("--grid-points must be at least 1".into()));
    }
    let grid: Vec<Vec<f32>> = observed_input_deltas(&net, &seqs)?
        .into_iter()
        .map(|d| log_grid(2.0 * d, a.grid_points))
        .collect();
    let reference = match a.reference {
        ReferenceKind::Exact => Reference::ExactRun,
        ReferenceKind::Truth => Reference::GroundTruth,
    };
    let cal = calibrate_thresholds(&net, &seqs, &grid, a.budget, reference)?;
    if let Some(path) = &a.csv {
        let mut t = Table::create(Some(path), &report::CALIBRATION_HEADER)?;
        for r in &cal.table {
            t.row(report::calibration_row(r))?;
        }
        t.finish()?;
    }
    if let Some(path) = &a.out {
        let text = serde_json::to_string(&cal.thresholds).expect("thresholds serialize");
        std::fs::write(path, text + "\n").map_err(|e| cbinfer::Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    let list: Vec<String> = cal.thresholds.0.iter().map(|t| t.to_string()).collect();
    println!("{}", list.join(","));
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> CliResult {
    let seqs = load_sequences(&a.seq)?;
    let net = load(&a.net, a.thresholds.as_deref(), Engine::CbInfer)?;
    let base = ThresholdVector(net.thresholds());
    let points = sweep_threshold_factor(&net, &seqs, &base, &a.factors)?;
    let mut t = Table::create(a.csv.as_deref(), &report::SWEEP_HEADER)?;
    for p in &points {
        t.row(report::sweep_row(p))?;
    }
    t.finish()
}

pub fn analyze_propagation(a: &AnalyzeArgs) -> CliResult {
    let seq = load_sequence(&a.seq)?;
    let mut net = load(&a.net, a.thresholds.as_deref(), Engine::CbInfer)?;
    let mut t = Table::create(a.csv.as_deref(), &report::PROPAGATION_HEADER)?;
    for (n, frame) in seq.frames.iter().enumerate() {
        net.forward_frame(frame)?;
        if n == 0 {
            continue;
        }
        for s in net.propagation_analysis()? {
            t.row(report::propagation_row(n, &s))?;
        }
    }
    t.finish()
}

pub fn memory(a: &MemoryArgs) -> CliResult {
    let spec = match &a.net {
        Some(p) => NetworkSpec::from_json_file(p)?,
        None => NetworkSpec::full_scale(),
    };
    println!("mode,intermediate,patchMatrix,parameters,changeBasedExtra,total");
    for (name, mode) in [
        ("baseline-naive", MemoryMode::BaselineNaive),
        ("baseline-shared", MemoryMode::BaselineShared),
        ("cbinfer", MemoryMode::CbInfer),
    ] {
        let r = memory_footprint(&spec, mode)?;
        println!(
            "{name},{},{},{},{},{}",
            r.intermediate_values,
            r.patch_matrix_values,
            r.parameter_values,
            r.cb_extra_values,
            r.total_values
        );
    }
    Ok(())
}
