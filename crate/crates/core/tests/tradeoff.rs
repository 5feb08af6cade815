use cbinfer::calibrate::{log_grid, run_sequence, DEFAULT_BUDGET};
use cbinfer::network::{synthesize, WeightInit};
use cbinfer::synth::generate;
use cbinfer::{
    calibrate_thresholds, pixel_disagreement, pixel_error, sweep_threshold_factor, Engine, LabelMap, Network,
    NetworkSpec, Reference, Sequence, Sprite, SynthConfig, TensorDims, ThresholdVector,
};

fn labeler(side: usize, channels: usize) -> Network {
    let spec =
        NetworkSpec::scene_labeling(TensorDims::new(channels, side, side), [8, 16, 16, 8], 2, [0.0; 3]);
    let w = synthesize(
        &spec,
        WeightInit::Labeler {
            seed: 21,
            split: 0.35,
        },
    )
    .unwrap();
    Network::from_weights(spec, &w, Engine::CbInfer).unwrap()
}

fn sequence(side: usize, sprites: Vec<Sprite>, noise: f32, frames: usize, seed: u64) -> Sequence {
    generate(&SynthConfig {
        height: side,
        width: side,
        channels: 3,
        frames,
        sprites,
        noise_amplitude: noise,
        seed,
    })
    .unwrap()
}

fn sprite(size: usize, v: (i64, i64), start: (usize, usize)) -> Sprite {
    Sprite {
        size,
        velocity: v,
        intensity: 0.9,
        start: Some(start),
    }
}

#[test]
fn disagreement_counts() {
    let a = LabelMap::filled(10, 10, 0);
    let mut labels = vec![0; 100];
    labels[37] = 2;
    let b = LabelMap::new(10, 10, labels).unwrap();
    assert_eq!(pixel_disagreement(&a, &a).unwrap(), 0.0);
    assert_eq!(pixel_disagreement(&a, &b).unwrap(), 1.0);
    assert_eq!(
        pixel_disagreement(&a, &LabelMap::filled(10, 10, 1)).unwrap(),
        100.0
    );
    assert_eq!(pixel_error(&b, &a).unwrap(), 1.0);
    assert!(pixel_error(&a, &LabelMap::filled(10, 5, 0)).is_err());
}

#[test]
fn factor_zero_reproduces_the_reference_run() {
    let mut net = labeler(48, 3);
    let seq = sequence(48, vec![sprite(8, (1, 1), (5, 5))], 0.02, 6, 3);
    let full = net.full_frame_cb_macs();
    let pts = sweep_threshold_factor(
        &net,
        std::slice::from_ref(&seq),
        &ThresholdVector(vec![0.1; 3]),
        &[0.0],
    )
    .unwrap();
    assert_eq!(pts[0].error_increase, 0.0);
    // Noise reaches every pixel and the positive filters pass every change on.
    assert_eq!(pts[0].macs_total, full * 5);

    net.set_thresholds(&[0.0; 3]).unwrap();
    let cb = run_sequence(&mut net, &seq).unwrap();
    net.set_engine(Engine::Baseline);
    let base = run_sequence(&mut net, &seq).unwrap();
    assert_eq!(cb.labels, base.labels);
    assert!(cb.macs.iter().all(|&m| m == full));
}

#[test]
fn changed_pixels_fall_with_the_factor() {
    let net = labeler(48, 3);
    let seqs: Vec<Sequence> = (0..3)
        .map(|k| {
            sequence(
                48,
                vec![sprite(10, (1, 2), (4, 4)), sprite(6, (2, -1), (30, 30))],
                0.03,
                8,
                90 + k,
            )
        })
        .collect();
    let factors = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0];
    let pts =
        sweep_threshold_factor(&net, &seqs, &ThresholdVector(vec![0.05, 0.05, 0.05]), &factors).unwrap();
    for s in 0..seqs.len() {
        let changed: Vec<u64> = pts
            .iter()
            .filter(|p| p.sequence == s)
            .map(|p| p.changed_pixels_total)
            .collect();
        assert_eq!(changed.len(), factors.len());
        assert!(
            changed.windows(2).all(|w| w[1] <= w[0]),
            "sequence {s}: {changed:?}"
        );
    }
}

#[test]
fn low_motion_factor_one_needs_few_macs_and_runs_faster() {
    let net = labeler(96, 3);
    let seq = sequence(96, vec![sprite(8, (1, 1), (20, 20))], 0.02, 12, 5);
    let moving = seq
        .frames
        .windows(2)
        .map(|w| cbinfer::detect_changes(&w[1], &w[0], 0.1).unwrap().fraction())
        .fold(0.0, f64::max);
    assert!(moving <= 0.02, "{moving}");
    let base = ThresholdVector(vec![0.1, 0.1, 0.1]);
    let pts = sweep_threshold_factor(&net, std::slice::from_ref(&seq), &base, &[0.0, 1.0]).unwrap();
    let (f0, f1) = (&pts[0], &pts[1]);
    assert!(
        f1.macs_total * 100 <= f1.full_macs_total * 15,
        "{} of {}",
        f1.macs_total,
        f1.full_macs_total
    );
    assert!(f0.frames_per_second < f1.frames_per_second);
}

#[test]
fn busy_scene_gains_less_than_sparse_scene() {
    let net = labeler(64, 3);
    let sparse = sequence(64, vec![sprite(6, (1, 1), (10, 10))], 0.0, 10, 7);
    let busy_sprites = (0..8)
        .map(|k| sprite(14, (if k % 2 == 0 { 1 } else { -1 }, 2), (4 + 6 * k, 2 + 5 * k)))
        .collect();
    let busy = sequence(64, busy_sprites, 0.0, 10, 8);
    let base = ThresholdVector(vec![0.1, 0.1, 0.1]);
    let gain = |seq: &Sequence| {
        let pts = sweep_threshold_factor(&net, std::slice::from_ref(seq), &base, &[1.0]).unwrap();
        pts[0].full_macs_total as f64 / pts[0].macs_total.max(1) as f64
    };
    let (gs, gb) = (gain(&sparse), gain(&busy));
    assert!(gs > 2.0 * gb, "sparse {gs:.1}x, busy {gb:.1}x");
}

#[test]
fn calibration_matches_an_exhaustive_resweep() {
    let net = labeler(32, 3);
    let seqs = vec![sequence(32, vec![sprite(10, (1, 1), (3, 3))], 0.02, 5, 17)];
    let grid: Vec<Vec<f32>> = (0..3).map(|_| log_grid(1.0, 4)).collect();
    let cal = calibrate_thresholds(&net, &seqs, &grid, DEFAULT_BUDGET, Reference::ExactRun).unwrap();

    let mut exact = net.clone();
    let reference = run_sequence(&mut exact, &seqs[0]).unwrap().labels;
    let error = |t: &[f32]| {
        let mut n = net.clone();
        n.set_thresholds(t).unwrap();
        let labels = run_sequence(&mut n, &seqs[0]).unwrap().labels;
        labels[1..]
            .iter()
            .zip(&reference[1..])
            .map(|(a, b)| pixel_disagreement(a, b).unwrap())
            .sum::<f64>()
            / 4.0
    };
    let mut chosen = vec![0.0f32; 3];
    for layer in 0..3 {
        let mut best = 0.0f32;
        for &tau in &grid[layer] {
            let mut t = chosen.clone();
            t[layer] = tau;
            if error(&t) <= DEFAULT_BUDGET {
                best = best.max(tau);
            }
        }
        chosen[layer] = best;
    }
    assert_eq!(cal.thresholds.0, chosen);
}

#[test]
fn ground_truth_reference_measures_against_the_generator_labels() {
    let net = labeler(32, 3);
    let seqs = vec![sequence(32, vec![sprite(12, (1, 1), (3, 3))], 0.0, 5, 2)];
    let cal = calibrate_thresholds(
        &net,
        &seqs,
        &[vec![0.0, 0.5], vec![0.0], vec![0.0]],
        5.0,
        Reference::GroundTruth,
    )
    .unwrap();
    // Zero thresholds reproduce the exact labels, so their increase is zero.
    assert_eq!(cal.table[0].error_increase, 0.0);
    assert!(cal.table.iter().all(|r| r.error_increase.is_finite()));
}
