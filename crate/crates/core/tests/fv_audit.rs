use stopbed::env::convdiff::{
    mass_audit, refinement_audit, solve_forward, ConvDiffConfig, ConvDiffEnv, ConvDiffTruth,
};
use stopbed::env::Environment;
use stopbed::exec::Execution;
use stopbed::rng::stream;

#[test]
fn mass_balance_holds_per_step() {
    let cfg = ConvDiffConfig::default();
    for theta in [[0.5, 0.5], [0.1, 0.9], [0.02, 0.03]] {
        let drift = mass_audit(theta, &cfg).unwrap();
        assert!(drift <= 1e-6, "θ={theta:?}: {drift}");
    }
}

#[test]
fn refinement_error_shrinks_between_48_and_96() {
    let cfg = ConvDiffConfig::default();
    let mut rng = stream(31, &[]);
    let r = refinement_audit([0.35, 0.6], &cfg, 10, &mut rng).unwrap();
    assert!(r.ratio() >= 1.7, "{r:?}");
}

#[test]
fn zero_strength_source_stays_zero() {
    let cfg = ConvDiffConfig {
        source_strength: 0.0,
        ..Default::default()
    };
    let f = solve_forward([0.5, 0.5], &cfg).unwrap();
    assert!(f.snapshots().iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn still_fluid_field_translates_with_the_source() {
    let cfg = ConvDiffConfig {
        velocity_slope: 0.0,
        ..Default::default()
    };
    let n = cfg.fv_resolution;
    let shift = 4;
    let a = solve_forward([0.4, 0.45], &cfg).unwrap();
    let b = solve_forward([0.4 + shift as f64 / n as f64, 0.45], &cfg).unwrap();
    for k in 0..cfg.horizon {
        let (sa, sb) = (a.snapshot(k), b.snapshot(k));
        for iy in 8..40 {
            for ix in 8..36 {
                let d = (sa[iy * n + ix] - sb[iy * n + ix + shift]).abs();
                assert!(d <= 1e-3, "k={k} ({ix},{iy}): {d}");
            }
        }
    }
}

/// Prints how far the cell-centre predictions used by the belief update sit
/// from the exact forward solve for off-centre sources.
#[test]
fn nearest_cell_prediction_error_report() {
    let cfg = ConvDiffConfig {
        theta_grid: 25,
        ..Default::default()
    };
    let env = ConvDiffEnv::build(cfg.clone(), Execution::Parallel).unwrap();
    let mut rng = stream(41, &[]);
    let (mut worst, mut sq, mut count) = (0.0f64, 0.0, 0usize);
    for _ in 0..20 {
        let truth = env.sample_truth(&mut rng).unwrap();
        let ConvDiffTruth::Exact { theta, .. } = &truth else { unreachable!() };
        let cell = env.cache().grid().cell_of(*theta);
        for k in 0..cfg.horizon {
            let pos = *theta;
            let exact = env.noiseless(&truth, pos, k).unwrap();
            let approx = env.cache().predict(cell, pos, k).unwrap();
            worst = worst.max((exact - approx).abs());
            sq += (exact - approx).powi(2);
            count += 1;
        }
    }
    let rms = (sq / count as f64).sqrt();
    println!(
        "nearest-cell error at the source: rms {rms:.4}, max {worst:.4}, noise std {}",
        cfg.sensor_noise_std
    );
    assert!(rms.is_finite());
}
