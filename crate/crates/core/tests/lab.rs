use ricker_core::deterministic::fixed_points;
use ricker_core::lab::{
    ar_approximation, covariance_ratios, fit_records, qsd_record, sweep_k, QsdMethod, SweepOptions,
    SweepRecord,
};
use ricker_core::rng::RngStreams;
use ricker_core::ModelParams;

fn matrix_sweep(r: f64, ks: &[f64]) -> Vec<SweepRecord> {
    let base = ModelParams::with_equal_k(r, r, ks[0], 0.5, 0.5).unwrap();
    let opts = SweepOptions {
        method: QsdMethod::Matrix,
        ..Default::default()
    };
    sweep_k(&base, ks, &opts, &RngStreams::new(1))
        .unwrap()
        .into_iter()
        .map(|o| o.record.unwrap())
        .collect()
}

#[test]
fn box_captures_growing_share_of_the_qsd() {
    let recs = matrix_sweep(1.0, &[0.2, 0.15, 0.1, 0.075]);
    let boxed: Vec<f64> = recs.iter().map(|r| r.tightness.unwrap().box_mass).collect();
    assert!(boxed.windows(2).all(|w| w[1] > w[0]), "{boxed:?}");
    assert!(boxed[2] >= 0.95 && boxed[3] >= 0.95, "{boxed:?}");
    for r in &recs {
        let t = r.tightness.unwrap();
        assert!((t.total() - 1.0).abs() < 1e-12);
        assert!((t.mass_outside - (1.0 - t.box_mass)).abs() < 1e-12);
    }
}

#[test]
fn ar_prediction_tracks_measured_spread() {
    let recs = matrix_sweep(1.2, &[0.3, 0.2, 0.15, 0.1]);
    let traces: Vec<f64> = recs
        .iter()
        .map(|r| {
            let ar = ar_approximation(&r.params).unwrap();
            covariance_ratios(&r.qsd_cov, &ar.stationary_cov)[2]
        })
        .collect();
    assert!(traces.windows(2).all(|w| w[1] > w[0]), "{traces:?}");
    let last = *traces.last().unwrap();
    assert!((0.5..=2.0).contains(&last), "{last}");
}

#[test]
fn auto_method_switches_to_particles_past_the_state_limit() {
    let base = ModelParams::with_equal_k(1.2, 1.2, 0.15, 0.5, 0.5).unwrap();
    let exact = qsd_record(
        &base,
        0.15,
        &SweepOptions {
            method: QsdMethod::Matrix,
            ..Default::default()
        },
        &RngStreams::new(0),
    )
    .unwrap();
    let opts = SweepOptions {
        max_states: 100,
        ..Default::default()
    };
    let mc = qsd_record(&base, 0.15, &opts, &RngStreams::new(0)).unwrap();
    assert_eq!(mc.method, QsdMethod::MonteCarlo);
    assert!(mc.cap.is_none());
    assert!((mc.lambda - exact.lambda).abs() < 4.0 * mc.lambda_error, "{} vs {}", mc.lambda, exact.lambda);
    assert!(mc.distribution.total_variation(&exact.distribution) < 0.05);
    let again = qsd_record(&base, 0.15, &opts, &RngStreams::new(0)).unwrap();
    assert_eq!(mc, again);
}

#[test]
fn sweep_fits_positive_rate_and_concentrates() {
    let recs = matrix_sweep(1.0, &[0.3, 0.2, 0.15, 0.1]);
    let fit = fit_records(&recs).unwrap();
    assert!(fit.u_hat > 0.0 && fit.r_squared > 0.99);
    let fp = fixed_points(&recs[0].params).coexistence.unwrap();
    let d: Vec<f64> = recs.iter().map(|r| r.qsd_mean.dist(&fp)).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    for r in &recs {
        assert!((r.lifetime - 1.0 / (1.0 - r.lambda)).abs() < 1e-9 * r.lifetime);
    }
}
