//! End-to-end checks across module boundaries: sampling statistics, file
//! round trips feeding the solver, and report stability.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bike8d::metrics::{oracle_predictions, IouMode};
use bike8d::model::RESIDUAL_NORM_BOUND;
use bike8d::synth::{write_records, DatasetConfig};
use bike8d::{
    angular_diff, build_report, fit_pose, generate_dataset, read_records, sample_pose,
    sample_residuals, AnnotationRecord, Camera, CanonicalTemplate, KeypointId, Observation,
    ParamDomain, SolverConfig,
};

/// Kolmogorov-Smirnov distance between draws and the uniform law on
/// [min, max).
fn ks_distance_uniform(mut draws: Vec<f64>, min: f64, max: f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in draws.iter().enumerate() {
        let cdf = (x - min) / (max - min);
        d = d.max((cdf - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

#[test]
fn sampled_yaw_is_uniform_by_kolmogorov_smirnov() {
    let domain = ParamDomain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| sample_pose(&domain, &mut rng).theta_y)
        .collect();
    let d = ks_distance_uniform(draws, -180.0, 180.0);
    // the 1% critical value at n = 10^4 is about 0.0163
    assert!(d < 0.02, "KS distance {d:.4} exceeds 0.02");
}

#[test]
fn sampled_pedal_angle_is_uniform_too() {
    let domain = ParamDomain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| sample_pose(&domain, &mut rng).theta_p)
        .collect();
    let d = ks_distance_uniform(draws, -180.0, 180.0);
    assert!(d < 0.02, "KS distance {d:.4} exceeds 0.02");
}

#[test]
fn shape_residuals_match_their_gaussian_moments() {
    let sigma = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut values = Vec::new();
    for _ in 0..10_000 {
        let res = sample_residuals(sigma, RESIDUAL_NORM_BOUND, &mut rng);
        for (i, v) in res.0.iter().enumerate() {
            if i == KeypointId::GroundRoot.index() {
                assert_eq!((v.x, v.y, v.z), (0.0, 0.0, 0.0), "root must stay anchored");
                continue;
            }
            values.extend_from_slice(&[v.x, v.y, v.z]);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // mean within 3 standard errors, std within 2 percent
    assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean:.2e}");
    assert!(
        (var.sqrt() - sigma).abs() < 0.02 * sigma,
        "std {:.5} vs sigma {sigma}",
        var.sqrt()
    );
}

fn small_dataset(total_per_template: usize, seed: u64) -> Vec<AnnotationRecord> {
    let cfg = DatasetConfig {
        n_templates: 1,
        samples_per_template: total_per_template,
        seed,
        ..DatasetConfig::default()
    };
    generate_dataset(&cfg, &[CanonicalTemplate::default()], &Camera::default())
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn solver_round_trip_through_a_dataset_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.jsonl");

    let cfg = DatasetConfig {
        n_templates: 1,
        samples_per_template: 3,
        seed: 314,
        ..DatasetConfig::default()
    };
    let template = CanonicalTemplate::default();
    let generator = generate_dataset(&cfg, &[template.clone()], &Camera::default()).unwrap();
    let header = generator.header();
    let records: Vec<AnnotationRecord> = generator.collect::<Result<_, _>>().unwrap();
    write_records(&path, &header, &records).unwrap();

    let (_, loaded) = read_records(&path).unwrap();
    assert_eq!(records, loaded);

    // fitting the loaded records matches fitting the in-memory ones bitwise
    let solver_cfg = SolverConfig::default();
    for (a, b) in records.iter().zip(&loaded) {
        let fit_a = fit_pose(&Observation::from_record(a), &template, &solver_cfg).unwrap();
        let fit_b = fit_pose(&Observation::from_record(b), &template, &solver_cfg).unwrap();
        assert_eq!(fit_a, fit_b);
    }
}

#[test]
fn rigid_fits_recover_poses_to_working_accuracy() {
    // zero shape jitter: the observations are exactly realizable by the
    // rigid model, so the fit should recover poses to solver precision
    let cfg = DatasetConfig {
        n_templates: 1,
        samples_per_template: 8,
        seed: 2718,
        residual_sigma: 0.0,
        ..DatasetConfig::default()
    };
    let template = CanonicalTemplate::default();
    let records: Vec<AnnotationRecord> =
        generate_dataset(&cfg, &[template.clone()], &Camera::default())
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
    let solver_cfg = SolverConfig::default();
    let mut worst_yaw = 0.0f64;
    let mut worst_t = 0.0f64;
    for rec in &records {
        let fit = fit_pose(&Observation::from_record(rec), &template, &solver_cfg).unwrap();
        assert!(fit.converged, "{} did not converge", rec.sample_id);
        worst_yaw = worst_yaw.max(angular_diff(fit.pose.theta_y, rec.pose.theta_y));
        worst_t = worst_t.max((fit.pose.t - rec.pose.t).norm());
    }
    assert!(worst_yaw < 1.0, "worst yaw error {worst_yaw:.4} deg");
    assert!(worst_t < 0.01, "worst translation error {worst_t:.5} m");
}

#[test]
fn evaluation_report_is_reproducible_end_to_end() {
    let template = CanonicalTemplate::default();
    let records = small_dataset(5, 1618);
    let preds = oracle_predictions(&records);
    let mode = IouMode::MonteCarlo {
        samples: 20_000,
        seed: 5,
    };
    let a = build_report(&records, &preds, &template, mode).unwrap();
    let b = build_report(&records, &preds, &template, mode).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sample_count, 5);
    assert_eq!(a.mae.theta_y, 0.0);
    assert_eq!(a.add, 0.0);
}
