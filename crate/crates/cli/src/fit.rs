use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use bike8d::metrics::save_predictions;
use bike8d::synth::{derive_seed, read_records, AnnotationRecord};
use bike8d::{fit_pose, CanonicalTemplate, Observation, PredictionRecord, SolverConfig};

use crate::manifest::RunManifest;
use crate::{path_str, Failure, RunResult};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input record file
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction file to write
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TOML solver settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Template JSON; the built-in canonical shape when omitted
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Gaussian pixel noise added to every observed keypoint before fitting
    #[arg(long, default_value_t = 0.0)]
    pub noise_px: f64,
    /// Seed for the observation noise
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also refine per-keypoint shape offsets after the rigid fit
    #[arg(long)]
    pub fit_shape: bool,
    /// Overrides the yaw restart count
    #[arg(long)]
    pub yaw_starts: Option<usize>,
    /// Worker threads; 0 or omitted uses all cores
    #[arg(long)]
    pub threads: Option<usize>,
}

/// The record's 2D ground truth, optionally perturbed by seeded Gaussian
/// pixel noise. Each sample draws from its own stream, so the observation
/// set does not depend on how the work is scheduled.
fn observation(rec: &AnnotationRecord, index: u64, noise_px: f64, seed: u64) -> Observation {
    let mut obs = Observation::from_record(rec);
    if noise_px > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
        let normal = Normal::new(0.0, noise_px).expect("sigma validated");
        for p in obs.points.iter_mut().flatten() {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }
    obs
}

pub fn run(args: FitArgs) -> RunResult {
    let started = Instant::now();
    if !(args.noise_px.is_finite() && args.noise_px >= 0.0) {
        return Err(Failure::Usage(format!(
            "--noise-px must be finite and non-negative, got {}",
            args.noise_px
        )));
    }

    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
            toml::from_str::<SolverConfig>(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?
        }
        None => SolverConfig::default(),
    };
    if let Some(n) = args.yaw_starts {
        cfg.yaw_starts = n;
    }
    cfg.fit_shape |= args.fit_shape;
    cfg.validate().map_err(Failure::from)?;

    let template = match &args.template {
        Some(p) => crate::load_one_template(p)?,
        None => CanonicalTemplate::default(),
    };

    let (_, records) = read_records(&args.data)?;
    if records.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no records to fit",
            args.data.display()
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Result<PredictionRecord, (String, String)>> = pool.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, rec)| {
                let obs = observation(rec, i as u64, args.noise_px, args.seed);
                match fit_pose(&obs, &template, &cfg) {
                    Ok(fit) => Ok(PredictionRecord {
                        sample_id: rec.sample_id.clone(),
                        pose: fit.pose,
                        residuals: fit.residuals,
                        objective: fit.objective,
                        converged: fit.converged,
                        iterations: fit.iterations_used,
                    }),
                    Err(e) => Err((rec.sample_id.clone(), e.to_string())),
                }
            })
            .collect()
    });

    let mut preds = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => preds.push(p),
            Err((id, msg)) => failures.push(format!("{id}: {msg}")),
        }
    }
    save_predictions(&args.out, &preds)?;

    let converged = preds.iter().filter(|p| p.converged).count();
    let mean_objective = preds.iter().map(|p| p.objective).sum::<f64>() / preds.len().max(1) as f64;
    println!(
        "fit {}/{} samples, {} converged, mean objective {:.6e}",
        preds.len(),
        records.len(),
        converged,
        mean_objective
    );
    for f in &failures {
        eprintln!("fit failed {f}");
    }

    let manifest = RunManifest {
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        seed: Some(args.seed),
        config: serde_json::json!({
            "solver": cfg,
            "noise_px": args.noise_px,
            "threads": args.threads,
            "template_path": args.template.as_ref().map(path_str),
        }),
        inputs: [Some(&args.data), args.config.as_ref(), args.template.as_ref()]
            .into_iter()
            .flatten()
            .map(path_str)
            .collect(),
        outputs: vec![path_str(&args.out)],
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_sidecar(&args.out)?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!(
            "{} of {} samples failed to fit",
            failures.len(),
            records.len()
        )))
    }
}
