use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use bike8d::oracle::{run_gradient_suite, run_iou_suite, run_kinematics_suite, SuiteOutcome};

use crate::manifest::RunManifest;
use crate::{path_str, Failure, RunResult};

/// Worst acceptable keypoint disagreement against the homogeneous-matrix
/// reconstruction, meters.
const KINEMATICS_TOL: f64 = 1e-9;
/// Relative bound for finite differences against the internal gradient.
const GRADIENT_REL_TOL: f64 = 1e-4;

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random pose draws for the kinematics cross-check
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Random box pairs for the volume comparison
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Monte Carlo samples per box pair
    #[arg(long, default_value_t = 200_000)]
    pub mc_samples: usize,
    /// Random points for the derivative comparison
    #[arg(long, default_value_t = 100)]
    pub grad_points: usize,
    /// Allowed |exact - Monte Carlo| IoU gap
    #[arg(long, default_value_t = 0.01)]
    pub iou_tol: f64,
    /// Optional JSON summary; the manifest then lands next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: OracleCheckArgs) -> RunResult {
    let started = Instant::now();
    if !(args.iou_tol.is_finite() && args.iou_tol > 0.0) {
        return Err(Failure::Usage(format!(
            "--iou-tol must be positive, got {}",
            args.iou_tol
        )));
    }

    let outcomes = [
        run_kinematics_suite(args.draws, args.seed, KINEMATICS_TOL),
        run_iou_suite(args.pairs, args.mc_samples, args.seed, args.iou_tol),
        run_gradient_suite(args.grad_points, args.seed, GRADIENT_REL_TOL),
    ];
    for o in &outcomes {
        println!("{o}");
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&outcomes).expect("outcomes serialize");
        std::fs::write(out, json + "\n")
            .map_err(|e| Failure::Data(format!("writing {}: {e}", out.display())))?;
    }

    let manifest = RunManifest {
        command: "oracle-check",
        version: env!("CARGO_PKG_VERSION"),
        seed: Some(args.seed),
        config: serde_json::json!({
            "draws": args.draws,
            "pairs": args.pairs,
            "mc_samples": args.mc_samples,
            "grad_points": args.grad_points,
            "iou_tol": args.iou_tol,
            "kinematics_tol": KINEMATICS_TOL,
            "gradient_rel_tol": GRADIENT_REL_TOL,
        }),
        inputs: Vec::new(),
        outputs: args.out.iter().map(path_str).collect(),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    match &args.out {
        Some(out) => manifest.write_sidecar(out)?,
        None => println!("manifest {}", serde_json::to_string(&manifest).expect("serializes")),
    }

    let failed: Vec<&SuiteOutcome> = outcomes.iter().filter(|o| !o.passed()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    for o in &failed {
        for case in &o.failures {
            eprintln!(
                "{}",
                serde_json::json!({ "suite": o.name, "case": case, "tolerance": o.tolerance })
            );
        }
    }
    Err(Failure::Check(format!(
        "{} of {} oracle suites failed",
        failed.len(),
        outcomes.len()
    )))
}
