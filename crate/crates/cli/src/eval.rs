use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use bike8d::metrics::load_predictions;
use bike8d::synth::read_records;
use bike8d::{build_report, CanonicalTemplate, IouMode, MetricsReport};

use crate::manifest::RunManifest;
use crate::{path_str, Failure, RunResult};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth record file
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction file from `fit`
    #[arg(long)]
    pub preds: PathBuf,
    /// Report JSON to write
    #[arg(long)]
    pub out: PathBuf,
    /// Template JSON; the built-in canonical shape when omitted
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Oriented-box volume method for the 3D IoU column
    #[arg(long, value_enum, default_value_t = IouModeArg::Exact)]
    pub iou_mode: IouModeArg,
    /// Sample count per box pair in mc mode
    #[arg(long, default_value_t = 200_000)]
    pub mc_samples: usize,
    /// Seed for mc mode
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IouModeArg {
    Exact,
    Mc,
}

fn id_list(ids: &[&str]) -> String {
    const SHOWN: usize = 8;
    let head = ids.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        format!("{head}, and {} more", ids.len() - SHOWN)
    } else {
        head
    }
}

fn print_report(r: &MetricsReport) {
    println!("{:<28}{}", "samples", r.sample_count);
    for (name, value) in r.mae.entries() {
        let unit = if name.starts_with("t_") { "m" } else { "deg" };
        println!("{:<28}{value:.6}", format!("MAE {name} [{unit}]"));
    }
    println!("{:<28}{:.6}", "ADD [m]", r.add);
    for s in &r.ar_3d {
        let label = format!("AR 3D IoU >= {:.2}", s.threshold);
        println!("{label:<28}{:6.2}%", 100.0 * s.fraction);
    }
    for c in &r.pose_criteria {
        let label = format!("AR pose <= {}deg, {}m", c.max_rot_deg, c.max_trans_m);
        println!("{label:<28}{:6.2}%", 100.0 * c.fraction);
    }
    for s in &r.ar_2d_i {
        let label = format!("AR 2D image <= {}px", s.threshold);
        println!("{label:<28}{:6.2}%", 100.0 * s.fraction);
    }
    for s in &r.ar_2d_ib {
        let label = format!("AR 2D crop <= {}px", s.threshold);
        println!("{label:<28}{:6.2}%", 100.0 * s.fraction);
    }
}

pub fn run(args: EvalArgs) -> RunResult {
    let started = Instant::now();
    let template = match &args.template {
        Some(p) => crate::load_one_template(p)?,
        None => CanonicalTemplate::default(),
    };
    let (_, records) = read_records(&args.data)?;
    let preds = load_predictions(&args.preds)?;

    let gt_ids: BTreeSet<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = preds.iter().map(|p| p.sample_id.as_str()).collect();
    let missing: Vec<&str> = gt_ids.difference(&pred_ids).copied().collect();
    let extra: Vec<&str> = pred_ids.difference(&gt_ids).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing predictions for {}", id_list(&missing)));
        }
        if !extra.is_empty() {
            parts.push(format!("predictions for unknown samples {}", id_list(&extra)));
        }
        return Err(Failure::Data(format!(
            "{} and {} do not cover the same samples: {}",
            args.data.display(),
            args.preds.display(),
            parts.join("; ")
        )));
    }

    let mode = match args.iou_mode {
        IouModeArg::Exact => IouMode::Exact,
        IouModeArg::Mc => IouMode::MonteCarlo {
            samples: args.mc_samples,
            seed: args.seed,
        },
    };
    let report = build_report(&records, &preds, &template, mode)?;
    print_report(&report);
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )
    .map_err(|e| Failure::Data(format!("writing {}: {e}", args.out.display())))?;

    let manifest = RunManifest {
        command: "eval",
        version: env!("CARGO_PKG_VERSION"),
        seed: Some(args.seed),
        config: serde_json::json!({
            "iou_mode": args.iou_mode,
            "mc_samples": args.mc_samples,
            "template_path": args.template.as_ref().map(path_str),
        }),
        inputs: [Some(&args.data), Some(&args.preds), args.template.as_ref()]
            .into_iter()
            .flatten()
            .map(path_str)
            .collect(),
        outputs: vec![path_str(&args.out)],
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_sidecar(&args.out)
}
