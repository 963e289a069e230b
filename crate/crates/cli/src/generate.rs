use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use bike8d::synth::{generate_dataset, DatasetConfig, RecordWriter, Split};
use bike8d::{Camera, CanonicalTemplate};

use crate::manifest::RunManifest;
use crate::{path_str, Failure, RunResult};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML settings; omitted fields fall back to the full-scale protocol
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Record file to write; the manifest lands at <out>.manifest.json
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateConfig {
    dataset: DatasetConfig,
    /// JSON file with one template or a list, cycled over the instance
    /// count; the built-in canonical shape when omitted.
    template_path: Option<PathBuf>,
    camera: Camera,
}

pub fn run(args: GenerateArgs) -> RunResult {
    let started = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
            toml::from_str::<GenerateConfig>(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?
        }
        None => GenerateConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.dataset.seed = seed;
    }
    let templates = match &cfg.template_path {
        Some(p) => crate::load_templates(p)?,
        None => vec![CanonicalTemplate::default()],
    };

    let generator = generate_dataset(&cfg.dataset, &templates, &cfg.camera)?;
    let header = generator.header();
    let mut writer = RecordWriter::create(&args.out, &header)?;
    let (mut train, mut val) = (0usize, 0usize);
    for rec in generator {
        let rec = rec?;
        match rec.split {
            Split::Train => train += 1,
            Split::Val => val += 1,
        }
        writer.write(&rec)?;
    }
    writer.finish()?;
    println!("{} records ({} train / {} val)", train + val, train, val);

    let manifest = RunManifest {
        command: "generate",
        version: env!("CARGO_PKG_VERSION"),
        seed: Some(cfg.dataset.seed),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        inputs: args
            .config
            .iter()
            .chain(cfg.template_path.iter())
            .map(path_str)
            .collect(),
        outputs: vec![path_str(&args.out)],
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_sidecar(&args.out)
}
