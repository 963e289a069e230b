//! `bike8d`: dataset generation, pose fitting, evaluation, rendering, and
//! numerical self-checks for the articulated bicycle model.

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

use bike8d::synth::DatasetError;
use bike8d::{CanonicalTemplate, MetricsError, ModelError, SolveError};

mod eval;
mod fit;
mod generate;
mod manifest;
mod oracle_check;
mod render;

/// Run failure with its process exit code: 1 usage or config, 2 bad or
/// unwritable data, 3 failed self-check.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Check(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<image::ImageError> for Failure {
    fn from(e: image::ImageError) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type RunResult = Result<(), Failure>;

pub fn path_str(p: impl AsRef<Path>) -> String {
    p.as_ref().display().to_string()
}

/// Loads one template or a list from a JSON file.
pub fn load_templates(path: &Path) -> Result<Vec<CanonicalTemplate>, Failure> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum TemplateFile {
        One(Box<CanonicalTemplate>),
        Many(Vec<CanonicalTemplate>),
    }

    let bad = |msg: String| Failure::Usage(format!("template file {}: {msg}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let parsed: TemplateFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let templates = match parsed {
        TemplateFile::One(t) => vec![*t],
        TemplateFile::Many(v) => v,
    };
    if templates.is_empty() {
        return Err(bad("holds no templates".into()));
    }
    for (i, t) in templates.iter().enumerate() {
        t.validate().map_err(|e| bad(format!("template {i}: {e}")))?;
    }
    Ok(templates)
}

/// Loads a template file that must describe exactly one shape.
pub fn load_one_template(path: &Path) -> Result<CanonicalTemplate, Failure> {
    let mut templates = load_templates(path)?;
    if templates.len() != 1 {
        return Err(Failure::Usage(format!(
            "template file {} holds {} templates, expected exactly one",
            path.display(),
            templates.len()
        )));
    }
    Ok(templates.pop().expect("length checked"))
}

#[derive(Parser)]
#[command(
    name = "bike8d",
    version,
    about = "Articulated bicycle 8D pose toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Subcommand)]
enum Cmd {
    /// Write a synthetic ground-truth dataset
    Generate(generate::GenerateArgs),
    /// Fit 8D poses to the observed 2D keypoints of every record
    Fit(fit::FitArgs),
    /// Score a prediction file against its dataset
    Eval(eval::EvalArgs),
    /// Draw one sample's skeleton to a PNG
    Render(render::RenderArgs),
    /// Run the embedded numerical cross-checks
    OracleCheck(oracle_check::OracleCheckArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Generate(args) => generate::run(args),
        Cmd::Fit(args) => fit::run(args),
        Cmd::Eval(args) => eval::run(args),
        Cmd::Render(args) => render::run(args),
        Cmd::OracleCheck(args) => oracle_check::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
