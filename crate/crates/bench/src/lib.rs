//! Shared fixtures for the kernel benchmarks.

use bike8d::synth::DatasetConfig;
use bike8d::{generate_dataset, AnnotationRecord, Camera, CanonicalTemplate};

/// Deterministic batch of synthetic annotation records from one template.
pub fn sample_records(n: usize, seed: u64) -> Vec<AnnotationRecord> {
    let cfg = DatasetConfig {
        n_templates: 1,
        samples_per_template: n,
        seed,
        ..DatasetConfig::default()
    };
    generate_dataset(&cfg, &[CanonicalTemplate::default()], &Camera::default())
        .expect("config is valid")
        .collect::<Result<_, _>>()
        .expect("generation succeeds")
}
