//! Hot-path benchmarks: kinematics, projection, losses, box overlap, and a
//! full single-sample fit.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use bike8d::losses::LossSample;
use bike8d::synth::{DatasetConfig, CROP_SIZE};
use bike8d::{
    bounding_box_3d, canonical_keypoints, crop_from_box, fit_pose, generate_dataset, iou3d,
    loss_terms, project_keypoints, repose, repose_box, Camera, CanonicalTemplate, IouMode,
    LossWeights, Observation, SolverConfig,
};
use bike8d_bench::sample_records;

fn bench_kinematics(c: &mut Criterion) {
    let template = CanonicalTemplate::default();
    let camera = Camera::default();
    let records = sample_records(2, 11);
    let rec = &records[0];
    let kc = canonical_keypoints(&template, &rec.residuals).unwrap();

    c.bench_function("canonical_keypoints", |b| {
        b.iter(|| canonical_keypoints(black_box(&template), black_box(&rec.residuals)).unwrap())
    });
    c.bench_function("repose", |b| {
        b.iter(|| repose(black_box(&kc), black_box(&rec.pose)).unwrap())
    });
    let posed = repose(&kc, &rec.pose).unwrap();
    c.bench_function("project_keypoints", |b| {
        b.iter(|| project_keypoints(black_box(&camera), black_box(&posed)).unwrap())
    });
}

fn bench_losses(c: &mut Criterion) {
    let template = CanonicalTemplate::default();
    let records = sample_records(2, 11);
    let sample = |i: usize| {
        let r = &records[i];
        LossSample {
            pose: r.pose,
            residuals: r.residuals,
            kp2d_ib: r.keypoints_2d_ib,
            box_center: [r.bbox.center().0, r.bbox.center().1],
        }
    };
    let pred = sample(1);
    let gt = sample(0);
    let crop = crop_from_box(&records[0].bbox, CROP_SIZE).unwrap();
    let domain = DatasetConfig::default().domain;
    let weights = LossWeights::default();

    c.bench_function("loss_terms", |b| {
        b.iter(|| {
            loss_terms(
                black_box(&pred),
                black_box(&gt),
                &records[0].visibility,
                &template,
                &records[0].camera,
                &crop,
                &domain,
                &weights,
            )
            .unwrap()
        })
    });
}

fn bench_iou(c: &mut Criterion) {
    let template = CanonicalTemplate::default();
    let records = sample_records(2, 7);
    let kc = canonical_keypoints(&template, &records[0].residuals).unwrap();
    let base = bounding_box_3d(&template, &kc);
    let a = repose_box(&base, &records[0].pose);
    // reuse the same translation so the pair genuinely overlaps
    let mut other = records[1].pose;
    other.t = records[0].pose.t;
    let b_box = repose_box(&base, &other);

    c.bench_function("iou3d_exact", |b| {
        b.iter(|| iou3d(black_box(&a), black_box(&b_box), IouMode::Exact))
    });
    c.bench_function("iou3d_mc_20k", |b| {
        b.iter(|| {
            iou3d(
                black_box(&a),
                black_box(&b_box),
                IouMode::MonteCarlo { samples: 20_000, seed: 3 },
            )
        })
    });
}

fn bench_fit(c: &mut Criterion) {
    let template = CanonicalTemplate::default();
    let records = sample_records(1, 42);
    let obs = Observation::from_record(&records[0]);
    let cfg = SolverConfig::default();

    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    group.bench_function("fit_pose", |b| {
        b.iter(|| fit_pose(black_box(&obs), &template, &cfg).unwrap())
    });
    group.finish();
}

fn bench_generation(c: &mut Criterion) {
    let cfg = DatasetConfig {
        n_templates: 1,
        samples_per_template: 100,
        seed: 5,
        ..DatasetConfig::default()
    };
    let templates = [CanonicalTemplate::default()];
    let camera = Camera::default();

    let mut group = c.benchmark_group("synth");
    group.sample_size(20);
    group.bench_function("generate_100", |b| {
        b.iter(|| {
            generate_dataset(black_box(&cfg), &templates, &camera)
                .unwrap()
                .collect::<Result<Vec<_>, _>>()
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_kinematics,
    bench_losses,
    bench_iou,
    bench_fit,
    bench_generation
);
criterion_main!(benches);
