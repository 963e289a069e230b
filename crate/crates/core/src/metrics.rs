//! Evaluation metrics: per-parameter MAE, rotation/translation pose errors,
//! oriented-box 3D IoU (exact and Monte Carlo), mean keypoint displacement
//! (ADD), and 2D keypoint accuracy-recall curves, plus the report builder
//! that joins a dataset with a prediction file.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angular_diff, apply_crop, crop_from_box, project_point};
use crate::model::{
    bounding_box_3d, canonical_keypoints, repose, repose_box, CanonicalTemplate, KeypointId,
    ModelError, OrientedBox3D, Pose8D, ResidualSet, KEYPOINT_COUNT,
};
use crate::synth::{AnnotationRecord, CROP_SIZE, SCHEMA_VERSION};
use crate::Vec3;

/// 3D IoU thresholds reported by [`build_report`].
pub const IOU_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];
/// Joint rotation/translation acceptance gates: (max degrees, max meters).
pub const POSE_CRITERIA: [(f64, f64); 4] =
    [(5.0, 0.05), (10.0, 0.10), (40.0, 0.20), (60.0, 0.30)];
/// Pixel thresholds for the 2D keypoint accuracy-recall curves.
pub const PX_THRESHOLDS: [f64; 4] = [5.0, 10.0, 20.0, 30.0];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("pose list lengths differ: {gt} ground truth vs {pred} predicted")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("duplicate prediction for sample {id}")]
    DuplicateSample { id: String },
    #[error("no prediction for sample {id}")]
    MissingPrediction { id: String },
    #[error("prediction {id} matches no dataset sample")]
    UnknownSample { id: String },
    #[error("sample {id} has no visible keypoints")]
    ZeroVisible { id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("prediction io: {0}")]
    Io(#[from] io::Error),
    #[error("prediction file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported prediction schema version {found}")]
    UnsupportedSchema { found: u32 },
    #[error("prediction file is missing its header line")]
    MissingHeader,
}

/// Rotation and translation error of one predicted pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    /// Geodesic angle between predicted and true body rotations, degrees.
    pub rot_err: f64,
    /// Euclidean distance between predicted and true roots, meters.
    pub trans_err: f64,
}

/// Mean absolute error per pose parameter. Angles use the wrapped circular
/// difference (degrees); translations are per-axis absolute errors (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMae {
    pub theta_p: f64,
    pub theta_s: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl PoseMae {
    pub const ZERO: PoseMae = PoseMae {
        theta_p: 0.0,
        theta_s: 0.0,
        theta_x: 0.0,
        theta_y: 0.0,
        theta_z: 0.0,
        t_x: 0.0,
        t_y: 0.0,
        t_z: 0.0,
    };

    /// (name, value) pairs in canonical parameter order.
    pub fn entries(&self) -> [(&'static str, f64); 8] {
        [
            ("theta_p", self.theta_p),
            ("theta_s", self.theta_s),
            ("theta_x", self.theta_x),
            ("theta_y", self.theta_y),
            ("theta_z", self.theta_z),
            ("t_x", self.t_x),
            ("t_y", self.t_y),
            ("t_z", self.t_z),
        ]
    }
}

/// Fraction of samples at or under one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub threshold: f64,
    pub fraction: f64,
}

/// Fraction of samples inside a joint rotation and translation gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub max_rot_deg: f64,
    pub max_trans_m: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sample_count: usize,
    pub mae: PoseMae,
    /// Mean over samples of the average 3D keypoint displacement, meters.
    pub add: f64,
    /// Fraction of samples with oriented-box 3D IoU at or above threshold.
    pub ar_3d: Vec<ThresholdScore>,
    pub pose_criteria: Vec<CriterionScore>,
    /// 2D accuracy-recall on the full image frame.
    pub ar_2d_i: Vec<ThresholdScore>,
    /// 2D accuracy-recall on the cropped frame.
    pub ar_2d_ib: Vec<ThresholdScore>,
}

/// One solver output, keyed to its dataset sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub pose: Pose8D,
    pub residuals: ResidualSet,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionHeader {
    schema_version: u32,
}

/// Writes predictions as one JSON header line followed by one JSON object
/// per record.
pub fn write_predictions<W: Write>(
    writer: W,
    records: &[PredictionRecord],
) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(
        &mut w,
        &PredictionHeader {
            schema_version: SCHEMA_VERSION,
        },
    )
    .map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_predictions<P: AsRef<Path>>(
    path: P,
    records: &[PredictionRecord],
) -> Result<(), MetricsError> {
    write_predictions(std::fs::File::create(path)?, records)
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut lines = BufReader::new(reader).lines();
    let header_line = lines.next().ok_or(MetricsError::MissingHeader)??;
    let header: PredictionHeader =
        serde_json::from_str(&header_line).map_err(|e| MetricsError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(MetricsError::UnsupportedSchema {
            found: header.schema_version,
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| MetricsError::Malformed {
                line: i + 2,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn load_predictions<P: AsRef<Path>>(path: P) -> Result<Vec<PredictionRecord>, MetricsError> {
    read_predictions(std::fs::File::open(path)?)
}

/// Mean absolute error per parameter over paired pose lists. Periodic
/// parameters use the shortest circular distance.
pub fn mae_per_parameter(gt: &[Pose8D], pred: &[Pose8D]) -> Result<PoseMae, MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut acc = PoseMae::ZERO;
    for (g, p) in gt.iter().zip(pred) {
        acc.theta_p += angular_diff(g.theta_p, p.theta_p);
        acc.theta_s += angular_diff(g.theta_s, p.theta_s);
        acc.theta_x += angular_diff(g.theta_x, p.theta_x);
        acc.theta_y += angular_diff(g.theta_y, p.theta_y);
        acc.theta_z += angular_diff(g.theta_z, p.theta_z);
        acc.t_x += (g.t.x - p.t.x).abs();
        acc.t_y += (g.t.y - p.t.y).abs();
        acc.t_z += (g.t.z - p.t.z).abs();
    }
    let n = gt.len() as f64;
    Ok(PoseMae {
        theta_p: acc.theta_p / n,
        theta_s: acc.theta_s / n,
        theta_x: acc.theta_x / n,
        theta_y: acc.theta_y / n,
        theta_z: acc.theta_z / n,
        t_x: acc.t_x / n,
        t_y: acc.t_y / n,
        t_z: acc.t_z / n,
    })
}

/// Geodesic body-rotation error (degrees) and root translation error
/// (meters) between two poses.
pub fn pose_errors(gt: &Pose8D, pred: &Pose8D) -> PoseErrors {
    let rel_trace = {
        let rg = gt.rotation();
        let rp = pred.rotation();
        // trace(Rp * Rg^T)
        let rgt = rg.transpose();
        let mut tr = 0.0;
        for i in 0..3 {
            for k in 0..3 {
                tr += rp.entry(i, k) * rgt.entry(k, i);
            }
        }
        tr
    };
    let cos = ((rel_trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    PoseErrors {
        rot_err: cos.acos().to_degrees(),
        trans_err: (gt.t - pred.t).norm(),
    }
}

/// How to compute the volume of the intersection of two oriented boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IouMode {
    /// Exact convex-polytope intersection by half-space vertex enumeration.
    Exact,
    /// Seeded two-sided hit fraction estimate; deterministic for a fixed
    /// seed and sample count.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Plane {
    n: Vec3,
    d: f64,
}

impl Plane {
    fn signed_excess(&self, p: Vec3) -> f64 {
        self.n.dot(p) - self.d
    }

    fn same_as(&self, other: &Plane) -> bool {
        self.n.dot(other.n) > 1.0 - 1e-9 && (self.d - other.d).abs() < 1e-9
    }
}

fn box_planes(b: &OrientedBox3D) -> [Plane; 6] {
    let axes = [
        b.rotation.apply(Vec3::new(1.0, 0.0, 0.0)),
        b.rotation.apply(Vec3::new(0.0, 1.0, 0.0)),
        b.rotation.apply(Vec3::new(0.0, 0.0, 1.0)),
    ];
    let h = [b.half_extents.x, b.half_extents.y, b.half_extents.z];
    std::array::from_fn(|i| {
        let axis = axes[i / 2];
        let n = if i % 2 == 0 { axis } else { -axis };
        Plane {
            n,
            d: n.dot(b.center) + h[i / 2],
        }
    })
}

const PLANE_EPS: f64 = 1e-9;
const ON_PLANE_EPS: f64 = 1e-7;

/// Volume of the convex region bounded by the planes, by enumerating
/// plane-triple vertices and fanning each face to the centroid.
fn halfspace_volume(planes: &[Plane]) -> f64 {
    let mut distinct: Vec<Plane> = Vec::with_capacity(planes.len());
    for p in planes {
        if !distinct.iter().any(|q| q.same_as(p)) {
            distinct.push(*p);
        }
    }
    let m = distinct.len();

    let mut verts: Vec<Vec3> = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let a = Matrix3::new(
                    distinct[i].n.x,
                    distinct[i].n.y,
                    distinct[i].n.z,
                    distinct[j].n.x,
                    distinct[j].n.y,
                    distinct[j].n.z,
                    distinct[k].n.x,
                    distinct[k].n.y,
                    distinct[k].n.z,
                );
                if a.determinant().abs() < PLANE_EPS {
                    continue;
                }
                let rhs = Vector3::new(distinct[i].d, distinct[j].d, distinct[k].d);
                let Some(x) = a.lu().solve(&rhs) else { continue };
                let v = Vec3::new(x[0], x[1], x[2]);
                if distinct.iter().all(|p| p.signed_excess(v) <= PLANE_EPS)
                    && !verts.iter().any(|w| (*w - v).norm() < 1e-9)
                {
                    verts.push(v);
                }
            }
        }
    }
    if verts.len() < 4 {
        return 0.0;
    }

    let centroid = verts.iter().fold(Vec3::ZERO, |a, &v| a + v) * (1.0 / verts.len() as f64);

    // Sum of |(v0-g) . ((v1-g) x (v2-g))| over the fan triangles of every
    // face, divided by six once at the end so dyadic fixtures stay exact.
    let mut six_vol = 0.0;
    for plane in &distinct {
        let on_face: Vec<Vec3> = verts
            .iter()
            .copied()
            .filter(|&v| plane.signed_excess(v).abs() < ON_PLANE_EPS)
            .collect();
        if on_face.len() < 3 {
            continue;
        }
        let mut u = plane.n.cross(Vec3::new(1.0, 0.0, 0.0));
        if u.norm() < 1e-6 {
            u = plane.n.cross(Vec3::new(0.0, 1.0, 0.0));
        }
        let u = u.normalized().expect("perpendicular is nonzero");
        let w = plane.n.cross(u);
        let face_center =
            on_face.iter().fold(Vec3::ZERO, |a, &v| a + v) * (1.0 / on_face.len() as f64);
        let mut ordered: Vec<(f64, Vec3)> = on_face
            .into_iter()
            .map(|v| {
                let r = v - face_center;
                (r.dot(w).atan2(r.dot(u)), v)
            })
            .collect();
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
        for t in 1..ordered.len() - 1 {
            let a = ordered[0].1 - centroid;
            let b = ordered[t].1 - centroid;
            let c = ordered[t + 1].1 - centroid;
            six_vol += a.dot(b.cross(c)).abs();
        }
    }
    six_vol / 6.0
}

fn point_in_box(b: &OrientedBox3D, p: Vec3) -> bool {
    let local = b.rotation.transpose().apply(p - b.center);
    local.x.abs() <= b.half_extents.x
        && local.y.abs() <= b.half_extents.y
        && local.z.abs() <= b.half_extents.z
}

fn mc_intersection_volume(a: &OrientedBox3D, b: &OrientedBox3D, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample_in = |src: &OrientedBox3D, dst: &OrientedBox3D| {
        let mut hits = 0usize;
        for _ in 0..samples {
            let local = Vec3::new(
                rng.random_range(-src.half_extents.x..=src.half_extents.x),
                rng.random_range(-src.half_extents.y..=src.half_extents.y),
                rng.random_range(-src.half_extents.z..=src.half_extents.z),
            );
            let p = src.center + src.rotation.apply(local);
            if point_in_box(dst, p) {
                hits += 1;
            }
        }
        src.volume() * hits as f64 / samples as f64
    };
    let from_a = sample_in(a, b);
    let from_b = sample_in(b, a);
    (from_a + from_b) / 2.0
}

/// Intersection-over-union of two oriented 3D boxes.
pub fn iou3d(a: &OrientedBox3D, b: &OrientedBox3D, mode: IouMode) -> f64 {
    let inter = match mode {
        IouMode::Exact => {
            let mut planes = Vec::with_capacity(12);
            planes.extend_from_slice(&box_planes(a));
            planes.extend_from_slice(&box_planes(b));
            halfspace_volume(&planes)
        }
        IouMode::MonteCarlo { samples, seed } => mc_intersection_volume(a, b, samples, seed),
    };
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Average distance metric: the mean displacement of the model keypoints
/// between two poses of the same canonical instance.
pub fn add_metric(
    kc: &crate::model::KeypointSet3D,
    gt: &Pose8D,
    pred: &Pose8D,
) -> Result<f64, ModelError> {
    let a = repose(kc, gt)?;
    let b = repose(kc, pred)?;
    let mut sum = 0.0;
    for id in KeypointId::ALL {
        sum += (a[id] - b[id]).norm();
    }
    Ok(sum / KEYPOINT_COUNT as f64)
}

/// Accuracy-recall curve: the fraction of per-sample mean distances at or
/// under each threshold.
pub fn keypoint2d_ar(per_sample_means: &[f64], thresholds: &[f64]) -> Vec<ThresholdScore> {
    thresholds
        .iter()
        .map(|&threshold| ThresholdScore {
            threshold,
            fraction: per_sample_means
                .iter()
                .filter(|&&m| m <= threshold)
                .count() as f64
                / per_sample_means.len().max(1) as f64,
        })
        .collect()
}

fn fraction(hits: usize, total: usize) -> f64 {
    hits as f64 / total.max(1) as f64
}

/// Joins dataset records with predictions by sample id and computes the full
/// metric suite. Every dataset sample must have exactly one prediction and
/// every prediction must match a sample. Iteration follows dataset order, so
/// the report is deterministic.
pub fn build_report(
    dataset: &[AnnotationRecord],
    preds: &[PredictionRecord],
    template: &CanonicalTemplate,
    iou_mode: IouMode,
) -> Result<MetricsReport, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.sample_id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateSample {
                id: p.sample_id.clone(),
            });
        }
    }
    if let Some(p) = preds
        .iter()
        .find(|p| !dataset.iter().any(|r| r.sample_id == p.sample_id))
    {
        return Err(MetricsError::UnknownSample {
            id: p.sample_id.clone(),
        });
    }

    let mut gt_poses = Vec::with_capacity(dataset.len());
    let mut pred_poses = Vec::with_capacity(dataset.len());
    let mut add_sum = 0.0;
    let mut iou_hits = [0usize; IOU_THRESHOLDS.len()];
    let mut criteria_hits = [0usize; POSE_CRITERIA.len()];
    let mut means_i = Vec::with_capacity(dataset.len());
    let mut means_ib = Vec::with_capacity(dataset.len());

    for rec in dataset {
        let pred = by_id
            .get(rec.sample_id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction {
                id: rec.sample_id.clone(),
            })?;
        gt_poses.push(rec.pose);
        pred_poses.push(pred.pose);

        let kc_gt = canonical_keypoints(template, &rec.residuals)?;
        add_sum += add_metric(&kc_gt, &rec.pose, &pred.pose)?;

        let kc_pred = canonical_keypoints(template, &pred.residuals)?;
        let gt_box = repose_box(&bounding_box_3d(template, &kc_gt), &rec.pose);
        let pred_box = repose_box(&bounding_box_3d(template, &kc_pred), &pred.pose);
        let iou = iou3d(&gt_box, &pred_box, iou_mode);
        for (hit, &thr) in iou_hits.iter_mut().zip(&IOU_THRESHOLDS) {
            if iou >= thr {
                *hit += 1;
            }
        }

        let errs = pose_errors(&rec.pose, &pred.pose);
        for (hit, &(max_rot, max_trans)) in criteria_hits.iter_mut().zip(&POSE_CRITERIA) {
            if errs.rot_err <= max_rot && errs.trans_err <= max_trans {
                *hit += 1;
            }
        }

        let visible: Vec<usize> = (0..KEYPOINT_COUNT).filter(|&i| rec.visibility[i]).collect();
        if visible.is_empty() {
            return Err(MetricsError::ZeroVisible {
                id: rec.sample_id.clone(),
            });
        }
        let crop = crop_from_box(&rec.bbox, CROP_SIZE)?;
        let pred_k3d = repose(&kc_pred, &pred.pose)?;
        let mut sum_i = 0.0;
        let mut sum_ib = 0.0;
        for &i in &visible {
            let id = KeypointId::from_index(i).expect("valid keypoint index");
            match project_point(&rec.camera, pred_k3d[id]) {
                Ok((u, v)) => {
                    let gt_i = rec.keypoints_2d_i[i];
                    sum_i += ((u - gt_i[0]).powi(2) + (v - gt_i[1]).powi(2)).sqrt();
                    let (ub, vb) = apply_crop(&crop, (u, v));
                    let gt_ib = rec.keypoints_2d_ib[i];
                    sum_ib += ((ub - gt_ib[0]).powi(2) + (vb - gt_ib[1]).powi(2)).sqrt();
                }
                // a prediction that puts a visible keypoint behind the
                // camera fails every pixel threshold for this sample
                Err(_) => {
                    sum_i = f64::INFINITY;
                    sum_ib = f64::INFINITY;
                    break;
                }
            }
        }
        means_i.push(sum_i / visible.len() as f64);
        means_ib.push(sum_ib / visible.len() as f64);
    }

    let n = dataset.len();
    Ok(MetricsReport {
        sample_count: n,
        mae: mae_per_parameter(&gt_poses, &pred_poses)?,
        add: add_sum / n as f64,
        ar_3d: IOU_THRESHOLDS
            .iter()
            .zip(&iou_hits)
            .map(|(&threshold, &h)| ThresholdScore {
                threshold,
                fraction: fraction(h, n),
            })
            .collect(),
        pose_criteria: POSE_CRITERIA
            .iter()
            .zip(&criteria_hits)
            .map(|(&(max_rot_deg, max_trans_m), &h)| CriterionScore {
                max_rot_deg,
                max_trans_m,
                fraction: fraction(h, n),
            })
            .collect(),
        ar_2d_i: keypoint2d_ar(&means_i, &PX_THRESHOLDS),
        ar_2d_ib: keypoint2d_ar(&means_ib, &PX_THRESHOLDS),
    })
}

/// Predictions that echo the ground truth of each record; the evaluation of
/// these must produce zero errors and full recall everywhere.
pub fn oracle_predictions(dataset: &[AnnotationRecord]) -> Vec<PredictionRecord> {
    dataset
        .iter()
        .map(|rec| PredictionRecord {
            sample_id: rec.sample_id.clone(),
            pose: rec.pose,
            residuals: rec.residuals,
            objective: 0.0,
            converged: true,
            iterations: 0,
        })
        .collect()
}
