//! Weighted loss stack over normalized pose, shape, and keypoint errors.
//!
//! Every term is a mean of squared differences in a normalized space:
//! angles and translations are scaled by their domain, shape residuals by
//! the residual norm bound, and pixels by half the crop size. Periodic
//! angles (pedal and yaw) compare through the wrapped signed difference, so
//! whole-turn shifts cost nothing. The total is a fixed weighted sum; terms
//! that need visible keypoints are dropped from it when nothing is visible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_signed_deg, Camera, CropTransform};
use crate::model::{
    canonical_keypoints, project_keypoints, repose, CanonicalTemplate, ModelError, Pose8D,
    ResidualSet, KEYPOINT_COUNT, RESIDUAL_NORM_BOUND,
};
use crate::synth::ParamDomain;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-term weights for the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
    pub beta7: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 1.0,
            beta2: 1.0,
            beta3: 2.0,
            beta4: 0.5,
            beta5: 1.0,
            beta6: 1.0,
            beta7: 0.2,
        }
    }
}

/// One side (prediction or ground truth) of a loss comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub pose: Pose8D,
    pub residuals: ResidualSet,
    /// Keypoint pixels on the cropped frame.
    pub kp2d_ib: [[f64; 2]; KEYPOINT_COUNT],
    /// Detection box center on the full image.
    pub box_center: [f64; 2],
}

/// All loss terms plus their weighted total.
///
/// `l_2dk` and `l_2dcon` are `None` when no keypoint is visible; absent
/// terms contribute nothing to `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_t: f64,
    pub l_ps: f64,
    pub l_3d: f64,
    pub l_2dk: Option<f64>,
    pub l_2dcon: Option<f64>,
    pub l_aux: f64,
    pub total: f64,
}

/// Maps a parameter value into its normalized comparison space.
///
/// Non-periodic parameters map linearly onto [-1, 1] (clamped); periodic
/// ones return the wrapped signed offset from `reference`, scaled by half
/// the domain width.
pub fn normalize_param(value: f64, min: f64, max: f64, periodic: bool, reference: f64) -> f64 {
    if periodic {
        wrap_signed_deg(value - reference) / ((max - min) / 2.0)
    } else {
        (2.0 * (value - min) / (max - min) - 1.0).clamp(-1.0, 1.0)
    }
}

fn linear_diff(pred: f64, gt: f64, iv: crate::synth::Interval) -> f64 {
    normalize_param(pred, iv.min, iv.max, false, 0.0)
        - normalize_param(gt, iv.min, iv.max, false, 0.0)
}

fn periodic_diff(pred: f64, gt: f64, iv: crate::synth::Interval) -> f64 {
    normalize_param(pred, iv.min, iv.max, true, gt)
}

fn mean_of_squares(vals: &[f64]) -> f64 {
    vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64
}

/// Evaluates every loss term for a prediction against ground truth.
///
/// The consistency term reprojects the prediction's own 3D keypoints
/// through `camera` and `crop` and compares them with its regressed 2D
/// keypoints; the other 2D term compares prediction with ground truth
/// directly. Both are restricted to visible keypoints.
#[allow(clippy::too_many_arguments)]
pub fn loss_terms(
    pred: &LossSample,
    gt: &LossSample,
    visibility: &[bool; KEYPOINT_COUNT],
    template: &CanonicalTemplate,
    camera: &Camera,
    crop: &CropTransform,
    domain: &ParamDomain,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    let l_r = mean_of_squares(&[
        linear_diff(pred.pose.theta_x, gt.pose.theta_x, domain.theta_x),
        periodic_diff(pred.pose.theta_y, gt.pose.theta_y, domain.theta_y),
        linear_diff(pred.pose.theta_z, gt.pose.theta_z, domain.theta_z),
    ]);
    let l_t = mean_of_squares(&[
        linear_diff(pred.pose.t.x, gt.pose.t.x, domain.t_x),
        linear_diff(pred.pose.t.y, gt.pose.t.y, domain.t_y),
        linear_diff(pred.pose.t.z, gt.pose.t.z, domain.t_z),
    ]);
    let l_ps = mean_of_squares(&[
        periodic_diff(pred.pose.theta_p, gt.pose.theta_p, domain.theta_p),
        linear_diff(pred.pose.theta_s, gt.pose.theta_s, domain.theta_s),
    ]);

    let mut shape = Vec::with_capacity(3 * KEYPOINT_COUNT);
    for i in 0..KEYPOINT_COUNT {
        let d = pred.residuals.0[i] - gt.residuals.0[i];
        shape.extend([
            d.x / RESIDUAL_NORM_BOUND,
            d.y / RESIDUAL_NORM_BOUND,
            d.z / RESIDUAL_NORM_BOUND,
        ]);
    }
    let l_3d = mean_of_squares(&shape);

    let half = crop.out_size / 2.0;
    let visible: Vec<usize> = (0..KEYPOINT_COUNT).filter(|&i| visibility[i]).collect();

    let l_2dk = if visible.is_empty() {
        None
    } else {
        let mut diffs = Vec::with_capacity(2 * visible.len());
        for &i in &visible {
            diffs.push((pred.kp2d_ib[i][0] - gt.kp2d_ib[i][0]) / half);
            diffs.push((pred.kp2d_ib[i][1] - gt.kp2d_ib[i][1]) / half);
        }
        Some(mean_of_squares(&diffs))
    };

    let l_2dcon = if visible.is_empty() {
        None
    } else {
        let kc = canonical_keypoints(template, &pred.residuals)?;
        let k3d = repose(&kc, &pred.pose)?;
        let px = project_keypoints(camera, &k3d)?;
        let mut diffs = Vec::with_capacity(2 * visible.len());
        for &i in &visible {
            let (u, v) = crate::geometry::apply_crop(crop, (px[i][0], px[i][1]));
            diffs.push((pred.kp2d_ib[i][0] - u) / half);
            diffs.push((pred.kp2d_ib[i][1] - v) / half);
        }
        Some(mean_of_squares(&diffs))
    };

    let l_aux = mean_of_squares(&[
        (pred.box_center[0] - gt.box_center[0]) / (camera.width as f64 / 2.0),
        (pred.box_center[1] - gt.box_center[1]) / (camera.height as f64 / 2.0),
    ]);

    let mut total = weights.beta1 * l_r
        + weights.beta2 * l_t
        + weights.beta3 * l_ps
        + weights.beta4 * l_3d
        + weights.beta7 * l_aux;
    if let Some(v) = l_2dk {
        total += weights.beta5 * v;
    }
    if let Some(v) = l_2dcon {
        total += weights.beta6 * v;
    }

    Ok(LossBreakdown {
        l_r,
        l_t,
        l_ps,
        l_3d,
        l_2dk,
        l_2dcon,
        l_aux,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_crop, crop_from_box, Vec3};
    use crate::model::KeypointId;
    use crate::synth::{generate_dataset, DatasetConfig, CROP_SIZE};
    use approx::assert_relative_eq;

    fn sample_from_record(rec: &crate::synth::AnnotationRecord) -> LossSample {
        let (cu, cv) = rec.bbox.center();
        LossSample {
            pose: rec.pose,
            residuals: rec.residuals,
            kp2d_ib: rec.keypoints_2d_ib,
            box_center: [cu, cv],
        }
    }

    fn one_record() -> crate::synth::AnnotationRecord {
        let cfg = DatasetConfig {
            n_templates: 1,
            samples_per_template: 1,
            seed: 11,
            ..DatasetConfig::default()
        };
        generate_dataset(&cfg, &[CanonicalTemplate::default()], &Default::default())
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
    }

    #[test]
    fn perfect_prediction_scores_zero_everywhere() {
        let rec = one_record();
        let template = CanonicalTemplate::default();
        let crop = crop_from_box(&rec.bbox, CROP_SIZE).unwrap();
        let s = sample_from_record(&rec);
        let out = loss_terms(
            &s,
            &s,
            &rec.visibility,
            &template,
            &rec.camera,
            &crop,
            &ParamDomain::default(),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(out.l_r, 0.0);
        assert_eq!(out.l_t, 0.0);
        assert_eq!(out.l_ps, 0.0);
        assert_eq!(out.l_3d, 0.0);
        assert_eq!(out.l_2dk, Some(0.0));
        assert_eq!(out.l_2dcon, Some(0.0));
        assert_eq!(out.l_aux, 0.0);
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn wrapped_pedal_angles_compare_across_the_seam() {
        let rec = one_record();
        let template = CanonicalTemplate::default();
        let crop = crop_from_box(&rec.bbox, CROP_SIZE).unwrap();
        let gt = LossSample {
            pose: Pose8D {
                theta_p: -170.0,
                ..rec.pose
            },
            ..sample_from_record(&rec)
        };
        let pred = LossSample {
            pose: Pose8D {
                theta_p: 170.0,
                ..gt.pose
            },
            ..gt
        };
        let out = loss_terms(
            &pred,
            &gt,
            &[true; KEYPOINT_COUNT],
            &template,
            &rec.camera,
            &crop,
            &ParamDomain::default(),
            &LossWeights::default(),
        )
        .unwrap();
        // wrapped difference is -20 degrees over a 180-degree half-width
        assert_relative_eq!(out.l_ps, (20.0_f64 / 180.0).powi(2) / 2.0, epsilon = 1e-5);
        assert!((out.l_ps - 0.00617).abs() < 1e-5);
    }

    #[test]
    fn pedal_steer_term_carries_double_weight_in_total() {
        let rec = one_record();
        let template = CanonicalTemplate::default();
        let crop = crop_from_box(&rec.bbox, CROP_SIZE).unwrap();
        let gt = sample_from_record(&rec);
        let mut pred = gt;
        pred.pose.theta_p = gt.pose.theta_p + 90.0;
        pred.pose.theta_s = (gt.pose.theta_s + 40.0).min(90.0);
        // keep the prediction self-consistent in 2D so only pose terms move
        let kc = canonical_keypoints(&template, &pred.residuals).unwrap();
        let k3d = repose(&kc, &pred.pose).unwrap();
        let px = project_keypoints(&rec.camera, &k3d).unwrap();
        for i in 0..KEYPOINT_COUNT {
            let (u, v) = apply_crop(&crop, (px[i][0], px[i][1]));
            pred.kp2d_ib[i] = [u, v];
        }
        let out = loss_terms(
            &pred,
            &gt,
            &rec.visibility,
            &template,
            &rec.camera,
            &crop,
            &ParamDomain::default(),
            &LossWeights::default(),
        )
        .unwrap();
        let rebuilt = 1.0 * out.l_r
            + 1.0 * out.l_t
            + 2.0 * out.l_ps
            + 0.5 * out.l_3d
            + 1.0 * out.l_2dk.unwrap()
            + 1.0 * out.l_2dcon.unwrap()
            + 0.2 * out.l_aux;
        assert_relative_eq!(out.total, rebuilt, epsilon = 1e-12);
        assert!(out.l_ps > 0.0);
        assert_eq!(out.l_2dcon, Some(0.0));
    }

    #[test]
    fn whole_turn_shift_changes_nothing() {
        let rec = one_record();
        let template = CanonicalTemplate::default();
        let crop = crop_from_box(&rec.bbox, CROP_SIZE).unwrap();
        let mut gt = sample_from_record(&rec);
        // dyadic angles on both sides keep wrapped differences exact under +-360
        gt.pose.theta_p = -12.25;
        gt.pose.theta_y = 45.5;
        let mut pred = gt;
        pred.pose.theta_p = 22.5;
        pred.pose.theta_y = -96.25;
        let base = loss_terms(
            &pred,
            &gt,
            &rec.visibility,
            &template,
            &rec.camera,
            &crop,
            &ParamDomain::default(),
            &LossWeights::default(),
        )
        .unwrap();
        let mut shifted = pred;
        shifted.pose.theta_p += 360.0;
        shifted.pose.theta_y -= 360.0;
        let out = loss_terms(
            &shifted,
            &gt,
            &rec.visibility,
            &template,
            &rec.camera,
            &crop,
            &ParamDomain::default(),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(out.l_ps, base.l_ps);
        assert_eq!(out.l_r, base.l_r);
        assert_eq!(out.total, base.total);
    }

    #[test]
    fn invisible_everything_drops_2d_terms() {
        let rec = one_record();
        let template = CanonicalTemplate::default();
        let crop = crop_from_box(&rec.bbox, CROP_SIZE).unwrap();
        let gt = sample_from_record(&rec);
        let mut pred = gt;
        pred.pose.theta_y += 10.0;
        let out = loss_terms(
            &pred,
            &gt,
            &[false; KEYPOINT_COUNT],
            &template,
            &rec.camera,
            &crop,
            &ParamDomain::default(),
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(out.l_2dk, None);
        assert_eq!(out.l_2dcon, None);
        let rebuilt = out.l_r + out.l_t + 2.0 * out.l_ps + 0.5 * out.l_3d + 0.2 * out.l_aux;
        assert_relative_eq!(out.total, rebuilt, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_fixture_matches_to_ten_digits() {
        let template = CanonicalTemplate::default();
        let camera = crate::geometry::Camera::default();
        let domain = ParamDomain::default();
        let weights = LossWeights::default();
        let bbox = crate::geometry::BBox2D::new(192.0, 192.0, 320.0, 320.0).unwrap();
        let crop = crop_from_box(&bbox, CROP_SIZE).unwrap();

        let gt_pose = Pose8D::IDENTITY;
        let mut pred_pose = gt_pose;
        pred_pose.theta_p = 20.0; // wrapped: (20/180)^2
        pred_pose.theta_x = 1.0; // linear: (2*6/10 - 2*5/10)^2 = 0.2^2
        pred_pose.theta_y = -30.0; // wrapped: (30/180)^2
        pred_pose.t = Vec3::new(0.1, 0.0, 0.0); // (2*0.1/2)^2 = 0.1^2

        let mut pred_res = ResidualSet::ZERO;
        pred_res[KeypointId::Seat] = Vec3::new(0.05, 0.0, 0.0); // (0.05/0.25)^2 = 0.2^2

        // prediction 2D keypoints: its own reprojection, so consistency is 0;
        // ground truth 2D keypoints: same points shifted by a known offset
        let kc = canonical_keypoints(&template, &pred_res).unwrap();
        let k3d = repose(&kc, &pred_pose).unwrap();
        let px = project_keypoints(&camera, &k3d).unwrap();
        let mut pred_2d = [[0.0; 2]; KEYPOINT_COUNT];
        let mut gt_2d = [[0.0; 2]; KEYPOINT_COUNT];
        for i in 0..KEYPOINT_COUNT {
            let (u, v) = apply_crop(&crop, (px[i][0], px[i][1]));
            pred_2d[i] = [u, v];
            gt_2d[i] = [u - 12.8, v + 25.6]; // (12.8/256)^2, (25.6/256)^2
        }

        let pred = LossSample {
            pose: pred_pose,
            residuals: pred_res,
            kp2d_ib: pred_2d,
            box_center: [281.6, 256.0], // du = 25.6/256
        };
        let gt = LossSample {
            pose: gt_pose,
            residuals: ResidualSet::ZERO,
            kp2d_ib: gt_2d,
            box_center: [256.0, 256.0],
        };

        let out = loss_terms(
            &pred,
            &gt,
            &[true; KEYPOINT_COUNT],
            &template,
            &camera,
            &crop,
            &domain,
            &weights,
        )
        .unwrap();

        let l_r = ((0.2_f64).powi(2) + (30.0_f64 / 180.0).powi(2)) / 3.0;
        let l_t = (0.1_f64).powi(2) / 3.0;
        let l_ps = (20.0_f64 / 180.0).powi(2) / 2.0;
        let l_3d = (0.2_f64).powi(2) / 33.0;
        let l_2dk = ((0.05_f64).powi(2) + (0.1_f64).powi(2)) / 2.0;
        let l_aux = (0.1_f64).powi(2) / 2.0;
        let total = l_r + l_t + 2.0 * l_ps + 0.5 * l_3d + l_2dk + 0.2 * l_aux;

        assert_relative_eq!(out.l_r, l_r, epsilon = 1e-10);
        assert_relative_eq!(out.l_t, l_t, epsilon = 1e-10);
        assert_relative_eq!(out.l_ps, l_ps, epsilon = 1e-10);
        assert_relative_eq!(out.l_3d, l_3d, epsilon = 1e-10);
        assert_relative_eq!(out.l_2dk.unwrap(), l_2dk, epsilon = 1e-10);
        assert_eq!(out.l_2dcon, Some(0.0));
        assert_relative_eq!(out.l_aux, l_aux, epsilon = 1e-10);
        assert_relative_eq!(out.total, total, epsilon = 1e-10);
    }

    #[test]
    fn normalize_param_hits_interval_anchors() {
        assert_eq!(normalize_param(0.5, -1.0, 1.0, false, 0.0), 0.5);
        assert_eq!(normalize_param(90.0, -90.0, 90.0, false, 0.0), 1.0);
        assert_eq!(normalize_param(-1.5, -5.0, 2.0, false, 0.0), 0.0);
        assert_eq!(normalize_param(7.0, -5.0, 5.0, false, 0.0), 1.0); // clamped
        let wrapped = normalize_param(170.0, -180.0, 180.0, true, -170.0);
        assert_relative_eq!(wrapped, -20.0 / 180.0, epsilon = 1e-15);
    }
}
