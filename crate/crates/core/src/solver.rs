//! Multi-start Levenberg-Marquardt fit of the 8D pose to observed 2D
//! keypoints.
//!
//! The objective is the mean squared normalized reprojection error over
//! visible keypoints on the cropped frame (plus a ridge on shape residuals
//! when shape fitting is enabled). Yaw is the only strongly multimodal
//! parameter, so the solver restarts from evenly spaced yaw seeds and keeps
//! the best result; translation is seeded from the detection box via the
//! pinhole depth cue. Derivatives are central finite differences, falling
//! back to one-sided at domain boundaries. The solver draws no randomness:
//! identical observations produce identical results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_crop, crop_from_box, project_point, BBox2D, Camera, GeometryError};
use crate::model::{
    canonical_keypoints, repose, CanonicalTemplate, KeypointId, Pose8D, ResidualSet,
    KEYPOINT_COUNT, RESIDUAL_NORM_BOUND,
};
use crate::synth::{AnnotationRecord, ParamDomain, CROP_SIZE};
use crate::Vec3;

/// Objective value standing in for any failed evaluation (behind-camera
/// projection or broken articulation geometry). Finite so LM can retreat.
pub const PENALTY_OBJECTIVE: f64 = 1e6;

/// Fewest visible keypoints that still constrain all 8 parameters.
pub const MIN_VISIBLE: usize = 6;

const POSE_PARAMS: usize = 8;
const SHAPE_PARAMS: usize = 3 * KEYPOINT_COUNT;
const LAMBDA_MAX: f64 = 1e12;
const LAMBDA_MIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("only {visible} visible keypoints, need at least {MIN_VISIBLE}")]
    UnderConstrained { visible: usize },
    #[error("invalid observation box: {0}")]
    BadBox(#[from] GeometryError),
    #[error("invalid solver config: {0}")]
    Config(String),
}

/// Detected 2D evidence for one sample: optional keypoint pixels on the full
/// image, a visibility mask, the detection box, and the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub points: [Option<[f64; 2]>; KEYPOINT_COUNT],
    pub visibility: [bool; KEYPOINT_COUNT],
    pub bbox: BBox2D,
    pub camera: Camera,
}

impl Observation {
    /// Observation carrying a record's 2D ground truth.
    pub fn from_record(rec: &AnnotationRecord) -> Observation {
        Observation {
            points: std::array::from_fn(|i| Some(rec.keypoints_2d_i[i])),
            visibility: rec.visibility,
            bbox: rec.bbox,
            camera: rec.camera,
        }
    }

    /// Indices that are both marked visible and actually present.
    pub fn visible_indices(&self) -> Vec<usize> {
        (0..KEYPOINT_COUNT)
            .filter(|&i| self.visibility[i] && self.points[i].is_some())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Evenly spaced yaw restarts over [-180, 180).
    pub yaw_starts: usize,
    pub max_iterations: usize,
    /// Finite-difference step, degrees for angles and meters for shifts.
    pub fd_step: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    /// Accepted-step objective decrease below which the fit has converged.
    pub converge_tol: f64,
    /// Also optimize the 33 shape residual components after the rigid fit.
    pub fit_shape: bool,
    /// Weight of the shape prior pulling residuals toward zero.
    pub shape_ridge: f64,
    pub domain: ParamDomain,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            yaw_starts: 8,
            max_iterations: 200,
            fd_step: 1e-4,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
            converge_tol: 1e-10,
            fit_shape: false,
            shape_ridge: 10.0,
            domain: ParamDomain::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.yaw_starts == 0 {
            return Err(SolveError::Config("yaw_starts must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::Config("max_iterations must be positive".into()));
        }
        if !(self.fd_step.is_finite() && self.fd_step > 0.0) {
            return Err(SolveError::Config("fd_step must be positive".into()));
        }
        if self.lambda_factor <= 1.0 {
            return Err(SolveError::Config("lambda_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub pose: Pose8D,
    pub residuals: ResidualSet,
    pub objective: f64,
    /// Final objective of every start in the seed grid, in grid order.
    pub per_start_objectives: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Fixed data shared by every objective evaluation of one fit.
struct FitContext<'a> {
    template: &'a CanonicalTemplate,
    camera: Camera,
    visible: Vec<usize>,
    /// Observed pixels mapped onto the cropped frame, aligned with `visible`.
    obs_ib: Vec<[f64; 2]>,
    crop: crate::geometry::CropTransform,
    fit_shape: bool,
    shape_ridge: f64,
    /// Shape used when residuals are not free parameters.
    base_residuals: ResidualSet,
}

impl<'a> FitContext<'a> {
    fn new(
        obs: &Observation,
        template: &'a CanonicalTemplate,
        cfg: &SolverConfig,
        base_residuals: ResidualSet,
    ) -> Result<Self, SolveError> {
        let visible = obs.visible_indices();
        if visible.len() < MIN_VISIBLE {
            return Err(SolveError::UnderConstrained {
                visible: visible.len(),
            });
        }
        let crop = crop_from_box(&obs.bbox, CROP_SIZE)?;
        let obs_ib = visible
            .iter()
            .map(|&i| {
                let p = obs.points[i].expect("visible implies present");
                let (u, v) = apply_crop(&crop, (p[0], p[1]));
                [u, v]
            })
            .collect();
        Ok(FitContext {
            template,
            camera: obs.camera,
            visible,
            obs_ib,
            crop,
            fit_shape: cfg.fit_shape,
            shape_ridge: cfg.shape_ridge,
            base_residuals,
        })
    }

    fn residual_len(&self) -> usize {
        2 * self.visible.len() + if self.fit_shape { SHAPE_PARAMS } else { 0 }
    }

    fn param_len(&self) -> usize {
        POSE_PARAMS + if self.fit_shape { SHAPE_PARAMS } else { 0 }
    }

    fn pack(&self, pose: &Pose8D, residuals: &ResidualSet) -> DVector<f64> {
        let mut x = DVector::zeros(self.param_len());
        x[0] = pose.theta_p;
        x[1] = pose.theta_s;
        x[2] = pose.theta_x;
        x[3] = pose.theta_y;
        x[4] = pose.theta_z;
        x[5] = pose.t.x;
        x[6] = pose.t.y;
        x[7] = pose.t.z;
        if self.fit_shape {
            for i in 0..KEYPOINT_COUNT {
                let r = residuals.0[i];
                x[POSE_PARAMS + 3 * i] = r.x;
                x[POSE_PARAMS + 3 * i + 1] = r.y;
                x[POSE_PARAMS + 3 * i + 2] = r.z;
            }
        }
        x
    }

    fn unpack(&self, x: &DVector<f64>) -> (Pose8D, ResidualSet) {
        let pose = Pose8D {
            theta_p: x[0],
            theta_s: x[1],
            theta_x: x[2],
            theta_y: x[3],
            theta_z: x[4],
            t: Vec3::new(x[5], x[6], x[7]),
        };
        let mut res = self.base_residuals;
        if self.fit_shape {
            for i in 0..KEYPOINT_COUNT {
                res.0[i] = Vec3::new(
                    x[POSE_PARAMS + 3 * i],
                    x[POSE_PARAMS + 3 * i + 1],
                    x[POSE_PARAMS + 3 * i + 2],
                );
            }
        }
        (pose, res)
    }

    /// Wraps periodic angles, clamps the rest, and radially clamps shape
    /// residual vectors to the norm bound.
    fn project(&self, domain: &ParamDomain, x: &DVector<f64>) -> DVector<f64> {
        let (pose, res) = self.unpack(x);
        let pose = domain.project(&pose);
        let mut res = res;
        for v in res.0.iter_mut() {
            let n = v.norm();
            if n > RESIDUAL_NORM_BOUND {
                *v = *v * (RESIDUAL_NORM_BOUND / n);
            }
        }
        self.pack(&pose, &res)
    }

    /// Stacked residual vector whose squared norm is the objective, `None`
    /// when the pose cannot be evaluated.
    fn residual_vec(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let (pose, res) = self.unpack(x);
        let kc = canonical_keypoints(self.template, &res).ok()?;
        let k3d = repose(&kc, &pose).ok()?;
        let half = self.crop.out_size / 2.0;
        let w2d = 1.0 / ((2 * self.visible.len()) as f64).sqrt();
        let mut r = DVector::zeros(self.residual_len());
        for (slot, (&i, obs)) in self.visible.iter().zip(&self.obs_ib).enumerate() {
            let id = KeypointId::from_index(i).expect("valid keypoint index");
            let (u, v) = project_point(&self.camera, k3d[id]).ok()?;
            let (ub, vb) = apply_crop(&self.crop, (u, v));
            r[2 * slot] = (ub - obs[0]) / half * w2d;
            r[2 * slot + 1] = (vb - obs[1]) / half * w2d;
        }
        if self.fit_shape {
            let w3d = (self.shape_ridge / SHAPE_PARAMS as f64).sqrt();
            for i in 0..KEYPOINT_COUNT {
                let v = res.0[i];
                let base = 2 * self.visible.len() + 3 * i;
                r[base] = v.x / RESIDUAL_NORM_BOUND * w3d;
                r[base + 1] = v.y / RESIDUAL_NORM_BOUND * w3d;
                r[base + 2] = v.z / RESIDUAL_NORM_BOUND * w3d;
            }
        }
        Some(r)
    }

    fn objective_of(&self, x: &DVector<f64>) -> f64 {
        match self.residual_vec(x) {
            Some(r) => r.norm_squared(),
            None => PENALTY_OBJECTIVE,
        }
    }

    /// Central-difference Jacobian of the residual vector, one-sided where a
    /// non-periodic parameter sits within one step of its bound. Returns the
    /// matrix and a per-parameter one-sided flag.
    fn numeric_jacobian(
        &self,
        domain: &ParamDomain,
        x: &DVector<f64>,
        h: f64,
        r0: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, Vec<bool>)> {
        let bounds: [Option<crate::synth::Interval>; POSE_PARAMS] = [
            None, // theta_p wraps
            Some(domain.theta_s),
            Some(domain.theta_x),
            None, // theta_y wraps
            Some(domain.theta_z),
            Some(domain.t_x),
            Some(domain.t_y),
            Some(domain.t_z),
        ];
        let n = self.param_len();
        let mut jac = DMatrix::zeros(self.residual_len(), n);
        let mut one_sided = vec![false; n];
        for j in 0..n {
            let bound = if j < POSE_PARAMS { bounds[j] } else { None };
            let room_up = bound.map_or(true, |iv| x[j] + h <= iv.max);
            let room_down = bound.map_or(true, |iv| x[j] - h >= iv.min);
            let col = if room_up && room_down {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                (self.residual_vec(&xp)? - self.residual_vec(&xm)?) / (2.0 * h)
            } else if room_up {
                one_sided[j] = true;
                let mut xp = x.clone();
                xp[j] += h;
                (self.residual_vec(&xp)? - r0) / h
            } else {
                one_sided[j] = true;
                let mut xm = x.clone();
                xm[j] -= h;
                (r0 - self.residual_vec(&xm)?) / h
            };
            jac.set_column(j, &col);
        }
        Some((jac, one_sided))
    }
}

struct LmOutcome {
    x: DVector<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// One Levenberg-Marquardt descent. Steps are accepted only when they
/// decrease the objective, so the iterate sequence is monotone.
fn lm_descend(
    ctx: &FitContext,
    cfg: &SolverConfig,
    start: DVector<f64>,
) -> LmOutcome {
    let mut x = ctx.project(&cfg.domain, &start);
    let mut r = ctx.residual_vec(&x);
    let mut f = r
        .as_ref()
        .map(|r| r.norm_squared())
        .unwrap_or(PENALTY_OBJECTIVE);
    let mut lambda = cfg.lambda_init;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        let Some(r_cur) = r.as_ref() else { break };
        iterations += 1;
        let Some((jac, _)) = ctx.numeric_jacobian(&cfg.domain, &x, cfg.fd_step, r_cur) else {
            break;
        };
        let jt = jac.transpose();
        let grad = &jt * r_cur;
        let hess = &jt * &jac;

        let mut stepped = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = hess.clone();
            for d in 0..damped.nrows() {
                damped[(d, d)] += lambda;
            }
            if let Some(delta) = damped.lu().solve(&(-&grad)) {
                let trial = ctx.project(&cfg.domain, &(&x + delta));
                let r_trial = ctx.residual_vec(&trial);
                let f_trial = r_trial
                    .as_ref()
                    .map(|r| r.norm_squared())
                    .unwrap_or(PENALTY_OBJECTIVE);
                if f_trial < f {
                    let decrease = f - f_trial;
                    x = trial;
                    r = r_trial;
                    f = f_trial;
                    lambda = (lambda / cfg.lambda_factor).max(LAMBDA_MIN);
                    stepped = true;
                    if decrease < cfg.converge_tol {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= cfg.lambda_factor;
        }
        if converged || !stepped {
            break;
        }
    }

    LmOutcome {
        x,
        objective: f,
        iterations,
        converged,
    }
}

/// Reprojection objective for an explicit pose and shape under an
/// observation. Failed evaluations return [`PENALTY_OBJECTIVE`].
pub fn objective(
    obs: &Observation,
    template: &CanonicalTemplate,
    pose: &Pose8D,
    residuals: &ResidualSet,
    cfg: &SolverConfig,
) -> Result<f64, SolveError> {
    let ctx = FitContext::new(obs, template, cfg, *residuals)?;
    Ok(ctx.objective_of(&ctx.pack(pose, residuals)))
}

/// Gradient of [`objective`] with respect to the packed parameters, from the
/// solver's internal Jacobian: grad = 2 J^T r.
pub fn objective_gradient(
    obs: &Observation,
    template: &CanonicalTemplate,
    pose: &Pose8D,
    residuals: &ResidualSet,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, SolveError> {
    let ctx = FitContext::new(obs, template, cfg, *residuals)?;
    let x = ctx.pack(pose, residuals);
    let Some(r) = ctx.residual_vec(&x) else {
        return Err(SolveError::Config(
            "objective is not differentiable at a penalized point".into(),
        ));
    };
    let Some((jac, _)) = ctx.numeric_jacobian(&cfg.domain, &x, cfg.fd_step, &r) else {
        return Err(SolveError::Config(
            "a finite-difference probe left the evaluable region".into(),
        ));
    };
    Ok((2.0 * jac.transpose() * r).iter().copied().collect())
}

/// Translation seed: depth from the pinhole height cue (template height over
/// box pixel height), lateral position by back-projecting the box center,
/// vertical position by back-projecting the box bottom (the root sits on the
/// ground).
fn seed_translation(obs: &Observation, template: &CanonicalTemplate, domain: &ParamDomain) -> Vec3 {
    let k = &template.mean_keypoints;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for id in KeypointId::ALL {
        y_min = y_min.min(k[id].y);
        y_max = y_max.max(k[id].y);
    }
    for wheel in [KeypointId::ForwardWheelCentre, KeypointId::RearWheelCenter] {
        y_min = y_min.min(k[wheel].y - template.wheel_radius);
        y_max = y_max.max(k[wheel].y + template.wheel_radius);
    }
    let template_height = y_max - y_min;
    let cam = &obs.camera;
    let depth = (cam.fy * template_height / obs.bbox.height())
        .clamp(domain.t_z.min - cam.position.z, domain.t_z.max - cam.position.z);
    let (cu, _) = obs.bbox.center();
    Vec3::new(
        domain
            .t_x
            .clamp((cu - cam.cx) * depth / cam.fx + cam.position.x),
        domain
            .t_y
            .clamp((obs.bbox.y_max - cam.cy) * depth / cam.fy + cam.position.y),
        domain.t_z.clamp(depth + cam.position.z),
    )
}

/// Pedal-angle seeds paired with every yaw seed. The two pedals nearly swap
/// under a half-turn of the crank, which leaves a local minimum on the far
/// side of theta_p that a single zero start cannot escape; seeding both
/// antipodes makes the pedal angle recoverable everywhere in its domain.
const PEDAL_STARTS: [f64; 2] = [0.0, 180.0];

/// Steering seeds paired with every (yaw, pedal) seed. Near the +-90 degree
/// ends of the steering range the front assembly turns far enough that a
/// zero-steer start drags yaw into a mirror basin before steering can catch
/// up, so the grid covers the range coarsely.
const STEER_STARTS: [f64; 3] = [-60.0, 0.0, 60.0];

/// Fits the 8D pose (and optionally shape) to an observation.
///
/// Runs one LM descent per (yaw, pedal) seed and keeps the lowest final
/// objective, breaking ties toward the lowest seed index. With `fit_shape`,
/// the winning rigid pose warm-starts a joint pose-plus-shape refinement.
pub fn fit_pose(
    obs: &Observation,
    template: &CanonicalTemplate,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    let rigid_cfg = SolverConfig {
        fit_shape: false,
        ..cfg.clone()
    };
    let ctx = FitContext::new(obs, template, &rigid_cfg, ResidualSet::ZERO)?;
    let t_seed = seed_translation(obs, template, &cfg.domain);

    let mut best: Option<(usize, LmOutcome)> = None;
    let mut per_start =
        Vec::with_capacity(cfg.yaw_starts * PEDAL_STARTS.len() * STEER_STARTS.len());
    for i in 0..cfg.yaw_starts {
        let yaw = -180.0 + 360.0 * i as f64 / cfg.yaw_starts as f64;
        for pedal in PEDAL_STARTS {
            for steer in STEER_STARTS {
                let seed_pose = Pose8D {
                    theta_p: pedal,
                    theta_s: steer,
                    theta_y: yaw,
                    t: t_seed,
                    ..Pose8D::IDENTITY
                };
                let outcome =
                    lm_descend(&ctx, &rigid_cfg, ctx.pack(&seed_pose, &ResidualSet::ZERO));
                per_start.push(outcome.objective);
                let better = match &best {
                    None => true,
                    Some((_, cur)) => outcome.objective < cur.objective,
                };
                if better {
                    best = Some((per_start.len() - 1, outcome));
                }
            }
        }
    }
    let (_, mut winner) = best.expect("yaw_starts >= 1");

    // Steering moves only three keypoints around a tilted axis, so its 1D
    // cost slice can hold a second minimum that hides the true angle from
    // every start. Sweep the angle on a grid from the winner and re-descend
    // once if a lower basin appears; the sweep never increases the result.
    let (win_pose, _) = ctx.unpack(&winner.x);
    let mut sweep_best = (winner.objective, win_pose.theta_s);
    for k in 0..=24 {
        let s = -90.0 + k as f64 * 7.5;
        let cand = Pose8D {
            theta_s: cfg.domain.theta_s.clamp(s),
            ..win_pose
        };
        let f = ctx.objective_of(&ctx.pack(&cand, &ResidualSet::ZERO));
        if f < sweep_best.0 {
            sweep_best = (f, cand.theta_s);
        }
    }
    if sweep_best.1 != win_pose.theta_s {
        let seeded = Pose8D {
            theta_s: sweep_best.1,
            ..win_pose
        };
        let refined = lm_descend(&ctx, &rigid_cfg, ctx.pack(&seeded, &ResidualSet::ZERO));
        if refined.objective < winner.objective {
            winner = LmOutcome {
                iterations: winner.iterations + refined.iterations,
                ..refined
            };
        } else {
            winner.iterations += refined.iterations;
        }
    }

    if cfg.fit_shape {
        let shape_ctx = FitContext::new(obs, template, cfg, ResidualSet::ZERO)?;
        let (pose, _) = ctx.unpack(&winner.x);
        let refined = lm_descend(
            &shape_ctx,
            cfg,
            shape_ctx.pack(&pose, &ResidualSet::ZERO),
        );
        let (pose, residuals) = shape_ctx.unpack(&refined.x);
        return Ok(SolveResult {
            pose,
            residuals,
            objective: refined.objective,
            per_start_objectives: per_start,
            iterations_used: winner.iterations + refined.iterations,
            converged: winner.converged && refined.converged,
        });
    }

    let (pose, residuals) = ctx.unpack(&winner.x);
    Ok(SolveResult {
        pose,
        residuals,
        objective: winner.objective,
        per_start_objectives: per_start,
        iterations_used: winner.iterations,
        converged: winner.converged,
    })
}
