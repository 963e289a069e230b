//! Independent re-derivations used to cross-check the main code paths.
//!
//! Everything here deliberately avoids the implementations it checks:
//! kinematics are rebuilt from explicit 4x4 homogeneous matrices with
//! quaternion axis rotations, and objective derivatives are re-estimated by
//! differencing the scalar objective itself. Agreement between a routine and
//! its oracle is evidence; shared code would make the check vacuous.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Rotation3, Vec3};
use crate::metrics::{iou3d, IouMode};
use crate::model::{
    canonical_keypoints, repose, CanonicalTemplate, KeypointId, KeypointSet3D, OrientedBox3D,
    Pose8D, ResidualSet, KEYPOINT_COUNT, PEDALS, STEERED,
};
use crate::solver::{objective, objective_gradient, Observation, SolveError, SolverConfig};
use crate::synth::{generate_dataset, DatasetConfig, Interval, ParamDomain};

/// Column-vector 4x4 homogeneous transform.
#[derive(Debug, Clone, Copy)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn translation(t: Vec3) -> Mat4 {
        let mut m = Mat4::IDENTITY;
        m.0[0][3] = t.x;
        m.0[1][3] = t.y;
        m.0[2][3] = t.z;
        m
    }

    fn from_linear(r: [[f64; 3]; 3]) -> Mat4 {
        let mut m = Mat4::IDENTITY;
        for i in 0..3 {
            m.0[i][..3].copy_from_slice(&r[i]);
        }
        m
    }

    pub fn rot_x(deg: f64) -> Mat4 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat4::from_linear([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(deg: f64) -> Mat4 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat4::from_linear([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(deg: f64) -> Mat4 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat4::from_linear([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Axis rotation built from the unit quaternion
    /// q = (cos(a/2), sin(a/2) u), expanded to its matrix form.
    pub fn rot_axis(axis: Vec3, deg: f64) -> Mat4 {
        let u = axis * (1.0 / axis.norm());
        let half = deg.to_radians() / 2.0;
        let (s, w) = half.sin_cos();
        let (x, y, z) = (u.x * s, u.y * s, u.z * s);
        Mat4::from_linear([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    pub fn mul(self, o: Mat4) -> Mat4 {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..4).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat4(out)
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3],
        )
    }
}

/// Forward kinematics rebuilt as one homogeneous matrix per keypoint group.
///
/// Steered keypoints get body * steer, pedals get body * pedal, the rest get
/// the body transform alone, where
///
/// ```text
/// steer = T(s1)   rot_axis(s2 - s1, theta_s) T(-s1)
/// pedal = T(axle) rot_x(theta_p)             T(-axle)
/// body  = T(t)    rot_y rot_x rot_z          T(-root)
/// ```
pub fn repose_via_matrices(kc: &KeypointSet3D, pose: &Pose8D) -> KeypointSet3D {
    let s1 = kc[KeypointId::SteeringAxis1];
    let axis = kc[KeypointId::SteeringAxis2] - s1;
    let steer = Mat4::translation(s1)
        .mul(Mat4::rot_axis(axis, pose.theta_s))
        .mul(Mat4::translation(-s1));

    let axle = kc[KeypointId::PedalAxle];
    let pedal = Mat4::translation(axle)
        .mul(Mat4::rot_x(pose.theta_p))
        .mul(Mat4::translation(-axle));

    let root = kc[KeypointId::GroundRoot];
    let body = Mat4::translation(pose.t)
        .mul(Mat4::rot_y(pose.theta_y))
        .mul(Mat4::rot_x(pose.theta_x))
        .mul(Mat4::rot_z(pose.theta_z))
        .mul(Mat4::translation(-root));

    let mut out = KeypointSet3D([Vec3::ZERO; KEYPOINT_COUNT]);
    for id in KeypointId::ALL {
        let m = if STEERED.contains(&id) {
            body.mul(steer)
        } else if PEDALS.contains(&id) {
            body.mul(pedal)
        } else {
            body
        };
        out[id] = m.apply_point(kc[id]);
    }
    out
}

/// Result of one cross-check suite: how many cases ran, the worst observed
/// discrepancy against the stated tolerance, and a message per failure.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl std::fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {}/{} cases passed, worst {:.3e} (tolerance {:.1e})",
            self.name,
            self.cases - self.failures.len(),
            self.cases,
            self.worst,
            self.tolerance,
        )
    }
}

fn sample_interval(rng: &mut ChaCha8Rng, iv: Interval) -> f64 {
    rng.random_range(iv.min..=iv.max)
}

fn sample_domain_pose(rng: &mut ChaCha8Rng, domain: &ParamDomain, margin: f64) -> Pose8D {
    let shrink = |iv: Interval| {
        let pad = iv.width() * margin;
        Interval::new(iv.min + pad, iv.max - pad)
    };
    Pose8D {
        theta_p: sample_interval(rng, shrink(domain.theta_p)),
        theta_s: sample_interval(rng, shrink(domain.theta_s)),
        theta_x: sample_interval(rng, shrink(domain.theta_x)),
        theta_y: sample_interval(rng, shrink(domain.theta_y)),
        theta_z: sample_interval(rng, shrink(domain.theta_z)),
        t: Vec3::new(
            sample_interval(rng, shrink(domain.t_x)),
            sample_interval(rng, shrink(domain.t_y)),
            sample_interval(rng, shrink(domain.t_z)),
        ),
    }
}

/// Shape residuals for suite draws: uniform per component, root pinned to
/// zero to match the dataset sampler's anchoring convention.
fn sample_shape(rng: &mut ChaCha8Rng, spread: f64) -> ResidualSet {
    let mut res = ResidualSet::ZERO;
    for (i, v) in res.0.iter_mut().enumerate() {
        if i == KeypointId::GroundRoot.index() {
            continue;
        }
        *v = Vec3::new(
            rng.random_range(-spread..=spread),
            rng.random_range(-spread..=spread),
            rng.random_range(-spread..=spread),
        );
    }
    res
}

/// Checks the direct forward kinematics against the homogeneous-matrix
/// route on random deformed instances and poses, plus the identity,
/// locality, and within-group rigidity invariants.
pub fn run_kinematics_suite(draws: usize, seed: u64, tolerance: f64) -> SuiteOutcome {
    let template = CanonicalTemplate::default();
    let domain = ParamDomain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;

    // groups whose internal distances each articulation stage preserves
    let steer_group: Vec<KeypointId> = STEERED
        .iter()
        .copied()
        .chain([KeypointId::SteeringAxis1, KeypointId::SteeringAxis2])
        .collect();
    let pedal_group: Vec<KeypointId> = PEDALS
        .iter()
        .copied()
        .chain([KeypointId::PedalAxle])
        .collect();

    for case in 0..draws {
        let res = sample_shape(&mut rng, 0.05);
        let kc = match canonical_keypoints(&template, &res) {
            Ok(kc) => kc,
            Err(e) => {
                failures.push(format!("case {case}: shape rejected: {e}"));
                continue;
            }
        };
        let pose = sample_domain_pose(&mut rng, &domain, 0.0);

        let direct = match repose(&kc, &pose) {
            Ok(k) => k,
            Err(e) => {
                failures.push(format!("case {case}: repose failed: {e}"));
                continue;
            }
        };
        let via_mats = repose_via_matrices(&kc, &pose);
        for id in KeypointId::ALL {
            let d = (direct[id] - via_mats[id]).norm();
            worst = worst.max(d);
            if d > tolerance {
                failures.push(format!(
                    "case {case}: {id:?} differs from the matrix route by {d:.3e} m"
                ));
            }
        }

        // identity pose returns the canonical instance bit for bit
        let ident = repose(&kc, &Pose8D::IDENTITY).expect("identity pose is valid");
        for id in KeypointId::ALL {
            if ident[id] != kc[id] {
                failures.push(format!("case {case}: identity pose moved {id:?}"));
            }
        }

        // articulations touch only their own group
        let steer_only = Pose8D {
            theta_s: pose.theta_s,
            ..Pose8D::IDENTITY
        };
        let steered = repose(&kc, &steer_only).expect("steer-only pose is valid");
        for id in KeypointId::ALL {
            if !STEERED.contains(&id) && steered[id] != kc[id] {
                failures.push(format!("case {case}: steering moved {id:?}"));
            }
        }
        let pedal_only = Pose8D {
            theta_p: pose.theta_p,
            ..Pose8D::IDENTITY
        };
        let pedaled = repose(&kc, &pedal_only).expect("pedal-only pose is valid");
        for id in KeypointId::ALL {
            if !PEDALS.contains(&id) && pedaled[id] != kc[id] {
                failures.push(format!("case {case}: pedaling moved {id:?}"));
            }
        }

        // rigid groups keep their internal distances under the full pose
        for group in [&steer_group, &pedal_group] {
            for (ai, &a) in group.iter().enumerate() {
                for &b in &group[ai + 1..] {
                    let before = (kc[a] - kc[b]).norm();
                    let after = (direct[a] - direct[b]).norm();
                    let d = (before - after).abs();
                    worst = worst.max(d);
                    if d > tolerance {
                        failures.push(format!(
                            "case {case}: {a:?}-{b:?} distance drifted by {d:.3e} m"
                        ));
                    }
                }
            }
        }
    }

    SuiteOutcome {
        name: "kinematics",
        cases: draws,
        worst,
        tolerance,
        failures,
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox3D {
    let rotation = Rotation3::about_y(rng.random_range(-180.0..180.0))
        * Rotation3::about_x(rng.random_range(-30.0..=30.0))
        * Rotation3::about_z(rng.random_range(-30.0..=30.0));
    OrientedBox3D {
        center: Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ),
        rotation,
        half_extents: Vec3::new(
            rng.random_range(0.2..=1.0),
            rng.random_range(0.2..=1.0),
            rng.random_range(0.2..=1.0),
        ),
    }
}

/// Compares the exact oriented-box IoU against a seeded Monte Carlo
/// estimate on random overlapping pairs. Overlap is forced by centering the
/// second box on a point inside the first.
pub fn run_iou_suite(pairs: usize, mc_samples: usize, seed: u64, tolerance: f64) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;

    for case in 0..pairs {
        let a = random_box(&mut rng);
        let mut b = random_box(&mut rng);
        let inside = Vec3::new(
            rng.random_range(-a.half_extents.x..=a.half_extents.x),
            rng.random_range(-a.half_extents.y..=a.half_extents.y),
            rng.random_range(-a.half_extents.z..=a.half_extents.z),
        );
        b.center = a.center + a.rotation.apply(inside);

        let exact = iou3d(&a, &b, IouMode::Exact);
        let mc_seed = rng.random::<u64>();
        let mc = iou3d(
            &a,
            &b,
            IouMode::MonteCarlo {
                samples: mc_samples,
                seed: mc_seed,
            },
        );
        let d = (exact - mc).abs();
        worst = worst.max(d);
        if d > tolerance {
            failures.push(format!(
                "case {case}: exact {exact:.6} vs monte carlo {mc:.6} (|diff| {d:.3e})"
            ));
        }
        if !(0.0..=1.0).contains(&exact) {
            failures.push(format!("case {case}: exact iou {exact} out of range"));
        }
        if exact <= 0.0 {
            failures.push(format!(
                "case {case}: constructed overlapping pair scored zero intersection"
            ));
        }
    }

    SuiteOutcome {
        name: "iou",
        cases: pairs,
        worst,
        tolerance,
        failures,
    }
}

fn perturbed(pose: &Pose8D, residuals: &ResidualSet, idx: usize, delta: f64) -> (Pose8D, ResidualSet) {
    let mut pose = *pose;
    let mut res = *residuals;
    match idx {
        0 => pose.theta_p += delta,
        1 => pose.theta_s += delta,
        2 => pose.theta_x += delta,
        3 => pose.theta_y += delta,
        4 => pose.theta_z += delta,
        5 => pose.t.x += delta,
        6 => pose.t.y += delta,
        7 => pose.t.z += delta,
        _ => {
            let j = idx - 8;
            let v = &mut res.0[j / 3];
            match j % 3 {
                0 => v.x += delta,
                1 => v.y += delta,
                _ => v.z += delta,
            }
        }
    }
    (pose, res)
}

/// Central difference of the scalar objective itself, independent of the
/// solver's residual-vector Jacobian.
pub fn fd_objective_gradient(
    obs: &Observation,
    template: &CanonicalTemplate,
    pose: &Pose8D,
    residuals: &ResidualSet,
    cfg: &SolverConfig,
    h: f64,
) -> Result<Vec<f64>, SolveError> {
    let n = if cfg.fit_shape { 8 + 3 * KEYPOINT_COUNT } else { 8 };
    let mut grad = Vec::with_capacity(n);
    for idx in 0..n {
        let (pp, rp) = perturbed(pose, residuals, idx, h);
        let (pm, rm) = perturbed(pose, residuals, idx, -h);
        let fp = objective(obs, template, &pp, &rp, cfg)?;
        let fm = objective(obs, template, &pm, &rm, cfg)?;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Checks the solver's internal objective gradient against a central
/// difference of the scalar objective at random in-domain states. Poses stay
/// clear of domain edges so both sides use symmetric differences.
pub fn run_gradient_suite(points: usize, seed: u64, rel_tolerance: f64) -> SuiteOutcome {
    let template = CanonicalTemplate::default();
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;

    let data_cfg = DatasetConfig {
        n_templates: 1,
        samples_per_template: 4,
        seed,
        ..DatasetConfig::default()
    };
    let records: Vec<_> = generate_dataset(&data_cfg, &[template.clone()], &Default::default())
        .expect("suite dataset config is valid")
        .collect::<Result<_, _>>()
        .expect("suite dataset generation succeeds");

    for case in 0..points {
        let rec = &records[case % records.len()];
        let obs = Observation::from_record(rec);
        let pose = sample_domain_pose(&mut rng, &cfg.domain, 0.05);
        let res = ResidualSet::ZERO;

        let internal = match objective_gradient(&obs, &template, &pose, &res, &cfg) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("case {case}: internal gradient failed: {e}"));
                continue;
            }
        };
        let fd = match fd_objective_gradient(&obs, &template, &pose, &res, &cfg, 1e-5) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("case {case}: difference oracle failed: {e}"));
                continue;
            }
        };
        for (i, (a, b)) in internal.iter().zip(&fd).enumerate() {
            let err = (a - b).abs();
            let scale = rel_tolerance * b.abs() + 1e-6;
            worst = worst.max(err / (b.abs() + 1e-6 / rel_tolerance));
            if err > scale {
                failures.push(format!(
                    "case {case}: d/dx[{i}] internal {a:.6e} vs difference {b:.6e}"
                ));
            }
        }
    }

    SuiteOutcome {
        name: "gradient",
        cases: points,
        worst,
        tolerance: rel_tolerance,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_route_agrees_with_direct_kinematics_on_a_worked_pose() {
        let kc = CanonicalTemplate::default().mean_keypoints;
        let pose = Pose8D {
            theta_p: 90.0,
            theta_s: 30.0,
            theta_x: 2.0,
            theta_y: 120.0,
            theta_z: -3.0,
            t: Vec3::new(0.4, -0.1, -2.0),
        };
        let direct = repose(&kc, &pose).unwrap();
        let via_mats = repose_via_matrices(&kc, &pose);
        for id in KeypointId::ALL {
            let d = (direct[id] - via_mats[id]).norm();
            assert!(d <= 1e-9, "{:?} differs by {d:.3e} m", id);
        }
    }

    #[test]
    fn quaternion_axis_rotation_matches_basic_axis_matrices() {
        for deg in [-170.0, -45.0, 0.0, 30.0, 90.0, 179.0] {
            let q = Mat4::rot_axis(Vec3::new(0.0, 1.0, 0.0), deg);
            let y = Mat4::rot_y(deg);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((q.0[i][j] - y.0[i][j]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn kinematics_suite_passes_at_small_scale() {
        let outcome = run_kinematics_suite(50, 1, 1e-9);
        assert!(outcome.passed(), "{:?}", outcome.failures);
        assert_eq!(outcome.cases, 50);
    }

    #[test]
    fn iou_suite_passes_at_small_scale() {
        // fewer samples than the full run, so a looser tolerance
        let outcome = run_iou_suite(5, 50_000, 2, 0.02);
        assert!(outcome.passed(), "{:?}", outcome.failures);
    }

    #[test]
    fn gradient_suite_passes_at_small_scale() {
        let outcome = run_gradient_suite(10, 3, 1e-4);
        assert!(outcome.passed(), "{:?}", outcome.failures);
    }
}
