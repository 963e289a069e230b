//! Canonical bicycle template and articulated forward kinematics.
//!
//! A bicycle instance is 11 named 3D keypoints: a canonical template gives
//! their mean positions, per-keypoint shape residuals deform them, and an
//! 8D pose articulates and places the result in the world:
//!
//! 1. steering rotates the handlebar pair and forward wheel centre about
//!    the directed axis from `steering_axis_1` to `steering_axis_2`;
//! 2. the pedal pair rotates about the lateral (+X) axis through
//!    `pedal_axle`;
//! 3. the body rotation (yaw outermost) is applied about `ground_root`,
//!    which is then translated to `t`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    project_point, rotation_from_euler, BBox2D, Camera, GeometryError, Rotation3, Vec3,
};

/// Number of named keypoints in the model.
pub const KEYPOINT_COUNT: usize = 11;

/// Largest allowed per-keypoint shape residual norm, in meters.
pub const RESIDUAL_NORM_BOUND: f64 = 0.25;

/// Fraction added to each side of a derived 2D detection box.
pub const BBOX_INFLATION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("residual for {id:?} has norm {norm:.4} m, above the {bound} m bound")]
    ResidualOutOfBounds {
        id: KeypointId,
        norm: f64,
        bound: f64,
    },
    #[error("steering axis is degenerate: steering_axis_1 and steering_axis_2 coincide")]
    DegenerateSteeringAxis,
    #[error("keypoint {id:?} failed to project: {source}")]
    Projection {
        id: KeypointId,
        source: GeometryError,
    },
    #[error("derived 2D box is degenerate after clipping to the image")]
    EmptyProjectedBox,
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("failed to read template: {0}")]
    TemplateIo(#[from] std::io::Error),
    #[error("failed to parse template: {0}")]
    TemplateParse(#[from] toml::de::Error),
}

/// Named keypoints in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointId {
    LeftHandle = 0,
    RightHandle = 1,
    ForwardWheelCentre = 2,
    SteeringAxis1 = 3,
    SteeringAxis2 = 4,
    PedalRight = 5,
    PedalLeft = 6,
    PedalAxle = 7,
    Seat = 8,
    GroundRoot = 9,
    RearWheelCenter = 10,
}

impl KeypointId {
    pub const ALL: [KeypointId; KEYPOINT_COUNT] = [
        KeypointId::LeftHandle,
        KeypointId::RightHandle,
        KeypointId::ForwardWheelCentre,
        KeypointId::SteeringAxis1,
        KeypointId::SteeringAxis2,
        KeypointId::PedalRight,
        KeypointId::PedalLeft,
        KeypointId::PedalAxle,
        KeypointId::Seat,
        KeypointId::GroundRoot,
        KeypointId::RearWheelCenter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<KeypointId> {
        KeypointId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            KeypointId::LeftHandle => "left_handle",
            KeypointId::RightHandle => "right_handle",
            KeypointId::ForwardWheelCentre => "forward_wheel_centre",
            KeypointId::SteeringAxis1 => "steering_axis_1",
            KeypointId::SteeringAxis2 => "steering_axis_2",
            KeypointId::PedalRight => "pedal_right",
            KeypointId::PedalLeft => "pedal_left",
            KeypointId::PedalAxle => "pedal_axle",
            KeypointId::Seat => "seat",
            KeypointId::GroundRoot => "ground_root",
            KeypointId::RearWheelCenter => "rear_wheel_center",
        }
    }

    pub fn from_name(name: &str) -> Option<KeypointId> {
        KeypointId::ALL.into_iter().find(|id| id.name() == name)
    }
}

/// Keypoints moved by the steering articulation.
pub const STEERED: [KeypointId; 3] = [
    KeypointId::LeftHandle,
    KeypointId::RightHandle,
    KeypointId::ForwardWheelCentre,
];

/// Keypoints moved by the pedal articulation.
pub const PEDALS: [KeypointId; 2] = [KeypointId::PedalRight, KeypointId::PedalLeft];

/// Edge list connecting keypoints into a drawable frame.
pub const SKELETON_EDGES: &[(KeypointId, KeypointId)] = &[
    (KeypointId::SteeringAxis2, KeypointId::LeftHandle),
    (KeypointId::SteeringAxis2, KeypointId::RightHandle),
    (KeypointId::SteeringAxis2, KeypointId::SteeringAxis1),
    (KeypointId::SteeringAxis1, KeypointId::ForwardWheelCentre),
    (KeypointId::SteeringAxis1, KeypointId::PedalAxle),
    (KeypointId::SteeringAxis2, KeypointId::Seat),
    (KeypointId::Seat, KeypointId::PedalAxle),
    (KeypointId::Seat, KeypointId::RearWheelCenter),
    (KeypointId::PedalAxle, KeypointId::RearWheelCenter),
    (KeypointId::PedalAxle, KeypointId::PedalRight),
    (KeypointId::PedalAxle, KeypointId::PedalLeft),
    (KeypointId::PedalAxle, KeypointId::GroundRoot),
];

/// One 3D position per keypoint, indexed by [`KeypointId`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet3D(pub [Vec3; KEYPOINT_COUNT]);

impl KeypointSet3D {
    pub fn iter(&self) -> impl Iterator<Item = (KeypointId, Vec3)> + '_ {
        KeypointId::ALL.into_iter().map(move |id| (id, self[id]))
    }

    pub fn as_array(&self) -> &[Vec3; KEYPOINT_COUNT] {
        &self.0
    }
}

impl std::ops::Index<KeypointId> for KeypointSet3D {
    type Output = Vec3;
    fn index(&self, id: KeypointId) -> &Vec3 {
        &self.0[id.index()]
    }
}

impl std::ops::IndexMut<KeypointId> for KeypointSet3D {
    fn index_mut(&mut self, id: KeypointId) -> &mut Vec3 {
        &mut self.0[id.index()]
    }
}

/// Per-keypoint additive shape offsets, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet(pub [Vec3; KEYPOINT_COUNT]);

impl ResidualSet {
    pub const ZERO: ResidualSet = ResidualSet([Vec3::ZERO; KEYPOINT_COUNT]);

    /// Largest per-keypoint offset norm.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<KeypointId> for ResidualSet {
    type Output = Vec3;
    fn index(&self, id: KeypointId) -> &Vec3 {
        &self.0[id.index()]
    }
}

impl std::ops::IndexMut<KeypointId> for ResidualSet {
    fn index_mut(&mut self, id: KeypointId) -> &mut Vec3 {
        &mut self.0[id.index()]
    }
}

/// Articulated pose: pedal and steering angles, body Euler angles (all in
/// degrees), and the world position of the ground root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseWire", into = "PoseWire")]
pub struct Pose8D {
    pub theta_p: f64,
    pub theta_s: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
    pub t: Vec3,
}

impl Pose8D {
    pub const IDENTITY: Pose8D = Pose8D {
        theta_p: 0.0,
        theta_s: 0.0,
        theta_x: 0.0,
        theta_y: 0.0,
        theta_z: 0.0,
        t: Vec3::ZERO,
    };

    /// Body rotation matrix for the Euler part of the pose.
    pub fn rotation(&self) -> Rotation3 {
        rotation_from_euler(self.theta_x, self.theta_y, self.theta_z)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseWire {
    theta_p: f64,
    theta_s: f64,
    theta_x: f64,
    theta_y: f64,
    theta_z: f64,
    tx: f64,
    ty: f64,
    tz: f64,
}

impl From<PoseWire> for Pose8D {
    fn from(w: PoseWire) -> Self {
        Pose8D {
            theta_p: w.theta_p,
            theta_s: w.theta_s,
            theta_x: w.theta_x,
            theta_y: w.theta_y,
            theta_z: w.theta_z,
            t: Vec3::new(w.tx, w.ty, w.tz),
        }
    }
}

impl From<Pose8D> for PoseWire {
    fn from(p: Pose8D) -> Self {
        PoseWire {
            theta_p: p.theta_p,
            theta_s: p.theta_s,
            theta_x: p.theta_x,
            theta_y: p.theta_y,
            theta_z: p.theta_z,
            tx: p.t.x,
            ty: p.t.y,
            tz: p.t.z,
        }
    }
}

/// Box with arbitrary orientation: center, rotation, and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox3D {
    pub center: Vec3,
    pub rotation: Rotation3,
    pub half_extents: Vec3,
}

impl OrientedBox3D {
    /// The eight corners; bit i of the corner index selects the sign of
    /// axis i (x, y, z).
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        std::array::from_fn(|i| {
            let local = Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
            self.center + self.rotation.apply(local)
        })
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }
}

/// Canonical bicycle shape: mean keypoints plus frame constants.
///
/// The canonical frame puts `ground_root` at the origin on the ground plane
/// (Y = 0), with the bicycle facing +Z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTemplate {
    pub mean_keypoints: KeypointSet3D,
    pub wheel_radius: f64,
    pub crank_length: f64,
    pub pedal_lateral_offset: f64,
    pub box_margin: f64,
}

impl Default for CanonicalTemplate {
    fn default() -> Self {
        let mut k = KeypointSet3D([Vec3::ZERO; KEYPOINT_COUNT]);
        k[KeypointId::LeftHandle] = Vec3::new(-0.21, -1.00, 0.33);
        k[KeypointId::RightHandle] = Vec3::new(0.21, -1.00, 0.33);
        k[KeypointId::ForwardWheelCentre] = Vec3::new(0.0, -0.34, 0.56);
        k[KeypointId::SteeringAxis1] = Vec3::new(0.0, -0.70, 0.44);
        k[KeypointId::SteeringAxis2] = Vec3::new(0.0, -0.98, 0.35);
        k[KeypointId::PedalRight] = Vec3::new(0.10, -0.29, 0.17);
        k[KeypointId::PedalLeft] = Vec3::new(-0.10, -0.29, -0.17);
        k[KeypointId::PedalAxle] = Vec3::new(0.0, -0.29, 0.0);
        k[KeypointId::Seat] = Vec3::new(0.0, -0.95, -0.20);
        k[KeypointId::GroundRoot] = Vec3::ZERO;
        k[KeypointId::RearWheelCenter] = Vec3::new(0.0, -0.34, -0.46);
        CanonicalTemplate {
            mean_keypoints: k,
            wheel_radius: 0.34,
            crank_length: 0.17,
            pedal_lateral_offset: 0.10,
            box_margin: 0.03,
        }
    }
}

const PEDAL_GEOMETRY_TOL: f64 = 1e-9;

impl CanonicalTemplate {
    /// Checks the structural invariants of the canonical frame.
    ///
    /// `ground_root` must sit at the origin and be the lowest keypoint, the
    /// steering axis must have nonzero length, each pedal must sit at its
    /// lateral offset and at crank-length radius from the axle in the
    /// rotation plane, and the two pedals must be half a turn apart.
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |msg: String| Err(ModelError::InvalidTemplate(msg));
        let k = &self.mean_keypoints;

        for (id, p) in k.iter() {
            if ![p.x, p.y, p.z].iter().all(|c| c.is_finite()) {
                return invalid(format!("{} has a non-finite coordinate", id.name()));
            }
        }
        for &(v, name) in &[
            (self.wheel_radius, "wheel_radius"),
            (self.crank_length, "crank_length"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        for &(v, name) in &[
            (self.pedal_lateral_offset, "pedal_lateral_offset"),
            (self.box_margin, "box_margin"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be non-negative, got {v}"));
            }
        }

        let root = k[KeypointId::GroundRoot];
        if root.norm() > 1e-12 {
            return invalid(format!(
                "ground_root must be at the origin, got [{}, {}, {}]",
                root.x, root.y, root.z
            ));
        }
        for (id, p) in k.iter() {
            if id != KeypointId::GroundRoot && p.y > 0.0 {
                return invalid(format!(
                    "{} lies below the ground plane (y = {} > 0)",
                    id.name(),
                    p.y
                ));
            }
        }

        let axis = k[KeypointId::SteeringAxis2] - k[KeypointId::SteeringAxis1];
        if axis.norm() < 1e-6 {
            return invalid("steering axis endpoints coincide".to_string());
        }

        let axle = k[KeypointId::PedalAxle];
        for (id, sign) in [(KeypointId::PedalRight, 1.0), (KeypointId::PedalLeft, -1.0)] {
            let rel = k[id] - axle;
            let want_x = sign * self.pedal_lateral_offset;
            if (rel.x - want_x).abs() > PEDAL_GEOMETRY_TOL {
                return invalid(format!(
                    "{} lateral offset is {}, expected {}",
                    id.name(),
                    rel.x,
                    want_x
                ));
            }
            let radius = (rel.y * rel.y + rel.z * rel.z).sqrt();
            if (radius - self.crank_length).abs() > PEDAL_GEOMETRY_TOL {
                return invalid(format!(
                    "{} crank radius is {radius}, expected {}",
                    id.name(),
                    self.crank_length
                ));
            }
        }
        let pr = k[KeypointId::PedalRight] - axle;
        let pl = k[KeypointId::PedalLeft] - axle;
        if (pr.y + pl.y).abs() > PEDAL_GEOMETRY_TOL || (pr.z + pl.z).abs() > PEDAL_GEOMETRY_TOL {
            return invalid("pedals are not half a turn apart".to_string());
        }
        Ok(())
    }

    /// Parses a template from its TOML document form and validates it.
    pub fn from_toml_str(text: &str) -> Result<CanonicalTemplate, ModelError> {
        let wire: TemplateWire = toml::from_str(text)?;
        let mut k = KeypointSet3D([Vec3::ZERO; KEYPOINT_COUNT]);
        let mut seen = [false; KEYPOINT_COUNT];
        for (name, [x, y, z]) in &wire.keypoints {
            let id = KeypointId::from_name(name).ok_or_else(|| {
                ModelError::InvalidTemplate(format!("unknown keypoint name {name:?}"))
            })?;
            k[id] = Vec3::new(*x, *y, *z);
            seen[id.index()] = true;
        }
        if let Some(missing) = KeypointId::ALL.into_iter().find(|id| !seen[id.index()]) {
            return Err(ModelError::InvalidTemplate(format!(
                "missing keypoint {}",
                missing.name()
            )));
        }
        let t = CanonicalTemplate {
            mean_keypoints: k,
            wheel_radius: wire.wheel_radius,
            crank_length: wire.crank_length,
            pedal_lateral_offset: wire.pedal_lateral_offset,
            box_margin: wire.box_margin,
        };
        t.validate()?;
        Ok(t)
    }

    /// Renders the template as a TOML document.
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        out.push_str("# Canonical bicycle template. Units are meters.\n");
        out.push_str("# Frame: +X right, +Y down, +Z forward; ground plane is Y = 0.\n\n");
        out.push_str(&format!("wheel_radius = {}\n", self.wheel_radius));
        out.push_str(&format!("crank_length = {}\n", self.crank_length));
        out.push_str(&format!(
            "pedal_lateral_offset = {}\n",
            self.pedal_lateral_offset
        ));
        out.push_str(&format!("box_margin = {}\n\n[keypoints]\n", self.box_margin));
        for (id, p) in self.mean_keypoints.iter() {
            out.push_str(&format!("{} = [{}, {}, {}]\n", id.name(), p.x, p.y, p.z));
        }
        out
    }

    pub fn load(path: &Path) -> Result<CanonicalTemplate, ModelError> {
        CanonicalTemplate::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(std::fs::write(path, self.to_toml_string())?)
    }
}

#[derive(Deserialize)]
struct TemplateWire {
    wheel_radius: f64,
    crank_length: f64,
    pedal_lateral_offset: f64,
    box_margin: f64,
    keypoints: std::collections::BTreeMap<String, [f64; 3]>,
}

/// Canonical instance keypoints: template means plus shape residuals.
///
/// Fails when any residual norm exceeds [`RESIDUAL_NORM_BOUND`].
pub fn canonical_keypoints(
    template: &CanonicalTemplate,
    residuals: &ResidualSet,
) -> Result<KeypointSet3D, ModelError> {
    let mut out = template.mean_keypoints;
    for id in KeypointId::ALL {
        let r = residuals[id];
        let norm = r.norm();
        if norm > RESIDUAL_NORM_BOUND {
            return Err(ModelError::ResidualOutOfBounds {
                id,
                norm,
                bound: RESIDUAL_NORM_BOUND,
            });
        }
        out[id] = out[id] + r;
    }
    Ok(out)
}

/// Applies the two articulations in the canonical frame.
///
/// Steering rotates the steered triple about the directed axis from
/// `steering_axis_1` to `steering_axis_2`; the pedals rotate about the +X
/// axis through `pedal_axle`. All other keypoints are left untouched, and a
/// zero angle leaves its group bit-identical.
pub fn apply_articulation(
    kc: &KeypointSet3D,
    theta_s: f64,
    theta_p: f64,
) -> Result<KeypointSet3D, ModelError> {
    let mut out = *kc;
    if theta_s != 0.0 {
        let anchor = kc[KeypointId::SteeringAxis1];
        let axis = kc[KeypointId::SteeringAxis2] - anchor;
        let rot = Rotation3::from_axis_angle(axis, theta_s)
            .ok_or(ModelError::DegenerateSteeringAxis)?;
        for id in STEERED {
            out[id] = anchor + rot.apply(kc[id] - anchor);
        }
    }
    if theta_p != 0.0 {
        let axle = kc[KeypointId::PedalAxle];
        let rot = Rotation3::about_x(theta_p);
        for id in PEDALS {
            out[id] = axle + rot.apply(kc[id] - axle);
        }
    }
    Ok(out)
}

/// Full forward kinematics: articulation, body rotation about the ground
/// root, then translation of the root to `pose.t`.
pub fn repose(kc: &KeypointSet3D, pose: &Pose8D) -> Result<KeypointSet3D, ModelError> {
    let articulated = apply_articulation(kc, pose.theta_s, pose.theta_p)?;
    let root = kc[KeypointId::GroundRoot];
    let rot = pose.rotation();
    let mut out = articulated;
    for id in KeypointId::ALL {
        out[id] = rot.apply(articulated[id] - root) + pose.t;
    }
    Ok(out)
}

/// Projects all 11 keypoints to full-image pixels.
pub fn project_keypoints(
    camera: &Camera,
    keypoints: &KeypointSet3D,
) -> Result<[[f64; 2]; KEYPOINT_COUNT], ModelError> {
    let mut out = [[0.0; 2]; KEYPOINT_COUNT];
    for id in KeypointId::ALL {
        let (u, v) =
            project_point(camera, keypoints[id]).map_err(|source| ModelError::Projection {
                id,
                source,
            })?;
        out[id.index()] = [u, v];
    }
    Ok(out)
}

/// Points that bound the physical bicycle: the keypoints plus the wheel rims
/// sampled at cardinal directions (centers offset by the wheel radius along
/// Y and Z).
fn extent_points(template: &CanonicalTemplate, keypoints: &KeypointSet3D) -> Vec<Vec3> {
    let mut pts: Vec<Vec3> = keypoints.as_array().to_vec();
    let r = template.wheel_radius;
    for wheel in [KeypointId::ForwardWheelCentre, KeypointId::RearWheelCenter] {
        let c = keypoints[wheel];
        pts.push(c + Vec3::new(0.0, r, 0.0));
        pts.push(c + Vec3::new(0.0, -r, 0.0));
        pts.push(c + Vec3::new(0.0, 0.0, r));
        pts.push(c + Vec3::new(0.0, 0.0, -r));
    }
    pts
}

/// Axis-aligned box in the canonical frame covering keypoints and wheel
/// extents, with `box_margin` widening the thin lateral axis.
pub fn bounding_box_3d(template: &CanonicalTemplate, kc: &KeypointSet3D) -> OrientedBox3D {
    let pts = extent_points(template, kc);
    let mut min = pts[0];
    let mut max = pts[0];
    for p in &pts[1..] {
        min = Vec3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
        max = Vec3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
    }
    min.x -= template.box_margin;
    max.x += template.box_margin;
    OrientedBox3D {
        center: (min + max) * 0.5,
        rotation: Rotation3::IDENTITY,
        half_extents: (max - min) * 0.5,
    }
}

/// Moves a canonical-frame box by the rigid part of a pose: rotation about
/// the canonical origin, then translation.
pub fn repose_box(bbox: &OrientedBox3D, pose: &Pose8D) -> OrientedBox3D {
    let rot = pose.rotation();
    OrientedBox3D {
        center: rot.apply(bbox.center) + pose.t,
        rotation: rot * bbox.rotation,
        half_extents: bbox.half_extents,
    }
}

/// Detector-style 2D box: the tight box over projected keypoints and wheel
/// extents, inflated by [`BBOX_INFLATION`] per side, clipped to the image.
pub fn derive_bbox2d(
    camera: &Camera,
    template: &CanonicalTemplate,
    keypoints: &KeypointSet3D,
) -> Result<BBox2D, ModelError> {
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for p in extent_points(template, keypoints) {
        let (u, v) = project_point(camera, p).map_err(|source| ModelError::Projection {
            id: KeypointId::GroundRoot,
            source,
        })?;
        min_u = min_u.min(u);
        max_u = max_u.max(u);
        min_v = min_v.min(v);
        max_v = max_v.max(v);
    }
    let du = BBOX_INFLATION * (max_u - min_u);
    let dv = BBOX_INFLATION * (max_v - min_v);
    let b = BBox2D {
        x_min: (min_u - du).max(0.0),
        y_min: (min_v - dv).max(0.0),
        x_max: (max_u + du).min(camera.width as f64),
        y_max: (max_v + dv).min(camera.height as f64),
    };
    b.validate().map_err(|_| ModelError::EmptyProjectedBox)?;
    Ok(b)
}
