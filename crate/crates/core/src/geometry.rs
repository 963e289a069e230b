//! Rotations, pinhole projection, and 2D box/crop transforms.
//!
//! World frame: right-handed, +X right, +Y down, +Z forward. The ground
//! plane is Y = 0, so points above the ground have negative Y. Angles are
//! degrees throughout and rotations follow the right-hand rule about the
//! named axis.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Depth at or below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera: depth {depth:.6e} <= {MIN_DEPTH:.0e}")]
    BehindCamera { depth: f64 },
    #[error("degenerate 2D box: [{x_min}, {y_min}, {x_max}, {y_max}]")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
}

/// 3D point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for near-zero input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Serialize for Vec3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.z].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}

/// Sine and cosine of an angle in degrees.
///
/// The angle is reduced modulo 360 before conversion to radians, so inputs
/// 360 degrees apart produce bit-identical results.
pub fn deg_sin_cos(deg: f64) -> (f64, f64) {
    deg.rem_euclid(360.0).to_radians().sin_cos()
}

/// Signed wrap of an angle difference into [-180, 180).
pub fn wrap_signed_deg(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}

/// Smaller angular difference between two angles in degrees, in [0, 180].
///
/// The difference is folded to its absolute value before reduction, so the
/// result is bit-identical under argument swap.
pub fn angular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Orthonormal rotation matrix, row-major, determinant +1.
///
/// Constructors guarantee orthonormality; raw construction is crate-private.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3 {
    m: [[f64; 3]; 3],
}

impl Rotation3 {
    pub const IDENTITY: Rotation3 = Rotation3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Right-handed rotation about +X by `deg` degrees.
    pub fn about_x(deg: f64) -> Self {
        let (s, c) = deg_sin_cos(deg);
        Rotation3 {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    /// Right-handed rotation about +Y by `deg` degrees.
    pub fn about_y(deg: f64) -> Self {
        let (s, c) = deg_sin_cos(deg);
        Rotation3 {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    /// Right-handed rotation about +Z by `deg` degrees.
    pub fn about_z(deg: f64) -> Self {
        let (s, c) = deg_sin_cos(deg);
        Rotation3 {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rodrigues rotation by `deg` degrees about an arbitrary axis.
    ///
    /// Returns `None` when the axis is too short to normalize.
    pub fn from_axis_angle(axis: Vec3, deg: f64) -> Option<Self> {
        let u = axis.normalized()?;
        let (s, c) = deg_sin_cos(deg);
        let t = 1.0 - c;
        Some(Rotation3 {
            m: [
                [
                    c + u.x * u.x * t,
                    u.x * u.y * t - u.z * s,
                    u.x * u.z * t + u.y * s,
                ],
                [
                    u.y * u.x * t + u.z * s,
                    c + u.y * u.y * t,
                    u.y * u.z * t - u.x * s,
                ],
                [
                    u.z * u.x * t - u.y * s,
                    u.z * u.y * t + u.x * s,
                    c + u.z * u.z * t,
                ],
            ],
        })
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> Rotation3 {
        let m = &self.m;
        Rotation3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.m[row][col]
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// True when rows are mutually orthogonal unit vectors and det is +1.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let rt = *self * self.transpose();
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((rt.m[i][j] - expect).abs());
            }
        }
        max_dev <= tol && (self.det() - 1.0).abs() <= tol
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, o: Rotation3) -> Rotation3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Rotation3 { m }
    }
}

/// Body rotation from Euler angles in degrees: yaw about +Y applied
/// outermost, i.e. R = R_Y(theta_y) * R_X(theta_x) * R_Z(theta_z).
pub fn rotation_from_euler(theta_x: f64, theta_y: f64, theta_z: f64) -> Rotation3 {
    Rotation3::about_y(theta_y) * Rotation3::about_x(theta_x) * Rotation3::about_z(theta_z)
}

/// Pinhole camera with identity orientation at a fixed world position.
///
/// The default camera sits 0.75 m above the ground plane, 12 m behind the
/// world origin, looking along +Z onto a 512x512 image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            position: Vec3::new(0.0, -0.75, -12.0),
            fx: 1000.0,
            fy: 1000.0,
            cx: 256.0,
            cy: 256.0,
            width: 512,
            height: 512,
        }
    }
}

/// Projects a world point to pixel coordinates on the full image.
///
/// Fails when the point's depth along +Z from the camera is at or below
/// [`MIN_DEPTH`].
pub fn project_point(camera: &Camera, p: Vec3) -> Result<(f64, f64), GeometryError> {
    let depth = p.z - camera.position.z;
    if depth <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { depth });
    }
    let u = camera.fx * (p.x - camera.position.x) / depth + camera.cx;
    let v = camera.fy * (p.y - camera.position.y) / depth + camera.cy;
    Ok((u, v))
}

/// Axis-aligned pixel box on the full image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = BBox2D {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Checks for positive width and height and finite coordinates.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|c| c.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(GeometryError::DegenerateBox {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }
}

/// Similarity transform from full-image pixels to a square crop.
///
/// The crop is centered on the box center and scaled by
/// `out_size / max(width, height)`, so the box's long axis spans the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub center_u: f64,
    pub center_v: f64,
    pub scale: f64,
    pub out_size: f64,
}

/// Builds the crop transform for a detection box.
pub fn crop_from_box(bbox: &BBox2D, out_size: f64) -> Result<CropTransform, GeometryError> {
    bbox.validate()?;
    let (center_u, center_v) = bbox.center();
    Ok(CropTransform {
        center_u,
        center_v,
        scale: out_size / bbox.width().max(bbox.height()),
        out_size,
    })
}

/// Maps full-image pixel coordinates into crop coordinates.
pub fn apply_crop(crop: &CropTransform, uv: (f64, f64)) -> (f64, f64) {
    (
        (uv.0 - crop.center_u) * crop.scale + crop.out_size / 2.0,
        (uv.1 - crop.center_v) * crop.scale + crop.out_size / 2.0,
    )
}
