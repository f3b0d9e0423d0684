//! Frames, handedness and pinhole projection.
//!
//! World units are centimeters. A [`CoordinateFrame`] places the prompt's
//! coordinate system in the world; a [`CameraModel`] maps world points to
//! pixels (u rightward, v downward, origin at the top-left corner).

use core::fmt;
use core::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Tolerance used for unit-norm, orthogonality and determinant checks.
pub const BASIS_TOL: f64 = 1e-9;
/// Points at or closer than this depth cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;
/// Smallest angle accepted between the two axis hints, in radians.
pub const MIN_HINT_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("axis hints are zero or parallel")]
    DegenerateAxes,
    #[error("unit length must be positive, got {0}")]
    NonPositiveUnit(f64),
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid frame: {0}")]
    InvalidFrame(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "[f64; 3]", into = "[f64; 3]"))]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    /// Unit vector in the same direction, or `None` for a zero or non-finite vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn component_min(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x.min(other.x), self.y.min(other.y), self.z.min(other.z))
    }

    pub fn component_max(self, other: Vec3) -> Vec3 {
        Vec3::new(self.x.max(other.x), self.y.max(other.y), self.z.max(other.z))
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Row-major 3×3 matrix. Serialized as 9 floats, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "[f64; 9]", into = "[f64; 9]"))]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3 {
            rows: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3::from_rows(c0, c1, c2).transpose()
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from(self.rows[i])
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3 {
            rows: [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let ot = o.transpose();
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.row(i).dot(ot.row(j));
            }
        }
        Mat3 { rows }
    }

    pub fn determinant(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    /// Orthonormal with determinant +1, within [`BASIS_TOL`].
    pub fn is_rotation(&self) -> bool {
        let rrt = self.mul_mat(&self.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if !(libm::fabs(rrt.rows[i][j] - expect) <= BASIS_TOL) {
                    return false;
                }
            }
        }
        libm::fabs(self.determinant() - 1.0) <= BASIS_TOL
    }

    /// Rotation about an axis through the origin (Rodrigues).
    pub fn rotation_about(axis: Vec3, angle: f64) -> Option<Mat3> {
        let k = axis.normalized()?;
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let t = 1.0 - c;
        Some(Mat3 {
            rows: [
                [t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y],
                [t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x],
                [t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c],
            ],
        })
    }
}

impl From<[f64; 9]> for Mat3 {
    fn from(a: [f64; 9]) -> Self {
        Mat3 {
            rows: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
        }
    }
}

impl From<Mat3> for [f64; 9] {
    fn from(m: Mat3) -> Self {
        let r = m.rows;
        [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    /// Sign of the axis determinant for frames of this handedness.
    pub fn sign(self) -> f64 {
        match self {
            Handedness::Right => 1.0,
            Handedness::Left => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Handedness::Left => "left",
            Handedness::Right => "right",
        }
    }
}

/// The prompt's coordinate system placed in the world.
///
/// Axes are unit vectors in world coordinates; Z is always derived from X and
/// Y according to the handedness tag.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawFrame", into = "RawFrame"))]
pub struct CoordinateFrame {
    origin: Vec3,
    axis_x: Vec3,
    axis_y: Vec3,
    axis_z: Vec3,
    handedness: Handedness,
    unit_length: f64,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
struct RawFrame {
    origin: Vec3,
    axis_x: Vec3,
    axis_y: Vec3,
    axis_z: Vec3,
    handedness: Handedness,
    unit_length: f64,
}

#[cfg(feature = "serde")]
impl TryFrom<RawFrame> for CoordinateFrame {
    type Error = GeometryError;
    fn try_from(r: RawFrame) -> Result<Self, GeometryError> {
        CoordinateFrame::from_parts(r.origin, r.axis_x, r.axis_y, r.axis_z, r.handedness, r.unit_length)
    }
}

#[cfg(feature = "serde")]
impl From<CoordinateFrame> for RawFrame {
    fn from(f: CoordinateFrame) -> Self {
        RawFrame {
            origin: f.origin,
            axis_x: f.axis_x,
            axis_y: f.axis_y,
            axis_z: f.axis_z,
            handedness: f.handedness,
            unit_length: f.unit_length,
        }
    }
}

/// Builds a frame from direction hints.
///
/// X is the normalized `x_hint`; Y is `y_hint` with its X component removed
/// (Gram–Schmidt, X dominant); Z is `X × Y` for right-handed frames and its
/// negation for left-handed ones.
pub fn build_frame(origin: Vec3, x_hint: Vec3, y_hint: Vec3, handedness: Handedness, unit_length: f64) -> Result<CoordinateFrame, GeometryError> {
    if !(unit_length > 0.0) || !unit_length.is_finite() {
        return Err(GeometryError::NonPositiveUnit(unit_length));
    }
    if !origin.is_finite() {
        return Err(GeometryError::InvalidFrame("origin is not finite"));
    }
    let x = x_hint.normalized().ok_or(GeometryError::DegenerateAxes)?;
    let y_unit = y_hint.normalized().ok_or(GeometryError::DegenerateAxes)?;
    // sin of the angle between the hints
    if x.cross(y_unit).norm() < libm::sin(MIN_HINT_ANGLE) {
        return Err(GeometryError::DegenerateAxes);
    }
    let y = (y_unit - x * y_unit.dot(x)).normalized().ok_or(GeometryError::DegenerateAxes)?;
    let z = match handedness {
        Handedness::Right => x.cross(y),
        Handedness::Left => -x.cross(y),
    };
    Ok(CoordinateFrame {
        origin,
        axis_x: x,
        axis_y: y,
        axis_z: z,
        handedness,
        unit_length,
    })
}

impl CoordinateFrame {
    /// Canonical frame: world axes, given origin.
    pub fn canonical(origin: Vec3, handedness: Handedness, unit_length: f64) -> Result<Self, GeometryError> {
        build_frame(origin, Vec3::X, Vec3::Y, handedness, unit_length)
    }

    /// Validating constructor for explicitly supplied axes.
    pub fn from_parts(origin: Vec3, axis_x: Vec3, axis_y: Vec3, axis_z: Vec3, handedness: Handedness, unit_length: f64) -> Result<Self, GeometryError> {
        if !(unit_length > 0.0) || !unit_length.is_finite() {
            return Err(GeometryError::NonPositiveUnit(unit_length));
        }
        if !(origin.is_finite() && axis_x.is_finite() && axis_y.is_finite() && axis_z.is_finite()) {
            return Err(GeometryError::InvalidFrame("non-finite component"));
        }
        let close = |a: f64, b: f64| libm::fabs(a - b) <= BASIS_TOL;
        for a in [axis_x, axis_y, axis_z] {
            if !close(a.norm(), 1.0) {
                return Err(GeometryError::InvalidFrame("axis is not unit length"));
            }
        }
        if !close(axis_x.dot(axis_y), 0.0) || !close(axis_y.dot(axis_z), 0.0) || !close(axis_x.dot(axis_z), 0.0) {
            return Err(GeometryError::InvalidFrame("axes are not orthogonal"));
        }
        let det = Mat3::from_cols(axis_x, axis_y, axis_z).determinant();
        if !close(det, handedness.sign()) {
            return Err(GeometryError::InvalidFrame("determinant does not match handedness"));
        }
        Ok(CoordinateFrame {
            origin,
            axis_x,
            axis_y,
            axis_z,
            handedness,
            unit_length,
        })
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }
    pub fn axis_x(&self) -> Vec3 {
        self.axis_x
    }
    pub fn axis_y(&self) -> Vec3 {
        self.axis_y
    }
    pub fn axis_z(&self) -> Vec3 {
        self.axis_z
    }
    pub fn handedness(&self) -> Handedness {
        self.handedness
    }
    pub fn unit_length(&self) -> f64 {
        self.unit_length
    }

    pub fn axis(&self, axis: Axis) -> Vec3 {
        match axis {
            Axis::X => self.axis_x,
            Axis::Y => self.axis_y,
            Axis::Z => self.axis_z,
        }
    }

    /// Matrix whose columns are the axes.
    pub fn basis(&self) -> Mat3 {
        Mat3::from_cols(self.axis_x, self.axis_y, self.axis_z)
    }

    pub fn with_unit_length(mut self, unit_length: f64) -> Result<Self, GeometryError> {
        if !(unit_length > 0.0) || !unit_length.is_finite() {
            return Err(GeometryError::NonPositiveUnit(unit_length));
        }
        self.unit_length = unit_length;
        Ok(self)
    }

    pub fn frame_to_world(&self, local: Vec3) -> Vec3 {
        self.origin + self.axis_x * local.x + self.axis_y * local.y + self.axis_z * local.z
    }

    /// Inverse of [`frame_to_world`](Self::frame_to_world); the axes are
    /// orthonormal so the inverse basis is its transpose.
    pub fn world_to_frame(&self, world: Vec3) -> Vec3 {
        let d = world - self.origin;
        Vec3::new(d.dot(self.axis_x), d.dot(self.axis_y), d.dot(self.axis_z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        }
    }
}

/// Pixel coordinates: u rightward, v downward, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(self, o: Pixel) -> f64 {
        libm::hypot(self.u - o.u, self.v - o.v)
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Pinhole camera without distortion. `rotation` and `translation` map world
/// points to the camera frame (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawCamera", into = "RawCamera"))]
pub struct CameraModel {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Mat3,
    translation: Vec3,
    width: u32,
    height: u32,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
struct RawCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Mat3,
    translation: Vec3,
    width: u32,
    height: u32,
}

#[cfg(feature = "serde")]
impl TryFrom<RawCamera> for CameraModel {
    type Error = GeometryError;
    fn try_from(r: RawCamera) -> Result<Self, GeometryError> {
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.rotation, r.translation, r.width, r.height)
    }
}

#[cfg(feature = "serde")]
impl From<CameraModel> for RawCamera {
    fn from(c: CameraModel) -> Self {
        RawCamera {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: c.rotation,
            translation: c.translation,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Mat3, translation: Vec3, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite() && translation.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite parameter"));
        }
        if !rotation.is_rotation() {
            return Err(GeometryError::InvalidCamera("rotation is not a proper rotation"));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be positive"));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` projecting to image-up.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalized().ok_or(GeometryError::InvalidCamera("eye coincides with target"))?;
        let right = forward
            .cross(up)
            .normalized()
            .ok_or(GeometryError::InvalidCamera("up is parallel to the view direction"))?;
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -rotation.mul_vec(eye);
        CameraModel::new(fx, fy, cx, cy, rotation, translation, width, height)
    }

    /// Square-pixel intrinsics from a horizontal field of view, principal
    /// point at the image center.
    pub fn intrinsics_from_hfov(hfov_deg: f64, width: u32, height: u32) -> (f64, f64, f64, f64) {
        let f = (width as f64 / 2.0) / libm::tan(hfov_deg.to_radians() / 2.0);
        (f, f, width as f64 / 2.0, height as f64 / 2.0)
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn rotation(&self) -> Mat3 {
        self.rotation
    }
    pub fn translation(&self) -> Vec3 {
        self.translation
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn world_to_camera(&self, world: Vec3) -> Vec3 {
        self.rotation.mul_vec(world) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    pub fn depth(&self, world: Vec3) -> f64 {
        self.world_to_camera(world).z
    }

    pub fn project(&self, world: Vec3) -> Result<Pixel, GeometryError> {
        let c = self.world_to_camera(world);
        if !(c.z > MIN_DEPTH) {
            return Err(GeometryError::BehindCamera(c.z));
        }
        Ok(Pixel::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    /// Unit world-space direction of the ray through a pixel.
    pub fn ray_direction(&self, px: Pixel) -> Vec3 {
        let d = Vec3::new((px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy, 1.0);
        let w = self.rotation.transpose().mul_vec(d);
        w / w.norm()
    }

    /// Intersects the ray through `px` with the plane `{p : p·normal = offset}`.
    /// Returns `None` when the ray is parallel to the plane or the hit lies
    /// behind the camera.
    pub fn back_project_to_plane(&self, px: Pixel, normal: Vec3, offset: f64) -> Option<Vec3> {
        let o = self.center();
        let d = self.ray_direction(px);
        let denom = d.dot(normal);
        if libm::fabs(denom) < 1e-12 {
            return None;
        }
        let t = (offset - o.dot(normal)) / denom;
        if !(t > MIN_DEPTH) || !t.is_finite() {
            return None;
        }
        Some(o + d * t)
    }

    pub fn contains(&self, px: Pixel) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }
}
