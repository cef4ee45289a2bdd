//! Rigid-body types, the pinhole camera and the rotation distance used by the
//! memory pool, keyframe selection and symmetry handling.
//!
//! Rotations are unit quaternions stored as `(w, x, y, z)` and kept in the
//! `w >= 0` hemisphere so that serialized poses are unique. Every operation
//! that produces a rotation re-normalizes, which keeps long composition chains
//! on the unit sphere.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum depth accepted by [`project`].
pub const MIN_PROJECTION_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Model- or camera-frame point, meters.
pub type Point3<T> = Vec3<T>;

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; the zero vector is returned unchanged.
    pub fn normalize(self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self / n
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Image point `(u, v)` in pixels; `u` runs along columns.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> Point2<T> {
    #[inline]
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    #[inline]
    pub fn distance(self, o: Self) -> T {
        let du = self.u - o.u;
        let dv = self.v - o.v;
        (du * du + dv * dv).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Row-major 3×3 matrix.
pub type Mat3<T> = [[T; 3]; 3];

/// Unit quaternion rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T> {
    w: T,
    x: T,
    y: T,
    z: T,
}

impl<T: Real> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self {
            w: T::one(),
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    /// Builds a rotation from raw quaternion coefficients, normalizing them
    /// unless they are already unit to within rounding (so serialized
    /// rotations reload bit-exact). Returns `None` for a zero or non-finite
    /// quaternion.
    pub fn from_quaternion(w: T, x: T, y: T, z: T) -> Option<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if !n2.is_finite() || n2 <= T::zero() {
            return None;
        }
        if (n2 - T::one()).abs() <= T::lit(8.0) * T::epsilon() {
            return Some(Self { w, x, y, z }.canonical());
        }
        let n = n2.sqrt();
        Some(
            Self {
                w: w / n,
                x: x / n,
                y: y / n,
                z: z / n,
            }
            .canonical(),
        )
    }

    /// `(w, x, y, z)`, unit norm, `w >= 0`.
    pub fn quaternion(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn canonical(self) -> Self {
        if self.w < T::zero() {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    fn renormalized(self) -> Self {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
        .canonical()
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let axis = axis.normalize();
        let half = angle / T::lit(2.0);
        let s = half.sin();
        Self {
            w: half.cos(),
            x: axis.x * s,
            y: axis.y * s,
            z: axis.z * s,
        }
        .renormalized()
    }

    pub fn from_rotation_vector(v: Vec3<T>) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        let (w, k) = if theta < T::lit(1e-4) {
            // sin(θ/2)/θ ≈ 1/2 − θ²/48, cos(θ/2) ≈ 1 − θ²/8 + θ⁴/384
            let w = T::one() - theta2 / T::lit(8.0) + theta2 * theta2 / T::lit(384.0);
            let k = T::lit(0.5) - theta2 / T::lit(48.0);
            (w, k)
        } else {
            let half = theta / T::lit(2.0);
            (half.cos(), half.sin() / theta)
        };
        Self {
            w,
            x: v.x * k,
            y: v.y * k,
            z: v.z * k,
        }
        .renormalized()
    }

    /// Rotation vector (axis × angle) with angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3<T> {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < T::lit(1e-12) {
            return v * (T::lit(2.0) / self.w);
        }
        let angle = T::lit(2.0) * s.atan2(self.w);
        v * (angle / s)
    }

    pub fn rx(angle: T) -> Self {
        Self::from_axis_angle(Vec3::new(T::one(), T::zero(), T::zero()), angle)
    }

    pub fn ry(angle: T) -> Self {
        Self::from_axis_angle(Vec3::new(T::zero(), T::one(), T::zero()), angle)
    }

    pub fn rz(angle: T) -> Self {
        Self::from_axis_angle(Vec3::new(T::zero(), T::zero(), T::one()), angle)
    }

    /// Rotation angle in `[0, π]` from the quaternion.
    pub fn angle(&self) -> T {
        let s = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        T::lit(2.0) * s.atan2(self.w.abs())
    }

    pub fn inverse(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, o: &Self) -> Self {
        let (a, b) = (self, o);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
        .renormalized()
    }

    pub fn rotate(&self, p: Vec3<T>) -> Vec3<T> {
        let q = Vec3::new(self.x, self.y, self.z);
        let two = T::lit(2.0);
        let t = q.cross(p) * two;
        p + t * self.w + q.cross(t)
    }

    pub fn to_matrix(&self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::lit(2.0);
        [
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ]
    }

    /// Converts a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Mat3<T>) -> Self {
        let one = T::one();
        let quarter = T::lit(0.25);
        let tr = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z);
        if tr > m[0][0] && tr > m[1][1] && tr > m[2][2] {
            let s = (one + tr).sqrt() * T::lit(2.0);
            w = quarter * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
            w = (m[2][1] - m[1][2]) / s;
            x = quarter * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = quarter * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = quarter * s;
        }
        Self { w, x, y, z }.renormalized()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(&self) -> Rotation<U> {
        Rotation {
            w: U::lit(self.w.as_f64()),
            x: U::lit(self.x.as_f64()),
            y: U::lit(self.y.as_f64()),
            z: U::lit(self.z.as_f64()),
        }
        .renormalized()
    }
}

/// Rigid transform `X ↦ R·X + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub rotation: Rotation<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Rotation<T>, translation: Vec3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation<T>) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, o: &Self) -> Self {
        Self {
            rotation: self.rotation.compose(&o.rotation),
            translation: self.rotation.rotate(o.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self {
            rotation: r,
            translation: -r.rotate(self.translation),
        }
    }

    pub fn transform_point(&self, p: Point3<T>) -> Point3<T> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.translation.is_finite()
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}

/// Rotation-only distance between two poses, radians in `[0, π]`:
/// `arccos((tr(Raᵀ Rb) − 1) / 2)`. Translations are ignored.
pub fn angular_distance<T: Real>(a: &Pose<T>, b: &Pose<T>) -> T {
    rotation_distance(&a.rotation, &b.rotation)
}

pub fn rotation_distance<T: Real>(a: &Rotation<T>, b: &Rotation<T>) -> T {
    let ma = a.to_matrix();
    let mb = b.to_matrix();
    // tr(Aᵀ B) = Σ_ij A_ij B_ij; the sum order is argument-symmetric.
    let mut tr = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            tr += ma[i][j] * mb[i][j];
        }
    }
    let c = ((tr - T::one()) / T::lit(2.0)).max(-T::one()).min(T::one());
    c.acos()
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let ok = self.fx > zero
            && self.fy > zero
            && self.cx >= zero
            && self.cy >= zero
            && self.cx < T::lit(self.width as f64)
            && self.cy < T::lit(self.height as f64);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Pixel `(row, col)` containing an image point, or `None` outside the image.
    /// Pixel centers sit at integer coordinates.
    pub fn pixel_of(&self, p: Point2<T>) -> Option<(usize, usize)> {
        let c = p.u.round();
        let r = p.v.round();
        if c < T::zero() || r < T::zero() {
            return None;
        }
        let (c, r) = (c.to_usize()?, r.to_usize()?);
        (c < self.width as usize && r < self.height as usize).then_some((r, c))
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project<T: Real>(k: &CameraIntrinsics<T>, p: Point3<T>) -> Result<Point2<T>> {
    if !(p.z > T::lit(MIN_PROJECTION_DEPTH)) {
        return Err(Error::NonPositiveDepth(p.z.as_f64()));
    }
    Ok(Point2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Lifts an image point with known depth into the camera frame.
pub fn back_project<T: Real>(k: &CameraIntrinsics<T>, u: Point2<T>, depth: T) -> Result<Point3<T>> {
    if !depth.is_finite() || depth <= T::zero() {
        return Err(Error::InvalidDepth(depth.as_f64()));
    }
    Ok(Vec3::new(
        (u.u - k.cx) * depth / k.fx,
        (u.v - k.cy) * depth / k.fy,
        depth,
    ))
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    q: [f64; 4],
    t: [f64; 3],
}

impl<T: Real> Serialize for Pose<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        PoseRecord {
            q: q.map(Real::as_f64),
            t: self.translation.to_array().map(Real::as_f64),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Pose<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PoseRecord::deserialize(d)?;
        let [w, x, y, z] = r.q.map(T::lit);
        let rotation = Rotation::from_quaternion(w, x, y, z)
            .ok_or_else(|| serde::de::Error::custom("quaternion must be finite and non-zero"))?;
        let translation = Vec3::from_array(r.t.map(T::lit));
        if !translation.is_finite() {
            return Err(serde::de::Error::custom("translation must be finite"));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Quaternion `[w, x, y, z]`.
impl<T: Real> Serialize for Rotation<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.quaternion().map(Real::as_f64).serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Rotation<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?.map(T::lit);
        Rotation::from_quaternion(w, x, y, z)
            .ok_or_else(|| serde::de::Error::custom("quaternion must be finite and non-zero"))
    }
}

impl<T: Real> Serialize for Vec3<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().map(Real::as_f64).serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Vec3::from_array(<[f64; 3]>::deserialize(d)?.map(T::lit)))
    }
}

impl<T: Real> Serialize for Point2<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.u.as_f64(), self.v.as_f64()].serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Point2<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [u, v] = <[f64; 2]>::deserialize(d)?;
        Ok(Point2::new(T::lit(u), T::lit(v)))
    }
}

impl Rotation<f64> {
    pub fn to_na(&self) -> nalgebra::Matrix3<f64> {
        let m = self.to_matrix();
        nalgebra::Matrix3::from_fn(|i, j| m[i][j])
    }

    /// Nearest rotation (in Frobenius norm) to an arbitrary 3×3 matrix.
    pub fn from_na_orthonormalized(m: &nalgebra::Matrix3<f64>) -> Option<Self> {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u?, svd.v_t?);
        let mut d = nalgebra::Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = u * d * vt;
        let arr = [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ];
        let rot = Self::from_matrix(&arr);
        rot.is_finite().then_some(rot)
    }
}

impl Vec3<f64> {
    pub fn to_na(self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_na(v: &nalgebra::Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}
