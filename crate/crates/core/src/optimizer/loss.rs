use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, CameraIntrinsics, Point2, Point3, Pose, Rotation, Vec3};
use crate::matching::Match2D3D;
use crate::scalar::Real;

/// Depth below which a transformed point counts as behind the camera.
pub const MIN_LOSS_DEPTH: f64 = 1e-6;

/// Cauchy robust cost `(c²/2)·ln(1 + r²/c²)`.
pub fn cauchy<T: Real>(r: T, c: T) -> T {
    let half = T::lit(0.5);
    half * c * c * (r * r / (c * c)).ln_1p()
}

/// `dρ/dr = r / (1 + r²/c²)`.
pub fn cauchy_derivative<T: Real>(r: T, c: T) -> T {
    r / (T::one() + r * r / (c * c))
}

/// IRLS weight `1 / (1 + r²/c²)`.
pub fn cauchy_weight<T: Real>(r: T, c: T) -> T {
    T::one() / (T::one() + r * r / (c * c))
}

/// Cauchy scales and the 3D term weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLossParams {
    /// Pixels.
    pub cauchy_c_2d: f64,
    /// Meters.
    pub cauchy_c_3d: f64,
    pub lambda: f64,
}

impl Default for RobustLossParams {
    fn default() -> Self {
        Self {
            cauchy_c_2d: 2.0,
            cauchy_c_3d: 0.01,
            lambda: 1.0,
        }
    }
}

impl RobustLossParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.cauchy_c_2d, self.cauchy_c_3d, self.lambda]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "robust loss parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Matches from one keyframe, related to the current frame by
/// `delta_pose = fk(current)⁻¹ ∘ fk(keyframe)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub delta_pose: Pose<f64>,
    pub matches: Vec<Match2D3D>,
    /// Keyframe depth at each match pixel, aligned with `matches`.
    pub target_depths: Vec<Option<f64>>,
}

impl Observation {
    /// Observation without depth (only the 2D term applies).
    pub fn without_depth(delta_pose: Pose<f64>, matches: Vec<Match2D3D>) -> Self {
        let n = matches.len();
        Self {
            delta_pose,
            matches,
            target_depths: vec![None; n],
        }
    }

    pub fn depth(&self, j: usize) -> Option<f64> {
        self.target_depths
            .get(j)
            .copied()
            .flatten()
            .filter(|d| d.is_finite() && *d > 0.0)
    }
}

/// Camera-frame point `p ∘ δ` applied to `x`.
#[inline]
fn transformed<T: Real>(pose: &Pose<T>, delta: &Pose<T>, x: Point3<T>) -> Point3<T> {
    pose.transform_point(delta.transform_point(x))
}

/// Reprojection residual `π(p∘δ·X) − u`; `None` behind the camera.
pub fn residual_2d<T: Real>(
    pose: &Pose<T>,
    delta: &Pose<T>,
    x: Point3<T>,
    u: Point2<T>,
    k: &CameraIntrinsics<T>,
) -> Option<[T; 2]> {
    let y = transformed(pose, delta, x);
    if y.z <= T::lit(MIN_LOSS_DEPTH) {
        return None;
    }
    let p = geometry::project(k, y).ok()?;
    Some([p.u - u.u, p.v - u.v])
}

/// 3D residual `p∘δ·X − π⁻¹(u, d)`.
pub fn residual_3d<T: Real>(
    pose: &Pose<T>,
    delta: &Pose<T>,
    x: Point3<T>,
    u: Point2<T>,
    depth: T,
    k: &CameraIntrinsics<T>,
) -> Option<[T; 3]> {
    let obs = geometry::back_project(k, u, depth).ok()?;
    let y = transformed(pose, delta, x);
    Some((y - obs).to_array())
}

/// Applies a local increment `ξ = (ω, τ)`: `R ← Exp(ω)·R`, `t ← t + τ`.
pub fn retract<T: Real>(pose: &Pose<T>, xi: &[T; 6]) -> Pose<T> {
    let dr = Rotation::from_rotation_vector(Vec3::new(xi[0], xi[1], xi[2]));
    Pose::new(
        dr.compose(&pose.rotation),
        pose.translation + Vec3::new(xi[3], xi[4], xi[5]),
    )
}

/// Jacobian of the camera-frame point with respect to `ξ`: `[−[R·z]ₓ | I]`
/// where `z = δ·X`.
fn point_jacobian<T: Real>(pose: &Pose<T>, z: Point3<T>) -> [[T; 6]; 3] {
    let a = pose.rotation.rotate(z);
    let (o, l) = (T::zero(), T::one());
    [
        [o, a.z, -a.y, l, o, o],
        [-a.z, o, a.x, o, l, o],
        [a.y, -a.x, o, o, o, l],
    ]
}

/// Analytic 2×6 Jacobian of [`residual_2d`] with respect to `ξ` at `ξ = 0`.
pub fn jacobian_2d<T: Real>(
    pose: &Pose<T>,
    delta: &Pose<T>,
    x: Point3<T>,
    k: &CameraIntrinsics<T>,
) -> Option<[[T; 6]; 2]> {
    let z = delta.transform_point(x);
    let y = pose.transform_point(z);
    if y.z <= T::lit(MIN_LOSS_DEPTH) {
        return None;
    }
    let iz = T::one() / y.z;
    let dp = [
        [k.fx * iz, T::zero(), -k.fx * y.x * iz * iz],
        [T::zero(), k.fy * iz, -k.fy * y.y * iz * iz],
    ];
    let jy = point_jacobian(pose, z);
    let mut out = [[T::zero(); 6]; 2];
    for r in 0..2 {
        for c in 0..6 {
            out[r][c] = dp[r][0] * jy[0][c] + dp[r][1] * jy[1][c] + dp[r][2] * jy[2][c];
        }
    }
    Some(out)
}

/// Analytic 3×6 Jacobian of [`residual_3d`] with respect to `ξ` at `ξ = 0`.
pub fn jacobian_3d<T: Real>(pose: &Pose<T>, delta: &Pose<T>, x: Point3<T>) -> [[T; 6]; 3] {
    point_jacobian(pose, delta.transform_point(x))
}

/// Robust reprojection loss summed over all observations.
pub fn loss_2d(
    pose: &Pose<f64>,
    obs: &[Observation],
    k: &CameraIntrinsics<f64>,
    params: &RobustLossParams,
) -> f64 {
    let c = params.cauchy_c_2d;
    let behind = cauchy(10.0 * c, c);
    let mut total = 0.0;
    for o in obs {
        for m in &o.matches {
            total += match residual_2d(pose, &o.delta_pose, m.x, m.u, k) {
                Some([a, b]) => cauchy((a * a + b * b).sqrt(), c),
                None => behind,
            };
        }
    }
    total
}

/// Robust 3D loss over matches with valid keyframe depth.
pub fn loss_3d(
    pose: &Pose<f64>,
    obs: &[Observation],
    k: &CameraIntrinsics<f64>,
    params: &RobustLossParams,
) -> f64 {
    let c = params.cauchy_c_3d;
    let mut total = 0.0;
    for o in obs {
        for (j, m) in o.matches.iter().enumerate() {
            let Some(d) = o.depth(j) else { continue };
            if let Some(r) = residual_3d(pose, &o.delta_pose, m.x, m.u, d, k) {
                total += cauchy((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt(), c);
            }
        }
    }
    total
}

/// `loss_2d + λ·loss_3d`.
pub fn total_loss(
    pose: &Pose<f64>,
    obs: &[Observation],
    k: &CameraIntrinsics<f64>,
    params: &RobustLossParams,
) -> f64 {
    loss_2d(pose, obs, k, params) + params.lambda * loss_3d(pose, obs, k, params)
}
