//! Template viewpoints on a Fibonacci sphere and a z-buffered point-splat
//! depth renderer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::geometry::project;
use crate::spatial::PointGrid;
use crate::{CameraIntrinsics, Point2, Point3, Pose, Rotation, Vec3};

/// Golden-angle lattice on the unit sphere:
/// `z_i = 1 − 2(i + ½)/n`, azimuth `i·π(3 − √5)`.
pub fn fibonacci_sphere(n: usize) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidCount("fibonacci_sphere needs n >= 1".into()));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    Ok((0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * golden;
            Vec3::new(r * phi.cos(), r * phi.sin(), z).normalize()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    /// Model frame → camera frame.
    pub camera_pose: Pose,
    pub sphere_index: usize,
    pub inplane_index: usize,
    pub radius: f64,
}

impl Viewpoint {
    /// Camera center in the model frame.
    pub fn camera_center(&self) -> Vec3 {
        self.camera_pose.inverse().translation
    }
}

/// Model → camera pose for a camera at `eye` looking at the origin
/// (x right, y down, z forward). The up hint is `+z`, or `+x` when the viewing
/// direction is within 1e-6 of `±z`.
pub fn look_at_origin(eye: Vec3) -> Pose {
    let forward = (-eye).normalize();
    let mut up = Vec3::new(0.0, 0.0, 1.0);
    if forward.cross(up).norm() < 1e-6 {
        up = Vec3::new(1.0, 0.0, 0.0);
    }
    let x = forward.cross(up).normalize();
    let y = forward.cross(x);
    let m = [x.to_array(), y.to_array(), forward.to_array()];
    let r = Rotation::from_matrix(&m);
    Pose::new(r, -r.rotate(eye))
}

/// `n_sphere × n_inplane` viewpoints; index `s·n_inplane + k` holds sphere point
/// `s` rolled by `2πk/n_inplane` about the optical axis.
pub fn build_viewpoints(n_sphere: usize, n_inplane: usize, radius: f64) -> Result<Vec<Viewpoint>> {
    if n_sphere == 0 || n_inplane == 0 {
        return Err(Error::InvalidCount(format!(
            "n_sphere={n_sphere}, n_inplane={n_inplane}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidRadius(radius));
    }
    let dirs = fibonacci_sphere(n_sphere)?;
    let mut out = Vec::with_capacity(n_sphere * n_inplane);
    for (s, d) in dirs.iter().enumerate() {
        let base = look_at_origin(*d * radius);
        for k in 0..n_inplane {
            let roll = Rotation::rz(std::f64::consts::TAU * k as f64 / n_inplane as f64);
            let camera_pose = Pose::from_rotation(roll).compose(&base);
            out.push(Viewpoint {
                camera_pose,
                sphere_index: s,
                inplane_index: k,
                radius,
            });
        }
    }
    Ok(out)
}

/// Dense depth image in meters, row-major; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

const DEPTH_MAGIC: &[u8; 4] = b"DMAP";

impl DepthMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Valid depth at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        if row >= self.height || col >= self.width {
            return None;
        }
        let d = self.data[row * self.width + col];
        (d > 0.0 && d.is_finite()).then_some(d)
    }

    /// Depth at the pixel containing image point `u`.
    pub fn at_point(&self, u: Point2) -> Option<f32> {
        let c = u.u.round();
        let r = u.v.round();
        if c < 0.0 || r < 0.0 {
            return None;
        }
        self.get(r as usize, c as usize)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    pub fn to_bytes(&self, path: &Path) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(DEPTH_MAGIC);
        codec::put_u32(&mut out, 1);
        codec::put_u32(&mut out, codec::u32_dim(path, self.height, "height")?);
        codec::put_u32(&mut out, codec::u32_dim(path, self.width, "width")?);
        codec::put_f32s(&mut out, &self.data);
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(DEPTH_MAGIC)?;
        r.version(1)?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        let data = r.f32_payload(n)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.to_bytes(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &codec::read_file(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    /// Largest splat radius in pixels.
    pub splat_radius: f64,
    /// Each point's splat covers at most this multiple of its distance to the
    /// nearest other model point (measured on the surface, so the footprint
    /// does not depend on the image scale). Zero disables the limit.
    pub surfel_scale: f64,
    /// A point may own a pixel only if it lies within this distance (meters)
    /// behind the front-most surface there.
    pub depth_tolerance: f64,
    /// Surface slope (depth per unit lateral distance) tolerated inside a
    /// splat before it occludes its neighbors.
    pub depth_slope: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            splat_radius: 2.0,
            surfel_scale: 0.8,
            depth_tolerance: 0.004,
            depth_slope: 1.0,
        }
    }
}

pub const NO_OWNER: u32 = u32::MAX;

/// Depth plus, per pixel, the index of the model point that owns it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub depth: DepthMap,
    /// Model point index per pixel, [`NO_OWNER`] where the depth is invalid.
    pub owner: Vec<u32>,
}

impl RenderedView {
    pub fn owner_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.depth.height || col >= self.depth.width {
            return None;
        }
        let o = self.owner[row * self.depth.width + col];
        (o != NO_OWNER).then_some(o as usize)
    }
}

/// Point-splat rendering in two passes: a z-buffer over splat cones (depth
/// growing with `depth_slope` away from the center), then each pixel is assigned to the nearest-projecting point lying on the front
/// surface (within `depth_tolerance` of the z-buffer). The pixel depth is the
/// owner's camera-frame depth.
pub fn render(
    model: &[Point3],
    pose: &Pose,
    k: &CameraIntrinsics,
    params: &RenderParams,
) -> Result<RenderedView> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let (h, w) = (k.height as usize, k.width as usize);
    let max_rad = params.splat_radius.max(0.0);
    let slope = params.depth_slope.max(0.0) / k.fx;
    let surfels = surfel_radii(model, params);
    // (projection, depth, splat radius)
    let projected: Vec<Option<(Point2, f64, f64)>> = model
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = pose.transform_point(x);
            let rad = splat_radius_px(surfels.as_deref(), i, y.z, k, max_rad);
            project(k, y)
                .ok()
                .filter(|_| y.z > 1e-6)
                .map(|p| (p, y.z, rad))
        })
        .collect();

    let footprint = |p: Point2, rad: f64| {
        let r0 = (p.v - rad).ceil().max(0.0) as i64;
        let r1 = ((p.v + rad).floor() as i64).min(h as i64 - 1);
        let c0 = (p.u - rad).ceil().max(0.0) as i64;
        let c1 = ((p.u + rad).floor() as i64).min(w as i64 - 1);
        (r0, r1, c0, c1)
    };

    let mut zbuf = vec![f64::INFINITY; h * w];
    for &(p, z, rad) in projected.iter().flatten() {
        let (r0, r1, c0, c1) = footprint(p, rad);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (du, dv) = (c as f64 - p.u, r as f64 - p.v);
                let d2 = du * du + dv * dv;
                if d2 <= rad * rad {
                    let i = r as usize * w + c as usize;
                    let zc = z * (1.0 + slope * d2.sqrt());
                    if zc < zbuf[i] {
                        zbuf[i] = zc;
                    }
                }
            }
        }
    }

    let mut owner = vec![NO_OWNER; h * w];
    let mut best = vec![f64::INFINITY; h * w];
    for (idx, proj) in projected.iter().enumerate() {
        let Some((p, z, rad)) = *proj else { continue };
        let (r0, r1, c0, c1) = footprint(p, rad);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (du, dv) = (c as f64 - p.u, r as f64 - p.v);
                let d2 = du * du + dv * dv;
                let i = r as usize * w + c as usize;
                if d2 <= rad * rad && z <= zbuf[i] + params.depth_tolerance && d2 < best[i] {
                    best[i] = d2;
                    owner[i] = idx as u32;
                }
            }
        }
    }

    let mut depth = DepthMap::new(h, w);
    for (i, &o) in owner.iter().enumerate() {
        if o != NO_OWNER {
            depth.data[i] = projected[o as usize]
                .map(|(_, z, _)| z as f32)
                .unwrap_or(0.0);
        }
    }
    Ok(RenderedView { depth, owner })
}

/// Per-point surfel radii in model units, when [`RenderParams::surfel_scale`] is set.
pub(crate) fn surfel_radii(model: &[Point3], params: &RenderParams) -> Option<Vec<f64>> {
    (params.surfel_scale > 0.0 && !model.is_empty()).then(|| {
        let grid = PointGrid::new(model);
        (0..model.len())
            .map(|i| params.surfel_scale * grid.spacing(i))
            .collect()
    })
}

/// Splat radius in pixels of point `i` at camera depth `z`.
pub(crate) fn splat_radius_px(
    surfels: Option<&[f64]>,
    i: usize,
    z: f64,
    k: &CameraIntrinsics,
    max_rad: f64,
) -> f64 {
    surfels.map_or(max_rad, |s| (s[i] * k.fx / z).min(max_rad))
}

/// Depth-only rendering; see [`render`].
pub fn render_depth(
    model: &[Point3],
    viewpoint: &Viewpoint,
    k: &CameraIntrinsics,
    splat_radius: f64,
) -> Result<DepthMap> {
    let params = RenderParams {
        splat_radius,
        ..RenderParams::default()
    };
    Ok(render(model, &viewpoint.camera_pose, k, &params)?.depth)
}

/// Square template intrinsics for a camera at `distance` from the model center
/// such that a bounding sphere of radius `model_radius` spans roughly `fill` of
/// the image width.
pub fn template_intrinsics(
    resolution: u32,
    model_radius: f64,
    distance: f64,
    fill: f64,
) -> Result<CameraIntrinsics> {
    if resolution == 0 {
        return Err(Error::InvalidCount(
            "template resolution must be >= 1".into(),
        ));
    }
    let f = 0.5 * fill * resolution as f64 * distance / model_radius;
    let c = (resolution as f64 - 1.0) / 2.0;
    CameraIntrinsics::new(f, f, c, c, resolution, resolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_distance;

    #[test]
    fn fibonacci_counts_and_norms() {
        assert!(matches!(fibonacci_sphere(0), Err(Error::InvalidCount(_))));
        let one = fibonacci_sphere(1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].norm() - 1.0).abs() < 1e-12);
        let pts = fibonacci_sphere(80).unwrap();
        assert_eq!(pts.len(), 80);
        for p in &pts {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fibonacci_80_min_pairwise_angle_and_centroid() {
        let pts = fibonacci_sphere(80).unwrap();
        let mut min_angle = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let a = pts[i].dot(pts[j]).clamp(-1.0, 1.0).acos();
                min_angle = min_angle.min(a);
            }
        }
        assert!(
            min_angle.to_degrees() > 10.0,
            "min angle {}",
            min_angle.to_degrees()
        );
        let c = pts.iter().fold(Vec3::zeros(), |a, p| a + *p) / 80.0;
        assert!(c.norm() < 0.05);
    }

    #[test]
    fn viewpoint_counts_and_errors() {
        assert_eq!(build_viewpoints(80, 12, 0.3).unwrap().len(), 960);
        assert!(matches!(
            build_viewpoints(0, 12, 1.0),
            Err(Error::InvalidCount(_))
        ));
        assert!(matches!(
            build_viewpoints(1, 0, 1.0),
            Err(Error::InvalidCount(_))
        ));
        assert!(matches!(
            build_viewpoints(1, 1, 0.0),
            Err(Error::InvalidRadius(_))
        ));
    }

    #[test]
    fn single_viewpoint_looks_at_origin() {
        let v = build_viewpoints(1, 1, 1.0).unwrap();
        let o = v[0].camera_pose.transform_point(Vec3::zeros());
        assert!((o - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn viewpoints_on_sphere_and_aimed_at_origin() {
        let r = 0.7;
        for v in build_viewpoints(20, 5, r).unwrap() {
            assert!((v.camera_center().norm() - r).abs() < 1e-9);
            let o = v.camera_pose.transform_point(Vec3::zeros());
            assert!(o.x.abs() < 1e-9 && o.y.abs() < 1e-9 && (o.z - r).abs() < 1e-9);
        }
    }

    #[test]
    fn roll_spacing_is_uniform() {
        let n = 12;
        let vps = build_viewpoints(30, n, 1.0).unwrap();
        for s in vps.chunks(n) {
            for w in s.windows(2) {
                let d = angular_distance(&w[0].camera_pose, &w[1].camera_pose);
                assert!((d - std::f64::consts::TAU / n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn look_at_pole_fallback() {
        for eye in [Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -2.0)] {
            let p = look_at_origin(eye);
            let o = p.transform_point(Vec3::zeros());
            assert!((o - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        }
    }

    fn k_test() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn render_single_point_on_axis() {
        let vp = build_viewpoints(1, 1, 1.0).unwrap()[0];
        let d = render_depth(&[Vec3::zeros()], &vp, &k_test(), 2.0).unwrap();
        assert!((d.get(24, 32).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn render_zbuffer_keeps_nearest() {
        let k = k_test();
        let pts = [Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 1.0)];
        let view = render(&pts, &Pose::identity(), &k, &RenderParams::default()).unwrap();
        assert_eq!(view.depth.get(24, 32), Some(1.0));
        assert_eq!(view.owner_at(24, 32), Some(1));
    }

    #[test]
    fn render_empty_model_fails() {
        let vp = build_viewpoints(1, 1, 1.0).unwrap()[0];
        assert!(matches!(
            render_depth(&[], &vp, &k_test(), 2.0),
            Err(Error::EmptyModel)
        ));
    }

    #[test]
    fn rendered_depth_matches_owner_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model: Vec<Vec3> = (0..2000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let vp = build_viewpoints(7, 1, 0.6).unwrap()[3];
        let k = k_test();
        let params = RenderParams::default();
        let view = render(&model, &vp.camera_pose, &k, &params).unwrap();
        assert!(view.depth.valid_count() > 100);
        // oracle: every valid pixel's depth is a model point's depth whose projection is within the splat radius
        for r in 0..k.height as usize {
            for c in 0..k.width as usize {
                let Some(d) = view.depth.get(r, c) else {
                    continue;
                };
                let found = model.iter().any(|&x| {
                    let y = vp.camera_pose.transform_point(x);
                    let p = project(&k, y).unwrap();
                    (y.z as f32 - d).abs() < 1e-6
                        && p.distance(Point2::new(c as f64, r as f64)) <= params.splat_radius
                });
                assert!(found, "pixel ({r},{c}) depth {d} has no source point");
            }
        }
        let again = render(&model, &vp.camera_pose, &k, &params).unwrap();
        assert_eq!(view, again);
    }

    #[test]
    fn depth_map_io_errors() {
        let p = Path::new("mem.dmap");
        let mut d = DepthMap::new(2, 3);
        d.data[4] = 1.5;
        let bytes = d.to_bytes(p).unwrap();
        assert_eq!(DepthMap::from_bytes(p, &bytes).unwrap(), d);
        assert!(DepthMap::from_bytes(p, &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DepthMap::from_bytes(p, &bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(DepthMap::from_bytes(p, &bad).is_err());
    }
}
