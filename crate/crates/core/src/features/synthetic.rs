//! Synthetic stand-in for a learned dense feature extractor.
//!
//! Every model point carries a fixed unit descriptor. A rendered view's feature
//! grid copies, per cell, the descriptor of the visible model point owning the
//! cell, optionally perturbed by Gaussian noise, so descriptor matching between
//! two views recovers the shared model points. Descriptors mix a spatially
//! smooth random field (neighboring points look alike, which gives the
//! bag-of-words vocabulary spatially coherent words) with a per-point random
//! component (which keeps exact matches unique). A symmetry rotation may tie
//! the descriptors of symmetric point pairs together, producing genuine pose
//! ambiguity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::feature_map::{normalize_slice, FeatureMap};
use crate::error::{Error, Result};
use crate::geometry::project;
use crate::spatial::PointGrid;
use crate::view_sampling::{
    splat_radius_px, surfel_radii, DepthMap, RenderParams, RenderedView, NO_OWNER,
};
use crate::{CameraIntrinsics, Point2, Point3, Pose, Rotation};

/// Model-frame rotation under which the appearance is invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub rotation: Rotation,
}

impl SymmetrySpec {
    /// Half-turn about a model axis.
    pub fn half_turn(axis: crate::Vec3) -> Self {
        Self {
            rotation: Rotation::from_axis_angle(axis, std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppearanceParams {
    pub dim: usize,
    pub seed: u64,
    /// Share of descriptor energy from the smooth field, in `[0, 1]`.
    pub smooth_weight: f64,
    /// Correlation length of the smooth field relative to the model radius.
    pub length_scale: f64,
    pub symmetry: Option<SymmetrySpec>,
}

impl Default for AppearanceParams {
    fn default() -> Self {
        Self {
            dim: 64,
            seed: 0,
            smooth_weight: 0.5,
            length_scale: 0.2,
            symmetry: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticAppearance {
    dim: usize,
    descriptors: Vec<f32>,
    class_of: Vec<u32>,
}

const FIELD_TERMS: usize = 4;
const BACKGROUND_SEED: u64 = 0x6267_636c_7574;

impl SyntheticAppearance {
    pub fn new(model: &[Point3], params: &AppearanceParams) -> Result<Self> {
        if model.is_empty() {
            return Err(Error::EmptyModel);
        }
        if params.dim == 0 {
            return Err(Error::DimensionMismatch(
                "descriptor dimension must be positive".into(),
            ));
        }
        let dim = params.dim;
        let center = model.iter().fold(Point3::zeros(), |a, p| a + *p) / model.len() as f64;
        let radius = model
            .iter()
            .map(|p| (*p - center).norm())
            .fold(0.0, f64::max)
            .max(1e-9);
        let ell = (params.length_scale * radius).max(1e-12);

        // smooth field: per dimension, a sum of random Fourier features
        let mut field_rng = ChaCha8Rng::seed_from_u64(params.seed);
        field_rng.set_stream(u64::MAX);
        let mut freqs = Vec::with_capacity(dim * FIELD_TERMS);
        for _ in 0..dim * FIELD_TERMS {
            let w = Point3::new(
                field_rng.sample::<f64, _>(StandardNormal) / ell,
                field_rng.sample::<f64, _>(StandardNormal) / ell,
                field_rng.sample::<f64, _>(StandardNormal) / ell,
            );
            let phase = field_rng.random_range(0.0..std::f64::consts::TAU);
            freqs.push((w, phase));
        }

        let class_of = symmetry_classes(model, params.symmetry.as_ref());
        let a = params.smooth_weight.clamp(0.0, 1.0).sqrt() as f32;
        let b = (1.0 - params.smooth_weight.clamp(0.0, 1.0)).sqrt() as f32;
        let mut descriptors = vec![0f32; model.len() * dim];
        let mut smooth = vec![0f32; dim];
        let mut unique = vec![0f32; dim];
        for (i, &class) in class_of.iter().enumerate() {
            let x = model[class as usize];
            for (k, s) in smooth.iter_mut().enumerate() {
                *s = freqs[k * FIELD_TERMS..(k + 1) * FIELD_TERMS]
                    .iter()
                    .map(|(w, ph)| (w.dot(x) + ph).cos())
                    .sum::<f64>() as f32;
            }
            normalize_slice(&mut smooth);
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(class as u64);
            for u in unique.iter_mut() {
                *u = rng.sample(StandardNormal);
            }
            normalize_slice(&mut unique);
            let d = &mut descriptors[i * dim..(i + 1) * dim];
            for k in 0..dim {
                d[k] = a * smooth[k] + b * unique[k];
            }
            normalize_slice(d);
        }
        Ok(Self {
            dim,
            descriptors,
            class_of,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn descriptor(&self, point: usize) -> &[f32] {
        &self.descriptors[point * self.dim..(point + 1) * self.dim]
    }

    /// Smallest point index sharing this point's descriptor.
    pub fn class_of(&self, point: usize) -> usize {
        self.class_of[point] as usize
    }

    /// Feature grid for a rendered view; see [`SyntheticFeatureParams`].
    pub fn features(&self, view: &RenderedView, params: &SyntheticFeatureParams) -> FeatureMap {
        self.features_from_owners(&view.owner, view.depth.height, view.depth.width, params)
            .0
    }

    /// Like [`Self::features`] but also returns, per cell, the model point the
    /// descriptor was taken from (`None` for background cells). Outlier cells
    /// report the point they were mislabelled with.
    pub fn features_with_sources(
        &self,
        view: &RenderedView,
        params: &SyntheticFeatureParams,
    ) -> (FeatureMap, Vec<Option<usize>>) {
        self.features_from_owners(&view.owner, view.depth.height, view.depth.width, params)
    }

    /// Feature grid from a per-pixel owner map (`NO_OWNER` for background).
    pub fn features_from_owners(
        &self,
        owner: &[u32],
        height: usize,
        width: usize,
        params: &SyntheticFeatureParams,
    ) -> (FeatureMap, Vec<Option<usize>>) {
        let s = params.stride.max(1);
        let (gh, gw) = (height / s, width / s);
        let mut fm = FeatureMap::zeros(gh, gw, self.dim, s);
        let mut sources = vec![None; gh * gw];
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        // background clutter depends only on the background layout
        let mut bg_rng = ChaCha8Rng::seed_from_u64(BACKGROUND_SEED);
        let per_component = params.noise_sigma / (self.dim as f64).sqrt();
        let n_points = self.len();
        for (cell, source) in sources.iter_mut().enumerate() {
            let center = fm.cell_center(cell);
            let (r, c) = (cell / gw, cell % gw);
            let mut best: Option<(f64, usize)> = None;
            for y in r * s..(r + 1) * s {
                for x in c * s..(c + 1) * s {
                    let o = owner[y * width + x];
                    if o == NO_OWNER {
                        continue;
                    }
                    let d2 = (x as f64 - center.u).powi(2) + (y as f64 - center.v).powi(2);
                    if best.is_none_or(|(b, _)| d2 < b) {
                        best = Some((d2, o as usize));
                    }
                }
            }
            let out = fm.cell_mut(cell);
            match best {
                Some((_, point)) => {
                    let point = if params.outlier_fraction > 0.0
                        && rng.random::<f64>() < params.outlier_fraction
                    {
                        rng.random_range(0..n_points)
                    } else {
                        point
                    };
                    *source = Some(point);
                    out.copy_from_slice(self.descriptor(point));
                    if per_component > 0.0 {
                        for v in out.iter_mut() {
                            *v += (rng.sample::<f64, _>(StandardNormal) * per_component) as f32;
                        }
                    }
                }
                None => {
                    for v in out.iter_mut() {
                        *v = bg_rng.sample(StandardNormal);
                    }
                }
            }
            normalize_slice(out);
        }
        (fm, sources)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFeatureParams {
    /// Pixels per grid cell.
    pub stride: usize,
    /// Expected L2 norm of the additive Gaussian noise on a unit descriptor
    /// (per-component standard deviation `noise_sigma / √dim`).
    pub noise_sigma: f64,
    /// Share of foreground cells whose descriptor is replaced by that of a
    /// uniformly drawn model point.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticFeatureParams {
    fn default() -> Self {
        Self {
            stride: 1,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

fn symmetry_classes(model: &[Point3], symmetry: Option<&SymmetrySpec>) -> Vec<u32> {
    let Some(sym) = symmetry else {
        return (0..model.len() as u32).collect();
    };
    let grid = PointGrid::new(model);
    let partner: Vec<usize> = model
        .iter()
        .map(|&x| grid.nearest(sym.rotation.rotate(x)).0)
        .collect();
    (0..model.len())
        .map(|i| {
            let mut class = i;
            let mut j = i;
            for _ in 0..32 {
                j = partner[j];
                class = class.min(j);
                if j == i {
                    break;
                }
            }
            class as u32
        })
        .collect()
}

/// Recovers pixel owners from a depth map: each valid pixel is assigned to the
/// nearest-projecting model point (within the splat radius) whose depth lies
/// within the tolerance of the stored depth.
pub fn owners_from_depth(
    model: &[Point3],
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    params: &RenderParams,
) -> Result<Vec<u32>> {
    if depth.height != k.height as usize || depth.width != k.width as usize {
        return Err(Error::DimensionMismatch(format!(
            "depth {}x{} vs intrinsics {}x{}",
            depth.height, depth.width, k.height, k.width
        )));
    }
    let (h, w) = (depth.height, depth.width);
    let surfels = surfel_radii(model, params);
    let mut owner = vec![NO_OWNER; h * w];
    let mut best = vec![f64::INFINITY; h * w];
    for (idx, &x) in model.iter().enumerate() {
        let y = pose.transform_point(x);
        let Ok(p) = project(k, y) else { continue };
        let rad = splat_radius_px(
            surfels.as_deref(),
            idx,
            y.z,
            k,
            params.splat_radius.max(0.0),
        );
        let r0 = (p.v - rad).ceil().max(0.0) as i64;
        let r1 = ((p.v + rad).floor() as i64).min(h as i64 - 1);
        let c0 = (p.u - rad).ceil().max(0.0) as i64;
        let c1 = ((p.u + rad).floor() as i64).min(w as i64 - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let i = r as usize * w + c as usize;
                let d = depth.data[i] as f64;
                if d <= 0.0 {
                    continue;
                }
                let d2 = Point2::new(c as f64, r as f64).distance(p).powi(2);
                if d2 <= rad * rad && (y.z - d).abs() <= params.depth_tolerance && d2 < best[i] {
                    best[i] = d2;
                    owner[i] = idx as u32;
                }
            }
        }
    }
    Ok(owner)
}

/// Stride-1 synthetic features for a depth map rendered at `pose`, with the
/// default appearance seeded by `seed` (64-dimensional descriptors).
pub fn synthetic_features(
    model: &[Point3],
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    noise_sigma: f64,
    seed: u64,
) -> Result<FeatureMap> {
    let appearance = SyntheticAppearance::new(
        model,
        &AppearanceParams {
            seed,
            ..AppearanceParams::default()
        },
    )?;
    let owner = owners_from_depth(model, depth, pose, k, &RenderParams::default())?;
    let params = SyntheticFeatureParams {
        stride: 1,
        noise_sigma,
        outlier_fraction: 0.0,
        seed,
    };
    Ok(appearance
        .features_from_owners(&owner, depth.height, depth.width, &params)
        .0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::cosine;
    use crate::view_sampling::{build_viewpoints, render};
    use crate::Vec3;

    fn blob(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = Vec3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                v.normalize() * 0.05
            })
            .collect()
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 47.5, 47.5, 96, 96).unwrap()
    }

    #[test]
    fn noiseless_views_share_point_descriptors() {
        let model = blob(1500, 1);
        let vps = build_viewpoints(40, 1, 0.4).unwrap();
        let app = SyntheticAppearance::new(&model, &AppearanceParams::default()).unwrap();
        let params = SyntheticFeatureParams::default();
        let va = render(&model, &vps[0].camera_pose, &k(), &RenderParams::default()).unwrap();
        let vb = render(&model, &vps[1].camera_pose, &k(), &RenderParams::default()).unwrap();
        let (fa, sa) = app.features_with_sources(&va, &params);
        let (fb, sb) = app.features_with_sources(&vb, &params);
        let mut shared = 0;
        for (i, a) in sa.iter().enumerate() {
            let Some(pa) = a else { continue };
            for (j, b) in sb.iter().enumerate() {
                if *b == Some(*pa) {
                    assert_eq!(fa.cell(i), fb.cell(j));
                    shared += 1;
                }
            }
        }
        assert!(shared > 50);
    }

    #[test]
    fn distinct_points_are_nearly_orthogonal_on_average() {
        let model = blob(3000, 2);
        let app = SyntheticAppearance::new(&model, &AppearanceParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let i = rng.random_range(0..model.len());
            let mut j = rng.random_range(0..model.len());
            while j == i {
                j = rng.random_range(0..model.len());
            }
            sum += cosine(app.descriptor(i), app.descriptor(j)) as f64;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.05, "mean cosine {mean}");
    }

    #[test]
    fn symmetry_signature_is_deterministic_and_matches_render_owners() {
        let model = blob(800, 3);
        let vp = build_viewpoints(5, 1, 0.4).unwrap()[2];
        let view = render(&model, &vp.camera_pose, &k(), &RenderParams::default()).unwrap();
        let a = synthetic_features(&model, &view.depth, &vp.camera_pose, &k(), 0.1, 11).unwrap();
        let b = synthetic_features(&model, &view.depth, &vp.camera_pose, &k(), 0.1, 11).unwrap();
        assert_eq!(a, b);
        let owners = owners_from_depth(
            &model,
            &view.depth,
            &vp.camera_pose,
            &k(),
            &RenderParams::default(),
        )
        .unwrap();
        let agree = owners
            .iter()
            .zip(&view.owner)
            .filter(|(a, b)| a == b)
            .count();
        assert!(agree as f64 > 0.99 * owners.len() as f64);
        let wrong_k = CameraIntrinsics::new(300.0, 300.0, 10.0, 10.0, 20, 20).unwrap();
        assert!(matches!(
            synthetic_features(&model, &view.depth, &vp.camera_pose, &wrong_k, 0.0, 1),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn symmetric_pairs_share_descriptors() {
        let half: Vec<Point3> = blob(400, 4);
        let sym = SymmetrySpec::half_turn(Vec3::new(0.0, 0.0, 1.0));
        let model: Vec<Point3> = half
            .iter()
            .copied()
            .chain(half.iter().map(|&p| sym.rotation.rotate(p)))
            .collect();
        let app = SyntheticAppearance::new(
            &model,
            &AppearanceParams {
                symmetry: Some(sym),
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..400 {
            assert_eq!(app.descriptor(i), app.descriptor(i + 400));
            assert_eq!(app.class_of(i + 400), i);
        }
        assert_ne!(app.descriptor(0), app.descriptor(1));
    }

    #[test]
    fn noise_has_requested_magnitude() {
        let model = blob(1000, 5);
        let app = SyntheticAppearance::new(&model, &AppearanceParams::default()).unwrap();
        let vp = build_viewpoints(3, 1, 0.4).unwrap()[0];
        let view = render(&model, &vp.camera_pose, &k(), &RenderParams::default()).unwrap();
        let noisy = SyntheticFeatureParams {
            noise_sigma: 0.2,
            seed: 1,
            ..Default::default()
        };
        let (fm, src) = app.features_with_sources(&view, &noisy);
        let sims: Vec<f32> = src
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|p| cosine(fm.cell(i), app.descriptor(p))))
            .collect();
        let mean = sims.iter().sum::<f32>() / sims.len() as f32;
        // E[cos] ≈ 1/√(1+σ²)
        assert!((mean - 0.98).abs() < 0.01, "{mean}");
    }
}
