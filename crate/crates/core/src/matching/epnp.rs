use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};

use super::Match2D3D;
use crate::error::{Error, Result};
use crate::geometry::project;
use crate::{CameraIntrinsics, Pose, Rotation, Vec3};

/// Largest accepted ratio between the largest and smallest principal extent of
/// the model points.
const MAX_CONDITION: f64 = 1e6;

/// Reprojection error of one match in pixels (`INFINITY` behind the camera).
pub fn reprojection_error(pose: &Pose, m: &Match2D3D, k: &CameraIntrinsics) -> f64 {
    match project(k, pose.transform_point(m.x)) {
        Ok(p) => p.distance(m.u),
        Err(_) => f64::INFINITY,
    }
}

fn rmse(pose: &Pose, matches: &[Match2D3D], k: &CameraIntrinsics) -> f64 {
    let s: f64 = matches
        .iter()
        .map(|m| reprojection_error(pose, m, k).powi(2))
        .sum();
    (s / matches.len() as f64).sqrt()
}

/// Rigid alignment `q ≈ R·p + t` (no scale).
fn kabsch(model: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Option<Pose> {
    let n = model.len() as f64;
    let pm = model.iter().sum::<Vector3<f64>>() / n;
    let qm = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in model.iter().zip(cam) {
        h += (q - qm) * (p - pm).transpose();
    }
    let r = Rotation::from_na_orthonormalized(&h)?;
    let t = qm - r.to_na() * pm;
    Some(Pose::new(r, Vec3::from_na(&t)))
}

struct Betas {
    l: SMatrix<f64, 6, 10>,
    rho: SVector<f64, 6>,
}

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

impl Betas {
    fn residual_and_jacobian(&self, b: &[f64; 4]) -> (SVector<f64, 6>, SMatrix<f64, 6, 4>) {
        let bb = [
            b[0] * b[0],
            b[0] * b[1],
            b[1] * b[1],
            b[0] * b[2],
            b[1] * b[2],
            b[2] * b[2],
            b[0] * b[3],
            b[1] * b[3],
            b[2] * b[3],
            b[3] * b[3],
        ];
        let mut r = SVector::<f64, 6>::zeros();
        let mut j = SMatrix::<f64, 6, 4>::zeros();
        for i in 0..6 {
            let l = self.l.row(i);
            r[i] = self.rho[i] - (0..10).map(|c| l[c] * bb[c]).sum::<f64>();
            j[(i, 0)] = 2.0 * l[0] * b[0] + l[1] * b[1] + l[3] * b[2] + l[6] * b[3];
            j[(i, 1)] = l[1] * b[0] + 2.0 * l[2] * b[1] + l[4] * b[2] + l[7] * b[3];
            j[(i, 2)] = l[3] * b[0] + l[4] * b[1] + 2.0 * l[5] * b[2] + l[8] * b[3];
            j[(i, 3)] = l[6] * b[0] + l[7] * b[1] + l[8] * b[2] + 2.0 * l[9] * b[3];
        }
        (r, j)
    }

    fn gauss_newton(&self, mut b: [f64; 4]) -> [f64; 4] {
        for _ in 0..5 {
            let (r, j) = self.residual_and_jacobian(&b);
            let Some(d) = (j.transpose() * j)
                .try_inverse()
                .map(|inv| inv * (j.transpose() * r))
            else {
                break;
            };
            for (bi, di) in b.iter_mut().zip(d.iter()) {
                *bi += di;
            }
        }
        b
    }

    fn solve_columns<const C: usize>(&self, cols: [usize; C]) -> Option<SVector<f64, C>> {
        let a = nalgebra::DMatrix::<f64>::from_fn(6, C, |r, c| self.l[(r, cols[c])]);
        let rho = nalgebra::DVector::<f64>::from_column_slice(self.rho.as_slice());
        let x = a.svd(true, true).solve(&rho, 1e-12).ok()?;
        Some(SVector::<f64, C>::from_column_slice(x.as_slice()))
    }
}

/// Efficient Perspective-n-Point for `n ≥ 4` correspondences.
pub fn epnp(matches: &[Match2D3D], k: &CameraIntrinsics) -> Result<Pose> {
    let n = matches.len();
    if n < 4 {
        return Err(Error::TooFewMatches { needed: 4, got: n });
    }
    let pts: Vec<Vector3<f64>> = matches.iter().map(|m| m.x.to_na()).collect();

    // control points from the principal axes of the model points
    let c0 = pts.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        cov += (p - c0) * (p - c0).transpose();
    }
    cov /= n as f64;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (lmax, lmin) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[2]]);
    if !(lmin > 0.0) || (lmax / lmin).sqrt() > MAX_CONDITION {
        return Err(Error::NumericalFailure(
            "degenerate point configuration".into(),
        ));
    }
    let mut ctrl = [c0; 4];
    for (i, &o) in order.iter().enumerate() {
        ctrl[i + 1] = c0 + eig.eigenvectors.column(o) * eig.eigenvalues[o].sqrt();
    }
    let basis = Matrix3::from_columns(&[ctrl[1] - c0, ctrl[2] - c0, ctrl[3] - c0]);
    let basis_inv = basis
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("singular control frame".into()))?;
    let alphas: Vec<[f64; 4]> = pts
        .iter()
        .map(|p| {
            let a = basis_inv * (p - c0);
            [1.0 - a.sum(), a[0], a[1], a[2]]
        })
        .collect();

    let mut mtm = SMatrix::<f64, 12, 12>::zeros();
    for (m, a) in matches.iter().zip(&alphas) {
        let mut r1 = SVector::<f64, 12>::zeros();
        let mut r2 = SVector::<f64, 12>::zeros();
        for j in 0..4 {
            r1[3 * j] = a[j] * k.fx;
            r1[3 * j + 2] = a[j] * (k.cx - m.u.u);
            r2[3 * j + 1] = a[j] * k.fy;
            r2[3 * j + 2] = a[j] * (k.cy - m.u.v);
        }
        mtm += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig12 = mtm.symmetric_eigen();
    let mut idx: Vec<usize> = (0..12).collect();
    idx.sort_by(|&a, &b| eig12.eigenvalues[a].total_cmp(&eig12.eigenvalues[b]));
    let v: Vec<SVector<f64, 12>> = idx[..4]
        .iter()
        .map(|&i| eig12.eigenvectors.column(i).into_owned())
        .collect();

    let mut betas = Betas {
        l: SMatrix::zeros(),
        rho: SVector::zeros(),
    };
    for (row, &(a, b)) in PAIRS.iter().enumerate() {
        let dv: Vec<Vector3<f64>> = v
            .iter()
            .map(|vk| {
                vk.fixed_rows::<3>(3 * a).into_owned() - vk.fixed_rows::<3>(3 * b).into_owned()
            })
            .collect();
        let l = [
            dv[0].dot(&dv[0]),
            2.0 * dv[0].dot(&dv[1]),
            dv[1].dot(&dv[1]),
            2.0 * dv[0].dot(&dv[2]),
            2.0 * dv[1].dot(&dv[2]),
            dv[2].dot(&dv[2]),
            2.0 * dv[0].dot(&dv[3]),
            2.0 * dv[1].dot(&dv[3]),
            2.0 * dv[2].dot(&dv[3]),
            dv[3].dot(&dv[3]),
        ];
        for (c, val) in l.into_iter().enumerate() {
            betas.l[(row, c)] = val;
        }
        betas.rho[row] = (ctrl[a] - ctrl[b]).norm_squared();
    }

    let mut initial: Vec<[f64; 4]> = Vec::with_capacity(3);
    if let Some(x) = betas.solve_columns([0, 1, 3, 6]) {
        let b1 = x[0].abs().sqrt().max(1e-300);
        let s = if x[0] < 0.0 { -1.0 } else { 1.0 };
        initial.push([b1, s * x[1] / b1, s * x[2] / b1, s * x[3] / b1]);
    }
    if let Some(x) = betas.solve_columns([0, 1, 2]) {
        let (b1, b2) = two_betas(x[0], x[1], x[2]);
        initial.push([b1, b2, 0.0, 0.0]);
    }
    if let Some(x) = betas.solve_columns([0, 1, 2, 3, 4]) {
        let (b1, b2) = two_betas(x[0], x[1], x[2]);
        let b3 = if b1.abs() > 1e-300 { x[3] / b1 } else { 0.0 };
        initial.push([b1, b2, b3, 0.0]);
    }

    let mut best: Option<(f64, Pose)> = None;
    for b in initial {
        let b = betas.gauss_newton(b);
        let mut cc = [Vector3::zeros(); 4];
        for (j, c) in cc.iter_mut().enumerate() {
            for (bk, vk) in b.iter().zip(&v) {
                *c += vk.fixed_rows::<3>(3 * j) * *bk;
            }
        }
        let mut cam: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| cc[0] * a[0] + cc[1] * a[1] + cc[2] * a[2] + cc[3] * a[3])
            .collect();
        if cam.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            cam.iter_mut().for_each(|p| *p = -*p);
        }
        let Some(pose) = kabsch(&pts, &cam) else {
            continue;
        };
        if !pose.is_finite() {
            continue;
        }
        let err = rmse(&pose, matches, k);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    let (err, pose) =
        best.ok_or_else(|| Error::NumericalFailure("EPnP produced no finite solution".into()))?;
    // Gauss-Newton polish on the reprojection error
    match crate::optimizer::refine_reprojection(&pose, matches, k) {
        Ok(r) if r.pose.is_finite() && rmse(&r.pose, matches, k) <= err => Ok(r.pose),
        _ => Ok(pose),
    }
}

fn two_betas(b11: f64, b12: f64, b22: f64) -> (f64, f64) {
    let (mut b1, b2) = if b11 < 0.0 {
        ((-b11).sqrt(), if b22 < 0.0 { (-b22).sqrt() } else { 0.0 })
    } else {
        (b11.sqrt(), if b22 > 0.0 { b22.sqrt() } else { 0.0 })
    };
    if b12 < 0.0 {
        b1 = -b1;
    }
    (b1, b2)
}

/// Direct linear transform for `n ≥ 6` correspondences; the recovered 3×3
/// block is projected onto the nearest rotation.
pub fn dlt(matches: &[Match2D3D], k: &CameraIntrinsics) -> Result<Pose> {
    let n = matches.len();
    if n < 6 {
        return Err(Error::TooFewMatches { needed: 6, got: n });
    }
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, m) in matches.iter().enumerate() {
        let x = (m.u.u - k.cx) / k.fx;
        let y = (m.u.v - k.cy) / k.fy;
        let p = [m.x.x, m.x.y, m.x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = p[j];
            a[(2 * i, 8 + j)] = -x * p[j];
            a[(2 * i + 1, 4 + j)] = p[j];
            a[(2 * i + 1, 8 + j)] = -y * p[j];
        }
    }
    let svd = (a.transpose() * &a).symmetric_eigen();
    let (imin, _) = svd
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or_else(|| Error::NumericalFailure("empty DLT system".into()))?;
    let p = svd.eigenvectors.column(imin);
    let mut m = Matrix3::from_fn(|r, c| p[4 * r + c]);
    let mut t = Vector3::new(p[3], p[7], p[11]);
    if m.determinant() < 0.0 {
        m = -m;
        t = -t;
    }
    let scale = m.svd(false, false).singular_values.mean();
    if !(scale > 0.0) {
        return Err(Error::NumericalFailure("degenerate DLT solution".into()));
    }
    let r = Rotation::from_na_orthonormalized(&m)
        .ok_or_else(|| Error::NumericalFailure("DLT orthonormalization".into()))?;
    Ok(Pose::new(r, Vec3::from_na(&(t / scale))))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::angular_distance;
    use crate::{Point2, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    pub(crate) fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::new(
            Rotation::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::PI)),
            Vec3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.6..1.2),
            ),
        )
    }

    pub(crate) fn synth_matches(pose: &Pose, n: usize, rng: &mut impl Rng) -> Vec<Match2D3D> {
        let k = camera();
        (0..n)
            .map(|_| {
                let x = Point3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                );
                Match2D3D {
                    u: project(&k, pose.transform_point(x)).unwrap(),
                    x,
                    similarity: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn epnp_recovers_noiseless_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut minimal_ok = 0;
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            for n in [4, 6, 12, 40] {
                let m = synth_matches(&gt, n, &mut rng);
                let est = epnp(&m, &camera()).unwrap();
                let ok = angular_distance(&est, &gt) < 1e-5
                    && (est.translation - gt.translation).norm() < 1e-5;
                if n == 4 {
                    minimal_ok += ok as usize;
                } else {
                    assert!(ok, "n={n}");
                }
            }
        }
        // minimal sets are occasionally ambiguous
        assert!(minimal_ok >= 40, "{minimal_ok}/50");
    }

    #[test]
    fn dlt_recovers_noiseless_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let gt = random_pose(&mut rng);
            let m = synth_matches(&gt, 12, &mut rng);
            let est = dlt(&m, &camera()).unwrap();
            assert!(angular_distance(&est, &gt) < 1e-6);
            assert!((est.translation - gt.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn too_few_and_degenerate_rejected() {
        let k = camera();
        let m = Match2D3D {
            u: Point2::new(0.0, 0.0),
            x: Point3::zeros(),
            similarity: 1.0,
        };
        assert!(matches!(
            epnp(&[m; 3], &k),
            Err(Error::TooFewMatches { needed: 4, got: 3 })
        ));
        assert!(matches!(dlt(&[m; 5], &k), Err(Error::TooFewMatches { .. })));
        // collinear points
        let line: Vec<_> = (0..6)
            .map(|i| Match2D3D {
                u: Point2::new(i as f64, 0.0),
                x: Point3::new(i as f64 * 0.01, 0.0, 0.0),
                similarity: 1.0,
            })
            .collect();
        assert!(matches!(epnp(&line, &k), Err(Error::NumericalFailure(_))));
    }
}
