use super::{DensePair, Match2D3D};
use crate::geometry::back_project;
use crate::view_sampling::DepthMap;
use crate::{CameraIntrinsics, Pose};

/// Lifts 2D–2D pairs to 2D–3D matches through the reference depth map:
/// the reference pixel is back-projected and mapped into the model frame with
/// the inverse reference pose. Pairs on invalid depth are dropped; the number
/// dropped is returned alongside.
pub fn lift_matches(
    pairs: &[DensePair],
    reference_depth: &DepthMap,
    reference_pose: &Pose,
    reference_k: &CameraIntrinsics,
) -> (Vec<Match2D3D>, usize) {
    let camera_to_model = reference_pose.inverse();
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let Some(d) = reference_depth.at_point(p.reference) else {
            continue;
        };
        let Ok(xc) = back_project(reference_k, p.reference, d as f64) else {
            continue;
        };
        out.push(Match2D3D {
            u: p.target,
            x: camera_to_model.transform_point(xc),
            similarity: p.similarity,
        });
    }
    let dropped = pairs.len() - out.len();
    (out, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view_sampling::build_viewpoints;
    use crate::Point2;

    fn pair_at(u: Point2) -> DensePair {
        DensePair {
            target: Point2::new(1.0, 2.0),
            reference: u,
            target_cell: 0,
            reference_cell: 0,
            similarity: 0.9,
        }
    }

    #[test]
    fn principal_point_lifts_to_model_origin() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        let vp = build_viewpoints(1, 1, 1.0).unwrap()[0];
        let mut depth = DepthMap::new(48, 64);
        depth.data[24 * 64 + 32] = 1.0;
        let (m, dropped) = lift_matches(
            &[pair_at(Point2::new(32.0, 24.0))],
            &depth,
            &vp.camera_pose,
            &k,
        );
        assert_eq!(dropped, 0);
        assert!(m[0].x.norm() < 1e-6);
        assert_eq!(m[0].u, Point2::new(1.0, 2.0));
    }

    #[test]
    fn invalid_depth_dropped() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        let depth = DepthMap::new(48, 64);
        let pairs = [
            pair_at(Point2::new(3.0, 4.0)),
            pair_at(Point2::new(-5.0, 4.0)),
        ];
        let (m, dropped) = lift_matches(&pairs, &depth, &Pose::identity(), &k);
        assert!(m.is_empty());
        assert_eq!(dropped, 2);
    }
}
