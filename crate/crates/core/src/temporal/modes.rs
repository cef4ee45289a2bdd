use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::angular_distance;
use crate::matching::PoseCandidate;
use crate::Pose;

/// One or two pose modes among a frame's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryModes {
    pub mode_poses: Vec<Pose>,
    /// Candidate indices per mode.
    pub members: Vec<Vec<usize>>,
    /// Total inlier count per mode.
    pub inlier_counts: Vec<usize>,
}

impl SymmetryModes {
    pub fn len(&self) -> usize {
        self.mode_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode_poses.is_empty()
    }

    pub fn is_bimodal(&self) -> bool {
        self.mode_poses.len() == 2
    }

    /// Mode containing candidate `index`, if it was kept.
    pub fn mode_of(&self, index: usize) -> Option<usize> {
        self.members.iter().position(|m| m.contains(&index))
    }
}

/// Single-link clustering of candidate rotations with threshold `cluster_deg`
/// (degrees). At most the two largest clusters are kept (ties: more inliers,
/// then earlier candidates); each mode pose is its member with most inliers.
pub fn cluster_modes(candidates: &[PoseCandidate], cluster_deg: f64) -> Result<SymmetryModes> {
    let n = candidates.len();
    if n == 0 {
        return Err(Error::NoCandidates);
    }
    let thr = cluster_deg.to_radians();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if angular_distance(&candidates[i].pose, &candidates[j].pose) <= thr {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                if a != b {
                    label[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = root(&mut label, i);
        match roots.iter().position(|&x| x == r) {
            Some(c) => clusters[c].push(i),
            None => {
                roots.push(r);
                clusters.push(vec![i]);
            }
        }
    }
    let inliers = |c: &[usize]| {
        c.iter()
            .map(|&i| candidates[i].inliers.len())
            .sum::<usize>()
    };
    clusters.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(inliers(b).cmp(&inliers(a)))
            .then(a[0].cmp(&b[0]))
    });
    clusters.truncate(2);
    let mut mode_poses = Vec::with_capacity(clusters.len());
    let mut inlier_counts = Vec::with_capacity(clusters.len());
    for c in &clusters {
        let best = c.iter().copied().fold(c[0], |b, i| {
            if candidates[i].inliers.len() > candidates[b].inliers.len() {
                i
            } else {
                b
            }
        });
        mode_poses.push(candidates[best].pose);
        inlier_counts.push(inliers(c));
    }
    Ok(SymmetryModes {
        mode_poses,
        members: clusters,
        inlier_counts,
    })
}

/// Outcome of pairing base and current modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disambiguation {
    pub base_mode: usize,
    pub current_mode: usize,
    pub base_pose: Pose,
    pub current_pose: Pose,
    /// `Ω(fk_rel, base⁻¹ ∘ current)`, radians.
    pub residual: f64,
}

/// Residuals within this many radians count as equal.
const TIE: f64 = 1e-9;

/// Chooses the (base, current) mode pair whose relative rotation best agrees
/// with the forward-kinematics motion `fk_rel` (base → current); ties go to
/// the larger combined inlier count, then the lower mode indices.
pub fn disambiguate(
    base: &SymmetryModes,
    current: &SymmetryModes,
    fk_rel: &Pose,
) -> Disambiguation {
    let mut best: Option<(Disambiguation, usize)> = None;
    for (bi, pb) in base.mode_poses.iter().enumerate() {
        for (ci, pc) in current.mode_poses.iter().enumerate() {
            let residual = angular_distance(fk_rel, &pb.inverse().compose(pc));
            let support = base.inlier_counts.get(bi).copied().unwrap_or(0)
                + current.inlier_counts.get(ci).copied().unwrap_or(0);
            let cand = Disambiguation {
                base_mode: bi,
                current_mode: ci,
                base_pose: *pb,
                current_pose: *pc,
                residual,
            };
            let replace = match &best {
                None => true,
                Some((b, s)) => {
                    residual < b.residual - TIE
                        || ((residual - b.residual).abs() <= TIE && support > *s)
                }
            };
            if replace {
                best = Some((cand, support));
            }
        }
    }
    best.expect("modes are never empty").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Match2D3D;
    use crate::{Point2, Point3, Rotation};

    fn cand(deg: f64, inliers: usize, idx: usize) -> PoseCandidate {
        let m = Match2D3D {
            u: Point2::new(0.0, 0.0),
            x: Point3::zeros(),
            similarity: 1.0,
        };
        PoseCandidate {
            pose: Pose::from_rotation(Rotation::rz(deg.to_radians())),
            inliers: vec![m; inliers],
            reproj_rmse: 0.1,
            reference_index: idx,
        }
    }

    fn modes(degs: &[(f64, usize)]) -> SymmetryModes {
        let c: Vec<_> = degs
            .iter()
            .enumerate()
            .map(|(i, &(d, n))| cand(d, n, i))
            .collect();
        cluster_modes(&c, 15.0).unwrap()
    }

    #[test]
    fn clustering() {
        assert!(matches!(cluster_modes(&[], 15.0), Err(Error::NoCandidates)));
        let m = modes(&[(0.0, 10), (3.0, 5), (5.0, 7)]);
        assert_eq!(m.len(), 1);
        let m = modes(&[(0.0, 10), (2.0, 12), (180.0, 9), (181.0, 9)]);
        assert!(m.is_bimodal());
        assert!(m.mode_poses[0].rotation.angle().to_degrees() < 3.0);
        assert!((m.mode_poses[1].rotation.angle().to_degrees() - 180.0).abs() < 1.5);
        assert_eq!(m.mode_of(3), Some(1));
        let m = modes(&[(42.0, 3)]);
        assert_eq!(m.len(), 1);
        assert_eq!(m.mode_poses[0], cand(42.0, 3, 0).pose);
    }

    #[test]
    fn keeps_two_largest() {
        let m = modes(&[(0.0, 1), (90.0, 1), (91.0, 1), (180.0, 5), (181.0, 5)]);
        assert!(m.is_bimodal());
        assert_eq!(m.members, vec![vec![3, 4], vec![1, 2]]);
    }

    #[test]
    fn disambiguation_examples() {
        let base = modes(&[(0.0, 10), (180.0, 8)]);
        let current = modes(&[(30.0, 10), (210.0, 9)]);
        let d = disambiguate(
            &base,
            &current,
            &Pose::from_rotation(Rotation::rz(30f64.to_radians())),
        );
        assert!(d.residual < 1e-9);
        assert_eq!((d.base_mode, d.current_mode), (0, 0));

        let single = modes(&[(5.0, 4)]);
        let other = modes(&[(100.0, 4)]);
        let d = disambiguate(&single, &other, &Pose::identity());
        assert_eq!((d.base_mode, d.current_mode), (0, 0));

        let d = disambiguate(&base, &base, &Pose::identity());
        assert_eq!(d.base_mode, d.current_mode);
    }

    #[test]
    fn selected_pair_is_minimal() {
        let base = modes(&[(0.0, 10), (170.0, 8)]);
        let current = modes(&[(33.0, 10), (200.0, 9)]);
        for deg in [0.0, 30.0, 60.0, 200.0] {
            let fk = Pose::from_rotation(Rotation::rz(f64::to_radians(deg)));
            let d = disambiguate(&base, &current, &fk);
            for pb in &base.mode_poses {
                for pc in &current.mode_poses {
                    assert!(d.residual <= angular_distance(&fk, &pb.inverse().compose(pc)) + 1e-12);
                }
            }
        }
    }
}
