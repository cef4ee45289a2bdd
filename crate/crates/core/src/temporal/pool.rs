use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::modes::{cluster_modes, SymmetryModes};
use crate::error::{Error, Result};
use crate::geometry::angular_distance;
use crate::matching::{FrameEstimate, PoseCandidate};
use crate::view_sampling::DepthMap;
use crate::Pose;

/// One admitted frame.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub frame_id: u64,
    pub estimate: Arc<FrameEstimate>,
    /// End-effector in the robot base frame.
    pub fk_pose: Pose,
    /// Camera-frame pose used for gating and keyframe selection.
    pub working_pose: Pose,
    pub modes: SymmetryModes,
    pub depth: Option<Arc<DepthMap>>,
}

impl PoolEntry {
    pub fn new(
        frame_id: u64,
        estimate: Arc<FrameEstimate>,
        fk_pose: Pose,
        working_pose: Pose,
        cluster_deg: f64,
    ) -> Result<Self> {
        let modes = cluster_modes(&estimate.candidates, cluster_deg)?;
        Ok(Self {
            frame_id,
            estimate,
            fk_pose,
            working_pose,
            modes,
            depth: None,
        })
    }

    /// Entry holding only a pose (a single candidate without matches).
    pub fn from_pose(frame_id: u64, working_pose: Pose, fk_pose: Pose) -> Self {
        let cand = PoseCandidate {
            pose: working_pose,
            inliers: Vec::new(),
            reproj_rmse: 0.0,
            reference_index: 0,
        };
        let estimate = FrameEstimate {
            references: Vec::new(),
            candidates: vec![cand],
            working: 0,
            raw_matches: Vec::new(),
        };
        let modes = SymmetryModes {
            mode_poses: vec![working_pose],
            members: vec![vec![0]],
            inlier_counts: vec![0],
        };
        Self {
            frame_id,
            estimate: Arc::new(estimate),
            fk_pose,
            working_pose,
            modes,
            depth: None,
        }
    }

    pub fn with_depth(mut self, depth: Arc<DepthMap>) -> Self {
        self.depth = Some(depth);
        self
    }
}

/// Angular-gated store of past frames with bounded capacity.
#[derive(Debug, Clone)]
pub struct MemoryPool {
    entries: Vec<PoolEntry>,
    /// Radians.
    pub theta: f64,
    pub capacity: usize,
}

#[derive(Serialize)]
struct SnapshotEntry {
    frame_id: u64,
    working_pose: Pose,
    fk_pose: Pose,
    candidates: usize,
}

impl MemoryPool {
    pub fn new(theta: f64, capacity: usize) -> Self {
        Self {
            entries: Vec::new(),
            theta,
            capacity: capacity.max(1),
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest rotation distance between the entry and any pool member.
    pub fn min_distance(&self, pose: &Pose) -> f64 {
        self.entries
            .iter()
            .map(|e| angular_distance(&e.working_pose, pose))
            .fold(f64::INFINITY, f64::min)
    }

    /// Admits the entry iff it is more than `theta` from every member. Over
    /// capacity, one member of the closest pair is evicted: the one whose
    /// removal leaves the larger minimum pairwise distance (ties evict the
    /// older frame).
    pub fn try_insert(&mut self, entry: PoolEntry) -> bool {
        if self.entries.iter().any(|e| e.frame_id == entry.frame_id) {
            return false;
        }
        if !(self.min_distance(&entry.working_pose) > self.theta) {
            return false;
        }
        self.entries.push(entry);
        if self.entries.len() > self.capacity {
            self.evict_one();
        }
        true
    }

    fn evict_one(&mut self) {
        let n = self.entries.len();
        let d = |i: usize, j: usize| {
            angular_distance(&self.entries[i].working_pose, &self.entries[j].working_pose)
        };
        let (mut a, mut b, mut best) = (0, 1, f64::INFINITY);
        for i in 0..n {
            for j in i + 1..n {
                let v = d(i, j);
                if v < best {
                    (a, b, best) = (i, j, v);
                }
            }
        }
        let min_without = |skip: usize| {
            let mut m = f64::INFINITY;
            for i in (0..n).filter(|&i| i != skip) {
                for j in (i + 1..n).filter(|&j| j != skip) {
                    m = m.min(d(i, j));
                }
            }
            m
        };
        let (ma, mb) = (min_without(a), min_without(b));
        let victim = if ma > mb || (ma == mb && self.entries[a].frame_id < self.entries[b].frame_id)
        {
            a
        } else {
            b
        };
        self.entries.remove(victim);
    }

    /// Earliest entry (by frame id) whose candidates form two modes with at
    /// least `min_members` candidates each.
    pub fn base_entry(&self, min_members: usize) -> Option<&PoolEntry> {
        self.entries
            .iter()
            .filter(|e| {
                e.modes.is_bimodal() && e.modes.members.iter().all(|m| m.len() >= min_members)
            })
            .min_by_key(|e| e.frame_id)
    }

    pub fn get(&self, frame_id: u64) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.frame_id == frame_id)
    }

    pub fn snapshot_json(&self) -> serde_json::Value {
        let entries: Vec<SnapshotEntry> = self
            .entries
            .iter()
            .map(|e| SnapshotEntry {
                frame_id: e.frame_id,
                working_pose: e.working_pose,
                fk_pose: e.fk_pose,
                candidates: e.estimate.candidates.len(),
            })
            .collect();
        serde_json::json!({ "theta": self.theta, "capacity": self.capacity, "entries": entries })
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.snapshot_json())
            .map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Forward-kinematics prediction `prev ∘ (fk_prev⁻¹ ∘ fk_curr)`.
pub fn predict_pose(prev_pose: &Pose, fk_prev: &Pose, fk_curr: &Pose) -> Pose {
    prev_pose.compose(&fk_prev.inverse().compose(fk_curr))
}

/// Greedy farthest-point sampling in rotation space seeded with `start`
/// (which is not returned); ties go to the lower frame id.
pub fn select_keyframes<'a>(pool: &'a MemoryPool, start: &Pose, k_f: usize) -> Vec<&'a PoolEntry> {
    let entries = pool.entries();
    let mut mind: Vec<f64> = entries
        .iter()
        .map(|e| angular_distance(&e.working_pose, start))
        .collect();
    let mut taken = vec![false; entries.len()];
    let mut out = Vec::with_capacity(k_f.min(entries.len()));
    while out.len() < k_f.min(entries.len()) {
        let mut pick: Option<usize> = None;
        for i in (0..entries.len()).filter(|&i| !taken[i]) {
            pick = match pick {
                None => Some(i),
                Some(p)
                    if mind[i] > mind[p]
                        || (mind[i] == mind[p] && entries[i].frame_id < entries[p].frame_id) =>
                {
                    Some(i)
                }
                keep => keep,
            };
        }
        let Some(p) = pick else { break };
        taken[p] = true;
        out.push(&entries[p]);
        for i in 0..entries.len() {
            mind[i] = mind[i].min(angular_distance(
                &entries[i].working_pose,
                &entries[p].working_pose,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Rotation, Vec3};
    use proptest::prelude::*;

    fn rz(deg: f64) -> Pose {
        Pose::from_rotation(Rotation::rz(deg.to_radians()))
    }

    fn pool_of(degs: &[f64]) -> MemoryPool {
        let mut p = MemoryPool::new(0.0, 64);
        for (i, d) in degs.iter().enumerate() {
            assert!(p.try_insert(PoolEntry::from_pose(i as u64, rz(*d), Pose::identity())));
        }
        p
    }

    #[test]
    fn gate() {
        let mut p = MemoryPool::new(10f64.to_radians(), 64);
        assert!(p.try_insert(PoolEntry::from_pose(0, rz(0.0), Pose::identity())));
        assert!(!p.try_insert(PoolEntry::from_pose(1, rz(5.0), Pose::identity())));
        assert!(p.try_insert(PoolEntry::from_pose(2, rz(15.0), Pose::identity())));
    }

    #[test]
    fn greedy_sequence() {
        let mut p = MemoryPool::new(10f64.to_radians(), 64);
        for (i, d) in (0..=10).map(|i| i as f64 * 4.0).enumerate() {
            p.try_insert(PoolEntry::from_pose(i as u64, rz(d), Pose::identity()));
        }
        let held: Vec<f64> = p
            .entries()
            .iter()
            .map(|e| e.working_pose.rotation.angle().to_degrees())
            .collect();
        assert_eq!(held.len(), 4);
        for (h, e) in held.iter().zip([0.0, 12.0, 24.0, 36.0]) {
            assert!((h - e).abs() < 1e-9);
        }
    }

    #[test]
    fn prediction() {
        let prev = Pose::new(Rotation::rx(0.3), Vec3::new(0.1, 0.0, 0.8));
        let fk = Pose::new(Rotation::ry(0.2), Vec3::new(0.3, 0.1, 0.2));
        let p = predict_pose(&prev, &fk, &fk);
        assert!(
            angular_distance(&p, &prev) < 1e-12
                && (p.translation - prev.translation).norm() < 1e-12
        );

        // static camera: gt = T ∘ fk
        let t = Pose::new(
            Rotation::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 2.0),
            Vec3::new(0.0, 0.2, 1.0),
        );
        let fk2 = Pose::new(
            Rotation::rz(0.5).compose(&Rotation::rx(0.1)),
            Vec3::new(0.25, 0.05, 0.3),
        );
        let pred = predict_pose(&t.compose(&fk), &fk, &fk2);
        let gt = t.compose(&fk2);
        assert!(
            angular_distance(&pred, &gt) < 1e-9
                && (pred.translation - gt.translation).norm() < 1e-9
        );

        // pure base-frame translation d
        let d = Vec3::new(0.01, -0.02, 0.03);
        let fk3 = Pose::new(fk.rotation, fk.translation + d);
        let pred = predict_pose(&t.compose(&fk), &fk, &fk3);
        let diff = pred.translation - t.compose(&fk).translation;
        assert!((diff - t.rotation.rotate(d)).norm() < 1e-12);
    }

    #[test]
    fn fps_examples() {
        let p = pool_of(&[20.0, 40.0]);
        let s = select_keyframes(&p, &rz(0.0), 2);
        assert_eq!(s.iter().map(|e| e.frame_id).collect::<Vec<_>>(), vec![1, 0]);
        let p = pool_of(&[20.0, 40.0, 60.0]);
        let s = select_keyframes(&p, &rz(0.0), 2);
        assert_eq!(s.iter().map(|e| e.frame_id).collect::<Vec<_>>(), vec![2, 0]);
        let s = select_keyframes(&p, &rz(0.0), 10);
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn eviction_keeps_cap_and_spread() {
        let mut p = MemoryPool::new(1f64.to_radians(), 3);
        for (i, d) in [0.0, 90.0, 180.0, 100.0].iter().enumerate() {
            p.try_insert(PoolEntry::from_pose(i as u64, rz(*d), Pose::identity()));
        }
        assert_eq!(p.len(), 3);
        // closest pair is 90/100; dropping 100 leaves min 90, dropping 90 leaves min 80
        let ids: Vec<u64> = p.entries().iter().map(|e| e.frame_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn snapshot_lists_entries() {
        let p = pool_of(&[0.0, 30.0]);
        let v = p.snapshot_json();
        assert_eq!(v["entries"].as_array().unwrap().len(), 2);
        assert_eq!(v["entries"][1]["frame_id"], 1);
        assert_eq!(v["entries"][0]["candidates"], 1);
    }

    proptest! {
        #[test]
        fn fps_subset_without_duplicates(degs in prop::collection::vec(0.0..360.0f64, 0..10), k in 1usize..6) {
            let mut p = MemoryPool::new(0.0, 64);
            for (i, d) in degs.iter().enumerate() {
                p.try_insert(PoolEntry::from_pose(i as u64, Pose::from_rotation(Rotation::rx(d.to_radians())), Pose::identity()));
            }
            let s = select_keyframes(&p, &Pose::identity(), k);
            prop_assert_eq!(s.len(), k.min(p.len()));
            let mut ids: Vec<u64> = s.iter().map(|e| e.frame_id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), s.len());
        }
    }
}
