//! Uniform voxel grid for exact nearest-neighbor queries on model point sets.

use std::collections::HashMap;

use crate::Point3;

pub struct PointGrid<'a> {
    points: &'a [Point3],
    cell: f64,
    origin: Point3,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
    max_ring: usize,
}

impl<'a> PointGrid<'a> {
    /// Builds a grid with roughly a few points per occupied cell.
    pub fn new(points: &'a [Point3]) -> Self {
        assert!(!points.is_empty(), "PointGrid needs at least one point");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let extent = hi - lo;
        let volume = (extent.x.max(1e-9)) * (extent.y.max(1e-9)) * (extent.z.max(1e-9));
        let mut cell = (volume * 4.0 / points.len() as f64).cbrt();
        let max_extent = extent.x.max(extent.y).max(extent.z).max(1e-9);
        // flat sets: keep the cell size proportional to the largest extent
        cell = cell.max(max_extent / 64.0);
        let max_ring = (max_extent / cell).ceil() as usize + 2;
        let mut grid = Self {
            points,
            cell,
            origin: lo,
            buckets: HashMap::new(),
            max_ring,
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(*p);
            grid.buckets.entry(key).or_default().push(i as u32);
        }
        grid
    }

    fn key(&self, p: Point3) -> (i64, i64, i64) {
        let q = (p - self.origin) / self.cell;
        (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
    }

    /// Index of and distance to the nearest point (ties: lowest index).
    pub fn nearest(&self, q: Point3) -> (usize, f64) {
        self.nearest_where(q, |_, _| true)
    }

    /// Distance from point `i` to the closest point at a different location
    /// (infinite when all points coincide).
    pub fn spacing(&self, i: usize) -> f64 {
        let (j, d) = self.nearest_where(self.points[i], |_, d2| d2 > 0.0);
        if j == usize::MAX {
            f64::INFINITY
        } else {
            d
        }
    }

    /// [`Self::nearest`] restricted to points accepted by `keep(index, squared distance)`;
    /// `usize::MAX` when none is.
    fn nearest_where(&self, q: Point3, keep: impl Fn(usize, f64) -> bool) -> (usize, f64) {
        let (ki, kj, kk) = self.key(q);
        // beyond this ring no occupied cell is left
        let last_ring = self.max_ring as i64 + ki.abs().max(kj.abs()).max(kk.abs());
        let mut best = (usize::MAX, f64::INFINITY);
        let mut ring: i64 = 0;
        loop {
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    for dk in -ring..=ring {
                        if di.abs().max(dj.abs()).max(dk.abs()) != ring {
                            continue;
                        }
                        if let Some(b) = self.buckets.get(&(ki + di, kj + dj, kk + dk)) {
                            for &i in b {
                                let d = (self.points[i as usize] - q).norm_squared();
                                if !keep(i as usize, d) {
                                    continue;
                                }
                                if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                                    best = (i as usize, d);
                                }
                            }
                        }
                    }
                }
            }
            // every unvisited cell lies at least `ring * cell` away
            let reach = ring as f64 * self.cell;
            if best.0 != usize::MAX && reach * reach >= best.1 {
                return (best.0, best.1.sqrt());
            }
            ring += 1;
            if ring > last_ring {
                return (best.0, best.1.sqrt());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.0..0.01),
                )
            })
            .collect();
        let grid = PointGrid::new(&pts);
        for _ in 0..300 {
            let q = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
            );
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (*p - q).norm()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let (gi, gd) = grid.nearest(q);
            assert_eq!(gi, bi);
            assert!((gd - bd).abs() < 1e-12);
        }
    }

    #[test]
    fn spacing_skips_self_and_duplicates() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.3, 0.0, 0.0),
            Point3::new(0.0, 0.5, 0.0),
        ];
        let grid = PointGrid::new(&pts);
        assert!((grid.spacing(0) - 0.3).abs() < 1e-15);
        assert!((grid.spacing(2) - 0.3).abs() < 1e-15);
        assert!((grid.spacing(3) - 0.5).abs() < 1e-15);
        let same = vec![Point3::new(1.0, 1.0, 1.0); 3];
        assert!(PointGrid::new(&same).spacing(1).is_infinite());
    }
}
