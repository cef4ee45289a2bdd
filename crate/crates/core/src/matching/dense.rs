use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::cosine;
use crate::features::FeatureMap;
use crate::Point2;

/// Mutual-nearest-neighbor cell pair, in pixel coordinates of each image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensePair {
    pub target: Point2,
    pub reference: Point2,
    pub target_cell: usize,
    pub reference_cell: usize,
    pub similarity: f32,
}

#[derive(Clone, Copy)]
struct Best {
    sim: f32,
    idx: usize,
}

impl Best {
    const NONE: Best = Best {
        sim: f32::NEG_INFINITY,
        idx: usize::MAX,
    };

    #[inline]
    fn offer(&mut self, sim: f32, idx: usize) {
        if sim > self.sim || (sim == self.sim && idx < self.idx) {
            self.sim = sim;
            self.idx = idx;
        }
    }
}

/// Largest value of a non-empty slice without NaNs.
fn column_max(v: &[f32]) -> f32 {
    let mut acc = [f32::NEG_INFINITY; 8];
    let chunks = v.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] = if c[l] > acc[l] { c[l] } else { acc[l] };
        }
    }
    let mut m = acc
        .iter()
        .copied()
        .fold(f32::NEG_INFINITY, |a, b| if b > a { b } else { a });
    for &x in rest {
        if x > m {
            m = x;
        }
    }
    m
}

fn gather(fm: &FeatureMap, mask: &[bool]) -> (Vec<usize>, Vec<f32>) {
    let cells: Vec<usize> = (0..fm.cells()).filter(|&i| mask[i]).collect();
    let mut data = Vec::with_capacity(cells.len() * fm.dim);
    for &c in &cells {
        let v = fm.cell(c);
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 0.0 {
            data.extend(v.iter().map(|x| x / n));
        } else {
            data.extend(std::iter::repeat_n(0.0, fm.dim));
        }
    }
    (cells, data)
}

/// Similarity slack under which neighboring cells count as tied with a match.
const TIE_EPS: f32 = 1e-6;
/// Largest tied region averaged into a match location.
const TIE_REGION_CAP: usize = 64;

/// Centroid of the 4-connected region of masked cells around `start` whose
/// similarity to `query` is within [`TIE_EPS`] of `sim`.
fn tie_centroid(
    fm: &FeatureMap,
    slot: &[usize],
    data: &[f32],
    start: usize,
    query: &[f32],
    sim: f32,
) -> Point2 {
    let dim = fm.dim;
    let (h, w) = (fm.height, fm.width);
    let mut region = vec![start];
    let mut head = 0;
    while head < region.len() && region.len() < TIE_REGION_CAP {
        let c = region[head];
        head += 1;
        let (r, col) = (c / w, c % w);
        let neighbors = [
            (r > 0).then(|| c - w),
            (r + 1 < h).then(|| c + w),
            (col > 0).then(|| c - 1),
            (col + 1 < w).then(|| c + 1),
        ];
        for n in neighbors.into_iter().flatten() {
            if slot[n] == usize::MAX || region.contains(&n) {
                continue;
            }
            let v = &data[slot[n] * dim..(slot[n] + 1) * dim];
            if crate::features::feature_map_dot(v, query) >= sim - TIE_EPS
                && region.len() < TIE_REGION_CAP
            {
                region.push(n);
            }
        }
    }
    let sum = region.iter().fold((0.0, 0.0), |(u, v), &c| {
        let p = fm.cell_center(c);
        (u + p.u, v + p.v)
    });
    let n = region.len() as f64;
    Point2::new(sum.0 / n, sum.1 / n)
}

fn slots(cells: &[usize], total: usize) -> Vec<usize> {
    let mut slot = vec![usize::MAX; total];
    for (i, &c) in cells.iter().enumerate() {
        slot[c] = i;
    }
    slot
}

/// Mutual nearest neighbors by cosine similarity between the masked cells of
/// two feature maps, keeping pairs with similarity `>= min_sim`. Ties in either
/// direction go to the lower cell index. Each pair's pixel locations are the
/// centroids of the connected cells tied with it on each side.
pub fn match_dense(
    target: &FeatureMap,
    target_mask: &[bool],
    reference: &FeatureMap,
    reference_mask: &[bool],
    min_sim: f32,
) -> Result<Vec<DensePair>> {
    if target.dim != reference.dim {
        return Err(Error::DimensionMismatch(format!(
            "target dim {} vs reference dim {}",
            target.dim, reference.dim
        )));
    }
    if target_mask.len() != target.cells() || reference_mask.len() != reference.cells() {
        return Err(Error::DimensionMismatch(
            "mask size differs from feature grid".into(),
        ));
    }
    let dim = target.dim;
    let (t_cells, t_data) = gather(target, target_mask);
    let (r_cells, r_data) = gather(reference, reference_mask);
    if t_cells.is_empty() || r_cells.is_empty() {
        return Ok(Vec::new());
    }
    let n_ref = r_cells.len();

    // similarities in row blocks: one matrix product per block
    const ROWS: usize = 256;
    let r_t = DMatrix::<f32>::from_column_slice(dim, n_ref, &r_data);
    let (row_best, col_best) = t_data
        .par_chunks(ROWS * dim)
        .enumerate()
        .map(|(chunk, rows)| {
            let m = rows.len() / dim;
            let t_mat = DMatrix::<f32>::from_row_slice(m, dim, rows);
            let sims = t_mat * &r_t;
            // strict comparisons in ascending order keep the lowest index on ties
            let mut row_sim = vec![f32::NEG_INFINITY; m];
            let mut row_idx = vec![u32::MAX; m];
            let mut col = vec![Best::NONE; n_ref];
            for (ri, column) in sims.as_slice().chunks_exact(m).enumerate() {
                let top = column_max(column);
                if let Some(k) = column.iter().position(|&s| s == top) {
                    col[ri] = Best {
                        sim: top,
                        idx: chunk * ROWS + k,
                    };
                }
                for ((rs, ix), &s) in row_sim.iter_mut().zip(row_idx.iter_mut()).zip(column) {
                    let gt = s > *rs;
                    *rs = if gt { s } else { *rs };
                    *ix = if gt { ri as u32 } else { *ix };
                }
            }
            let row: Vec<Best> = row_sim
                .into_iter()
                .zip(row_idx)
                .map(|(sim, idx)| {
                    if idx == u32::MAX {
                        Best::NONE
                    } else {
                        Best {
                            sim,
                            idx: idx as usize,
                        }
                    }
                })
                .collect();
            (row, col)
        })
        .reduce(
            || (Vec::new(), vec![Best::NONE; n_ref]),
            |(mut ra, mut ca), (rb, cb)| {
                ra.extend(rb);
                for (a, b) in ca.iter_mut().zip(cb) {
                    a.offer(b.sim, b.idx);
                }
                (ra, ca)
            },
        );

    let t_slot = slots(&t_cells, target.cells());
    let r_slot = slots(&r_cells, reference.cells());
    let mut out = Vec::new();
    for (ti, b) in row_best.iter().enumerate() {
        if b.idx == usize::MAX || b.sim < min_sim || col_best[b.idx].idx != ti {
            continue;
        }
        let (tc, rc) = (t_cells[ti], r_cells[b.idx]);
        let t_desc = &t_data[ti * dim..(ti + 1) * dim];
        let r_desc = &r_data[b.idx * dim..(b.idx + 1) * dim];
        let sim = crate::features::feature_map_dot(t_desc, r_desc);
        out.push(DensePair {
            target: tie_centroid(target, &t_slot, &t_data, tc, r_desc, sim),
            reference: tie_centroid(reference, &r_slot, &r_data, rc, t_desc, sim),
            target_cell: tc,
            reference_cell: rc,
            similarity: b.sim.clamp(-1.0, 1.0),
        });
    }
    Ok(out)
}

#[allow(dead_code)]
fn reference_cosine(a: &[f32], b: &[f32]) -> f32 {
    cosine(a, b)
}
