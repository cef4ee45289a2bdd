//! Bag-of-visual-words: spherical k-means vocabulary, TF-IDF histograms and
//! cosine retrieval of the most similar templates.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::feature_map::{dot, normalize_slice, FeatureMap};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BowVocabulary {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, unit rows.
    pub centroids: Vec<f32>,
    pub idf: Vec<f32>,
}

/// TF-IDF word histogram, unit L2 norm (or all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct BowHistogram(pub Vec<f32>);

impl BowHistogram {
    pub fn norm(&self) -> f32 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn similarity(&self, other: &Self) -> f32 {
        if self.0.len() != other.0.len() {
            return 0.0;
        }
        dot(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once the relative inertia change falls below this.
    pub tol: f64,
    /// Cap on the number of training descriptors (uniform subsample).
    pub max_samples: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-4,
            max_samples: 100_000,
        }
    }
}

const VOCAB_MAGIC: &[u8; 4] = b"BOWV";

impl BowVocabulary {
    /// Unit-norm centroid of word `w`.
    pub fn centroid(&self, w: usize) -> &[f32] {
        &self.centroids[w * self.dim..(w + 1) * self.dim]
    }

    /// Nearest word by cosine (ties: lowest index).
    pub fn assign(&self, descriptor: &[f32]) -> usize {
        nearest_centroids(&self.centroids, self.dim, &[descriptor])[0].0
    }

    /// Nearest word of every masked cell.
    fn assign_masked(&self, fm: &FeatureMap, mask: &[bool]) -> Vec<usize> {
        let rows: Vec<&[f32]> = (0..fm.cells())
            .filter(|&i| mask.get(i).copied().unwrap_or(false))
            .map(|i| fm.cell(i))
            .collect();
        nearest_centroids(&self.centroids, self.dim, &rows)
            .into_iter()
            .map(|(w, _)| w)
            .collect()
    }

    /// Which words occur among the masked cells of one map.
    pub fn word_presence(&self, fm: &FeatureMap, mask: &[bool]) -> Vec<bool> {
        let mut present = vec![false; self.k];
        for w in self.assign_masked(fm, mask) {
            present[w] = true;
        }
        present
    }

    /// Recomputes the smoothed `idf_w = ln((1 + N) / (1 + n_w)) + 1` from per-document
    /// word presence.
    pub fn set_idf_from_presence(&mut self, documents: &[Vec<bool>]) {
        let n = documents.len() as f64;
        self.idf = (0..self.k)
            .map(|w| {
                let df = documents
                    .iter()
                    .filter(|d| d.get(w).copied().unwrap_or(false))
                    .count() as f64;
                (((1.0 + n) / (1.0 + df)).ln() + 1.0) as f32
            })
            .collect();
    }

    pub fn to_bytes(&self, path: &Path) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + 4 * (self.centroids.len() + self.idf.len()));
        out.extend_from_slice(VOCAB_MAGIC);
        codec::put_u32(&mut out, codec::u32_dim(path, self.k, "k")?);
        codec::put_u32(&mut out, codec::u32_dim(path, self.dim, "dim")?);
        codec::put_f32s(&mut out, &self.centroids);
        codec::put_f32s(&mut out, &self.idf);
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(VOCAB_MAGIC)?;
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n = k
            .checked_mul(dim)
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        let centroids = r.f32_vec(n)?;
        let idf = r.f32_vec(k)?;
        r.finish()?;
        Ok(Self {
            k,
            dim,
            centroids,
            idf,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.to_bytes(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &codec::read_file(path)?)
    }
}

/// Best `(word, cosine)` per row, computed blockwise as matrix products
/// (ties: lowest index).
fn nearest_centroids(centroids: &[f32], dim: usize, rows: &[&[f32]]) -> Vec<(usize, f32)> {
    const BLOCK: usize = 512;
    let k = centroids.len() / dim.max(1);
    let c_t = DMatrix::<f32>::from_column_slice(dim, k, centroids);
    rows.par_chunks(BLOCK)
        .flat_map_iter(|block| {
            let x = DMatrix::<f32>::from_fn(block.len(), dim, |i, j| block[i][j]);
            let sims = x * &c_t;
            (0..block.len())
                .map(|i| {
                    let mut best = (0, f32::NEG_INFINITY);
                    for w in 0..k {
                        let s = sims[(i, w)];
                        if s > best.1 {
                            best = (w, s);
                        }
                    }
                    best
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Builds a vocabulary from the masked cells of the template feature maps:
/// seeded k-means++ initialization, spherical k-means (unit centroids), and
/// `idf_w = ln((1 + N) / (1 + n_w)) + 1`, where `n_w` counts templates
/// containing word `w`.
pub fn build_vocabulary(
    templates: &[(&FeatureMap, &[bool])],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<BowVocabulary> {
    if k == 0 {
        return Err(Error::InvalidCount("vocabulary size must be >= 1".into()));
    }
    let dim = templates
        .first()
        .map(|(f, _)| f.dim)
        .ok_or_else(|| Error::InsufficientData("no templates".into()))?;
    if let Some((f, _)) = templates.iter().find(|(f, _)| f.dim != dim) {
        return Err(Error::DimensionMismatch(format!(
            "template dims {} and {}",
            dim, f.dim
        )));
    }
    let mut samples: Vec<&[f32]> = templates
        .iter()
        .flat_map(|(fm, mask)| {
            (0..fm.cells())
                .filter(|&i| mask[i])
                .map(move |i| fm.cell(i))
        })
        .collect();
    if samples.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} masked cells for k = {k}",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if samples.len() > opts.max_samples.max(k) {
        samples.shuffle(&mut rng);
        samples.truncate(opts.max_samples.max(k));
    }
    let centroids = spherical_kmeans(&samples, dim, k, opts, &mut rng);

    let mut vocab = BowVocabulary {
        k,
        dim,
        centroids,
        idf: vec![1.0; k],
    };
    let presence: Vec<Vec<bool>> = templates
        .iter()
        .map(|(fm, mask)| vocab.word_presence(fm, mask))
        .collect();
    vocab.set_idf_from_presence(&presence);
    Ok(vocab)
}

fn spherical_kmeans(
    samples: &[&[f32]],
    dim: usize,
    k: usize,
    opts: &KMeansOptions,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let n = samples.len();
    let mut centroids = Vec::with_capacity(k * dim);
    // k-means++ seeding on squared Euclidean distance
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(samples[first]);
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, samples[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = samples[pick];
        centroids.extend_from_slice(c);
        d2.par_iter_mut()
            .zip(samples.par_iter())
            .for_each(|(d, s)| {
                let nd = sq_dist(s, c);
                if nd < *d {
                    *d = nd;
                }
            });
    }
    for c in centroids.chunks_exact_mut(dim) {
        normalize_slice(c);
    }

    let mut prev_inertia = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let assignment = nearest_centroids(&centroids, dim, samples);
        // unit vectors: |x − c|² = 2 − 2 x·c
        let inertia: f64 = assignment.iter().map(|(_, s)| 2.0 - 2.0 * *s as f64).sum();
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (s, (w, _)) in samples.iter().zip(&assignment) {
            counts[*w] += 1;
            for (acc, v) in sums[w * dim..(w + 1) * dim].iter_mut().zip(s.iter()) {
                *acc += *v as f64;
            }
        }
        for w in 0..k {
            if counts[w] == 0 {
                continue;
            }
            let c = &mut centroids[w * dim..(w + 1) * dim];
            for (dst, src) in c.iter_mut().zip(&sums[w * dim..(w + 1) * dim]) {
                *dst = *src as f32;
            }
            normalize_slice(c);
        }
        let rel = (prev_inertia - inertia).abs() / inertia.max(1e-12);
        prev_inertia = inertia;
        if rel < opts.tol {
            break;
        }
    }
    centroids
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// Hard-assigns every masked cell to its nearest word, weights counts by IDF
/// and L2-normalizes. An empty mask yields the zero histogram.
pub fn bow_histogram(
    fm: &FeatureMap,
    mask: &[bool],
    vocab: &BowVocabulary,
) -> Result<BowHistogram> {
    if fm.dim != vocab.dim {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs vocabulary dim {}",
            fm.dim, vocab.dim
        )));
    }
    if mask.len() != fm.cells() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} cells, map has {}",
            mask.len(),
            fm.cells()
        )));
    }
    let mut h = vec![0f32; vocab.k];
    for w in vocab.assign_masked(fm, mask) {
        h[w] += 1.0;
    }
    for (v, idf) in h.iter_mut().zip(&vocab.idf) {
        *v *= idf;
    }
    normalize_slice(&mut h);
    Ok(BowHistogram(h))
}

/// Top-`k_r` templates by histogram cosine similarity, descending; ties go to
/// the lower template index.
pub fn retrieve_references(
    target: &BowHistogram,
    templates: &[BowHistogram],
    k_r: usize,
) -> Result<Vec<(usize, f32)>> {
    if k_r == 0 || k_r > templates.len() {
        return Err(Error::InvalidK {
            k: k_r,
            available: templates.len(),
        });
    }
    let mut scored: Vec<(usize, f32)> = templates
        .iter()
        .enumerate()
        .map(|(i, h)| (i, target.similarity(h)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k_r);
    Ok(scored)
}
