use std::path::Path;

use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::Point2;

/// `height × width` grid of `dim`-dimensional descriptors, each cell covering
/// `stride × stride` image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub stride: usize,
    pub data: Vec<f32>,
}

const FMAP_MAGIC: &[u8; 4] = b"FMAP";
const MASK_MAGIC: &[u8; 4] = b"MASK";

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, dim: usize, stride: usize) -> Self {
        Self {
            height,
            width,
            dim,
            stride,
            data: vec![0.0; height * width * dim],
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn cell(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    /// Pixel coordinates of the center of cell `index`.
    pub fn cell_center(&self, index: usize) -> Point2 {
        let (r, c) = (index / self.width, index % self.width);
        let half = (self.stride as f64 - 1.0) / 2.0;
        Point2::new(
            (c * self.stride) as f64 + half,
            (r * self.stride) as f64 + half,
        )
    }

    /// L2-normalizes every non-zero cell.
    pub fn normalize(&mut self) {
        let dim = self.dim;
        for cell in self.data.chunks_exact_mut(dim) {
            normalize_slice(cell);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self, path: &Path) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(FMAP_MAGIC);
        codec::put_u32(&mut out, 1);
        codec::put_u32(&mut out, codec::u32_dim(path, self.height, "height")?);
        codec::put_u32(&mut out, codec::u32_dim(path, self.width, "width")?);
        codec::put_u32(&mut out, codec::u32_dim(path, self.dim, "dim")?);
        codec::put_u32(&mut out, codec::u32_dim(path, self.stride, "stride")?);
        codec::put_f32s(&mut out, &self.data);
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(FMAP_MAGIC)?;
        r.version(1)?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let stride = r.u32()? as usize;
        if dim == 0 || stride == 0 {
            return Err(Error::format(
                path,
                format!("dim={dim}, stride={stride} must be positive"),
            ));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        let data = r.f32_payload(n)?;
        Ok(Self {
            height,
            width,
            dim,
            stride,
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

pub(crate) fn normalize_slice(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // fixed-width accumulation; autovectorizes and keeps a deterministic order
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Cosine similarity; zero vectors give 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Binary foreground mask, `0` background and anything else foreground
/// (written as 255).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![255; height * width],
        }
    }

    pub fn from_depth(depth: &crate::view_sampling::DepthMap) -> Self {
        Self {
            height: depth.height,
            width: depth.width,
            data: depth
                .data
                .iter()
                .map(|&d| if d > 0.0 { 255 } else { 0 })
                .collect(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width && self.data[row * self.width + col] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    /// Per-cell mask of a feature grid: a cell is foreground when at least half
    /// of its in-image pixels are.
    pub fn cells(&self, fm: &FeatureMap) -> Vec<bool> {
        let s = fm.stride;
        (0..fm.cells())
            .map(|i| {
                let (r, c) = (i / fm.width, i % fm.width);
                let (mut fg, mut total) = (0usize, 0usize);
                for y in r * s..((r + 1) * s).min(self.height) {
                    for x in c * s..((c + 1) * s).min(self.width) {
                        total += 1;
                        fg += usize::from(self.data[y * self.width + x] != 0);
                    }
                }
                total > 0 && 2 * fg >= total
            })
            .collect()
    }

    pub fn to_bytes(&self, path: &Path) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.data.len());
        out.extend_from_slice(MASK_MAGIC);
        codec::put_u32(&mut out, 1);
        codec::put_u32(&mut out, codec::u32_dim(path, self.height, "height")?);
        codec::put_u32(&mut out, codec::u32_dim(path, self.width, "width")?);
        out.extend(self.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.magic(MASK_MAGIC)?;
        r.version(1)?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        let data = r.u8_payload(n)?.to_vec();
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
