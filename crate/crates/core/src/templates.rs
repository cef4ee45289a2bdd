//! Template store: rendered viewpoints with depth, feature grids, foreground
//! cell masks, a bag-of-words vocabulary and per-template histograms.

use std::borrow::Cow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    bow_histogram, build_vocabulary, BowHistogram, BowVocabulary, FeatureMap, KMeansOptions, Mask,
    SyntheticAppearance, SyntheticFeatureParams,
};
use crate::view_sampling::{
    build_viewpoints, render, template_intrinsics, DepthMap, RenderParams, Viewpoint,
};
use crate::{CameraIntrinsics, Point3};

/// Source of template feature grids, fetched one template at a time.
pub trait TemplateFeatures: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn features(&self, index: usize) -> Result<Cow<'_, FeatureMap>>;
}

impl TemplateFeatures for Vec<FeatureMap> {
    fn len(&self) -> usize {
        <[FeatureMap]>::len(self)
    }

    fn features(&self, index: usize) -> Result<Cow<'_, FeatureMap>> {
        self.get(index)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::InvalidCount(format!("template {index} out of range")))
    }
}

/// Feature files on disk, loaded on demand.
#[derive(Debug, Clone)]
pub struct FeatureFiles(pub Vec<PathBuf>);

impl TemplateFeatures for FeatureFiles {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn features(&self, index: usize) -> Result<Cow<'_, FeatureMap>> {
        let path = self
            .0
            .get(index)
            .ok_or_else(|| Error::InvalidCount(format!("template {index} out of range")))?;
        Ok(Cow::Owned(FeatureMap::load(path)?))
    }
}

/// Synthetic features regenerated from stored pixel owners.
pub struct SyntheticTemplateFeatures {
    appearance: Arc<SyntheticAppearance>,
    owners: Vec<Vec<u32>>,
    height: usize,
    width: usize,
    params: SyntheticFeatureParams,
}

impl TemplateFeatures for SyntheticTemplateFeatures {
    fn len(&self) -> usize {
        self.owners.len()
    }

    fn features(&self, index: usize) -> Result<Cow<'_, FeatureMap>> {
        let owner = self
            .owners
            .get(index)
            .ok_or_else(|| Error::InvalidCount(format!("template {index} out of range")))?;
        Ok(Cow::Owned(
            self.appearance
                .features_from_owners(owner, self.height, self.width, &self.params)
                .0,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub n_sphere: usize,
    pub n_inplane: usize,
    /// Square template image size in pixels.
    pub resolution: u32,
    /// Camera distance as a multiple of the model radius.
    pub distance_factor: f64,
    /// Share of the image width spanned by the model's bounding sphere.
    pub fill: f64,
    pub render: RenderParams,
    pub feature_stride: usize,
    pub bow_k: usize,
    pub seed: u64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self {
            n_sphere: 80,
            n_inplane: 12,
            resolution: 256,
            distance_factor: 2.5,
            fill: 0.8,
            render: RenderParams::default(),
            feature_stride: 14,
            bow_k: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub viewpoint: Viewpoint,
    pub depth: DepthMap,
    /// Foreground cells of the feature grid.
    pub cell_mask: Vec<bool>,
    pub histogram: BowHistogram,
}

pub struct TemplateSet {
    pub intrinsics: CameraIntrinsics,
    pub templates: Vec<Template>,
    pub vocabulary: BowVocabulary,
    pub features: Box<dyn TemplateFeatures>,
}

impl std::fmt::Debug for TemplateSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TemplateSet")
            .field("intrinsics", &self.intrinsics)
            .field("templates", &self.templates.len())
            .field("vocabulary_k", &self.vocabulary.k)
            .finish()
    }
}

/// Largest distance of a model point from the origin.
pub fn model_radius(model: &[Point3]) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let r = model.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::InvalidRadius(r))
    }
}

#[derive(Serialize, Deserialize)]
struct TemplateRecord {
    index: usize,
    viewpoint: Viewpoint,
    depth_path: String,
    feature_path: String,
    cell_mask_path: String,
}

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    intrinsics: CameraIntrinsics,
    vocabulary_path: String,
    histograms_path: String,
    templates: Vec<TemplateRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl TemplateSet {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn histograms(&self) -> Vec<BowHistogram> {
        self.templates.iter().map(|t| t.histogram.clone()).collect()
    }

    /// Renders the viewpoint sphere and attaches synthetic features.
    pub fn build_synthetic(
        model: &[Point3],
        appearance: Arc<SyntheticAppearance>,
        params: &TemplateParams,
    ) -> Result<Self> {
        let radius = model_radius(model)?;
        let distance = params.distance_factor * radius;
        let k = template_intrinsics(params.resolution, radius, distance, params.fill)?;
        let viewpoints = build_viewpoints(params.n_sphere, params.n_inplane, distance)?;
        let views: Vec<_> = viewpoints
            .par_iter()
            .map(|vp| render(model, &vp.camera_pose, &k, &params.render))
            .collect::<Result<_>>()?;
        let (h, w) = (k.height as usize, k.width as usize);
        let mut depths = Vec::with_capacity(views.len());
        let mut owners = Vec::with_capacity(views.len());
        for v in views {
            depths.push(v.depth);
            owners.push(v.owner);
        }
        let feature_params = SyntheticFeatureParams {
            stride: params.feature_stride,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: params.seed,
        };
        let provider = SyntheticTemplateFeatures {
            appearance,
            owners,
            height: h,
            width: w,
            params: feature_params,
        };
        Self::from_parts(
            k,
            viewpoints,
            depths,
            Box::new(provider),
            params.bow_k,
            params.seed,
        )
    }

    /// Assembles a store from rendered depth and an arbitrary feature source:
    /// derives the foreground cell masks, trains the vocabulary and computes
    /// every template histogram.
    pub fn from_parts(
        intrinsics: CameraIntrinsics,
        viewpoints: Vec<Viewpoint>,
        depths: Vec<DepthMap>,
        features: Box<dyn TemplateFeatures>,
        bow_k: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = viewpoints.len();
        if n == 0 || depths.len() != n || features.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} viewpoints, {} depth maps, {} feature maps",
                n,
                depths.len(),
                features.len()
            )));
        }
        let opts = KMeansOptions::default();
        let per_template = opts.max_samples.div_ceil(n).max(bow_k.div_ceil(n));
        let mut cell_masks = Vec::with_capacity(n);
        let mut training = Vec::with_capacity(n);
        for (i, depth) in depths.iter().enumerate() {
            let fm = features.features(i)?;
            if depth.height != intrinsics.height as usize
                || depth.width != intrinsics.width as usize
            {
                return Err(Error::DimensionMismatch(format!(
                    "template {i} depth size differs from intrinsics"
                )));
            }
            if fm.height * fm.stride > depth.height || fm.width * fm.stride > depth.width {
                return Err(Error::DimensionMismatch(format!(
                    "template {i} feature grid exceeds the depth image"
                )));
            }
            let mask = Mask::from_depth(depth).cells(&fm);
            let cells: Vec<usize> = (0..fm.cells()).filter(|&c| mask[c]).collect();
            // bounded per-template subsample for k-means training
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let picked: Vec<usize> = if cells.len() > per_template {
                let mut idx: Vec<usize> = sample(&mut rng, cells.len(), per_template)
                    .into_iter()
                    .map(|j| cells[j])
                    .collect();
                idx.sort_unstable();
                idx
            } else {
                cells
            };
            let mut sub = FeatureMap::zeros(1, picked.len(), fm.dim, 1);
            for (j, &c) in picked.iter().enumerate() {
                sub.cell_mut(j).copy_from_slice(fm.cell(c));
            }
            training.push(sub);
            cell_masks.push(mask);
        }
        let full: Vec<Vec<bool>> = training.iter().map(|t| vec![true; t.cells()]).collect();
        let pairs: Vec<(&FeatureMap, &[bool])> = training
            .iter()
            .zip(&full)
            .map(|(f, m)| (f, m.as_slice()))
            .collect();
        let mut vocabulary = build_vocabulary(&pairs, bow_k, seed, &opts)?;
        drop(training);

        let presence: Vec<Vec<bool>> = (0..n)
            .into_par_iter()
            .map(|i| Ok(vocabulary.word_presence(&*features.features(i)?, &cell_masks[i])))
            .collect::<Result<_>>()?;
        vocabulary.set_idf_from_presence(&presence);

        let mut templates = Vec::with_capacity(n);
        for (i, ((vp, depth), mask)) in viewpoints
            .into_iter()
            .zip(depths)
            .zip(cell_masks)
            .enumerate()
        {
            let fm = features.features(i)?;
            let histogram = bow_histogram(&fm, &mask, &vocabulary)?;
            templates.push(Template {
                viewpoint: vp,
                depth,
                cell_mask: mask,
                histogram,
            });
        }
        Ok(Self {
            intrinsics,
            templates,
            vocabulary,
            features,
        })
    }

    /// Writes depth maps, feature maps, cell masks, the vocabulary, the
    /// histogram table and a JSON manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.len());
        for (i, t) in self.templates.iter().enumerate() {
            let depth_path = format!("depth/{i:05}.dmap");
            let feature_path = format!("features/{i:05}.fmap");
            let cell_mask_path = format!("masks/{i:05}.mask");
            t.depth.save(&dir.join(&depth_path))?;
            let fm = self.features.features(i)?;
            fm.save(&dir.join(&feature_path))?;
            let mask = Mask {
                height: fm.height,
                width: fm.width,
                data: t
                    .cell_mask
                    .iter()
                    .map(|&m| if m { 255 } else { 0 })
                    .collect(),
            };
            mask.save(&dir.join(&cell_mask_path))?;
            records.push(TemplateRecord {
                index: i,
                viewpoint: t.viewpoint,
                depth_path,
                feature_path,
                cell_mask_path,
            });
        }
        let vocabulary_path = "vocabulary.bowv".to_string();
        self.vocabulary.save(&dir.join(&vocabulary_path))?;
        let histograms_path = "histograms.fmap".to_string();
        let mut table = FeatureMap::zeros(self.len(), 1, self.vocabulary.k, 1);
        for (i, t) in self.templates.iter().enumerate() {
            table.cell_mut(i).copy_from_slice(&t.histogram.0);
        }
        table.save(&dir.join(&histograms_path))?;
        let manifest = StoreManifest {
            intrinsics: self.intrinsics,
            vocabulary_path,
            histograms_path,
            templates: records,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads a store written by [`Self::save`]; feature maps stay on disk and
    /// are read on demand.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        manifest.intrinsics.validate()?;
        let vocabulary = BowVocabulary::load(&dir.join(&manifest.vocabulary_path))?;
        let hist_path = dir.join(&manifest.histograms_path);
        let table = FeatureMap::load(&hist_path)?;
        if table.height != manifest.templates.len() || table.dim != vocabulary.k {
            return Err(Error::format(
                &hist_path,
                "histogram table does not match manifest and vocabulary",
            ));
        }
        let mut templates = Vec::with_capacity(manifest.templates.len());
        let mut feature_paths = Vec::with_capacity(manifest.templates.len());
        for (i, r) in manifest.templates.iter().enumerate() {
            if r.index != i {
                return Err(Error::format(
                    &path,
                    format!("template record {i} has index {}", r.index),
                ));
            }
            let depth = DepthMap::load(&dir.join(&r.depth_path))?;
            let mask = Mask::load(&dir.join(&r.cell_mask_path))?;
            templates.push(Template {
                viewpoint: r.viewpoint,
                depth,
                cell_mask: mask.data.iter().map(|&v| v != 0).collect(),
                histogram: BowHistogram(table.cell(i).to_vec()),
            });
            feature_paths.push(dir.join(&r.feature_path));
        }
        Ok(Self {
            intrinsics: manifest.intrinsics,
            templates,
            vocabulary,
            features: Box::new(FeatureFiles(feature_paths)),
        })
    }
}
