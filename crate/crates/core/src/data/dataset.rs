//! On-disk dataset layout and in-memory training samples.
//!
//! A dataset directory holds `annotations.tsv` plus, per image id, any of
//! `images/<id>.png`, `features/<id>.feat` and `saliency/<id>.feat`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{read_feature_file, AnnotatedImage, FeatureMap, SaliencyGrid, ScoreDistribution};
use crate::model::{FeatureSource, ModelConfig};
use crate::raster::Raster;
use crate::saliency::{downsample_max, saliency_grid_for, SaliencyMap};
use crate::{Error, Result};

/// Channels produced by [`cell_features`].
pub const CELL_FEATURE_CHANNELS: usize = 8;

/// What the network consumes for one image.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput {
    Features(FeatureMap),
    Image(Raster),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub annotation: AnnotatedImage,
    pub distribution: ScoreDistribution,
    pub mean_score: f64,
    pub input: ModelInput,
    pub saliency: SaliencyGrid,
    /// Sample weight for the weighted EMD loss.
    pub beta: f64,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.annotation.image_id
    }

    /// Builds a sample straight from an in-memory image, computing features
    /// (or resizing for the stem) and saliency.
    pub fn from_image(annotation: AnnotatedImage, image: &Raster, config: &ModelConfig, beta: f64) -> Result<Self> {
        let input = image_input(image, config)?;
        let saliency = saliency_grid_for(image, config.height, config.width)?;
        Ok(Self {
            distribution: annotation.distribution(),
            mean_score: annotation.mean_score(),
            annotation,
            input,
            saliency,
            beta,
        })
    }
}

/// Network input for an image: cell features, or the image resized for the stem.
pub fn image_input(image: &Raster, config: &ModelConfig) -> Result<ModelInput> {
    Ok(match config.feature_source {
        FeatureSource::Precomputed => ModelInput::Features(cell_features(image, config.height, config.width)?),
        FeatureSource::ToyStem => {
            let (h, w) = config.stem_input_size();
            ModelInput::Image(if (image.height(), image.width()) == (h, w) {
                image.clone()
            } else {
                image.resize_bilinear(h, w)
            })
        }
    })
}

/// Writes through a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One id per line; blank lines ignored.
pub fn read_id_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Hand-crafted per-cell statistics on an H×W grid of image blocks: mean R, G, B,
/// mean luminance, luminance standard deviation, darkness (1 − min luminance),
/// mean gradient magnitude and mean saturation.
pub fn cell_features(image: &Raster, height: usize, width: usize) -> Result<FeatureMap> {
    let (ih, iw) = (image.height(), image.width());
    if ih < height || iw < width {
        return Err(Error::invalid(format!(
            "image {ih}x{iw} smaller than the {height}x{width} feature grid"
        )));
    }
    let rgb = |i: usize, j: usize| -> [f64; 3] {
        if image.channels() == 1 {
            let v = image.get(i, j, 0);
            [v, v, v]
        } else {
            [image.get(i, j, 0), image.get(i, j, 1), image.get(i, j, 2)]
        }
    };
    let luma = image.luminance();
    let l = |i: usize, j: usize| luma.get(i, j, 0);
    let hw = height * width;
    let mut data = vec![0.0; CELL_FEATURE_CHANNELS * hw];
    for bi in 0..height {
        let (r0, r1) = (bi * ih / height, (bi + 1) * ih / height);
        for bj in 0..width {
            let (c0, c1) = (bj * iw / width, (bj + 1) * iw / width);
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let mut acc = [0.0; CELL_FEATURE_CHANNELS];
            let mut sq = 0.0;
            let mut min_l = f64::INFINITY;
            for i in r0..r1 {
                for j in c0..c1 {
                    let [r, g, b] = rgb(i, j);
                    let lv = l(i, j);
                    acc[0] += r;
                    acc[1] += g;
                    acc[2] += b;
                    acc[3] += lv;
                    sq += lv * lv;
                    min_l = min_l.min(lv);
                    let gx = l(i, (j + 1).min(iw - 1)) - l(i, j.saturating_sub(1));
                    let gy = l((i + 1).min(ih - 1), j) - l(i.saturating_sub(1), j);
                    acc[6] += (gx * gx + gy * gy).sqrt();
                    let (mx, mn) = (r.max(g).max(b), r.min(g).min(b));
                    acc[7] += if mx > 0.0 { (mx - mn) / mx } else { 0.0 };
                }
            }
            let mean_l = acc[3] / n;
            let cell = bi * width + bj;
            let vals = [
                acc[0] / n,
                acc[1] / n,
                acc[2] / n,
                mean_l,
                (sq / n - mean_l * mean_l).max(0.0).sqrt(),
                1.0 - min_l,
                acc[6] / n,
                acc[7] / n,
            ];
            for (c, v) in vals.into_iter().enumerate() {
                data[c * hw + cell] = v;
            }
        }
    }
    FeatureMap::new(CELL_FEATURE_CHANNELS, height, width, data)
}

fn image_path(dir: &Path, rec: &AnnotatedImage) -> PathBuf {
    match &rec.image_path {
        Some(p) => dir.join(p),
        None => dir.join("images").join(format!("{}.png", rec.image_id)),
    }
}

/// Loads the saliency grid for one image from `saliency/<id>.feat`, or computes it.
fn load_saliency(dir: &Path, rec: &AnnotatedImage, config: &ModelConfig, image: &mut Option<Raster>) -> Result<SaliencyGrid> {
    let (gh, gw) = (config.saliency_height(), config.saliency_width());
    let path = dir.join("saliency").join(format!("{}.feat", rec.image_id));
    if path.exists() {
        let bytes = super::featfile::read_checked(&path)?;
        let (c, h, w, data) = super::decode_feature_file(&bytes, &path.display().to_string())?;
        if c != 1 {
            return Err(Error::format(&path, format!("saliency file has {c} channels, expected 1")));
        }
        let clamped = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let map = SaliencyMap::new(h, w, clamped)?;
        return downsample_max(&map, gh, gw);
    }
    let img = load_image(dir, rec, image)?;
    saliency_grid_for(img, config.height, config.width)
}

fn load_image<'a>(dir: &Path, rec: &AnnotatedImage, slot: &'a mut Option<Raster>) -> Result<&'a Raster> {
    if slot.is_none() {
        *slot = Some(Raster::load_png(image_path(dir, rec))?);
    }
    Ok(slot.as_ref().expect("just loaded"))
}

/// Loads samples for `config` from a dataset directory.
///
/// `ids` restricts and orders the result; `betas` supplies per-image weights
/// (missing entries default to 1).
pub fn load_dataset(
    dir: impl AsRef<Path>,
    config: &ModelConfig,
    ids: Option<&[String]>,
    betas: Option<&HashMap<String, f64>>,
) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let records = super::load_annotations(dir.join("annotations.tsv"))?;
    let selected: Vec<AnnotatedImage> = match ids {
        Some(ids) => {
            let by_id: HashMap<&str, &AnnotatedImage> =
                records.iter().map(|r| (r.image_id.as_str(), r)).collect();
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|r| (*r).clone())
                        .ok_or_else(|| Error::invalid(format!("split lists unknown image `{id}`")))
                })
                .collect::<Result<_>>()?
        }
        None => records,
    };

    let mut out = Vec::with_capacity(selected.len());
    for rec in selected {
        let mut image = None;
        let feat_path = dir.join("features").join(format!("{}.feat", rec.image_id));
        let input = if config.feature_source == FeatureSource::Precomputed && feat_path.exists() {
            ModelInput::Features(read_feature_file(&feat_path)?)
        } else {
            image_input(load_image(dir, &rec, &mut image)?, config)?
        };
        let saliency = load_saliency(dir, &rec, config, &mut image)?;
        let beta = betas
            .and_then(|b| b.get(&rec.image_id).copied())
            .unwrap_or(1.0);
        out.push(Sample {
            distribution: rec.distribution(),
            mean_score: rec.mean_score(),
            annotation: rec,
            input,
            saliency,
            beta,
        });
    }
    Ok(out)
}
