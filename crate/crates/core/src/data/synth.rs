//! Seeded synthetic composition scenes.
//!
//! Each family places coloured discs on a textured background in a
//! characteristic layout and draws its five rater scores from a fixed
//! categorical law.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{atomic_write, write_annotations, AnnotatedImage};
use crate::raster::Raster;
use crate::{Error, Result, NUM_ATTRIBUTES, NUM_SCORES};

/// Layouts the generator knows how to draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One object on a rule-of-thirds intersection.
    Thirds,
    /// One object in the middle.
    Centered,
    /// One object cut by a frame edge.
    OffBalance,
    /// Two matching objects mirrored about the vertical axis.
    SymmetricPair,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    pub layout: Layout,
    pub count: usize,
    pub score_law: [f64; NUM_SCORES],
    /// Attribute centre; uniform noise of `attribute_noise` is added and the
    /// result clamped to [-1, 1].
    pub attributes: [f64; NUM_ATTRIBUTES],
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub color: [f64; 3],
}

/// Overrides the score law for images showing `category`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedBias {
    pub category: String,
    pub score_law: [f64; NUM_SCORES],
    /// Probability that an image of the category uses the planted law.
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_noise")]
    pub attribute_noise: f64,
    /// Label each image with its family name. When false, images are labelled
    /// with their object category instead.
    #[serde(default = "default_true")]
    pub label_family: bool,
    #[serde(default, rename = "family")]
    pub families: Vec<FamilySpec>,
    /// Object categories, assigned round-robin over the generated images.
    #[serde(default, rename = "object")]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub planted: Option<PlantedBias>,
}

fn default_size() -> usize {
    224
}

fn default_noise() -> f64 {
    0.15
}

fn default_true() -> bool {
    true
}

/// The spec shipped with the crate (four families, 150 images each).
pub const DEFAULT_SPEC: &str = include_str!("../../assets/synth_default.toml");
/// Four families with object categories and one planted biased category.
pub const BIASED_SPEC: &str = include_str!("../../assets/synth_biased.toml");

impl SynthSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::invalid(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn default_spec() -> Self {
        Self::parse(DEFAULT_SPEC).expect("bundled synth spec is valid")
    }

    pub fn biased_spec() -> Self {
        Self::parse(BIASED_SPEC).expect("bundled synth spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::invalid(format!("image size {} must be at least 32", self.size)));
        }
        if self.families.is_empty() {
            return Err(Error::invalid("synth spec lists no families"));
        }
        if !(0.0..=1.0).contains(&self.attribute_noise) {
            return Err(Error::invalid("attribute_noise must lie in [0, 1]"));
        }
        for f in &self.families {
            if f.count == 0 {
                return Err(Error::invalid(format!("family `{}` has zero count", f.name)));
            }
            check_law(&f.score_law, &f.name)?;
            if f.attributes.iter().any(|a| !(-1.0..=1.0).contains(a)) {
                return Err(Error::invalid(format!("family `{}` attributes outside [-1, 1]", f.name)));
            }
        }
        if !self.label_family && self.objects.is_empty() {
            return Err(Error::invalid("label_family = false needs object categories"));
        }
        if let Some(p) = &self.planted {
            check_law(&p.score_law, &p.category)?;
            if !(0.0..=1.0).contains(&p.strength) {
                return Err(Error::invalid("planted strength must lie in [0, 1]"));
            }
            if !self.objects.iter().any(|o| o.name == p.category) {
                return Err(Error::invalid(format!(
                    "planted category `{}` is not an object category",
                    p.category
                )));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.families.iter().map(|f| f.count).sum()
    }
}

fn check_law(law: &[f64; NUM_SCORES], name: &str) -> Result<()> {
    let sum: f64 = law.iter().sum();
    if law.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("score law of `{name}` is not a distribution")));
    }
    Ok(())
}

pub struct SynthDataset {
    pub records: Vec<AnnotatedImage>,
    pub images: Vec<Raster>,
}

fn draw_score(law: &[f64; NUM_SCORES], rng: &mut ChaCha8Rng) -> u8 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u8 + 1;
        }
    }
    law.iter().rposition(|p| *p > 0.0).unwrap_or(NUM_SCORES - 1) as u8 + 1
}

/// Generates the dataset; identical `(spec, seed)` give identical output.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(spec.total());
    let mut images = Vec::with_capacity(spec.total());
    let mut index = 0usize;
    for family in &spec.families {
        for _ in 0..family.count {
            let object = (!spec.objects.is_empty()).then(|| &spec.objects[index % spec.objects.len()]);
            let color = match object {
                Some(o) => o.color,
                None => [rng.gen_range(0.6..1.0), rng.gen_range(0.1..0.9), rng.gen_range(0.0..0.4)],
            };
            let image = render(family.layout, spec.size, color, &mut rng)?;

            let law = match (&spec.planted, object) {
                (Some(p), Some(o)) if p.category == o.name && rng.gen::<f64>() < p.strength => &p.score_law,
                _ => &family.score_law,
            };
            let mut scores = [0u8; NUM_SCORES];
            for s in &mut scores {
                *s = draw_score(law, &mut rng);
            }
            let mut attributes = family.attributes;
            for a in &mut attributes {
                let noise = if spec.attribute_noise > 0.0 {
                    rng.gen_range(-spec.attribute_noise..=spec.attribute_noise)
                } else {
                    0.0
                };
                *a = (*a + noise).clamp(-1.0, 1.0);
            }
            let categories = if spec.label_family {
                vec![family.name.clone()]
            } else {
                vec![object.expect("validated").name.clone()]
            };
            let image_id = format!("{}_{:04}", family.name, index);
            records.push(AnnotatedImage {
                image_path: Some(format!("images/{image_id}.png")),
                image_id,
                scores,
                attributes,
                categories,
            });
            images.push(image);
            index += 1;
        }
    }
    Ok(SynthDataset { records, images })
}

/// Writes `annotations.tsv` and `images/<id>.png` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SynthDataset) -> Result<()> {
    let dir = dir.as_ref();
    for (rec, img) in data.records.iter().zip(&data.images) {
        let path = dir.join("images").join(format!("{}.png", rec.image_id));
        atomic_write(&path, &img.encode_png()?)?;
    }
    write_annotations(dir.join("annotations.tsv"), &data.records)
}

fn render(layout: Layout, size: usize, color: [f64; 3], rng: &mut ChaCha8Rng) -> Result<Raster> {
    let s = size as f64;
    let base: [f64; 3] = [rng.gen_range(0.15..0.45), rng.gen_range(0.15..0.45), rng.gen_range(0.2..0.5)];
    let tilt = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    let mut img = Raster::filled(size, size, 3, 0.0)?;
    for i in 0..size {
        for j in 0..size {
            let shade = tilt.0 * (i as f64 / s - 0.5) + tilt.1 * (j as f64 / s - 0.5);
            let grain = rng.gen_range(-0.03..0.03);
            for (c, b) in base.iter().enumerate() {
                img.set(i, j, c, (b + shade + grain).clamp(0.0, 1.0));
            }
        }
    }

    let radius = rng.gen_range(0.08..0.12);
    let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-0.03..0.03);
    let mut discs: Vec<(f64, f64, f64)> = Vec::new();
    match layout {
        Layout::Thirds => {
            let y = if rng.gen() { 1.0 / 3.0 } else { 2.0 / 3.0 };
            let x = if rng.gen() { 1.0 / 3.0 } else { 2.0 / 3.0 };
            discs.push((y + jitter(rng), x + jitter(rng), radius));
        }
        Layout::Centered => discs.push((0.5 + jitter(rng), 0.5 + jitter(rng), radius)),
        Layout::OffBalance => {
            let along = rng.gen_range(0.1..0.9);
            let across = if rng.gen() { 0.06 } else { 0.94 };
            if rng.gen() {
                discs.push((along, across, radius));
            } else {
                discs.push((across, along, radius));
            }
        }
        Layout::SymmetricPair => {
            let y = 0.5 + jitter(rng);
            let d = rng.gen_range(0.2..0.28);
            let r = radius * 0.8;
            discs.push((y, 0.5 - d, r));
            discs.push((y, 0.5 + d, r));
        }
    }

    let tint: [f64; 3] = [jitter(rng), jitter(rng), jitter(rng)];
    for (cy, cx, r) in discs {
        let (cy, cx, r) = (cy * s, cx * s, r * s);
        let lo = |c: f64| (c - r).floor().max(0.0) as usize;
        let hi = |c: f64| ((c + r).ceil() as usize).min(size);
        for i in lo(cy)..hi(cy) {
            for j in lo(cx)..hi(cx) {
                let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r * r {
                    for c in 0..3 {
                        img.set(i, j, c, (color[c] + tint[c]).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        let mut spec = SynthSpec::default_spec();
        spec.size = 64;
        for f in &mut spec.families {
            f.count = 3;
        }
        spec
    }

    #[test]
    fn deterministic() {
        let spec = small_spec();
        let a = generate(&spec, 7).unwrap();
        let b = generate(&spec, 7).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.images, b.images);
        let c = generate(&spec, 8).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn family_labels_and_counts() {
        let mut spec = small_spec();
        spec.families.retain(|f| f.name == "centered");
        spec.families[0].count = 10;
        let d = generate(&spec, 1).unwrap();
        assert_eq!(d.records.len(), 10);
        for r in &d.records {
            assert_eq!(r.categories, vec!["centered".to_string()]);
            r.validate().unwrap();
        }
    }

    #[test]
    fn rejects_zero_counts() {
        let mut spec = small_spec();
        spec.families[0].count = 0;
        assert!(generate(&spec, 1).is_err());
        let mut spec = small_spec();
        spec.size = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn thirds_scores_exceed_off_balance() {
        let mut spec = small_spec();
        spec.size = 32;
        for f in &mut spec.families {
            f.count = 100;
        }
        let d = generate(&spec, 3).unwrap();
        let mean_of = |prefix: &str| {
            let v: Vec<f64> = d
                .records
                .iter()
                .filter(|r| r.categories[0] == prefix)
                .map(|r| r.mean_score())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_of("thirds") > mean_of("off_balance"));
    }

    #[test]
    fn draw_score_follows_one_hot_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(draw_score(&[0.0, 0.0, 1.0, 0.0, 0.0], &mut rng), 3);
        }
    }
}
