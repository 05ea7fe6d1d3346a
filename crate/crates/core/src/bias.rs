//! Content-bias analysis: per-category score-bin tables, biased-category
//! detection, per-image loss weights and the unbiased test split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::AnnotatedImage;
use crate::{Error, Result};

/// Number of mean-score bins: [1,2), [2,3), [3,4), [4,5].
pub const NUM_BINS: usize = 4;
/// Categories below this entropy are removed outright.
pub const ENTROPY_THRESHOLD: f64 = 0.1;
/// Categories whose max/min-nonzero bin ratio exceeds this are biased.
pub const RATIO_THRESHOLD: f64 = 1.5;

pub type Column = [u64; NUM_BINS];

pub fn bin_index(mean_score: f64) -> Result<usize> {
    if !(1.0..=5.0).contains(&mean_score) {
        return Err(Error::invalid(format!("mean score {mean_score} outside [1, 5]")));
    }
    Ok((mean_score.floor() as usize - 1).min(NUM_BINS - 1))
}

/// Occurrence counts `T[m][c]` of each category in each score bin.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinTable {
    columns: BTreeMap<String, Column>,
}

impl BinTable {
    pub fn build(images: &[AnnotatedImage]) -> Result<Self> {
        let mut columns: BTreeMap<String, Column> = BTreeMap::new();
        for img in images {
            let m = bin_index(img.mean_score())?;
            let unique: BTreeSet<&String> = img.categories.iter().collect();
            for c in unique {
                columns.entry(c.clone()).or_default()[m] += 1;
            }
        }
        Ok(Self { columns })
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, category: &str) -> Option<&Column> {
        self.columns.get(category)
    }

    pub fn columns(&self) -> &BTreeMap<String, Column> {
        &self.columns
    }
}

fn check_column(col: &Column) -> Result<u64> {
    let total: u64 = col.iter().sum();
    if total == 0 {
        return Err(Error::invalid("empty category column"));
    }
    Ok(total)
}

/// Natural-log entropy of the normalised column.
pub fn category_entropy(col: &Column) -> Result<f64> {
    let total = check_column(col)? as f64;
    Ok(col
        .iter()
        .filter(|&&t| t > 0)
        .map(|&t| {
            let p = t as f64 / total;
            -p * p.ln()
        })
        .sum())
}

/// Maximum occurrence over minimum non-zero occurrence.
pub fn category_ratio(col: &Column) -> Result<f64> {
    check_column(col)?;
    let max = *col.iter().max().expect("non-empty");
    let min = *col.iter().filter(|&&t| t > 0).min().expect("non-zero entry");
    Ok(max as f64 / min as f64)
}

/// `α_m = Σ T / (M · T_m)`, with empty bins counted as 1.
pub fn alpha_weights(col: &Column) -> Result<[f64; NUM_BINS]> {
    let total = check_column(col)? as f64;
    let mut out = [0.0; NUM_BINS];
    for (a, &t) in out.iter_mut().zip(col) {
        *a = total / (NUM_BINS as f64 * t.max(1) as f64);
    }
    Ok(out)
}

/// Minimum α over the image's categories; 1 for uncategorised images.
/// Categories missing from `alphas` are skipped.
pub fn sample_beta(image: &AnnotatedImage, alphas: &BTreeMap<String, [f64; NUM_BINS]>) -> Result<f64> {
    let m = bin_index(image.mean_score())?;
    Ok(image
        .categories
        .iter()
        .filter_map(|c| alphas.get(c).map(|a| a[m]))
        .reduce(f64::min)
        .unwrap_or(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryStats {
    pub category: String,
    pub counts: Column,
    /// Entropy over the full dataset.
    pub entropy: f64,
    /// Ratio over the images kept after entropy filtering (None if none kept).
    pub ratio: Option<f64>,
    pub highly_biased: bool,
    pub biased: bool,
    /// α row computed from the training split (None if absent from it).
    pub alpha: Option<[f64; NUM_BINS]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub categories: Vec<CategoryStats>,
    /// β per training image id.
    pub betas: BTreeMap<String, f64>,
    /// Unbiased flag per retained image id.
    pub unbiased: BTreeMap<String, bool>,
    pub removed: Vec<String>,
    pub seed: u64,
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub removed: Vec<String>,
}

/// Removes images in highly-biased categories, draws the test set from the
/// unbiased remainder and weights the training images.
pub fn filter_and_split(images: &[AnnotatedImage], test_fraction: f64, seed: u64) -> Result<(Split, BiasReport)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let full = BinTable::build(images)?;
    let mut entropy = HashMap::new();
    for (c, col) in full.columns() {
        entropy.insert(c.as_str(), category_entropy(col)?);
    }
    let highly = |c: &String| entropy[c.as_str()] < ENTROPY_THRESHOLD;

    let (removed, kept): (Vec<&AnnotatedImage>, Vec<&AnnotatedImage>) =
        images.iter().partition(|img| img.categories.iter().any(highly));
    let kept_owned: Vec<AnnotatedImage> = kept.iter().map(|r| (*r).clone()).collect();
    let kept_table = BinTable::build(&kept_owned)?;
    let mut ratio = HashMap::new();
    for (c, col) in kept_table.columns() {
        ratio.insert(c.as_str(), category_ratio(col)?);
    }
    let is_unbiased = |img: &AnnotatedImage| {
        img.categories
            .iter()
            .all(|c| ratio.get(c.as_str()).is_some_and(|r| *r <= RATIO_THRESHOLD))
    };

    let unbiased: BTreeMap<String, bool> =
        kept.iter().map(|img| (img.image_id.clone(), is_unbiased(img))).collect();
    let mut pool: Vec<&str> = kept
        .iter()
        .filter(|img| unbiased[&img.image_id])
        .map(|img| img.image_id.as_str())
        .collect();
    let want = (test_fraction * kept.len() as f64).round() as usize;
    if pool.len() < want {
        return Err(Error::invalid(format!(
            "only {} unbiased images for a test set of {want}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let test_set: BTreeSet<&str> = pool[..want].iter().copied().collect();

    let test: Vec<String> = kept
        .iter()
        .filter(|img| test_set.contains(img.image_id.as_str()))
        .map(|img| img.image_id.clone())
        .collect();
    let train_imgs: Vec<AnnotatedImage> = kept
        .iter()
        .filter(|img| !test_set.contains(img.image_id.as_str()))
        .map(|img| (*img).clone())
        .collect();

    let train_table = BinTable::build(&train_imgs)?;
    let mut alphas = BTreeMap::new();
    for (c, col) in train_table.columns() {
        alphas.insert(c.clone(), alpha_weights(col)?);
    }
    let mut betas = BTreeMap::new();
    for img in &train_imgs {
        betas.insert(img.image_id.clone(), sample_beta(img, &alphas)?);
    }

    let categories = full
        .columns()
        .iter()
        .map(|(c, col)| {
            let e = entropy[c.as_str()];
            let r = ratio.get(c.as_str()).copied();
            CategoryStats {
                category: c.clone(),
                counts: *col,
                entropy: e,
                ratio: r,
                highly_biased: e < ENTROPY_THRESHOLD,
                biased: r.is_some_and(|r| r > RATIO_THRESHOLD),
                alpha: alphas.get(c).copied(),
            }
        })
        .collect();

    let removed: Vec<String> = removed.iter().map(|r| r.image_id.clone()).collect();
    let split = Split {
        train: train_imgs.iter().map(|r| r.image_id.clone()).collect(),
        test,
        removed: removed.clone(),
    };
    let report = BiasReport {
        categories,
        betas,
        unbiased,
        removed,
        seed,
        test_fraction,
    };
    Ok((split, report))
}

impl BiasReport {
    /// Human-readable summary lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.categories {
            let flag = if c.highly_biased {
                "highly-biased (removed)"
            } else if c.biased {
                "biased"
            } else {
                "unbiased"
            };
            let ratio = c.ratio.map_or("-".to_string(), |r| format!("{r:.3}"));
            let _ = writeln!(
                s,
                "{}: counts {:?} entropy {:.4} r_c {} {}",
                c.category, c.counts, c.entropy, ratio, flag
            );
        }
        let _ = writeln!(
            s,
            "{} images removed, {} weighted for training",
            self.removed.len(),
            self.betas.len()
        );
        s
    }

    /// Tab-separated table: category, counts, entropy, r_c, flags, α row.
    pub fn table(&self) -> String {
        let mut s = String::from("category\tcounts\tentropy\tr_c\thighly_biased\tbiased\talpha\n");
        for c in &self.categories {
            let join = |v: &[String]| v.join(",");
            let counts: Vec<String> = c.counts.iter().map(u64::to_string).collect();
            let alpha = c
                .alpha
                .map(|a| join(&a.iter().map(|v| format!("{v:.17}")).collect::<Vec<_>>()))
                .unwrap_or_else(|| "-".into());
            let ratio = c.ratio.map_or("-".to_string(), |r| format!("{r:.17}"));
            let _ = writeln!(
                s,
                "{}\t{}\t{:.17}\t{}\t{}\t{}\t{}",
                c.category,
                join(&counts),
                c.entropy,
                ratio,
                u8::from(c.highly_biased),
                u8::from(c.biased),
                alpha
            );
        }
        s
    }

    /// `image_id TAB beta` lines, sorted by id.
    pub fn beta_table(&self) -> String {
        let mut s = String::new();
        for (id, b) in &self.betas {
            let _ = writeln!(s, "{id}\t{b:.17}");
        }
        s
    }
}

/// Parses a `image_id TAB beta` table.
pub fn parse_beta_table(text: &str, origin: &str) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = |field: &str, message: String| Error::Record {
            path: origin.to_string(),
            line: n + 1,
            field: field.to_string(),
            message,
        };
        let (id, b) = line
            .split_once('\t')
            .ok_or_else(|| record("record", "expected `id<TAB>beta`".into()))?;
        let beta: f64 = b
            .trim()
            .parse()
            .map_err(|_| record("beta", format!("`{b}` is not a number")))?;
        if !(beta.is_finite() && beta > 0.0) {
            return Err(record("beta", format!("{beta} must be positive")));
        }
        if out.insert(id.to_string(), beta).is_some() {
            return Err(record("image_id", format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, scores: [u8; 5], cats: &[&str]) -> AnnotatedImage {
        AnnotatedImage {
            image_id: id.into(),
            scores,
            attributes: [0.0; 5],
            categories: cats.iter().map(|c| c.to_string()).collect(),
            image_path: None,
        }
    }

    #[test]
    fn bins() {
        assert_eq!(bin_index(1.0).unwrap(), 0);
        assert_eq!(bin_index(2.999).unwrap(), 1);
        assert_eq!(bin_index(5.0).unwrap(), 3);
        assert!(bin_index(0.5).is_err());
    }

    #[test]
    fn table_counts() {
        let t = BinTable::build(&[img("a", [4, 4, 4, 5, 4], &["bird"])]).unwrap();
        assert_eq!(t.column("bird"), Some(&[0, 0, 0, 1]));
        let t = BinTable::build(&[img("a", [2, 2, 2, 2, 2], &["bird", "sky"])]).unwrap();
        assert_eq!(t.column("bird"), Some(&[0, 1, 0, 0]));
        assert_eq!(t.column("sky"), Some(&[0, 1, 0, 0]));
    }

    #[test]
    fn entropy_and_ratio() {
        assert_eq!(category_entropy(&[0, 7, 0, 0]).unwrap(), 0.0);
        assert!((category_entropy(&[1, 1, 1, 1]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((category_entropy(&[1, 1, 0, 0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(category_entropy(&[0; 4]).is_err());
        assert_eq!(category_ratio(&[10, 10, 10, 10]).unwrap(), 1.0);
        assert_eq!(category_ratio(&[3, 0, 6, 9]).unwrap(), 3.0);
        assert!(category_ratio(&[0; 4]).is_err());
    }

    #[test]
    fn alphas() {
        assert_eq!(alpha_weights(&[10, 10, 10, 10]).unwrap(), [1.0; 4]);
        let a = alpha_weights(&[5, 10, 15, 20]).unwrap();
        for (x, y) in a.iter().zip([2.5, 1.25, 50.0 / 60.0, 0.625]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(alpha_weights(&[4, 0, 0, 0]).unwrap(), [0.25, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn beta_is_min_alpha() {
        let mut alphas = BTreeMap::new();
        alphas.insert("a".to_string(), [2.0; 4]);
        alphas.insert("b".to_string(), [0.5; 4]);
        assert_eq!(sample_beta(&img("x", [3; 5], &["a"]), &alphas).unwrap(), 2.0);
        assert_eq!(sample_beta(&img("x", [3; 5], &["a", "b"]), &alphas).unwrap(), 0.5);
        assert_eq!(sample_beta(&img("x", [3; 5], &[]), &alphas).unwrap(), 1.0);
    }

    fn balanced(n: usize) -> Vec<AnnotatedImage> {
        (0..n)
            .map(|i| {
                let s = (i % 4) as u8 + 1;
                img(&format!("i{i:03}"), [s; 5], &["tree"])
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_partition() {
        let data = balanced(100);
        let (split, report) = filter_and_split(&data, 0.1, 4).unwrap();
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.train.len(), 90);
        assert!(split.removed.is_empty());
        let mut all: Vec<String> = split.train.iter().chain(&split.test).cloned().collect();
        all.sort();
        let mut orig: Vec<String> = data.iter().map(|d| d.image_id.clone()).collect();
        orig.sort();
        assert_eq!(all, orig);
        assert!(report.betas.values().all(|b| *b > 0.0));
        let (again, report2) = filter_and_split(&data, 0.1, 4).unwrap();
        assert_eq!(again, split);
        assert_eq!(report2, report);
    }

    #[test]
    fn zero_entropy_category_removed() {
        let mut data = balanced(40);
        for i in 0..5 {
            data.push(img(&format!("s{i}"), [5; 5], &["sunset"]));
        }
        let (split, report) = filter_and_split(&data, 0.1, 1).unwrap();
        assert_eq!(split.removed.len(), 5);
        assert!(!split.train.iter().any(|id| id.starts_with('s')));
        let sunset = report.categories.iter().find(|c| c.category == "sunset").unwrap();
        assert!(sunset.highly_biased);
        assert_eq!(sunset.ratio, None);
    }

    #[test]
    fn too_few_unbiased_images() {
        let data: Vec<_> = (0..10)
            .map(|i| img(&format!("i{i}"), if i < 8 { [5; 5] } else { [1; 5] }, &["x"]))
            .collect();
        assert!(filter_and_split(&data, 0.5, 0).is_err());
    }

    #[test]
    fn beta_table_roundtrip() {
        let (_, report) = filter_and_split(&balanced(20), 0.1, 0).unwrap();
        let parsed = parse_beta_table(&report.beta_table(), "beta.tsv").unwrap();
        for (id, b) in &report.betas {
            assert_eq!(parsed[id], *b);
        }
        assert!(parse_beta_table("a\t-1\n", "x").is_err());
    }
}
