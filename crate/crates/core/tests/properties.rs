use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use samp_core::bias::{alpha_weights, filter_and_split, sample_beta, BinTable, RATIO_THRESHOLD};
use samp_core::data::{
    format_annotation, mean_score, parse_annotations, score_histogram, AnnotatedImage, FeatureMap, ModelInput,
    SaliencyGrid, ScoreDistribution,
};
use samp_core::losses::{emd_loss, sample_loss, LossConfig};
use samp_core::model::{Model, ModelConfig, ModelParams};
use samp_core::patterns::{pattern_mask, PARTITION_COUNTS};
use samp_core::stats::{benjamini_hochberg, kendalls_w, lcc, srcc, RatingTable};

fn distribution() -> impl Strategy<Value = ScoreDistribution> {
    prop::array::uniform5(0.0f64..1.0).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| ScoreDistribution::new(w.map(|v| v / s)).unwrap())
    })
}

fn record() -> impl Strategy<Value = AnnotatedImage> {
    (
        "[a-z][a-z0-9_]{0,11}",
        prop::array::uniform5(1u8..=5),
        prop::array::uniform5(-1.0f64..=1.0),
        prop::collection::vec("[a-z]{1,6}", 0..4),
    )
        .prop_map(|(image_id, scores, attributes, categories)| AnnotatedImage {
            image_id,
            scores,
            attributes,
            categories,
            image_path: None,
        })
}

#[test]
fn mean_score_equals_histogram_expectation_for_all_score_tuples() {
    for code in 0..5usize.pow(5) {
        let mut c = code;
        let scores: Vec<u8> = (0..5)
            .map(|_| {
                let s = (c % 5) as u8 + 1;
                c /= 5;
                s
            })
            .collect();
        let hist = score_histogram(&scores).unwrap();
        assert_eq!(mean_score(&scores).unwrap(), hist.expected_score(), "{scores:?}");
    }
}

#[test]
fn beta_is_one_for_uniform_categories() {
    // Each category appears once in every bin, so every α is 1.
    let bins = [[1, 1, 1, 1, 1], [2, 2, 2, 2, 2], [3, 3, 3, 3, 3], [4, 4, 4, 4, 4]];
    let mut images = Vec::new();
    for (k, scores) in bins.iter().enumerate() {
        for (c, cats) in [vec!["a"], vec!["b"], vec!["a", "b"]].iter().enumerate() {
            images.push(AnnotatedImage {
                image_id: format!("i{k}_{c}"),
                scores: *scores,
                attributes: [0.0; 5],
                categories: cats.iter().map(|s| s.to_string()).collect(),
                image_path: None,
            });
        }
    }
    let table = BinTable::build(&images).unwrap();
    let alphas = table
        .columns()
        .iter()
        .map(|(c, col)| (c.clone(), alpha_weights(col).unwrap()))
        .collect();
    for img in &images {
        assert_eq!(sample_beta(img, &alphas).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn annotations_roundtrip(records in prop::collection::vec(record(), 0..20)) {
        let mut seen = std::collections::HashSet::new();
        let records: Vec<AnnotatedImage> = records.into_iter().filter(|r| seen.insert(r.image_id.clone())).collect();
        let text: String = records.iter().map(|r| format_annotation(r) + "\n").collect();
        let parsed = parse_annotations(&text, "generated").unwrap();
        prop_assert_eq!(parsed.len(), records.len());
        for (a, b) in parsed.iter().zip(&records) {
            prop_assert!(a.validate().is_ok());
            prop_assert_eq!(&a.image_id, &b.image_id);
            prop_assert_eq!(a.scores, b.scores);
            prop_assert_eq!(a.attributes, b.attributes);
            prop_assert_eq!(&a.categories, &b.categories);
        }
    }

    #[test]
    fn histograms_are_distributions(scores in prop::array::uniform5(1u8..=5)) {
        let h = score_histogram(&scores).unwrap();
        prop_assert!(ScoreDistribution::new(*h.probs()).is_ok());
    }

    #[test]
    fn patterns_partition_any_grid(h in 3usize..40, w in 3usize..40, p in 1usize..=8) {
        let map = pattern_mask(p, h, w).unwrap();
        prop_assert_eq!(map.num_partitions(), PARTITION_COUNTS[p - 1]);
        prop_assert_eq!(map.sizes().iter().sum::<usize>(), h * w);
        let mut seen = vec![false; h * w];
        for cells in map.all_cells() {
            for c in cells {
                prop_assert!(!seen[c]);
                seen[c] = true;
            }
        }
        prop_assert_eq!(pattern_mask(p, h, w).unwrap(), map);
    }

    #[test]
    fn emd_is_a_symmetric_metric(a in distribution(), b in distribution(), c in distribution()) {
        let d = |x: &ScoreDistribution, y: &ScoreDistribution| emd_loss(x, y, 2.0).unwrap();
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!(d(&a, &a) <= 1e-12);
        if a.probs().iter().zip(b.probs()).any(|(x, y)| (x - y).abs() > 1e-6) {
            prop_assert!(d(&a, &b) > 1e-12);
        }
    }

    #[test]
    fn total_loss_is_nonnegative_and_linear_in_lambda(
        y in distribution(), yhat in distribution(), beta in 0.1f64..5.0,
        pred in prop::array::uniform5(-2.0f64..2.0), gt in prop::array::uniform5(-1.0f64..1.0),
        lambda in 0.0f64..3.0,
    ) {
        let at = |l: f64| {
            let cfg = LossConfig { r: 2.0, lambda: l, use_weighted_emd: true };
            sample_loss(&y, &yhat, beta, Some((&pred, &gt)), &cfg).unwrap().parts
        };
        let (zero, one, any) = (at(0.0), at(1.0), at(lambda));
        prop_assert!(any.total >= 0.0);
        let predicted = zero.total + lambda * (one.total - zero.total);
        prop_assert!((any.total - predicted).abs() <= 1e-12 * (1.0 + any.total));
    }

    #[test]
    fn srcc_ignores_monotone_transforms(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(base) = srcc(&a, &b) {
            let ta: Vec<f64> = a.iter().map(|x| x.powi(3) + 2.0 * x).collect();
            let tb: Vec<f64> = b.iter().map(|x| (x / 50.0).exp()).collect();
            prop_assert!((srcc(&ta, &tb).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn lcc_ignores_positive_affine_maps(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        scale in 0.1f64..10.0, shift in -5.0f64..5.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(base) = lcc(&a, &b) {
            let ta: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            prop_assert!((lcc(&ta, &b).unwrap() - base).abs() <= 1e-9);
        }
    }

    #[test]
    fn bh_is_monotone_in_q(p in prop::collection::vec(0.0f64..=1.0, 1..30), q1 in 0.001f64..0.5, dq in 0.0f64..0.5) {
        let low = benjamini_hochberg(&p, q1).unwrap();
        let high = benjamini_hochberg(&p, q1 + dq).unwrap();
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(!l || *h);
        }
    }

    #[test]
    fn kendalls_w_lies_in_unit_interval(rows in prop::collection::vec(prop::collection::vec(1u8..=5, 6), 2..6)) {
        if let Ok(w) = kendalls_w(&RatingTable::new(rows).unwrap()) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&w));
        }
    }
}

fn random_images(n: usize, seed: u64) -> Vec<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["a", "b", "c", "d", "e"];
    (0..n)
        .map(|i| {
            let categories: Vec<String> = (0..rng.gen_range(0..3)).map(|_| names[rng.gen_range(0..5)].to_string()).collect();
            let lift = if categories.iter().any(|c| c == "a") { 2 } else { 0 };
            let mut scores = [0u8; 5];
            scores.iter_mut().for_each(|s| *s = (rng.gen_range(1..=3) + rng.gen_range(0..=lift)).min(5));
            AnnotatedImage {
                image_id: format!("x{i}"),
                scores,
                attributes: [0.0; 5],
                categories,
                image_path: None,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_reproducible_and_tests_only_unbiased(seed in any::<u64>()) {
        let images = random_images(400, seed);
        let Ok((split, report)) = filter_and_split(&images, 0.1, seed) else {
            return Ok(());
        };
        let (split2, report2) = filter_and_split(&images, 0.1, seed).unwrap();
        prop_assert_eq!(&split.test, &split2.test);
        prop_assert_eq!(report.table(), report2.table());
        prop_assert_eq!(report.beta_table(), report2.beta_table());
        prop_assert!(report.betas.values().all(|b| *b > 0.0 && b.is_finite()));
        let ratio: std::collections::HashMap<&str, Option<f64>> =
            report.categories.iter().map(|c| (c.category.as_str(), c.ratio)).collect();
        for id in &split.test {
            let img = images.iter().find(|i| &i.image_id == id).unwrap();
            for c in &img.categories {
                prop_assert!(ratio[c.as_str()].is_some_and(|r| r <= RATIO_THRESHOLD));
            }
        }
    }

    #[test]
    fn predictions_are_distributions_and_ignore_unused_saliency(seed in any::<u64>(), use_saliency in any::<bool>()) {
        let mut cfg = ModelConfig::small(4, 8);
        cfg.use_saliency = use_saliency;
        let params = ModelParams::init(&cfg, seed).unwrap();
        prop_assert_eq!(params.num_parameters(), ModelParams::init(&cfg, seed ^ 1).unwrap().num_parameters());
        let model = Model::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.channels * cfg.height * cfg.width;
        let input = ModelInput::Features(
            FeatureMap::new(cfg.channels, cfg.height, cfg.width, (0..n).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap(),
        );
        let (sh, sw) = (cfg.saliency_height(), cfg.saliency_width());
        let s1 = SaliencyGrid::new(sh, sw, (0..sh * sw).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let s2 = SaliencyGrid::new(sh, sw, (0..sh * sw).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let p1 = model.predict(&params, &input, &s1).unwrap();
        let sum: f64 = p1.distribution.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12 && p1.distribution.probs().iter().all(|p| *p >= 0.0));
        if !use_saliency {
            prop_assert_eq!(p1, model.predict(&params, &input, &s2).unwrap());
        }
    }
}
