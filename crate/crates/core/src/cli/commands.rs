use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::overlay::draw_partition_overlay;
use crate::bias::{filter_and_split, parse_beta_table};
use crate::data::synth::{generate, write_dataset, SynthSpec};
use crate::data::{
    atomic_write, cell_features, encode_feature_file, load_annotations, load_dataset, read_checkpoint,
    read_feature_file, read_id_list, write_checkpoint, Checkpoint, DType, ModelInput,
};
use crate::model::{FeatureSource, Model, ModelConfig, ModelParams};
use crate::patterns::pattern_mask;
use crate::raster::Raster;
use crate::saliency::{downsample_max, spectral_residual};
use crate::stats::{
    batch_consistency, kendalls_w, pairwise_spearman_p, permutation_test_w, RatingTable,
};
use crate::trainer::{evaluate, format_log, train as run_training, TrainConfig};
use crate::{Error, Result, NUM_PATTERNS};

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::invalid(format!("{} is not a file", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", path.display())));
    }
    Ok(())
}

pub fn synth(spec: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default_spec(),
    };
    let data = generate(&spec, seed)?;
    write_dataset(out, &data)?;
    println!("wrote {} images to {}", data.records.len(), out.display());
    Ok(())
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    let files = if input.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        files
    } else {
        require_file(input)?;
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG files in {}", input.display())));
    }
    for f in &files {
        image::ImageReader::open(f)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| Error::io(f, e))?
            .into_dimensions()
            .map_err(|source| Error::Image {
                path: f.clone(),
                source,
            })?;
    }
    Ok(files)
}

pub fn saliency(input: &Path, out: &Path, feat: bool) -> Result<()> {
    let files = png_inputs(input)?;
    files.par_iter().try_for_each(|f| -> Result<()> {
        let stem = f.file_stem().expect("png file name").to_string_lossy().into_owned();
        let map = spectral_residual(&Raster::load_png(f)?)?;
        atomic_write(&out.join(format!("{stem}.png")), &map.to_raster().encode_png()?)?;
        if feat {
            let bytes = encode_feature_file(1, map.height(), map.width(), map.values());
            atomic_write(&out.join(format!("{stem}.feat")), &bytes)?;
        }
        Ok(())
    })?;
    println!("saliency maps for {} images in {}", files.len(), out.display());
    Ok(())
}

pub fn prepare(annotations: &Path, out: &Path, test_fraction: f64, seed: u64) -> Result<()> {
    let records = load_annotations(annotations)?;
    let (split, report) = filter_and_split(&records, test_fraction, seed)?;
    let lines = |ids: &[String]| ids.iter().map(|id| format!("{id}\n")).collect::<String>();
    write_text(&out.join("bias_table.tsv"), &report.table())?;
    write_text(&out.join("bias_report.txt"), &report.summary())?;
    write_text(&out.join("beta.tsv"), &report.beta_table())?;
    write_text(&out.join("train.txt"), &lines(&split.train))?;
    write_text(&out.join("test.txt"), &lines(&split.test))?;
    write_text(&out.join("removed.txt"), &lines(&split.removed))?;
    print!("{}", report.summary());
    println!(
        "train {} / test {} / removed {}",
        split.train.len(),
        split.test.len(),
        split.removed.len()
    );
    Ok(())
}

fn optional_ids(path: &Path) -> Result<Option<Vec<String>>> {
    if path.exists() {
        Ok(Some(read_id_list(path)?))
    } else {
        Ok(None)
    }
}

fn checkpoint_with_meta(params: &ModelParams, cfg: &TrainConfig, epoch: usize) -> Checkpoint {
    let mut ckpt = params.to_checkpoint(&cfg.model, DType::F32);
    ckpt.meta.insert("emd_r".into(), format!("{:e}", cfg.loss.r));
    ckpt.meta.insert("epoch".into(), epoch.to_string());
    ckpt.meta.insert("seed".into(), cfg.seed.to_string());
    ckpt
}

pub fn train(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    require_dir(data)?;
    let ids = optional_ids(&data.join("train.txt"))?;
    let beta_path = data.join("beta.tsv");
    let betas: Option<HashMap<String, f64>> = if cfg.loss.use_weighted_emd {
        if !beta_path.exists() {
            return Err(Error::invalid(format!(
                "weighted EMD needs {} (run `samp prepare`)",
                beta_path.display()
            )));
        }
        let text = std::fs::read_to_string(&beta_path).map_err(|e| Error::io(&beta_path, e))?;
        let table = parse_beta_table(&text, &beta_path.display().to_string())?;
        Some(table)
    } else {
        None
    };
    let samples = load_dataset(data, &cfg.model, ids.as_deref(), betas.as_ref())?;
    if let Some(b) = &betas {
        if let Some(s) = samples.iter().find(|s| !b.contains_key(s.id())) {
            return Err(Error::invalid(format!("no weight for training image `{}`", s.id())));
        }
    }

    let outcome = run_training(&samples, &cfg)?;
    let mut timing = String::from("epoch\tseconds\n");
    for (e, s) in outcome.epoch_seconds.iter().enumerate() {
        let _ = writeln!(timing, "{}\t{s:.3}", e + 1);
    }
    write_text(&out.join("train_log.tsv"), &format_log(&outcome.log))?;
    write_text(&out.join("timing.tsv"), &timing)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    write_checkpoint(out.join("final.ckpt"), &checkpoint_with_meta(&outcome.params, &cfg, cfg.max_epochs))?;
    write_checkpoint(
        out.join("best.ckpt"),
        &checkpoint_with_meta(&outcome.best_params, &cfg, outcome.best_epoch),
    )?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} images: total {:.5} (wemd {:.5}, atts {:.5}); best epoch {}",
        last.epoch,
        samples.len(),
        last.total,
        last.wemd,
        last.atts,
        outcome.best_epoch
    );
    Ok(())
}

fn load_model(checkpoint: &Path) -> Result<(Checkpoint, ModelConfig, ModelParams)> {
    let ckpt = read_checkpoint(checkpoint)?;
    let (config, params) = ModelParams::from_checkpoint(&ckpt)?;
    Ok((ckpt, config, params))
}

pub fn eval(
    checkpoint: &Path,
    data: &Path,
    report: &Path,
    split: Option<&Path>,
    predictions: Option<&Path>,
) -> Result<()> {
    let (ckpt, config, params) = load_model(checkpoint)?;
    require_dir(data)?;
    let ids = match split {
        Some(p) => Some(read_id_list(p)?),
        None => optional_ids(&data.join("test.txt"))?,
    };
    let r = match ckpt.meta("emd_r") {
        Ok(v) => v
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("checkpoint emd_r `{v}`")))?,
        Err(_) => 2.0,
    };
    let samples = load_dataset(data, &config, ids.as_deref(), None)?;
    let model = Model::new(config)?;
    let (metrics, preds) = evaluate(&model, &params, &samples, r)?;
    write_text(report, &metrics.to_lines())?;
    if let Some(p) = predictions {
        let mut text = String::from("image_id\texpected\ttarget\temd\tdistribution\n");
        for pred in &preds {
            text.push_str(&pred.to_line());
            text.push('\n');
        }
        write_text(p, &text)?;
    }
    println!("{metrics}");
    Ok(())
}

pub fn raters(table: &Path, out: &Path, seed: u64, permutations: usize, batch_size: usize, q: f64) -> Result<()> {
    let table = RatingTable::load(table)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("FDR level q={q} outside (0, 1]")));
    }
    let w = kendalls_w(&table)?;
    let perm = permutation_test_w(&table, permutations, seed)?;
    let pairs = pairwise_spearman_p(&table, permutations, seed)?;
    let batches = if table.items() >= batch_size {
        Some(batch_consistency(&table, batch_size, q, permutations, seed)?)
    } else {
        None
    };

    let mut summary = String::new();
    let _ = writeln!(summary, "raters\t{}", table.raters());
    let _ = writeln!(summary, "items\t{}", table.items());
    let _ = writeln!(summary, "kendalls_w\t{w:e}");
    let _ = writeln!(summary, "permutation_p\t{:e}", perm.p_value);
    let _ = writeln!(summary, "permutations\t{permutations}");
    let _ = writeln!(summary, "mean_spearman_rho\t{:e}", pairs.mean_rho);
    let _ = writeln!(summary, "mean_spearman_p\t{:e}", pairs.mean_p);
    if let Some(b) = &batches {
        let mean_w = b.w.iter().sum::<f64>() / b.w.len() as f64;
        let _ = writeln!(summary, "batches\t{}", b.w.len());
        let _ = writeln!(summary, "mean_batch_w\t{mean_w:e}");
        let _ = writeln!(summary, "significant_fraction\t{:e}", b.fraction);
    }

    let mut pair_text = String::from("rater_a\trater_b\trho\tp\n");
    for (a, b, rho, p) in &pairs.pairs {
        let _ = writeln!(pair_text, "{}\t{}\t{rho:e}\t{p:e}", a + 1, b + 1);
    }
    let mut hist = String::from("w_low,w_high,count\n");
    const BINS: usize = 50;
    let mut counts = [0usize; BINS];
    for v in &perm.null {
        counts[((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        let _ = writeln!(hist, "{},{},{c}", k as f64 / BINS as f64, (k + 1) as f64 / BINS as f64);
    }

    write_text(&out.join("raters.tsv"), &summary)?;
    write_text(&out.join("pairs.tsv"), &pair_text)?;
    write_text(&out.join("w_null.csv"), &hist)?;
    if let Some(b) = &batches {
        let mut text = String::from("batch\tw\tp\tsignificant\n");
        for (k, ((w, p), r)) in b.w.iter().zip(&b.p_values).zip(&b.rejected).enumerate() {
            let _ = writeln!(text, "{}\t{w:e}\t{p:e}\t{}", k + 1, u8::from(*r));
        }
        write_text(&out.join("batches.tsv"), &text)?;
    }

    println!(
        "{} raters x {} items: Kendall's W {:.4} (permutation p = {:.4})",
        table.raters(),
        table.items(),
        w,
        perm.p_value
    );
    println!(
        "pairwise Spearman: mean rho {:.4}, mean p {:.4}",
        pairs.mean_rho, pairs.mean_p
    );
    match &batches {
        Some(b) => println!(
            "{} batches of {batch_size}: {:.1}% significant at FDR {q}",
            b.w.len(),
            100.0 * b.fraction
        ),
        None => println!("fewer than {batch_size} items; batch analysis skipped"),
    }
    Ok(())
}

pub fn visualize(
    checkpoint: &Path,
    image_path: &Path,
    out: &Path,
    features: Option<&Path>,
    pattern: Option<usize>,
) -> Result<()> {
    if let Some(p) = pattern {
        if !(1..=NUM_PATTERNS).contains(&p) {
            return Err(Error::invalid(format!("pattern {p} outside 1..={NUM_PATTERNS}")));
        }
    }
    let (_, config, params) = load_model(checkpoint)?;
    let image = Raster::load_png(image_path)?;
    let input = match config.feature_source {
        FeatureSource::ToyStem => {
            let (h, w) = config.stem_input_size();
            ModelInput::Image(image.resize_bilinear(h, w))
        }
        FeatureSource::Precomputed => match features {
            Some(f) => ModelInput::Features(read_feature_file(f)?),
            None if config.channels == crate::data::CELL_FEATURE_CHANNELS => {
                ModelInput::Features(cell_features(&image, config.height, config.width)?)
            }
            None => {
                return Err(Error::invalid(format!(
                    "model reads {}-channel features; pass --features",
                    config.channels
                )))
            }
        },
    };
    let saliency_map = spectral_residual(&image)?;
    let grid = downsample_max(&saliency_map, config.saliency_height(), config.saliency_width())?;
    let model = Model::new(config.clone())?;
    let pred = model.predict(&params, &input, &grid)?;
    let dominant = pred.dominant_pattern();
    let shown = pattern.unwrap_or(dominant);
    let overlay = draw_partition_overlay(&image, &pattern_mask(shown, config.height, config.width)?);

    let mut report = String::new();
    let probs: Vec<String> = pred.distribution.probs().iter().map(|p| format!("{p:e}")).collect();
    let _ = writeln!(report, "distribution\t{}", probs.join(","));
    let _ = writeln!(report, "expected_score\t{:e}", pred.expected_score());
    for (p, w) in pred.pattern_weights.iter().enumerate() {
        let _ = writeln!(report, "pattern_weight_{}\t{w:e}", p + 1);
    }
    let _ = writeln!(report, "dominant_pattern\t{dominant}");
    let _ = writeln!(report, "attention\t{:e},{:e}", pred.attention[0], pred.attention[1]);
    if let Some(a) = &pred.attributes {
        let v: Vec<String> = a.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(report, "attributes\t{}", v.join(","));
    }

    atomic_write(&out.join("saliency.png"), &saliency_map.to_raster().encode_png()?)?;
    atomic_write(&out.join("overlay.png"), &overlay.encode_png()?)?;
    write_text(&out.join("prediction.tsv"), &report)?;

    println!("expected score {:.3}", pred.expected_score());
    println!(
        "distribution {}",
        pred.distribution
            .probs()
            .iter()
            .map(|p| format!("{p:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    for (p, w) in pred.pattern_weights.iter().enumerate() {
        let mark = if p + 1 == dominant { "  <- dominant" } else { "" };
        println!("pattern {} weight {w:.4}{mark}", p + 1);
    }
    println!("overlay shows pattern {shown}");
    Ok(())
}
