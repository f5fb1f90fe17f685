//! Subcommand implementations. Each writes its primary output, then a
//! `.manifest` sidecar, and prints one completion line.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use fiqa_core::config::ModelConfig;
use fiqa_core::eval;
use fiqa_core::heatmap::{self, PatchMap};
use fiqa_core::image::{self, Raster};
use fiqa_core::scoring::{self, Metric, ScoringError, Strategy};
use fiqa_core::vit::{self, AttentionCapture};
use fiqa_core::weights::{self, WeightSet};

use crate::manifest::RunManifest;
use crate::{
    AblateArgs, CliError, EdcArgs, GenWeightsArgs, GroupStatsArgs, HeatmapArgs, ScoreArgs,
};

/// CSV columns are comma-separated with no quoting, so paths that would be
/// written into a CSV must not contain commas.
fn check_csv_safe(paths: &[PathBuf]) -> Result<(), CliError> {
    for p in paths {
        if p.to_string_lossy().contains(',') {
            return Err(CliError::Invalid(format!("path `{}` contains a comma", p.display())));
        }
    }
    Ok(())
}

/// Runs the job on a dedicated pool of `workers` threads, or on the global
/// pool when no count is given.
fn with_pool<T: Send>(
    workers: Option<usize>,
    job: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match workers {
        None => job(),
        Some(0) => Err(CliError::Invalid("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Invalid(format!("worker pool: {e}")))?
            .install(job),
    }
}

pub fn score(args: &ScoreArgs) -> Result<(), CliError> {
    check_csv_safe(&args.images)?;
    let cfg = ModelConfig::load(&args.config)?;
    let ws = weights::load_weights(&args.weights, &cfg)?;

    // parallel map keeps input order in the collected vector
    let rows: Vec<(String, f64, usize)> = with_pool(args.workers, || {
        args.images
            .par_iter()
            .map(|path| -> Result<(String, f64, usize), CliError> {
                let img = image::load_image(path, &cfg)?;
                let (_, cap) = vit::forward_with_capture(&img, &ws, &cfg, args.block)?;
                let q = scoring::quality_score(&cap, args.strategy, args.metric)?;
                Ok((path.display().to_string(), q.value, q.block))
            })
            .collect()
    })?;

    let mut f = BufWriter::new(File::create(&args.out)?);
    writeln!(f, "path,raw_score,strategy,metric,block")?;
    for (path, value, block) in &rows {
        writeln!(f, "{path},{value},{},{},{block}", args.strategy, args.metric)?;
    }
    f.flush()?;

    let mut m = RunManifest::new("score");
    m.push("weights", args.weights.display());
    m.push("config", args.config.display());
    m.push("out", args.out.display());
    m.push("strategy", args.strategy);
    m.push("metric", args.metric);
    m.push("block", args.block.unwrap_or(cfg.num_blocks));
    m.push("images", args.images.len());
    m.write(&RunManifest::sibling_path(&args.out))?;
    println!("wrote {} ({} rows)", args.out.display(), rows.len());
    Ok(())
}

/// Drops all but one 1-based head from a capture.
fn restrict_head(
    cap: AttentionCapture,
    head: Option<usize>,
) -> Result<AttentionCapture, CliError> {
    let Some(h) = head else { return Ok(cap) };
    if h < 1 || h > cap.heads.len() {
        return Err(
            ScoringError::HeadOutOfRange { head: h, num_heads: cap.heads.len() }.into(),
        );
    }
    let mut heads = cap.heads;
    let kept = heads.swap_remove(h - 1);
    Ok(AttentionCapture { block_index: cap.block_index, heads: vec![kept], scale: cap.scale })
}

pub fn heatmap(args: &HeatmapArgs) -> Result<(), CliError> {
    check_csv_safe(&args.images)?;
    let cfg = ModelConfig::load(&args.config)?;
    let ws = weights::load_weights(&args.weights, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;

    // output names come from input stems, so stems must be unique
    let mut stems = Vec::with_capacity(args.images.len());
    let mut seen = HashSet::new();
    for p in &args.images {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CliError::Invalid(format!("`{}` has no file stem", p.display())))?;
        if !seen.insert(stem.clone()) {
            return Err(CliError::Invalid(format!("two inputs share the stem `{stem}`")));
        }
        stems.push(stem);
    }

    struct Item {
        path: String,
        base: Raster,
        map: PatchMap,
        raw: f64,
    }

    let items: Vec<Item> = with_pool(args.workers, || {
        args.images
            .par_iter()
            .map(|path| -> Result<Item, CliError> {
                let base = image::read_ppm(path)?;
                let img = image::load_image(path, &cfg)?;
                let (_, cap) = vit::forward_with_capture(&img, &ws, &cfg, args.block)?;
                let cap = restrict_head(cap, args.head)?;
                let map = heatmap::patch_participation(&cap, &cfg)?;
                let raw = scoring::concat_quality(&cap, Metric::Mean)?.value;
                Ok(Item { path: path.display().to_string(), base, map, raw })
            })
            .collect()
    })?;

    if !items.is_empty() {
        // one scale across the batch keeps colors comparable between images
        let maps: Vec<PatchMap> = items.iter().map(|i| i.map.clone()).collect();
        let scale = heatmap::build_color_scale(&maps)?;
        for (item, stem) in items.iter().zip(&stems) {
            let heat = heatmap::render_heatmap(&item.map, &scale, cfg.patch_size)?;
            image::write_ppm(&args.out_dir.join(format!("{stem}_heat.ppm")), &heat)?;
            let over = heatmap::overlay(&item.base, &heat, args.alpha)?;
            image::write_ppm(&args.out_dir.join(format!("{stem}_overlay.ppm")), &over)?;
        }
    }

    let raws: Vec<f64> = items.iter().map(|i| i.raw).collect();
    let norms = scoring::normalize_scores(&raws);
    let scores_path = args.out_dir.join("scores.csv");
    let mut f = BufWriter::new(File::create(&scores_path)?);
    writeln!(f, "path,raw_score,normalized_score")?;
    for (item, norm) in items.iter().zip(&norms) {
        writeln!(f, "{},{},{norm}", item.path, item.raw)?;
    }
    f.flush()?;

    let mut m = RunManifest::new("heatmap");
    m.push("weights", args.weights.display());
    m.push("config", args.config.display());
    m.push("out_dir", args.out_dir.display());
    m.push("alpha", args.alpha);
    match args.head {
        Some(h) => m.push("head", h),
        None => m.push("head", "all"),
    }
    m.push("block", args.block.unwrap_or(cfg.num_blocks));
    m.push("images", args.images.len());
    m.write(&args.out_dir.join("run.manifest"))?;
    println!("wrote {} images to {}", items.len(), args.out_dir.display());
    Ok(())
}

/// Multiples of `step` from 0 up to `max`, the last point snapped onto `max`
/// when rounding lands within 1e-9 of it.
fn discard_grid(step: f64, max: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Invalid(format!("--grid-step must be positive, got {step}")));
    }
    if !(0.0..=1.0).contains(&max) {
        return Err(CliError::Invalid(format!("--grid-max must be in [0, 1], got {max}")));
    }
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let r = i as f64 * step;
        if r > max + 1e-9 {
            break;
        }
        grid.push(if (r - max).abs() <= 1e-9 { max } else { r });
        i += 1;
    }
    Ok(grid)
}

pub fn edc(args: &EdcArgs) -> Result<(), CliError> {
    let emb = eval::load_embeddings(&args.embeddings, &args.ids)?;
    let pairs = eval::load_pairs(&args.pairs)?;
    let qualities = eval::load_qualities(&args.qualities)?;
    let grid = discard_grid(args.grid_step, args.grid_max)?;
    let curve = eval::edc_curve(&emb, &pairs, &qualities, args.target_fmr, &grid)?;
    let summary = eval::write_curve(&args.out, &curve, args.pauc_cutoff)?;

    let mut m = RunManifest::new("edc");
    m.push("embeddings", args.embeddings.display());
    m.push("ids", args.ids.display());
    m.push("pairs", args.pairs.display());
    m.push("qualities", args.qualities.display());
    m.push("out", args.out.display());
    m.push("target_fmr", args.target_fmr);
    m.push("grid_step", args.grid_step);
    m.push("grid_max", args.grid_max);
    m.push("pauc_cutoff", args.pauc_cutoff);
    m.write(&RunManifest::sibling_path(&args.out))?;
    println!(
        "wrote {} (threshold {}, pauc {} = {} x1000)",
        args.out.display(),
        summary.threshold,
        summary.pauc,
        summary.pauc * 1000.0
    );
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<(), CliError> {
    check_csv_safe(std::slice::from_ref(&args.image))?;
    let cfg = ModelConfig::load(&args.config)?;
    let ws = weights::load_weights(&args.weights, &cfg)?;
    let img = image::load_image(&args.image, &cfg)?;
    let (_, cap) = vit::forward_with_capture(&img, &ws, &cfg, args.block)?;

    let mut strategies = vec![Strategy::Concat];
    for h in 1..=cap.heads.len() {
        strategies.push(Strategy::PerHead(h));
    }
    strategies.push(Strategy::AvgOfHeads);

    let mut f = BufWriter::new(File::create(&args.out)?);
    writeln!(f, "path,strategy,metric,block,score,status")?;
    let path = args.image.display();
    let mut rows = 0usize;
    for &s in &strategies {
        for m in Metric::ALL {
            // a dispersion collapse marks the row instead of aborting the sweep
            let (score, status) = match scoring::quality_score(&cap, s, m) {
                Ok(q) => (q.value, "ok"),
                Err(ScoringError::DegenerateDispersion) => (f64::NAN, "degenerate"),
                Err(e) => return Err(e.into()),
            };
            writeln!(f, "{path},{s},{m},{},{score},{status}", cap.block_index)?;
            rows += 1;
        }
    }
    f.flush()?;

    let mut m = RunManifest::new("ablate");
    m.push("weights", args.weights.display());
    m.push("config", args.config.display());
    m.push("out", args.out.display());
    m.push("block", cap.block_index);
    m.push("image", args.image.display());
    m.write(&RunManifest::sibling_path(&args.out))?;
    println!("wrote {} ({rows} rows)", args.out.display());
    Ok(())
}

fn load_labels(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 || fields[0].trim().is_empty() || fields[1].trim().is_empty() {
            return Err(CliError::Invalid(format!(
                "{}:{}: expected `id,group`",
                path.display(),
                i + 1
            )));
        }
        let id = fields[0].trim().to_string();
        if out.insert(id.clone(), fields[1].trim().to_string()).is_some() {
            return Err(CliError::Invalid(format!(
                "{}:{}: duplicate id `{id}`",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(out)
}

pub fn group_stats(args: &GroupStatsArgs) -> Result<(), CliError> {
    let scores = eval::load_qualities(&args.scores)?;
    let labels = load_labels(&args.labels)?;

    // the join is strict both ways; report every unmatched id at once
    let mut without_label: Vec<&str> =
        scores.keys().filter(|k| !labels.contains_key(*k)).map(String::as_str).collect();
    let mut without_score: Vec<&str> =
        labels.keys().filter(|k| !scores.contains_key(*k)).map(String::as_str).collect();
    if !without_label.is_empty() || !without_score.is_empty() {
        without_label.sort_unstable();
        without_score.sort_unstable();
        return Err(CliError::JoinMismatch {
            without_label: without_label.join(" "),
            without_score: without_score.join(" "),
        });
    }

    let mut ids: Vec<&String> = scores.keys().collect();
    ids.sort();
    let values: Vec<f64> = ids.iter().map(|id| scores[*id]).collect();
    let groups: Vec<String> = ids.iter().map(|id| labels[*id].clone()).collect();
    let summaries = scoring::group_statistics(&values, &groups)?;

    let mut f = BufWriter::new(File::create(&args.out)?);
    writeln!(f, "group,count,mean,min,q1,median,q3,max")?;
    for s in &summaries {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            s.label, s.count, s.mean, s.min, s.q1, s.median, s.q3, s.max
        )?;
    }
    f.flush()?;

    let mut m = RunManifest::new("group-stats");
    m.push("scores", args.scores.display());
    m.push("labels", args.labels.display());
    m.push("out", args.out.display());
    m.push("groups", summaries.len());
    m.write(&RunManifest::sibling_path(&args.out))?;
    println!("wrote {} ({} groups)", args.out.display(), summaries.len());
    Ok(())
}

pub fn gen_weights(args: &GenWeightsArgs) -> Result<(), CliError> {
    let cfg = ModelConfig::load(&args.config)?;
    let ws = WeightSet::seeded(&cfg, args.seed);
    weights::save_weights(&args.out, &ws, &cfg)?;

    let mut m = RunManifest::new("gen-weights");
    m.push("config", args.config.display());
    m.push("seed", args.seed);
    m.push("out", args.out.display());
    m.push("tensors", weights::manifest(&cfg).len());
    m.write(&RunManifest::sibling_path(&args.out))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
