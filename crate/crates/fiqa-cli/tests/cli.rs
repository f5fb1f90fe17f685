//! End-to-end tests for the command layer: real files in, real files out,
//! and the binary itself for exit-code behavior.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use fiqa_cli::{
    commands, AblateArgs, EdcArgs, GenWeightsArgs, GroupStatsArgs, HeatmapArgs, ScoreArgs,
};
use fiqa_core::config::ModelConfig;
use fiqa_core::eval::{self, EmbeddingSet};
use fiqa_core::image::{read_ppm, write_ppm, Raster};
use fiqa_core::scoring::{self, Metric, Strategy};
use fiqa_core::tensor::Matrix;
use fiqa_core::vit;
use fiqa_core::weights::{self, BlockWeights, WeightSet};

const CONFIG: &str = "image_height=8\nimage_width=8\npatch_size=4\nembed_dim=6\nnum_blocks=2\nnum_heads=2\nmlp_ratio=2.0\n";

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("model.cfg");
    std::fs::write(&p, CONFIG).unwrap();
    p
}

fn write_weights(dir: &Path, cfg_path: &Path, seed: u64) -> PathBuf {
    let p = dir.join(format!("w{seed}.afqw"));
    commands::gen_weights(&GenWeightsArgs {
        config: cfg_path.to_path_buf(),
        seed,
        out: p.clone(),
    })
    .unwrap();
    p
}

/// Deterministic pixel pattern, different per salt.
fn write_image(dir: &Path, name: &str, salt: u32) -> PathBuf {
    let mut r = Raster::filled(8, 8, [0, 0, 0]);
    for y in 0..8u32 {
        for x in 0..8u32 {
            let px = [
                ((x * 31 + y * 17 + salt * 7) % 256) as u8,
                ((x * 13 + y * 29 + salt * 11) % 256) as u8,
                ((x * 23 + y * 19 + salt * 3) % 256) as u8,
            ];
            r.set(x as usize, y as usize, px);
        }
    }
    let p = dir.join(name);
    write_ppm(&p, &r).unwrap();
    p
}

fn zero_weights(cfg: &ModelConfig) -> WeightSet {
    let d = cfg.embed_dim;
    let zero_block = BlockWeights {
        ln1_gamma: vec![0.0; d],
        ln1_beta: vec![0.0; d],
        wq: Matrix::zeros(d, d),
        wk: Matrix::zeros(d, d),
        wv: Matrix::zeros(d, d),
        wo: Matrix::zeros(d, d),
        ln2_gamma: vec![0.0; d],
        ln2_beta: vec![0.0; d],
        fc1: Matrix::zeros(d, cfg.hidden_dim()),
        fc1_bias: vec![0.0; cfg.hidden_dim()],
        fc2: Matrix::zeros(cfg.hidden_dim(), d),
        fc2_bias: vec![0.0; d],
    };
    WeightSet {
        patch_proj: Matrix::zeros(d, cfg.patch_dim()),
        patch_bias: vec![0.0; d],
        pos_embed: Matrix::zeros(cfg.num_patches(), d),
        blocks: vec![zero_block; cfg.num_blocks],
    }
}

// ---- score ------------------------------------------------------------------

#[test]
fn score_rows_match_library_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 7);
    let images =
        vec![write_image(dir.path(), "a.ppm", 1), write_image(dir.path(), "b.ppm", 2)];
    let out = dir.path().join("scores.csv");
    commands::score(&ScoreArgs {
        weights: weights.clone(),
        config: cfg_path.clone(),
        out: out.clone(),
        strategy: Strategy::Concat,
        metric: Metric::Mean,
        block: None,
        workers: None,
        images: images.clone(),
    })
    .unwrap();

    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,raw_score,strategy,metric,block");
    assert_eq!(lines.len(), 3);

    let cfg = ModelConfig::load(&cfg_path).unwrap();
    let ws = weights::load_weights(&weights, &cfg).unwrap();
    for (line, img_path) in lines[1..].iter().zip(&images) {
        let img = fiqa_core::image::load_image(img_path, &cfg).unwrap();
        let (_, cap) = vit::forward_with_capture(&img, &ws, &cfg, None).unwrap();
        let q = scoring::quality_score(&cap, Strategy::Concat, Metric::Mean).unwrap();
        let expect = format!("{},{},concat,mean,2", img_path.display(), q.value);
        assert_eq!(*line, expect);
    }

    let manifest = std::fs::read_to_string(dir.path().join("scores.csv.manifest")).unwrap();
    assert!(manifest.starts_with("command=score\n"));
    assert!(manifest.contains("\nblock=2\n"));
}

#[test]
fn score_without_images_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 1);
    let out = dir.path().join("empty.csv");
    let status = Process::new(env!("CARGO_BIN_EXE_fiqa"))
        .args(["score", "--weights"])
        .arg(&weights)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "path,raw_score,strategy,metric,block\n"
    );
}

#[test]
fn unknown_metric_is_a_usage_error() {
    let out = Process::new(env!("CARGO_BIN_EXE_fiqa"))
        .args(["score", "--weights", "w", "--config", "c", "--out", "o", "--metric", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"), "{stderr}");
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = Process::new(env!("CARGO_BIN_EXE_fiqa")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_weight_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let img = write_image(dir.path(), "a.ppm", 1);
    let out = Process::new(env!("CARGO_BIN_EXE_fiqa"))
        .args(["score", "--weights", "nope.afqw"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("o.csv"))
        .arg(&img)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn score_reruns_are_byte_identical_and_worker_count_is_irrelevant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 3);
    let images: Vec<PathBuf> = (0..4)
        .map(|i| write_image(dir.path(), &format!("i{i}.ppm"), 10 + i))
        .collect();
    let mut outputs = Vec::new();
    for (name, workers) in [("one.csv", None), ("two.csv", None), ("par.csv", Some(3))] {
        let out = dir.path().join(name);
        commands::score(&ScoreArgs {
            weights: weights.clone(),
            config: cfg_path.clone(),
            out: out.clone(),
            strategy: Strategy::AvgOfHeads,
            metric: Metric::Max,
            block: Some(1),
            workers,
            images: images.clone(),
        })
        .unwrap();
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

// ---- ablate -----------------------------------------------------------------

#[test]
fn ablate_sweeps_every_strategy_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 5);
    let image = write_image(dir.path(), "probe.ppm", 9);
    let out = dir.path().join("ablate.csv");
    commands::ablate(&AblateArgs {
        weights,
        config: cfg_path,
        out: out.clone(),
        block: None,
        image,
    })
    .unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,strategy,metric,block,score,status");
    // (concat + head1 + head2 + avg_heads) x 4 metrics
    assert_eq!(lines.len(), 1 + 16);
    let strategies: Vec<&str> =
        lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(strategies[0..4], ["concat"; 4]);
    assert_eq!(strategies[4..8], ["head1"; 4]);
    assert_eq!(strategies[8..12], ["head2"; 4]);
    assert_eq!(strategies[12..16], ["avg_heads"; 4]);
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
}

#[test]
fn ablate_marks_degenerate_rows_instead_of_failing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let cfg = ModelConfig::load(&cfg_path).unwrap();
    let weights_path = dir.path().join("zero.afqw");
    // all-zero weights collapse every attention row to a constant
    weights::save_weights(&weights_path, &zero_weights(&cfg), &cfg).unwrap();
    let image = write_image(dir.path(), "probe.ppm", 4);
    let out = dir.path().join("ablate.csv");
    commands::ablate(&AblateArgs {
        weights: weights_path,
        config: cfg_path,
        out: out.clone(),
        block: None,
        image,
    })
    .unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let degenerate: Vec<&str> =
        text.lines().filter(|l| l.ends_with(",degenerate")).collect();
    assert_eq!(degenerate.len(), 4); // inv_std for each strategy
    for row in &degenerate {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[2], "inv_std");
        assert_eq!(fields[4], "NaN");
    }
    // every non-dispersion row still scored
    assert_eq!(text.lines().filter(|l| l.ends_with(",ok")).count(), 12);
}

// ---- heatmap ----------------------------------------------------------------

#[test]
fn heatmap_writes_renders_overlays_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 11);
    let images =
        vec![write_image(dir.path(), "x.ppm", 21), write_image(dir.path(), "y.ppm", 22)];
    let out_dir = dir.path().join("maps");
    commands::heatmap(&HeatmapArgs {
        weights,
        config: cfg_path,
        out_dir: out_dir.clone(),
        alpha: 0.5,
        head: None,
        block: None,
        workers: None,
        images,
    })
    .unwrap();

    for stem in ["x", "y"] {
        let heat = read_ppm(&out_dir.join(format!("{stem}_heat.ppm"))).unwrap();
        assert_eq!((heat.width, heat.height), (8, 8));
        let over = read_ppm(&out_dir.join(format!("{stem}_overlay.ppm"))).unwrap();
        assert_eq!((over.width, over.height), (8, 8));
    }
    let scores = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    let lines: Vec<&str> = scores.lines().collect();
    assert_eq!(lines[0], "path,raw_score,normalized_score");
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let norm: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&norm));
    }
    let manifest = std::fs::read_to_string(out_dir.join("run.manifest")).unwrap();
    assert!(manifest.starts_with("command=heatmap\n"));
    assert!(manifest.contains("\nhead=all\n"));
}

#[test]
fn heatmap_alpha_zero_overlay_reproduces_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 13);
    let img_path = write_image(dir.path(), "base.ppm", 30);
    let out_dir = dir.path().join("maps");
    commands::heatmap(&HeatmapArgs {
        weights,
        config: cfg_path,
        out_dir: out_dir.clone(),
        alpha: 0.0,
        head: Some(1),
        block: Some(2),
        workers: None,
        images: vec![img_path.clone()],
    })
    .unwrap();
    let base = read_ppm(&img_path).unwrap();
    let over = read_ppm(&out_dir.join("base_overlay.ppm")).unwrap();
    assert_eq!(base, over);
}

#[test]
fn heatmap_rejects_duplicate_stems() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("sub");
    std::fs::create_dir(&sub).unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 17);
    let a = write_image(dir.path(), "same.ppm", 1);
    let b = write_image(&sub, "same.ppm", 2);
    let err = commands::heatmap(&HeatmapArgs {
        weights,
        config: cfg_path,
        out_dir: dir.path().join("maps"),
        alpha: 0.5,
        head: None,
        block: None,
        workers: None,
        images: vec![a, b],
    })
    .unwrap_err();
    assert!(err.to_string().contains("same"));
}

// ---- edc --------------------------------------------------------------------

fn edc_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let ids: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
    let vectors: Vec<f32> = vec![
        1.0, 0.0, //
        0.95, 0.3, //
        0.6, 0.8, //
        0.0, 1.0, //
        -0.4, 0.9, //
        -1.0, 0.2,
    ];
    let emb = EmbeddingSet::new(ids, 2, vectors).unwrap();
    let tensor = dir.join("emb.afqw");
    let id_file = dir.join("emb.ids");
    eval::save_embeddings(&tensor, &id_file, &emb).unwrap();

    let pairs = dir.join("pairs.csv");
    std::fs::write(
        &pairs,
        "id_a,id_b,label\n\
         s0,s1,genuine\n\
         s1,s2,genuine\n\
         s3,s4,genuine\n\
         s0,s3,impostor\n\
         s0,s5,impostor\n\
         s1,s4,impostor\n\
         s2,s5,impostor\n",
    )
    .unwrap();

    let qualities = dir.join("quality.csv");
    std::fs::write(
        &qualities,
        "path,raw_score\ns0,0.9\ns1,0.1\ns2,0.5\ns3,0.7\ns4,0.2\ns5,0.4\n",
    )
    .unwrap();
    (tensor, id_file, pairs, qualities)
}

#[test]
fn edc_writes_curve_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (tensor, ids, pairs, qualities) = edc_fixture(dir.path());
    let args = |out: PathBuf| EdcArgs {
        embeddings: tensor.clone(),
        ids: ids.clone(),
        pairs: pairs.clone(),
        qualities: qualities.clone(),
        out,
        target_fmr: 0.3,
        grid_step: 0.1,
        grid_max: 0.9,
        pauc_cutoff: 0.3,
    };
    let out1 = dir.path().join("curve1.csv");
    let out2 = dir.path().join("curve2.csv");
    commands::edc(&args(out1.clone())).unwrap();
    commands::edc(&args(out2.clone())).unwrap();
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());

    let text = std::fs::read_to_string(&out1).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "r,fnmr");
    assert_eq!(lines.len(), 1 + 10 + 1); // header, r = 0..0.9, summary
    assert!(lines[1].starts_with("0,"));
    assert!(lines[10].starts_with("0.9,"));
    let summary = lines[11];
    assert!(summary.starts_with("# threshold="));
    assert!(summary.contains("pauc_x1000="));
    assert!(std::fs::metadata(dir.path().join("curve1.csv.manifest")).is_ok());
}

#[test]
fn edc_requires_quality_for_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (tensor, ids, pairs, qualities) = edc_fixture(dir.path());
    std::fs::write(&qualities, "path,raw_score\ns0,0.9\ns1,0.1\n").unwrap();
    let err = commands::edc(&EdcArgs {
        embeddings: tensor,
        ids,
        pairs,
        qualities,
        out: dir.path().join("curve.csv"),
        target_fmr: 0.3,
        grid_step: 0.1,
        grid_max: 0.9,
        pauc_cutoff: 0.3,
    })
    .unwrap_err();
    assert!(err.to_string().contains("no quality score"), "{err}");
}

// ---- group-stats ------------------------------------------------------------

#[test]
fn group_stats_summarizes_sorted_groups() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(
        &scores,
        "path,raw_score\nimg0,1.0\nimg1,3.0\nimg2,2.0\nimg3,10.0\nimg4,20.0\n",
    )
    .unwrap();
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "id,group\nimg0,q1\nimg1,q1\nimg2,q1\nimg3,q0\nimg4,q0\n")
        .unwrap();
    let out = dir.path().join("stats.csv");
    commands::group_stats(&GroupStatsArgs { scores, labels, out: out.clone() }).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "group,count,mean,min,q1,median,q3,max");
    assert_eq!(lines[1], "q0,2,15,10,12.5,15,17.5,20");
    assert_eq!(lines[2], "q1,3,2,1,1.5,2,2.5,3");
}

#[test]
fn group_stats_rejects_partial_joins_listing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "path,raw_score\nimg0,1.0\nimg1,2.0\n").unwrap();
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "id,group\nimg0,a\nimg9,a\n").unwrap();
    let err = commands::group_stats(&GroupStatsArgs {
        scores,
        labels,
        out: dir.path().join("stats.csv"),
    })
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("img1") && msg.contains("img9"), "{msg}");
}

// ---- gen-weights ------------------------------------------------------------

#[test]
fn gen_weights_binary_output_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let run = |out: &Path| {
        let status = Process::new(env!("CARGO_BIN_EXE_fiqa"))
            .arg("gen-weights")
            .arg("--config")
            .arg(&cfg_path)
            .args(["--seed", "42", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let w1 = dir.path().join("a.afqw");
    let w2 = dir.path().join("b.afqw");
    run(&w1);
    run(&w2);
    assert_eq!(std::fs::read(&w1).unwrap(), std::fs::read(&w2).unwrap());
    let cfg = ModelConfig::load(&cfg_path).unwrap();
    let ws = weights::load_weights(&w1, &cfg).unwrap();
    assert_eq!(ws.blocks.len(), 2);

    // a different seed must change the payload
    let status = Process::new(env!("CARGO_BIN_EXE_fiqa"))
        .arg("gen-weights")
        .arg("--config")
        .arg(&cfg_path)
        .args(["--seed", "43", "--out"])
        .arg(dir.path().join("c.afqw"))
        .status()
        .unwrap();
    assert!(status.success());
    assert_ne!(
        std::fs::read(&w1).unwrap(),
        std::fs::read(dir.path().join("c.afqw")).unwrap()
    );
}

// ---- quality scores feed the curve ------------------------------------------

#[test]
fn score_csv_feeds_edc_as_quality_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 19);
    // image stems double as sample ids
    let images: Vec<PathBuf> =
        (0..4).map(|i| write_image(dir.path(), &format!("s{i}"), 40 + i)).collect();
    let score_csv = dir.path().join("q.csv");
    commands::score(&ScoreArgs {
        weights,
        config: cfg_path,
        out: score_csv.clone(),
        strategy: Strategy::Concat,
        metric: Metric::Mean,
        block: None,
        workers: None,
        images,
    })
    .unwrap();

    // rewrite the path column to bare ids to mimic an external join
    let text = std::fs::read_to_string(&score_csv).unwrap();
    let rewritten: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.to_string()
            } else {
                let (path, rest) = l.split_once(',').unwrap();
                format!("{},{rest}", Path::new(path).file_stem().unwrap().to_str().unwrap())
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&score_csv, rewritten + "\n").unwrap();

    let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let vectors = vec![1.0, 0.1, 0.9, 0.4, 0.2, 1.0, -0.1, 0.9];
    let emb = EmbeddingSet::new(ids, 2, vectors).unwrap();
    let tensor = dir.path().join("e.afqw");
    let id_file = dir.path().join("e.ids");
    eval::save_embeddings(&tensor, &id_file, &emb).unwrap();
    let pairs = dir.path().join("p.csv");
    std::fs::write(
        &pairs,
        "id_a,id_b,label\ns0,s1,genuine\ns2,s3,genuine\ns0,s2,impostor\ns1,s3,impostor\n",
    )
    .unwrap();

    let out = dir.path().join("curve.csv");
    commands::edc(&EdcArgs {
        embeddings: tensor,
        ids: id_file,
        pairs,
        qualities: score_csv,
        out: out.clone(),
        target_fmr: 0.4,
        grid_step: 0.25,
        grid_max: 0.75,
        pauc_cutoff: 0.5,
    })
    .unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("r,fnmr\n0,"));
    // quality map built from the scores: no missing-quality failure, 4 grid rows
    assert_eq!(text.lines().count(), 1 + 4 + 1);
}

// ---- misc -------------------------------------------------------------------

#[test]
fn comma_in_an_input_path_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let weights = write_weights(dir.path(), &cfg_path, 23);
    let bad = write_image(dir.path(), "a,b.ppm", 1);
    let err = commands::score(&ScoreArgs {
        weights,
        config: cfg_path,
        out: dir.path().join("o.csv"),
        strategy: Strategy::Concat,
        metric: Metric::Mean,
        block: None,
        workers: None,
        images: vec![bad],
    })
    .unwrap_err();
    assert!(err.to_string().contains("comma"));
}

#[test]
fn quality_map_loader_reads_first_two_columns() {
    // the score CSV written by the score command parses straight back in
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    std::fs::write(&p, "path,raw_score,strategy,metric,block\nx,1.5,concat,mean,2\n").unwrap();
    let q: HashMap<String, f64> = eval::load_qualities(&p).unwrap();
    assert_eq!(q["x"], 1.5);
}
