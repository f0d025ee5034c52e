//! Command-line driver. Thin: parse, validate, echo the resolved config,
//! call into the library, map errors to exit codes (1 validation, 2 runtime).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{self, DirectionPolicy, GeometryMode};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{parse_action_string, ModelParams};
use crate::pnm;
use crate::tensor::Tensor;
use crate::train;

#[derive(Parser)]
#[command(
    name = "rotator",
    version,
    about = "Train and evaluate a recurrent convolutional encoder-decoder that renders rotated views of an object from a single image"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a procedural rotating-object dataset
    GenData(GenDataArgs),
    /// Run curriculum training, one checkpoint and loss curve per stage
    Train(TrainArgs),
    /// Render an action-driven rotation sequence from one input image
    Synth(SynthArgs),
    /// Per-step reconstruction MSE of a checkpoint on the test split
    EvalMse(EvalMseArgs),
    /// Cross-view recognition from identity and pose units
    EvalRecog(EvalRecogArgs),
    /// Pixel-averaging KNN baseline over the same MSE protocol
    Knn(KnnArgs),
    /// Supervised classifier baseline (encoder + softmax over identities)
    Classify(ClassifyArgs),
    /// Interpolate two inputs in latent space and render the rotation grid
    Interp(InterpArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// View geometry: bounded arc or full turntable
    #[arg(long)]
    regime: String,
    /// Number of identities
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Views per identity
    #[arg(long)]
    views: usize,
    /// Square image side in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// 3 for color, 1 for grayscale
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Identities in the train split (default: 80%)
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (overrides the config)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Input image (P5/P6)
    #[arg(long)]
    input: PathBuf,
    /// Action string, e.g. CWx16 or CCW,NOOPx2,CW
    #[arg(long)]
    actions: String,
    /// Output contact-sheet image
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalMseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Rollout length to evaluate
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalRecogArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// identity, pose or both
    #[arg(long, default_value = "both")]
    feature: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct KnnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: usize,
    /// Comma-separated K sweep
    #[arg(long, default_value = "1,3,5,7")]
    k: String,
    /// raw (pixels) or encoder (identity units of --ckpt)
    #[arg(long, default_value = "raw")]
    feature: String,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InterpArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input_a: PathBuf,
    #[arg(long)]
    input_b: PathBuf,
    /// Comma-separated interpolation weights in [0, 1]
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    betas: String,
    #[arg(long)]
    actions: String,
    /// Output contact-sheet image (one row per beta)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Entry point used by `main`. Returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match cli.cmd {
        Cmd::GenData(a) => run_gen_data(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Synth(a) => run_synth(a),
        Cmd::EvalMse(a) => run_eval_mse(a),
        Cmd::EvalRecog(a) => run_eval_recog(a),
        Cmd::Knn(a) => run_knn(a),
        Cmd::Classify(a) => run_classify(a),
        Cmd::Interp(a) => run_interp(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    let (cfg, defaulted) = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::from_json("{}")?,
    };
    echo_config(&cfg, &defaulted)?;
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig, defaulted: &[&str]) -> Result<()> {
    let json = serde_json::to_string(cfg).map_err(|e| Error::config(e.to_string()))?;
    println!("resolved config: {json}");
    if !defaulted.is_empty() {
        println!("defaults applied for: {}", defaulted.join(", "));
    }
    println!("seed: {}", cfg.seed);
    Ok(())
}

fn load_dataset_for(cfg: &RunConfig, data: &Path) -> Result<data::Dataset> {
    let ds = data::load(data)?;
    let m = &cfg.model;
    if ds.manifest.image_size != m.input_size || ds.manifest.channels != m.input_channels {
        return Err(Error::config(format!(
            "dataset is {}x{} with {} channels but the model expects {}x{} with {}; adjust the config's model block",
            ds.manifest.image_size,
            ds.manifest.image_size,
            ds.manifest.channels,
            m.input_size,
            m.input_size,
            m.input_channels
        )));
    }
    Ok(ds)
}

fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<ModelParams> {
    train::load_params(ckpt, &cfg.model)
}

fn read_input_image(cfg: &RunConfig, path: &Path) -> Result<Tensor> {
    let img = pnm::read_file(path)?;
    pnm::fit_to_canvas(&img.to_tensor(), cfg.model.input_channels, cfg.model.input_size)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RuntimeMeta {
    tool_version: &'static str,
    seed: u64,
    elapsed_secs: f64,
}

impl RuntimeMeta {
    fn since(start: Instant, seed: u64) -> Self {
        RuntimeMeta {
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            elapsed_secs: start.elapsed().as_secs_f64(),
        }
    }
}

fn run_gen_data(a: GenDataArgs) -> Result<()> {
    let mode = GeometryMode::parse(&a.regime)?;
    let gen = data::GenConfig {
        mode,
        identities: a.n,
        views: a.views,
        size: a.size,
        channels: a.channels,
        seed: a.seed,
        train_count: a.train_count,
    };
    println!(
        "resolved config: {{\"regime\":\"{}\",\"n\":{},\"views\":{},\"size\":{},\"channels\":{},\"train_count\":{:?},\"out\":{:?}}}",
        mode.as_str(),
        a.n,
        a.views,
        a.size,
        a.channels,
        gen.train_count,
        a.out
    );
    println!("seed: {}", a.seed);
    let ds = data::generate(&gen, &a.out)?;
    println!(
        "wrote {} identities x {} views ({} train / {} test) to {}",
        ds.manifest.identities,
        ds.manifest.views,
        ds.train_ids().len(),
        ds.test_ids().len(),
        a.out.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        println!("seed overridden: {seed}");
    }
    let data_dir = a
        .data
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::config("no dataset directory (set --data or the config's data key)"))?;
    let out_dir = a
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::config("no output directory (set --out or the config's out key)"))?;
    let ds = load_dataset_for(&cfg, &data_dir)?;
    ensure_dir(&out_dir)?;

    let echo_path = out_dir.join("resolved_config.json");
    let json =
        serde_json::to_string_pretty(&cfg).map_err(|e| Error::config(e.to_string()))?;
    std::fs::write(&echo_path, json).map_err(|e| Error::io(&echo_path, e))?;

    let artifacts = train::run_curriculum(
        &cfg.model,
        &ds,
        &cfg.stages,
        &cfg.train_opts(),
        cfg.seed,
        &out_dir,
    )?;
    for art in &artifacts {
        println!(
            "stage {}: checkpoint {} curve {}",
            art.name,
            art.checkpoint.display(),
            art.curve_csv.display()
        );
    }
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let params = load_model(&cfg, &a.ckpt)?;
    let input = read_input_image(&cfg, &a.input)?;
    let actions = parse_action_string(&a.actions)?;
    let frames = crate::model::rollout(&params, &input, &actions)?;
    let row: Vec<&Tensor> = frames.iter().map(|f| &f.image).collect();
    let sheet = eval::contact_sheet(&[row])?;
    pnm::write_file(&a.out, &sheet)?;
    println!("wrote {}-frame sheet to {}", frames.len(), a.out.display());
    Ok(())
}

fn run_eval_mse(a: EvalMseArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = load_config(&a.config)?;
    let ds = load_dataset_for(&cfg, &a.data)?;
    let params = load_model(&cfg, &a.ckpt)?;
    ensure_dir(&a.out)?;
    let report = eval::mse_by_step(
        &params,
        &ds,
        ds.test_ids(),
        a.steps,
        DirectionPolicy::Both,
        cfg.threads,
    )?;
    let label = a
        .ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    eval::write_mse_csv(
        &a.out.join("mse.csv"),
        &[(label.clone(), report.per_step.as_slice())],
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        model: &'a str,
        steps: usize,
        sequences: usize,
        per_step_mse: &'a [f64],
        mean_mse: f64,
        runtime: RuntimeMeta,
    }
    eval::write_json_summary(
        &a.out.join("summary.json"),
        &Summary {
            model: &label,
            steps: a.steps,
            sequences: report.count,
            per_step_mse: &report.per_step,
            mean_mse: report.mean_over_steps(),
            runtime: RuntimeMeta::since(start, cfg.seed),
        },
    )?;
    println!(
        "mean MSE over {} steps: {:.6} ({} sequences)",
        a.steps,
        report.mean_over_steps(),
        report.count
    );
    Ok(())
}

fn run_eval_recog(a: EvalRecogArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = load_config(&a.config)?;
    let ds = load_dataset_for(&cfg, &a.data)?;
    let params = load_model(&cfg, &a.ckpt)?;
    ensure_dir(&a.out)?;

    let kinds: Vec<eval::FeatureKind> = match a.feature.as_str() {
        "identity" => vec![eval::FeatureKind::Identity],
        "pose" => vec![eval::FeatureKind::Pose],
        "both" => vec![eval::FeatureKind::Identity, eval::FeatureKind::Pose],
        other => {
            return Err(Error::arg(format!(
                "unknown feature {other:?} (identity|pose|both)"
            )))
        }
    };
    let geometry = ds.geometry();
    let mut rows = Vec::new();
    for kind in kinds {
        let set = eval::ProbeSet::from_dataset(&params, &ds, ds.test_ids(), kind)?;
        let report = eval::cross_view_recognition(&set, &geometry)?;
        println!(
            "{} units: mean success {:.2}% (sd {:.2}, {} splits, {} zero-norm rows)",
            kind.as_str(),
            report.overall_mean,
            report.overall_sd,
            report.splits,
            report.excluded_zero_norm
        );
        rows.push((kind.as_str().to_string(), report));
    }
    let row_refs: Vec<(String, &eval::RecognitionReport)> =
        rows.iter().map(|(n, r)| (n.clone(), r)).collect();
    eval::write_recognition_csv(&a.out.join("recognition.csv"), &row_refs)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        results: Vec<(&'a str, &'a eval::RecognitionReport)>,
        runtime: RuntimeMeta,
    }
    eval::write_json_summary(
        &a.out.join("summary.json"),
        &Summary {
            results: rows.iter().map(|(n, r)| (n.as_str(), r)).collect(),
            runtime: RuntimeMeta::since(start, cfg.seed),
        },
    )?;
    Ok(())
}

fn run_knn(a: KnnArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = load_config(&a.config)?;
    let ds = load_dataset_for(&cfg, &a.data)?;
    ensure_dir(&a.out)?;
    let ks: Vec<usize> = a
        .k
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::arg(format!("bad K value {s:?}")))
        })
        .collect::<Result<_>>()?;
    let (feature, params) = match a.feature.as_str() {
        "raw" => (eval::KnnFeature::RawPixels, None),
        "encoder" => {
            let ckpt = a
                .ckpt
                .as_ref()
                .ok_or_else(|| Error::arg("encoder features require --ckpt"))?;
            (eval::KnnFeature::Encoder, Some(load_model(&cfg, ckpt)?))
        }
        other => return Err(Error::arg(format!("unknown feature {other:?} (raw|encoder)"))),
    };
    let reports = eval::knn_baseline(
        &ds,
        ds.train_ids(),
        ds.test_ids(),
        &ks,
        a.steps,
        feature,
        params.as_ref(),
        DirectionPolicy::Both,
    )?;
    let rows: Vec<(String, &[f64])> = reports
        .iter()
        .map(|r| (format!("KNN{}", r.k), r.per_step.as_slice()))
        .collect();
    eval::write_mse_csv(&a.out.join("knn_mse.csv"), &rows)?;
    for r in &reports {
        println!(
            "KNN{}: mean MSE {:.6} over {} steps",
            r.k,
            r.per_step.iter().sum::<f64>() / r.per_step.len() as f64,
            a.steps
        );
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        feature: &'a str,
        ks: &'a [usize],
        steps: usize,
        sequences: usize,
        runtime: RuntimeMeta,
    }
    eval::write_json_summary(
        &a.out.join("summary.json"),
        &Summary {
            feature: feature.as_str(),
            ks: &ks,
            steps: a.steps,
            sequences: reports.first().map(|r| r.count).unwrap_or(0),
            runtime: RuntimeMeta::since(start, cfg.seed),
        },
    )?;
    Ok(())
}

fn run_classify(a: ClassifyArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = load_config(&a.config)?;
    let ds = load_dataset_for(&cfg, &a.data)?;
    ensure_dir(&a.out)?;
    let opts = eval::ClassifierOpts {
        epochs: a.epochs,
        batch_size: cfg.batch_size,
        lr: 1e-3,
        seed: cfg.seed,
        threads: cfg.threads,
        adam: cfg.adam,
    };
    let (params, curve) = eval::classifier_baseline(&ds, &cfg.model, &opts)?;
    let acc = eval::classifier_accuracy(&params, &ds)?;
    train::save_params(&a.out.join("classifier.ckpt"), &params)?;

    let mut csv = String::from("epoch,cross_entropy\n");
    for (e, l) in &curve {
        csv.push_str(&format!("{e},{l}\n"));
    }
    let curve_path = a.out.join("classifier_curve.csv");
    std::fs::write(&curve_path, csv).map_err(|e| Error::io(&curve_path, e))?;

    let set = eval::ProbeSet::from_dataset(&params, &ds, ds.test_ids(), eval::FeatureKind::Identity)?;
    let report = eval::cross_view_recognition(&set, &ds.geometry())?;
    let row = [("classifier".to_string(), &report)];
    eval::write_recognition_csv(&a.out.join("recognition.csv"), &row)?;
    println!(
        "classifier: train accuracy {:.1}%, cross-view success {:.2}%",
        acc * 100.0,
        report.overall_mean
    );

    #[derive(Serialize)]
    struct Summary<'a> {
        train_accuracy: f32,
        recognition: &'a eval::RecognitionReport,
        runtime: RuntimeMeta,
    }
    eval::write_json_summary(
        &a.out.join("summary.json"),
        &Summary {
            train_accuracy: acc,
            recognition: &report,
            runtime: RuntimeMeta::since(start, cfg.seed),
        },
    )?;
    Ok(())
}

fn run_interp(a: InterpArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let params = load_model(&cfg, &a.ckpt)?;
    let img_a = read_input_image(&cfg, &a.input_a)?;
    let img_b = read_input_image(&cfg, &a.input_b)?;
    let betas: Vec<f32> = a
        .betas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f32>()
                .map_err(|_| Error::arg(format!("bad beta {s:?}")))
        })
        .collect::<Result<_>>()?;
    let actions = parse_action_string(&a.actions)?;
    let grid = eval::interpolate(&params, &img_a, &img_b, &betas, &actions)?;
    let rows: Vec<Vec<&Tensor>> = grid
        .frames
        .iter()
        .map(|row| row.iter().map(|f| &f.image).collect())
        .collect();
    let sheet = eval::contact_sheet(&rows)?;
    pnm::write_file(&a.out, &sheet)?;
    println!(
        "wrote {}x{} interpolation grid to {}",
        grid.betas.len(),
        actions.len(),
        a.out.display()
    );
    Ok(())
}
