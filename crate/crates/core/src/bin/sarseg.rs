//! Command-line surface: synthetic dataset generation, training, evaluation,
//! single-image prediction, and gradient checking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sarseg::config::GlobalConfig;
use sarseg::data::{
    dataset_dirs, pair_paths, save_mask, save_tile, scene_rng, split_dataset, synth_scene,
    DatasetManifest, Split,
};
use sarseg::error::Error;
use sarseg::fusion::binarize;
use sarseg::gradcheck::run_all_checks;
use sarseg::metrics::{metrics, roc_auc, write_metrics_csv, write_roc_csv};
use sarseg::model::FusionNet;
use sarseg::train::{load_checkpoint, train};
use sarseg::{data, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "sarseg",
    about = "Two-branch SAR oil-spill segmentation: synthetic data, training, evaluation, prediction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speckled-SAR dataset with ground-truth masks.
    Synth(SynthArgs),
    /// Train the two-branch network on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split.
    Evaluate(EvaluateArgs),
    /// Predict the spill mask for a single image.
    Predict(PredictArgs),
    /// Verify every operator's backward pass against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of image/mask pairs to generate.
    #[arg(long)]
    count: usize,
    /// Master seed for scene generation and the split shuffle.
    #[arg(long)]
    seed: u64,
    /// Tile size in pixels (square).
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Train fraction of the split.
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// Optional config whose data.scene section parameterizes the generator.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory (overrides data.root from the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoint, log, and resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory (manifest.json + weights.bin).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory with a manifest.
    #[arg(long)]
    data: PathBuf,
    /// Which split to evaluate.
    #[arg(long, default_value = "test")]
    split: String,
    /// Binarization threshold.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Directory for metrics.csv and roc.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input 8-bit grayscale PNG/PGM image.
    #[arg(long)]
    image: PathBuf,
    /// Output mask PNG ({0,255}).
    #[arg(long)]
    out: PathBuf,
    /// Optional probability map PNG (round(255*p)).
    #[arg(long)]
    prob_out: Option<PathBuf>,
    /// Binarization threshold.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Master seed for the random probe points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random seeds per operator.
    #[arg(long, default_value_t = 10)]
    seeds_per_check: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with exit 0.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 1,
                Error::Numeric(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

/// Rejects an existing non-empty directory unless `force` is set.
fn guard_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() && !force {
        return Err(Error::data(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    if args.count == 0 {
        return Err(Error::config("--count must be >= 1"));
    }
    let mut config = match &args.config {
        Some(path) => GlobalConfig::load(path)?,
        None => GlobalConfig::default(),
    };
    config.data.scene.size = args.size;
    config.data.scene.seed = args.seed;
    config.data.scene.validate()?;
    let spec = config.data.scene.clone();

    guard_out_dir(&args.out, args.force)?;
    let (images_dir, masks_dir) = dataset_dirs(&args.out);
    std::fs::create_dir_all(&images_dir)?;
    std::fs::create_dir_all(&masks_dir)?;

    let mut pairs = Vec::with_capacity(args.count);
    for index in 0..args.count {
        let (image, mask) = synth_scene(&spec, &mut scene_rng(&spec, index as u64))?;
        let stem = format!("{index:05}");
        let (image_rel, mask_rel) = pair_paths(&stem);
        save_tile(&args.out.join(&image_rel), &image)?;
        save_mask(&args.out.join(&mask_rel), &mask)?;
        pairs.push((image_rel, mask_rel));
    }
    let manifest = split_dataset(pairs, args.split_ratio, args.seed)?;
    manifest.save(&args.out)?;
    std::fs::write(
        args.out.join("resolved_config.json"),
        config.to_resolved_json()?,
    )?;
    println!(
        "wrote {} pairs to {} ({} train / {} test)",
        args.count,
        args.out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Test),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let config = GlobalConfig::load(&args.config)?;
    let data_root = args
        .data
        .clone()
        .or_else(|| config.data.root.clone())
        .ok_or_else(|| Error::config("no dataset: pass --data or set data.root"))?;

    guard_out_dir(&args.out, args.force)?;
    std::fs::create_dir_all(&args.out)?;

    let manifest = DatasetManifest::load(&data_root)?;
    let train_items = manifest.load_split(&data_root, Split::Train)?;
    let val_items = manifest.load_split(&data_root, Split::Test)?;

    let mut net = FusionNet::new(config.model_config(), config.train.seed)?;
    std::fs::write(
        args.out.join("resolved_config.json"),
        config.to_resolved_json()?,
    )?;
    let outcome = train(
        &mut net,
        &train_items,
        &val_items,
        &config.train,
        &config.loss,
        &config.data.augment,
        &args.out,
    )?;
    println!(
        "trained {} epochs on {} items; best val IoU {:.4} at epoch {}",
        outcome.log.len(),
        train_items.len(),
        outcome.best_val_iou,
        outcome.best_epoch,
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let split: Split = args.split.parse()?;
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(Error::config(format!(
            "--threshold must lie strictly in (0,1), got {}",
            args.threshold
        )));
    }
    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.data)?;
    let items = manifest.load_split(&args.data, split)?;

    let (counts, scores, labels) = sarseg::train::evaluate_items(&net, &items, args.threshold)?;
    let mut report = metrics(&counts)?;
    let (curve, auc) = roc_auc(&scores, &labels)?;
    report.roc_auc = Some(auc);

    std::fs::create_dir_all(&args.out)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &report)?;
    write_roc_csv(&args.out.join("roc.csv"), &curve)?;
    println!(
        "{} items ({:?}): accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} iou {:.4} roc_auc {:.4}",
        items.len(),
        split,
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report.iou,
        auc,
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(args: PredictArgs) -> Result<ExitCode> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(Error::config(format!(
            "--threshold must lie strictly in (0,1), got {}",
            args.threshold
        )));
    }
    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let image: Tensor = data::load_tile(&args.image)?;
    let (prob, _) = net.forward(&image)?;
    let mask = binarize(&prob, args.threshold);
    save_mask(&args.out, &mask)?;
    if let Some(prob_path) = &args.prob_out {
        save_tile(prob_path, &prob)?;
    }
    let spill_fraction = mask.sum() / mask.shape().count() as f64;
    println!(
        "predicted {} ({:.1}% spill pixels)",
        args.out.display(),
        100.0 * spill_fraction
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let results = run_all_checks(args.seed, args.seeds_per_check)?;
    let mut all_pass = true;
    for r in &results {
        println!(
            "{} {:<24} max_rel_err {:.3e} (tolerance {:.0e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance,
        );
        all_pass &= r.pass;
    }
    if all_pass {
        println!("all {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::numeric("gradient check failed"))
    }
}
