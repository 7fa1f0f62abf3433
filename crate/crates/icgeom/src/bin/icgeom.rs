//! Command-line front end for the classifier pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 invariance
//! failure.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use icgeom::checkpoint::{load_model, save_model};
use icgeom::dataset::{load_dataset, preprocess_dir};
use icgeom::eval::{evaluate, invariance_check};
use icgeom::geomfeat::per_point_features;
use icgeom::pointcloud::load_xyz;
use icgeom::train::{parse_synthetic_spec, train, Arch, TrainConfig};

#[derive(Parser)]
#[command(name = "icgeom", version, about = "Industrial-component point-cloud classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample a mesh dataset to labeled fixed-size XYZ clouds.
    Preprocess {
        /// Dataset root laid out as <root>/<class>/<object>.obj
        #[arg(long)]
        input: PathBuf,
        /// Output root; mirrors the class layout with .xyz files
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Skip unit-sphere normalization
        #[arg(long)]
        no_normalize: bool,
    },
    /// Write the per-point geometric descriptors of one cloud as CSV.
    Features {
        #[arg(long)]
        input: PathBuf,
        /// Neighborhood size for the local covariance
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a classifier with SGD and write a checkpoint.
    Train {
        /// Dataset root laid out as <root>/<class>/<object>.{obj,xyz}
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Synthetic corpus spec, e.g. plate,sphere,strut:50:0.02
        #[arg(long)]
        synthetic: Option<String>,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        /// Architecture preset: compact or full
        #[arg(long, default_value = "compact")]
        arch: String,
        #[arg(long)]
        no_normalize: bool,
        /// Per-epoch metrics are appended here
        #[arg(long, default_value = "train_log.csv")]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: confusion matrix, per-class ROC, summary.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Verify permutation/translation/scaling invariance of the pipeline.
    CheckInvariance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Print the architecture and parameter count of a checkpoint.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap also lands here for --help/--version
            let code = if e.use_stderr() { 1 } else { 0 };
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(2);
        }
    }
}

fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn io_err(path: &PathBuf, e: std::io::Error) -> icgeom::Error {
    icgeom::Error::Io {
        path: path.clone(),
        source: e,
    }
}

fn run(cli: Cli) -> icgeom::Result<i32> {
    match cli.command {
        Command::Preprocess {
            input,
            output,
            points,
            seed,
            no_normalize,
        } => {
            let written = preprocess_dir(&input, &output, points, seed, !no_normalize)?;
            println!(
                "wrote {written} clouds of {points} points to {}",
                output.display()
            );
            Ok(0)
        }

        Command::Features { input, k, output } => {
            let cloud = load_xyz(&input)?;
            let rows = per_point_features(&cloud, k)?;
            let mut text = String::from("L,P,S,A,sum,C,O\n");
            for f in &rows {
                let cells: Vec<String> = f.to_array().iter().map(|v| sig9(*v)).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            fs::write(&output, text).map_err(|e| io_err(&output, e))?;
            println!("wrote {} descriptor rows to {}", rows.len(), output.display());
            Ok(0)
        }

        Command::Train {
            data,
            synthetic,
            k,
            epochs,
            lr,
            momentum,
            batch,
            seed,
            points,
            arch,
            no_normalize,
            log,
            out,
        } => {
            let dataset = match (&data, &synthetic) {
                (Some(dir), None) => load_dataset(dir, points, seed, false)?.0,
                (None, Some(spec)) => {
                    let (families, per_class, noise) = parse_synthetic_spec(spec)?;
                    icgeom::train::make_synthetic_dataset(
                        &families, per_class, points, noise, seed,
                    )?
                }
                _ => {
                    eprintln!("error: exactly one of --data or --synthetic is required");
                    return Ok(1);
                }
            };
            let config = TrainConfig {
                k,
                lr,
                momentum,
                epochs,
                batch_size: batch,
                seed,
                points,
                normalize: !no_normalize,
                arch: Arch::parse(&arch)?,
                ..TrainConfig::default()
            };
            let (model, metrics) = train(&config, &dataset)?;

            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log)
                .map_err(|e| io_err(&log, e))?;
            let need_header = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
            if need_header {
                writeln!(file, "epoch,train_loss,val_accuracy").map_err(|e| io_err(&log, e))?;
            }
            for m in &metrics {
                writeln!(file, "{},{},{}", m.epoch, m.train_loss, m.val_accuracy)
                    .map_err(|e| io_err(&log, e))?;
                println!(
                    "epoch {:>3}  train_loss {:.6}  val_accuracy {:.4}",
                    m.epoch, m.train_loss, m.val_accuracy
                );
            }
            save_model(&model, &out)?;
            println!(
                "saved model ({} parameters) to {}",
                model.param_count(),
                out.display()
            );
            Ok(0)
        }

        Command::Eval {
            model,
            data,
            out_dir,
            points,
            seed,
            no_normalize,
        } => {
            let model = load_model(&model)?;
            let (clouds, _) = load_dataset(&data, points, seed, false)?;
            let report = evaluate(&model, &clouds, !no_normalize)?;
            report.write_to_dir(&out_dir)?;
            println!("accuracy: {:.6}", report.accuracy);
            for (c, curve) in report.roc.iter().enumerate() {
                match curve {
                    Some(curve) => println!("class {c}: auc {:.6}", curve.auc),
                    None => println!("class {c}: auc undefined (single-class data)"),
                }
            }
            println!("artifacts written to {}", out_dir.display());
            Ok(0)
        }

        Command::CheckInvariance {
            model,
            input,
            trials,
            seed,
            no_normalize,
        } => {
            let model = load_model(&model)?;
            let cloud = load_xyz(&input)?;
            let report = invariance_check(&model, &cloud, trials, seed, !no_normalize)?;
            println!(
                "trials: {} (normalization {})",
                report.trials,
                if report.normalize { "on" } else { "off" }
            );
            println!("max permutation deviation: {:.3e}", report.max_permutation_dev);
            println!("max translation deviation: {:.3e}", report.max_translation_dev);
            println!("max scaling deviation:     {:.3e}", report.max_scale_dev);
            println!("tolerance: {:.1e}", report.tolerance);
            if report.passed() {
                println!("invariance check PASSED");
                Ok(0)
            } else {
                println!("invariance check FAILED");
                Ok(3)
            }
        }

        Command::Info { model } => {
            let model = load_model(&model)?;
            let cfg = &model.config;
            println!(
                "architecture: k={}, embed={:?}, edge={:?}, head={:?}, classes={}",
                cfg.k, cfg.embed_widths, cfg.edge_widths, cfg.head_widths, cfg.classes
            );
            for t in model.tensors() {
                println!(
                    "{:<24} {:>14} {:>10}",
                    t.name,
                    format!("{:?}", t.dims),
                    t.data.len()
                );
            }
            println!("total parameters: {}", model.param_count());
            Ok(0)
        }
    }
}
