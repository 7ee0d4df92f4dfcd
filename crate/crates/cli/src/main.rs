//! `rethseg`: dataset generation, training, evaluation, inference and
//! ablation for the desk-scale segmentation network.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rethseg::blocks::BlockVariant;
use rethseg::data::{generate_dataset, load_split, CoOccurrenceSpec, Split};
use rethseg::kv::KvMap;
use rethseg::train::{ablate, evaluate_checkpoint, infer_file, Checkpoint, TrainConfig, Trainer};
use rethseg::{Error, Precision, Result, Scalar};

#[derive(Parser)]
#[command(name = "rethseg", version, about = "Desk-scale context-aware semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic co-occurrence dataset.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        count_train: usize,
        #[arg(long, default_value_t = 50)]
        count_val: usize,
        #[arg(long, default_value_t = 100)]
        count_test: usize,
    },
    /// Train a model; writes last.ckpt, best.ckpt and log.csv under --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of initialising afresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write <prefix>.txt (key = value) and <prefix>.csv.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict the mask of one PPM image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output prefix; writes <prefix>_mask.pgm and <prefix>_overlay.ppm.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train each block variant over several seeds and compare test mIoU.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "baseline_c,rethinker_d,rethinker_e")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Directory for per-run checkpoints and ablation.{txt,csv}.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run<T: Scalar>(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen {
            spec,
            out,
            count_train,
            count_val,
            count_test,
        } => {
            let spec = CoOccurrenceSpec::from_kv(&KvMap::parse(&read_text(&spec)?)?)?;
            generate_dataset(&out, &spec, [count_train, count_val, count_test])?;
            println!(
                "wrote {count_train}/{count_val}/{count_test} samples of {0}x{0} to {1}",
                spec.size(),
                out.display()
            );
        }
        Command::Train { config, out, resume } => {
            let cfg = TrainConfig::parse(&read_text(&config)?)?;
            let mut trainer = match resume {
                Some(p) => {
                    let ck = Checkpoint::load(&p)?;
                    let mut stored = ck.config.clone();
                    stored.epochs = cfg.epochs;
                    if stored != cfg {
                        return Err(Error::Config(format!(
                            "{} was trained with a different config (only epochs may change on resume)",
                            p.display()
                        )));
                    }
                    Trainer::<T>::from_checkpoint(&ck, Some(cfg.epochs))?
                }
                None => Trainer::<T>::new(cfg.clone())?,
            };
            let (_, train) = load_split(&cfg.dataset_root, Split::Train)?;
            let val = match load_split(&cfg.dataset_root, Split::Val) {
                Ok((_, v)) => v,
                Err(Error::Data(_)) => Vec::new(),
                Err(e) => return Err(e),
            };
            println!("{} parameters, precision {}", trainer.model().parameter_count(), T::NAME);
            trainer.run(&train, &val, Some(&out), |e| {
                let val = e.val_miou.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
                println!("epoch {:>4} lr {:.1e} loss {:.5} val_miou {val}", e.epoch, e.lr, e.train_loss);
            })?;
        }
        Command::Eval {
            ckpt,
            data,
            split,
            report,
        } => {
            let split: Split = split.parse()?;
            let ck = Checkpoint::load(&ckpt)?;
            let r = evaluate_checkpoint::<T>(&ck, &data, split)?;
            print!("{}", r.to_kv_text());
            if let Some(prefix) = report {
                write_text(&prefix.with_extension("txt"), &r.to_kv_text())?;
                write_text(&prefix.with_extension("csv"), &r.to_csv())?;
            }
        }
        Command::Infer { ckpt, input, out } => {
            let model = Checkpoint::load(&ckpt)?.model::<T>()?;
            let o = infer_file(&model, &input, &out)?;
            println!("{}\n{}", o.mask.display(), o.overlay.display());
        }
        Command::Ablate {
            config,
            variants,
            seeds,
            out,
        } => {
            let cfg = TrainConfig::parse(&read_text(&config)?)?;
            let variants = variants
                .iter()
                .map(|v| v.parse::<BlockVariant>().map_err(Error::Config))
                .collect::<Result<Vec<_>>>()?;
            if let Some(o) = &out {
                fs::create_dir_all(o).map_err(|source| Error::Io { path: o.clone(), source })?;
            }
            let report = ablate::<T>(&cfg, &variants, seeds, out.as_deref(), |r| {
                println!(
                    "{} seed {}: miou {:.4} paired_iou {:.4}",
                    r.variant, r.seed, r.miou, r.paired_iou
                );
            })?;
            print!("{}", report.to_text());
            if let Some(o) = &out {
                write_text(&o.join("ablation.txt"), &report.to_text())?;
                write_text(&o.join("ablation.csv"), &report.to_csv())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let Some(precision) = Precision::from_env() else {
        eprintln!("error: {} must be f32 or f64", Precision::ENV_VAR);
        return ExitCode::from(1);
    };
    let result = match precision {
        Precision::F32 => run::<f32>(cli.command),
        Precision::F64 => run::<f64>(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
