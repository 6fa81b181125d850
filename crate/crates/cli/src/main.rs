//! `niaque` command-line tool.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use niaque::checkpoint::Checkpoint;
use niaque::config::RunConfig;
use niaque::data::{self, FeatureRegistry, RawTable, Split, SplitDataset};
use niaque::evaluate::{evaluate, predict, EvalOptions};
use niaque::gradcheck;
use niaque::interpret::importance_weights;
use niaque::loss::format_sig6;
use niaque::synthetic::SyntheticTask;
use niaque::trainer::{finetune, pretrain, FinetuneOptions, TrainOutcome};
use niaque::{NiaqueError, Result};

#[derive(Parser)]
#[command(name = "niaque", version, about = "Any-quantile regression for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads the run configuration.
#[derive(Args, Clone, Default)]
struct Common {
    /// Config file with `[model]`, `[train]`, `[data]`, `[eval]`, `[gradcheck]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `train.seed`, `eval.seed` and `gradcheck.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// `section.key=value` override, repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic task to CSV, with its generating parameters alongside.
    Synth {
        #[arg(long, default_value = "hetero-gaussian")]
        task: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest every dataset in a manifest and report its shape.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the encoded datasets.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a fresh model on every dataset in a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a checkpoint to one dataset of a manifest.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Fraction of the train split used.
        #[arg(long)]
        fraction: Option<f64>,
        /// Dataset to adapt to; defaults to the first manifest entry.
        #[arg(long)]
        dataset: Option<String>,
        /// Learning-rate multiplier relative to `train.lr`.
        #[arg(long, default_value_t = 0.1)]
        lr_scale: f64,
        /// Grow the embedding table when new features do not fit.
        #[arg(long)]
        auto_resize: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Metric report on one split of every manifest dataset.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        quantiles: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Quantile predictions for the rows of a CSV, in target units.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated levels in (0, 1).
        #[arg(long, value_delimiter = ',', required = true)]
        quantiles: Vec<f64>,
        /// Dataset whose columns and target scale apply; defaults to the last one trained.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature importance from single-feature interval widths.
    Importance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    if let Some(seed) = common.seed {
        for key in ["train.seed", "eval.seed", "gradcheck.seed"] {
            cfg.set(key, &seed.to_string())?;
        }
    }
    cfg.apply_overrides(common.overrides.iter().map(String::as_str))?;
    cfg.validate()?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(NiaqueError::InvalidArgument("--threads must be positive".into()));
        }
        // Every kernel runs on the calling thread, so any positive cap is met.
        log::debug!("thread cap {n}");
    }
    for line in cfg.echo() {
        eprintln!("config {line}");
    }
    Ok(cfg)
}

fn ingest_manifest(path: &Path, registry: &mut FeatureRegistry, cfg: &RunConfig) -> Result<Vec<SplitDataset>> {
    data::ingest_manifest(path, registry, &cfg.ingest_options())
}

/// Re-ingests a manifest against a checkpoint and insists on the same target scaling.
fn datasets_for(ckpt: &Checkpoint, manifest: &Path, cfg: &RunConfig) -> Result<Vec<SplitDataset>> {
    let mut registry = ckpt.registry.clone();
    let datasets = ingest_manifest(manifest, &mut registry, cfg)?;
    for ds in &datasets {
        ckpt.check_dataset(ds)?;
    }
    Ok(datasets)
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| NiaqueError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_outcome(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| NiaqueError::io(out, e))?;
    outcome.last.save(out.join("final.ckpt"))?;
    outcome.best.save(out.join("best.ckpt"))?;
    let best = outcome.best.val_pinball.map(format_sig6).unwrap_or_else(|| "n/a".into());
    log::info!("wrote {} (best val_pinball={best})", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { task, n, seed, out } => {
            let t = SyntheticTask::preset(&task)?;
            let table = t.sample_table(n, &mut niaque::rng::stream(seed, &format!("synthetic:{task}")))?;
            let f = File::create(&out).map_err(|e| NiaqueError::io(&out, e))?;
            table.write_csv(BufWriter::new(f))?;
            let side = out.with_extension("json");
            let meta = serde_json::json!({ "task": task, "n": n, "seed": seed, "target": "y", "params": t });
            let text = serde_json::to_string_pretty(&meta).expect("plain data serialises");
            fs::write(&side, text + "\n").map_err(|e| NiaqueError::io(&side, e))?;
        }
        Command::Ingest { manifest, out, common } => {
            let cfg = load_config(&common)?;
            let mut registry = FeatureRegistry::new();
            let datasets = ingest_manifest(&manifest, &mut registry, &cfg)?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir).map_err(|e| NiaqueError::io(dir, e))?;
            }
            for ds in &datasets {
                let m = &ds.meta;
                println!(
                    "{} rows={} features={} train={} val={} test={} y_min={} y_max={}",
                    m.name,
                    m.n_rows,
                    m.n_features,
                    ds.train.len(),
                    ds.val.len(),
                    ds.test.len(),
                    format_sig6(m.y_min),
                    format_sig6(m.y_max)
                );
                if let Some(dir) = &out {
                    data::save_store(ds, dir.join(format!("{}.niaq", m.name)))?;
                }
            }
        }
        Command::Train { manifest, out, common } => {
            let cfg = load_config(&common)?;
            let mut registry = FeatureRegistry::new();
            let datasets = ingest_manifest(&manifest, &mut registry, &cfg)?;
            let s = &cfg.sections;
            let outcome = pretrain(&datasets, &registry, s.model.clone(), s.train.clone(), &mut io::stderr())?;
            write_outcome(&out, &outcome)?;
        }
        Command::Finetune {
            ckpt,
            manifest,
            fraction,
            dataset,
            lr_scale,
            auto_resize,
            out,
            mut common,
        } => {
            if let Some(p) = fraction {
                common.overrides.push(format!("train.data_fraction={p}"));
            }
            let cfg = load_config(&common)?;
            let base = Checkpoint::load(&ckpt)?;
            let mut registry = base.registry.clone();
            let datasets = ingest_manifest(&manifest, &mut registry, &cfg)?;
            let target = match &dataset {
                None => &datasets[0],
                Some(name) => datasets
                    .iter()
                    .find(|d| &d.meta.name == name)
                    .ok_or_else(|| NiaqueError::InvalidArgument(format!("dataset `{name}` is not in the manifest")))?,
            };
            let opts = FinetuneOptions { lr_scale, auto_resize };
            let outcome = finetune(&base, &registry, target, cfg.sections.train.clone(), &opts, &mut io::stderr())?;
            write_outcome(&out, &outcome)?;
        }
        Command::Evaluate {
            ckpt,
            manifest,
            split,
            quantiles,
            out,
            mut common,
        } => {
            if let Some(q) = quantiles {
                common.overrides.push(format!("eval.n_quantiles={q}"));
            }
            let cfg = load_config(&common)?;
            let c = Checkpoint::load(&ckpt)?;
            let datasets = datasets_for(&c, &manifest, &cfg)?;
            let opts: &EvalOptions = &cfg.sections.eval;
            let report = evaluate(&c.model, &datasets, split, opts)?;
            let mut w = output(out.as_deref())?;
            w.write_all(report.to_record().as_bytes()).map_err(|e| NiaqueError::io("report", e))?;
            w.flush().map_err(|e| NiaqueError::io("report", e))?;
        }
        Command::Predict {
            ckpt,
            input,
            quantiles,
            dataset,
            out,
        } => {
            let c = Checkpoint::load(&ckpt)?;
            let meta = match &dataset {
                Some(name) => c
                    .dataset(name)
                    .ok_or_else(|| NiaqueError::InvalidArgument(format!("dataset `{name}` is not in the checkpoint")))?,
                None => c
                    .datasets
                    .last()
                    .ok_or_else(|| NiaqueError::Format("checkpoint carries no dataset metadata".into()))?,
            };
            let table = RawTable::read_csv(&input)?;
            let rows = meta.encode_table(&table)?;
            let pred = predict(&c.model, &rows, &quantiles)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["row_index", "q", "yhat"])?;
            for i in 0..rows.len() {
                for (j, q) in quantiles.iter().enumerate() {
                    let yhat = meta.denormalize(pred.at(i, j));
                    w.write_record([i.to_string(), q.to_string(), format_sig6(yhat)])?;
                }
            }
            w.flush().map_err(|e| NiaqueError::io("predictions", e))?;
        }
        Command::Importance {
            ckpt,
            manifest,
            alpha,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            let c = Checkpoint::load(&ckpt)?;
            let datasets = datasets_for(&c, &manifest, &cfg)?;
            let mut w = output(out.as_deref())?;
            for (i, ds) in datasets.iter().enumerate() {
                let report = importance_weights(&c.model, ds, alpha)?;
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                // One header for the whole file.
                let text = String::from_utf8(buf).expect("csv is utf-8");
                let body = if i == 0 { &text[..] } else { text.split_once('\n').map_or("", |x| x.1) };
                w.write_all(body.as_bytes()).map_err(|e| NiaqueError::io("importance", e))?;
            }
            w.flush().map_err(|e| NiaqueError::io("importance", e))?;
        }
        Command::Gradcheck { common } => {
            let cfg = load_config(&common)?;
            let report = gradcheck::run(&cfg.sections.gradcheck)?;
            for (i, c) in report.cases.iter().enumerate() {
                let m = &c.config;
                println!(
                    "case={i} blocks={} layers={} latent={} rows={} checked={} max_rel_err={:e} worst={}",
                    m.blocks, m.layers_per_block, m.latent_dim, c.rows, c.checked, c.max_rel_err, c.worst
                );
            }
            println!("max_rel_err={:e} tolerance={:e}", report.max_rel_err, report.tolerance);
            if !report.passed() {
                return Err(NiaqueError::InvalidArgument(format!(
                    "gradient check failed: {:e} > {:e}",
                    report.max_rel_err, report.tolerance
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
