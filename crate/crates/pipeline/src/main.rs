use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vqi_core::cam::Method;
use vqi_core::metrics::TimingMode;
use vqi_pipeline::{server, stages, RunConfig};

/// Explanation-guided visual inspection: train, explain, evaluate, augment, compare.
#[derive(Parser)]
#[command(name = "vqi", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Comma-separated method names, e.g. `GradCAM,HiResCAM`.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// `wall_clock` or `cost_model`.
    #[arg(long, global = true, value_parser = parse_timing)]
    timing: Option<TimingMode>,
}

fn parse_timing(s: &str) -> Result<TimingMode, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the data directory.
    Synth,
    /// Train the original model.
    Train,
    /// Write explanation maps for every eval (image, class) pair.
    Explain {
        /// Explain a stored tensor bundle instead of the trained model.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Score every method and choose the core one.
    EvalXai,
    /// Apply an augmentation plan to the training annotations.
    Augment {
        /// Plan JSON; defaults to enlarging cables and annotating the known confusers.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Train the enhanced model on the augmented annotations.
    Retrain,
    /// Compare original and enhanced per-class IoU on the eval split.
    Compare,
    /// Render a stored explanation map over its image.
    Overlay {
        #[arg(long)]
        image: u64,
        #[arg(long, default_value_t = 1)]
        class: usize,
        /// Defaults to the chosen method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Every stage from synth to compare.
    All,
    /// Serve the review API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &c.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &c.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = &c.methods {
        cfg.methods = m.clone();
    }
    if let Some(t) = c.timing {
        cfg.timing = t;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Augment { radius: Some(r), .. } => cfg.enlarge_radius = r,
        Command::Serve { port: Some(p) } => cfg.port = p,
        _ => {}
    }
    cfg.validate()?;

    match cli.command {
        Command::Synth => {
            let d = stages::synth(&cfg)?;
            println!(
                "wrote {} train and {} eval images to {}",
                d.train.images.len(),
                d.eval.images.len(),
                cfg.data_dir.display()
            );
        }
        Command::Train => {
            let m = stages::train(&cfg)?;
            let loss = m.loss_history().last().copied().unwrap_or(f64::NAN);
            println!("trained {} epochs, final loss {loss:.4}", m.loss_history().len());
        }
        Command::Explain { bundle } => {
            let written = stages::explain(&cfg, bundle.as_deref())?;
            println!("wrote {} maps", written.len());
        }
        Command::EvalXai => {
            let (rows, selection) = stages::eval_xai(&cfg)?;
            print!("{}", vqi_core::metrics::evaluation_csv(&rows));
            println!("chosen: {}", selection.chosen);
        }
        Command::Augment { plan, .. } => {
            let report = stages::augment(&cfg, plan.as_deref())?;
            println!(
                "annotations {} -> {}, categories {} -> {}",
                report.annotations_before, report.annotations_after, report.categories_before, report.categories_after
            );
        }
        Command::Retrain => {
            stages::retrain(&cfg)?;
            println!("enhanced model written");
        }
        Command::Compare => print!("{}", stages::compare(&cfg)?.to_csv()),
        Command::Overlay {
            image,
            class,
            method,
            alpha,
        } => {
            let method = match method {
                Some(m) => m,
                None => stages::read_selection(&cfg)?
                    .chosen
                    .parse()
                    .context("chosen_method.json names an unknown method")?,
            };
            println!("{}", stages::overlay(&cfg, image, class, method, alpha)?.display());
        }
        Command::All => print!("{}", stages::run_all(&cfg)?.to_csv()),
        Command::Serve { .. } => {
            tokio::runtime::Runtime::new()?.block_on(server::serve(cfg))?;
        }
    }
    Ok(())
}
