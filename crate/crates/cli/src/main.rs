// SPDX-License-Identifier: MIT OR Apache-2.0

//! `polvec`: learn, evaluate and steer with political concept vectors.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use polvec_core::concept_vectors::Method;
use polvec_core::corpus::{Dimension, Split};

use config::RunConfig;

/// Output root used when neither `--out` nor the config names one.
const OUT_ENV: &str = "POLVEC_OUT";
const DEFAULT_OUT: &str = "polvec-out";

#[derive(Parser)]
#[command(name = "polvec", version, about = "Political concept vectors for transformer hidden states")]
struct Cli {
    /// JSON run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $POLVEC_OUT, else ./polvec-out].
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override scalar config fields.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Activation file (replaces any configured source).
    #[arg(long, global = true)]
    actv: Option<PathBuf>,
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[arg(long, global = true)]
    statements: Option<PathBuf>,
    /// Comma-separated subset of caa, repe, probe.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    split: Option<Split>,
    /// Comma-separated layer list.
    #[arg(long, global = true, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, global = true)]
    dimension: Option<Dimension>,
    /// Plan strength (steer, lens).
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Comma-separated sweep strengths.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    alphas: Option<Vec<f64>>,
    /// Lens width.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic statement corpus (statements.csv).
    Synth,
    /// Run statements through the toy model and store last-token states.
    Extract,
    /// Generate planted-direction activations.
    Plant,
    /// Learn concept vectors for every method, dimension and layer.
    Learn,
    /// Detection accuracy of a registry on one split.
    Detect,
    /// 8×8 cosine grids and disentanglement scores.
    Correlate,
    /// 2-D PCA projections per layer.
    Project,
    /// Steered vs baseline generations and the distribution-shift report.
    Steer,
    /// Logit-lens traces, optionally steered.
    Lens,
    /// Divergence from the unsteered model across strengths.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Extract => "extract",
            Command::Plant => "plant",
            Command::Learn => "learn",
            Command::Detect => "detect",
            Command::Correlate => "correlate",
            Command::Project => "project",
            Command::Steer => "steer",
            Command::Lens => "lens",
            Command::Sweep => "sweep",
        }
    }
}

fn apply(cfg: &mut RunConfig, o: Overrides) {
    if let Some(s) = o.seed {
        cfg.seed = Some(s);
    }
    if let Some(p) = o.actv {
        cfg.actv = Some(p);
        cfg.toy = None;
        cfg.planted = None;
    }
    if o.registry.is_some() {
        cfg.registry = o.registry;
    }
    if o.statements.is_some() {
        cfg.statements = o.statements;
    }
    if let Some(m) = o.methods {
        cfg.methods = m;
    }
    if let Some(l) = o.lambda {
        cfg.lambda = l;
    }
    if o.split.is_some() {
        cfg.split = o.split;
    }
    if let Some(l) = o.layers {
        cfg.layers = l;
    }
    if o.dimension.is_some() {
        cfg.dimension = o.dimension;
    }
    if let (Some(a), Some(plan)) = (o.alpha, cfg.plan.as_mut()) {
        plan.alpha = a;
    }
    if let Some(a) = o.alphas {
        cfg.alphas = a;
    }
    if let Some(k) = o.k {
        cfg.k = k;
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, cli.overrides);
    let out = cli
        .out
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let mut ctx = run::Ctx::new(cli.command.name(), cfg, out)?;
    match cli.command {
        Command::Synth => run::synth(&mut ctx)?,
        Command::Extract => run::extract_cmd(&mut ctx)?,
        Command::Plant => run::plant(&mut ctx)?,
        Command::Learn => run::learn(&mut ctx)?,
        Command::Detect => run::detect(&mut ctx)?,
        Command::Correlate => run::correlate(&mut ctx)?,
        Command::Project => run::project(&mut ctx)?,
        Command::Steer => run::steer(&mut ctx)?,
        Command::Lens => run::lens(&mut ctx)?,
        Command::Sweep => run::sweep(&mut ctx)?,
    }
    ctx.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
