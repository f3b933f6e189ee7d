use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hallucitrace_cli::config::RunConfig;
use hallucitrace_cli::paths::RunPaths;
use hallucitrace_cli::stages;

/// Desk-scale analysis of factual-recall failures in a toy transformer:
/// train on a synthetic fact world, locate which components cause each wrong
/// answer, inspect layer contributions, and fine-tune targeted repairs.
#[derive(Parser)]
#[command(name = "hallucitrace", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// run configuration file
    #[arg(long, global = true, default_value = "configs/default.toml")]
    config: PathBuf,
    /// override the global seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output (run) directory; falls back to $HALLUCITRACE_OUT, then "run"
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// model weights path (default <out>/model.htw)
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// world file path (default <out>/world.tsv)
    #[arg(long, global = true)]
    world: Option<PathBuf>,
    /// worker thread cap
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Default)]
struct TraceFlags {
    /// noise scale: unit or 3xstd
    #[arg(long, value_parser = ["unit", "3xstd"])]
    sigma_mode: Option<String>,
    /// effect baseline: main (vs the noised run) or companion (vs the clean run)
    #[arg(long, value_parser = ["main", "companion"])]
    ie_convention: Option<String>,
    /// noise acceptance rule: main (y* < y) or companion (y* < 1)
    #[arg(long, value_parser = ["main", "companion"])]
    noise_rule: Option<String>,
    /// which subject positions receive noise
    #[arg(long, value_parser = ["first_subject_token", "all_subject_tokens"])]
    noise_scope: Option<String>,
}

#[derive(Args, Default)]
struct MitigateFlags {
    /// weight of the projection-repair term
    #[arg(long)]
    lambda: Option<f64>,
    /// comma-separated MLP layer set (empty = default window)
    #[arg(long, value_delimiter = ',')]
    layers_mlp: Option<Vec<usize>>,
    /// comma-separated attention layer set
    #[arg(long, value_delimiter = ',')]
    layers_attn: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic fact world
    World {
        #[command(subcommand)]
        cmd: WorldCmd,
    },
    /// Generate the training corpus
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Train the model on the corpus (writes checkpoints)
    Train,
    /// Evaluate the model over the canonical prompts
    Eval {
        /// match rule for acceptable objects
        #[arg(long, value_parser = ["prefix", "suffix"])]
        match_rule: Option<String>,
        /// remote alias endpoint URL template ({subject}, {relation})
        #[arg(long)]
        alias_endpoint: Option<String>,
    },
    /// Attribute wrong answers to components via the three-run protocol
    Trace {
        #[command(flatten)]
        flags: TraceFlags,
    },
    /// Label each traced error early-site or late-site
    Classify,
    /// Projection analyses
    Lens {
        #[command(subcommand)]
        cmd: LensCmd,
    },
    /// External manifestation features per labeled error
    Manifest,
    /// Repair fine-tuning and its evaluation
    Mitigate {
        #[command(subcommand)]
        cmd: MitigateCmd,
    },
    /// Projection trajectories across training checkpoints
    CkptEsp,
    /// Regenerate derived reports from intermediates and verify them
    Report {
        #[command(subcommand)]
        cmd: ReportCmd,
    },
}

#[derive(Subcommand)]
enum WorldCmd {
    Gen,
}

#[derive(Subcommand)]
enum CorpusCmd {
    Gen,
}

#[derive(Subcommand)]
enum LensCmd {
    /// Group-averaged layer projections of the true object
    Esp,
    /// Minimum lens rank of the true object across layers
    Rank,
}

#[derive(Subcommand)]
enum MitigateCmd {
    Train {
        /// mhm (projection repair) or sft (plain fine-tuning)
        #[arg(long, default_value = "mhm", value_parser = ["mhm", "sft"])]
        method: String,
        #[command(flatten)]
        flags: MitigateFlags,
    },
    Eval,
}

#[derive(Subcommand)]
enum ReportCmd {
    Bundle,
}

fn apply_trace_flags(cfg: &mut RunConfig, flags: &TraceFlags) -> Result<()> {
    use hallucitrace_core::causal::{IeConvention, NoiseRule};
    use hallucitrace_core::intervene::{NoiseScope, SigmaMode};
    if let Some(m) = &flags.sigma_mode {
        cfg.tracing.settings.sigma_mode = match m.as_str() {
            "unit" => SigmaMode::Unit,
            _ => SigmaMode::ThreeTimesStd,
        };
    }
    if let Some(c) = &flags.ie_convention {
        cfg.tracing.settings.ie_convention = match c.as_str() {
            "companion" => IeConvention::VsClean,
            _ => IeConvention::VsMitigation,
        };
    }
    if let Some(r) = &flags.noise_rule {
        cfg.tracing.settings.noise_rule = match r.as_str() {
            "companion" => NoiseRule::BelowOne,
            _ => NoiseRule::BelowClean,
        };
    }
    if let Some(s) = &flags.noise_scope {
        cfg.tracing.settings.noise_scope = match s.as_str() {
            "all_subject_tokens" => NoiseScope::AllSubjectTokens,
            _ => NoiseScope::FirstSubjectToken,
        };
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = RunConfig::load(&cli.global.config)?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
        cfg.normalize();
    }
    if let Some(threads) = cli.global.threads {
        cfg.threads = threads;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("building the worker pool")?;

    let out = cli
        .global
        .out
        .or_else(|| std::env::var_os("HALLUCITRACE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"));
    let paths = RunPaths::new(out, cli.global.world, cli.global.model);

    match &cli.command {
        Command::World { cmd: WorldCmd::Gen } => stages::world::run(&cfg, &paths),
        Command::Corpus { cmd: CorpusCmd::Gen } => stages::corpus::run(&cfg, &paths),
        Command::Train => stages::train::run(&cfg, &paths),
        Command::Eval {
            match_rule,
            alias_endpoint,
        } => {
            if let Some(rule) = match_rule {
                cfg.eval.settings.match_rule = match rule.as_str() {
                    "suffix" => hallucitrace_core::dataset::MatchRule::Suffix,
                    _ => hallucitrace_core::dataset::MatchRule::Prefix,
                };
            }
            if let Some(endpoint) = alias_endpoint {
                cfg.eval.alias_endpoint = Some(endpoint.clone());
            }
            stages::eval::run(&cfg, &paths)
        }
        Command::Trace { flags } => {
            apply_trace_flags(&mut cfg, flags)?;
            stages::trace::run(&cfg, &paths)
        }
        Command::Classify => stages::classify::run(&cfg, &paths),
        Command::Lens { cmd } => match cmd {
            LensCmd::Esp => stages::lens::run_esp(&cfg, &paths),
            LensCmd::Rank => stages::lens::run_rank(&cfg, &paths),
        },
        Command::Manifest => stages::manifest::run(&cfg, &paths),
        Command::Mitigate { cmd } => match cmd {
            MitigateCmd::Train { method, flags } => {
                if let Some(lambda) = flags.lambda {
                    cfg.mitigate.mhm.lambda = lambda;
                }
                if let Some(layers) = &flags.layers_mlp {
                    cfg.mitigate.mhm.layers_mlp = layers.clone();
                }
                if let Some(layers) = &flags.layers_attn {
                    cfg.mitigate.mhm.layers_attn = layers.clone();
                }
                stages::mitigate::run_train(&cfg, &paths, method)
            }
            MitigateCmd::Eval => stages::mitigate::run_eval(&cfg, &paths),
        },
        Command::CkptEsp => stages::ckpt::run(&cfg, &paths),
        Command::Report { cmd: ReportCmd::Bundle } => stages::bundle::run(&cfg, &paths),
    }
}
