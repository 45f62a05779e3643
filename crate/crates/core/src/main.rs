use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evfuse::harness::{
    cmd_benchmark, cmd_evaluate, cmd_generate, cmd_stratify, cmd_train_experts, cmd_train_gate,
    ExperimentConfig, Method, RunContext,
};
use evfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "evfuse", version, about = "Evidential expert fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; defaults to the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<output_dir>/seed-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load artifacts even if they were produced under a different config.
    #[arg(long)]
    allow_hash_mismatch: bool,
}

#[derive(Args)]
struct MethodArg {
    /// Comma-separated subset of softmax,mc_dropout,ensemble,edl,naive,gated.
    #[arg(long, default_value = "softmax,mc_dropout,ensemble,edl,naive,gated")]
    methods: String,
}

#[derive(Args)]
struct WithMethods {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    methods: MethodArg,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the multi-reader dataset.
    Generate(Common),
    /// Train the evidential experts (and softmax baselines if selected).
    TrainExperts(WithMethods),
    /// Train the gating network over saved experts.
    TrainGate(Common),
    /// Score methods on val, test and unseen.
    Evaluate(WithMethods),
    /// Confident/uncertain stratification with validation thresholds.
    Stratify(WithMethods),
    /// Run the whole pipeline for several seeds and aggregate.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated run seeds.
        #[arg(long, default_value = "0,1,2,3,4")]
        seeds: String,
        #[command(flatten)]
        methods: MethodArg,
        #[arg(long, default_value = "benchmark")]
        out: PathBuf,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn context(c: Common) -> Result<RunContext> {
    let cfg = load_config(c.config.as_ref())?;
    let mut ctx = RunContext::new(cfg, c.seed, c.out);
    ctx.allow_hash_mismatch = c.allow_hash_mismatch;
    Ok(ctx)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::Config(format!("bad seed {p:?}"))))
        .collect()
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => print_paths(&cmd_generate(&context(c)?)?),
        Command::TrainExperts(WithMethods { common: c, methods: m }) => {
            print_paths(&cmd_train_experts(&context(c)?, &Method::parse_list(&m.methods)?)?)
        }
        Command::TrainGate(c) => print_paths(&cmd_train_gate(&context(c)?)?),
        Command::Evaluate(WithMethods { common: c, methods: m }) => {
            let ctx = context(c)?;
            for r in cmd_evaluate(&ctx, &Method::parse_list(&m.methods)?)? {
                println!(
                    "{:<10} {:<6} f1 {:.4}  ece {:.4}  retention {:.3}",
                    r.method.as_str(),
                    r.split.as_str(),
                    r.weighted_f1,
                    r.ece,
                    r.stratification.retention
                );
            }
            println!("wrote {}", ctx.layout.results().display());
        }
        Command::Stratify(WithMethods { common: c, methods: m }) => {
            let ctx = context(c)?;
            cmd_stratify(&ctx, &Method::parse_list(&m.methods)?)?;
            println!("wrote {}", ctx.layout.stratification().display());
        }
        Command::Benchmark {
            config,
            seeds,
            methods,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let outcome = cmd_benchmark(&cfg, &parse_seeds(&seeds)?, &Method::parse_list(&methods.methods)?, &out)?;
            for s in outcome.summary.iter().filter(|s| s.metric == "weighted_f1" || s.metric == "ece") {
                println!(
                    "{:<10} {:<6} {:<12} {:.4} ± {:.4}",
                    s.method.as_str(),
                    s.split.as_str(),
                    s.metric,
                    s.mean,
                    s.sd
                );
            }
            println!("wrote {}", out.display());
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
