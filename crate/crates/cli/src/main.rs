//! `tdforge` command line: generate instances, run Monte-Carlo experiments,
//! sweep parameter grids, verify the analytical invariants, and render
//! reports.
//!
//! Exit codes are a stable contract: 0 success, 1 verification failure,
//! 2 invalid input. `TDFORGE_THREADS` caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tdforge::experiment::{
    run_experiment, sweep_experiment, AlgorithmConfig, ExperimentConfig, InstanceSource,
    OutputConfig,
};
use tdforge::generator::{generate_instance, ChainScheme, FeatureScheme, GeneratorSpec};
use tdforge::report::render_report;
use tdforge::verify::{run_verify, VerifyLevel};

#[derive(Parser)]
#[command(
    name = "tdforge",
    about = "Projection-free TD(0) experiments on finite MDPs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSON instance (MDP + policy + features).
    Generate(GenerateArgs),
    /// Run replicated TD(0) experiments on an instance.
    Run(RunArgs),
    /// Cross-product sweep over c / T / gamma / eps / mix axes.
    Sweep(SweepArgs),
    /// Run the invariant verification suite.
    Verify(VerifyArgs),
    /// Summarize run artifacts from an output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of states.
    #[arg(long)]
    n: usize,
    /// Feature dimension.
    #[arg(long)]
    d: usize,
    /// Discount factor in (0, 1).
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Feature scheme: random-gaussian | tabular | adversarial:EPS
    #[arg(long, default_value = "random-gaussian")]
    features: String,
    /// Chain scheme: random-dirichlet:CONC | two-state:A,B | permutation-mix:LAMBDA
    #[arg(long, default_value = "random-dirichlet:1.0")]
    chain: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output instance file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config (flags below override its fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance file (required when no config is given).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replication count M.
    #[arg(long)]
    reps: Option<usize>,
    /// Horizon(s), comma separated, e.g. 256 or 256,1024,4096.
    #[arg(long = "T", value_name = "N[,N...]")]
    t: Option<String>,
    /// Algorithm constant c (> 30 + sqrt(1302)).
    #[arg(long)]
    c: Option<f64>,
    /// Record every K-th step.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment config with a "sweep" axes block.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Verify a specific instance instead of the built-in corpus.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Where to write the LemmaReport CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// fast | full
    #[arg(long, default_value = "fast")]
    level: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding aggregate.json from a previous run.
    #[arg(long)]
    out: PathBuf,
}

fn parse_feature_scheme(text: &str) -> Result<FeatureScheme> {
    match text.split_once(':') {
        None => match text {
            "random-gaussian" => Ok(FeatureScheme::RandomGaussian),
            "tabular" => Ok(FeatureScheme::Tabular),
            other => bail!("unknown feature scheme '{other}'"),
        },
        Some(("adversarial", eps)) => Ok(FeatureScheme::Adversarial {
            eps: eps.parse().context("bad adversarial eps")?,
        }),
        Some((other, _)) => bail!("unknown feature scheme '{other}'"),
    }
}

fn parse_chain_scheme(text: &str) -> Result<ChainScheme> {
    let Some((name, args)) = text.split_once(':') else {
        bail!("chain scheme needs parameters, e.g. random-dirichlet:1.0");
    };
    match name {
        "random-dirichlet" => Ok(ChainScheme::RandomDirichlet {
            concentration: args.parse().context("bad concentration")?,
        }),
        "two-state" => {
            let (a, b) = args.split_once(',').context("two-state needs A,B")?;
            Ok(ChainScheme::TwoState {
                a: a.parse().context("bad a")?,
                b: b.parse().context("bad b")?,
            })
        }
        "permutation-mix" => Ok(ChainScheme::PermutationMix {
            lambda: args.parse().context("bad lambda")?,
        }),
        other => bail!("unknown chain scheme '{other}'"),
    }
}

fn parse_t_grid(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().context("bad horizon"))
        .collect()
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("TDFORGE_THREADS") {
        Ok(v) => Ok(Some(
            v.parse().context("TDFORGE_THREADS must be an integer")?,
        )),
        Err(_) => Ok(None),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let spec = GeneratorSpec {
        n: args.n,
        d: args.d,
        gamma: args.gamma,
        features: parse_feature_scheme(&args.features)?,
        chain: parse_chain_scheme(&args.chain)?,
        seed: args.seed,
    };
    let doc = generate_instance(&spec)?;
    doc.save(&args.out)?;
    println!("wrote instance {}", args.out.display());
    Ok(0)
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let instance = args
                .instance
                .clone()
                .context("either --config or --instance is required")?;
            ExperimentConfig {
                instance: InstanceSource::Path { path: instance },
                algorithm: AlgorithmConfig {
                    c: 100.0,
                    t_grid: vec![1 << 12],
                    replications: 50,
                    base_seed: 0,
                    record_stride: 64,
                },
                output: OutputConfig {
                    dir: PathBuf::from("out"),
                    write_replication_csv: true,
                },
                sweep: None,
            }
        }
    };
    if let Some(instance) = args.instance {
        config.instance = InstanceSource::Path { path: instance };
    }
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    if let Some(seed) = args.seed {
        config.algorithm.base_seed = seed;
    }
    if let Some(reps) = args.reps {
        config.algorithm.replications = reps;
    }
    if let Some(t) = args.t {
        config.algorithm.t_grid = parse_t_grid(&t)?;
    }
    if let Some(c) = args.c {
        config.algorithm.c = c;
    }
    if let Some(stride) = args.stride {
        config.algorithm.record_stride = stride;
    }

    let aggregate = run_experiment(&config, threads_from_env()?)?;
    for t in &aggregate.per_t {
        println!(
            "T = {:>8}: mean f(theta_bar) = {:.6e} (stderr {:.2e}), iterate ratio {:.4}",
            t.total_steps, t.f_bar_mean, t.f_bar_stderr, t.ratio
        );
    }
    println!("artifacts in {}", config.output.dir.display());
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    if let Some(seed) = args.seed {
        config.algorithm.base_seed = seed;
    }
    if let Some(reps) = args.reps {
        config.algorithm.replications = reps;
    }
    let rows = sweep_experiment(&config, threads_from_env()?)?;
    let skipped = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "sweep wrote {} rows ({} skipped) to {}",
        rows.len(),
        skipped,
        config.output.dir.join("sweep.csv").display()
    );
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let level = match args.level.as_str() {
        "fast" => VerifyLevel::Fast,
        "full" => VerifyLevel::Full,
        other => bail!("unknown level '{other}', expected fast or full"),
    };
    let outcome = run_verify(args.instance.as_deref(), level, args.out.as_deref())?;
    for report in outcome.reports.iter().filter(|r| !r.pass) {
        eprintln!("FAIL {}", report.csv_line());
    }
    println!(
        "verify: {} checks, {} failures, {:.1}s",
        outcome.reports.len(),
        outcome.failures,
        outcome.elapsed_secs
    );
    Ok(if outcome.failures == 0 { 0 } else { 1 })
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    let text = render_report(&args.out)?;
    print!("{text}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
