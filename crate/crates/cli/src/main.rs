//! `music` — train, evaluate, and inspect mutual-information-driven agents
//! on the desk-scale 2D environments.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use music_core::config::{RunConfig, Variant};
use music_core::trainer;

#[derive(Parser)]
#[command(
    name = "music",
    about = "Mutual-information state intrinsic control toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment and write metrics, logs, and checkpoints.
    Train(TrainArgs),
    /// Evaluate a saved policy checkpoint with a deterministic policy.
    Eval(EvalArgs),
    /// Compare MI estimates of two estimator checkpoints on saved trajectories.
    MiReport(MiReportArgs),
    /// Train estimators on correlated Gaussians and check the analytic truth.
    ValidateEstimator(ValidateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Environment name: point-push or point-nav.
    #[arg(long, default_value = "point-push")]
    env: String,
    /// task | music-u | music-r | music-f | music-p | music-t | empowerment | diayn | music-diayn
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optional config file with `key = value` lines (unknown keys rejected).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile before config-file overrides: desk or paper.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Pretrained policy checkpoint (required for music-f).
    #[arg(long = "policy-ckpt")]
    policy_ckpt: Option<PathBuf>,
    /// Pretrained estimator checkpoint (required for music-t).
    #[arg(long = "estimator-ckpt")]
    estimator_ckpt: Option<PathBuf>,
    /// Output directory for metrics, logs, and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Collect the cycle's rollouts on worker threads. Results match the
    /// sequential stream; only wall-clock changes.
    #[arg(long, default_value_t = false)]
    parallel_rollouts: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "point-push")]
    env: String,
    /// Number of evaluation rollouts.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct MiReportArgs {
    #[arg(long = "prior-ckpt")]
    prior_ckpt: PathBuf,
    #[arg(long = "post-ckpt")]
    post_ckpt: PathBuf,
    /// A trajectory .jsonl file or a directory of them.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated `agent_component:surrounding_component` pairs.
    #[arg(long, default_value = "agent_pos:object_pos,agent_pos:object_vel")]
    pairs: String,
}

#[derive(Args)]
struct ValidateArgs {
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::MiReport(args) => mi_report(args),
        Command::ValidateEstimator(args) => validate(args),
    }
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let variant = Variant::from_name(&args.variant)?;
    let mut cfg = match args.profile.as_str() {
        "desk" => RunConfig::desk(&args.env, variant, args.seed, &args.out),
        "paper" => RunConfig::paper(&args.env, variant, args.seed, &args.out),
        other => bail!("unknown profile '{other}' (expected desk or paper)"),
    };
    if let Some(path) = &args.config {
        cfg.apply_file(path)
            .with_context(|| format!("reading config {}", path.display()))?;
    }
    cfg.policy_checkpoint = args.policy_ckpt;
    cfg.estimator_checkpoint = args.estimator_ckpt;
    cfg.parallel_rollouts |= args.parallel_rollouts;
    if !cfg.parallel_rollouts {
        eprintln!("single-threaded run: outputs are bit-reproducible for this seed");
    }
    let artifacts = trainer::run_training(&cfg)?;
    println!("run complete: {}", artifacts.out_dir.display());
    println!("  metrics:  {}", artifacts.metrics_path.display());
    println!("  episodes: {}", artifacts.episode_log_path.display());
    println!("  manifest: {}", artifacts.manifest_path.display());
    println!("  policy:   {}", artifacts.policy_checkpoint.display());
    if let Some(est) = &artifacts.estimator_final_checkpoint {
        println!("  estimator: {}", est.display());
    }
    if let Some(last) = artifacts.metrics.last() {
        println!(
            "  final epoch: success {:.2}, return {:.2}, object displacement {:.3} (random baseline {:.3})",
            last.success_rate,
            last.mean_task_return,
            last.mean_object_displacement,
            artifacts.random_baseline
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let report = trainer::evaluate(&args.ckpt, &args.env, args.n, args.seed)?;
    println!(
        "success rate {:.4} over {} rollouts (seed {})",
        report.success_rate, args.n, args.seed
    );
    println!(
        "mean task return {:.4}, mean object displacement {:.4}",
        report.mean_task_return, report.mean_object_displacement
    );
    Ok(())
}

fn mi_report(args: MiReportArgs) -> anyhow::Result<()> {
    let pairs: Vec<String> = args
        .pairs
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let rows = trainer::mi_report(&args.prior_ckpt, &args.post_ckpt, &args.data, &pairs)?;
    println!(
        "{:<28} {:>10} {:>8} {:>10} {:>8}",
        "pair", "prior", "±", "post", "±"
    );
    for row in rows {
        println!(
            "{:<28} {:>10.4} {:>8.4} {:>10.4} {:>8.4}",
            row.pair, row.prior_mean, row.prior_std, row.post_mean, row.post_std
        );
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> anyhow::Result<()> {
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(|s| s.trim().parse().context("bad seed list"))
        .collect::<anyhow::Result<_>>()?;
    let cfg = trainer::ValidationConfig {
        seeds,
        steps: args.steps,
        batch: args.batch,
        ..trainer::ValidationConfig::default()
    };
    let report = trainer::validate_estimator(&cfg)?;
    print!("{report}");
    if !report.all_pass {
        std::process::exit(1);
    }
    Ok(())
}
