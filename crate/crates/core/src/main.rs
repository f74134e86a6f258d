use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semsched::ddpg::{Agent, Variant};
use semsched::env::SchedulingEnv;
use semsched::exact::{TabularMdp, VI_TOL};
use semsched::harness::{
    compare_report, component_rng, component_seed, generate_system, load_run, rollout, run_experiment,
    ExperimentConfig, Preset, SeedStream, SUMMARY_HEADER,
};
use semsched::{Error, Result};

/// Output directory used by `train` when `--out` is absent.
const OUT_DIR_ENV: &str = "SEMSCHED_OUT_DIR";

#[derive(Parser)]
#[command(name = "semsched", version, about = "Semantic-aware AoI scheduling: exact oracle and DDPG variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a small system exactly and check the structural monotonicity of V and Q.
    VerifyMonotonicity(VerifyArgs),
    /// Train DDPG variants and write metrics, summary and checkpoints.
    Train(TrainArgs),
    /// Roll a trained checkpoint out greedily.
    Evaluate(EvaluateArgs),
    /// Aggregate finished runs of one configuration across seeds.
    Compare(CompareArgs),
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "tiny")]
    preset: Preset,
    /// Config file; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Value-iteration tolerance on V.
    #[arg(long, default_value_t = VI_TOL)]
    tol: f64,
    /// Slack allowed before an inequality counts as violated.
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    #[arg(long, default_value_t = 100_000)]
    max_sweeps: usize,
    /// Reverse the drop-probability list (a negative control).
    #[arg(long)]
    reverse_drops: bool,
    /// Directory for `values.csv` and `violations.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    /// Variant to train; repeat for several. Defaults to the config's list.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory; falls back to $SEMSCHED_OUT_DIR/<name>-s<seed>, then runs/<name>-s<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long)]
    horizon: Option<usize>,
    /// Config of the run; defaults to `config.toml` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write every evaluation step to this CSV.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::VerifyMonotonicity(a) => verify(a),
        Command::Train(a) => train(a).map(|_| ExitCode::SUCCESS),
        Command::Evaluate(a) => evaluate(a).map(|_| ExitCode::SUCCESS),
        Command::Compare(a) => compare(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(args.preset),
    };
    let gamma = args.gamma.unwrap_or(config.train.gamma);
    let mut env = generate_system(&config)?.env;
    if args.reverse_drops {
        env = SchedulingEnv::new(env.channel().with_reversed_drop(), env.costs().to_vec(), env.tau_max())?;
    }
    let mdp = TabularMdp::new(env, gamma)?;
    let tables = mdp.value_iteration(args.tol, args.max_sweeps)?;
    let aoi = mdp.check_aoi_monotonicity(&tables, args.eps);
    let channel = mdp.check_channel_monotonicity(&tables, args.eps);

    let s = &config.system;
    println!(
        "instance: N={} M={} levels={} tau_max={} gamma={gamma} seed={}",
        s.num_devices, s.num_channels, s.levels, s.tau_max, config.seed
    );
    println!("drop table: {:?}", mdp.env().channel().drop_table());
    println!("states: {}  actions: {}", mdp.num_states(), mdp.actions().len());
    println!(
        "sweeps: {}  last change: {:e}{}",
        tables.sweeps,
        tables.deltas.last().copied().unwrap_or(0.0),
        if tables.hit_precision_floor { "  (stopped at precision floor)" } else { "" }
    );
    println!("max Bellman residual: {:e}", mdp.bellman_residual(&tables));
    println!("V(s0): {}", mdp.initial_value(&tables));
    println!("AoI violations: {}", aoi.len());
    println!("channel violations: {}", channel.len());

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        mdp.write_tables_csv(&tables, BufWriter::new(fs::File::create(dir.join("values.csv"))?))?;
        let mut w = BufWriter::new(fs::File::create(dir.join("violations.csv"))?);
        writeln!(w, "kind,state,perturbed,action,gap")?;
        for v in aoi.iter().chain(&channel) {
            let action = v.action.map(|a| a.to_string()).unwrap_or_default();
            writeln!(w, "{:?},{},{},{action},{}", v.kind, v.state, v.perturbed, v.gap)?;
        }
        w.flush()?;
    }
    Ok(if aoi.is_empty() && channel.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match (&args.config, args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(p)) => ExperimentConfig::preset(p),
        (None, None) => return Err(Error::InvalidArgument("one of --config or --preset is required".into())),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if !args.variants.is_empty() {
        config.variants = args.variants;
    }
    if let Some(e) = args.episodes {
        config.train.episodes = e;
    }
    let out = args.out.unwrap_or_else(|| {
        let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
        base.join(format!("{}-s{}", config.name, config.seed))
    });
    let outcome = run_experiment(&config, Some(&out))?;
    println!("{SUMMARY_HEADER}");
    for row in &outcome.summary {
        println!("{}", row.to_csv());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn config_beside(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join("config.toml")
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let config_path = args.config.unwrap_or_else(|| config_beside(&args.checkpoint));
    let config = ExperimentConfig::load(&config_path)?;
    let system = generate_system(&config)?;
    let text = fs::read_to_string(&args.checkpoint)?;
    let agent = Agent::from_checkpoint(&text, component_seed(config.seed, SeedStream::Agent))?;
    let horizon = args.horizon.unwrap_or(config.evaluation.horizon);
    let mut traj = match &args.trajectory {
        Some(p) => Some(BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    let result = rollout(
        &system.env,
        |s| agent.greedy_action(s),
        &mut component_rng(config.seed, SeedStream::Evaluation),
        args.episodes,
        horizon,
        config.train.gamma,
        traj.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = traj {
        w.flush()?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "variant,episodes,horizon,avg_sum_cost,discounted_return")?;
    writeln!(
        out,
        "{},{},{horizon},{},{}",
        agent.variant(),
        args.episodes,
        result.avg_sum_cost,
        result.discounted_return
    )?;
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let runs = args.runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let table = compare_report(&runs)?;
    print!("{}", table.to_text());
    if let Some(path) = &args.out {
        fs::write(path, table.to_csv())?;
    }
    Ok(())
}
