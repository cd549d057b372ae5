use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dqv::agents::{Agent, Algorithm};
use dqv::diagnostics::{bias_ordering_experiment, BiasExperimentConfig, BiasOrderingReport};
use dqv::harness::{
    compare_runs, emit_learning_curves, evaluate_checkpoint, oracle_dump, run_experiment, seed_dir,
    v_vs_q, write_oracle_dump, EnvSpec, ExperimentConfig, ExperimentSummary, AGENT_FILE,
    CONFIG_FILE,
};
use dqv::mdp::make_bias_mdp;
use dqv::{Error, Result};

#[derive(Parser)]
#[command(name = "dqv", version, about = "Dual value-function deep RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm over several seeds.
    Train(TrainArgs),
    /// Re-run diagnostics on a finished run.
    Diagnose(DiagnoseArgs),
    /// Write learning-curve SVGs (and CSVs) for a run.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare finished runs on the same environment.
    Compare {
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve a tabular environment exactly.
    Oracle {
        #[arg(long, conflicts_with = "env_file", required_unless_present = "env_file")]
        env: Option<String>,
        #[arg(long)]
        env_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long)]
        dump_oracle: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML experiment file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    agent: Option<Algorithm>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    env_file: Option<PathBuf>,
    /// Comma-separated seed list, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip training and evaluate this saved agent instead.
    #[arg(long)]
    eval_from: Option<PathBuf>,
    #[arg(long)]
    dump_replay: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    run: PathBuf,
    /// Run the overestimation-ordering experiment on the bias MDP with this
    /// run's agent and training settings.
    #[arg(long)]
    bias_mdp: bool,
    #[arg(long, default_value_t = 8)]
    arms: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Recompute the V-versus-max-Q check for every seed's saved agent.
    #[arg(long)]
    v_vs_q: bool,
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = args.agent {
        config.agent.algorithm = a;
    }
    if args.env.is_some() || args.env_file.is_some() {
        config.env = args.env;
        config.env_file = args.env_file;
    }
    if let Some(s) = args.seeds {
        config.seeds = s;
    }
    if let Some(s) = args.steps {
        config.total_steps = s;
    }
    if let Some(o) = args.out {
        config.output_dir = o;
    }
    config.dump_replay |= args.dump_replay;
    let summary = match &args.eval_from {
        Some(ckpt) => evaluate_checkpoint(&config, ckpt)?,
        None => run_experiment(&config)?,
    };
    print_summary(&summary);
    println!("wrote {}", config.output_dir.display());
    if summary.diverged_runs > 0 {
        eprintln!("{} of {} runs diverged", summary.diverged_runs, summary.seeds.len());
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(s: &ExperimentSummary) {
    println!("{} on {} ({} steps)", s.algorithm, s.env, s.total_steps);
    for seed in &s.seeds {
        match (&seed.diverged, seed.final_return) {
            (Some(msg), _) => println!("  seed {:>4}: diverged ({msg})", seed.seed),
            (None, Some(r)) => println!(
                "  seed {:>4}: return {:.4}, discounted {:.4}{}",
                seed.seed,
                r,
                seed.final_discounted_return.unwrap_or(f64::NAN),
                seed.final_gap.map_or_else(String::new, |g| format!(", gap {g:.4}"))
            ),
            (None, None) => println!("  seed {:>4}: no evaluation", seed.seed),
        }
    }
    println!(
        "  median return {:.4} (IQR {:.4}), median discounted {:.4}",
        s.median_final_return, s.iqr_final_return, s.median_final_discounted_return
    );
    if let Some(v) = s.oracle_v_star_s0 {
        println!("  V*(s0) = {v:.4}");
    }
}

fn load_run_config(run: &Path) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&run.join(CONFIG_FILE))?;
    config.output_dir = run.to_path_buf();
    Ok(config)
}

fn diagnose(args: DiagnoseArgs) -> Result<ExitCode> {
    let config = load_run_config(&args.run)?;
    let summary = ExperimentSummary::load(&args.run)?;
    for s in &summary.seeds {
        if let (Some(gap), Some(base)) = (s.final_gap, s.baseline) {
            println!("seed {:>4}: final gap {gap:.4} (baseline {base:.4})", s.seed);
        }
    }
    if args.v_vs_q {
        let env = config.env_spec()?;
        let d = &config.diagnostics;
        for &seed in &config.seeds {
            let agent = Agent::load(&seed_dir(&args.run, seed).join(AGENT_FILE))?;
            let r = v_vs_q(&agent, &env, d.v_vs_q_samples, d.v_vs_q_margin, seed)?;
            println!(
                "seed {seed:>4}: V > max Q + {} in {:.4} of {} states",
                r.margin, r.fraction_v_exceeds_maxq, r.sampled_states
            );
        }
    }
    if args.bias_mdp {
        let spec = make_bias_mdp(args.arms, args.noise)?;
        let bias_config = BiasExperimentConfig {
            agent: config.agent.clone(),
            train: config.train_options(),
            baseline_episodes: config.diagnostics.baseline_episodes,
        };
        let algorithms = [Algorithm::Dqn, Algorithm::Ddqn, Algorithm::Dqv, Algorithm::DqvMax];
        let report = bias_ordering_experiment(&spec, &algorithms, &config.seeds, &bias_config)?;
        print_bias_report(&report);
        let path = args.run.join("bias_ordering.json");
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_bias_report(r: &BiasOrderingReport) {
    for g in &r.results {
        println!(
            "{:<12} median gap {:>9.4} over {} seeds ({} diverged)",
            g.algorithm.name(),
            g.median_gap,
            g.gaps.len(),
            g.divergences
        );
    }
    for o in &r.orderings {
        println!(
            "{} > {}: medians {:.4} vs {:.4}, p = {:.4}",
            o.greater, o.lesser, o.median_greater, o.median_lesser, o.test.p_value
        );
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Plot { run, out } => {
            for path in emit_learning_curves(&run, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { runs, csv } => {
            let c = compare_runs(&runs)?;
            print!("{}", c.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, c.to_csv()).map_err(|e| Error::Io { path, source: e })?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle {
            env,
            env_file,
            gamma,
            dump_oracle,
        } => {
            let spec = match (env, env_file) {
                (Some(name), _) => EnvSpec::parse(&name)?,
                (None, Some(path)) => EnvSpec::from_file(&path)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let dump = oracle_dump(&spec, gamma)?;
            println!(
                "{}: V*(s0) = {:.6} after {} sweeps",
                dump.env, dump.v_star_s0, dump.sweeps
            );
            if let Some(path) = dump_oracle {
                write_oracle_dump(&dump, &path)?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfiguration(_) | Error::InvalidArgument(_) | Error::Format { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
