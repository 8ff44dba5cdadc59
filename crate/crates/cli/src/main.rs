use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tlrq_core::envs::{ChainMdpSpec, SuiteConfig};
use tlrq_core::harness::{self, stats, ExperimentConfig, ExperimentResult};
use tlrq_core::learner::{Algorithm, Model, ModelSnapshot};
use tlrq_core::oracle;
use tlrq_core::{rng, Dims};

#[derive(Parser)]
#[command(name = "tlrq", version, about = "Multi-task low-rank tensor Q-learning experiments")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides the config's `base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured algorithms and write records, summary and models.
    Train {
        /// Restrict to these algorithms.
        #[arg(long, value_delimiter = ',')]
        algorithm: Vec<Algorithm>,
    },
    /// Train all three algorithms and write records, summary and plots.
    Compare,
    /// Evaluate a saved model on the configured suite.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Evaluation episodes per task (config value by default).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare analytic semi-gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Solve the configured chain MDPs exactly and score trained policies.
    Oracle,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn report_failures(result: &ExperimentResult) {
    for f in &result.failures {
        eprintln!("warning: {} seed {} failed: {}", f.algorithm, f.seed, f.message);
    }
}

fn write_models(dir: &Path, result: &ExperimentResult) -> Result<()> {
    let dir = dir.join("models");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for run in &result.runs {
        let path = dir.join(format!("{}-seed{}.json", run.algorithm, run.seed));
        let json = serde_json::to_string(&run.model.to_snapshot())?;
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_tables(dir: &Path, result: &ExperimentResult) -> Result<Vec<harness::Band>> {
    harness::write_csv(dir.join("results.csv"), &result.records)?;
    if result.records.is_empty() {
        return Ok(Vec::new());
    }
    let bands = harness::aggregate(&result.records)?;
    harness::write_summary_csv(dir.join("summary.csv"), &bands)?;
    Ok(bands)
}

fn print_final_means(result: &ExperimentResult, algorithms: &[Algorithm], n_tasks: usize) {
    print!("{:<10}", "task");
    for a in algorithms {
        print!("{:>14}", a.label());
    }
    println!();
    let means: Vec<Vec<f64>> = algorithms
        .iter()
        .map(|&a| stats::final_means(&result.records, a, n_tasks))
        .collect();
    for task in 0..n_tasks {
        print!("{task:<10}");
        for m in &means {
            print!("{:>14.3}", m[task]);
        }
        println!();
    }
}

fn train(cli: &Cli, algorithms: &[Algorithm]) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if !algorithms.is_empty() {
        cfg.algorithms = algorithms.to_vec();
    }
    let dir = out_dir(cli, &cfg);
    let result = harness::run_experiment(&cfg, cli.threads)?;
    report_failures(&result);
    write_tables(&dir, &result)?;
    write_models(&dir, &result)?;
    print_final_means(&result, &cfg.algorithms, cfg.suite.n_tasks());
    println!("wrote {}", dir.display());
    Ok(())
}

fn compare(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    cfg.algorithms = Algorithm::ALL.to_vec();
    let dir = out_dir(cli, &cfg);
    let result = harness::run_experiment(&cfg, cli.threads)?;
    report_failures(&result);
    let bands = write_tables(&dir, &result)?;
    let plots = harness::write_plots(dir.join("plots"), &format!("{}-", cfg.suite.family()), &bands)?;
    let n_tasks = cfg.suite.n_tasks();
    print_final_means(&result, &[Algorithm::Stlrq, Algorithm::Lrq, Algorithm::Clrq], n_tasks);

    let total = cfg.hyper.total_iterations(n_tasks);
    println!("\ntransitions for S-TLR-Q to cover 90% of LR-Q's improvement (N = {total}):");
    for task in 0..n_tasks {
        let lrq = harness::aggregate::mean_curve(&bands, Algorithm::Lrq, task);
        let stlrq = harness::aggregate::mean_curve(&bands, Algorithm::Stlrq, task);
        let reached = stats::progress_threshold(&lrq, 0.9).and_then(|th| stats::first_reaching(&stlrq, th));
        match reached {
            Some(n) => println!("  task {task}: {n} ({:.0}%)", 100.0 * n as f64 / total as f64),
            None => println!("  task {task}: not reached"),
        }
    }
    println!("wrote {} and {} plots", dir.display(), plots.len());
    Ok(())
}

fn eval(cli: &Cli, model: &Path, episodes: Option<usize>) -> Result<()> {
    let cfg = load_config(cli)?;
    let text = std::fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
    let snap: ModelSnapshot = serde_json::from_str(&text).with_context(|| format!("parsing {}", model.display()))?;
    let model = Model::from_snapshot(&snap)?;
    let seed = cfg.base_seed;
    let horizon = cfg.hyper.episode_len;
    let mut suite = cfg.suite.build(horizon, rng::derive_seed(seed, &[rng::tag::EVAL]))?;
    let (fs, _) = model.route(0);
    if fs.dims().n_states != suite.n_states() || fs.dims().n_actions != suite.n_actions() {
        bail!(
            "model is {}x{} but the suite is {}x{}",
            fs.dims().n_states,
            fs.dims().n_actions,
            suite.n_states(),
            suite.n_actions()
        );
    }
    if let Model::Joint(fs) = &model {
        if fs.dims().n_tasks != suite.n_tasks() {
            bail!("model has {} tasks, suite has {}", fs.dims().n_tasks, suite.n_tasks());
        }
    }
    if let Model::Independent(v) = &model {
        if v.len() != suite.n_tasks() {
            bail!("model has {} task models, suite has {} tasks", v.len(), suite.n_tasks());
        }
    }
    let episodes = episodes.unwrap_or(cfg.hyper.eval_episodes).max(1);
    let discount = cfg.hyper.eval_discounted.then_some(cfg.hyper.gamma);
    for task in 0..suite.n_tasks() {
        let mut rng = rng::stream(seed, &[rng::tag::EVAL, u64::MAX, task as u64]);
        let r = harness::evaluate_policy(&model, task, suite.env_mut(task), horizon, episodes, &mut rng, discount);
        println!("task {task}: mean return {r:.4} over {episodes} episodes");
    }
    Ok(())
}

fn gradcheck(cli: &Cli, instances: usize, tolerance: f64) -> Result<bool> {
    let report = oracle::gradient_check(instances, Dims::new(8, 8, 4)?, 4, cli.seed.unwrap_or(0))?;
    println!(
        "{} instances, max relative error {:.3e} (tolerance {tolerance:e})",
        report.instances, report.max_relative_error
    );
    if let Some((dims, rank, t)) = report.worst {
        println!("worst: dims {dims:?}, rank {rank}, {t:?}");
    }
    Ok(report.max_relative_error <= tolerance)
}

fn oracle_cmd(cli: &Cli) -> Result<()> {
    let cfg = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
    let tasks = match cfg.as_ref().map(|c| &c.suite) {
        Some(SuiteConfig::Chain(c)) => c.tasks.clone(),
        Some(other) => bail!("oracle needs a chain suite, got {}", other.family()),
        None => vec![ChainMdpSpec::five_state_chain()],
    };
    let solved = tasks
        .iter()
        .map(|spec| oracle::value_iteration(spec, oracle::DEFAULT_TOL, oracle::DEFAULT_MAX_ITERS))
        .collect::<tlrq_core::Result<Vec<_>>>()?;
    for (m, q) in solved.iter().enumerate() {
        println!("task {m}: optimal policy {:?}", q.greedy_policy());
        for (s, row) in q.0.outer_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:9.4}")).collect();
            println!("  s{s}: {}", cells.join(" "));
        }
    }
    let Some(mut cfg) = cfg else {
        return Ok(());
    };
    cfg.algorithms = vec![Algorithm::Stlrq];
    let result = harness::run_experiment(&cfg, cli.threads)?;
    report_failures(&result);
    println!("greedy-policy agreement of trained S-TLR-Q:");
    for run in &result.runs {
        let matches: Vec<String> = solved
            .iter()
            .enumerate()
            .map(|(m, q)| format!("{:.2}", oracle::policy_match(&run.model, m, q)))
            .collect();
        println!("  seed {}: {}", run.seed, matches.join(" "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train { algorithm } => train(&cli, algorithm).map(|_| true),
        Command::Compare => compare(&cli).map(|_| true),
        Command::Eval { model, episodes } => eval(&cli, model, *episodes).map(|_| true),
        Command::Gradcheck { instances, tolerance } => gradcheck(&cli, *instances, *tolerance),
        Command::Oracle => oracle_cmd(&cli).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
