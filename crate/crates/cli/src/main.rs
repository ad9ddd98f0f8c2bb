mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oid_core::dataio::{split_ratings, split_warm_cold, synth_generate, write_udata};
use oid_core::gadgets::{counterexample_fixture, alpha, theory_report, theta};
use oid_core::pmf::{estimate_noise, train, FactorModel, DEFAULT_SIGMA_FLOOR};
use oid_core::selection::{run_algorithm, CandidatePool, ItemStats, SelectionAlgorithm, SelectionContext};
use oid_core::simulate::{prediction_variances, run_experiment, PlotMetric, Setting};
use oid_core::{Error, Result};

use config::{ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "oid", version, about = "Interview design for cold-start recommendation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated interview budgets.
    #[arg(long, global = true, value_delimiter = ',')]
    budget: Option<Vec<usize>>,
    /// Comma-separated algorithm names (FG1, AFG2, BG2, PI, Ent0, ...).
    #[arg(long, global = true, value_delimiter = ',')]
    algos: Option<Vec<SelectionAlgorithm>>,
    #[arg(long, global = true)]
    setting: Option<Setting>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the factor model on the warm users and report held-out RMSE.
    Train,
    /// Run the cold-user interview simulation and write result tables.
    Simulate,
    /// Compute interview plans over every item known to the warm model.
    Select {
        /// Use this checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Check the hardness gadgets and counterexamples numerically.
    VerifyTheory {
        /// Flip entry ROW,COL (0-based) of the first counterexample matrix.
        #[arg(long, value_delimiter = ',')]
        perturb_m1: Option<Vec<usize>>,
        #[arg(long, default_value_t = 12.0)]
        eta_sq: f64,
    },
    /// Write a synthetic dataset and its ground-truth factors.
    Synth,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` signals a failed verification.
fn run(cli: Cli) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.common.seed,
        threads: cli.common.threads,
        out: cli.common.out,
        budgets: cli.common.budget,
        algorithms: cli.common.algos,
        setting: cli.common.setting,
    });
    cfg.simulation.validate()?;
    match cli.command {
        Command::Train => cmd_train(&cfg).map(|_| true),
        Command::Simulate => cmd_simulate(&cfg).map(|_| true),
        Command::Select { model } => cmd_select(&cfg, model.as_deref()).map(|_| true),
        Command::VerifyTheory { perturb_m1, eta_sq } => cmd_verify_theory(perturb_m1, eta_sq, cfg.simulation.seed),
        Command::Synth => cmd_synth(&cfg).map(|_| true),
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let (name, ds) = cfg.ratings()?;
    let sim = &cfg.simulation;
    let split = split_warm_cold(&ds, sim.warm_fraction, sim.seed)?;
    let (train_set, held_out) = split_ratings(&split.warm, cfg.holdout_fraction, sim.seed)?;
    let model = train(&train_set, &sim.hyper)?;
    let clamp = ds.scale();
    println!(
        "{name}: {} warm users, {} training ratings, {} held out",
        split.warm_users.len(),
        train_set.len(),
        held_out.len()
    );
    println!("train RMSE: {:.4}", model.rmse(&train_set, clamp)?);
    if !held_out.is_empty() {
        println!("warm RMSE (held-out): {:.4}", model.rmse(&held_out, clamp)?);
    }
    let path = out_dir(cfg)?.join("model.json");
    model.save(&path)?;
    println!("checkpoint: {}", path.display());
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let (name, ds) = cfg.ratings()?;
    let out = run_experiment(&name, &ds, &cfg.simulation)?;
    let dir = out_dir(cfg)?;
    let results = dir.join("results.csv");
    out.table.write_csv(BufWriter::new(fs::File::create(&results)?))?;
    for metric in PlotMetric::ALL {
        let path = dir.join(format!("plot_{}.csv", metric.name()));
        out.table.write_plot_csv(metric, BufWriter::new(fs::File::create(path)?))?;
    }
    println!(
        "{name} ({} setting): {} warm / {} cold users, mean pool {:.1} items, shared sigma {}, ridge {:.4}",
        cfg.simulation.setting.name(),
        out.warm_users,
        out.cold_users,
        out.mean_pool_size,
        out.shared_sigma,
        out.ridge_gamma
    );
    println!("{} result rows -> {}", out.table.rows.len(), results.display());
    Ok(())
}

fn cmd_select(cfg: &ExperimentConfig, model_path: Option<&Path>) -> Result<()> {
    let (_, ds) = cfg.ratings()?;
    let sim = &cfg.simulation;
    let split = split_warm_cold(&ds, sim.warm_fraction, sim.seed)?;
    let model = match model_path {
        Some(p) => FactorModel::load(p)?,
        None => train(&split.warm, &sim.hyper)?,
    };
    if model.num_items() != ds.num_items() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_items(),
            actual: model.num_items(),
        });
    }
    let noise = estimate_noise(&model, &split.warm, DEFAULT_SIGMA_FLOOR)?;
    let stats = ItemStats::from_dataset(&split.warm);
    let known: Vec<usize> = (0..ds.num_items()).filter(|&j| stats[j].rating_count > 0).collect();
    let all_var = prediction_variances(&model, &split.warm_users);
    let pool = CandidatePool::from_model(&model, &noise, &known)?
        .with_stats(&stats, split.warm_users.len())?
        .with_variances(known.iter().map(|&j| all_var[j]).collect())?;
    let ctx = SelectionContext {
        gamma: sim.search_gamma,
        shared_sigma: sim.shared_sigma.unwrap_or(1.0),
        seed: sim.seed,
    };
    let dir = out_dir(cfg)?;
    for &alg in &sim.algorithms {
        for &b in &sim.budgets {
            let plan = run_algorithm(alg, &pool, b, &ctx)?;
            let path = dir.join(format!("plan_{}_b{b}.csv", alg.name()));
            plan.write_csv(BufWriter::new(fs::File::create(&path)?))?;
            let raw: Vec<&str> = plan.items.iter().map(|&j| ds.item_ids().raw(j)).collect();
            println!(
                "{alg:<5} b={b:<3} f={:.6} evals={:<8} items=[{}]",
                plan.final_f,
                plan.evaluations,
                raw.join(",")
            );
        }
    }
    Ok(())
}

fn cmd_verify_theory(perturb: Option<Vec<usize>>, eta_sq: f64, seed: u64) -> Result<bool> {
    let mut fixture = counterexample_fixture();
    if let Some(rc) = perturb {
        let &[r, c] = rc.as_slice() else {
            return Err(Error::InvalidArgument("--perturb-m1 takes ROW,COL".into()));
        };
        if r >= fixture.m1.rows() || c >= fixture.m1.cols() {
            return Err(Error::OutOfRange {
                id: r.max(c),
                bound: fixture.m1.rows().min(fixture.m1.cols()),
            });
        }
        fixture.m1[(r, c)] = 1.0 - fixture.m1[(r, c)];
        println!("perturbed M1 at ({r}, {c})");
    }
    println!("eta^2 = {eta_sq}");
    println!("{:>3} {:>3} {:>10} {:>10}", "q", "k", "theta", "alpha");
    for q in 1..=3 {
        println!("{q:>3} {:>3} {:>10.6} {:>10.6}", 3 * q, theta(q, 3 * q, eta_sq), alpha(q, 3 * q, eta_sq));
    }
    println!();
    let report = theory_report(&fixture, eta_sq, seed);
    let width = report.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &report {
        println!(
            "{} {:<width$}  expected {}  computed {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.expected,
            c.computed
        );
    }
    let failed = report.iter().filter(|c| !c.pass).count();
    println!("{} checks, {failed} failed", report.len());
    Ok(failed == 0)
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let (ds, truth) = synth_generate(&cfg.synthetic)?;
    let dir = out_dir(cfg)?;
    let data = dir.join("synth.data");
    write_udata(&ds, &data)?;
    truth.save(&dir.join("synth_truth.json"))?;
    println!(
        "{} ratings, {} users, {} items -> {}",
        ds.len(),
        ds.num_users(),
        ds.num_items(),
        data.display()
    );
    Ok(())
}
