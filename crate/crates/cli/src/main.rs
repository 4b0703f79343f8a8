//! `gpr`: simulate, solve and run the phase retrieval experiments.
//!
//! Exit codes: 0 on success or convergence, 2 when a solve did not converge,
//! 1 on any error.

mod config;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gpr_core::analysis::{GridElement, Histogram};
use gpr_core::experiments::{demo_summary, run_demo_solve, trials_table, DESK_TRIALS, FULL_TRIALS};
use gpr_core::io::{
    gram_tuple_from_json, gram_tuple_to_json, prior_from_json, prior_to_json, read_json, report_to_json,
    samples_to_csv, signal_from_json, signal_to_json, structure_from_json, to_pretty, CsvTable,
};
use gpr_core::repr::GroupAction;
use gpr_core::rng::stream_rng;
use gpr_core::*;
use serde_json::{json, Value};

use config::{CommonArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "gpr", version, about = "Generalized phase retrieval over compact groups")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActionName {
    /// Haar-random element of the full ambiguity group.
    Full,
    /// Uniform cyclic shift (`cyclic:n` structures only).
    Cyclic,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic instance and write its Gram tuple, prior and truth.
    Simulate {
        /// Number of MRA observations; 0 uses the exact second moment.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = ActionName::Full)]
        action: ActionName,
    },
    /// Recover a signal from a Gram tuple and a prior.
    Solve {
        /// Gram tuple file (JSON).
        #[arg(long, required_unless_present = "synthetic")]
        gram: Option<PathBuf>,
        /// Prior file (JSON).
        #[arg(long, required_unless_present = "synthetic")]
        prior: Option<PathBuf>,
        /// Ground truth for the oracle error (JSON).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Initial point (JSON); random from --seed otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Synthesize an instance from --structure, --K and --seed instead.
        #[arg(long, conflicts_with_all = ["gram", "prior", "truth", "init"])]
        synthetic: bool,
        /// Record the residual after every iteration.
        #[arg(long)]
        trajectory: bool,
    },
    /// Median iterations to convergence as a function of K.
    ExpIterations,
    /// Median recovery error as a function of the noise level.
    ExpNoise,
    /// Grid check that no ambiguity element maps a subspace point back into it.
    Transversality {
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Grid angles per full turn.
        #[arg(long, default_value_t = 512)]
        grid_steps: usize,
        /// Relative radius of the penalized neighborhoods of ±x.
        #[arg(long, default_value_t = GridOptions::DEFAULT_EXCLUSION)]
        exclusion: f64,
        /// Check the subspace span{x, h·x} for a reflection h instead.
        #[arg(long)]
        designed: bool,
    },
    /// Monte Carlo distortion of x ↦ √gram(x) on a random subspace.
    Bilipschitz {
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
}

enum Status {
    Done,
    NotConverged,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write_text(path, &to_pretty(v))
}

fn write_csv(path: &Path, t: &CsvTable) -> Result<()> {
    write_text(path, &t.render())
}

/// `results.csv` → `results_trials.csv`.
fn trials_path(summary: &Path) -> PathBuf {
    let stem = summary.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    summary.with_file_name(format!("{stem}_trials.csv"))
}

fn load(path: &Path) -> Result<Value> {
    Ok(read_json(path)?)
}

fn simulate<T: Scalar>(st: &Settings, samples: usize, action: ActionName) -> Result<Status> {
    let s = st.structure_or("8x4")?;
    let m = st.single_k(4)?;
    let seed = st.seed.unwrap_or(0);
    let sigma = match st.sigma.as_deref() {
        None => 0.0,
        Some([v]) => *v,
        Some(_) => bail!("simulate takes a single --sigma"),
    };
    let out = st.out_or("simulated");
    let mut rng = stream_rng(seed, 0);
    let prior = random_subspace_prior::<T, _>(&s, m, &mut rng)?;
    let basis = prior.basis().expect("subspace prior");
    let coeffs = DMatrix::from_fn(m, 1, |_, _| T::standard_normal(&mut rng));
    let truth = decompose((basis * coeffs).as_slice(), &s)?;
    let gram = if samples == 0 {
        gram_tuple(&truth)
    } else {
        let action = match action {
            ActionName::Full => GroupAction::FullAmbiguity,
            ActionName::Cyclic => GroupAction::Cyclic { n: s.ambient_dim() },
        };
        let set = sample_observations(&truth, action, sigma, samples, seed)?;
        write_csv(&out.join("samples.csv"), &samples_to_csv(&set))?;
        extract_gram(&empirical_second_moment(&set), &s)?
    };
    write_json(&out.join("gram.json"), &gram_tuple_to_json(&gram))?;
    write_json(&out.join("prior.json"), &prior_to_json(&prior))?;
    write_json(&out.join("truth.json"), &signal_to_json(&truth))?;
    println!("wrote {}", out.display());
    Ok(Status::Done)
}

fn solve_files<T: Scalar>(
    st: &Settings,
    gram_v: &Value,
    prior_path: &Path,
    truth: Option<&PathBuf>,
    init: Option<&PathBuf>,
    trajectory: bool,
) -> Result<Status> {
    let measured = gram_tuple_from_json::<T>(gram_v)?;
    let base = prior_path.parent().unwrap_or(Path::new("."));
    let prior = prior_from_json::<T>(&load(prior_path)?, base)
        .with_context(|| format!("in prior file {}", prior_path.display()))?;
    let read_signal = |p: &PathBuf| -> Result<BlockSignal<T>> {
        signal_from_json(&load(p)?).with_context(|| format!("in signal file {}", p.display()))
    };
    let truth = truth.map(read_signal).transpose()?;
    let init = init.map(read_signal).transpose()?;
    let config = SolverConfig {
        track_trajectory: trajectory,
        ..st.solver(SolverConfig::default())
    };
    let report = solve(&measured, &prior, &config, init.as_ref(), truth.as_ref())?;
    let out = st.out_or("solve_out");
    write_json(&out.join("report.json"), &report_to_json(&report))?;
    write_json(&out.join("estimate.json"), &signal_to_json(&report.estimate))?;
    println!(
        "{}",
        json!({
            "iterations_used": report.iterations_used,
            "converged": report.converged,
            "residual_final": report.residual_final,
            "oracle_error": report.oracle_error,
        })
    );
    Ok(if report.converged { Status::Done } else { Status::NotConverged })
}

fn solve_synthetic<T: Scalar>(st: &Settings, s: &RepresentationStructure, trajectory: bool) -> Result<Status> {
    let m = st.single_k(4)?;
    let seed = st.seed.unwrap_or(0);
    let config = SolverConfig {
        track_trajectory: trajectory,
        ..st.solver(SolverConfig::default())
    };
    let outcome = run_demo_solve::<T>(s, m, seed, &config)?;
    let summary = demo_summary(&config, m, seed, &outcome);
    let out = st.out_or("solve_out");
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("report.json"), &report_to_json(&outcome.report))?;
    write_json(&out.join("gram.json"), &gram_tuple_to_json(&outcome.measured))?;
    write_json(&out.join("prior.json"), &prior_to_json(&outcome.prior))?;
    write_json(&out.join("truth.json"), &signal_to_json(&outcome.truth))?;
    println!("{summary}");
    Ok(if outcome.report.converged {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn experiment_config(st: &Settings, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    if let Some(s) = &st.structure {
        cfg.structure = s.clone();
    }
    if let Some(k) = &st.k {
        cfg.k_values = k.clone();
    }
    if let Some(sigma) = &st.sigma {
        cfg.sigma_values = sigma.clone();
    }
    cfg.trials = st
        .trials
        .unwrap_or(if st.paper_scale { FULL_TRIALS } else { DESK_TRIALS });
    cfg.master_seed = st.seed.unwrap_or(cfg.master_seed);
    cfg.solver = st.solver(cfg.solver);
    cfg.parallel = !st.serial;
    cfg.validate()?;
    Ok(cfg)
}

fn exp_iterations(st: &Settings) -> Result<Status> {
    let cfg = experiment_config(st, ExperimentConfig::iterations_vs_k())?;
    let res = match cfg.structure.field() {
        Field::Real => run_iterations_vs_k::<f64>(&cfg)?,
        Field::Complex => run_iterations_vs_k::<Complex64>(&cfg)?,
    };
    let out = st.out_or("iterations_vs_K.csv");
    write_csv(&out, &res.summary)?;
    write_csv(&trials_path(&out), &trials_table(&cfg, &res.trials))?;
    print!("{}", res.summary.render());
    Ok(Status::Done)
}

fn exp_noise(st: &Settings) -> Result<Status> {
    let cfg = experiment_config(st, ExperimentConfig::error_vs_noise())?;
    let res = match cfg.structure.field() {
        Field::Real => run_error_vs_noise::<f64>(&cfg)?,
        Field::Complex => run_error_vs_noise::<Complex64>(&cfg)?,
    };
    let out = st.out_or("error_vs_noise.csv");
    write_csv(&out, &res.summary)?;
    write_csv(&trials_path(&out), &trials_table(&cfg, &res.trials))?;
    print!("{}", res.summary.render());
    Ok(Status::Done)
}

fn transversality(st: &Settings, points: usize, grid_steps: usize, exclusion: f64, designed: bool) -> Result<Status> {
    let s = st.structure_or("cyclic:8")?;
    if s.field() != Field::Real {
        bail!("the transversality grid supports real structures only");
    }
    let seed = st.seed.unwrap_or(0);
    let opts = GridOptions {
        exclusion,
        ..GridOptions::with_step(2.0 * PI / grid_steps as f64)
    };
    let (prior, m) = if designed {
        let x = random_signal::<f64, _>(&s, &mut stream_rng(seed, 0))?;
        let Some(l) = s.blocks().iter().position(|b| b.irrep_dim == 2) else {
            bail!("the designed example needs a block with irrep dimension 2");
        };
        let mut blocks: Vec<DMatrix<f64>> =
            s.blocks().iter().map(|b| DMatrix::identity(b.irrep_dim, b.irrep_dim)).collect();
        blocks[l] = GridElement::Reflection(0.0).matrix(2);
        (designed_intersection_prior(&x, &GroupElement::new(blocks)?)?, 2)
    } else {
        let m = st.single_k(2)?;
        (random_subspace_prior::<f64, _>(&s, m, &mut stream_rng(seed, 0))?, m)
    };
    let report = transversality_check(&s, &prior, points, &opts, &mut stream_rng(seed, 1))?;
    let v = json!({
        "structure": s,
        "M": m,
        "seed": seed,
        "designed": designed,
        "exclusion": exclusion,
        "report": report,
    });
    write_json(&st.out_or("transversality.json"), &v)?;
    println!(
        "K={} M={} points={} worst_margin={} threshold={} violations={}",
        report.k_effective,
        report.m_dim,
        report.samples_checked,
        report.worst_margin,
        report.threshold,
        report.violations.len()
    );
    Ok(Status::Done)
}

fn bilipschitz<T: Scalar>(st: &Settings, s: &RepresentationStructure, pairs: usize) -> Result<Status> {
    let m = st.single_k(4)?;
    let seed = st.seed.unwrap_or(0);
    let prior = random_subspace_prior::<T, _>(s, m, &mut stream_rng(seed, 0))?;
    let report = distortion_estimate(s, &prior, pairs, &mut stream_rng(seed, 1))?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    let out = st.out_or("bilipschitz.json");
    write_json(
        &out,
        &json!({ "structure": s, "M": m, "seed": seed, "report": report }),
    )?;
    let hist: &Histogram = &report.ratio_histogram;
    let mut table = hist.to_csv();
    table
        .comment(format!("structure={s}"))
        .comment(format!("M={m}"))
        .comment(format!("master_seed={seed}"))
        .comment(format!("pairs={pairs}"));
    write_csv(&out.with_extension("csv"), &table)?;
    println!(
        "alpha_lower={} beta_upper={} pairs={} skipped={}",
        report.alpha_lower, report.beta_upper, report.pairs_sampled, report.pairs_skipped
    );
    Ok(Status::Done)
}

fn run(cli: Cli) -> Result<Status> {
    let st = cli.common.settings()?;
    st.install_threads()?;
    match cli.command {
        Command::Simulate { samples, action } => match st.structure_or("8x4")?.field() {
            Field::Real => simulate::<f64>(&st, samples, action),
            Field::Complex => simulate::<Complex64>(&st, samples, action),
        },
        Command::Solve {
            gram,
            prior,
            truth,
            init,
            synthetic,
            trajectory,
        } => {
            if synthetic {
                let s = st.structure_or("8x4")?;
                return match s.field() {
                    Field::Real => solve_synthetic::<f64>(&st, &s, trajectory),
                    Field::Complex => solve_synthetic::<Complex64>(&st, &s, trajectory),
                };
            }
            let (gram, prior) = (gram.expect("required by clap"), prior.expect("required by clap"));
            let gram_v = load(&gram)?;
            let field = structure_from_json(&gram_v)
                .with_context(|| format!("in Gram file {}", gram.display()))?
                .field();
            let res = match field {
                Field::Real => solve_files::<f64>(&st, &gram_v, &prior, truth.as_ref(), init.as_ref(), trajectory),
                Field::Complex => {
                    solve_files::<Complex64>(&st, &gram_v, &prior, truth.as_ref(), init.as_ref(), trajectory)
                }
            };
            res.with_context(|| format!("solving {}", gram.display()))
        }
        Command::ExpIterations => exp_iterations(&st),
        Command::ExpNoise => exp_noise(&st),
        Command::Transversality {
            points,
            grid_steps,
            exclusion,
            designed,
        } => transversality(&st, points, grid_steps, exclusion, designed),
        Command::Bilipschitz { pairs } => {
            let s = st.structure_or("8x4")?;
            match s.field() {
                Field::Real => bilipschitz::<f64>(&st, &s, pairs),
                Field::Complex => bilipschitz::<Complex64>(&st, &s, pairs),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("did not converge");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
