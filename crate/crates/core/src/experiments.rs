//! Reproducible experiment runners.
//!
//! Every trial owns the RNG stream `(master_seed, stream_id(K, trial))`, or
//! `stream_id(σ position in the sweep, trial)` for noise sweeps. Trials are
//! collected in index order and aggregated serially, so serial and parallel
//! runs produce identical tables.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io::{config_hash, CsvTable};
use crate::moments::{gram_tuple, GramTuple};
use crate::priors::{random_subspace_prior, PriorSpec};
use crate::repr::{random_signal, BlockSignal, RepresentationStructure};
use crate::rng::{stream_id, stream_rng, StreamRng};
use crate::scalar::Scalar;
use crate::solvers::{solve, Algorithm, SolveReport, SolverConfig, StopRule};
use crate::{Error, Result};

pub const DESK_TRIALS: usize = 200;
pub const FULL_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    IterationsVsK,
    ErrorVsNoise,
    Transversality,
    Bilipschitz,
    DemoSolve,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::IterationsVsK => "iterations_vs_K",
            Self::ErrorVsNoise => "error_vs_noise",
            Self::Transversality => "transversality",
            Self::Bilipschitz => "bilipschitz",
            Self::DemoSolve => "demo_solve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub structure: RepresentationStructure,
    pub trials: usize,
    pub k_values: Vec<usize>,
    pub sigma_values: Vec<f64>,
    pub master_seed: u64,
    pub solver: SolverConfig,
    /// Output location; not part of the provenance hash.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Run trials on the thread pool; not part of the provenance hash.
    #[serde(skip)]
    pub parallel: bool,
}

fn block_8x4() -> RepresentationStructure {
    RepresentationStructure::real([(8, 4)]).expect("valid structure")
}

impl ExperimentConfig {
    pub fn iterations_vs_k() -> Self {
        Self {
            experiment: ExperimentKind::IterationsVsK,
            structure: block_8x4(),
            trials: DESK_TRIALS,
            k_values: (1..=10).collect(),
            sigma_values: vec![0.0],
            master_seed: 0,
            solver: SolverConfig {
                stop_rule: StopRule::OracleError,
                ..SolverConfig::default()
            },
            out: None,
            parallel: true,
        }
    }

    pub fn error_vs_noise() -> Self {
        Self {
            experiment: ExperimentKind::ErrorVsNoise,
            k_values: vec![10],
            sigma_values: vec![1e-4, 1e-3, 1e-2, 1e-1],
            solver: SolverConfig::default(),
            ..Self::iterations_vs_k()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        let dim = self.structure.ambient_dim();
        match self.experiment {
            ExperimentKind::IterationsVsK | ExperimentKind::ErrorVsNoise => {
                if self.k_values.is_empty() {
                    return Err(Error::InvalidConfig("K list is empty".into()));
                }
                if let Some(k) = self.k_values.iter().find(|&&k| k == 0 || k > dim) {
                    return Err(Error::InvalidConfig(format!("K = {k} must be in 1..={dim}")));
                }
            }
            _ => {}
        }
        if self.experiment == ExperimentKind::ErrorVsNoise {
            if self.sigma_values.is_empty() {
                return Err(Error::InvalidConfig("sigma list is empty".into()));
            }
            if let Some(s) = self.sigma_values.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
                return Err(Error::InvalidConfig(format!("sigma = {s} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Provenance hash over everything that affects results.
    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_value(self).expect("config serializes"))
    }

    fn provenance(&self, table: &mut CsvTable) {
        table
            .comment(format!("experiment={}", self.experiment.name()))
            .comment(format!("config_hash={}", self.hash()))
            .comment(format!("master_seed={}", self.master_seed))
            .comment(format!("structure={}", self.structure))
            .comment(format!("trials={}", self.trials));
    }
}

/// Median of a nonempty slice; the mean of the two middle values for even
/// lengths. `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_trials<R: Send>(cfg: &ExperimentConfig, n: usize, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    if cfg.parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// One recorded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub k: usize,
    pub sigma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub oracle_error: f64,
}

impl TrialRecord {
    fn from_report<T: Scalar>(trial_id: usize, k: usize, sigma: f64, r: &SolveReport<T>) -> Self {
        Self {
            trial_id,
            k,
            sigma,
            iterations: r.iterations_used,
            converged: r.converged,
            residual: r.residual_final,
            oracle_error: r.oracle_error.unwrap_or(f64::NAN),
        }
    }
}

pub fn trials_table(cfg: &ExperimentConfig, trials: &[TrialRecord]) -> CsvTable {
    let mut t = CsvTable::new(&["trial_id", "K", "sigma", "iterations", "converged", "residual", "oracle_error"]);
    cfg.provenance(&mut t);
    for r in trials {
        t.push(vec![
            r.trial_id.to_string(),
            r.k.to_string(),
            r.sigma.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.residual.to_string(),
            r.oracle_error.to_string(),
        ]);
    }
    t
}

/// A random subspace of dimension `k`, a Gaussian truth inside it and a
/// random initial point, all drawn from `rng`.
pub fn synthetic_instance<T: Scalar>(
    s: &RepresentationStructure,
    k: usize,
    rng: &mut StreamRng,
) -> Result<(PriorSpec<T>, BlockSignal<T>, BlockSignal<T>)> {
    let prior = random_subspace_prior::<T, _>(s, k, rng)?;
    let basis = prior.basis().expect("subspace prior");
    let coeffs = DMatrix::from_fn(k, 1, |_, _| T::standard_normal(rng));
    let truth = crate::repr::decompose((basis * coeffs).as_slice(), s)?;
    let init = random_signal::<T, _>(s, rng)?;
    Ok((prior, truth, init))
}

pub struct IterationsResult {
    pub summary: CsvTable,
    pub trials: Vec<TrialRecord>,
}

/// Iterations to reach the stopping tolerance as a function of the subspace
/// dimension `K`. Unconverged trials count as `max_iters`.
pub fn run_iterations_vs_k<T: Scalar>(cfg: &ExperimentConfig) -> Result<IterationsResult> {
    cfg.validate()?;
    cfg.structure.check_field::<T>()?;
    let s = &cfg.structure;
    let mut summary = CsvTable::new(&["K", "median_iterations", "convergence_rate", "trials"]);
    cfg.provenance(&mut summary);
    let mut all = Vec::new();
    for &k in &cfg.k_values {
        let records = run_trials(cfg, cfg.trials, |t| {
            let mut rng = stream_rng(cfg.master_seed, stream_id(k as u64, t as u64));
            let (prior, truth, init) = synthetic_instance::<T>(s, k, &mut rng)?;
            let report = solve(&gram_tuple(&truth), &prior, &cfg.solver, Some(&init), Some(&truth))?;
            Ok(TrialRecord::from_report(t, k, 0.0, &report))
        })?;
        let iters: Vec<f64> = records.iter().map(|r| r.iterations as f64).collect();
        let rate = records.iter().filter(|r| r.converged).count() as f64 / records.len() as f64;
        summary.push(vec![
            k.to_string(),
            median(&iters).to_string(),
            rate.to_string(),
            records.len().to_string(),
        ]);
        all.extend(records);
    }
    Ok(IterationsResult { summary, trials: all })
}

pub struct NoiseResult {
    pub summary: CsvTable,
    pub trials: Vec<TrialRecord>,
}

/// Recovery error from the Gram tuple of `X + η`, `η` with i.i.d. entries of
/// standard deviation `σ`, as a function of `σ`. Uses the first entry of
/// `k_values`. At `σ = 0` only converged trials enter the median.
pub fn run_error_vs_noise<T: Scalar>(cfg: &ExperimentConfig) -> Result<NoiseResult> {
    cfg.validate()?;
    cfg.structure.check_field::<T>()?;
    let s = &cfg.structure;
    let k = cfg.k_values[0];
    let mut summary = CsvTable::new(&["sigma", "median_error", "trials", "convergence_rate"]);
    cfg.provenance(&mut summary);
    summary.comment(format!("K={k}"));
    let mut all = Vec::new();
    for (si, &sigma) in cfg.sigma_values.iter().enumerate() {
        let records = run_trials(cfg, cfg.trials, |t| {
            let mut rng = stream_rng(cfg.master_seed, stream_id(si as u64, t as u64));
            let (prior, truth, init) = synthetic_instance::<T>(s, k, &mut rng)?;
            let noisy = BlockSignal::new(
                s.clone(),
                truth
                    .matrices()
                    .iter()
                    .map(|m| m.map(|z| z + T::standard_normal(&mut rng) * T::from_real(sigma)))
                    .collect(),
            )?;
            let measured: GramTuple<T> = gram_tuple(&noisy).to_psd();
            let report = solve(&measured, &prior, &cfg.solver, Some(&init), Some(&truth))?;
            Ok(TrialRecord::from_report(t, k, sigma, &report))
        })?;
        let errors: Vec<f64> = records
            .iter()
            .filter(|r| sigma > 0.0 || r.converged)
            .map(|r| r.oracle_error)
            .collect();
        let rate = records.iter().filter(|r| r.converged).count() as f64 / records.len() as f64;
        summary.push(vec![
            sigma.to_string(),
            median(&errors).to_string(),
            errors.len().to_string(),
            rate.to_string(),
        ]);
        all.extend(records);
    }
    Ok(NoiseResult { summary, trials: all })
}

/// Output of a synthetic end-to-end solve.
pub struct DemoOutcome<T: Scalar> {
    pub measured: GramTuple<T>,
    pub prior: PriorSpec<T>,
    pub truth: BlockSignal<T>,
    pub report: SolveReport<T>,
}

/// Synthesizes a subspace instance of dimension `m` from `seed` and solves it
/// with the blind residual stop.
pub fn run_demo_solve<T: Scalar>(
    s: &RepresentationStructure,
    m: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<DemoOutcome<T>> {
    s.check_field::<T>()?;
    let mut rng = stream_rng(seed, 0);
    let (prior, truth, init) = synthetic_instance::<T>(s, m, &mut rng)?;
    let measured = gram_tuple(&truth);
    let config = SolverConfig {
        seed,
        stop_rule: StopRule::Residual,
        ..*solver
    };
    let report = solve(&measured, &prior, &config, Some(&init), Some(&truth))?;
    Ok(DemoOutcome {
        measured,
        prior,
        truth,
        report,
    })
}

pub fn algorithm_name(a: Algorithm) -> String {
    match a {
        Algorithm::AlternatingProjection => "ap".into(),
        Algorithm::Rrr { beta } => format!("rrr(beta={beta})"),
    }
}

pub fn demo_summary<T: Scalar>(cfg: &SolverConfig, m: usize, seed: u64, out: &DemoOutcome<T>) -> serde_json::Value {
    json!({
        "structure": out.measured.structure(),
        "M": m,
        "seed": seed,
        "algorithm": algorithm_name(cfg.algorithm),
        "iterations_used": out.report.iterations_used,
        "converged": out.report.converged,
        "residual_final": out.report.residual_final,
        "oracle_error": out.report.oracle_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = match kind {
            ExperimentKind::ErrorVsNoise => ExperimentConfig::error_vs_noise(),
            _ => ExperimentConfig::iterations_vs_k(),
        };
        c.trials = 6;
        c.k_values.truncate(3);
        c.solver.max_iters = 200;
        c
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn serial_and_parallel_agree() {
        for kind in [ExperimentKind::IterationsVsK, ExperimentKind::ErrorVsNoise] {
            let mut cfg = small(kind);
            let run = |cfg: &ExperimentConfig| match kind {
                ExperimentKind::ErrorVsNoise => {
                    let r = run_error_vs_noise::<f64>(cfg).unwrap();
                    (r.summary.render(), trials_table(cfg, &r.trials).render())
                }
                _ => {
                    let r = run_iterations_vs_k::<f64>(cfg).unwrap();
                    (r.summary.render(), trials_table(cfg, &r.trials).render())
                }
            };
            let par = run(&cfg);
            cfg.parallel = false;
            assert_eq!(run(&cfg), par);
        }
    }

    #[test]
    fn hash_ignores_execution_settings() {
        let a = ExperimentConfig::iterations_vs_k();
        let mut b = a.clone();
        b.parallel = false;
        b.out = Some("x.csv".into());
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::iterations_vs_k();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::iterations_vs_k();
        c.k_values = vec![33];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::error_vs_noise();
        c.sigma_values = vec![-1.0];
        assert!(c.validate().is_err());
        c.sigma_values.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn table_shapes() {
        let cfg = small(ExperimentKind::ErrorVsNoise);
        let r = run_error_vs_noise::<f64>(&cfg).unwrap();
        assert_eq!(r.summary.header, ["sigma", "median_error", "trials", "convergence_rate"]);
        assert_eq!(r.summary.rows.len(), 4);
        assert!(r.summary.comments.iter().any(|c| c.starts_with("config_hash=")));
        assert_eq!(r.trials.len(), 24);
    }
}
