//! Generalized phase retrieval solvers.
//!
//! The measurement set `{x : X_ℓ* X_ℓ = G_ℓ for all ℓ}` is projected onto
//! blockwise by solving an orthogonal Procrustes problem; the prior set is
//! handled by any [`Projector`]. Two iterations are provided:
//!
//! * alternating projection, `x ← P₂(P₁(x))`;
//! * relaxed reflect-reflect-relax, `x ← x + β (P₂(2P₁(x) − x) − P₁(x))`.
//!
//! In both cases the reported estimate is `P₁(x)`, so it satisfies the prior
//! exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{ensure_hermitian, hermitian_part, max_modulus, sorted_eigen, spectral_map};
use crate::moments::{gram_tuple, GramTuple};
use crate::priors::Projector;
use crate::repr::{decompose, random_signal, BlockSignal, RepresentationStructure};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Hermitian PSD square root.
///
/// Eigenvalues down to `-1e-10·trace` are treated as round-off and clamped
/// to zero.
pub fn matrix_sqrt_psd<T: Scalar>(g: &DMatrix<T>) -> Result<DMatrix<T>> {
    ensure_hermitian(g, 1e-8)?;
    let h = hermitian_part(g);
    let (values, vectors) = sorted_eigen(&h);
    Ok(hermitian_part(&spectral_map(&values, &vectors, |l| l.max(0.0).sqrt())))
}

fn check_tall(rows: usize, cols: usize) -> Result<()> {
    if rows < cols {
        return Err(Error::WideBlock { rows, cols });
    }
    Ok(())
}

/// Nearest `Y = Q·S` with `Q*Q = I`, given `S = √G`.
fn procrustes_with_sqrt<T: Scalar>(sqrt_gram: &DMatrix<T>, xtilde: &DMatrix<T>) -> DMatrix<T> {
    let m = xtilde * sqrt_gram;
    // SVD::new sorts singular values in descending order. U V* does not
    // depend on the joint phase of each singular pair, so no sign
    // normalization is needed.
    let svd = m.svd(true, true);
    let q = svd.u.expect("U requested") * svd.v_t.expect("V* requested");
    q * sqrt_gram
}

/// Projects `xtilde` (`N × R`, `N ≥ R`) onto `{Y : Y*Y = G}`.
pub fn procrustes_project<T: Scalar>(g: &DMatrix<T>, xtilde: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_tall(xtilde.nrows(), xtilde.ncols())?;
    if g.shape() != (xtilde.ncols(), xtilde.ncols()) {
        return Err(Error::DimensionMismatch {
            context: "gram block",
            expected: xtilde.ncols(),
            actual: g.nrows(),
        });
    }
    Ok(procrustes_with_sqrt(&matrix_sqrt_psd(g)?, xtilde))
}

/// Sign-invariant distance `min(‖x − y‖, ‖x + y‖)` over all blocks.
pub fn rho<T: Scalar>(x: &BlockSignal<T>, y: &BlockSignal<T>) -> Result<f64> {
    x.structure().ensure_same(y.structure())?;
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in x.matrices().iter().zip(y.matrices()) {
        minus += (a - b).norm_squared();
        plus += (a + b).norm_squared();
    }
    Ok(minus.min(plus).sqrt())
}

fn rho_ambient<T: Scalar>(x: &DVector<T>, y: &DVector<T>) -> f64 {
    (x - y).norm().min((x + y).norm())
}

/// Blockwise Procrustes projector onto a fixed Gram tuple.
#[derive(Debug, Clone)]
pub struct MeasurementProjector<T: Scalar> {
    structure: RepresentationStructure,
    sqrt_grams: Vec<DMatrix<T>>,
}

impl<T: Scalar> MeasurementProjector<T> {
    pub fn new(measured: &GramTuple<T>) -> Result<Self> {
        let structure = measured.structure().clone();
        for b in structure.blocks() {
            check_tall(b.irrep_dim, b.multiplicity)?;
        }
        let sqrt_grams = measured
            .grams()
            .iter()
            .map(matrix_sqrt_psd)
            .collect::<Result<_>>()?;
        Ok(Self {
            structure,
            sqrt_grams,
        })
    }

    pub fn project(&self, v: &DVector<T>) -> Result<DVector<T>> {
        let x = decompose(v.as_slice(), &self.structure)?;
        let blocks = self
            .sqrt_grams
            .iter()
            .zip(x.matrices())
            .map(|(s, m)| procrustes_with_sqrt(s, m))
            .collect();
        Ok(BlockSignal::new(self.structure.clone(), blocks)?.reconstruct())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Algorithm {
    AlternatingProjection,
    Rrr { beta: f64 },
}

impl Algorithm {
    pub const DEFAULT_BETA: f64 = 0.5;
}

/// What ends the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Normalized Gram residual of the prior-projected iterate (blind).
    #[default]
    Residual,
    /// Normalized sign-resolved distance to a supplied ground truth.
    OracleError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub track_trajectory: bool,
    pub stop_rule: StopRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::AlternatingProjection,
            max_iters: 1000,
            tol: 1e-6,
            seed: 0,
            track_trajectory: false,
            stop_rule: StopRule::Residual,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if let Algorithm::Rrr { beta } = self.algorithm {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::InvalidConfig(format!("beta must be in (0, 1], got {beta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T: Scalar> {
    pub estimate: BlockSignal<T>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Normalized Gram residual of the estimate.
    pub residual_final: f64,
    pub residual_trajectory: Option<Vec<f64>>,
    /// `rho(estimate, truth) / ‖truth‖` when a truth was supplied.
    pub oracle_error: Option<f64>,
    pub seed: u64,
}

fn gram_residual<T: Scalar>(p: &DVector<T>, measured: &GramTuple<T>) -> Result<f64> {
    let x = decompose(p.as_slice(), measured.structure())?;
    let scale = measured.norm();
    let dist = gram_tuple(&x).distance(measured);
    Ok(if scale > 0.0 { dist / scale } else { dist })
}

fn ensure_finite<T: Scalar>(v: &DVector<T>, iteration: usize, what: &str) -> Result<()> {
    if v.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iteration,
            what: what.to_string(),
        })
    }
}

/// Recovers a signal from its Gram tuple under a prior.
///
/// `init` defaults to a standard normal signal drawn from `config.seed`.
pub fn solve<T: Scalar, P: Projector<T> + ?Sized>(
    measured: &GramTuple<T>,
    prior: &P,
    config: &SolverConfig,
    init: Option<&BlockSignal<T>>,
    truth: Option<&BlockSignal<T>>,
) -> Result<SolveReport<T>> {
    config.validate()?;
    let s = measured.structure();
    for sig in init.iter().chain(truth.iter()) {
        s.ensure_same(sig.structure())?;
    }
    if config.stop_rule == StopRule::OracleError && truth.is_none() {
        return Err(Error::InvalidConfig("oracle stopping needs a ground truth".into()));
    }
    let p2 = MeasurementProjector::new(measured)?;
    let truth_vec = truth.map(|t| t.reconstruct());
    let truth_norm = truth.map(|t| t.norm()).unwrap_or(1.0);
    let oracle = |p: &DVector<T>| {
        truth_vec.as_ref().map(|t| {
            let d = rho_ambient(p, t);
            if truth_norm > 0.0 {
                d / truth_norm
            } else {
                d
            }
        })
    };

    let mut x = match init {
        Some(x0) => x0.reconstruct(),
        None => random_signal::<T, _>(s, &mut stream_rng(config.seed, 0))?.reconstruct(),
    };
    let mut trajectory = config.track_trajectory.then(Vec::new);
    let mut p = prior.project(&x)?;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations_used = config.max_iters;

    for iter in 1..=config.max_iters {
        x = match config.algorithm {
            Algorithm::AlternatingProjection => p2.project(&p)?,
            Algorithm::Rrr { beta } => {
                let reflected = p.scale(2.0) - &x;
                let q = p2.project(&reflected)?;
                &x + (q - &p).scale(beta)
            }
        };
        ensure_finite(&x, iter, "iterate")?;
        p = prior.project(&x)?;
        residual = gram_residual(&p, measured)?;
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                iteration: iter,
                what: "gram residual".into(),
            });
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(residual);
        }
        let stop_value = match config.stop_rule {
            StopRule::Residual => residual,
            StopRule::OracleError => oracle(&p).expect("truth checked above"),
        };
        if stop_value < config.tol {
            converged = true;
            iterations_used = iter;
            break;
        }
    }

    let oracle_error = oracle(&p);
    Ok(SolveReport {
        estimate: decompose(p.as_slice(), s)?,
        iterations_used,
        converged,
        residual_final: residual,
        residual_trajectory: trajectory,
        oracle_error,
        seed: config.seed,
    })
}

/// Gram-residual of a candidate; exposed for diagnostics.
pub fn normalized_gram_residual<T: Scalar>(x: &BlockSignal<T>, measured: &GramTuple<T>) -> Result<f64> {
    measured.structure().ensure_same(x.structure())?;
    gram_residual(&x.reconstruct(), measured)
}

/// `max |Y*Y − G|` for checking constraint satisfaction.
pub fn gram_defect<T: Scalar>(y: &DMatrix<T>, g: &DMatrix<T>) -> f64 {
    max_modulus(&(y.adjoint() * y - g))
}
