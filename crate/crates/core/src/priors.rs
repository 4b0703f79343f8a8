//! Prior projectors: nearest-point maps onto semialgebraic signal sets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::max_modulus;
use crate::repr::RepresentationStructure;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Euclidean nearest-point map onto a prior set.
///
/// Implementations must be idempotent and must not move a point further
/// from the set than any other set element; the solvers rely on nothing
/// else. Priors without a closed-form projection (e.g. images of generative
/// networks) plug in here.
pub trait Projector<T: Scalar>: Sync {
    fn project(&self, v: &DVector<T>) -> Result<DVector<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec<T: Scalar> {
    /// Column span of an orthonormal basis.
    LinearSubspace { basis: DMatrix<T> },
    /// At most `k` nonzero coefficients, in the standard basis or in an
    /// orthonormal dictionary.
    Sparsity {
        k: usize,
        dictionary: Option<DMatrix<T>>,
    },
    /// Zero outside a known support.
    Support { mask: Vec<bool> },
}

const ORTHONORMAL_TOL: f64 = 1e-10;

fn ensure_orthonormal<T: Scalar>(basis: &DMatrix<T>, what: &str) -> Result<()> {
    let m = basis.ncols();
    let defect = max_modulus(&(basis.adjoint() * basis - DMatrix::<T>::identity(m, m)));
    if defect > ORTHONORMAL_TOL {
        return Err(Error::InvalidPrior(format!(
            "{what} columns are not orthonormal (defect {defect:.3e})"
        )));
    }
    Ok(())
}

impl<T: Scalar> PriorSpec<T> {
    pub fn linear_subspace(basis: DMatrix<T>) -> Result<Self> {
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(Error::InvalidPrior(format!(
                "subspace dimension {} must be in 1..={}",
                basis.ncols(),
                basis.nrows()
            )));
        }
        ensure_orthonormal(&basis, "basis")?;
        Ok(Self::LinearSubspace { basis })
    }

    pub fn sparsity(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPrior("sparsity level must be >= 1".into()));
        }
        Ok(Self::Sparsity {
            k,
            dictionary: None,
        })
    }

    /// Sparsity in an orthonormal dictionary. General (non-orthonormal)
    /// dictionaries are rejected: their exact projection is NP-hard.
    pub fn sparsity_in(k: usize, dictionary: DMatrix<T>) -> Result<Self> {
        if k == 0 || k > dictionary.ncols() {
            return Err(Error::InvalidPrior(format!(
                "sparsity level {k} must be in 1..={}",
                dictionary.ncols()
            )));
        }
        ensure_orthonormal(&dictionary, "dictionary")?;
        Ok(Self::Sparsity {
            k,
            dictionary: Some(dictionary),
        })
    }

    pub fn support(mask: Vec<bool>) -> Result<Self> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidPrior("support mask has no true entry".into()));
        }
        Ok(Self::Support { mask })
    }

    /// The full space, as a support prior.
    pub fn unconstrained(ambient_dim: usize) -> Result<Self> {
        Self::support(vec![true; ambient_dim])
    }

    /// Dimension of the prior set (subspace dimension, sparsity level or
    /// support size).
    pub fn dimension(&self) -> usize {
        match self {
            PriorSpec::LinearSubspace { basis } => basis.ncols(),
            PriorSpec::Sparsity { k, .. } => *k,
            PriorSpec::Support { mask } => mask.iter().filter(|&&m| m).count(),
        }
    }

    /// Ambient dimension the prior is tied to, if any.
    pub fn ambient_dim(&self) -> Option<usize> {
        match self {
            PriorSpec::LinearSubspace { basis } => Some(basis.nrows()),
            PriorSpec::Sparsity { dictionary, .. } => dictionary.as_ref().map(|d| d.nrows()),
            PriorSpec::Support { mask } => Some(mask.len()),
        }
    }

    pub fn basis(&self) -> Option<&DMatrix<T>> {
        match self {
            PriorSpec::LinearSubspace { basis } => Some(basis),
            _ => None,
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.ambient_dim() {
            Some(d) if d != dim => Err(Error::DimensionMismatch {
                context: "prior",
                expected: d,
                actual: dim,
            }),
            _ => match self {
                PriorSpec::Sparsity { k, dictionary: None } if *k > dim => Err(Error::InvalidPrior(format!(
                    "sparsity level {k} exceeds ambient dimension {dim}"
                ))),
                _ => Ok(()),
            },
        }
    }
}

/// Keeps the `k` largest-modulus entries; ties go to the lowest index.
fn hard_threshold<T: Scalar>(c: &DVector<T>, k: usize) -> DVector<T> {
    let mut order: Vec<usize> = (0..c.len()).collect();
    // stable sort keeps index order among equal magnitudes
    order.sort_by(|&a, &b| c[b].modulus().total_cmp(&c[a].modulus()));
    let mut out = DVector::zeros(c.len());
    for &i in order.iter().take(k) {
        out[i] = c[i];
    }
    out
}

pub fn project_prior<T: Scalar>(v: &DVector<T>, p: &PriorSpec<T>) -> Result<DVector<T>> {
    p.check_dim(v.len())?;
    Ok(match p {
        PriorSpec::LinearSubspace { basis } => basis * (basis.adjoint() * v),
        PriorSpec::Sparsity { k, dictionary: None } => hard_threshold(v, *k),
        PriorSpec::Sparsity {
            k,
            dictionary: Some(d),
        } => d * hard_threshold(&(d.adjoint() * v), *k),
        PriorSpec::Support { mask } => {
            DVector::from_iterator(v.len(), v.iter().zip(mask).map(|(&a, &m)| if m { a } else { T::zero() }))
        }
    })
}

impl<T: Scalar> Projector<T> for PriorSpec<T> {
    fn project(&self, v: &DVector<T>) -> Result<DVector<T>> {
        project_prior(v, self)
    }
}

/// Orthonormalized Gaussian `ambient_dim × m` basis.
pub fn random_subspace_prior<T: Scalar, R: Rng + ?Sized>(
    s: &RepresentationStructure,
    m: usize,
    rng: &mut R,
) -> Result<PriorSpec<T>> {
    s.check_field::<T>()?;
    let dim = s.ambient_dim();
    if m == 0 || m > dim {
        return Err(Error::InvalidPrior(format!(
            "subspace dimension {m} must be in 1..={dim}"
        )));
    }
    let gaussian = DMatrix::from_fn(dim, m, |_, _| T::standard_normal(rng));
    let scale = gaussian.norm() / (m as f64).sqrt();
    let qr = gaussian.qr();
    let r = qr.r();
    let pivot = (0..m).map(|i| r[(i, i)].modulus()).fold(f64::INFINITY, f64::min);
    if pivot <= 1e-10 * scale {
        return Err(Error::RankDeficient { pivot });
    }
    PriorSpec::linear_subspace(qr.q())
}
