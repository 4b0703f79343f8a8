//! Representation block structures, block-decomposed signals and the action
//! of the ambiguity group on them.
//!
//! A representation `V = ⊕ V_ℓ^{⊕R_ℓ}` is described by its list of blocks
//! `(N_ℓ, R_ℓ)`. A signal is stored as one `N_ℓ × R_ℓ` coefficient matrix per
//! block, column `i` holding the component in the `i`-th copy of `V_ℓ`.
//!
//! # Ambient layout
//!
//! The ambient vector concatenates the blocks in order `ℓ = 1..L`; each block
//! is written column-major, so the `R_ℓ` copies are contiguous runs of
//! length `N_ℓ`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::linalg::max_modulus;
use crate::scalar::{Field, Scalar};
use crate::{Error, Result};

/// One isotypic block: irreducible dimension `N_ℓ` and multiplicity `R_ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Block {
    pub irrep_dim: usize,
    pub multiplicity: usize,
}

impl Block {
    pub fn new(irrep_dim: usize, multiplicity: usize) -> Self {
        Self {
            irrep_dim,
            multiplicity,
        }
    }

    pub fn len(&self) -> usize {
        self.irrep_dim * self.multiplicity
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<(usize, usize)> for Block {
    fn from((n, r): (usize, usize)) -> Self {
        Block::new(n, r)
    }
}

impl From<Block> for (usize, usize) {
    fn from(b: Block) -> Self {
        (b.irrep_dim, b.multiplicity)
    }
}

#[derive(Deserialize)]
struct RawStructure {
    #[serde(default)]
    field: Field,
    blocks: Vec<Block>,
}

/// Decomposition of the ambient space into irreducible blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStructure")]
pub struct RepresentationStructure {
    field: Field,
    blocks: Vec<Block>,
}

impl TryFrom<RawStructure> for RepresentationStructure {
    type Error = Error;

    fn try_from(raw: RawStructure) -> Result<Self> {
        RepresentationStructure::new(raw.field, raw.blocks)
    }
}

impl RepresentationStructure {
    pub fn new(field: Field, blocks: impl IntoIterator<Item = impl Into<Block>>) -> Result<Self> {
        let blocks: Vec<Block> = blocks.into_iter().map(Into::into).collect();
        if blocks.is_empty() {
            return Err(Error::InvalidStructure("at least one block is required".into()));
        }
        if let Some(b) = blocks.iter().find(|b| b.irrep_dim == 0 || b.multiplicity == 0) {
            return Err(Error::InvalidStructure(format!(
                "block ({}, {}) has a zero dimension",
                b.irrep_dim, b.multiplicity
            )));
        }
        Ok(Self { field, blocks })
    }

    pub fn real(blocks: impl IntoIterator<Item = impl Into<Block>>) -> Result<Self> {
        Self::new(Field::Real, blocks)
    }

    pub fn complex(blocks: impl IntoIterator<Item = impl Into<Block>>) -> Result<Self> {
        Self::new(Field::Complex, blocks)
    }

    /// Fourier-domain structure of the cyclic group `Z_n` acting by shifts.
    ///
    /// Complex field: `n` one-dimensional blocks, one per frequency.
    /// Real field: conjugate frequencies are paired into 2-dimensional real
    /// irreps; frequency 0 (and `n/2` for even `n`) stays 1-dimensional.
    pub fn cyclic(n: usize, field: Field) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidStructure("cyclic group order must be >= 1".into()));
        }
        let blocks = match field {
            Field::Complex => vec![Block::new(1, 1); n],
            Field::Real => cyclic_real_frequencies(n)
                .into_iter()
                .map(|k| Block::new(if 2 * k == n || k == 0 { 1 } else { 2 }, 1))
                .collect(),
        };
        Self::new(field, blocks)
    }

    /// Abstract cryo-EM block configuration: `N_ℓ = 2ℓ + 1` for
    /// `ℓ = 0..=bandlimit`, each with multiplicity `radial_samples`.
    pub fn cryo_em(bandlimit: usize, radial_samples: usize, field: Field) -> Result<Self> {
        Self::new(field, (0..=bandlimit).map(|l| Block::new(2 * l + 1, radial_samples)))
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    /// Starting offset of each block in the ambient layout.
    pub fn offsets(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(0, |acc, b| {
                let start = *acc;
                *acc += b.len();
                Some(start)
            })
            .collect()
    }

    pub(crate) fn check_field<T: Scalar>(&self) -> Result<()> {
        if self.field != T::FIELD {
            return Err(Error::StructureMismatch(format!(
                "structure field is {} but scalars are {}",
                self.field,
                T::FIELD
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &Self) -> Result<()> {
        if self != other {
            return Err(Error::StructureMismatch(format!("{self} vs {other}")));
        }
        Ok(())
    }
}

impl fmt::Display for RepresentationStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{ field: \"{}\", blocks: [", self.field)?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "[{},{}]", b.irrep_dim, b.multiplicity)?;
        }
        f.write_str("] }")
    }
}

/// Frequencies carried by the real cyclic structure, in block order.
fn cyclic_real_frequencies(n: usize) -> Vec<usize> {
    (0..=n / 2).collect()
}

/// A signal as its tuple of block coefficient matrices `X_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSignal<T: Scalar> {
    structure: RepresentationStructure,
    matrices: Vec<DMatrix<T>>,
}

impl<T: Scalar> BlockSignal<T> {
    pub fn new(structure: RepresentationStructure, matrices: Vec<DMatrix<T>>) -> Result<Self> {
        structure.check_field::<T>()?;
        if matrices.len() != structure.num_blocks() {
            return Err(Error::DimensionMismatch {
                context: "block count",
                expected: structure.num_blocks(),
                actual: matrices.len(),
            });
        }
        for (b, m) in structure.blocks().iter().zip(&matrices) {
            if m.shape() != (b.irrep_dim, b.multiplicity) {
                return Err(Error::StructureMismatch(format!(
                    "block matrix is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    b.irrep_dim,
                    b.multiplicity
                )));
            }
        }
        Ok(Self {
            structure,
            matrices,
        })
    }

    pub fn zeros(structure: &RepresentationStructure) -> Result<Self> {
        let matrices = structure
            .blocks()
            .iter()
            .map(|b| DMatrix::zeros(b.irrep_dim, b.multiplicity))
            .collect();
        Self::new(structure.clone(), matrices)
    }

    pub fn structure(&self) -> &RepresentationStructure {
        &self.structure
    }

    pub fn matrices(&self) -> &[DMatrix<T>] {
        &self.matrices
    }

    pub fn into_matrices(self) -> Vec<DMatrix<T>> {
        self.matrices
    }

    pub fn block(&self, l: usize) -> &DMatrix<T> {
        &self.matrices[l]
    }

    /// Total Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| m.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, a: f64) -> Self {
        let matrices = self
            .matrices
            .iter()
            .map(|m| m.map(|z| z * T::from_real(a)))
            .collect();
        Self {
            structure: self.structure.clone(),
            matrices,
        }
    }

    /// Flattens into the ambient layout.
    pub fn reconstruct(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.structure.ambient_dim());
        let mut offset = 0;
        for m in &self.matrices {
            // nalgebra storage is column-major, matching the ambient layout
            v.rows_mut(offset, m.len())
                .copy_from_slice(m.as_slice());
            offset += m.len();
        }
        v
    }
}

/// Splits an ambient vector into block coefficient matrices.
pub fn decompose<T: Scalar>(v: &[T], s: &RepresentationStructure) -> Result<BlockSignal<T>> {
    if v.len() != s.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "ambient vector",
            expected: s.ambient_dim(),
            actual: v.len(),
        });
    }
    let mut offset = 0;
    let matrices = s
        .blocks()
        .iter()
        .map(|b| {
            let m = DMatrix::from_column_slice(b.irrep_dim, b.multiplicity, &v[offset..offset + b.len()]);
            offset += b.len();
            m
        })
        .collect();
    BlockSignal::new(s.clone(), matrices)
}

fn unitary_dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let mut buf = x.to_vec();
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

/// Unitary DFT of a complex signal as `n` one-dimensional blocks.
pub fn decompose_cyclic_complex(x: &[Complex64]) -> Result<BlockSignal<Complex64>> {
    let s = RepresentationStructure::cyclic(x.len(), Field::Complex)?;
    decompose(&unitary_dft(x, false), &s)
}

/// Inverse of [`decompose_cyclic_complex`].
pub fn reconstruct_cyclic_complex(x: &BlockSignal<Complex64>) -> Result<Vec<Complex64>> {
    let n = x.structure().num_blocks();
    x.structure()
        .ensure_same(&RepresentationStructure::cyclic(n, Field::Complex)?)?;
    Ok(unitary_dft(x.reconstruct().as_slice(), true))
}

/// Real-irrep Fourier decomposition of a real signal.
///
/// A frequency `0 < k < n/2` becomes the 2-vector `√2·(Re X_k, Im X_k)`, which
/// keeps the map orthogonal.
pub fn decompose_cyclic_real(x: &[f64]) -> Result<BlockSignal<f64>> {
    let n = x.len();
    let s = RepresentationStructure::cyclic(n, Field::Real)?;
    let spectrum = unitary_dft(
        &x.iter().map(|&a| Complex64::new(a, 0.0)).collect::<Vec<_>>(),
        false,
    );
    let mut ambient = Vec::with_capacity(n);
    for k in cyclic_real_frequencies(n) {
        if k == 0 || 2 * k == n {
            ambient.push(spectrum[k].re);
        } else {
            ambient.push(std::f64::consts::SQRT_2 * spectrum[k].re);
            ambient.push(std::f64::consts::SQRT_2 * spectrum[k].im);
        }
    }
    decompose(&ambient, &s)
}

/// Inverse of [`decompose_cyclic_real`].
pub fn reconstruct_cyclic_real(x: &BlockSignal<f64>) -> Result<Vec<f64>> {
    let s = x.structure();
    let n = s.ambient_dim();
    s.ensure_same(&RepresentationStructure::cyclic(n, Field::Real)?)?;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for (k, m) in cyclic_real_frequencies(n).into_iter().zip(x.matrices()) {
        if m.nrows() == 1 {
            spectrum[k] = Complex64::new(m[0], 0.0);
        } else {
            let z = Complex64::new(m[0], m[1]) / std::f64::consts::SQRT_2;
            spectrum[k] = z;
            spectrum[n - k] = z.conj();
        }
    }
    Ok(unitary_dft(&spectrum, true).into_iter().map(|z| z.re).collect())
}

/// Cyclic shift `y[m] = x[(m - shift) mod n]`.
pub fn cyclic_shift<T: Copy>(x: &[T], shift: usize) -> Vec<T> {
    let n = x.len();
    (0..n).map(|m| x[(m + n - shift % n) % n]).collect()
}

/// An element of the ambiguity group `∏ O(N_ℓ)` or `∏ U(N_ℓ)`, one matrix per
/// block acting on the left of `X_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement<T: Scalar> {
    blocks: Vec<DMatrix<T>>,
}

impl<T: Scalar> GroupElement<T> {
    pub fn new(blocks: Vec<DMatrix<T>>) -> Result<Self> {
        if let Some(m) = blocks.iter().find(|m| !m.is_square()) {
            return Err(Error::StructureMismatch(format!(
                "group block must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { blocks })
    }

    pub fn identity(s: &RepresentationStructure) -> Self {
        Self {
            blocks: s
                .blocks()
                .iter()
                .map(|b| DMatrix::identity(b.irrep_dim, b.irrep_dim))
                .collect(),
        }
    }

    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }

    /// Blockwise product `self · other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::DimensionMismatch {
                context: "group element block count",
                expected: self.blocks.len(),
                actual: other.blocks.len(),
            });
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                if a.shape() != b.shape() {
                    return Err(Error::StructureMismatch("group block shapes differ".into()));
                }
                Ok(a * b)
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    /// Max entry deviation of `D*D` from the identity over all blocks.
    pub fn unitarity_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|d| {
                let n = d.nrows();
                max_modulus(&(d.adjoint() * d - DMatrix::<T>::identity(n, n)))
            })
            .fold(0.0, f64::max)
    }

    pub fn fits(&self, s: &RepresentationStructure) -> bool {
        self.blocks.len() == s.num_blocks()
            && self
                .blocks
                .iter()
                .zip(s.blocks())
                .all(|(d, b)| d.nrows() == b.irrep_dim)
    }
}

/// Group acting on a structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAction {
    /// `Z_n` acting by cyclic shifts, seen in the Fourier domain.
    Cyclic { n: usize },
    /// Haar measure on the full ambiguity group `∏ O(N_ℓ)` / `∏ U(N_ℓ)`.
    ///
    /// The Gram data of the second moment depends only on the block
    /// decomposition, so this stands in for any compact group with the same
    /// isotypic structure.
    FullAmbiguity,
}

impl GroupAction {
    pub fn check(&self, s: &RepresentationStructure) -> Result<()> {
        match *self {
            GroupAction::Cyclic { n } => {
                s.ensure_same(&RepresentationStructure::cyclic(n, s.field())?)
            }
            GroupAction::FullAmbiguity => Ok(()),
        }
    }
}

/// Fourier-diagonal element corresponding to a cyclic shift by `shift`.
pub fn cyclic_element<T: Scalar>(n: usize, shift: usize) -> Result<GroupElement<T>> {
    let s = RepresentationStructure::cyclic(n, T::FIELD)?;
    let angle = |k: usize| 2.0 * PI * ((k * shift) % n) as f64 / n as f64;
    let blocks = match T::FIELD {
        Field::Complex => (0..n)
            .map(|k| {
                let z = Complex64::from_polar(1.0, -angle(k));
                DMatrix::from_element(1, 1, T::from_c64(z))
            })
            .collect(),
        Field::Real => cyclic_real_frequencies(n)
            .into_iter()
            .zip(s.blocks())
            .map(|(k, b)| {
                if b.irrep_dim == 1 {
                    let sign = if k == 0 || shift.is_multiple_of(2) { 1.0 } else { -1.0 };
                    DMatrix::from_element(1, 1, T::from_real(sign))
                } else {
                    // multiplication of (Re, Im) by e^{-iθ}
                    let (sin, cos) = angle(k).sin_cos();
                    DMatrix::from_row_slice(
                        2,
                        2,
                        &[
                            T::from_real(cos),
                            T::from_real(sin),
                            T::from_real(-sin),
                            T::from_real(cos),
                        ],
                    )
                }
            })
            .collect(),
    };
    GroupElement::new(blocks)
}

/// Haar-distributed `n × n` orthogonal/unitary matrix: QR of a Gaussian
/// matrix with the phases of `diag(R)` moved into `Q`.
pub fn haar_matrix<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<T> {
    let a = DMatrix::<T>::from_fn(n, n, |_, _| T::standard_normal(rng));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let rjj = r[(j, j)];
        let modulus = rjj.modulus();
        if modulus > 0.0 {
            let phase = rjj.unscale(modulus);
            q.column_mut(j).iter_mut().for_each(|z| *z *= phase);
        }
    }
    q
}

/// Draws a Haar-random element of the given action.
pub fn haar_sample<T: Scalar, R: Rng + ?Sized>(
    action: GroupAction,
    s: &RepresentationStructure,
    rng: &mut R,
) -> Result<GroupElement<T>> {
    s.check_field::<T>()?;
    action.check(s)?;
    match action {
        GroupAction::Cyclic { n } => cyclic_element(n, rng.random_range(0..n)),
        GroupAction::FullAmbiguity => GroupElement::new(
            s.blocks()
                .iter()
                .map(|b| haar_matrix(b.irrep_dim, rng))
                .collect(),
        ),
    }
}

/// Left action `(g·x)_ℓ = D_ℓ X_ℓ`.
pub fn apply<T: Scalar>(g: &GroupElement<T>, x: &BlockSignal<T>) -> Result<BlockSignal<T>> {
    if !g.fits(x.structure()) {
        return Err(Error::StructureMismatch(
            "group element does not match the signal structure".into(),
        ));
    }
    let matrices = g
        .blocks()
        .iter()
        .zip(x.matrices())
        .map(|(d, m)| d * m)
        .collect();
    BlockSignal::new(x.structure().clone(), matrices)
}

/// Signal with i.i.d. standard normal entries.
pub fn random_signal<T: Scalar, R: Rng + ?Sized>(
    s: &RepresentationStructure,
    rng: &mut R,
) -> Result<BlockSignal<T>> {
    let matrices = s
        .blocks()
        .iter()
        .map(|b| DMatrix::from_fn(b.irrep_dim, b.multiplicity, |_, _| T::standard_normal(rng)))
        .collect();
    BlockSignal::new(s.clone(), matrices)
}
