//! Second moments of the MRA model and the Gram tuple they determine.
//!
//! Averaging `(g·x)(g·x)*` over the ambiguity group gives, by Schur's lemma,
//! a block-diagonal operator whose `(ℓ, i, j)` sub-block (row copy `i`,
//! column copy `j` of irrep `ℓ`) is `⟨x_ℓ[j], x_ℓ[i]⟩ / N_ℓ · I`. Taking the
//! trace of each sub-block recovers the Gram matrix `X_ℓ* X_ℓ` entrywise.
//!
//! # Noise convention
//!
//! Observation noise is added per real coordinate of the ambient vector with
//! standard deviation `σ`; for the complex field both the real and the
//! imaginary part of each coordinate get independent `N(0, σ²)` noise, so
//! the bias subtracted from `E[yy*]` is `σ²·I` (real) or `2σ²·I` (complex).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::linalg::{max_modulus, project_psd, sorted_eigen};
use crate::repr::{apply, decompose, haar_sample, BlockSignal, GroupAction, RepresentationStructure};
use crate::rng::stream_rng;
use crate::scalar::{Field, Scalar};
use crate::{Error, Result};

/// Observations per accumulation chunk. Chunk partial sums are reduced in
/// index order, so the result does not depend on the thread count.
const CHUNK: usize = 256;

/// Tuple of per-block Gram matrices `G_ℓ = X_ℓ* X_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTuple<T: Scalar> {
    structure: RepresentationStructure,
    grams: Vec<DMatrix<T>>,
}

impl<T: Scalar> GramTuple<T> {
    pub fn new(structure: RepresentationStructure, grams: Vec<DMatrix<T>>) -> Result<Self> {
        structure.check_field::<T>()?;
        if grams.len() != structure.num_blocks() {
            return Err(Error::DimensionMismatch {
                context: "gram count",
                expected: structure.num_blocks(),
                actual: grams.len(),
            });
        }
        for (b, g) in structure.blocks().iter().zip(&grams) {
            if g.shape() != (b.multiplicity, b.multiplicity) {
                return Err(Error::StructureMismatch(format!(
                    "gram matrix is {}x{}, expected {}x{}",
                    g.nrows(),
                    g.ncols(),
                    b.multiplicity,
                    b.multiplicity
                )));
            }
        }
        Ok(Self { structure, grams })
    }

    pub fn structure(&self) -> &RepresentationStructure {
        &self.structure
    }

    pub fn grams(&self) -> &[DMatrix<T>] {
        &self.grams
    }

    /// Total Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.grams.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }

    /// Total Frobenius distance to another tuple on the same structure.
    pub fn distance(&self, other: &Self) -> f64 {
        self.grams
            .iter()
            .zip(&other.grams)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Hermitian to `1e-10` and PSD with min eigenvalue `>= -1e-10·trace`.
    pub fn is_valid(&self) -> bool {
        self.grams.iter().all(|g| {
            let trace = g.trace().real().abs();
            let scale = max_modulus(g).max(1.0);
            let hermitian = max_modulus(&(g - g.adjoint())) <= 1e-10 * scale;
            let (values, _) = sorted_eigen(&crate::linalg::hermitian_part(g));
            hermitian && values.first().is_none_or(|&l| l >= -1e-10 * trace.max(f64::MIN_POSITIVE))
        })
    }

    /// Hermitian-symmetrizes every block and clamps it to the PSD cone.
    pub fn to_psd(&self) -> Self {
        Self {
            structure: self.structure.clone(),
            grams: self.grams.iter().map(project_psd).collect(),
        }
    }
}

/// A set of MRA observations `y_i = g_i·x + ε_i` in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MraSampleSet<T: Scalar> {
    structure: RepresentationStructure,
    observations: Vec<DVector<T>>,
    sigma: f64,
    master_seed: Option<u64>,
}

impl<T: Scalar> MraSampleSet<T> {
    /// Wraps explicit observations, e.g. an enumeration of a finite group.
    pub fn from_observations(
        structure: RepresentationStructure,
        observations: Vec<DVector<T>>,
        sigma: f64,
    ) -> Result<Self> {
        structure.check_field::<T>()?;
        if observations.is_empty() {
            return Err(Error::InvalidConfig("a sample set needs at least one observation".into()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise level must be >= 0, got {sigma}")));
        }
        let dim = structure.ambient_dim();
        if let Some(y) = observations.iter().find(|y| y.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "observation",
                expected: dim,
                actual: y.len(),
            });
        }
        Ok(Self {
            structure,
            observations,
            sigma,
            master_seed: None,
        })
    }

    pub fn structure(&self) -> &RepresentationStructure {
        &self.structure
    }

    pub fn observations(&self) -> &[DVector<T>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn master_seed(&self) -> Option<u64> {
        self.master_seed
    }
}

pub fn gram_tuple<T: Scalar>(x: &BlockSignal<T>) -> GramTuple<T> {
    let grams = x.matrices().iter().map(|m| m.adjoint() * m).collect();
    GramTuple {
        structure: x.structure().clone(),
        grams,
    }
}

/// Exact group average `∫ (g·x)(g·x)* dg` over the ambiguity group, in the
/// ambient layout.
pub fn analytic_second_moment<T: Scalar>(x: &BlockSignal<T>) -> DMatrix<T> {
    let s = x.structure();
    let dim = s.ambient_dim();
    let mut moment = DMatrix::zeros(dim, dim);
    for ((b, offset), m) in s.blocks().iter().zip(s.offsets()).zip(x.matrices()) {
        let n = b.irrep_dim;
        let gram = m.adjoint() * m;
        for i in 0..b.multiplicity {
            for j in 0..b.multiplicity {
                // sub-block (i, j) is x_i x_j* averaged: <x_j, x_i>/N = G[j, i]/N
                let c = gram[(j, i)].unscale(n as f64);
                for d in 0..n {
                    moment[(offset + i * n + d, offset + j * n + d)] = c;
                }
            }
        }
    }
    moment
}

/// Draws `n` observations `reconstruct(g_i·x) + ε_i`, one RNG stream per
/// observation.
pub fn sample_observations<T: Scalar>(
    x: &BlockSignal<T>,
    action: GroupAction,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<MraSampleSet<T>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let s = x.structure();
    action.check(s)?;
    let observations = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let g = haar_sample::<T, _>(action, s, &mut rng)?;
            let mut y = apply(&g, x)?.reconstruct();
            if sigma > 0.0 {
                y.iter_mut()
                    .for_each(|v| *v += T::standard_normal(&mut rng) * T::from_real(sigma));
            }
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = MraSampleSet::from_observations(s.clone(), observations, sigma)?;
    set.master_seed = Some(seed);
    Ok(set)
}

/// Noise bias `E[εε*]` as a multiple of the identity.
pub fn noise_bias(field: Field, sigma: f64) -> f64 {
    field.real_dim() as f64 * sigma * sigma
}

/// Debiased empirical second moment `(1/n) Σ y_i y_i* - bias·I`.
pub fn empirical_second_moment<T: Scalar>(samples: &MraSampleSet<T>) -> DMatrix<T> {
    let dim = samples.structure().ambient_dim();
    let partials: Vec<DMatrix<T>> = samples
        .observations()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = DMatrix::zeros(dim, dim);
            for y in chunk {
                acc.gerc(T::one(), y, y, T::one());
            }
            acc
        })
        .collect();
    let mut moment = partials
        .into_iter()
        .fold(DMatrix::zeros(dim, dim), |acc, p| acc + p);
    moment.unscale_mut(samples.len() as f64);
    let bias = noise_bias(samples.structure().field(), samples.sigma());
    for d in 0..dim {
        moment[(d, d)] -= T::from_real(bias);
    }
    moment
}

/// Gram tuple from an ambient second-moment matrix by sub-block traces.
///
/// The result is Hermitian-symmetrized and clamped to the PSD cone; exact
/// moments pass through unchanged.
pub fn extract_gram<T: Scalar>(moment: &DMatrix<T>, s: &RepresentationStructure) -> Result<GramTuple<T>> {
    s.check_field::<T>()?;
    let dim = s.ambient_dim();
    if moment.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            context: "second moment",
            expected: dim,
            actual: if moment.nrows() != dim {
                moment.nrows()
            } else {
                moment.ncols()
            },
        });
    }
    let grams = s
        .blocks()
        .iter()
        .zip(s.offsets())
        .map(|(b, offset)| {
            let n = b.irrep_dim;
            let g = DMatrix::from_fn(b.multiplicity, b.multiplicity, |i, j| {
                // G[i, j] = <x_i, x_j> is the trace of sub-block (j, i)
                (0..n).fold(T::zero(), |acc, d| acc + moment[(offset + j * n + d, offset + i * n + d)])
            });
            project_psd(&g)
        })
        .collect();
    GramTuple::new(s.clone(), grams)
}

/// Splits an ambient vector into blocks; convenience re-export for callers
/// working with raw observations.
pub fn observation_signal<T: Scalar>(y: &DVector<T>, s: &RepresentationStructure) -> Result<BlockSignal<T>> {
    decompose(y.as_slice(), s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{
        cyclic_element, cyclic_shift, decompose_cyclic_complex, decompose_cyclic_real,
        random_signal, reconstruct_cyclic_complex, GroupElement,
    };
    use crate::rng::stream_rng;
    use num_complex::Complex64;

    fn real_block(rows: usize, cols: usize, data: &[f64]) -> BlockSignal<f64> {
        let s = RepresentationStructure::real([(rows, cols)]).unwrap();
        BlockSignal::new(s, vec![DMatrix::from_row_slice(rows, cols, data)]).unwrap()
    }

    #[test]
    fn gram_of_orthonormal_columns_is_identity() {
        let x = real_block(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(gram_tuple(&x).grams()[0], DMatrix::identity(2, 2));
    }

    #[test]
    fn gram_by_hand() {
        let x = real_block(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(
            gram_tuple(&x).grams()[0],
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0])
        );
    }

    #[test]
    fn complex_cyclic_gram_is_power_spectrum() {
        let mut rng = stream_rng(4, 0);
        let x: Vec<Complex64> = (0..16).map(|_| Complex64::standard_normal(&mut rng)).collect();
        let xs = decompose_cyclic_complex(&x).unwrap();
        let grams = gram_tuple(&xs);
        for (g, m) in grams.grams().iter().zip(xs.matrices()) {
            assert!((g[0] - Complex64::new(m[0].norm_sqr(), 0.0)).norm() < 1e-12);
        }
        let via_moment = extract_gram(&analytic_second_moment(&xs), xs.structure()).unwrap();
        for (g, m) in via_moment.grams().iter().zip(xs.matrices()) {
            assert!((g[0].re - m[0].norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_moment() {
        let x = real_block(1, 1, &[-3.0]);
        assert_eq!(analytic_second_moment(&x), DMatrix::from_element(1, 1, 9.0));
    }

    #[test]
    fn unit_vector_moment_is_half_identity() {
        let x = real_block(2, 1, &[1.0, 0.0]);
        let m = analytic_second_moment(&x);
        assert!((m - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        let g = extract_gram(&(DMatrix::identity(2, 2) * 0.5), x.structure()).unwrap();
        assert!((g.grams()[0][(0, 0)] - 1.0).abs() < 1e-15);
    }

    fn finite_group_average<T: Scalar>(x: &BlockSignal<T>, n: usize) -> DMatrix<T> {
        let dim = x.structure().ambient_dim();
        let mut avg = DMatrix::zeros(dim, dim);
        for shift in 0..n {
            let g = cyclic_element::<T>(n, shift).unwrap();
            let y = apply(&g, x).unwrap().reconstruct();
            avg += &y * y.adjoint();
        }
        avg.unscale(n as f64)
    }

    #[test]
    fn analytic_moment_matches_finite_group_average() {
        let mut rng = stream_rng(8, 8);
        let xc: Vec<Complex64> = (0..4).map(|_| Complex64::standard_normal(&mut rng)).collect();
        let xs = decompose_cyclic_complex(&xc).unwrap();
        let diff = analytic_second_moment(&xs) - finite_group_average(&xs, 4);
        assert!(max_modulus(&diff) < 1e-12);

        let xr: Vec<f64> = (0..8).map(|_| f64::standard_normal(&mut rng)).collect();
        let xs = decompose_cyclic_real(&xr).unwrap();
        let diff = analytic_second_moment(&xs) - finite_group_average(&xs, 8);
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn extract_inverts_analytic_moment() {
        let s = RepresentationStructure::real([(8, 4)]).unwrap();
        let mut rng = stream_rng(1, 2);
        for _ in 0..20 {
            let x = random_signal::<f64, _>(&s, &mut rng).unwrap();
            let g = extract_gram(&analytic_second_moment(&x), &s).unwrap();
            assert!(g.distance(&gram_tuple(&x)) < 1e-12 * gram_tuple(&x).norm().max(1.0));
        }
        let sc = RepresentationStructure::complex([(3, 2), (2, 2)]).unwrap();
        let x = random_signal::<Complex64, _>(&sc, &mut rng).unwrap();
        let g = extract_gram(&analytic_second_moment(&x), &sc).unwrap();
        assert!(g.distance(&gram_tuple(&x)) < 1e-12);
    }

    #[test]
    fn extract_clamps_noisy_input() {
        let s = RepresentationStructure::real([(1, 2)]).unwrap();
        let moment = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let g = extract_gram(&moment, &s).unwrap();
        assert!(g.is_valid());
        let (values, _) = sorted_eigen(&g.grams()[0]);
        assert!(values[0].abs() < 1e-12);
        assert!((values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn extract_rejects_wrong_dimension() {
        let s = RepresentationStructure::real([(2, 2)]).unwrap();
        assert!(matches!(
            extract_gram(&DMatrix::<f64>::zeros(3, 3), &s),
            Err(Error::DimensionMismatch { expected: 4, .. })
        ));
    }

    #[test]
    fn noiseless_cyclic_samples_are_shifts() {
        let mut rng = stream_rng(2, 0);
        let x: Vec<Complex64> = (0..6).map(|_| Complex64::standard_normal(&mut rng)).collect();
        let xs = decompose_cyclic_complex(&x).unwrap();
        let set = sample_observations(&xs, GroupAction::Cyclic { n: 6 }, 0.0, 50, 3).unwrap();
        for y in set.observations() {
            let ys = observation_signal(y, xs.structure()).unwrap();
            let time = reconstruct_cyclic_complex(&ys).unwrap();
            let matched = (0..6).any(|s| {
                cyclic_shift(&x, s)
                    .iter()
                    .zip(&time)
                    .all(|(a, b)| (a - b).norm() < 1e-12)
            });
            assert!(matched);
        }
    }

    #[test]
    fn trivial_group_returns_signal() {
        let s = RepresentationStructure::cyclic(1, Field::Real).unwrap();
        let x = decompose(&[2.0], &s).unwrap();
        let set = sample_observations(&x, GroupAction::Cyclic { n: 1 }, 0.0, 5, 0).unwrap();
        assert!(set.observations().iter().all(|y| y[0] == 2.0));
        assert_eq!(empirical_second_moment(&set), DMatrix::from_element(1, 1, 4.0));
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = RepresentationStructure::real([(3, 2)]).unwrap();
        let x = random_signal::<f64, _>(&s, &mut stream_rng(0, 0)).unwrap();
        let a = sample_observations(&x, GroupAction::FullAmbiguity, 0.3, 300, 42).unwrap();
        let b = sample_observations(&x, GroupAction::FullAmbiguity, 0.3, 300, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.master_seed(), Some(42));
    }

    #[test]
    fn enumerated_shifts_give_exact_moment() {
        let mut rng = stream_rng(6, 1);
        let x: Vec<Complex64> = (0..5).map(|_| Complex64::standard_normal(&mut rng)).collect();
        let xs = decompose_cyclic_complex(&x).unwrap();
        let obs = (0..5)
            .map(|s| {
                apply(&cyclic_element::<Complex64>(5, s).unwrap(), &xs)
                    .unwrap()
                    .reconstruct()
            })
            .collect();
        let set = MraSampleSet::from_observations(xs.structure().clone(), obs, 0.0).unwrap();
        let diff = empirical_second_moment(&set) - analytic_second_moment(&xs);
        assert!(max_modulus(&diff) < 1e-12);
    }

    #[test]
    fn empirical_moment_improves_with_samples() {
        let s = RepresentationStructure::real([(3, 2)]).unwrap();
        let x = random_signal::<f64, _>(&s, &mut stream_rng(1, 0)).unwrap();
        let truth = analytic_second_moment(&x);
        let median = |n: usize| {
            let mut errs: Vec<f64> = (0..20)
                .map(|seed| {
                    let set = sample_observations(&x, GroupAction::FullAmbiguity, 0.5, n, seed).unwrap();
                    (empirical_second_moment(&set) - &truth).norm()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            (errs[9] + errs[10]) / 2.0
        };
        assert!(median(10_000) < median(100));
    }

    #[test]
    fn gram_is_group_invariant() {
        let s = RepresentationStructure::complex([(3, 2), (1, 3)]).unwrap();
        let mut rng = stream_rng(12, 0);
        for _ in 0..100 {
            let x = random_signal::<Complex64, _>(&s, &mut rng).unwrap();
            let g: GroupElement<Complex64> =
                haar_sample(GroupAction::FullAmbiguity, &s, &mut rng).unwrap();
            let lhs = gram_tuple(&apply(&g, &x).unwrap());
            assert!(lhs.distance(&gram_tuple(&x)) < 1e-10);
            assert!(lhs.is_valid());
        }
    }

    #[test]
    fn complex_noise_bias_is_twice_sigma_squared() {
        assert_eq!(noise_bias(Field::Real, 0.5), 0.25);
        assert_eq!(noise_bias(Field::Complex, 0.5), 0.5);
        let s = RepresentationStructure::complex([(1, 1)]).unwrap();
        let x = BlockSignal::<Complex64>::zeros(&s).unwrap();
        let set = sample_observations(&x, GroupAction::FullAmbiguity, 1.0, 20_000, 9).unwrap();
        let m = empirical_second_moment(&set);
        assert!(m[(0, 0)].norm() < 0.05, "{}", m[(0, 0)]);
    }
}
