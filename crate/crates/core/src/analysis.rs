//! Empirical checks of uniqueness and stability.
//!
//! * [`effective_dimension`] evaluates `K = dim V − k(H)` in closed form and
//!   [`orbit_dimension_estimate`] measures the orbit dimension numerically.
//! * [`transversality_check`] searches a grid over the ambiguity group for an
//!   element moving a subspace point back into the subspace.
//! * [`distortion_estimate`] samples the ratio between the square-root Gram
//!   distance and the sign-resolved distance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::io::CsvTable;
use crate::linalg::max_modulus;
use crate::moments::gram_tuple;
use crate::priors::PriorSpec;
use crate::repr::{apply, decompose, random_signal, BlockSignal, GroupElement, RepresentationStructure};
use crate::rng::stream_rng;
use crate::scalar::{Field, Scalar};
use crate::solvers::{matrix_sqrt_psd, rho};
use crate::{Error, Result};

fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Effective dimension `K` and generic orbit dimension `k(H)`, both counted
/// over the reals.
///
/// The generic stabilizer of a full-rank `N × R` block is `O(N − R)` (or
/// `U(N − R)`), so `k(H) = Σ dim O(N) − dim O(max(N − R, 0))`.
pub fn effective_dimension(s: &RepresentationStructure) -> (usize, usize) {
    let (real_dim, kh) = s.blocks().iter().fold((0, 0), |(d, kh), b| {
        let (n, r) = (b.irrep_dim, b.multiplicity);
        let free = n.saturating_sub(r);
        match s.field() {
            Field::Real => (d + n * r, kh + choose2(n) - choose2(free)),
            Field::Complex => (d + 2 * n * r, kh + n * n - free * free),
        }
    });
    (real_dim - kh, kh)
}

/// Basis of the Lie algebra `o(n)` (real) or `u(n)` (complex).
fn lie_algebra_basis<T: Scalar>(n: usize) -> Vec<DMatrix<T>> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut a = DMatrix::zeros(n, n);
            a[(i, j)] = T::one();
            a[(j, i)] = -T::one();
            out.push(a);
        }
    }
    if T::FIELD == Field::Complex {
        let i_unit = T::from_c64(num_complex::Complex64::i());
        for i in 0..n {
            for j in i..n {
                let mut a = DMatrix::zeros(n, n);
                a[(i, j)] = i_unit;
                a[(j, i)] = i_unit;
                out.push(a);
            }
        }
    }
    out
}

/// Cayley transform `(I − A/2)⁻¹(I + A/2)`, orthogonal/unitary for skew `A`.
fn cayley<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let half = a.unscale(2.0);
    let id = DMatrix::<T>::identity(n, n);
    (&id - &half)
        .lu()
        .solve(&(&id + &half))
        .expect("I − A/2 is invertible for skew A")
}

fn real_coordinates<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    match T::FIELD {
        Field::Real => v.iter().map(|z| z.real()).collect(),
        Field::Complex => v.iter().flat_map(|z| [z.real(), z.imaginary()]).collect(),
    }
}

/// Numerical dimension of the orbit `H·x` at a random point, from central
/// finite differences along each Lie algebra generator.
pub fn orbit_dimension_estimate<T: Scalar, R: Rng + ?Sized>(
    s: &RepresentationStructure,
    rng: &mut R,
) -> Result<usize> {
    let x = random_signal::<T, _>(s, rng)?;
    let t = 1e-5;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (l, b) in s.blocks().iter().enumerate() {
        for a in lie_algebra_basis::<T>(b.irrep_dim) {
            let moved = |scale: f64| -> Result<DVector<T>> {
                let mut blocks: Vec<DMatrix<T>> = s
                    .blocks()
                    .iter()
                    .map(|b| DMatrix::identity(b.irrep_dim, b.irrep_dim))
                    .collect();
                blocks[l] = cayley(&a.scale(scale));
                Ok(apply(&GroupElement::new(blocks)?, &x)?.reconstruct())
            };
            let diff = (moved(t)? - moved(-t)?).unscale(2.0 * t);
            columns.push(real_coordinates(&diff));
        }
    }
    if columns.is_empty() {
        return Ok(0);
    }
    let rows = columns[0].len();
    let m = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    Ok(sv.iter().filter(|&&v| v > 1e-6 * top.max(1e-300)).count())
}

/// One ambiguity-group grid element on a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "angle")]
pub enum GridElement {
    Identity,
    Negation,
    Rotation(f64),
    Reflection(f64),
}

impl GridElement {
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match *self {
            GridElement::Identity => DMatrix::identity(n, n),
            GridElement::Negation => -DMatrix::identity(n, n),
            GridElement::Rotation(t) => DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]),
            GridElement::Reflection(t) => DMatrix::from_row_slice(2, 2, &[t.cos(), t.sin(), t.sin(), -t.cos()]),
        }
    }
}

/// Grid over `O(1) = {±1}` or `O(2)` = rotations ∪ reflections at `steps`
/// uniform angles.
fn block_grid(n: usize, steps: usize) -> Vec<GridElement> {
    match n {
        1 => vec![GridElement::Identity, GridElement::Negation],
        _ => {
            let angle = |j: usize| 2.0 * std::f64::consts::PI * j as f64 / steps as f64;
            (0..steps)
                .map(|j| GridElement::Rotation(angle(j)))
                .chain((0..steps).map(|j| GridElement::Reflection(angle(j))))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub point: Vec<f64>,
    pub element: Vec<GridElement>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalityReport {
    pub k_effective: usize,
    pub m_dim: usize,
    pub samples_checked: usize,
    /// `+∞` when every grid element was excluded as `±identity` on `x`.
    pub worst_margin: f64,
    pub threshold: f64,
    pub grid_step: f64,
    pub nodes_visited: u64,
    pub violations: Vec<Violation>,
}

/// Parameters of the grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Angular grid step for `O(2)` blocks.
    pub step: f64,
    /// Radius `τ`, relative to `‖x‖`, of the penalized neighborhoods of `±x`
    /// in the subspace.
    pub exclusion: f64,
    /// Maximum number of search cells visited per point.
    pub node_budget: u64,
}

impl GridOptions {
    pub const DEFAULT_EXCLUSION: f64 = 0.5;
    pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            exclusion: Self::DEFAULT_EXCLUSION,
            node_budget: Self::DEFAULT_NODE_BUDGET,
        }
    }

    fn steps(&self) -> Result<usize> {
        let steps = (2.0 * std::f64::consts::PI / self.step).round();
        if !(self.step > 0.0 && (4.0..=1e7).contains(&steps)) {
            return Err(Error::InvalidConfig(format!("grid step {} out of range", self.step)));
        }
        if !(self.exclusion > 0.0 && self.exclusion < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "exclusion radius must be in (0, 1), got {}",
                self.exclusion
            )));
        }
        Ok(steps as usize)
    }

    /// Violation threshold, ten grid steps.
    pub fn threshold(&self) -> f64 {
        10.0 * self.step
    }
}

/// Elements with `min ‖h·x ∓ x‖ < EXCLUDED_TOL·‖x‖` act as `±identity` on `x`.
pub const EXCLUDED_TOL: f64 = 1e-9;
const MIN_HALF_WIDTH: f64 = 1e-10;
/// Grids up to this size are enumerated directly.
const SMALL_GRID: f64 = 4096.0;
/// Largest candidate set enumerated to settle a search cell.
const COVER_LIMIT: usize = 64;
/// Margins are resolved to this fraction of the grid step.
const MARGIN_RESOLUTION: f64 = 1e-2;

struct BlockGeom {
    n: usize,
    x: DMatrix<f64>,
    x_norm2: f64,
    offset: usize,
    len: usize,
    /// Spectral norm of the basis rows of this block.
    lip: f64,
}

/// `(a, b, element)`: the family value at angle `θ` is `a cos θ + b sin θ`.
type Family = (f64, f64, fn(f64) -> GridElement);

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    element: GridElement,
}

struct PointSearch<'a> {
    blocks: Vec<BlockGeom>,
    basis: &'a DMatrix<f64>,
    x: &'a DVector<f64>,
    cx: DVector<f64>,
    tau: f64,
    steps: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PointSearch<'_> {
    fn angle(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * j as f64 / self.steps as f64
    }

    /// Grid elements nearest to the continuous optimum on one block, sorted
    /// by `‖g X − Z‖²`, and a lower bound on the value of every element not
    /// listed.
    fn ranked(&self, b: &BlockGeom, z: &[f64]) -> (Vec<Candidate>, f64) {
        let z_norm2: f64 = z.iter().map(|a| a * a).sum();
        let value = |ip: f64| (b.x_norm2 + z_norm2 - 2.0 * ip).max(0.0);
        let mut cands: Vec<Candidate> = Vec::with_capacity(8);
        let mut floor = f64::INFINITY;
        if b.n == 1 {
            let ip: f64 = b.x.iter().zip(z).map(|(a, c)| a * c).sum();
            cands.push(Candidate {
                value: value(ip),
                element: GridElement::Identity,
            });
            cands.push(Candidate {
                value: value(-ip),
                element: GridElement::Negation,
            });
        } else {
            let r = b.x.ncols();
            let w = |i: usize, j: usize| (0..r).map(|k| z[i + 2 * k] * b.x[(j, k)]).sum::<f64>();
            let (w00, w01, w10, w11) = (w(0, 0), w(0, 1), w(1, 0), w(1, 1));
            let families: [Family; 2] = [
                (w00 + w11, w10 - w01, GridElement::Rotation),
                (w00 - w11, w01 + w10, GridElement::Reflection),
            ];
            let delta = 2.0 * std::f64::consts::PI / self.steps as f64;
            for (a, bb, make) in families {
                // values grow with the angular distance to the optimum
                let t = bb.atan2(a).rem_euclid(2.0 * std::f64::consts::PI) / delta;
                let j0 = t.floor() as usize + self.steps;
                let at = |j: usize| value(a * self.cos[j % self.steps] + bb * self.sin[j % self.steps]);
                for j in [j0 - 1, j0, j0 + 1, j0 + 2] {
                    cands.push(Candidate {
                        value: at(j),
                        element: make(self.angle(j % self.steps)),
                    });
                }
                if self.steps > 4 {
                    floor = floor.min(at(j0 - 2)).min(at(j0 + 3));
                }
            }
        }
        cands.sort_by(|p, q| p.value.total_cmp(&q.value));
        cands.dedup_by(|p, q| p.element == q.element);
        (cands, floor)
    }

    fn apply_elements(&self, elements: &[GridElement]) -> DVector<f64> {
        let mut hx = DVector::zeros(self.x.len());
        for (b, e) in self.blocks.iter().zip(elements) {
            let gx = e.matrix(b.n) * &b.x;
            hx.rows_mut(b.offset, b.len).copy_from_slice(gx.as_slice());
        }
        hx
    }

    /// Squared margin of `h`: `dist(h·x, S)² + ½ Σ± (τ − ‖c(h) ∓ c_x‖)₊²`
    /// with `c(h) = Bᵀh·x`. This is `min_c ‖h·x − Bc‖² + P(c)` for the
    /// penalty `P(c) = Σ± (τ − ‖c ∓ c_x‖)₊²`. `None` for elements acting as
    /// `±identity`.
    fn exact(&self, elements: &[GridElement]) -> Option<f64> {
        let hx = self.apply_elements(elements);
        if (&hx - self.x).norm() < EXCLUDED_TOL || (&hx + self.x).norm() < EXCLUDED_TOL {
            return None;
        }
        let c = self.basis.transpose() * &hx;
        let f2 = (&hx - self.basis * &c).norm_squared();
        let penalty: f64 = [(&c - &self.cx).norm(), (&c + &self.cx).norm()]
            .into_iter()
            .map(|e| (self.tau - e).max(0.0).powi(2))
            .sum();
        Some(f2 + 0.5 * penalty)
    }

    /// Smallest penalty over a ball of radius `rho` around `c0`.
    fn min_penalty(&self, c0: &DVector<f64>, rho: f64) -> f64 {
        [(c0 - &self.cx).norm(), (c0 + &self.cx).norm()]
            .into_iter()
            .map(|e| (self.tau - e - rho).max(0.0).powi(2))
            .sum()
    }
}

/// Worst `(margin, element)` if any, and the number of search cells.
type PointOutcome = (Option<(f64, Vec<GridElement>)>, u64);

#[derive(Debug, PartialEq)]
struct Cell {
    lb: f64,
    seq: u64,
    center: Vec<f64>,
    half_width: f64,
}

impl Eq for Cell {}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on the lower bound, then on insertion order
        other.lb.total_cmp(&self.lb).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Worst element for one unit point: `(margin, element)`; `None` when every
/// grid element acts as `±identity`.
///
/// Minimizes `Σ_ℓ min_g ‖g X_ℓ − (Bc)_ℓ‖² + P(c)` over subspace
/// coordinates `c` by best-first subdivision of boxes. The inner minimum
/// separates over blocks and is attained at a grid angle next to a
/// closed-form optimum. A box is dropped once its lower bound reaches the
/// incumbent, up to a small fraction of the grid step, or the minimizing
/// element is the same everywhere in it.
fn check_point(
    s: &RepresentationStructure,
    basis: &DMatrix<f64>,
    x: &DVector<f64>,
    opts: &GridOptions,
) -> Result<PointOutcome> {
    let steps = opts.steps()?;
    let x = x.normalize();
    let xs = decompose(x.as_slice(), s)?;
    let m = basis.ncols();
    let blocks: Vec<BlockGeom> = s
        .blocks()
        .iter()
        .zip(s.offsets())
        .enumerate()
        .map(|(l, (b, offset))| BlockGeom {
            n: b.irrep_dim,
            x: xs.block(l).clone(),
            x_norm2: xs.block(l).norm_squared(),
            offset,
            len: b.len(),
            lip: basis.rows(offset, b.len()).singular_values().max(),
        })
        .collect();
    let search = PointSearch {
        cx: basis.transpose() * &x,
        blocks,
        basis,
        x: &x,
        tau: opts.exclusion,
        steps,
        cos: (0..steps).map(|j| (2.0 * std::f64::consts::PI * j as f64 / steps as f64).cos()).collect(),
        sin: (0..steps).map(|j| (2.0 * std::f64::consts::PI * j as f64 / steps as f64).sin()).collect(),
    };

    let mut best = f64::INFINITY;
    let mut best_elements: Option<Vec<GridElement>> = None;
    let mut consider = |elements: Vec<GridElement>, best: &mut f64| {
        if let Some(v) = search.exact(&elements) {
            if v < *best {
                *best = v;
                best_elements = Some(elements);
            }
        }
    };

    let grids: Vec<Vec<GridElement>> = search.blocks.iter().map(|b| block_grid(b.n, steps)).collect();
    if grids.iter().map(|g| g.len() as f64).product::<f64>() <= SMALL_GRID {
        let mut idx = vec![0; grids.len()];
        let mut nodes = 0;
        loop {
            nodes += 1;
            consider(idx.iter().zip(&grids).map(|(&i, g)| g[i]).collect(), &mut best);
            let Some(l) = (0..idx.len()).find(|&l| idx[l] + 1 < grids[l].len()) else {
                break;
            };
            idx[l] += 1;
            idx[..l].iter_mut().for_each(|i| *i = 0);
        }
        return Ok((best_elements.map(|e| (best.sqrt(), e)), nodes));
    }

    let mut heap = std::collections::BinaryHeap::new();
    let mut seq = 0;
    heap.push(Cell {
        lb: 0.0,
        seq,
        center: vec![0.0; m],
        half_width: 1.0 + opts.exclusion,
    });
    let mut nodes = 0u64;
    let radius = (m as f64).sqrt();
    let slack = MARGIN_RESOLUTION * opts.step;
    let settled = |lb: f64, best: f64| lb.sqrt() + slack >= best.sqrt();
    while let Some(cell) = heap.pop() {
        if settled(cell.lb, best) {
            break;
        }
        nodes += 1;
        if nodes > opts.node_budget {
            return Err(Error::GridTooLarge {
                size: nodes as f64,
                limit: opts.node_budget as f64,
            });
        }
        let rho = cell.half_width * radius;
        let c0 = DVector::from_column_slice(&cell.center);
        let z = basis * &c0;
        let ranked: Vec<(Vec<Candidate>, f64)> = search
            .blocks
            .iter()
            .map(|b| search.ranked(b, &z.as_slice()[b.offset..b.offset + b.len]))
            .collect();
        let eps: Vec<f64> = search.blocks.iter().map(|b| b.lip * rho).collect();
        let lower = |v: f64, e: f64| (v.sqrt() - e).max(0.0).powi(2);
        let second = |c: &[Candidate]| c.get(1).map_or(f64::INFINITY, |c| c.value);
        let lb1: Vec<f64> = ranked.iter().zip(&eps).map(|((c, _), &e)| lower(c[0].value, e)).collect();
        let lb_all: f64 = lb1.iter().sum::<f64>() + search.min_penalty(&c0, rho);
        let argmin: Vec<GridElement> = ranked.iter().map(|(c, _)| c[0].element).collect();
        let lb = if search.exact(&argmin).is_none() {
            // every admissible element differs from the argmin on some block
            ranked
                .iter()
                .enumerate()
                .map(|(l, (c, _))| lb_all - lb1[l] + lower(second(c), eps[l]))
                .fold(f64::INFINITY, f64::min)
        } else {
            lb_all
        };
        consider(argmin, &mut best);
        if settled(lb, best) {
            continue;
        }
        // Elements that can rank first (`rank = 0`) or within the first two
        // (`rank = 1`) somewhere in the cell.
        let reachable = |rank: usize| -> Option<Vec<Vec<GridElement>>> {
            ranked
                .iter()
                .zip(&eps)
                .map(|((c, floor), &e)| {
                    let cut = c.get(rank).map_or(f64::INFINITY, |c| c.value).sqrt() + 2.0 * e;
                    (floor.sqrt() > cut).then(|| {
                        c.iter().filter(|c| c.value.sqrt() <= cut).map(|c| c.element).collect()
                    })
                })
                .collect()
        };
        let product = |sets: &[Vec<GridElement>]| sets.iter().map(Vec::len).product::<usize>();
        let mut covered = false;
        for rank in 0..2 {
            let Some(sets) = reachable(rank) else { break };
            if product(&sets) > COVER_LIMIT {
                break;
            }
            let mut all_admissible = true;
            let mut idx = vec![0; sets.len()];
            loop {
                let h: Vec<GridElement> = idx.iter().zip(&sets).map(|(&i, s)| s[i]).collect();
                all_admissible &= search.exact(&h).is_some();
                consider(h, &mut best);
                let Some(l) = (0..idx.len()).find(|&l| idx[l] + 1 < sets[l].len()) else {
                    break;
                };
                idx[l] += 1;
                idx[..l].iter_mut().for_each(|i| *i = 0);
            }
            // with an excluded candidate the admissible optimum may rank
            // second on one block
            if all_admissible || rank == 1 {
                covered = true;
                break;
            }
        }
        if covered || cell.half_width < MIN_HALF_WIDTH {
            continue;
        }
        let half = cell.half_width / 2.0;
        for mask in 0..(1u32 << m) {
            seq += 1;
            heap.push(Cell {
                lb,
                seq,
                center: (0..m)
                    .map(|i| cell.center[i] + if mask >> i & 1 == 1 { half } else { -half })
                    .collect(),
                half_width: half,
            });
        }
    }
    Ok((best_elements.map(|e| (best.sqrt(), e)), nodes))
}

fn grid_preconditions(s: &RepresentationStructure, prior: &PriorSpec<f64>) -> Result<DMatrix<f64>> {
    if s.field() != Field::Real {
        return Err(Error::InvalidConfig("transversality grid supports the real field only".into()));
    }
    if let Some(b) = s.blocks().iter().find(|b| b.irrep_dim > 2) {
        return Err(Error::InvalidConfig(format!(
            "transversality grid needs irrep dimensions <= 2, got {}",
            b.irrep_dim
        )));
    }
    let basis = prior
        .basis()
        .ok_or_else(|| Error::InvalidPrior("transversality check needs a linear subspace prior".into()))?;
    prior.check_dim(s.ambient_dim())?;
    Ok(basis.clone())
}

/// Grid check on given points of the subspace.
pub fn transversality_check_points(
    s: &RepresentationStructure,
    prior: &PriorSpec<f64>,
    points: &[DVector<f64>],
    opts: &GridOptions,
) -> Result<TransversalityReport> {
    let basis = grid_preconditions(s, prior)?;
    let threshold = opts.threshold();
    let results = points
        .par_iter()
        .map(|x| {
            if x.len() != s.ambient_dim() {
                return Err(Error::DimensionMismatch {
                    context: "transversality point",
                    expected: s.ambient_dim(),
                    actual: x.len(),
                });
            }
            check_point(s, &basis, x, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst_margin = f64::INFINITY;
    let mut nodes_visited = 0;
    let mut violations = Vec::new();
    for (x, (found, nodes)) in points.iter().zip(results) {
        nodes_visited += nodes;
        if let Some((margin, element)) = found {
            worst_margin = worst_margin.min(margin);
            if margin < threshold {
                violations.push(Violation {
                    point: x.iter().cloned().collect(),
                    element,
                    margin,
                });
            }
        }
    }
    Ok(TransversalityReport {
        k_effective: effective_dimension(s).0,
        m_dim: basis.ncols(),
        samples_checked: points.len(),
        worst_margin,
        threshold,
        grid_step: opts.step,
        nodes_visited,
        violations,
    })
}

/// Gaussian unit vector in the column span of `basis`.
pub fn random_subspace_point<R: Rng + ?Sized>(basis: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let c = DVector::from_fn(basis.ncols(), |_, _| f64::standard_normal(rng));
    (basis * c).normalize()
}

/// Grid check on `num_points` random unit points of the subspace.
pub fn transversality_check<R: Rng + ?Sized>(
    s: &RepresentationStructure,
    prior: &PriorSpec<f64>,
    num_points: usize,
    opts: &GridOptions,
    rng: &mut R,
) -> Result<TransversalityReport> {
    let basis = grid_preconditions(s, prior)?;
    let points: Vec<_> = (0..num_points).map(|_| random_subspace_point(&basis, rng)).collect();
    transversality_check_points(s, prior, &points, opts)
}

/// Subspace `span{x, h·x}`: a prior for which `h` is a genuine intersection.
pub fn designed_intersection_prior(x: &BlockSignal<f64>, h: &GroupElement<f64>) -> Result<PriorSpec<f64>> {
    let a = x.reconstruct();
    let b = apply(h, x)?.reconstruct();
    let m = DMatrix::from_columns(&[a, b]);
    let qr = m.qr();
    let pivot = qr.r()[(1, 1)].abs();
    if pivot < 1e-8 * max_modulus(&qr.r()) {
        return Err(Error::RankDeficient { pivot });
    }
    PriorSpec::linear_subspace(qr.q())
}

/// `(X_ℓ) ↦ (√(X_ℓ* X_ℓ))`.
pub fn sqrt_gram_map<T: Scalar>(x: &BlockSignal<T>) -> Result<Vec<DMatrix<T>>> {
    gram_tuple(x).grams().iter().map(matrix_sqrt_psd).collect()
}

/// `‖√gram(x) − √gram(y)‖ / ρ(x, y)`; `None` when `ρ < 1e-12`.
pub fn distortion_ratio<T: Scalar>(x: &BlockSignal<T>, y: &BlockSignal<T>) -> Result<Option<f64>> {
    let d = rho(x, y)?;
    if d < 1e-12 {
        return Ok(None);
    }
    let num = sqrt_gram_map(x)?
        .iter()
        .zip(sqrt_gram_map(y)?)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        .sqrt();
    Ok(Some(num / d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`.
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["bin_lower", "bin_upper", "count"]);
        for (i, c) in self.counts.iter().enumerate() {
            t.push(vec![self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionReport {
    pub alpha_lower: f64,
    pub beta_upper: f64,
    pub pairs_sampled: usize,
    pub pairs_skipped: usize,
    pub ratio_histogram: Histogram,
    pub warning: Option<String>,
}

pub const PERTURBATION_SCALES: [f64; 3] = [1e-1, 1e-3, 1e-5];
pub const HISTOGRAM_BINS: usize = 40;

/// The `i`-th sampled pair: every fourth pair is two independent Gaussian
/// points of the subspace, the others are `y = x + εδ` with `‖δ‖ = ‖x‖`
/// and `ε` cycling through [`PERTURBATION_SCALES`].
pub fn distortion_pair<T: Scalar>(
    s: &RepresentationStructure,
    basis: &DMatrix<T>,
    seed: u64,
    i: usize,
) -> Result<(BlockSignal<T>, BlockSignal<T>)> {
    let mut rng = stream_rng(seed, i as u64);
    let mut gaussian = || basis * DVector::from_fn(basis.ncols(), |_, _| T::standard_normal(&mut rng));
    let x = gaussian();
    let y = match i % 4 {
        0 => gaussian(),
        k => {
            let delta = gaussian();
            let scale = PERTURBATION_SCALES[k - 1] * x.norm() / delta.norm().max(f64::MIN_POSITIVE);
            &x + delta.scale(scale)
        }
    };
    Ok((decompose(x.as_slice(), s)?, decompose(y.as_slice(), s)?))
}

/// Monte Carlo estimate of the distortion constants on a subspace.
pub fn distortion_estimate<T: Scalar, R: Rng + ?Sized>(
    s: &RepresentationStructure,
    prior: &PriorSpec<T>,
    num_pairs: usize,
    rng: &mut R,
) -> Result<DistortionReport> {
    s.check_field::<T>()?;
    let basis = prior
        .basis()
        .ok_or_else(|| Error::InvalidPrior("distortion estimate needs a linear subspace prior".into()))?;
    prior.check_dim(s.ambient_dim())?;
    let (k, _) = effective_dimension(s);
    let m = prior.dimension();
    let warning = (k <= 2 * m).then(|| format!("K = {k} is not larger than 2M = {}", 2 * m));
    let seed: u64 = rng.random();
    let ratios: Vec<Option<f64>> = (0..num_pairs)
        .into_par_iter()
        .map(|i| {
            let (x, y) = distortion_pair(s, basis, seed, i)?;
            distortion_ratio(&x, &y)
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = ratios.into_iter().flatten().collect();
    let alpha_lower = kept.iter().cloned().fold(f64::INFINITY, f64::min);
    let beta_upper = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if kept.is_empty() { (0.0, 1.0) } else { (alpha_lower, beta_upper) };
    Ok(DistortionReport {
        alpha_lower,
        beta_upper,
        pairs_sampled: num_pairs,
        pairs_skipped: num_pairs - kept.len(),
        ratio_histogram: Histogram::new(&kept, HISTOGRAM_BINS, lo, hi),
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::random_subspace_prior;
    use crate::repr::cyclic_element;
    use num_complex::Complex64;

    #[test]
    fn effective_dimension_examples() {
        assert_eq!(effective_dimension(&RepresentationStructure::real([(8, 4)]).unwrap()), (10, 22));
        let cryo = RepresentationStructure::cryo_em(2, 5, Field::Real).unwrap();
        assert_eq!(effective_dimension(&cryo), (32, 13));
        assert_eq!(effective_dimension(&RepresentationStructure::real([(1, 1)]).unwrap()), (1, 0));
        let c8 = RepresentationStructure::cyclic(8, Field::Real).unwrap();
        assert_eq!(effective_dimension(&c8), (5, 3));
        let c4 = RepresentationStructure::cyclic(4, Field::Complex).unwrap();
        assert_eq!(effective_dimension(&c4), (4, 4));
    }

    #[test]
    fn orbit_estimate_matches_formula() {
        let structures = [
            RepresentationStructure::real([(8, 4)]).unwrap(),
            RepresentationStructure::real([(3, 1), (2, 3)]).unwrap(),
            RepresentationStructure::cyclic(8, Field::Real).unwrap(),
        ];
        for s in structures {
            let kh = orbit_dimension_estimate::<f64, _>(&s, &mut stream_rng(3, 0)).unwrap();
            assert_eq!(kh, effective_dimension(&s).1, "{s}");
        }
        let s = RepresentationStructure::complex([(3, 2), (2, 1)]).unwrap();
        let kh = orbit_dimension_estimate::<Complex64, _>(&s, &mut stream_rng(3, 1)).unwrap();
        assert_eq!(kh, effective_dimension(&s).1);
    }

    #[test]
    fn cayley_is_orthogonal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, -0.3, 0.0]);
        let q = cayley::<f64>(&a);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    fn brute_force(s: &RepresentationStructure, basis: &DMatrix<f64>, x: &DVector<f64>, opts: &GridOptions) -> f64 {
        let steps = opts.steps().unwrap();
        let xs = decompose(x.as_slice(), s).unwrap();
        let grids: Vec<_> = s.blocks().iter().map(|b| block_grid(b.irrep_dim, steps)).collect();
        let mut idx = vec![0; grids.len()];
        let mut worst = f64::INFINITY;
        loop {
            let mats = s
                .blocks()
                .iter()
                .zip(&idx)
                .zip(&grids)
                .map(|((b, &i), g)| g[i].matrix(b.irrep_dim))
                .collect();
            let hx = apply(&GroupElement::new(mats).unwrap(), &xs).unwrap().reconstruct();
            let near = (&hx - x).norm().min((&hx + x).norm());
            if near >= EXCLUDED_TOL {
                let c = basis.transpose() * &hx;
                let cx = basis.transpose() * x;
                let mut d2 = (&hx - basis * &c).norm_squared();
                for e in [(&c - &cx).norm(), (&c + &cx).norm()] {
                    d2 += 0.5 * (opts.exclusion - e).max(0.0).powi(2);
                }
                worst = worst.min(d2.sqrt());
            }
            let mut l = 0;
            loop {
                if l == idx.len() {
                    return worst;
                }
                idx[l] += 1;
                if idx[l] < grids[l].len() {
                    break;
                }
                idx[l] = 0;
                l += 1;
            }
        }
    }

    #[test]
    fn grid_search_matches_enumeration() {
        for (n, m, steps, seed) in [(4, 1, 16, 0), (6, 2, 32, 1), (5, 2, 24, 2), (6, 1, 20, 3)] {
            let s = RepresentationStructure::cyclic(n, Field::Real).unwrap();
            let prior = random_subspace_prior::<f64, _>(&s, m, &mut stream_rng(seed, 0)).unwrap();
            let basis = prior.basis().unwrap().clone();
            let opts = GridOptions::with_step(2.0 * std::f64::consts::PI / steps as f64);
            for p in 0..4 {
                let x = random_subspace_point(&basis, &mut stream_rng(seed, 1 + p));
                let report = transversality_check_points(&s, &prior, std::slice::from_ref(&x), &opts).unwrap();
                let oracle = brute_force(&s, &basis, &x, &opts);
                let slack = 1e-2 * opts.step + 1e-9;
                assert!(
                    (report.worst_margin >= oracle - 1e-9 && report.worst_margin <= oracle + slack)
                        || (report.worst_margin.is_infinite() && oracle.is_infinite()),
                    "n={n} m={m}: {} vs {oracle}",
                    report.worst_margin
                );
            }
        }
    }

    #[test]
    fn designed_intersection_is_found() {
        let s = RepresentationStructure::cyclic(8, Field::Real).unwrap();
        let x = random_signal::<f64, _>(&s, &mut stream_rng(5, 0)).unwrap();
        let mut blocks: Vec<DMatrix<f64>> = s.blocks().iter().map(|b| DMatrix::identity(b.irrep_dim, b.irrep_dim)).collect();
        blocks[1] = GridElement::Reflection(0.0).matrix(2);
        let h = GroupElement::new(blocks).unwrap();
        let prior = designed_intersection_prior(&x, &h).unwrap();
        let opts = GridOptions::with_step(2.0 * std::f64::consts::PI / 64.0);
        let report = transversality_check(&s, &prior, 3, &opts, &mut stream_rng(5, 1)).unwrap();
        assert!(report.worst_margin < 1e-6, "{}", report.worst_margin);
        assert!(!report.violations.is_empty());
    }

    #[test]
    fn sign_only_group_reports_sentinel() {
        let s = RepresentationStructure::real([(1, 1)]).unwrap();
        let prior = PriorSpec::linear_subspace(DMatrix::<f64>::identity(1, 1)).unwrap();
        let opts = GridOptions::with_step(0.1);
        let report = transversality_check(&s, &prior, 4, &opts, &mut stream_rng(0, 0)).unwrap();
        assert!(report.worst_margin.is_infinite());
        assert!(report.violations.is_empty());
    }

    #[test]
    fn grid_preconditions_are_enforced() {
        let opts = GridOptions::with_step(0.1);
        let s = RepresentationStructure::real([(3, 1)]).unwrap();
        let prior = PriorSpec::<f64>::unconstrained(3).unwrap();
        assert!(transversality_check(&s, &prior, 1, &opts, &mut stream_rng(0, 0)).is_err());
        let s = RepresentationStructure::real([(2, 1)]).unwrap();
        let sparse = PriorSpec::sparsity(1).unwrap();
        assert!(matches!(
            transversality_check(&s, &sparse, 1, &opts, &mut stream_rng(0, 0)),
            Err(Error::InvalidPrior(_))
        ));
        let tight = GridOptions {
            node_budget: 10,
            ..GridOptions::with_step(0.01)
        };
        let s = RepresentationStructure::cyclic(8, Field::Real).unwrap();
        let prior = random_subspace_prior::<f64, _>(&s, 2, &mut stream_rng(0, 0)).unwrap();
        assert!(matches!(
            transversality_check(&s, &prior, 1, &tight, &mut stream_rng(0, 1)),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn sqrt_gram_examples() {
        let s = RepresentationStructure::real([(3, 2)]).unwrap();
        let x = BlockSignal::new(s.clone(), vec![DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0])]).unwrap();
        let r = sqrt_gram_map(&x).unwrap();
        assert!((&r[0] - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-12);
        let q = crate::repr::haar_matrix::<f64, _>(3, &mut stream_rng(1, 0));
        let ortho = BlockSignal::new(s, vec![q.columns(0, 2).into_owned()]).unwrap();
        assert!((&sqrt_gram_map(&ortho).unwrap()[0] - DMatrix::identity(2, 2)).norm() < 1e-12);
        let c = RepresentationStructure::cyclic(6, Field::Real).unwrap();
        let y = random_signal::<f64, _>(&c, &mut stream_rng(1, 1)).unwrap();
        let g = cyclic_element::<f64>(6, 2).unwrap();
        let a = sqrt_gram_map(&y).unwrap();
        let b = sqrt_gram_map(&apply(&g, &y).unwrap()).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).norm() < 1e-10));
    }

    #[test]
    fn scalar_distortion_is_one() {
        let s = RepresentationStructure::real([(1, 1)]).unwrap();
        let prior = PriorSpec::linear_subspace(DMatrix::<f64>::identity(1, 1)).unwrap();
        let r = distortion_estimate(&s, &prior, 2000, &mut stream_rng(0, 0)).unwrap();
        assert!((r.alpha_lower - 1.0).abs() < 1e-12 && (r.beta_upper - 1.0).abs() < 1e-12);
        assert!(r.warning.is_some());
        let x = decompose(&[0.7], &s).unwrap();
        assert_eq!(distortion_ratio(&x, &x.scale(-1.0)).unwrap(), None);
    }

    #[test]
    fn histogram_counts_every_value() {
        let h = Histogram::new(&[0.0, 0.5, 1.0, 1.0], 2, 0.0, 1.0);
        assert_eq!(h.counts, vec![1, 3]);
        assert_eq!(h.to_csv().rows.len(), 2);
    }
}
