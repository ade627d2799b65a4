//! Two-transmon state tomography: pre-rotations, simulated readout,
//! confusion correction, linear inversion and constrained least squares.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::fmt::Write as _;

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::operators::{qutrit_pair_state, validate_state, DensityMatrix, OperatorError, QUTRIT_PAIR_DIMS};

/// Outcomes per rotation (`|gg⟩ … |ff⟩`).
pub const OUTCOMES: usize = 9;
/// Single-transmon pre-rotations.
pub const SINGLE_ROTATIONS: usize = 9;
/// Size of the two-transmon rotation set.
pub const ROTATIONS: usize = SINGLE_ROTATIONS * SINGLE_ROTATIONS;

const DIM: usize = 9;
const CONDITION_WARNING: f64 = 1e3;
const STATE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("input state is not physical: {0}")]
    Unphysical(crate::operators::StateReport),
    #[error("expected {expected} rows of counts, got {got}")]
    RowCount { expected: usize, got: usize },
    #[error("rotation {row}: counts sum to {sum}, expected {shots}")]
    ShotMismatch { row: usize, sum: u64, shots: u64 },
    #[error("shot count must be positive")]
    NoShots,
    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(String),
    #[error("confusion matrix is singular")]
    SingularConfusion,
    #[error("rotation set has rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

/// Single-transmon rotation in the `g,e` (`ge = true`) or `e,f` subspace.
pub fn subspace_rotation(ge: bool, phi: f64, theta: f64) -> DMatrix<C64> {
    let (s, c) = (theta / 2.0).sin_cos();
    let mut r = DMatrix::identity(3, 3);
    let (a, b) = if ge { (0, 1) } else { (1, 2) };
    r[(a, a)] = C64::new(c, 0.0);
    r[(b, b)] = C64::new(c, 0.0);
    r[(a, b)] = -C64::from_polar(s, -phi);
    r[(b, a)] = C64::from_polar(s, phi);
    r
}

/// The nine single-transmon pre-rotations; element 0 is the identity.
pub fn single_rotations() -> [DMatrix<C64>; SINGLE_ROTATIONS] {
    let rge = |phi, theta| subspace_rotation(true, phi, theta);
    let ref_ = |phi, theta| subspace_rotation(false, phi, theta);
    let pi_ge = rge(0.0, PI);
    [
        DMatrix::identity(3, 3),
        rge(0.0, FRAC_PI_2),
        rge(FRAC_PI_2, FRAC_PI_2),
        pi_ge.clone(),
        ref_(0.0, FRAC_PI_2),
        ref_(FRAC_PI_2, FRAC_PI_2),
        ref_(0.0, FRAC_PI_2) * &pi_ge,
        ref_(FRAC_PI_2, FRAC_PI_2) * &pi_ge,
        ref_(0.0, PI) * &pi_ge,
    ]
}

/// A pre-rotation `U_a ⊗ U_b` with its single-transmon recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    pub recipe: (usize, usize),
    pub unitary: DMatrix<C64>,
}

/// The 81 two-transmon pre-rotations, index `a·9 + b` with Q1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSet {
    rotations: Vec<Rotation>,
}

impl RotationSet {
    pub fn standard() -> Self {
        let single = single_rotations();
        let rotations = (0..ROTATIONS)
            .map(|j| {
                let (a, b) = (j / SINGLE_ROTATIONS, j % SINGLE_ROTATIONS);
                Rotation {
                    recipe: (a, b),
                    unitary: single[a].kronecker(&single[b]),
                }
            })
            .collect();
        Self { rotations }
    }

    pub fn as_slice(&self) -> &[Rotation] {
        &self.rotations
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }
}

impl Default for RotationSet {
    fn default() -> Self {
        Self::standard()
    }
}

/// Row-stochastic readout matrix: `C[prepared][reported]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    condition: f64,
}

impl ConfusionMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, TomographyError> {
        if matrix.shape() != (DIM, DIM) {
            return Err(TomographyError::InvalidConfusion(format!(
                "shape {:?}, expected 9x9",
                matrix.shape()
            )));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(TomographyError::InvalidConfusion(format!(
                    "row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(TomographyError::InvalidConfusion(format!("row {i} sums to {sum}")));
            }
        }
        let sv = matrix.clone().svd(false, false).singular_values;
        let (max, min) = (sv.max(), sv.min());
        if min <= 1e-12 * max {
            return Err(TomographyError::SingularConfusion);
        }
        let condition = max / min;
        if condition > CONDITION_WARNING {
            log::warn!("confusion matrix condition number {condition:.3e}");
        }
        let inverse = matrix.clone().try_inverse().ok_or(TomographyError::SingularConfusion)?;
        Ok(Self {
            matrix,
            inverse,
            condition,
        })
    }

    pub fn identity() -> Self {
        Self::new(DMatrix::identity(DIM, DIM)).expect("identity is a valid confusion matrix")
    }

    /// Independent per-transmon readout; `p_q` is the probability of
    /// reporting the prepared level on transmon `q`, errors split evenly.
    pub fn symmetric(p_1: f64, p_2: f64) -> Result<Self, TomographyError> {
        let local = |p: f64| DMatrix::from_fn(3, 3, |i, j| if i == j { p } else { (1.0 - p) / 2.0 });
        Self::new(local(p_1).kronecker(&local(p_2)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// Reported distribution for a prepared distribution `p` (`p·C`).
    pub fn apply(&self, p: &[f64; OUTCOMES]) -> [f64; OUTCOMES] {
        row_times(p, &self.matrix)
    }

    /// `o·C⁻¹`.
    pub fn correct(&self, o: &[f64; OUTCOMES]) -> [f64; OUTCOMES] {
        row_times(o, &self.inverse)
    }

    /// Nine rows of nine whitespace-separated entries; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TomographyError> {
        let rows = parse_rows::<f64>(text)?;
        if rows.len() != DIM || rows.iter().any(|(_, r)| r.len() != DIM) {
            let line = rows.iter().find(|(_, r)| r.len() != DIM).map_or(0, |(l, _)| *l);
            return Err(TomographyError::Parse {
                line,
                reason: "expected 9 rows of 9 entries".into(),
            });
        }
        Self::new(DMatrix::from_fn(DIM, DIM, |i, j| rows[i].1[j]))
    }
}

fn row_times(v: &[f64; OUTCOMES], m: &DMatrix<f64>) -> [f64; OUTCOMES] {
    let mut out = [0.0; OUTCOMES];
    for (j, o) in out.iter_mut().enumerate() {
        *o = (0..OUTCOMES).map(|i| v[i] * m[(i, j)]).sum();
    }
    out
}

fn parse_rows<T: std::str::FromStr>(text: &str) -> Result<Vec<(usize, Vec<T>)>, TomographyError>
where
    T::Err: std::fmt::Display,
{
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<T>().map_err(|e| TomographyError::Parse {
                    line: n + 1,
                    reason: format!("{tok:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((n + 1, row));
    }
    Ok(rows)
}

/// Outcome counts per rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tomogram {
    pub counts: Vec<[u64; OUTCOMES]>,
    pub shots: u64,
    pub seed: u64,
}

impl Tomogram {
    pub fn validate(&self, rotations: usize) -> Result<(), TomographyError> {
        if self.shots == 0 {
            return Err(TomographyError::NoShots);
        }
        if self.counts.len() != rotations {
            return Err(TomographyError::RowCount {
                expected: rotations,
                got: self.counts.len(),
            });
        }
        for (row, c) in self.counts.iter().enumerate() {
            let sum: u64 = c.iter().sum();
            if sum != self.shots {
                return Err(TomographyError::ShotMismatch {
                    row,
                    sum,
                    shots: self.shots,
                });
            }
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<[f64; OUTCOMES]> {
        let n = self.shots as f64;
        self.counts.iter().map(|c| c.map(|k| k as f64 / n)).collect()
    }

    /// Header `shots N seed S`, then one row of nine counts per rotation.
    pub fn to_text(&self) -> String {
        let mut s = format!("shots {} seed {}\n", self.shots, self.seed);
        for c in &self.counts {
            let row: Vec<String> = c.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, TomographyError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TomographyError::Parse {
            line: 1,
            reason: "empty tomogram".into(),
        })?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || TomographyError::Parse {
            line: 1,
            reason: "expected `shots N seed S`".into(),
        };
        if tok.len() != 4 || tok[0] != "shots" || tok[2] != "seed" {
            return Err(bad_header());
        }
        let shots = tok[1].parse().map_err(|_| bad_header())?;
        let seed = tok[3].parse().map_err(|_| bad_header())?;
        let body: String = lines.map(|(_, l)| format!("{l}\n")).collect();
        let rows = parse_rows::<u64>(&body)?;
        let mut counts = Vec::with_capacity(rows.len());
        for (i, (_, r)) in rows.into_iter().enumerate() {
            let arr: [u64; OUTCOMES] = r.try_into().map_err(|_| TomographyError::Parse {
                line: i + 2,
                reason: "expected 9 counts".into(),
            })?;
            counts.push(arr);
        }
        let t = Self { counts, shots, seed };
        t.validate(t.counts.len())?;
        Ok(t)
    }
}

fn pair_matrix(rho: &DensityMatrix) -> Result<DMatrix<C64>, TomographyError> {
    let pair = qutrit_pair_state(rho)?;
    let report = validate_state(&pair, STATE_TOLERANCE);
    if !report.pass {
        return Err(TomographyError::Unphysical(report));
    }
    Ok(pair.into_matrix())
}

fn rotated_populations(rho: &DMatrix<C64>, u: &DMatrix<C64>) -> [f64; OUTCOMES] {
    let r = u * rho * u.adjoint();
    std::array::from_fn(|x| r[(x, x)].re)
}

/// Ideal outcome probabilities `diag(U_j ρ U_j†)` for each rotation.
pub fn ideal_probabilities(
    rho: &DensityMatrix,
    rotations: &[Rotation],
) -> Result<Vec<[f64; OUTCOMES]>, TomographyError> {
    let m = pair_matrix(rho)?;
    Ok(rotations.iter().map(|r| rotated_populations(&m, &r.unitary)).collect())
}

/// Multinomial readout of `rho` (full or two-transmon), through `confusion`.
pub fn simulate_counts(
    rho: &DensityMatrix,
    rotations: &[Rotation],
    confusion: &ConfusionMatrix,
    shots: u64,
    seed: u64,
) -> Result<Tomogram, TomographyError> {
    if shots == 0 {
        return Err(TomographyError::NoShots);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = ideal_probabilities(rho, rotations)?
        .iter()
        .map(|p| {
            let clipped = p.map(|v| v.max(0.0));
            let total: f64 = clipped.iter().sum();
            let reported = confusion.apply(&clipped.map(|v| v / total));
            sample_multinomial(&mut rng, shots, &reported)
        })
        .collect();
    Ok(Tomogram { counts, shots, seed })
}

fn sample_multinomial(rng: &mut ChaCha8Rng, shots: u64, p: &[f64; OUTCOMES]) -> [u64; OUTCOMES] {
    let mut out = [0u64; OUTCOMES];
    let mut left = shots;
    let mut mass = 1.0;
    for k in 0..OUTCOMES - 1 {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (p[k].max(0.0) / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        out[k] = draw;
        left -= draw;
        mass -= p[k].max(0.0);
    }
    out[OUTCOMES - 1] += left;
    out
}

/// Confusion-corrected frequencies and the weight floor `1/(10·shots)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedData {
    pub frequencies: Vec<[f64; OUTCOMES]>,
    pub floor: f64,
}

impl CorrectedData {
    pub fn from_tomogram(tomogram: &Tomogram, confusion: &ConfusionMatrix) -> Result<Self, TomographyError> {
        tomogram.validate(tomogram.counts.len())?;
        let frequencies = tomogram.frequencies().iter().map(|o| confusion.correct(o)).collect();
        Ok(Self {
            frequencies,
            floor: 1.0 / (10.0 * tomogram.shots as f64),
        })
    }

    /// Already-corrected frequencies; `shots` only sets the weight floor.
    pub fn from_frequencies(frequencies: Vec<[f64; OUTCOMES]>, shots: f64) -> Result<Self, TomographyError> {
        if shots.is_nan() || shots <= 0.0 {
            return Err(TomographyError::NoShots);
        }
        Ok(Self {
            frequencies,
            floor: 1.0 / (10.0 * shots),
        })
    }

    fn check(&self, rotations: &[Rotation]) -> Result<(), TomographyError> {
        if self.frequencies.len() != rotations.len() {
            return Err(TomographyError::RowCount {
                expected: rotations.len(),
                got: self.frequencies.len(),
            });
        }
        Ok(())
    }

    fn weights(&self) -> Vec<[f64; OUTCOMES]> {
        self.frequencies
            .iter()
            .map(|q| q.map(|v| v.max(self.floor).powi(-2)))
            .collect()
    }
}

/// `Σ ((p − q)/max(q, floor))²` for a candidate state.
pub fn fc_cost(rho: &DensityMatrix, rotations: &[Rotation], data: &CorrectedData) -> Result<f64, TomographyError> {
    data.check(rotations)?;
    let m = qutrit_pair_state(rho)?.into_matrix();
    Ok(cost_of(&m, rotations, &data.frequencies, &data.weights()))
}

fn cost_of(rho: &DMatrix<C64>, rotations: &[Rotation], q: &[[f64; OUTCOMES]], w: &[[f64; OUTCOMES]]) -> f64 {
    rotations
        .iter()
        .zip(q.iter().zip(w))
        .map(|(r, (q, w))| {
            let p = rotated_populations(rho, &r.unitary);
            (0..OUTCOMES).map(|x| w[x] * (p[x] - q[x]).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Hermitian basis `E_aa`, `(E_ab + E_ba)/√2`, `i(E_ab − E_ba)/√2` as sparse
/// entries; orthonormal under `Tr(A†B)`.
fn hermitian_basis() -> Vec<Vec<(usize, usize, C64)>> {
    let mut basis = Vec::with_capacity(DIM * DIM);
    for a in 0..DIM {
        for b in 0..DIM {
            basis.push(match a.cmp(&b) {
                std::cmp::Ordering::Equal => vec![(a, a, C64::new(1.0, 0.0))],
                std::cmp::Ordering::Less => vec![
                    (a, b, C64::new(FRAC_1_SQRT_2, 0.0)),
                    (b, a, C64::new(FRAC_1_SQRT_2, 0.0)),
                ],
                std::cmp::Ordering::Greater => vec![
                    (b, a, C64::new(0.0, FRAC_1_SQRT_2)),
                    (a, b, C64::new(0.0, -FRAC_1_SQRT_2)),
                ],
            });
        }
    }
    basis
}

/// Real-linear map from basis coefficients of `ρ` to outcome probabilities.
struct Design {
    a: DMatrix<f64>,
    basis: Vec<Vec<(usize, usize, C64)>>,
}

impl Design {
    fn new(rotations: &[Rotation]) -> Self {
        let basis = hermitian_basis();
        let mut a = DMatrix::<f64>::zeros(rotations.len() * OUTCOMES, basis.len());
        for (j, rot) in rotations.iter().enumerate() {
            for x in 0..OUTCOMES {
                let r = rot.unitary.row(x);
                for (m, bm) in basis.iter().enumerate() {
                    // ⟨x|U B U†|x⟩
                    a[(j * OUTCOMES + x, m)] = bm.iter().map(|&(i, k, v)| (r[i] * v * r[k].conj()).re).sum();
                }
            }
        }
        Self { a, basis }
    }

    fn coefficients(&self, rho: &DMatrix<C64>) -> DVector<f64> {
        DVector::from_iterator(
            self.basis.len(),
            self.basis.iter().map(|bm| bm.iter().map(|&(i, k, v)| (v * rho[(k, i)]).re).sum::<f64>()),
        )
    }

    fn matrix(&self, c: &DVector<f64>) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(DIM, DIM);
        for (cm, bm) in c.iter().zip(&self.basis) {
            for &(i, k, v) in bm {
                m[(i, k)] += v * *cm;
            }
        }
        m
    }
}

fn flatten(rows: &[[f64; OUTCOMES]]) -> DVector<f64> {
    DVector::from_iterator(rows.len() * OUTCOMES, rows.iter().flatten().copied())
}

/// Linear-inversion estimate; may have negative eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimate {
    pub estimate: DensityMatrix,
    pub min_eigenvalue: f64,
}

impl LinearEstimate {
    pub fn is_positive(&self) -> bool {
        self.min_eigenvalue >= 0.0
    }

    /// Negative eigenvalues clipped, trace renormalized.
    pub fn projected(&self) -> DensityMatrix {
        project_positive(self.estimate.matrix(), 0.0)
    }
}

fn project_positive(m: &DMatrix<C64>, floor: f64) -> DensityMatrix {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0) + floor);
    let total = vals.sum();
    let d = DMatrix::from_diagonal(&vals.map(|v| C64::new(v / total, 0.0)));
    let rho = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::from_raw(QUTRIT_PAIR_DIMS.to_vec(), rho).expect("9x9")
}

/// Least-squares solution of `Tr(ρ P_jx) = q_jx` over Hermitian `ρ`,
/// normalized to unit trace.
pub fn linear_inversion(rotations: &[Rotation], data: &CorrectedData) -> Result<LinearEstimate, TomographyError> {
    data.check(rotations)?;
    let design = Design::new(rotations);
    linear_from_design(&design, data)
}

fn linear_from_design(design: &Design, data: &CorrectedData) -> Result<LinearEstimate, TomographyError> {
    let needed = design.basis.len();
    let svd = design.a.clone().svd(true, true);
    let max = svd.singular_values.max();
    let cutoff = 1e-10 * max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < needed {
        return Err(TomographyError::RankDeficient { rank, needed });
    }
    let c = svd
        .solve(&flatten(&data.frequencies), cutoff)
        .map_err(|e| TomographyError::Optimizer(e.to_string()))?;
    let mut rho = design.matrix(&c);
    let tr = rho.trace().re;
    rho /= C64::new(tr, 0.0);
    let estimate = DensityMatrix::from_raw(QUTRIT_PAIR_DIMS.to_vec(), rho)?;
    let min_eigenvalue = estimate.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
    Ok(LinearEstimate {
        estimate,
        min_eigenvalue,
    })
}

/// Optimizer settings for [`mle_reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iters: u64,
    pub gradient_tolerance: f64,
    pub memory: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            gradient_tolerance: 1e-9,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub state: DensityMatrix,
    pub cost: f64,
    pub iterations: u64,
    pub converged: bool,
    pub linear: LinearEstimate,
}

struct Problem<'a> {
    design: &'a Design,
    q: DVector<f64>,
    w: DVector<f64>,
}

impl Problem<'_> {
    fn residual(&self, rho: &DMatrix<C64>) -> DVector<f64> {
        &self.design.a * self.design.coefficients(rho) - &self.q
    }
}

fn unpack(p: &[f64]) -> DMatrix<C64> {
    DMatrix::from_fn(DIM, DIM, |i, j| {
        let k = i * DIM + j;
        C64::new(p[k], p[DIM * DIM + k])
    })
}

fn pack(t: &DMatrix<C64>) -> Vec<f64> {
    let mut p = vec![0.0; 2 * DIM * DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            p[i * DIM + j] = t[(i, j)].re;
            p[DIM * DIM + i * DIM + j] = t[(i, j)].im;
        }
    }
    p
}

fn rho_of(t: &DMatrix<C64>) -> DMatrix<C64> {
    let m = t.adjoint() * t;
    let tr = m.trace().re;
    m / C64::new(tr, 0.0)
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        let r = self.residual(&rho_of(&unpack(p)));
        Ok(r.iter().zip(self.w.iter()).map(|(r, w)| w * r * r).sum())
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        let t = unpack(p);
        let norm = (t.adjoint() * &t).trace().re;
        let rho = rho_of(&t);
        // df = Tr(G dρ) with G = Σ_m ∂f/∂c_m B_m; then K = (G − Tr(Gρ))/N
        // and the gradient over (Re T, Im T) is 2TK.
        let r = self.residual(&rho);
        let weighted = r.component_mul(&self.w) * 2.0;
        let g = self.design.matrix(&(self.design.a.tr_mul(&weighted)));
        let shift = (&g * &rho).trace().re;
        let k = (g - DMatrix::identity(DIM, DIM) * C64::new(shift, 0.0)) / C64::new(norm, 0.0);
        Ok(pack(&(t * k * C64::new(2.0, 0.0))))
    }
}

/// Constrained least squares over `ρ = T†T/Tr(T†T)`, started from the
/// positivity-projected linear-inversion estimate.
pub fn mle_reconstruct(
    rotations: &[Rotation],
    data: &CorrectedData,
    options: &MleOptions,
) -> Result<MleResult, TomographyError> {
    data.check(rotations)?;
    let design = Design::new(rotations);
    let linear = linear_from_design(&design, data)?;
    let start = project_positive(linear.estimate.matrix(), 1e-6);
    let eig = start.matrix().clone().symmetric_eigen();
    let sqrt_d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0)));
    let t0 = sqrt_d * eig.eigenvectors.adjoint();

    let problem = Problem {
        design: &design,
        q: flatten(&data.frequencies),
        w: flatten(&data.weights()),
    };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), options.memory)
        .with_tolerance_grad(options.gradient_tolerance)
        .map_err(|e| TomographyError::Optimizer(e.to_string()))?
        .with_tolerance_cost(0.0)
        .map_err(|e| TomographyError::Optimizer(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(pack(&t0)).max_iters(options.max_iters))
        .run()
        .map_err(|e| TomographyError::Optimizer(e.to_string()))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .ok_or_else(|| TomographyError::Optimizer("no iterate".into()))?;
    let converged = !matches!(
        state.get_termination_reason(),
        Some(TerminationReason::MaxItersReached) | Some(TerminationReason::Interrupt) | None
    );
    if !converged {
        log::warn!("tomography optimizer stopped after {} iterations", state.get_iter());
    }
    let rho = rho_of(&unpack(best));
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let state_rho = DensityMatrix::from_raw(QUTRIT_PAIR_DIMS.to_vec(), rho)?;
    Ok(MleResult {
        cost: cost_of(state_rho.matrix(), rotations, &data.frequencies, &data.weights()),
        state: state_rho,
        iterations: state.get_iter(),
        converged,
        linear,
    })
}

/// Reconstructs independent tomograms in parallel, preserving order.
pub fn reconstruct_all(
    tomograms: &[Tomogram],
    rotations: &[Rotation],
    confusion: &ConfusionMatrix,
    options: &MleOptions,
) -> Vec<Result<MleResult, TomographyError>> {
    tomograms
        .par_iter()
        .map(|t| mle_reconstruct(rotations, &CorrectedData::from_tomogram(t, confusion)?, options))
        .collect()
}

/// Uhlmann fidelity `(Tr√(√ρ σ √ρ))²`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, TomographyError> {
    if rho.dims() != sigma.dims() {
        return Err(OperatorError::DimsMismatch {
            left: rho.dims().to_vec(),
            right: sigma.dims().to_vec(),
        }
        .into());
    }
    let sqrt_rho = hermitian_sqrt(rho.matrix());
    let inner = &sqrt_rho * sigma.matrix() * &sqrt_rho;
    let inner = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
    let s: f64 = inner.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((s * s).clamp(0.0, 1.0))
}

fn hermitian_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::StateVector;
    use proptest::prelude::*;

    fn random_state(seed: u64, rank: usize) -> DensityMatrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = DMatrix::from_fn(rank, DIM, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let m = t.adjoint() * t;
        let tr = m.trace().re;
        DensityMatrix::new(QUTRIT_PAIR_DIMS.to_vec(), m / C64::new(tr, 0.0)).unwrap()
    }

    #[test]
    fn rotations_are_unitary_and_distinct() {
        let set = RotationSet::standard();
        assert_eq!(set.len(), ROTATIONS);
        assert_eq!(set.as_slice()[0].unitary, DMatrix::identity(DIM, DIM));
        for r in set.as_slice() {
            let e = &r.unitary * r.unitary.adjoint() - DMatrix::<C64>::identity(DIM, DIM);
            assert!(e.iter().all(|z| z.norm() < 1e-12));
        }
        let pi = subspace_rotation(true, 0.0, PI);
        assert!((pi[(0, 1)] + C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((pi[(1, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn counts_are_reproducible() {
        let rho = random_state(3, 2);
        let set = RotationSet::standard();
        let c = ConfusionMatrix::identity();
        let a = simulate_counts(&rho, set.as_slice(), &c, 1000, 42).unwrap();
        let b = simulate_counts(&rho, set.as_slice(), &c, 1000, 42).unwrap();
        assert_eq!(a, b);
        a.validate(ROTATIONS).unwrap();
        assert_eq!(Tomogram::parse(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn large_sample_matches_probabilities() {
        let rho = random_state(5, 9);
        let set = RotationSet::standard();
        let t = simulate_counts(&rho, set.as_slice(), &ConfusionMatrix::identity(), 1_000_000, 1).unwrap();
        let p = ideal_probabilities(&rho, set.as_slice()).unwrap();
        let worst = t
            .frequencies()
            .iter()
            .zip(&p)
            .flat_map(|(f, p)| (0..OUTCOMES).map(move |x| (f[x] - p[x]).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 3e-3, "{worst}");
    }

    #[test]
    fn noiseless_reconstruction_is_exact() {
        let set = RotationSet::standard();
        for (seed, rank) in [(1, 1), (2, 3), (3, 9)] {
            let rho = random_state(seed, rank);
            let data = CorrectedData::from_frequencies(ideal_probabilities(&rho, set.as_slice()).unwrap(), 1e6).unwrap();
            let lin = linear_inversion(set.as_slice(), &data).unwrap();
            assert!(lin.estimate.max_abs_diff(&rho) < 1e-10);
            let mle = mle_reconstruct(set.as_slice(), &data, &MleOptions::default()).unwrap();
            let f = fidelity(&mle.state, &rho).unwrap();
            assert!(f >= 0.999, "rank {rank}: {f}");
        }
    }

    #[test]
    fn confusion_is_undone() {
        let set = RotationSet::standard();
        let rho = random_state(11, 2);
        let conf = ConfusionMatrix::symmetric(0.95, 0.95).unwrap();
        let t = simulate_counts(&rho, set.as_slice(), &conf, 200_000, 9).unwrap();
        let data = CorrectedData::from_tomogram(&t, &conf).unwrap();
        let mle = mle_reconstruct(set.as_slice(), &data, &MleOptions::default()).unwrap();
        let f = fidelity(&mle.state, &rho).unwrap();
        assert!(f >= 0.995, "{f}");
    }

    #[test]
    fn confusion_validation() {
        assert!(matches!(
            ConfusionMatrix::new(DMatrix::from_element(DIM, DIM, 1.0 / 9.0)),
            Err(TomographyError::SingularConfusion)
        ));
        let mut m = DMatrix::identity(DIM, DIM);
        m[(0, 0)] = 0.9;
        assert!(matches!(ConfusionMatrix::new(m), Err(TomographyError::InvalidConfusion(_))));
        let text: String = (0..DIM)
            .map(|i| (0..DIM).map(|j| if i == j { "1 " } else { "0 " }).collect::<String>() + "\n")
            .collect();
        assert_eq!(ConfusionMatrix::parse(&text).unwrap(), ConfusionMatrix::identity());
        assert!(ConfusionMatrix::parse("1 0\n0 1\n").is_err());
    }

    #[test]
    fn mle_beats_projected_linear_inversion() {
        let set = RotationSet::standard();
        let rho = DensityMatrix::from_pure(&StateVector::basis(&QUTRIT_PAIR_DIMS, &[0, 2]).unwrap());
        let t = simulate_counts(&rho, set.as_slice(), &ConfusionMatrix::identity(), 2000, 4).unwrap();
        let data = CorrectedData::from_tomogram(&t, &ConfusionMatrix::identity()).unwrap();
        let mle = mle_reconstruct(set.as_slice(), &data, &MleOptions::default()).unwrap();
        let projected = fc_cost(&mle.linear.projected(), set.as_slice(), &data).unwrap();
        assert!(mle.cost <= projected, "{} > {}", mle.cost, projected);
        assert!(validate_state(&mle.state, 1e-8).pass);
    }

    #[test]
    fn fidelity_examples() {
        let a = random_state(7, 4);
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-8);
        let psi = DensityMatrix::basis(&[2], &[0]).unwrap();
        let mixed = DensityMatrix::maximally_mixed(&[2]);
        assert!((fidelity(&mixed, &psi).unwrap() - 0.5).abs() < 1e-12);
        let x = DensityMatrix::basis(&[2], &[1]).unwrap();
        assert!(fidelity(&psi, &x).unwrap() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fidelity_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000, r1 in 1usize..=9, r2 in 1usize..=9) {
            let a = random_state(s1, r1);
            let b = random_state(s2 + 1000, r2);
            let ab = fidelity(&a, &b).unwrap();
            let ba = fidelity(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-7);
        }
    }
}
