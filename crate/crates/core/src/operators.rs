//! Dense operator algebra over labelled tensor-product spaces.
//!
//! The full device space is `Q1(3) ⊗ Q2(3) ⊗ R1(2) ⊗ R2(2)` (36 states), with
//! basis index `q1·12 + q2·4 + r1·2 + r2`. Transmon levels are `g = 0`, `e = 1`,
//! `f = 2`; resonator levels are photon numbers.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Subsystem dimensions of the full device space, in `Q1, Q2, R1, R2` order.
pub const FULL_DIMS: [usize; 4] = [3, 3, 2, 2];
/// Subsystem dimensions of the two-transmon (qutrit pair) space.
pub const QUTRIT_PAIR_DIMS: [usize; 2] = [3, 3];

pub const Q1: usize = 0;
pub const Q2: usize = 1;
pub const R1: usize = 2;
pub const R2: usize = 3;

pub const G: usize = 0;
pub const E: usize = 1;
pub const F: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("subsystem dimension {0} is below 2")]
    BadDimension(usize),
    #[error("matrix is {rows}x{cols} but dims {dims:?} require side {expected}")]
    Shape {
        dims: Vec<usize>,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("subsystem index {index} out of range for {count} subsystems")]
    InvalidSubsystem { index: usize, count: usize },
    #[error("keep set must name at least one subsystem")]
    EmptyKeep,
    #[error("level {level} out of range for subsystem of dimension {dim}")]
    InvalidLevel { level: usize, dim: usize },
    #[error("state vector norm {0} differs from 1")]
    NotNormalized(f64),
    #[error("not a physical density matrix ({0})")]
    Unphysical(StateReport),
}

fn check_dims(dims: &[usize]) -> Result<usize, OperatorError> {
    if let Some(&d) = dims.iter().find(|&&d| d < 2) {
        return Err(OperatorError::BadDimension(d));
    }
    Ok(dims.iter().product())
}

fn check_square(dims: &[usize], data: &DMatrix<C64>) -> Result<(), OperatorError> {
    let side = check_dims(dims)?;
    if data.nrows() != side || data.ncols() != side {
        return Err(OperatorError::Shape {
            dims: dims.to_vec(),
            rows: data.nrows(),
            cols: data.ncols(),
            expected: side,
        });
    }
    Ok(())
}

fn same_dims(left: &[usize], right: &[usize]) -> Result<(), OperatorError> {
    if left != right {
        return Err(OperatorError::DimsMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        });
    }
    Ok(())
}

/// Flat basis index of a product state given per-subsystem levels.
pub fn basis_index(dims: &[usize], levels: &[usize]) -> Result<usize, OperatorError> {
    if dims.len() != levels.len() {
        return Err(OperatorError::DimsMismatch {
            left: dims.to_vec(),
            right: levels.to_vec(),
        });
    }
    let mut index = 0;
    for (&d, &l) in dims.iter().zip(levels) {
        if l >= d {
            return Err(OperatorError::InvalidLevel { level: l, dim: d });
        }
        index = index * d + l;
    }
    Ok(index)
}

/// `|i⟩⟨j|` on a single subsystem of dimension `d`.
pub fn ket_bra(d: usize, i: usize, j: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(d, d);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

/// Truncated bosonic lowering operator.
pub fn annihilation(d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn number(d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::new(i as f64, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// A square complex matrix tagged with the subsystem dimensions it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    dims: Vec<usize>,
    data: DMatrix<C64>,
}

impl LabeledOperator {
    pub fn new(dims: Vec<usize>, data: DMatrix<C64>) -> Result<Self, OperatorError> {
        check_square(&dims, &data)?;
        Ok(Self { dims, data })
    }

    pub fn identity(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: DMatrix::zeros(n, n),
        }
    }

    /// Places `local` on subsystem `site` and identities elsewhere.
    pub fn embed(dims: &[usize], site: usize, local: &DMatrix<C64>) -> Result<Self, OperatorError> {
        if site >= dims.len() {
            return Err(OperatorError::InvalidSubsystem {
                index: site,
                count: dims.len(),
            });
        }
        check_square(&dims[site..=site], local)?;
        let factors: Vec<LabeledOperator> = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                if k == site {
                    LabeledOperator {
                        dims: vec![d],
                        data: local.clone(),
                    }
                } else {
                    LabeledOperator::identity(&[d])
                }
            })
            .collect();
        Ok(tensor(&factors))
    }

    /// `|a⟩⟨b|` between two product basis states given as level lists.
    pub fn transition(dims: &[usize], to: &[usize], from: &[usize]) -> Result<Self, OperatorError> {
        let i = basis_index(dims, to)?;
        let j = basis_index(dims, from)?;
        let mut op = Self::zeros(dims);
        op.data[(i, j)] = C64::new(1.0, 0.0);
        Ok(op)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: &self.data * c,
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_deviation(&self) -> f64 {
        max_abs_diff(&self.data, &self.data.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, OperatorError> {
        same_dims(&self.dims, &other.dims)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: &self.data + &other.data,
        })
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, OperatorError> {
        same_dims(&self.dims, &other.dims)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: &self.data * &other.data,
        })
    }

    /// Max elementwise distance to another operator on the same space.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "operator dims differ");
        max_abs_diff(&self.data, &other.data)
    }
}

/// Panics if the operands act on different spaces.
impl std::ops::Add for &LabeledOperator {
    type Output = LabeledOperator;

    fn add(self, rhs: Self) -> LabeledOperator {
        self.try_add(rhs).expect("operator dims differ")
    }
}

/// Panics if the operands act on different spaces.
impl std::ops::Sub for &LabeledOperator {
    type Output = LabeledOperator;

    fn sub(self, rhs: Self) -> LabeledOperator {
        same_dims(&self.dims, &rhs.dims).expect("operator dims differ");
        LabeledOperator {
            dims: self.dims.clone(),
            data: &self.data - &rhs.data,
        }
    }
}

/// Matrix product. Panics if the operands act on different spaces.
impl std::ops::Mul for &LabeledOperator {
    type Output = LabeledOperator;

    fn mul(self, rhs: Self) -> LabeledOperator {
        self.try_mul(rhs).expect("operator dims differ")
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Kronecker product in the order given; dims are concatenated.
///
/// Panics on an empty factor list.
pub fn tensor(factors: &[LabeledOperator]) -> LabeledOperator {
    let (first, rest) = factors.split_first().expect("tensor of zero factors");
    rest.iter().fold(first.clone(), |acc, f| {
        let mut dims = acc.dims;
        dims.extend_from_slice(&f.dims);
        LabeledOperator {
            dims,
            data: acc.data.kronecker(&f.data),
        }
    })
}

/// Normalized pure state on a labelled space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    dims: Vec<usize>,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub const NORM_TOLERANCE: f64 = 1e-10;

    pub fn new(dims: Vec<usize>, amplitudes: DVector<C64>) -> Result<Self, OperatorError> {
        let n = check_dims(&dims)?;
        if amplitudes.len() != n {
            return Err(OperatorError::Shape {
                dims,
                rows: amplitudes.len(),
                cols: 1,
                expected: n,
            });
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(OperatorError::NotNormalized(norm));
        }
        Ok(Self { dims, amplitudes })
    }

    /// Normalizes `amplitudes` before construction.
    pub fn normalized(dims: Vec<usize>, amplitudes: DVector<C64>) -> Result<Self, OperatorError> {
        let norm = amplitudes.norm();
        if norm == 0.0 {
            return Err(OperatorError::NotNormalized(0.0));
        }
        Self::new(dims, amplitudes / C64::new(norm, 0.0))
    }

    pub fn basis(dims: &[usize], levels: &[usize]) -> Result<Self, OperatorError> {
        let n = check_dims(dims)?;
        let i = basis_index(dims, levels)?;
        let mut v = DVector::zeros(n);
        v[i] = C64::new(1.0, 0.0);
        Ok(Self {
            dims: dims.to_vec(),
            amplitudes: v,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, levels: &[usize]) -> Result<C64, OperatorError> {
        Ok(self.amplitudes[basis_index(&self.dims, levels)?])
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<C64, OperatorError> {
        same_dims(&self.dims, &other.dims)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `⟨self|op|self⟩`.
    pub fn expectation(&self, op: &LabeledOperator) -> Result<C64, OperatorError> {
        same_dims(&self.dims, &op.dims)?;
        Ok(self.amplitudes.dotc(&(&op.data * &self.amplitudes)))
    }

    pub fn apply(&self, op: &LabeledOperator) -> Result<DVector<C64>, OperatorError> {
        same_dims(&self.dims, &op.dims)?;
        Ok(&op.data * &self.amplitudes)
    }

    /// `self ⊗ other`.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self {
            dims,
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            dims: self.dims.clone(),
            data: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Tolerances for the three physicality checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateTolerances {
    pub hermiticity: f64,
    pub trace: f64,
    pub eigenvalue: f64,
}

impl StateTolerances {
    /// Invariants every constructed [`DensityMatrix`] satisfies.
    pub const STRICT: Self = Self {
        hermiticity: 1e-10,
        trace: 1e-9,
        eigenvalue: 1e-8,
    };

    pub fn uniform(tol: f64) -> Self {
        Self {
            hermiticity: tol,
            trace: tol,
            eigenvalue: tol,
        }
    }
}

/// Physicality diagnostics of a candidate density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateReport {
    pub hermiticity_deviation: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

impl StateReport {
    pub fn trace_deviation(&self) -> f64 {
        (self.trace - 1.0).abs()
    }

    pub fn passes(&self, tol: &StateTolerances) -> bool {
        self.hermiticity_deviation <= tol.hermiticity
            && self.trace_deviation() <= tol.trace
            && self.min_eigenvalue >= -tol.eigenvalue
    }
}

impl fmt::Display for StateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: hermiticity {:.3e}, trace {:.12}, min eigenvalue {:.3e}",
            if self.pass { "pass" } else { "fail" },
            self.hermiticity_deviation,
            self.trace,
            self.min_eigenvalue
        )
    }
}

/// Density matrix on a labelled space.
///
/// [`DensityMatrix::new`] enforces [`StateTolerances::STRICT`];
/// [`DensityMatrix::from_raw`] skips the check so that arbitrary matrices can
/// be diagnosed with [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    data: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn new(dims: Vec<usize>, data: DMatrix<C64>) -> Result<Self, OperatorError> {
        let rho = Self::from_raw(dims, data)?;
        let report = diagnose(&rho.data, &StateTolerances::STRICT);
        if !report.pass {
            return Err(OperatorError::Unphysical(report));
        }
        Ok(rho)
    }

    /// Shape-checked only.
    pub fn from_raw(dims: Vec<usize>, data: DMatrix<C64>) -> Result<Self, OperatorError> {
        check_square(&dims, &data)?;
        Ok(Self { dims, data })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        psi.to_density()
    }

    pub fn basis(dims: &[usize], levels: &[usize]) -> Result<Self, OperatorError> {
        Ok(StateVector::basis(dims, levels)?.to_density())
    }

    /// `I/d`.
    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: DMatrix::identity(n, n) * C64::new(1.0 / n as f64, 0.0),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace().re
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ.
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn element(&self, row: &[usize], col: &[usize]) -> Result<C64, OperatorError> {
        Ok(self.data[(basis_index(&self.dims, row)?, basis_index(&self.dims, col)?)])
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_part(&self.data)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "state dims differ");
        max_abs_diff(&self.data, &other.data)
    }
}

fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn diagnose(m: &DMatrix<C64>, tol: &StateTolerances) -> StateReport {
    let hermiticity_deviation = max_abs_diff(m, &m.adjoint());
    let trace = m.trace().re;
    let min_eigenvalue = SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut report = StateReport {
        hermiticity_deviation,
        trace,
        min_eigenvalue,
        pass: false,
    };
    report.pass = report.passes(tol);
    report
}

/// Hermiticity, trace and positivity diagnostics at a uniform tolerance.
pub fn validate_state(rho: &DensityMatrix, tol: f64) -> StateReport {
    diagnose(&rho.data, &StateTolerances::uniform(tol))
}

/// Diagnostics against per-check tolerances.
pub fn validate_state_with(rho: &DensityMatrix, tol: &StateTolerances) -> StateReport {
    diagnose(&rho.data, tol)
}

/// `Tr(ρ·op)`.
pub fn expectation(rho: &DensityMatrix, op: &LabeledOperator) -> Result<C64, OperatorError> {
    same_dims(&rho.dims, &op.dims)?;
    let n = rho.dim();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += rho.data[(i, j)] * op.data[(j, i)];
        }
    }
    Ok(acc)
}

/// Reduced state on the subsystems listed in `keep` (kept in ascending order).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix, OperatorError> {
    let count = rho.dims.len();
    if keep.is_empty() {
        return Err(OperatorError::EmptyKeep);
    }
    if let Some(&index) = keep.iter().find(|&&k| k >= count) {
        return Err(OperatorError::InvalidSubsystem { index, count });
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();

    let dims = &rho.dims;
    let new_dims: Vec<usize> = kept.iter().map(|&k| dims[k]).collect();
    let m: usize = new_dims.iter().product();
    let n = rho.dim();

    // Per-site digits of every basis index.
    let digits: Vec<Vec<usize>> = (0..n)
        .map(|mut idx| {
            let mut d = vec![0; count];
            for site in (0..count).rev() {
                d[site] = idx % dims[site];
                idx /= dims[site];
            }
            d
        })
        .collect();
    let is_kept: Vec<bool> = (0..count).map(|s| kept.contains(&s)).collect();
    let reduced_index = |d: &[usize]| kept.iter().fold(0, |acc, &s| acc * dims[s] + d[s]);

    let mut out = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            let traced_match = (0..count).all(|s| is_kept[s] || digits[i][s] == digits[j][s]);
            if traced_match {
                out[(reduced_index(&digits[i]), reduced_index(&digits[j]))] += rho.data[(i, j)];
            }
        }
    }
    Ok(DensityMatrix {
        dims: new_dims,
        data: out,
    })
}

/// Two-transmon reduced state; states already on the qutrit pair pass through.
pub fn qutrit_pair_state(rho: &DensityMatrix) -> Result<DensityMatrix, OperatorError> {
    match rho.dims() {
        d if d == QUTRIT_PAIR_DIMS => Ok(rho.clone()),
        d if d == FULL_DIMS => partial_trace(rho, &[Q1, Q2]),
        d => Err(OperatorError::DimsMismatch {
            left: d.to_vec(),
            right: FULL_DIMS.to_vec(),
        }),
    }
}
