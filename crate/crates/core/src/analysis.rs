//! Error populations, logical coherence, exponential fits and the ZZ
//! error-transparency and dispersive-shift formulas.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{error_projector_on, logical_x, DeviceParams, LogicalLabel};
use crate::operators::{expectation, qutrit_pair_state, DensityMatrix, OperatorError, QUTRIT_PAIR_DIMS};
use crate::solver::golden_min;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("need at least {needed} points after the skip window, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("decay time is unidentifiable: {0}")]
    Unidentifiable(String),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("near-resonant denominator {denominator:e} MHz for transition {transition}")]
    NearResonance { transition: String, denominator: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Weight in the error space monitored for `label` (full or two-transmon state).
pub fn error_population(rho: &DensityMatrix, label: LogicalLabel) -> Result<f64, AnalysisError> {
    let pair = qutrit_pair_state(rho)?;
    Ok(expectation(&pair, &error_projector_on(&QUTRIT_PAIR_DIMS, label))?.re)
}

/// Logical coherence normalized so that the ideal state scores 1:
/// `2|⟨gf|ρ|fg⟩|` for L0, `2|⟨gg|ρ|ff⟩|` for L1 and `|Tr ρX̃|` for Lx.
pub fn coherence_metric(rho: &DensityMatrix, label: LogicalLabel) -> Result<f64, AnalysisError> {
    let pair = qutrit_pair_state(rho)?;
    let m = pair.matrix();
    let idx = |a: usize, b: usize| a * 3 + b;
    Ok(match label {
        LogicalLabel::L0 => 2.0 * m[(idx(0, 2), idx(2, 0))].norm(),
        LogicalLabel::L1 => 2.0 * m[(idx(0, 0), idx(2, 2))].norm(),
        LogicalLabel::Lx => expectation(&pair, &logical_x(&QUTRIT_PAIR_DIMS))?.norm(),
    })
}

/// `A·exp(−t/τ) + C` with the 1σ uncertainty of τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    #[serde(rename = "A")]
    pub a: f64,
    pub tau: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub sigma_tau: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
}

impl DecayFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.a * (-t / self.tau).exp() + self.c
    }
}

/// Best `(A, C, RSS)` for a fixed τ.
fn linear_part(t: &[f64], y: &[f64], tau: f64) -> (f64, f64, f64) {
    let mut ata = Matrix2::<f64>::zeros();
    let mut aty = Vector2::<f64>::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let e = (-ti / tau).exp();
        let row = Vector2::new(e, 1.0);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let Some(sol) = ata.lu().solve(&aty) else {
        return (0.0, 0.0, f64::INFINITY);
    };
    let rss = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (yi - sol[0] * (-ti / tau).exp() - sol[1]).powi(2))
        .sum();
    (sol[0], sol[1], rss)
}

/// Least-squares fit of `A·exp(−t/τ) + C` to the samples with `t ≥ skip_initial`.
///
/// τ is found by a log-spaced scan followed by golden-section refinement,
/// with `A` and `C` solved linearly at each trial τ.
pub fn fit_exponential(t: &[f64], y: &[f64], skip_initial: f64) -> Result<DecayFit, AnalysisError> {
    if t.len() != y.len() {
        return Err(AnalysisError::InvalidInput(format!(
            "{} times but {} values",
            t.len(),
            y.len()
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite sample".into()));
    }
    let (t, y): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(&ti, _)| ti >= skip_initial)
        .map(|(&a, &b)| (a, b))
        .unzip();
    let n = t.len();
    if n < 4 {
        return Err(AnalysisError::InsufficientData { needed: 4, got: n });
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * mean.abs().max(1.0) {
        return Err(AnalysisError::Unidentifiable("data are constant".into()));
    }
    let t_min = t.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = t_max - t_min;
    if span <= 0.0 {
        return Err(AnalysisError::Unidentifiable("all samples at one time".into()));
    }
    let mut dt = span;
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            dt = dt.min(w[1] - w[0]);
        }
    }
    // Shift times so the linear solve stays well conditioned; A is mapped
    // back to the caller's origin at the end.
    let ts: Vec<f64> = t.iter().map(|v| v - t_min).collect();
    let rss = |log_tau: f64| linear_part(&ts, &y, log_tau.exp()).2;
    let (lo, hi) = ((dt / 20.0).ln(), (span * 1e3).ln());
    let samples = 600;
    let step = (hi - lo) / samples as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..=samples {
        let r = rss(lo + step * i as f64);
        if r < best.1 {
            best = (i, r);
        }
    }
    if best.0 == 0 || best.0 == samples {
        return Err(AnalysisError::NonConvergence(format!(
            "optimal τ at the edge of the search range [{:.3e}, {:.3e}] µs",
            lo.exp(),
            hi.exp()
        )));
    }
    let centre = lo + step * best.0 as f64;
    let log_tau = golden_min(rss, centre - step, centre + step, 1e-14);
    let tau = log_tau.exp();
    let (a_shifted, c, rss_min) = linear_part(&ts, &y, tau);
    if a_shifted.abs() <= 1e-12 * spread.max(1e-300) {
        return Err(AnalysisError::Unidentifiable("fitted amplitude vanishes".into()));
    }

    // Covariance from the Jacobian at the optimum.
    let mut jtj = Matrix3::<f64>::zeros();
    for &ti in &ts {
        let e = (-ti / tau).exp();
        let row = nalgebra::Vector3::new(e, a_shifted * ti / (tau * tau) * e, 1.0);
        jtj += row * row.transpose();
    }
    let sigma_tau = if n > 3 {
        let s2 = rss_min / (n - 3) as f64;
        match jtj.try_inverse() {
            Some(cov) => (s2 * cov[(1, 1)]).max(0.0).sqrt(),
            None => return Err(AnalysisError::Unidentifiable("singular fit Jacobian".into())),
        }
    } else {
        0.0
    };
    Ok(DecayFit {
        a: a_shifted * (t_min / tau).exp(),
        tau,
        c,
        sigma_tau,
        residual_norm: rss_min.sqrt(),
    })
}

/// Two-transmon level energies `E_jk` (MHz) with `E_00 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpec {
    levels: usize,
    energies: DMatrix<f64>,
}

/// Measured two-transmon ZZ shifts (MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZzTable {
    pub ge: f64,
    pub ef1: f64,
    pub ef2: f64,
    pub ff1: f64,
    pub ff2: f64,
    pub gf1: f64,
    pub gf2: f64,
}

impl ZzTable {
    /// Values measured at the operating flux point.
    pub fn reference() -> Self {
        Self {
            ge: -0.261,
            ef1: -0.130,
            ef2: -0.301,
            ff1: -0.171,
            ff2: -0.289,
            gf1: -0.619,
            gf2: -0.464,
        }
    }
}

impl LevelSpec {
    /// Energies are shifted so that `E_00 = 0`.
    pub fn new(energies: DMatrix<f64>) -> Result<Self, AnalysisError> {
        let levels = energies.nrows();
        if levels < 2 || energies.ncols() != levels {
            return Err(AnalysisError::InvalidInput(format!(
                "level table must be square with at least 2 levels, got {}x{}",
                energies.nrows(),
                energies.ncols()
            )));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(AnalysisError::InvalidInput("non-finite level energy".into()));
        }
        let e00 = energies[(0, 0)];
        Ok(Self {
            levels,
            energies: energies.map(|e| e - e00),
        })
    }

    /// Uncoupled Duffing oscillators.
    pub fn duffing(levels: usize, omega_1: f64, alpha_1: f64, omega_2: f64, alpha_2: f64) -> Self {
        let single = |w: f64, a: f64, n: usize| n as f64 * w + a * (n * n.saturating_sub(1)) as f64 / 2.0;
        let energies = DMatrix::from_fn(levels, levels, |j, k| single(omega_1, alpha_1, j) + single(omega_2, alpha_2, k));
        Self { levels, energies }
    }

    pub fn harmonic(levels: usize, omega_1: f64, omega_2: f64) -> Self {
        Self::duffing(levels, omega_1, 0.0, omega_2, 0.0)
    }

    /// Duffing levels plus the cross-Kerr series `Σ J_ab j^a k^b`.
    pub fn from_device(device: &DeviceParams, levels: usize) -> Self {
        let mut spec = Self::duffing(levels, device.omega_q1, device.alpha_1, device.omega_q2, device.alpha_2);
        for j in 0..levels {
            for k in 0..levels {
                let mut shift = 0.0;
                for (a, row) in device.j.iter().enumerate() {
                    for (b, &coupling) in row.iter().enumerate() {
                        shift += coupling * (j as f64).powi(a as i32 + 1) * (k as f64).powi(b as i32 + 1);
                    }
                }
                spec.energies[(j, k)] += shift;
            }
        }
        spec
    }

    /// Adds interaction shifts reproducing `ZZ_ge`, `ZZ_ef2`, `ZZ_ff1` and
    /// `ZZ_ff2` exactly. The remaining table entries over-determine the
    /// three-level interaction and are not used.
    pub fn with_zz_table(mut self, zz: &ZzTable) -> Self {
        let d11 = zz.ge;
        let d12 = d11 + zz.ef2;
        let d22 = d12 + zz.ff1;
        let d21 = d22 - zz.ff2;
        for (j, k, d) in [(1, 1, d11), (1, 2, d12), (2, 2, d22), (2, 1, d21)] {
            if j < self.levels && k < self.levels {
                self.energies[(j, k)] += d;
            }
        }
        self
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn energy(&self, j: usize, k: usize) -> Option<f64> {
        (j < self.levels && k < self.levels).then(|| self.energies[(j, k)])
    }

    /// Energy with a shift applied to every level.
    pub fn shifted(&self, shift: impl Fn(usize, usize) -> f64) -> Result<Self, AnalysisError> {
        let energies = DMatrix::from_fn(self.levels, self.levels, |j, k| self.energies[(j, k)] + shift(j, k));
        Self::new(energies)
    }

    /// Levels dressed by the second-order shifts of several detuned sidebands.
    pub fn dressed(&self, drives: &[SidebandDrive]) -> Result<Self, AnalysisError> {
        let mut total = DMatrix::zeros(self.levels, self.levels);
        for d in drives {
            for j in 0..self.levels {
                for k in 0..self.levels {
                    total[(j, k)] += dispersive_shift(self, d.g, d.nu, d.kind, j, k)?;
                }
            }
        }
        self.shifted(|j, k| total[(j, k)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidebandKind {
    Red,
    Blue,
}

/// A detuned QQ sideband `2g·sin(2πνt)` through the coupler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidebandDrive {
    pub kind: SidebandKind,
    pub g: f64,
    pub nu: f64,
}

const RESONANCE_GUARD: f64 = 1e-6;

/// Second-order energy shift of `|jk⟩` (MHz) from a QQ sideband of strength
/// `g` at modulation frequency `nu`. Partner states outside the level table
/// contribute nothing.
pub fn dispersive_shift(
    levels: &LevelSpec,
    g: f64,
    nu: f64,
    kind: SidebandKind,
    j: usize,
    k: usize,
) -> Result<f64, AnalysisError> {
    let here = levels.energy(j, k).ok_or_else(|| {
        AnalysisError::InvalidInput(format!("level ({j},{k}) outside a {}-level table", levels.levels))
    })?;
    let (j_i, k_i) = (j as i64, k as i64);
    // (partner, bosonic factor)
    let partners: [((i64, i64), i64); 2] = match kind {
        SidebandKind::Red => [((j_i - 1, k_i + 1), j_i * (k_i + 1)), ((j_i + 1, k_i - 1), (j_i + 1) * k_i)],
        SidebandKind::Blue => [((j_i + 1, k_i + 1), (j_i + 1) * (k_i + 1)), ((j_i - 1, k_i - 1), j_i * k_i)],
    };
    let mut total = 0.0;
    for ((pj, pk), factor) in partners {
        if factor == 0 || pj < 0 || pk < 0 {
            continue;
        }
        let Some(there) = levels.energy(pj as usize, pk as usize) else {
            continue;
        };
        let gap = here - there;
        for den in [gap - nu, gap + nu] {
            if den.abs() < RESONANCE_GUARD {
                return Err(AnalysisError::NearResonance {
                    transition: format!("|{j}{k}⟩↔|{pj}{pk}⟩"),
                    denominator: den,
                });
            }
            total += g * g * factor as f64 / den;
        }
    }
    Ok(total)
}

/// `((E_ff−E_ef)−(E_fg−E_eg), (E_ff−E_fe)−(E_gf−E_ge))`; zero means the
/// error correction leaves no relative logical phase.
pub fn error_transparency_residual(levels: &LevelSpec) -> (f64, f64) {
    let e = |j, k| levels.energies[(j, k)];
    (
        (e(2, 2) - e(1, 2)) - (e(2, 0) - e(1, 0)),
        (e(2, 2) - e(2, 1)) - (e(0, 2) - e(0, 1)),
    )
}

/// Result of the two-sideband ZZ cancellation search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZzCancellation {
    /// Modulation frequencies of the sidebands near `|ef⟩↔|gh⟩` and `|fe⟩↔|hg⟩`.
    pub nu: (f64, f64),
    pub residual: (f64, f64),
    pub iterations: usize,
}

/// Finds modulation frequencies of two red sidebands of strength `g` (near
/// `|ef⟩↔|gh⟩` and `|fe⟩↔|hg⟩`) that null both transparency residuals.
/// Needs a table with at least four levels; `start` is the initial guess.
pub fn cancel_error_zz(levels: &LevelSpec, g: f64, start: (f64, f64)) -> Result<ZzCancellation, AnalysisError> {
    if levels.levels < 4 {
        return Err(AnalysisError::InvalidInput("cancellation sidebands need the fourth level".into()));
    }
    if !(g > 0.0 && g.is_finite()) {
        return Err(AnalysisError::InvalidInput(format!("coupling must be positive, got {g}")));
    }
    let residual = |nu: Vector2<f64>| -> Result<Vector2<f64>, AnalysisError> {
        let dressed = levels.dressed(&[
            SidebandDrive {
                kind: SidebandKind::Red,
                g,
                nu: nu[0],
            },
            SidebandDrive {
                kind: SidebandKind::Red,
                g,
                nu: nu[1],
            },
        ])?;
        let (a, b) = error_transparency_residual(&dressed);
        Ok(Vector2::new(a, b))
    };
    let mut nu = Vector2::new(start.0, start.1);
    let mut r = residual(nu)?;
    for iteration in 0..200 {
        if r.norm() < 1e-9 {
            return Ok(ZzCancellation {
                nu: (nu[0], nu[1]),
                residual: (r[0], r[1]),
                iterations: iteration,
            });
        }
        let h = 1e-6 * nu.norm().max(1.0);
        let mut jac = Matrix2::<f64>::zeros();
        for c in 0..2 {
            let mut p = nu;
            p[c] += h;
            let mut m = nu;
            m[c] -= h;
            let col = (residual(p)? - residual(m)?) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let step = jac
            .lu()
            .solve(&(-r))
            .ok_or_else(|| AnalysisError::NonConvergence("singular Jacobian".into()))?;
        let mut damping = 1.0;
        loop {
            let trial = nu + step * damping;
            if let Ok(rt) = residual(trial) {
                if rt.norm() < r.norm() {
                    nu = trial;
                    r = rt;
                    break;
                }
            }
            damping *= 0.5;
            if damping < 1e-6 {
                return Err(AnalysisError::NonConvergence(format!(
                    "line search stalled at ν = ({:.6}, {:.6}) MHz",
                    nu[0], nu[1]
                )));
            }
        }
    }
    Err(AnalysisError::NonConvergence("iteration cap reached".into()))
}
