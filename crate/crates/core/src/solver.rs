//! Lindblad master-equation integration and related rate formulas.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    build_swept_hamiltonian, number_operator, Coefficient, DeviceParams, DriveConfig, HamiltonianSpec, SweepAxis,
};
use crate::operators::{
    expectation, validate_state, DensityMatrix, LabeledOperator, OperatorError, StateReport, Q1, Q2,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("step size underflow at t = {t} µs (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t} µs")]
    StepBudget { t: f64, max_steps: usize },
    #[error("trace drift {drift:e} at t = {t} µs exceeds the renormalization limit")]
    TraceDrift { t: f64, drift: f64 },
    #[error("unphysical snapshot at t = {t} µs ({report})")]
    Unphysical { t: f64, report: StateReport },
    #[error("malformed snapshot dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Step control for [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step (µs).
    pub max_step: f64,
    pub max_steps: usize,
    /// Snapshot trace drift above this is an error; below it is renormalized.
    pub renormalize_limit: f64,
    /// Physicality tolerance applied to every snapshot.
    pub snapshot_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: 0.01,
            max_steps: 50_000_000,
            renormalize_limit: 1e-6,
            snapshot_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest `|Tr ρ − 1|` seen at a snapshot before renormalization.
    pub max_trace_drift: f64,
}

/// Snapshots of `ρ(t)` on a strictly increasing time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        self.states[0].dims()
    }
}

/// Sparse operator as `(row, col, value)` triplets.
#[derive(Debug, Clone)]
struct Sparse {
    entries: Vec<(usize, usize, C64)>,
}

impl Sparse {
    fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }
}

/// Right-hand side `dρ = −i(H_eff ρ − ρ H_eff†) + Σ L ρ L†` with
/// `H_eff = H − (i/2) Σ L†L`, on row-major `n×n` buffers.
struct Liouvillian {
    n: usize,
    h_eff: Sparse,
    driven: Vec<(Coefficient, Sparse)>,
    jumps: Vec<Sparse>,
}

impl Liouvillian {
    fn new(h: &HamiltonianSpec, collapse: &[LabeledOperator]) -> Result<Self, SolverError> {
        let dims = h.dims();
        let mut h_eff = h.constant().matrix().clone();
        for l in collapse {
            if l.dims() != dims {
                return Err(OperatorError::DimsMismatch {
                    left: dims.to_vec(),
                    right: l.dims().to_vec(),
                }
                .into());
            }
            h_eff -= (l.matrix().adjoint() * l.matrix()) * C64::new(0.0, 0.5);
        }
        Ok(Self {
            n: h_eff.nrows(),
            h_eff: Sparse::from_dense(&h_eff),
            driven: h
                .driven()
                .iter()
                .map(|(c, op)| (c.clone(), Sparse::from_dense(op.matrix())))
                .collect(),
            jumps: collapse.iter().map(|l| Sparse::from_dense(l.matrix())).collect(),
        })
    }

    fn apply(&self, t: f64, rho: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        let n = self.n;
        scratch.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut accumulate = |entries: &[(usize, usize, C64)], scale: C64| {
            for &(a, i, h) in entries {
                let hv = h * scale;
                let dst = &mut scratch[a * n..(a + 1) * n];
                let src = &rho[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += hv * s;
                }
            }
        };
        accumulate(&self.h_eff.entries, C64::new(1.0, 0.0));
        for (c, op) in &self.driven {
            accumulate(&op.entries, C64::new(c.eval(t), 0.0));
        }
        // −i(M − M†) with M = H_eff ρ.
        for a in 0..n {
            for b in 0..n {
                let m = scratch[a * n + b] - scratch[b * n + a].conj();
                out[a * n + b] = C64::new(m.im, -m.re);
            }
        }
        for l in &self.jumps {
            for &(a, i, la) in &l.entries {
                for &(b, j, lb) in &l.entries {
                    out[a * n + b] += la * rho[i * n + j] * lb.conj();
                }
            }
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a> {
    rhs: &'a Liouvillian,
    opts: SolverOptions,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    scratch: Vec<C64>,
    y_new: Vec<C64>,
    stats: SolverStats,
}

impl<'a> Stepper<'a> {
    fn new(rhs: &'a Liouvillian, opts: SolverOptions) -> Self {
        let len = rhs.n * rhs.n;
        let zeros = || vec![C64::new(0.0, 0.0); len];
        Self {
            rhs,
            opts,
            k: std::array::from_fn(|_| zeros()),
            tmp: zeros(),
            scratch: zeros(),
            y_new: zeros(),
            stats: SolverStats::default(),
        }
    }

    fn stage(&mut self, t: f64, y: &[C64], h: f64, coeffs: &[f64], out: usize) {
        for (idx, slot) in self.tmp.iter_mut().enumerate() {
            let mut acc = y[idx];
            for (s, &c) in coeffs.iter().enumerate() {
                if c != 0.0 {
                    acc += self.k[s][idx] * (h * c);
                }
            }
            *slot = acc;
        }
        self.rhs.apply(t, &self.tmp, &mut self.k[out], &mut self.scratch);
    }

    /// Integrates `y` from `t` to `t_end`, reusing `h` as the step guess.
    fn advance(&mut self, t: &mut f64, y: &mut Vec<C64>, t_end: f64, h: &mut f64) -> Result<(), SolverError> {
        let (rtol, atol) = (self.opts.rtol, self.opts.atol);
        self.rhs.apply(*t, y, &mut self.k[0], &mut self.scratch);
        while *t < t_end {
            let total = self.stats.accepted_steps + self.stats.rejected_steps;
            if total >= self.opts.max_steps {
                return Err(SolverError::StepBudget {
                    t: *t,
                    max_steps: self.opts.max_steps,
                });
            }
            let remaining = t_end - *t;
            let last = *h >= remaining;
            let step = if last { remaining } else { *h };
            if step < 1e-13 * t.abs().max(1.0) && !last {
                return Err(SolverError::StepUnderflow { t: *t, h: step });
            }
            let t0 = *t;
            self.stage(t0 + C2 * step, y, step, &[A21], 1);
            self.stage(t0 + C3 * step, y, step, &[A31, A32], 2);
            self.stage(t0 + C4 * step, y, step, &[A41, A42, A43], 3);
            self.stage(t0 + C5 * step, y, step, &[A51, A52, A53, A54], 4);
            self.stage(t0 + step, y, step, &[A61, A62, A63, A64, A65], 5);
            #[allow(clippy::needless_range_loop)]
            for idx in 0..y.len() {
                self.y_new[idx] = y[idx]
                    + (self.k[0][idx] * B1
                        + self.k[2][idx] * B3
                        + self.k[3][idx] * B4
                        + self.k[4][idx] * B5
                        + self.k[5][idx] * B6)
                        * step;
            }
            let y_new = std::mem::take(&mut self.y_new);
            self.rhs.apply(t0 + step, &y_new, &mut self.k[6], &mut self.scratch);
            let mut err_sq = 0.0;
            for idx in 0..y.len() {
                let e = (self.k[0][idx] * E1
                    + self.k[2][idx] * E3
                    + self.k[3][idx] * E4
                    + self.k[4][idx] * E5
                    + self.k[5][idx] * E6
                    + self.k[6][idx] * E7)
                    * step;
                let sc = atol + rtol * y[idx].norm().max(y_new[idx].norm());
                err_sq += (e.norm() / sc).powi(2);
            }
            let err = (err_sq / y.len() as f64).sqrt();
            self.y_new = y_new;
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                self.stats.accepted_steps += 1;
                *t = if last { t_end } else { t0 + step };
                std::mem::swap(y, &mut self.y_new);
                self.k.swap(0, 6);
                // Keep the pre-clipping step so that short grid gaps do not
                // shrink the next step.
                if !last || factor < 1.0 {
                    *h = (step * factor).min(self.opts.max_step);
                }
            } else {
                self.stats.rejected_steps += 1;
                *h = (step * factor.min(1.0)).min(self.opts.max_step);
            }
        }
        Ok(())
    }
}

fn check_grid(times: &[f64]) -> Result<(), SolverError> {
    if times.is_empty() {
        return Err(SolverError::InvalidGrid("empty".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(SolverError::InvalidGrid("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::InvalidGrid("times must be strictly increasing".into()));
    }
    Ok(())
}

fn to_row_major(m: &DMatrix<C64>) -> Vec<C64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(n: usize, v: &[C64]) -> DMatrix<C64> {
    DMatrix::from_row_slice(n, n, v)
}

/// Integrates the Lindblad equation from `times[0]`, recording `ρ` at every
/// grid time. `rho0` is the state at `times[0]`.
pub fn evolve(
    h: &HamiltonianSpec,
    collapse: &[LabeledOperator],
    rho0: &DensityMatrix,
    times: &[f64],
    options: &SolverOptions,
) -> Result<Trajectory, SolverError> {
    check_grid(times)?;
    if rho0.dims() != h.dims() {
        return Err(OperatorError::DimsMismatch {
            left: h.dims().to_vec(),
            right: rho0.dims().to_vec(),
        }
        .into());
    }
    if !(options.rtol > 0.0 && options.atol > 0.0 && options.max_step > 0.0) {
        return Err(SolverError::InvalidInput("tolerances and max_step must be positive".into()));
    }
    let initial = validate_state(rho0, options.snapshot_tol);
    if !initial.pass {
        return Err(SolverError::Unphysical {
            t: times[0],
            report: initial,
        });
    }
    let rhs = Liouvillian::new(h, collapse)?;
    let n = rhs.n;
    let dims = rho0.dims().to_vec();
    let mut stepper = Stepper::new(&rhs, *options);
    let mut y = to_row_major(rho0.matrix());
    let mut t = times[0];
    let mut step = options.max_step.min(1e-3);
    let mut states = Vec::with_capacity(times.len());
    states.push(rho0.clone());
    for &target in &times[1..] {
        stepper.advance(&mut t, &mut y, target, &mut step)?;
        let trace: C64 = (0..n).map(|i| y[i * n + i]).sum();
        let drift = (trace.re - 1.0).abs();
        stepper.stats.max_trace_drift = stepper.stats.max_trace_drift.max(drift);
        if drift > options.renormalize_limit {
            return Err(SolverError::TraceDrift { t: target, drift });
        }
        let scale = 1.0 / trace.re;
        y.iter_mut().for_each(|z| *z *= scale);
        let rho = DensityMatrix::from_raw(dims.clone(), from_row_major(n, &y))?;
        let report = validate_state(&rho, options.snapshot_tol);
        if !report.pass {
            return Err(SolverError::Unphysical { t: target, report });
        }
        states.push(rho);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        stats: stepper.stats,
    })
}

/// `n` equally spaced points on `[0, tmax]` (a single point when `n == 1`).
pub fn uniform_grid(tmax: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| tmax * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Real parts of `Tr(ρ(t)·op)`; rows are times, columns are operators.
pub fn observable_series(traj: &Trajectory, ops: &[LabeledOperator]) -> Result<DMatrix<f64>, SolverError> {
    let mut out = DMatrix::zeros(traj.len(), ops.len());
    for (i, rho) in traj.states.iter().enumerate() {
        for (j, op) in ops.iter().enumerate() {
            let v = expectation(rho, op)?;
            if v.im.abs() > 1e-7 {
                log::warn!(
                    "observable {j} has imaginary part {:.3e} at t = {} µs",
                    v.im,
                    traj.times[i]
                );
            }
            out[(i, j)] = v.re;
        }
    }
    Ok(out)
}

/// Two-step refilling rate `Ω²κ/(Ω² + 2κ²)` (MHz).
pub fn refill_rate(omega: f64, kappa: f64) -> Result<f64, SolverError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(SolverError::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(SolverError::InvalidInput(format!("omega must be non-negative, got {omega}")));
    }
    let o2 = omega * omega;
    Ok(o2 * kappa / (o2 + 2.0 * kappa * kappa))
}

/// Transmon populations over a detuning × time grid.
#[derive(Debug, Clone)]
pub struct ChevronMap {
    pub axis: SweepAxis,
    pub detunings: Vec<f64>,
    pub times: Vec<f64>,
    /// `⟨n_q1⟩`, rows are detunings and columns are times.
    pub n_q1: DMatrix<f64>,
    pub n_q2: DMatrix<f64>,
}

impl ChevronMap {
    /// Fringe frequency (MHz) of the `⟨n_q1⟩` or `⟨n_q2⟩` trace at each detuning.
    pub fn fringe_frequencies(&self, transmon: usize) -> Vec<Option<f64>> {
        let map = if transmon == Q2 { &self.n_q2 } else { &self.n_q1 };
        (0..self.detunings.len())
            .map(|i| {
                let row: Vec<f64> = map.row(i).iter().copied().collect();
                fringe_frequency(&self.times, &row)
            })
            .collect()
    }

    /// Detuning of slowest fringe; `None` with fewer than three usable cuts.
    pub fn center_estimate(&self, transmon: usize) -> Option<f64> {
        let freqs = self.fringe_frequencies(transmon);
        let points: Vec<(f64, f64)> = self
            .detunings
            .iter()
            .zip(freqs)
            .filter_map(|(&d, f)| f.map(|f| (d, f)))
            .collect();
        resonance_center(&points)
    }
}

/// Evolves `rho0` (noise-free) in the logical-static frame with one drive
/// frequency offset by each value of `grid`.
pub fn sweep_chevron(
    device: &DeviceParams,
    drive: &DriveConfig,
    axis: SweepAxis,
    grid: &[f64],
    times: &[f64],
    rho0: &DensityMatrix,
    options: &SolverOptions,
) -> Result<ChevronMap, SolverError> {
    if grid.is_empty() {
        return Err(SolverError::InvalidGrid("detuning grid is empty".into()));
    }
    check_grid(times)?;
    let ops = [number_operator(Q1), number_operator(Q2)];
    let rows: Vec<DMatrix<f64>> = grid
        .par_iter()
        .map(|&delta| {
            let h = build_swept_hamiltonian(device, drive, axis, delta);
            let traj = evolve(&h, &[], rho0, times, options)?;
            observable_series(&traj, &ops)
        })
        .collect::<Result<_, _>>()?;
    let mut n_q1 = DMatrix::zeros(grid.len(), times.len());
    let mut n_q2 = DMatrix::zeros(grid.len(), times.len());
    for (i, series) in rows.iter().enumerate() {
        for k in 0..times.len() {
            n_q1[(i, k)] = series[(k, 0)];
            n_q2[(i, k)] = series[(k, 1)];
        }
    }
    Ok(ChevronMap {
        axis,
        detunings: grid.to_vec(),
        times: times.to_vec(),
        n_q1,
        n_q2,
    })
}

/// Residual sum of squares of the best `a + b·cos(2πft) + c·sin(2πft)` fit.
fn sinusoid_rss(t: &[f64], y: &[f64], f: f64) -> f64 {
    let w = std::f64::consts::TAU * f;
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let row = Vector3::new(1.0, (w * ti).cos(), (w * ti).sin());
        ata += row * row.transpose();
        aty += row * yi;
    }
    let coef = match ata.cholesky() {
        Some(ch) => ch.solve(&aty),
        None => return f64::INFINITY,
    };
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let model = coef[0] + coef[1] * (w * ti).cos() + coef[2] * (w * ti).sin();
            (yi - model).powi(2)
        })
        .sum()
}

/// Dominant oscillation frequency (MHz) of a uniformly sampled trace, by a
/// least-squares sinusoid scan refined with golden-section search. `None`
/// for flat traces or fewer than five samples.
pub fn fringe_frequency(times: &[f64], y: &[f64]) -> Option<f64> {
    let n = times.len().min(y.len());
    if n < 5 {
        return None;
    }
    let (t, y) = (&times[..n], &y[..n]);
    let mean = y.iter().sum::<f64>() / n as f64;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if total < 1e-12 * n as f64 {
        return None;
    }
    let span = t[n - 1] - t[0];
    let dt = span / (n - 1) as f64;
    let f_max = 0.5 / dt;
    let f_min = 0.25 / span;
    let samples = 40 * n;
    let df = (f_max - f_min) / samples as f64;
    let (mut best_f, mut best) = (f_min, f64::INFINITY);
    for i in 0..=samples {
        let f = f_min + df * i as f64;
        let r = sinusoid_rss(t, y, f);
        if r < best {
            best = r;
            best_f = f;
        }
    }
    let f = golden_min(|f| sinusoid_rss(t, y, f), (best_f - df).max(f_min * 0.5), best_f + df, 1e-10);
    Some(f)
}

/// Vertex of a quadratic fit of `f²` against detuning.
pub fn resonance_center(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for &(d, f) in points {
        let row = Vector3::new(d * d, d, 1.0);
        ata += row * row.transpose();
        aty += row * (f * f);
    }
    let c = ata.lu().solve(&aty)?;
    (c[0] > 0.0).then(|| -c[1] / (2.0 * c[0]))
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Columnar text: a header row, then one row per time.
pub fn write_series<W: Write>(
    mut out: W,
    headers: &[&str],
    times: &[f64],
    columns: &DMatrix<f64>,
) -> Result<(), SolverError> {
    write!(out, "t_us")?;
    for h in headers {
        write!(out, "\t{h}")?;
    }
    writeln!(out)?;
    for (i, t) in times.iter().enumerate() {
        write!(out, "{t:.6}")?;
        for j in 0..columns.ncols() {
            write!(out, "\t{:.12e}", columns[(i, j)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

const DUMP_MAGIC: &[u8; 8] = b"STARRHO1";

/// Binary snapshot dump: magic, `u32` subsystem count, `u32` dims, `u32`
/// snapshot count, then per snapshot an `f64` time and the row-major
/// matrix as interleaved `(re, im)` `f64` pairs. Little-endian throughout.
pub fn write_snapshots<W: Write>(mut out: W, times: &[f64], states: &[DensityMatrix]) -> Result<(), SolverError> {
    let first = states
        .first()
        .ok_or_else(|| SolverError::Format("no snapshots to write".into()))?;
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&(first.dims().len() as u32).to_le_bytes())?;
    for &d in first.dims() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    out.write_all(&(states.len() as u32).to_le_bytes())?;
    for (t, rho) in times.iter().zip(states) {
        if rho.dims() != first.dims() {
            return Err(SolverError::Format("snapshots differ in dims".into()));
        }
        out.write_all(&t.to_le_bytes())?;
        let m = rho.matrix();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.write_all(&m[(i, j)].re.to_le_bytes())?;
                out.write_all(&m[(i, j)].im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SolverError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, SolverError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a dump produced by [`write_snapshots`]. Matrices are shape-checked
/// only; validate them before use.
pub fn read_snapshots<R: Read>(mut input: R) -> Result<Vec<(f64, DensityMatrix)>, SolverError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(SolverError::Format("bad magic".into()));
    }
    let ndims = read_u32(&mut input)? as usize;
    if ndims == 0 || ndims > 16 {
        return Err(SolverError::Format(format!("implausible subsystem count {ndims}")));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|_| read_u32(&mut input).map(|d| d as usize))
        .collect::<Result<_, _>>()?;
    let n: usize = dims.iter().product();
    if n == 0 || n > 4096 {
        return Err(SolverError::Format(format!("implausible dimension {n}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let t = read_f64(&mut input)?;
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            let re = read_f64(&mut input)?;
            let im = read_f64(&mut input)?;
            data.push(C64::new(re, im));
        }
        out.push((t, DensityMatrix::from_raw(dims.clone(), from_row_major(n, &data))?));
    }
    Ok(out)
}
