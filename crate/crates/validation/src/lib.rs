//! Independent reference calculations used by the acceptance suite.

use std::f64::consts::TAU;

use anyhow::{ensure, Context, Result};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use starcode::operators::{basis_index, LabeledOperator, FULL_DIMS};
use starcode::solver::uniform_grid;
use starcode::{
    build_static_hamiltonian, collapse_operators, dispersive_shift, evolve, fit_exponential, logical_state,
    observable_series, refill_rate, DensityMatrix, DeviceParams, DriveConfig, LevelSpec, NoiseModel, SidebandKind,
    SolverOptions, StateLabel,
};

/// Second-order prediction and Floquet quasi-energy shift of one level.
#[derive(Debug, Clone, Copy)]
pub struct ShiftComparison {
    pub level: (usize, usize),
    pub predicted: f64,
    pub numeric: f64,
}

fn ladder(n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| if i + 1 == j { C64::new((j as f64).sqrt(), 0.0) } else { C64::new(0.0, 0.0) })
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// One-period propagator of `2π[H₀ + 2g·sin(2πνt)·V]` by fixed-step RK4.
fn period_propagator(h0: &DMatrix<C64>, v: &DMatrix<C64>, g: f64, nu: f64, steps: usize) -> DMatrix<C64> {
    let n = h0.nrows();
    let period = 1.0 / nu;
    let dt = period / steps as f64;
    let minus_i_tau = C64::new(0.0, -TAU);
    let gen = |t: f64| (h0 + v * C64::new(2.0 * g * (TAU * nu * t).sin(), 0.0)) * minus_i_tau;
    let mut u = DMatrix::<C64>::identity(n, n);
    for s in 0..steps {
        let t = s as f64 * dt;
        let (a, b, c) = (gen(t), gen(t + dt / 2.0), gen(t + dt));
        let half = C64::new(dt / 2.0, 0.0);
        let full = C64::new(dt, 0.0);
        let k1 = &a * &u;
        let k2 = &b * (&u + &k1 * half);
        let k3 = &b * (&u + &k2 * half);
        let k4 = &c * (&u + &k3 * full);
        u += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);
    }
    u
}

/// Quasi-energy shifts of every level of a two-transmon table under a detuned
/// QQ sideband `2g·sin(2πνt)` coupling, next to the second-order formula.
pub fn floquet_shifts(levels: &LevelSpec, g: f64, nu: f64, kind: SidebandKind) -> Result<Vec<ShiftComparison>> {
    let n = levels.levels();
    let dim = n * n;
    let a = ladder(n);
    let ad = a.adjoint();
    let v = match kind {
        SidebandKind::Red => kron(&a, &ad) + kron(&ad, &a),
        SidebandKind::Blue => kron(&ad, &ad) + kron(&a, &a),
    };
    let energy = |idx: usize| levels.energy(idx / n, idx % n).expect("index inside table");
    let h0 = DMatrix::from_fn(dim, dim, |i, j| if i == j { C64::new(energy(i), 0.0) } else { C64::new(0.0, 0.0) });
    let u = period_propagator(&h0, &v, g, nu, 4000);
    // Hermitian functions of U share its eigenvectors; a generic mix splits
    // the eigenvalues.
    let herm = (&u + u.adjoint()) * C64::new(0.5, 0.0) + (&u - u.adjoint()) * C64::new(0.0, -0.5 * 0.618);
    let eig = nalgebra::SymmetricEigen::new(herm);
    let period = 1.0 / nu;
    let mut out = Vec::with_capacity(dim);
    let mut used = vec![false; dim];
    for bare in 0..dim {
        let (col, weight) = (0..dim)
            .filter(|c| !used[*c])
            .map(|c| (c, eig.eigenvectors[(bare, c)].norm_sqr()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .context("no eigenvector left")?;
        ensure!(weight > 0.5, "level {bare} is strongly hybridized (overlap {weight})");
        used[col] = true;
        let vec = eig.eigenvectors.column(col);
        let phase = vec.dotc(&(&u * vec)).arg();
        let quasi = -phase / (TAU * period);
        let mut shift = (quasi - energy(bare)) % nu;
        if shift > nu / 2.0 {
            shift -= nu;
        } else if shift <= -nu / 2.0 {
            shift += nu;
        }
        let (j, k) = (bare / n, bare % n);
        out.push(ShiftComparison {
            level: (j, k),
            predicted: dispersive_shift(levels, g, nu, kind, j, k)?,
            numeric: shift,
        });
    }
    Ok(out)
}

/// Fitted refill rate of the `|L₀⟩` manifold from `|eg00⟩`, next to `2πΓ`.
#[derive(Debug, Clone, Copy)]
pub struct RefillComparison {
    pub omega: f64,
    pub kappa: f64,
    pub fitted: f64,
    pub predicted: f64,
}

pub fn refill_comparison(omega: f64, kappa: f64) -> Result<RefillComparison> {
    let drive = DriveConfig {
        w_r: 1.5,
        w_b: 1.5,
        nu_r: 0.85,
        nu_b: -0.85,
        omega_qr1: omega,
        ..DriveConfig::default()
    };
    let noise = NoiseModel {
        kappa_1: kappa,
        kappa_2: kappa,
        ..NoiseModel::noiseless()
    };
    let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
    let rho0 = logical_state(StateLabel::E01).to_density();
    let times = uniform_grid(40.0, 161);
    let traj = evolve(&h, &collapse_operators(&noise), &rho0, &times, &SolverOptions::default())?;
    let l0 = logical_state(StateLabel::L0);
    let mut proj = LabeledOperator::zeros(&FULL_DIMS);
    for r1 in 0..2 {
        for r2 in 0..2 {
            let mut amps = l0.amplitudes().clone() * C64::new(0.0, 0.0);
            for (q1, q2) in [(0, 2), (2, 0)] {
                let from = basis_index(&FULL_DIMS, &[q1, q2, 0, 0])?;
                let to = basis_index(&FULL_DIMS, &[q1, q2, r1, r2])?;
                amps[to] = l0.amplitudes()[from];
            }
            let ket = DMatrix::from_column_slice(36, 1, amps.as_slice());
            proj = &proj + &LabeledOperator::new(FULL_DIMS.to_vec(), &ket * ket.adjoint())?;
        }
    }
    let series = observable_series(&traj, &[proj])?;
    let y: Vec<f64> = series.column(0).iter().copied().collect();
    let fit = fit_exponential(&times, &y, 0.0)?;
    Ok(RefillComparison {
        omega,
        kappa,
        fitted: fit.a.abs() / fit.tau,
        predicted: TAU * refill_rate(omega, kappa)?,
    })
}

/// `⟨n_q1⟩` at the end of a QR pumping run from `|eg00⟩`.
pub fn qr_pumped_population(omega: f64, kappa: f64, tmax: f64) -> Result<f64> {
    let drive = DriveConfig {
        omega_qr1: omega,
        ..DriveConfig::default()
    };
    let noise = NoiseModel {
        kappa_1: kappa,
        ..NoiseModel::noiseless()
    };
    let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
    let rho0 = DensityMatrix::basis(&FULL_DIMS, &[1, 0, 0, 0])?;
    let traj = evolve(&h, &collapse_operators(&noise), &rho0, &uniform_grid(tmax, 31), &SolverOptions::default())?;
    let n = observable_series(&traj, &[starcode::model::number_operator(starcode::operators::Q1)])?;
    Ok(n[(n.nrows() - 1, 0)])
}
