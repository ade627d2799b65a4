//! Linearized three-node circuit model: normal modes, adiabatic coupler
//! couplings and parametric sideband rates.
//!
//! Flux arguments are in units of the flux quantum and enter as `πΦ/Φ₀`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operators::{annihilation, LabeledOperator, OperatorError, StateVector, QUTRIT_PAIR_DIMS};

/// `e²/(2h)` for a 1 fF capacitance, in GHz.
pub const CHARGING_ENERGY_GHZ_FF: f64 = 19.368_405;

const HALF_FLUX_GUARD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("flux {0} Φ₀ is too close to half a flux quantum")]
    HalfFlux(f64),
    #[error("capacitance matrix is singular")]
    SingularCapacitance,
    #[error("quadratic potential is not positive definite at flux {0} Φ₀")]
    Unstable(f64),
    #[error("detuning must be nonzero")]
    ZeroDetuning,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Capacitances (fF) and Josephson energies (GHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    pub c_q1: f64,
    pub c_q2: f64,
    pub c_c: f64,
    pub c_q12: f64,
    pub e_j1: f64,
    pub e_j2: f64,
    pub e_jc: f64,
}

impl CircuitParams {
    /// Design values of the measured device.
    pub fn reference() -> Self {
        Self {
            c_q1: 165.9,
            c_q2: 123.4,
            c_c: 178.3,
            c_q12: 2.0,
            e_j1: 12.4,
            e_j2: 12.1,
            e_jc: 1106.0,
        }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let fields = [
            ("c_q1", self.c_q1),
            ("c_q2", self.c_q2),
            ("c_c", self.c_c),
            ("c_q12", self.c_q12),
            ("e_j1", self.e_j1),
            ("e_j2", self.e_j2),
            ("e_jc", self.e_jc),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CircuitError::NonPositive(name));
            }
        }
        Ok(())
    }

    /// Node capacitance matrix in `(1, 2, c)` order (fF).
    pub fn capacitance_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.c_q1 + self.c_q12,
            -self.c_q12,
            0.0,
            -self.c_q12,
            self.c_q2 + self.c_q12,
            0.0,
            0.0,
            0.0,
            self.c_q1 + self.c_q2 + self.c_c,
        )
    }

    /// Inverse-mass matrix `8E_C` (GHz) with `E_C = e²/(2h)·C⁻¹`.
    pub fn inverse_mass(&self) -> Result<Matrix3<f64>, CircuitError> {
        let inv = self
            .capacitance_matrix()
            .try_inverse()
            .ok_or(CircuitError::SingularCapacitance)?;
        Ok(inv * (8.0 * CHARGING_ENERGY_GHZ_FF))
    }

    /// Quadratic inductive form (GHz) at external flux `phi_ext`.
    pub fn stiffness(&self, phi_ext: f64) -> Matrix3<f64> {
        let e1 = Vector3::new(1.0, 0.0, 0.0);
        let e2 = Vector3::new(0.0, 1.0, 0.0);
        let ec = Vector3::new(0.0, 0.0, 1.0);
        let d1 = ec - e1;
        let d2 = e2 - ec;
        d1 * d1.transpose() * self.e_j1
            + d2 * d2.transpose() * self.e_j2
            + ec * ec.transpose() * (self.e_jc * (PI * phi_ext).cos())
    }
}

fn flux_cos(phi: f64) -> Result<f64, CircuitError> {
    let c = (PI * phi).cos();
    if !phi.is_finite() || c.abs() <= HALF_FLUX_GUARD {
        return Err(CircuitError::HalfFlux(phi));
    }
    Ok(c)
}

/// Normal-mode frequencies (GHz, ascending) and the congruence transform
/// whose columns map mode coordinates back to node phases.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalModes {
    pub frequencies: [f64; 3],
    pub transform: Matrix3<f64>,
}

fn sqrt_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*m);
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Diagonalizes `½nᵀMn + ½φᵀKφ`; mode frequencies are `√eig(M^½ K M^½)`.
pub fn normal_modes(circuit: &CircuitParams, phi_ext: f64) -> Result<NormalModes, CircuitError> {
    circuit.validate()?;
    flux_cos(phi_ext)?;
    let m = circuit.inverse_mass()?;
    let k = circuit.stiffness(phi_ext);
    let m_half = sqrt_psd(&m);
    let a = m_half * k * m_half;
    let a = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    if eig.eigenvalues[order[0]] <= 0.0 {
        return Err(CircuitError::Unstable(phi_ext));
    }
    let mut frequencies = [0.0; 3];
    let mut transform = Matrix3::zeros();
    for (slot, &i) in order.iter().enumerate() {
        frequencies[slot] = eig.eigenvalues[i].sqrt();
        transform.set_column(slot, &(m_half * eig.eigenvectors.column(i)));
    }
    Ok(NormalModes {
        frequencies,
        transform,
    })
}

/// Adiabatic inductive coupling `g1` and capacitive coupling `g2` (GHz) for
/// transmon frequencies in GHz.
pub fn adiabatic_couplings(
    circuit: &CircuitParams,
    phi_dc: f64,
    omega_q1: f64,
    omega_q2: f64,
) -> Result<(f64, f64), CircuitError> {
    circuit.validate()?;
    let c = flux_cos(phi_dc)?;
    if !(omega_q1 > 0.0 && omega_q2 > 0.0) {
        return Err(CircuitError::NonPositive("transmon frequency"));
    }
    let geo = (omega_q1 * omega_q2).sqrt();
    let g1 = (circuit.e_j1 * circuit.e_j2).sqrt() / (2.0 * circuit.e_jc * c) * geo;
    let g2 = (circuit.c_q1 * circuit.c_q2).sqrt() / (2.0 * circuit.c_q12) * geo;
    Ok((g1, g2))
}

/// `⟨ψ₁|(a₁†+a₁)(a₂†+a₂)|ψ₂⟩` on the transmon pair.
pub fn bosonic_enhancement(psi1: &StateVector, psi2: &StateVector) -> Result<f64, CircuitError> {
    let a = annihilation(3);
    let x = LabeledOperator::new(vec![3], &a + a.adjoint())?;
    let xx = crate::operators::tensor(&[x.clone(), x]);
    if psi1.dims() != QUTRIT_PAIR_DIMS || psi2.dims() != QUTRIT_PAIR_DIMS {
        return Err(OperatorError::DimsMismatch {
            left: QUTRIT_PAIR_DIMS.to_vec(),
            right: psi1.dims().to_vec(),
        }
        .into());
    }
    let v = psi1.amplitudes().dotc(&(xx.matrix() * psi2.amplitudes()));
    Ok(v.norm())
}

/// Parametric QQ sideband rate (MHz) for flux modulation amplitude `eps`
/// (radians of `πΦ/Φ₀`) between two transmon-pair states.
pub fn qq_sideband_rate(
    circuit: &CircuitParams,
    phi_dc: f64,
    eps: f64,
    pair: (&StateVector, &StateVector),
    omega_q1: f64,
    omega_q2: f64,
) -> Result<f64, CircuitError> {
    circuit.validate()?;
    let c = flux_cos(phi_dc)?;
    let prefactor = (circuit.e_j1 * circuit.e_j2).sqrt() / (2.0 * circuit.e_jc) * (omega_q1 * omega_q2).sqrt();
    let a12 = bosonic_enhancement(pair.0, pair.1)?;
    let ghz = prefactor * eps * (PI * phi_dc).tan() / c * a12;
    Ok(ghz * 1e3)
}

/// Second-order QR sideband rate `16g³ε²/Δ⁴` (all MHz).
pub fn qr_sideband_rate(g_qr: f64, eps_q: f64, delta: f64) -> Result<f64, CircuitError> {
    if delta == 0.0 || !delta.is_finite() {
        return Err(CircuitError::ZeroDetuning);
    }
    Ok(16.0 * g_qr.powi(3) * eps_q * eps_q / delta.powi(4))
}
