//! Code states, drive Hamiltonians in the lab, logical-static and rotating
//! frames, and the Lindblad collapse-operator set.
//!
//! All public parameters are ordinary frequencies in MHz and times in µs. The
//! `2π` conversion to angular units happens once, when a [`HamiltonianSpec`]
//! is assembled, so every spec is in rad/µs.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operators::{
    annihilation, basis_index, ket_bra, number, LabeledOperator, OperatorError, StateVector, E, F,
    FULL_DIMS, G, Q1, Q2, QUTRIT_PAIR_DIMS, R1, R2,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("lab-frame scale must lie in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Undriven device frequencies and static couplings (MHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    pub omega_q1: f64,
    pub omega_q2: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub omega_r1: f64,
    pub omega_r2: f64,
    #[serde(default)]
    pub chi_1: f64,
    #[serde(default)]
    pub chi_2: f64,
    #[serde(default)]
    pub zz_ff1: f64,
    #[serde(default)]
    pub zz_ff2: f64,
    /// Cross-Kerr table: `J[j-1][k-1]` multiplies `n_q1^j n_q2^k`.
    #[serde(default, rename = "J")]
    pub j: [[f64; 2]; 2],
}

impl DeviceParams {
    /// Measured device without external drives.
    pub fn reference() -> Self {
        Self {
            omega_q1: 3204.9,
            omega_q2: 3662.5,
            alpha_1: -116.4,
            alpha_2: -159.6,
            omega_r1: 4994.6,
            omega_r2: 5450.5,
            chi_1: 0.0,
            chi_2: 0.0,
            zz_ff1: 0.0,
            zz_ff2: 0.0,
            j: [[0.0; 2]; 2],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.omega_q1,
            self.omega_q2,
            self.alpha_1,
            self.alpha_2,
            self.omega_r1,
            self.omega_r2,
            self.chi_1,
            self.chi_2,
            self.zz_ff1,
            self.zz_ff2,
        ];
        if all.iter().chain(self.j.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(invalid("device", "all entries must be finite"));
        }
        if self.alpha_1 >= 0.0 {
            return Err(invalid("alpha_1", "anharmonicity must be negative"));
        }
        if self.alpha_2 >= 0.0 {
            return Err(invalid("alpha_2", "anharmonicity must be negative"));
        }
        if self.omega_r1 <= self.omega_q1 {
            return Err(invalid("omega_r1", "resonator must sit above its transmon"));
        }
        if self.omega_r2 <= self.omega_q2 {
            return Err(invalid("omega_r2", "resonator must sit above its transmon"));
        }
        Ok(())
    }

    fn alpha(&self, j: usize) -> f64 {
        [self.alpha_1, self.alpha_2][j]
    }
}

/// Sideband rates, detunings (MHz) and QQ drive phases (rad).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    #[serde(default)]
    pub w_r: f64,
    #[serde(default)]
    pub w_b: f64,
    #[serde(default)]
    pub nu_r: f64,
    #[serde(default)]
    pub nu_b: f64,
    #[serde(default)]
    pub omega_qr1: f64,
    #[serde(default)]
    pub omega_qr2: f64,
    /// Phases of the `|ee⟩⟨gf|`, `|ee⟩⟨fg|`, `|ee⟩⟨gg|`, `|ee⟩⟨ff|` drives.
    #[serde(default)]
    pub phases: [f64; 4],
}

impl DriveConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let rates = [
            ("w_r", self.w_r),
            ("w_b", self.w_b),
            ("omega_qr1", self.omega_qr1),
            ("omega_qr2", self.omega_qr2),
        ];
        for (field, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("rate must be finite and non-negative, got {v}")));
            }
        }
        if !(self.nu_r.is_finite() && self.nu_b.is_finite()) {
            return Err(invalid("nu", "detunings must be finite"));
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return Err(invalid("phases", "phases must be finite"));
        }
        Ok(())
    }
}

/// Lindblad channel timescales. Infinite times switch a channel off, as does
/// a zero resonator decay rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default = "infinite")]
    pub t1_ge_1: f64,
    #[serde(default = "infinite")]
    pub t1_ge_2: f64,
    #[serde(default = "infinite")]
    pub t1_ef_1: f64,
    #[serde(default = "infinite")]
    pub t1_ef_2: f64,
    #[serde(default = "infinite")]
    pub t_phi_1: f64,
    #[serde(default = "infinite")]
    pub t_phi_2: f64,
    #[serde(default = "infinite")]
    pub t1_up_1: f64,
    #[serde(default = "infinite")]
    pub t1_up_2: f64,
    /// Resonator energy decay rates (MHz, ordinary frequency).
    #[serde(default)]
    pub kappa_1: f64,
    #[serde(default)]
    pub kappa_2: f64,
    #[serde(default)]
    pub n_res: f64,
    #[serde(default = "infinite")]
    pub t_phi_ff: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            t1_ge_1: f64::INFINITY,
            t1_ge_2: f64::INFINITY,
            t1_ef_1: f64::INFINITY,
            t1_ef_2: f64::INFINITY,
            t_phi_1: f64::INFINITY,
            t_phi_2: f64::INFINITY,
            t1_up_1: f64::INFINITY,
            t1_up_2: f64::INFINITY,
            kappa_1: 0.0,
            kappa_2: 0.0,
            n_res: 0.0,
            t_phi_ff: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let times = [
            ("t1_ge_1", self.t1_ge_1),
            ("t1_ge_2", self.t1_ge_2),
            ("t1_ef_1", self.t1_ef_1),
            ("t1_ef_2", self.t1_ef_2),
            ("t_phi_1", self.t_phi_1),
            ("t_phi_2", self.t_phi_2),
            ("t1_up_1", self.t1_up_1),
            ("t1_up_2", self.t1_up_2),
            ("t_phi_ff", self.t_phi_ff),
        ];
        for (field, t) in times {
            if t.is_nan() || t <= 0.0 {
                return Err(invalid(field, format!("time must be positive, got {t}")));
            }
        }
        for (field, k) in [("kappa_1", self.kappa_1), ("kappa_2", self.kappa_2)] {
            if !(k.is_finite() && k >= 0.0) {
                return Err(invalid(field, format!("decay rate must be finite and non-negative, got {k}")));
            }
        }
        if !(0.0..1.0).contains(&self.n_res) {
            return Err(invalid("n_res", format!("must lie in [0, 1), got {}", self.n_res)));
        }
        Ok(())
    }
}

/// Logical code states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicalLabel {
    L0,
    L1,
    Lx,
}

impl LogicalLabel {
    pub const ALL: [LogicalLabel; 3] = [LogicalLabel::L0, LogicalLabel::L1, LogicalLabel::Lx];
}

/// Logical and single-loss error states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateLabel {
    L0,
    L1,
    Lx,
    E01,
    E02,
    E11,
    E12,
}

impl From<LogicalLabel> for StateLabel {
    fn from(l: LogicalLabel) -> Self {
        match l {
            LogicalLabel::L0 => StateLabel::L0,
            LogicalLabel::L1 => StateLabel::L1,
            LogicalLabel::Lx => StateLabel::Lx,
        }
    }
}

impl FromStr for StateLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Ok(match s {
            "L0" => StateLabel::L0,
            "L1" => StateLabel::L1,
            "Lx" => StateLabel::Lx,
            "E01" => StateLabel::E01,
            "E02" => StateLabel::E02,
            "E11" => StateLabel::E11,
            "E12" => StateLabel::E12,
            _ => return Err(ModelError::UnknownLabel(s.to_string())),
        })
    }
}

impl FromStr for LogicalLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "L0" => Ok(LogicalLabel::L0),
            "L1" => Ok(LogicalLabel::L1),
            "Lx" => Ok(LogicalLabel::Lx),
            _ => Err(ModelError::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for LogicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogicalLabel::L0 => "L0",
            LogicalLabel::L1 => "L1",
            LogicalLabel::Lx => "Lx",
        })
    }
}

/// Two-transmon amplitudes `(q1, q2, amplitude)` of a labelled state.
fn pair_amplitudes(label: StateLabel) -> Vec<(usize, usize, f64)> {
    let s = FRAC_1_SQRT_2;
    match label {
        StateLabel::L0 => vec![(G, F, s), (F, G, -s)],
        StateLabel::L1 => vec![(G, G, s), (F, F, -s)],
        // (L0 - L1)/√2
        StateLabel::Lx => vec![(G, F, 0.5), (F, G, -0.5), (G, G, -0.5), (F, F, 0.5)],
        // Error state after photon loss from transmon k of logical state j.
        StateLabel::E01 => vec![(E, G, 1.0)],
        StateLabel::E02 => vec![(G, E, 1.0)],
        StateLabel::E11 => vec![(E, F, 1.0)],
        StateLabel::E12 => vec![(F, E, 1.0)],
    }
}

fn state_on(dims: &[usize], label: StateLabel) -> StateVector {
    let n: usize = dims.iter().product();
    let mut amps = DVector::zeros(n);
    for (a, b, v) in pair_amplitudes(label) {
        let mut levels = vec![a, b];
        levels.resize(dims.len(), 0);
        amps[basis_index(dims, &levels).expect("static levels")] = C64::new(v, 0.0);
    }
    StateVector::new(dims.to_vec(), amps).expect("code states are normalized")
}

/// Named state on the full space with both resonators in vacuum.
pub fn logical_state(label: StateLabel) -> StateVector {
    state_on(&FULL_DIMS, label)
}

/// Named state on the two-transmon space.
pub fn pair_state(label: StateLabel) -> StateVector {
    state_on(&QUTRIT_PAIR_DIMS, label)
}

/// `|ab⟩⟨cd|` on the transmon pair, tensored with the resonator identity when
/// `dims` is the full space.
pub fn pair_transition(dims: &[usize], to: (usize, usize), from: (usize, usize)) -> LabeledOperator {
    let mut m = DMatrix::zeros(9, 9);
    m[(to.0 * 3 + to.1, from.0 * 3 + from.1)] = C64::new(1.0, 0.0);
    let n_res: usize = dims[2..].iter().product();
    LabeledOperator::new(dims.to_vec(), m.kronecker(&DMatrix::identity(n_res, n_res)))
        .expect("pair operator dims")
}

/// `P_ab = |ab⟩⟨ab|` on the transmon pair.
pub fn pair_projector(dims: &[usize], a: usize, b: usize) -> LabeledOperator {
    pair_transition(dims, (a, b), (a, b))
}

/// Error-space projector monitored for each logical state.
pub fn error_projector(label: LogicalLabel) -> LabeledOperator {
    error_projector_on(&FULL_DIMS, label)
}

pub(crate) fn error_projector_on(dims: &[usize], label: LogicalLabel) -> LabeledOperator {
    let eps0 = &pair_projector(dims, G, E) + &pair_projector(dims, E, G);
    let eps1 = &pair_projector(dims, E, F) + &pair_projector(dims, F, E);
    match label {
        LogicalLabel::L0 => eps0,
        LogicalLabel::L1 => eps1,
        LogicalLabel::Lx => &eps0 + &eps1,
    }
}

/// Error-transparent logical X: `(|gg⟩+|fg⟩)(⟨gf|+⟨ff|)/2 + h.c.`.
pub fn logical_x(dims: &[usize]) -> LabeledOperator {
    let mut half = LabeledOperator::zeros(dims);
    for to in [(G, G), (F, G)] {
        for from in [(G, F), (F, F)] {
            half = &half + &pair_transition(dims, to, from).scale_real(0.5);
        }
    }
    &half + &half.adjoint()
}

/// Operator on the full space acting on one subsystem.
pub fn site_operator(site: usize, local: &DMatrix<C64>) -> LabeledOperator {
    LabeledOperator::embed(&FULL_DIMS, site, local).expect("site within full space")
}

/// Photon number of a transmon (`site` = [`Q1`] or [`Q2`]) or resonator.
pub fn number_operator(site: usize) -> LabeledOperator {
    site_operator(site, &number(FULL_DIMS[site]))
}

fn lowering(site: usize) -> LabeledOperator {
    site_operator(site, &annihilation(FULL_DIMS[site]))
}

fn position(site: usize) -> LabeledOperator {
    let a = annihilation(FULL_DIMS[site]);
    site_operator(site, &(&a + a.adjoint()))
}

/// Time-dependent real coefficient of a driven term.
#[derive(Clone)]
pub enum Coefficient {
    /// `amplitude·cos(angular_frequency·t + phase)`.
    Cosine {
        amplitude: f64,
        angular_frequency: f64,
        phase: f64,
    },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Coefficient::Cosine {
                amplitude,
                angular_frequency,
                phase,
            } => amplitude * (angular_frequency * t + phase).cos(),
            Coefficient::Function(f) => f(t),
        }
    }

    fn is_static(&self) -> bool {
        matches!(self, Coefficient::Cosine { angular_frequency, .. } if *angular_frequency == 0.0)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Cosine {
                amplitude,
                angular_frequency,
                phase,
            } => write!(f, "{amplitude}*cos({angular_frequency}*t + {phase})"),
            Coefficient::Function(_) => f.write_str("<function>"),
        }
    }
}

/// `H(t) = constant + Σ c_k(t)·O_k` in rad/µs; every `O_k` is Hermitian.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    constant: LabeledOperator,
    driven: Vec<(Coefficient, LabeledOperator)>,
}

impl HamiltonianSpec {
    pub fn new(constant: LabeledOperator) -> Self {
        Self {
            constant,
            driven: Vec::new(),
        }
    }

    /// Adds a driven term; cosines at zero frequency fold into the constant.
    pub fn push(&mut self, coefficient: Coefficient, op: LabeledOperator) -> Result<(), ModelError> {
        if op.dims() != self.constant.dims() {
            return Err(OperatorError::DimsMismatch {
                left: self.constant.dims().to_vec(),
                right: op.dims().to_vec(),
            }
            .into());
        }
        if coefficient.is_static() {
            self.constant = &self.constant + &op.scale_real(coefficient.eval(0.0));
        } else {
            self.driven.push((coefficient, op));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        self.constant.dims()
    }

    pub fn constant(&self) -> &LabeledOperator {
        &self.constant
    }

    pub fn driven(&self) -> &[(Coefficient, LabeledOperator)] {
        &self.driven
    }

    pub fn is_time_independent(&self) -> bool {
        self.driven.is_empty()
    }

    pub fn at(&self, t: f64) -> LabeledOperator {
        self.driven
            .iter()
            .fold(self.constant.clone(), |acc, (c, op)| &acc + &op.scale_real(c.eval(t)))
    }

    /// Adds `2π·scale·op` to the constant part.
    fn add_constant_mhz(&mut self, scale: f64, op: &LabeledOperator) {
        self.constant = &self.constant + &op.scale_real(TAU * scale);
    }
}

/// Which drive frequency a chevron sweep moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Common shift of the two red QQ tone frequencies.
    RedPairCenter,
    /// Common shift of the two blue QQ tone frequencies.
    BluePairCenter,
    /// Shift of both QR tone frequencies.
    QrFrequency,
}

impl FromStr for SweepAxis {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "red_pair_center" => Ok(SweepAxis::RedPairCenter),
            "blue_pair_center" => Ok(SweepAxis::BluePairCenter),
            "qr_frequency" => Ok(SweepAxis::QrFrequency),
            _ => Err(ModelError::UnknownLabel(s.to_string())),
        }
    }
}

/// A QQ tone in the logical-static frame: `(W/2)|ee⟩⟨x| e^{i(2πνt+φ)} + h.c.`.
struct QqTone {
    from: (usize, usize),
    rate: f64,
    nu: f64,
    phase: f64,
}

fn qq_tones(drive: &DriveConfig, shift: Option<(SweepAxis, f64)>) -> [QqTone; 4] {
    let (red, blue) = match shift {
        Some((SweepAxis::RedPairCenter, d)) => (d, 0.0),
        Some((SweepAxis::BluePairCenter, d)) => (0.0, d),
        _ => (0.0, 0.0),
    };
    // Moving a pair's center pushes one tone closer to resonance and the
    // other away in this frame.
    [
        QqTone {
            from: (G, F),
            rate: drive.w_r,
            nu: drive.nu_r + red,
            phase: drive.phases[0],
        },
        QqTone {
            from: (F, G),
            rate: drive.w_r,
            nu: drive.nu_r - red,
            phase: drive.phases[1],
        },
        QqTone {
            from: (G, G),
            rate: drive.w_b,
            nu: drive.nu_b - blue,
            phase: drive.phases[2],
        },
        QqTone {
            from: (F, F),
            rate: drive.w_b,
            nu: drive.nu_b + blue,
            phase: drive.phases[3],
        },
    ]
}

/// Adds `c·e^{i(ωt+φ)}·O + h.c.` (c, ω already angular) as two cosine terms.
fn push_complex_tone(
    spec: &mut HamiltonianSpec,
    op: &LabeledOperator,
    amplitude: f64,
    angular_frequency: f64,
    phase: f64,
) -> Result<(), ModelError> {
    if amplitude == 0.0 {
        return Ok(());
    }
    let sym = op + &op.adjoint();
    let anti = (op - &op.adjoint()).scale(C64::new(0.0, 1.0));
    spec.push(
        Coefficient::Cosine {
            amplitude,
            angular_frequency,
            phase,
        },
        sym,
    )?;
    spec.push(
        Coefficient::Cosine {
            amplitude,
            angular_frequency,
            phase: phase - PI / 2.0,
        },
        anti,
    )
}

fn frame_diagonal(device: &DeviceParams) -> LabeledOperator {
    let d = &FULL_DIMS;
    let mut h = LabeledOperator::zeros(d);
    let a1 = -device.alpha_1 / 2.0;
    let a2 = -device.alpha_2 / 2.0;
    for (a, b, v) in [(E, G, a1), (E, F, a1), (G, E, a2), (F, E, a2)] {
        h = &h + &pair_projector(d, a, b).scale_real(v);
    }
    h = &h + &number_operator(R1).scale_real(a1);
    &h + &number_operator(R2).scale_real(a2)
}

/// QR couplings `(Ω_j/2)·(|e⟩⟨f| on Q_j, other transmon in g or f)⊗|0⟩⟨1|_{R_j} + h.c.`
/// as the non-Hermitian half `O_j` (without `h.c.`).
fn qr_halves(drive: &DriveConfig) -> [LabeledOperator; 2] {
    let d = &FULL_DIMS;
    let sigma_r = ket_bra(2, 0, 1);
    let r1 = site_operator(R1, &sigma_r);
    let r2 = site_operator(R2, &sigma_r);
    let q1 = &pair_transition(d, (E, G), (F, G)) + &pair_transition(d, (E, F), (F, F));
    let q2 = &pair_transition(d, (G, E), (G, F)) + &pair_transition(d, (F, E), (F, F));
    [
        (&q1 * &r1).scale_real(drive.omega_qr1 / 2.0),
        (&q2 * &r2).scale_real(drive.omega_qr2 / 2.0),
    ]
}

fn static_with_shift(
    device: &DeviceParams,
    drive: &DriveConfig,
    shift: Option<(SweepAxis, f64)>,
) -> Result<HamiltonianSpec, ModelError> {
    let d = &FULL_DIMS;
    let mut spec = HamiltonianSpec::new(LabeledOperator::zeros(d));
    spec.add_constant_mhz(1.0, &frame_diagonal(device));
    for tone in qq_tones(drive, shift) {
        let op = pair_transition(d, (E, E), tone.from);
        push_complex_tone(&mut spec, &op, TAU * tone.rate / 2.0, TAU * tone.nu, tone.phase)?;
    }
    let qr_shift = match shift {
        Some((SweepAxis::QrFrequency, delta)) => delta,
        _ => 0.0,
    };
    for half in qr_halves(drive) {
        push_complex_tone(&mut spec, &half, TAU, TAU * qr_shift, 0.0)?;
    }
    Ok(spec)
}

/// Logical-static frame: every logical state has zero energy and the detuned
/// QQ tones carry explicit phase factors `e^{2πiνt}`.
pub fn build_static_hamiltonian(device: &DeviceParams, drive: &DriveConfig) -> HamiltonianSpec {
    static_with_shift(device, drive, None).expect("full-space terms")
}

/// Logical-static Hamiltonian with one drive frequency offset by `delta` (MHz).
pub fn build_swept_hamiltonian(
    device: &DeviceParams,
    drive: &DriveConfig,
    axis: SweepAxis,
    delta: f64,
) -> HamiltonianSpec {
    static_with_shift(device, drive, Some((axis, delta))).expect("full-space terms")
}

/// Frame generator (MHz) relating the logical-static and rotating frames.
pub fn rotating_frame_generator(drive: &DriveConfig) -> LabeledOperator {
    let d = &FULL_DIMS;
    let mut a = LabeledOperator::zeros(d);
    for (x, y) in [(G, F), (F, G), (G, E), (E, G)] {
        a = &a + &pair_projector(d, x, y).scale_real(drive.nu_r);
    }
    for (x, y) in [(G, G), (F, F), (E, F), (F, E)] {
        a = &a + &pair_projector(d, x, y).scale_real(drive.nu_b);
    }
    a
}

/// Frame in which the detuned QQ tones are time-independent.
pub fn build_rotating_hamiltonian(device: &DeviceParams, drive: &DriveConfig) -> HamiltonianSpec {
    let static_spec = build_static_hamiltonian(device, drive);
    let mut spec = HamiltonianSpec::new(static_spec.at(0.0));
    spec.add_constant_mhz(-1.0, &rotating_frame_generator(drive));
    spec
}

/// Logical-static Hamiltonian plus dispersive transmon-resonator shifts and the
/// two error-state ZZ shifts.
pub fn build_full_hamiltonian(device: &DeviceParams, drive: &DriveConfig) -> HamiltonianSpec {
    let mut spec = build_static_hamiltonian(device, drive);
    add_static_shifts(&mut spec, device);
    spec
}

fn add_static_shifts(spec: &mut HamiltonianSpec, device: &DeviceParams) {
    let d = &FULL_DIMS;
    for (q, r, chi) in [(Q1, R1, device.chi_1), (Q2, R2, device.chi_2)] {
        if chi != 0.0 {
            spec.add_constant_mhz(chi, &(&number_operator(q) * &number_operator(r)));
        }
    }
    spec.add_constant_mhz(device.zz_ff1, &pair_projector(d, F, E));
    spec.add_constant_mhz(device.zz_ff2, &pair_projector(d, E, F));
}

/// One lab-frame carrier: amplitude (MHz), frequency (MHz), phase (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Tone {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * t + self.phase).cos()
    }
}

fn check_scale(scale: f64) -> Result<(), ModelError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(ModelError::InvalidScale(scale));
    }
    Ok(())
}

/// The four carriers of the transmon-transmon charge drive.
pub fn lab_qq_tones(device: &DeviceParams, drive: &DriveConfig, scale: f64) -> Result<[Tone; 4], ModelError> {
    check_scale(scale)?;
    let (wq1, wq2) = (scale * device.omega_q1, scale * device.omega_q2);
    let (a1, a2) = (device.alpha_1, device.alpha_2);
    let p = drive.phases;
    Ok([
        Tone {
            amplitude: drive.w_r * FRAC_1_SQRT_2,
            frequency: wq2 - wq1 - a1 - drive.nu_r,
            phase: -p[1],
        },
        Tone {
            amplitude: drive.w_r * FRAC_1_SQRT_2,
            frequency: wq2 - wq1 + a2 + drive.nu_r,
            phase: p[0],
        },
        Tone {
            amplitude: drive.w_b,
            frequency: wq1 + wq2 - drive.nu_b,
            phase: -p[2],
        },
        Tone {
            amplitude: drive.w_b / 2.0,
            frequency: wq1 + wq2 + a1 + a2 + drive.nu_b,
            phase: p[3],
        },
    ])
}

/// QR charge-drive carrier for transmon-resonator pair `j` (0 or 1).
pub fn lab_qr_tone(device: &DeviceParams, drive: &DriveConfig, scale: f64, j: usize) -> Result<Tone, ModelError> {
    check_scale(scale)?;
    let (wq, wr, omega) = match j {
        0 => (device.omega_q1, device.omega_r1, drive.omega_qr1),
        1 => (device.omega_q2, device.omega_r2, drive.omega_qr2),
        _ => return Err(OperatorError::InvalidSubsystem { index: j, count: 2 }.into()),
    };
    Ok(Tone {
        amplitude: omega * FRAC_1_SQRT_2,
        frequency: scale * (wq + wr) + device.alpha(j),
        phase: 0.0,
    })
}

/// Lab-frame Hamiltonian with transmon and resonator frequencies multiplied by
/// `scale` (anharmonicities and detunings unchanged). `scale = 1` keeps the
/// physical GHz carriers.
pub fn build_lab_hamiltonian(
    device: &DeviceParams,
    drive: &DriveConfig,
    scale: f64,
) -> Result<HamiltonianSpec, ModelError> {
    check_scale(scale)?;
    let mut spec = HamiltonianSpec::new(LabeledOperator::zeros(&FULL_DIMS));
    for (q, r, wq, wr, alpha) in [
        (Q1, R1, device.omega_q1, device.omega_r1, device.alpha_1),
        (Q2, R2, device.omega_q2, device.omega_r2, device.alpha_2),
    ] {
        let a = lowering(q);
        let ad = a.adjoint();
        let kerr = &(&ad * &ad) * &(&a * &a);
        spec.add_constant_mhz(scale * wq, &number_operator(q));
        spec.add_constant_mhz(alpha / 2.0, &kerr);
        spec.add_constant_mhz(scale * wr, &number_operator(r));
    }
    let xx = &position(Q1) * &position(Q2);
    for tone in lab_qq_tones(device, drive, scale)? {
        push_lab_tone(&mut spec, &xx, tone)?;
    }
    for (j, (q, r)) in [(Q1, R1), (Q2, R2)].into_iter().enumerate() {
        let op = &position(q) * &position(r);
        push_lab_tone(&mut spec, &op, lab_qr_tone(device, drive, scale, j)?)?;
    }
    Ok(spec)
}

fn push_lab_tone(spec: &mut HamiltonianSpec, op: &LabeledOperator, tone: Tone) -> Result<(), ModelError> {
    if tone.amplitude == 0.0 {
        return Ok(());
    }
    spec.push(
        Coefficient::Cosine {
            amplitude: TAU * tone.amplitude,
            angular_frequency: TAU * tone.frequency,
            phase: tone.phase,
        },
        op.clone(),
    )
}

/// Lindblad operators pre-scaled by the square root of their rates (1/µs).
pub fn collapse_operators(noise: &NoiseModel) -> Vec<LabeledOperator> {
    let mut ops = Vec::new();
    let mut push = |rate: f64, op: LabeledOperator| {
        if rate > 0.0 && rate.is_finite() {
            ops.push(op.scale_real(rate.sqrt()));
        }
    };
    let transmons = [
        (Q1, noise.t1_ge_1, noise.t1_ef_1, noise.t1_up_1, noise.t_phi_1),
        (Q2, noise.t1_ge_2, noise.t1_ef_2, noise.t1_up_2, noise.t_phi_2),
    ];
    for (q, t1_ge, t1_ef, t1_up, t_phi) in transmons {
        push(1.0 / t1_ge, site_operator(q, &ket_bra(3, G, E)));
        push(1.0 / t1_ef, site_operator(q, &ket_bra(3, E, F)));
        push(1.0 / t1_up, site_operator(q, &ket_bra(3, E, G)));
        push(2.0 / t1_up, site_operator(q, &ket_bra(3, F, E)));
        push(1.0 / t_phi, site_operator(q, &ket_bra(3, E, E)));
        push(4.0 / t_phi, site_operator(q, &ket_bra(3, F, F)));
    }
    for (r, kappa) in [(R1, noise.kappa_1), (R2, noise.kappa_2)] {
        let a = lowering(r);
        push(TAU * kappa * noise.n_res, a.adjoint());
        push(TAU * kappa, a);
    }
    push(1.0 / noise.t_phi_ff, pair_projector(&FULL_DIMS, F, F));
    ops
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{expectation, DensityMatrix};
    use proptest::prelude::*;

    fn at(spec: &HamiltonianSpec, t: f64, to: &[usize], from: &[usize]) -> C64 {
        let h = spec.at(t);
        h.matrix()[(
            basis_index(&FULL_DIMS, to).unwrap(),
            basis_index(&FULL_DIMS, from).unwrap(),
        )]
    }

    fn aqec_drive() -> DriveConfig {
        DriveConfig {
            w_r: 1.45,
            w_b: 1.25,
            nu_r: 0.8,
            nu_b: -0.9,
            omega_qr1: 0.39,
            omega_qr2: 0.39,
            phases: [0.0; 4],
        }
    }

    #[test]
    fn logical_zero_amplitudes() {
        let l0 = logical_state(StateLabel::L0);
        let s = FRAC_1_SQRT_2;
        assert!((l0.amplitude(&[G, F, 0, 0]).unwrap() - C64::new(s, 0.0)).norm() < 1e-15);
        assert!((l0.amplitude(&[F, G, 0, 0]).unwrap() - C64::new(-s, 0.0)).norm() < 1e-15);
        let l1 = logical_state(StateLabel::L1);
        assert!(l0.inner(&l1).unwrap().norm() < 1e-15);
    }

    #[test]
    fn lx_is_x_eigenstate() {
        let x = logical_x(&FULL_DIMS);
        let lx = logical_state(StateLabel::Lx);
        assert!((lx.expectation(&x).unwrap().norm() - 1.0).abs() < 1e-12);
        // The other sign choice has no X weight.
        let s = FRAC_1_SQRT_2;
        let plus = (logical_state(StateLabel::L0).amplitudes() + logical_state(StateLabel::L1).amplitudes())
            * C64::new(s, 0.0);
        let plus = StateVector::new(FULL_DIMS.to_vec(), plus).unwrap();
        assert!(plus.expectation(&x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn labels_parse() {
        assert_eq!("E12".parse::<StateLabel>().unwrap(), StateLabel::E12);
        assert!(matches!("L2".parse::<StateLabel>(), Err(ModelError::UnknownLabel(_))));
        assert!(matches!("E01".parse::<LogicalLabel>(), Err(ModelError::UnknownLabel(_))));
    }

    #[test]
    fn error_states_follow_photon_loss() {
        // Lowering transmon k on L_j lands on E_jk.
        let cases = [
            (StateLabel::L0, Q1, StateLabel::E01),
            (StateLabel::L0, Q2, StateLabel::E02),
            (StateLabel::L1, Q1, StateLabel::E11),
            (StateLabel::L1, Q2, StateLabel::E12),
        ];
        for (logical, site, error) in cases {
            let out = logical_state(logical).apply(&lowering(site)).unwrap();
            let out = StateVector::normalized(FULL_DIMS.to_vec(), out).unwrap();
            let overlap = out.inner(&logical_state(error)).unwrap().norm();
            assert!((overlap - 1.0).abs() < 1e-12, "{logical:?} -> {error:?}");
        }
    }

    #[test]
    fn error_projector_examples() {
        let eps0 = error_projector(LogicalLabel::L0);
        let l0 = DensityMatrix::from_pure(&logical_state(StateLabel::L0));
        assert!(expectation(&l0, &eps0).unwrap().norm() < 1e-15);
        let eg = DensityMatrix::basis(&FULL_DIMS, &[E, G, 0, 0]).unwrap();
        assert!((expectation(&eg, &eps0).unwrap().re - 1.0).abs() < 1e-15);
        let all = error_projector(LogicalLabel::Lx);
        assert!((all.trace().re - 16.0).abs() < 1e-12);
        assert!((&all * &all).max_abs_diff(&all) < 1e-15);
    }

    #[test]
    fn equal_photon_number() {
        let n = &number_operator(Q1) + &number_operator(Q2);
        for label in [StateLabel::L0, StateLabel::L1] {
            let v = logical_state(label).expectation(&n).unwrap();
            assert!((v - C64::new(2.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn undriven_rotating_frame_is_diagonal() {
        let h = build_rotating_hamiltonian(&DeviceParams::reference(), &DriveConfig::default());
        assert!(h.is_time_independent());
        let m = h.constant().matrix();
        for i in 0..36 {
            for j in 0..36 {
                if i != j {
                    assert_eq!(m[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn red_coupling_element() {
        let drive = aqec_drive();
        let h = build_rotating_hamiltonian(&DeviceParams::reference(), &drive);
        let v = at(&h, 0.0, &[E, E, 0, 0], &[G, F, 0, 0]);
        assert!((v - C64::new(TAU * drive.w_r / 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn logical_states_are_dark() {
        let drive = DriveConfig {
            omega_qr1: 0.0,
            omega_qr2: 0.0,
            ..aqec_drive()
        };
        let h = build_rotating_hamiltonian(&DeviceParams::reference(), &drive);
        let ee = StateVector::basis(&FULL_DIMS, &[E, E, 0, 0]).unwrap();
        for label in [StateLabel::L0, StateLabel::L1] {
            let out = logical_state(label).apply(h.constant()).unwrap();
            assert!(ee.amplitudes().dotc(&out).norm() < 1e-12, "{label:?}");
        }
        // The bright combinations couple.
        let s = FRAC_1_SQRT_2;
        let mut bright = DVector::zeros(36);
        bright[basis_index(&FULL_DIMS, &[G, F, 0, 0]).unwrap()] = C64::new(s, 0.0);
        bright[basis_index(&FULL_DIMS, &[F, G, 0, 0]).unwrap()] = C64::new(s, 0.0);
        assert!(ee.amplitudes().dotc(&(h.constant().matrix() * bright)).norm() > 1.0);
    }

    #[test]
    fn static_frame_at_zero_matches_rotating_plus_generator() {
        let device = DeviceParams::reference();
        let drive = aqec_drive();
        let stat = build_static_hamiltonian(&device, &drive).at(0.0);
        let rot = build_rotating_hamiltonian(&device, &drive).at(0.0);
        let gen = rotating_frame_generator(&drive).scale_real(TAU);
        assert!(stat.max_abs_diff(&(&rot + &gen)) < 1e-12);
    }

    #[test]
    fn static_frame_phases_follow_detuning() {
        let drive = aqec_drive();
        let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
        assert!(!h.is_time_independent());
        let t = 0.37;
        let v = at(&h, t, &[E, E, 0, 0], &[G, G, 0, 0]);
        let want = C64::from_polar(TAU * drive.w_b / 2.0, TAU * drive.nu_b * t);
        assert!((v - want).norm() < 1e-12);
        let undetuned = DriveConfig {
            nu_r: 0.0,
            nu_b: 0.0,
            ..drive
        };
        assert!(build_static_hamiltonian(&DeviceParams::reference(), &undetuned).is_time_independent());
    }

    #[test]
    fn drive_phase_enters_coupling() {
        let drive = DriveConfig {
            phases: [0.3, 0.0, 0.0, 0.0],
            ..aqec_drive()
        };
        let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
        let v = at(&h, 0.0, &[E, E, 0, 0], &[G, F, 0, 0]);
        assert!((v - C64::from_polar(TAU * drive.w_r / 2.0, 0.3)).norm() < 1e-12);
    }

    #[test]
    fn full_hamiltonian_shifts() {
        let drive = aqec_drive();
        let mut device = DeviceParams::reference();
        let plain = build_full_hamiltonian(&device, &drive).at(0.2);
        let stat = build_static_hamiltonian(&device, &drive).at(0.2);
        assert!(plain.max_abs_diff(&stat) < 1e-15);

        device.chi_1 = -0.2;
        device.chi_2 = -0.2;
        device.zz_ff1 = 0.6;
        device.zz_ff2 = 2.2;
        let full = build_full_hamiltonian(&device, &drive);
        let diff = &full.at(0.2) - &stat;
        let ef = basis_index(&FULL_DIMS, &[E, F, 0, 0]).unwrap();
        let fe = basis_index(&FULL_DIMS, &[F, E, 0, 0]).unwrap();
        assert!((diff.matrix()[(ef, ef)].re - TAU * 2.2).abs() < 1e-12);
        assert!((diff.matrix()[(fe, fe)].re - TAU * 0.6).abs() < 1e-12);
        let f1 = basis_index(&FULL_DIMS, &[F, G, 1, 0]).unwrap();
        assert!((diff.matrix()[(f1, f1)].re - TAU * 2.0 * -0.2).abs() < 1e-12);

        // Q1 QR transitions: |eg0⟩↔|fg1⟩ is resonant; |ef0⟩↔|ff1⟩ picks up
        // ZZ_ef - χ·n shifts on its two ends.
        let h = full.at(0.0);
        let m = h.matrix();
        let e = |l: [usize; 4]| m[(basis_index(&FULL_DIMS, &l).unwrap(), basis_index(&FULL_DIMS, &l).unwrap())].re / TAU;
        let base = e([F, G, 1, 0]) - e([E, G, 0, 0]);
        let err = e([F, F, 1, 0]) - e([E, F, 0, 0]);
        assert!(((base - err) - device.zz_ff2).abs() < 1e-9);
    }

    #[test]
    fn collapse_channel_counts() {
        let only_t1 = NoiseModel {
            t1_ge_1: 20.0,
            t1_ge_2: 10.0,
            ..NoiseModel::noiseless()
        };
        assert_eq!(collapse_operators(&only_t1).len(), 2);

        let no_thermal = NoiseModel {
            kappa_1: 0.5,
            kappa_2: 0.5,
            ..NoiseModel::noiseless()
        };
        let ops = collapse_operators(&no_thermal);
        assert_eq!(ops.len(), 2);
        for op in &ops {
            // Lowering operators only: strictly upper triangular.
            let m = op.matrix();
            for i in 0..36 {
                for j in 0..=i {
                    assert_eq!(m[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }

        let table = NoiseModel {
            t1_ge_1: 21.0,
            t1_ge_2: 9.0,
            t1_ef_1: 23.0,
            t1_ef_2: 23.0,
            t_phi_1: 23.0,
            t_phi_2: 23.0,
            t1_up_1: 600.0,
            t1_up_2: 600.0,
            kappa_1: 0.53,
            kappa_2: 0.48,
            n_res: 0.03,
            t_phi_ff: 80.0,
        };
        assert_eq!(collapse_operators(&table).len(), 17);
    }

    #[test]
    fn collapse_rates() {
        let noise = NoiseModel {
            t_phi_1: 4.0,
            kappa_2: 0.5,
            ..NoiseModel::noiseless()
        };
        let ops = collapse_operators(&noise);
        assert_eq!(ops.len(), 3);
        let f = basis_index(&FULL_DIMS, &[F, G, 0, 0]).unwrap();
        assert!((ops[1].matrix()[(f, f)].re - 1.0).abs() < 1e-15);
        let one = basis_index(&FULL_DIMS, &[G, G, 0, 1]).unwrap();
        let zero = basis_index(&FULL_DIMS, &[G, G, 0, 0]).unwrap();
        assert!((ops[2].matrix()[(zero, one)].re - (TAU * 0.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lab_frame_undriven_spectrum() {
        let device = DeviceParams::reference();
        let h = build_lab_hamiltonian(&device, &DriveConfig::default(), 1.0).unwrap();
        assert!(h.is_time_independent());
        let m = h.constant().matrix();
        let energy = |l: [usize; 4]| m[(basis_index(&FULL_DIMS, &l).unwrap(), basis_index(&FULL_DIMS, &l).unwrap())].re / TAU;
        let alpha1 = energy([F, G, 0, 0]) - 2.0 * energy([E, G, 0, 0]);
        let alpha2 = energy([G, F, 0, 0]) - 2.0 * energy([G, E, 0, 0]);
        assert!((alpha1 - device.alpha_1).abs() < 1e-9);
        assert!((alpha2 - device.alpha_2).abs() < 1e-9);
        assert!(h.constant().max_abs_diff(&h.constant().adjoint()) < 1e-12);
    }

    #[test]
    fn lab_qq_envelope_at_zero() {
        let drive = DriveConfig {
            w_r: 1.3,
            w_b: 1.3,
            ..DriveConfig::default()
        };
        let tones = lab_qq_tones(&DeviceParams::reference(), &drive, 1.0).unwrap();
        let sum: f64 = tones.iter().map(|t| t.eval(0.0)).sum();
        let w = 1.3;
        assert!((sum - (2.0 * w / 2f64.sqrt() + w + w / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn lab_scale_validation() {
        let device = DeviceParams::reference();
        let drive = DriveConfig::default();
        assert_eq!(
            build_lab_hamiltonian(&device, &drive, 0.0).unwrap_err(),
            ModelError::InvalidScale(0.0)
        );
        assert!(build_lab_hamiltonian(&device, &drive, 1.5).is_err());
    }

    #[test]
    fn parameter_validation() {
        let mut device = DeviceParams::reference();
        device.validate().unwrap();
        device.alpha_1 = 10.0;
        assert!(matches!(device.validate(), Err(ModelError::InvalidParameter { field: "alpha_1", .. })));
        let drive = DriveConfig {
            w_r: -1.0,
            ..DriveConfig::default()
        };
        assert!(drive.validate().is_err());
        let noise = NoiseModel {
            n_res: 1.2,
            ..NoiseModel::noiseless()
        };
        assert!(noise.validate().is_err());
        let noise = NoiseModel {
            t1_ge_1: 0.0,
            ..NoiseModel::noiseless()
        };
        assert!(noise.validate().is_err());
    }

    fn arb_drive() -> impl Strategy<Value = DriveConfig> {
        (
            (0.0f64..3.0, 0.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
            (0.0f64..1.0, 0.0f64..1.0),
            proptest::array::uniform4(-PI..PI),
        )
            .prop_map(|((w_r, w_b, nu_r, nu_b), (omega_qr1, omega_qr2), phases)| DriveConfig {
                w_r,
                w_b,
                nu_r,
                nu_b,
                omega_qr1,
                omega_qr2,
                phases,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn every_frame_is_hermitian(drive in arb_drive(), times in proptest::collection::vec(0.0f64..30.0, 100)) {
            let mut device = DeviceParams::reference();
            device.chi_1 = -0.2;
            device.zz_ff1 = 0.6;
            device.zz_ff2 = 2.2;
            let specs = [
                build_static_hamiltonian(&device, &drive),
                build_rotating_hamiltonian(&device, &drive),
                build_full_hamiltonian(&device, &drive),
                build_lab_hamiltonian(&device, &drive, 0.1).unwrap(),
            ];
            for spec in &specs {
                for &t in &times {
                    prop_assert!(spec.at(t).hermiticity_deviation() < 1e-10);
                }
            }
        }

        #[test]
        fn dark_for_any_common_phase_free_detuning(w_r in 0.1f64..3.0, w_b in 0.1f64..3.0, nu in -3.0f64..3.0) {
            let drive = DriveConfig { w_r, w_b, nu_r: nu, nu_b: -nu, ..DriveConfig::default() };
            let h = build_rotating_hamiltonian(&DeviceParams::reference(), &drive);
            let ee = StateVector::basis(&FULL_DIMS, &[E, E, 0, 0]).unwrap();
            for label in [StateLabel::L0, StateLabel::L1] {
                let out = logical_state(label).apply(h.constant()).unwrap();
                prop_assert!(ee.amplitudes().dotc(&out).norm() < 1e-12);
            }
        }
    }
}
