use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use serde::Deserialize;
use starcode::model::{number_operator, site_operator};
use starcode::operators::{ket_bra, LabeledOperator, FULL_DIMS, Q1, Q2};
use starcode::solver::uniform_grid;
use starcode::{
    build_full_hamiltonian, build_static_hamiltonian, collapse_operators, error_population, evolve, fit_exponential,
    logical_state, observable_series, DensityMatrix, DeviceParams, DriveConfig, HamiltonianSpec, LogicalLabel,
    NoiseModel, SolverOptions, StateLabel, StateVector,
};

#[derive(Deserialize)]
struct Preset {
    device: DeviceParams,
    #[serde(default)]
    drive: DriveConfig,
    noise: NoiseModel,
}

fn free_decay() -> Preset {
    toml::from_str(include_str!("../../cli/presets/free_decay.toml")).expect("bundled preset")
}

fn error_series(preset: &Preset, label: LogicalLabel, tmax: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = build_full_hamiltonian(&preset.device, &preset.drive);
    let times = uniform_grid(tmax, n);
    let rho0 = logical_state(label.into()).to_density();
    let traj = evolve(&h, &collapse_operators(&preset.noise), &rho0, &times, &SolverOptions::default()).unwrap();
    let eps = traj.states.iter().map(|r| error_population(r, label).unwrap()).collect();
    (times, eps)
}

fn label_strategy() -> impl Strategy<Value = StateLabel> {
    prop_oneof![Just(StateLabel::L0), Just(StateLabel::L1), Just(StateLabel::Lx), Just(StateLabel::E01)]
}

fn random_state(re: &[f64], im: &[f64]) -> DensityMatrix {
    let v = DVector::from_iterator(re.len(), re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)));
    StateVector::normalized(FULL_DIMS.to_vec(), v).unwrap().to_density()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn unitary_evolution_keeps_purity(
        w_r in 0.0..2.0f64,
        w_b in 0.0..2.0f64,
        nu_r in -1.5..1.5f64,
        nu_b in -1.5..1.5f64,
        qr in 0.0..1.0f64,
        label in label_strategy(),
    ) {
        let drive = DriveConfig { w_r, w_b, nu_r, nu_b, omega_qr1: qr, omega_qr2: qr, phases: [0.0; 4] };
        let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
        let traj = evolve(&h, &[], &logical_state(label).to_density(), &uniform_grid(2.0, 9), &SolverOptions::default())
            .unwrap();
        for rho in &traj.states {
            prop_assert!((rho.purity() - 1.0).abs() < 1e-8, "purity {}", rho.purity());
        }
    }

    #[test]
    fn dephasing_never_raises_purity(
        t_phi_1 in 2.0..40.0f64,
        t_phi_2 in 2.0..40.0f64,
        t_phi_ff in 2.0..40.0f64,
        re in prop::collection::vec(-1.0..1.0f64, 36),
        im in prop::collection::vec(-1.0..1.0f64, 36),
    ) {
        let noise = NoiseModel { t_phi_1, t_phi_2, t_phi_ff, ..NoiseModel::noiseless() };
        let h = HamiltonianSpec::new(LabeledOperator::zeros(&FULL_DIMS));
        let traj = evolve(&h, &collapse_operators(&noise), &random_state(&re, &im), &uniform_grid(4.0, 17), &SolverOptions::default())
            .unwrap();
        for pair in traj.states.windows(2) {
            prop_assert!(pair[1].purity() <= pair[0].purity() + 1e-10);
        }
    }
}

/// Energy relaxation is not unital: it re-purifies a mixed state toward |g⟩.
#[test]
fn relaxation_can_raise_purity() {
    let noise = NoiseModel {
        t1_ge_1: 2.0,
        t1_ge_2: 2.0,
        t1_ef_1: 1.0,
        t1_ef_2: 1.0,
        ..NoiseModel::noiseless()
    };
    let h = HamiltonianSpec::new(LabeledOperator::zeros(&FULL_DIMS));
    let rho0 = logical_state(StateLabel::L0).to_density();
    let traj = evolve(&h, &collapse_operators(&noise), &rho0, &uniform_grid(30.0, 31), &SolverOptions::default()).unwrap();
    let purity: Vec<f64> = traj.states.iter().map(|r| r.purity()).collect();
    let low = purity.iter().copied().fold(1.0, f64::min);
    assert!(low < 0.6);
    assert!(*purity.last().unwrap() > 0.99);
}

#[test]
fn pure_t1_fit_recovers_channel() {
    let t1: f64 = 12.0;
    let collapse = [site_operator(Q1, &ket_bra(3, 0, 1)).scale_real((1.0 / t1).sqrt())];
    let h = HamiltonianSpec::new(LabeledOperator::zeros(&FULL_DIMS));
    let rho0 = DensityMatrix::basis(&FULL_DIMS, &[1, 0, 0, 0]).unwrap();
    let times = uniform_grid(40.0, 81);
    let traj = evolve(&h, &collapse, &rho0, &times, &SolverOptions::default()).unwrap();
    let pe = observable_series(&traj, &[site_operator(Q1, &ket_bra(3, 1, 1))]).unwrap();
    let y: Vec<f64> = pe.column(0).iter().copied().collect();
    for (t, p) in times.iter().zip(&y) {
        assert!((p - (-t / t1).exp()).abs() < 1e-6);
    }
    let fit = fit_exponential(&times, &y, 0.0).unwrap();
    assert!((fit.tau - t1).abs() / t1 < 0.01, "τ = {}", fit.tau);
}

#[test]
fn red_sidebands_swap_excitations_in_anti_phase() {
    let drive = DriveConfig {
        w_r: 1.0,
        ..DriveConfig::default()
    };
    let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
    let rho0 = DensityMatrix::basis(&FULL_DIMS, &[0, 2, 0, 0]).unwrap();
    let times = uniform_grid(4.0, 401);
    let traj = evolve(&h, &[], &rho0, &times, &SolverOptions::default()).unwrap();
    let n = observable_series(&traj, &[number_operator(Q1), number_operator(Q2)]).unwrap();
    let (n1, n2) = (n.column(0), n.column(1));
    for i in 0..times.len() {
        assert!((n1[i] + n2[i] - 2.0).abs() < 1e-8);
    }
    assert!(n1.min() < 1e-6 && n1.max() > 2.0 - 1e-4, "range [{}, {}]", n1.min(), n1.max());
    assert!(n2.min() < 1e-4 && n2.max() > 2.0 - 1e-6);
}

#[test]
fn free_decay_error_population_rises_then_falls() {
    let (times, eps) = error_series(&free_decay(), LogicalLabel::L0, 40.0, 81);
    let peak = eps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(peak > 0 && peak < times.len() - 1, "peak at t = {}", times[peak]);
    assert!(eps[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert!(eps[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn free_decay_l1_error_population_at_five_us() {
    let (_, eps) = error_series(&free_decay(), LogicalLabel::L1, 5.0, 11);
    let value = *eps.last().unwrap();
    assert!((value - L1_EPS_AT_5US).abs() < 1e-6, "ε = {value}");
}

const L1_EPS_AT_5US: f64 = 0.097_135_771_6;

#[test]
fn qr_sideband_reaches_steady_state() {
    let drive = DriveConfig {
        omega_qr1: 0.49,
        ..DriveConfig::default()
    };
    let noise = NoiseModel {
        kappa_1: 0.53,
        ..NoiseModel::noiseless()
    };
    let h = build_static_hamiltonian(&DeviceParams::reference(), &drive);
    let rho0 = DensityMatrix::basis(&FULL_DIMS, &[1, 0, 0, 0]).unwrap();
    let times = uniform_grid(3.0, 31);
    let traj = evolve(&h, &collapse_operators(&noise), &rho0, &times, &SolverOptions::default()).unwrap();
    let n = observable_series(&traj, &[number_operator(Q1), number_operator(Q2)]).unwrap();
    let last = n.row(times.len() - 1);
    let total = last[0] + last[1];
    assert!(total > 1.8 && total <= 2.0 + 1e-9, "⟨n_q1 + n_q2⟩ = {total}");
}
