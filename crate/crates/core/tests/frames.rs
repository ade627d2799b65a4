use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use starcode::model::{build_lab_hamiltonian, rotating_frame_generator, number_operator};
use starcode::operators::{FULL_DIMS, Q1};
use starcode::solver::{fringe_frequency, uniform_grid};
use starcode::{
    build_rotating_hamiltonian, build_static_hamiltonian, evolve, logical_state, observable_series,
    DensityMatrix, DeviceParams, DriveConfig, SolverOptions, StateLabel, StateVector,
};

fn drive() -> DriveConfig {
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
fn logical_populations_agree_across_frames() {
    let device = DeviceParams::reference();
    let drive = drive();
    let times = uniform_grid(5.0, 21);
        let opts = SolverOptions::default();
    let hs = build_static_hamiltonian(&device, &drive);
    let hr = build_rotating_hamiltonian(&device, &drive);
    for label in [StateLabel::L0, StateLabel::L1, StateLabel::Lx] {
        let rho0 = logical_state(label).to_density();
        let s = evolve(&hs, &[], &rho0, &times, &opts).unwrap();
        let r = evolve(&hr, &[], &rho0, &times, &opts).unwrap();
        let worst = s
            .states
            .iter()
            .zip(&r.states)
            .flat_map(|(a, b)| (0..a.dim()).map(move |i| (a.matrix()[(i, i)] - b.matrix()[(i, i)]).norm()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{label:?}: population deviation {worst}");
    }
}

#[test]
fn qq_frames_agree_on_the_full_state() {
    let device = DeviceParams::reference();
    let drive = DriveConfig {
        omega_qr1: 0.0,
        omega_qr2: 0.0,
        ..drive()
    };
    let times = uniform_grid(5.0, 21);
    let ee = StateVector::basis(&FULL_DIMS, &[1, 1, 0, 0]).unwrap();
    let gf = StateVector::basis(&FULL_DIMS, &[0, 2, 0, 0]).unwrap();
    let v = (ee.amplitudes() + gf.amplitudes()) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let rho0 = StateVector::new(FULL_DIMS.to_vec(), v).unwrap().to_density();
        let opts = SolverOptions::default();
    let s = evolve(&build_static_hamiltonian(&device, &drive), &[], &rho0, &times, &opts).unwrap();
    let r = evolve(&build_rotating_hamiltonian(&device, &drive), &[], &rho0, &times, &opts).unwrap();
    let a = rotating_frame_generator(&drive);
    let mut worst: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        // ρ_static = V ρ_rot V† with V = exp(−2πiAt); A is diagonal.
        let phases = a.matrix().diagonal().map(|z| C64::from_polar(1.0, -std::f64::consts::TAU * z.re * t));
        let v = DMatrix::from_diagonal(&phases);
        let mapped = &v * r.states[i].matrix() * v.adjoint();
        worst = worst.max((mapped - s.states[i].matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn logical_states_do_not_leak() {
    let device = DeviceParams::reference();
    let h = build_static_hamiltonian(&device, &drive());
    let times = uniform_grid(10.0, 41);
    for label in [StateLabel::L0, StateLabel::L1, StateLabel::Lx] {
        let psi = logical_state(label);
        let traj = evolve(&h, &[], &psi.to_density(), &times, &SolverOptions::default()).unwrap();
        let proj = psi.to_density().into_matrix();
        for rho in &traj.states {
            let stay = (rho.matrix() * &proj).trace().re;
            assert!(1.0 - stay < 1e-6, "{label:?}: leaked {}", 1.0 - stay);
        }
    }
}

#[test]
fn lab_frame_qr_rabi_matches_rate() {
    let device = DeviceParams::reference();
    let drive = DriveConfig {
        omega_qr1: 1.0,
        ..DriveConfig::default()
    };
    let h = build_lab_hamiltonian(&device, &drive, 0.05).unwrap();
    let rho0 = DensityMatrix::basis(&FULL_DIMS, &[1, 0, 0, 0]).unwrap();
    let times = uniform_grid(3.0, 601);
    let opts = SolverOptions {
        max_step: 2e-4,
        ..SolverOptions::default()
    };
    let traj = evolve(&h, &[], &rho0, &times, &opts).unwrap();
    let n = observable_series(&traj, &[number_operator(Q1)]).unwrap();
    let y: Vec<f64> = n.column(0).iter().copied().collect();
    let f = fringe_frequency(&times, &y).expect("oscillation");
    assert!((f - 1.0).abs() < 0.1, "fringe {f} MHz");
    let peak = y.iter().copied().fold(0.0, f64::max);
    assert!(peak > 1.9, "peak ⟨n_q1⟩ {peak}");
}
