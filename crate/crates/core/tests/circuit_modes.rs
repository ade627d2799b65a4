use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector4};
use proptest::prelude::*;
use starcode::circuit::{adiabatic_couplings, normal_modes, qq_sideband_rate, CircuitParams, CHARGING_ENERGY_GHZ_FF};
use starcode::model::pair_state;
use starcode::StateLabel;

/// Node inductive form built directly from the three junction energies.
fn stiffness(c: &CircuitParams, phi: f64) -> Matrix3<f64> {
    let (a, b, k) = (c.e_j1, c.e_j2, c.e_jc * (PI * phi).cos());
    Matrix3::new(a, 0.0, -a, 0.0, b, -b, -a, -b, a + b + k)
}

fn capacitance(c: &CircuitParams) -> Matrix3<f64> {
    Matrix3::new(
        c.c_q1 + c.c_q12,
        -c.c_q12,
        0.0,
        -c.c_q12,
        c.c_q2 + c.c_q12,
        0.0,
        0.0,
        0.0,
        c.c_q1 + c.c_q2 + c.c_c,
    )
}

/// Squared mode frequencies as roots of `det(K − λ·C/(8E_C))`: cubic
/// coefficients by exact interpolation, trigonometric roots, Newton polish.
fn oracle_frequencies(c: &CircuitParams, phi: f64) -> [f64; 3] {
    let k = stiffness(c, phi);
    let b = capacitance(c) / (8.0 * CHARGING_ENERGY_GHZ_FF);
    let p = |x: f64| (k - b * x).determinant();
    let scale = k.trace() / b.trace();
    let nodes = [0.0, scale, 2.0 * scale, 3.0 * scale];
    let v = Matrix4::from_fn(|i, j| nodes[i].powi(j as i32));
    let coef = v.lu().solve(&Vector4::from_fn(|i, _| p(nodes[i]))).unwrap();
    let (a3, a2, a1, a0) = (coef[3], coef[2], coef[1], coef[0]);
    let (bb, cc, dd) = (a2 / a3, a1 / a3, a0 / a3);
    let q = (3.0 * cc - bb * bb) / 9.0;
    let r = (9.0 * bb * cc - 27.0 * dd - 2.0 * bb.powi(3)) / 54.0;
    let theta = (r / (-q).powi(3).sqrt()).clamp(-1.0, 1.0).acos();
    let mut roots = [0.0; 3];
    for (m, root) in roots.iter_mut().enumerate() {
        let mut x = 2.0 * (-q).sqrt() * ((theta + 2.0 * PI * m as f64) / 3.0).cos() - bb / 3.0;
        for _ in 0..50 {
            let h = 1e-7 * x.abs().max(1.0);
            let d = (p(x + h) - p(x - h)) / (2.0 * h);
            if d == 0.0 {
                break;
            }
            let step = p(x) / d;
            x -= step;
            if step.abs() < 1e-15 * x.abs() {
                break;
            }
        }
        *root = x.sqrt();
    }
    roots.sort_by(f64::total_cmp);
    roots
}

#[test]
fn reference_modes_match_characteristic_roots() {
    let c = CircuitParams::reference();
    for phi in [0.0, 0.2, 0.3795, 0.45] {
        let modes = normal_modes(&c, phi).unwrap();
        let oracle = oracle_frequencies(&c, phi);
        for (a, b) in modes.frequencies.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-9, "Φ = {phi}: {a} vs {b}");
        }
    }
}

#[test]
fn qubit_modes_sit_below_four_ghz_at_operating_flux() {
    let modes = normal_modes(&CircuitParams::reference(), 0.3795).unwrap();
    assert!(modes.frequencies[0] < 4.0 && modes.frequencies[1] < 4.0, "{:?}", modes.frequencies);
}

fn circuit_strategy() -> impl Strategy<Value = CircuitParams> {
    (100.0..200.0f64, 100.0..200.0f64, 100.0..250.0f64, 0.5..5.0f64, 8.0..16.0f64, 8.0..16.0f64, 500.0..1500.0f64)
        .prop_map(|(c_q1, c_q2, c_c, c_q12, e_j1, e_j2, e_jc)| CircuitParams {
            c_q1,
            c_q2,
            c_c,
            c_q12,
            e_j1,
            e_j2,
            e_jc,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modes_match_characteristic_roots(c in circuit_strategy(), phi in 0.0..0.45f64) {
        let modes = normal_modes(&c, phi).unwrap();
        let oracle = oracle_frequencies(&c, phi);
        for (a, b) in modes.frequencies.iter().zip(oracle) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn relabeling_transmons_keeps_spectrum(c in circuit_strategy(), phi in 0.0..0.45f64) {
        let swapped = CircuitParams { c_q1: c.c_q2, c_q2: c.c_q1, e_j1: c.e_j2, e_j2: c.e_j1, ..c };
        let a = normal_modes(&c, phi).unwrap().frequencies;
        let b = normal_modes(&swapped, phi).unwrap().frequencies;
        for (x, y) in a.iter().zip(b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn vanishing_modulation_leaves_static_coupling(c in circuit_strategy(), phi in 0.0..0.45f64, w1 in 3.0..4.0f64, w2 in 3.0..4.0f64) {
        let pair = (pair_state(StateLabel::E01), pair_state(StateLabel::E11));
        let rate = qq_sideband_rate(&c, phi, 0.0, (&pair.0, &pair.1), w1, w2).unwrap();
        prop_assert_eq!(rate, 0.0);
        let (g1, _) = adiabatic_couplings(&c, phi, w1, w2).unwrap();
        let direct = (c.e_j1 * c.e_j2).sqrt() / (2.0 * c.e_jc * (PI * phi).cos()) * (w1 * w2).sqrt();
        prop_assert!((g1 - direct).abs() <= 1e-12 * direct);
    }
}
