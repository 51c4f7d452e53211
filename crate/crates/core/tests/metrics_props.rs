use std::f64::consts::SQRT_2;

use heraldsim_core::metrics::{
    chsh_max, implied_efficiency, preparation_from_p11, tangle, total_state_fidelity_from,
};
use heraldsim_core::qubit::su2_from_rotation_vector;
use heraldsim_core::TwoQubitDensityMatrix;
use nalgebra::Matrix4;
use num_complex::Complex64;
use proptest::prelude::*;

/// Measured `P_{1;1}`, post-selected fidelity and total fidelity per ratio.
const MEASURED: [(&str, f64, f64, f64); 4] = [
    ("17_83", 2.58e-4, 0.637, 1.64e-4),
    ("30_70", 6.14e-4, 0.842, 5.17e-4),
    ("50_50", 3.06e-3, 0.575, 1.76e-3),
    ("70_30", 8.03e-3, 0.619, 4.97e-3),
];

fn state_from(entries: &[f64]) -> TwoQubitDensityMatrix {
    let mut m = Matrix4::<Complex64>::zeros();
    for k in 0..2 {
        let v = nalgebra::Vector4::from_fn(|i, _| {
            Complex64::new(entries[8 * k + 2 * i], entries[8 * k + 2 * i + 1])
        });
        m += v * v.adjoint();
    }
    m += Matrix4::identity() * Complex64::new(entries[16].abs() * 0.1, 0.0);
    TwoQubitDensityMatrix::from_unnormalized(m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tangle_and_chsh_are_local_invariants(
        entries in prop::collection::vec(-1.0f64..1.0, 17),
        r1 in prop::array::uniform3(-3.0f64..3.0),
        r2 in prop::array::uniform3(-3.0f64..3.0),
    ) {
        prop_assume!(entries[..16].iter().any(|x| x.abs() > 0.05));
        let rho = state_from(&entries);
        let rotated = rho.local_rotated(&su2_from_rotation_vector(r1), &su2_from_rotation_vector(r2));
        prop_assert!((tangle(&rho) - tangle(&rotated)).abs() < 1e-8);
        prop_assert!((chsh_max(&rho) - chsh_max(&rotated)).abs() < 1e-8);
        let t = tangle(&rho);
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!(chsh_max(&rho) <= 2.0 * SQRT_2 + 1e-9);
    }
}

#[test]
fn werner_tangle_is_monotone_with_threshold_at_one_third() {
    let mut previous = 0.0;
    for k in 0..=1000 {
        let p = k as f64 / 1000.0;
        let t = tangle(&TwoQubitDensityMatrix::werner(p).unwrap());
        assert!(t >= previous - 1e-12, "p = {p}");
        if p <= 1.0 / 3.0 - 1e-3 {
            assert!(t < 1e-12, "p = {p}: {t}");
        }
        if p >= 1.0 / 3.0 + 1e-3 {
            assert!(t > 0.0, "p = {p}");
        }
        previous = t;
    }
}

#[test]
fn measured_total_fidelities_follow_from_p11_and_post_fidelity() {
    for (label, p11, f_post, f_meas) in MEASURED {
        let f = total_state_fidelity_from(p11, f_post);
        assert!(
            ((f - f_meas) / f_meas).abs() < 0.02,
            "{label}: {f} vs {f_meas}"
        );
    }
}

#[test]
fn measured_preparation_efficiencies_share_one_efficiency() {
    // eta fitted on 50/50 must explain 17/83 and 70/30 within their errors
    let eta = implied_efficiency(3.06e-3, 0.294).unwrap();
    assert!((eta - 0.102).abs() < 5e-4, "{eta}");
    for (p11, p, err) in [(2.58e-4, 0.025, 0.002), (8.03e-3, 0.772, 0.066)] {
        let est = preparation_from_p11(p11, eta).unwrap().raw;
        assert!((est - p).abs() < err, "{est} vs {p}");
    }
}
