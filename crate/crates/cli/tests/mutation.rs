use shellrig::validate::run_suite;
use shellrig_core::ambient::{jacobi_coefficients, JacobiCoefficients};

fn flipped_u2(kappa: f64, t: f64) -> JacobiCoefficients {
    let j = jacobi_coefficients(kappa, t);
    JacobiCoefficients { u1: j.u1, u2: -j.u2 }
}

#[test]
fn sign_bug_in_u2_is_caught_by_the_slice_form_check() {
    let checks = run_suite(0, flipped_u2);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    for kappa in ["-1", "0", "1"] {
        let name = format!("thickening.slice_form_matches_b.kappa={kappa}");
        assert!(failed.contains(&name.as_str()), "{name} passed; failures: {failed:?}");
    }
    assert!(failed.iter().all(|n| n.starts_with("thickening.")), "{failed:?}");
}

#[test]
fn the_real_coefficients_pass() {
    let checks = run_suite(0, jacobi_coefficients);
    assert!(checks.iter().all(|c| c.passed), "{:?}", checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
}
