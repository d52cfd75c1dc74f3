use specsurg::linalg::{c64, real_mat, HermMatrix, C64};
use specsurg::problem::{family_exponential, validate_boundary, zero_potential, ProblemSpec};
use specsurg::spectral::assemble_spectrum;
use specsurg::surgery::{add_bound_state, remove_bound_state, AddNormalization};

fn scalar(v: specsurg::problem::Potential, a: f64, b: f64) -> ProblemSpec {
    ProblemSpec::new(v, validate_boundary(real_mat(1, &[a]), real_mat(1, &[b])).unwrap()).unwrap()
}

#[test]
fn free_add_matches_closed_form() {
    let (kappa, c) = (1.0_f64, 1.0_f64);
    let spec = scalar(zero_potential(1), 1.0, kappa);
    let report = assemble_spectrum(&spec).unwrap();
    assert_eq!(report.count(), 0);
    let norm = AddNormalization::Direct(HermMatrix::new(real_mat(1, &[c])).unwrap());
    let res = add_bound_state(&report, &spec, kappa, &norm).unwrap();
    assert!((res.perturbed_spec.b()[(0, 0)].re - (kappa - c * c)).abs() < 1e-12);
    for &x in &[0.0, 0.3, 1.0, 2.5, 5.0, 10.0] {
        let e = (2.0 * kappa * x).exp();
        let d = 2.0 * kappa - c * c + c * c * e;
        let exact = 8.0 * c * c * kappa * kappa * (c * c - 2.0 * kappa) * e / (d * d);
        let got = res.perturbed_spec.potential.eval(x)[(0, 0)].re;
        assert!((got - exact).abs() < 1e-7 * (1.0 + exact.abs()));
    }
    for &kr in &[0.5, 1.3, 2.0] {
        let k = c64(kr, 0.0);
        let jt = res.jost(k).unwrap()[(0, 0)];
        let exact = -C64::i() * (k - C64::i() * kappa);
        assert!((jt - exact).norm() < 1e-8, "{jt} vs {exact}");
    }
    let audit = res.det_audit(&[0.5, 1.5]).unwrap();
    assert!(audit.iter().all(|row| row.rel_error < 1e-8));
    let after = assemble_spectrum(&res.perturbed_spec).unwrap();
    assert_eq!(after.count(), 1);
    assert!((after.states[0].kappa - kappa).abs() < 1e-8);
}

#[test]
fn exponential_remove_gives_free() {
    let (kappa, c) = (1.0_f64, 0.8_f64);
    let v = family_exponential(2.0 * kappa - c * c, c * c, kappa).unwrap();
    let spec = scalar(v, 1.0, kappa - c * c);
    let report = assemble_spectrum(&spec).unwrap();
    let res = remove_bound_state(&report, &spec, kappa).unwrap();
    assert!((res.perturbed_spec.b()[(0, 0)].re - kappa).abs() < 1e-8);
    for &x in &[0.0, 0.5, 2.0, 6.0] {
        let got = res.perturbed_spec.potential.eval(x)[(0, 0)].re;
        assert!(got.abs() < 1e-7);
    }
    let f = res.f_tilde(c64(0.7, 0.0)).unwrap();
    for &x in &[0.0, 1.0, 3.0] {
        let got = f.value(x)[(0, 0)];
        let exact = (C64::i() * 0.7 * x).exp();
        assert!((got - exact).norm() < 1e-7, "{got} {exact}");
    }
}
