//! Independent oracles: closed forms on flat tori and dense grids elsewhere.

use std::f64::consts::SQRT_2;

use centralab::constants::{audit_conditions, eta_for, CalibrationOptions, FlowConstants};
use centralab::engine::TorusField;
use centralab::sampling::{rng_for, sample_points, shell_points};
use centralab::section::{integral_i, SectionChart};
use centralab::SystemSpec;

/// Bound on the second time derivative of G, which controls the forward
/// difference error.
const FD_SLOPE: f64 = 20.0;
const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];

fn cat() -> SystemSpec {
    SystemSpec::suspension_flow(CAT, 1.0).unwrap()
}

fn ode() -> SystemSpec {
    let field = TorusField {
        velocity: vec![1.0, SQRT_2],
        modulation: 0.3,
    };
    SystemSpec::torus_ode_flow(field, 1e-3).unwrap()
}

/// Distance from `v` to the nearest integer vector.
fn lattice_norm(v: &[f64]) -> f64 {
    v.iter()
        .map(|c| (c - c.round()).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn eta_never_grows_with_more_samples() {
    for sys in [
        cat(),
        ode(),
        SystemSpec::torus_translation_flow(vec![1.0, SQRT_2]).unwrap(),
    ] {
        let etas: Vec<f64> = [100, 400, 1600]
            .iter()
            .map(|&n| eta_for(&sys, 0.3, n, 5).unwrap())
            .collect();
        assert!(etas[0] >= etas[1] && etas[1] >= etas[2], "{etas:?}");
    }
}

#[test]
fn eta_of_a_translation_is_the_lattice_distance() {
    let w = [1.0, SQRT_2];
    let sys = SystemSpec::torus_translation_flow(w.to_vec()).unwrap();
    for t0 in [0.1, 0.3, 0.7] {
        let exact = 0.9 * lattice_norm(&[t0 * w[0], t0 * w[1]]);
        let eta = eta_for(&sys, t0, 200, 3).unwrap();
        assert!((eta - exact).abs() < 1e-12, "T0 {t0}: {eta} vs {exact}");
    }
}

#[test]
fn eta_of_an_ode_flow_agrees_with_a_dense_grid() {
    let sys = ode();
    let t0 = 0.3;
    let mut dense = f64::INFINITY;
    let n = 100;
    for i in 0..n {
        for j in 0..n {
            let x = sys
                .point(0, &[i as f64 / n as f64, j as f64 / n as f64])
                .unwrap();
            dense = dense.min(
                sys.distance(&sys.evaluate_flow(t0, &x).unwrap(), &x)
                    .unwrap(),
            );
        }
    }
    let sampled = eta_for(&sys, t0, 1000, 0).unwrap() / 0.9;
    // A sample minimum can only overestimate; a smooth displacement field keeps it close.
    assert!(sampled >= dense - 1e-3, "{sampled} < {dense}");
    assert!(sampled <= dense * 1.02, "{sampled} vs {dense}");
}

#[test]
fn eta_of_the_cat_suspension_agrees_with_a_dense_grid() {
    let sys = cat();
    let t0 = 0.4;
    let n = 22;
    let mut dense = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let u = [i, j, k].map(|v| (f64::from(v) + 0.5) / f64::from(n));
                let x = sys.point_from_unit(&u);
                dense = dense.min(
                    sys.distance(&sys.evaluate_flow(t0, &x).unwrap(), &x)
                        .unwrap(),
                );
            }
        }
    }
    let sampled = eta_for(&sys, t0, 1000, 0).unwrap() / 0.9;
    assert!(
        (sampled - dense).abs() <= 0.05 * dense,
        "{sampled} vs {dense}"
    );
}

#[test]
fn calibrated_translation_constants_satisfy_the_closed_form_conditions() {
    let w = [1.0, SQRT_2];
    let speed = (w[0] * w[0] + w[1] * w[1]).sqrt();
    let sys = SystemSpec::torus_translation_flow(w.to_vec()).unwrap();
    let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
    // Isometry: sup d(phi_t p, x) = delta + mu1 |w| and d(phi_s p, phi_s x) = d(p, x).
    assert!(c.delta + c.mu1 * speed < c.eta / 4.0, "{c:?}");
    assert!(c.delta <= c.eta * c.mu1 / (12.0 * c.t0), "{c:?}");
    assert!(c.mu1 * speed / 3.0 >= 2.0 * c.delta, "{c:?}");
}

#[test]
fn calibrated_cat_constants_survive_a_denser_audit() {
    let sys = cat();
    let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
    let fresh = sample_points(&sys, 16, 99);
    let audit = audit_conditions(&sys, &c, &fresh, 256, 128, 99).unwrap();
    assert!(audit.passed(), "{audit:?}");
}

#[test]
fn simpson_rule_has_converged_at_chart_centers() {
    let circle = SystemSpec::torus_translation_flow(vec![1.0]).unwrap();
    for sys in [cat(), circle] {
        let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
        for x in &sample_points(&sys, 48, 0) {
            let coarse = integral_i(&sys, x, x, c.t0, 256).unwrap();
            let fine = integral_i(&sys, x, x, c.t0, 512).unwrap();
            assert!((coarse - fine).abs() < 1e-10, "{coarse} vs {fine}");
        }
    }
}

/// Off-center the integrand has kinks (closest approach, cut locus), so the
/// default rule is only held to the dense reference.
#[test]
fn default_quadrature_stays_near_the_dense_reference_on_balls() {
    let translation = SystemSpec::torus_translation_flow(vec![1.0, SQRT_2]).unwrap();
    for sys in [cat(), translation, ode()] {
        let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
        for (i, x) in sample_points(&sys, 6, 1).iter().enumerate() {
            for p in shell_points(&sys, x, c.delta, 16, &mut rng_for(3, i)).unwrap() {
                let coarse = integral_i(&sys, &p, x, c.t0, 256).unwrap();
                let dense = integral_i(&sys, &p, x, c.t0, 2048).unwrap();
                assert!((coarse - dense).abs() < 5e-6, "{coarse} vs {dense}");
            }
        }
    }
}

#[test]
fn integral_on_the_circle_matches_the_closed_form() {
    let sys = SystemSpec::torus_translation_flow(vec![1.0]).unwrap();
    let x = sys.point(0, &[0.2]).unwrap();
    let t0 = 0.25;
    for e in [0.0, 0.01, 0.1] {
        let p = sys.point(0, &[0.2 + e]).unwrap();
        let exact = e * t0 + t0 * t0 / 2.0;
        let got = integral_i(&sys, &p, &x, t0, 256).unwrap();
        assert!((got - exact).abs() < 1e-14, "e {e}: {got} vs {exact}");
    }
}

#[test]
fn section_time_on_the_circle_undoes_the_offset() {
    let sys = SystemSpec::torus_translation_flow(vec![1.0]).unwrap();
    let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
    let x = sys.point(0, &[0.5]).unwrap();
    let chart = SectionChart::new(&sys, x, c.clone()).unwrap();
    for e in [-0.9, -0.3, 0.2, 0.9] {
        let p = sys.point(0, &[0.5 + e * c.delta]).unwrap();
        let tau = chart.solve(&p).unwrap().tau;
        assert!(
            (tau + e * c.delta).abs() < 1e-9,
            "offset {}: tau {tau}",
            e * c.delta
        );
    }
}

#[test]
fn g_derivative_matches_forward_differences() {
    let sys = cat();
    let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
    for (i, x) in sample_points(&sys, 6, 4).iter().enumerate() {
        let chart = SectionChart::with_quadrature(&sys, x.clone(), c.clone(), 2048).unwrap();
        let ball = shell_points(&sys, x, c.delta, 4, &mut rng_for(4, i)).unwrap();
        for p in &ball {
            for k in -2..=2 {
                let t = f64::from(k) * c.mu1 / 3.0;
                let exact = chart.g_derivative(t, p).unwrap();
                let g0 = chart.g(t, p).unwrap();
                for h in [1e-3, 1e-4] {
                    let fd = (chart.g(t + h, p).unwrap() - g0) / h;
                    assert!(
                        (fd - exact).abs() < FD_SLOPE * h,
                        "point {i}, t {t}, h {h}: {fd} vs {exact}"
                    );
                }
            }
        }
    }
}
