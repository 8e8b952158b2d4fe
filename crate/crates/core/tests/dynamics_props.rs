use nalgebra::Vector2;
use proptest::prelude::*;
use skidgp::dynamics::{dynamic_rates_nominal, step_nominal, step_nominal_with, DynamicParams, Integrator};
use skidgp::identify::{identify_params, IdentRecord, Quadrature};
use skidgp::{wrap_angle, Control, State5};

fn params() -> DynamicParams {
    DynamicParams::new([5.0, 1.0, 0.2, 4.0, 0.5, 3.0], 0.0).unwrap()
}

fn state() -> impl Strategy<Value = State5> {
    (-5.0..5.0f64, -5.0..5.0f64, -3.1..3.1f64, -2.0..2.0f64, -2.0..2.0f64)
        .prop_map(|(x, y, t, v, w)| State5::new(x, y, t, v, w).unwrap())
}

fn control() -> impl Strategy<Value = Control> {
    (-4.0..4.0f64, -4.0..4.0f64).prop_map(|(v, w)| Control::new(v, w))
}

fn max_diff(a: &State5, b: &State5) -> f64 {
    let mut d = (a.to_vector() - b.to_vector()).abs();
    d[2] = wrap_angle(a.theta - b.theta).unwrap().abs();
    d.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rk4_half_steps_agree(x in state(), u in control()) {
        let p = params();
        let dt = 0.01;
        let one = step_nominal(&x, &u, &p, dt).unwrap();
        let half = step_nominal(&x, &u, &p, dt / 2.0).unwrap();
        let two = step_nominal(&half, &u, &p, dt / 2.0).unwrap();
        prop_assert!(max_diff(&one, &two) < 1e-8);
    }

    #[test]
    fn rk4_local_error_is_fifth_order(x in state(), u in control()) {
        let p = params();
        let gap = |dt: f64| {
            let one = step_nominal(&x, &u, &p, dt).unwrap();
            let half = step_nominal(&x, &u, &p, dt / 2.0).unwrap();
            let two = step_nominal(&half, &u, &p, dt / 2.0).unwrap();
            max_diff(&one, &two)
        };
        let (coarse, fine) = (gap(0.2), gap(0.1));
        // Halving dt shrinks the gap by about 2^5.
        prop_assume!(coarse > 1e-11);
        prop_assert!(fine < coarse / 12.0, "coarse {coarse:e} fine {fine:e}");
    }

    #[test]
    fn rates_are_affine_in_control(v in -2.0..2.0f64, w in -2.0..2.0f64, u1 in control(), u2 in control()) {
        let p = params();
        let eta = Vector2::new(v, w);
        let f = |u: &Control| dynamic_rates_nominal(&eta, u, &p).unwrap();
        let f0 = f(&Control::ZERO);
        let sum = Control::new(u1.v_ref + u2.v_ref, u1.omega_ref + u2.omega_ref);
        let lhs = f(&sum) - f0;
        let rhs = (f(&u1) - f0) + (f(&u2) - f0);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }
}

#[test]
fn self_generated_log_has_tiny_residual() {
    // Explicit Euler data is matched exactly by forward quadrature.
    let p = params();
    let dt = 0.05;
    let mut x = State5::new(0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
    let mut log = Vec::new();
    for k in 0..400 {
        let t = k as f64 * dt;
        let u = Control::new(2.0 * (0.7 * t).sin() + 1.5 * (2.3 * t).cos(), 2.5 * (1.1 * t).cos() - (3.1 * t).sin());
        log.push(IdentRecord {
            eta: Vector2::new(x.v, x.omega),
            u,
        });
        x = step_nominal_with(&x, &u, &p, dt, Integrator::Euler).unwrap();
    }
    let report = identify_params(&log, dt, 1.0, Quadrature::Forward, 0.0).unwrap();
    assert!(report.relative_residual < 1e-6, "{}", report.relative_residual);
    for (a, b) in report.params.c.iter().zip(p.c) {
        assert!(((a - b) / b).abs() < 1e-8);
    }
}

#[test]
fn zero_linear_command_is_unexcited() {
    let log: Vec<_> = (0..200)
        .map(|k| IdentRecord {
            eta: Vector2::new(0.0, (k as f64 * 0.1).sin()),
            u: Control::new(0.0, (k as f64 * 0.2).cos()),
        })
        .collect();
    let err = identify_params(&log, 0.1, 0.2, Quadrature::Trapezoid, 0.0).unwrap_err();
    assert!(err.is_numerical());
}
