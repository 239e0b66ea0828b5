use deer::ode::deer_solve_ode_with;
use deer::problems::Logistic;
use deer::{DeerConfig, Dynamics, FnDynamics, InputSequence, Interpolation, OdeProblem, TimeGrid};

const STEPS: [usize; 4] = [250, 500, 1000, 2000];

fn max_error<D: Dynamics<f64>>(p: &OdeProblem<f64, D>, mode: Interpolation, exact: impl Fn(f64) -> f64) -> f64 {
    let cfg = DeerConfig::default().with_tolerance(1e-13);
    let (y, r, _) = deer_solve_ode_with(p, mode, &cfg).unwrap();
    assert!(r.converged);
    p.grid.times().iter().enumerate().map(|(i, &t)| (y.row(i)[0] - exact(t)).abs()).fold(0.0, f64::max)
}

fn factors(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

fn logistic_errors(mode: Interpolation) -> Vec<f64> {
    let law = Logistic { rate: 1.0 };
    STEPS
        .iter()
        .map(|&l| {
            let p = OdeProblem::autonomous(law, vec![0.1], TimeGrid::uniform(0.0, 5.0, l).unwrap()).unwrap();
            max_error(&p, mode, |t| law.exact(0.1, t))
        })
        .collect()
}

/// `y' = −y + sin(ωt)` with its closed form.
fn forced_errors(mode: Interpolation) -> Vec<f64> {
    let w = 5.0;
    let y0 = 0.5;
    let c = y0 + w / (1.0 + w * w);
    let exact = move |t: f64| c * (-t).exp() + ((w * t).sin() - w * (w * t).cos()) / (1.0 + w * w);
    STEPS
        .iter()
        .map(|&l| {
            let grid = TimeGrid::uniform(0.0, 4.0, l).unwrap();
            let x = InputSequence::from_flat(l + 1, 1, grid.times().iter().map(|t| (w * t).sin()).collect()).unwrap();
            let f = FnDynamics::new(1, 1, |y: &[f64], x: &[f64], out: &mut [f64]| out[0] = -y[0] + x[0])
                .with_jacobian(|_y: &[f64], _x: &[f64], out: &mut [f64]| out[0] = -1.0);
            let p = OdeProblem::new(f, vec![y0], grid, x).unwrap();
            max_error(&p, mode, exact)
        })
        .collect()
}

#[test]
fn midpoint_is_second_order() {
    for errs in [logistic_errors(Interpolation::Midpoint), forced_errors(Interpolation::Midpoint)] {
        for f in factors(&errs) {
            assert!((3.4..=4.6).contains(&f), "{errs:?}");
        }
    }
}

#[test]
fn left_value_is_first_order_in_the_forcing() {
    let errs = forced_errors(Interpolation::Left);
    for f in factors(&errs) {
        assert!((1.7..=2.3).contains(&f), "{errs:?}");
    }
}

#[test]
fn left_value_on_autonomous_problem_is_exponential_euler() {
    // with no time dependence the left sample is exact for G and z at yᵢ,
    // so the step is exponential Rosenbrock–Euler, which is second order
    let errs = logistic_errors(Interpolation::Left);
    for f in factors(&errs) {
        assert!((3.4..=4.6).contains(&f), "{errs:?}");
    }
}

#[test]
fn errors_vanish_as_step_shrinks() {
    for mode in [Interpolation::Midpoint, Interpolation::Left] {
        let errs = logistic_errors(mode);
        assert!(errs.windows(2).all(|w| w[1] < w[0]));
        assert!(*errs.last().unwrap() < 1e-5);
    }
}
