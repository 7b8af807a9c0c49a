use nalgebra::DMatrix;
use num_complex::Complex64;
use offgrid::features::{DiscreteMeasure, FeatureFamily, MeasurementOperator};
use offgrid::geometry::{DomainBox, Point};
use offgrid::solver::{duality_gap, objective, solve_blasso, stability_report, SolverConfig};

fn setup() -> (MeasurementOperator, DiscreteMeasure, Vec<Complex64>, DomainBox) {
    let fam = FeatureFamily::gaussian_fourier(DMatrix::identity(1, 1) * 0.01).unwrap();
    let op = MeasurementOperator::sample(fam, 120, 4).unwrap();
    let mu0 = DiscreteMeasure::new(
        vec![Complex64::new(1.0, 0.5), Complex64::new(-0.8, 0.0)],
        vec![Point::scalar(0.2), Point::scalar(1.4)],
    )
    .unwrap();
    let y = op.forward(&mu0).unwrap();
    (op, mu0, y, DomainBox::new(vec![-0.5], vec![2.0]).unwrap())
}

#[test]
fn solution_satisfies_first_order_conditions() {
    let (op, _, y, bx) = setup();
    let lambda = 0.02;
    let res = solve_blasso(&op, &y, &SolverConfig::new(op.kernel(), lambda).with_domain(bx.clone())).unwrap();
    assert!(res.converged, "{:?}", res.message);
    // eta = Phi*(y - Phi mu)/lambda: |eta| <= 1 everywhere, eta(x_i) = sign(a_i)
    let fx = op.forward(&res.measure).unwrap();
    let p: Vec<Complex64> = y.iter().zip(&fx).map(|(a, b)| (a - b) / lambda).collect();
    for (a, x) in res.measure.amplitudes.iter().zip(&res.measure.positions) {
        let eta = op.adjoint_value(&p, x.coords());
        assert!((eta - a / a.norm()).norm() < 1e-4, "{eta} vs {}", a / a.norm());
    }
    let sup = (0..=2500).map(|i| op.adjoint_value(&p, &[-0.5 + i as f64 * 1e-3]).norm()).fold(0.0, f64::max);
    assert!(sup <= 1.0 + 1e-4, "{sup}");
    let g = duality_gap(&op, &y, lambda, &res.measure, &bx, 0.01).unwrap();
    assert!(g.gap <= 1e-7 * g.primal.max(1.0), "{g:?}");
}

#[test]
fn objective_is_no_worse_than_the_truth_and_the_zero_measure() {
    let (op, mu0, y, bx) = setup();
    for lambda in [0.005, 0.05, 0.5] {
        let res = solve_blasso(&op, &y, &SolverConfig::new(op.kernel(), lambda).with_domain(bx.clone())).unwrap();
        let p = objective(&op, &y, lambda, &res.measure).unwrap();
        assert!(p <= objective(&op, &y, lambda, &mu0).unwrap() + 1e-9);
        assert!(p <= objective(&op, &y, lambda, &DiscreteMeasure::empty()).unwrap() + 1e-9);
    }
}

#[test]
fn large_lambda_gives_the_zero_measure() {
    let (op, _, y, bx) = setup();
    // lambda above sup |Phi* y| makes 0 optimal
    let sup = (0..=2500).map(|i| op.adjoint_value(&y, &[-0.5 + i as f64 * 1e-3]).norm()).fold(0.0, f64::max);
    let res = solve_blasso(&op, &y, &SolverConfig::new(op.kernel(), 1.5 * sup).with_domain(bx)).unwrap();
    assert!(res.measure.is_empty());
}

#[test]
fn small_lambda_recovers_the_support() {
    let (op, mu0, y, bx) = setup();
    let lambda = 1e-3;
    let res = solve_blasso(&op, &y, &SolverConfig::new(op.kernel(), lambda).with_domain(bx)).unwrap();
    let rep = stability_report(&res.measure, &mu0, op.kernel(), lambda, 0.0).unwrap();
    assert!(rep.spike_count_match && rep.sign_match, "{rep:?}");
    assert!(rep.amplitude_error + rep.position_error < 0.05);
}

#[test]
fn solver_is_deterministic() {
    let (op, _, y, bx) = setup();
    let cfg = SolverConfig::new(op.kernel(), 0.01).with_domain(bx);
    assert_eq!(solve_blasso(&op, &y, &cfg).unwrap().measure, solve_blasso(&op, &y, &cfg).unwrap().measure);
}

#[test]
fn stability_report_ignores_label_order() {
    let (op, mu0, _, _) = setup();
    let mut amps = mu0.amplitudes.clone();
    let mut pos = mu0.positions.clone();
    amps.reverse();
    pos.reverse();
    let shifted = DiscreteMeasure::new(
        amps.iter().map(|a| a * 1.01).collect(),
        pos.iter().map(|x| Point::scalar(x.coords()[0] + 0.01)).collect(),
    )
    .unwrap();
    let perm = DiscreteMeasure::new(amps, pos).unwrap();
    let a = stability_report(&shifted, &mu0, op.kernel(), 0.01, 0.0).unwrap();
    let b = stability_report(&shifted, &perm, op.kernel(), 0.01, 0.0).unwrap();
    assert_eq!(a.amplitude_error, b.amplitude_error);
    assert_eq!(a.position_error, b.position_error);
    // Gaussian with variance 0.01: d_H = |dx| / 0.1
    assert!((a.position_error - (2.0f64).sqrt() * 0.1).abs() < 1e-9);
}
