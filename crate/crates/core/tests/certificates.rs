use num_complex::Complex64;
use offgrid::admissibility::{paper_constants, paper_r_near, verify_admissible, ScanSpec};
use offgrid::certificates::{check_nondegeneracy, Certificate, EmpiricalCertificate, GridSpec, LimitCertificate};
use offgrid::features::{FeatureFamily, MeasurementOperator};
use offgrid::geometry::{DomainBox, LimitKernel, Point};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn exact_fejer_operator_gives_the_limit_certificate() {
    let fam = FeatureFamily::discrete_fourier(16, 1).unwrap();
    let op = MeasurementOperator::exact_discrete_fourier(fam.clone()).unwrap();
    let xs = vec![Point::scalar(0.1), Point::scalar(0.45), Point::scalar(0.8)];
    let signs = vec![c(1.0, 0.0), c(0.0, -1.0), c(-0.6, 0.8)];
    let (emp, _) = EmpiricalCertificate::precertificate(&op, &xs, &signs).unwrap();
    let (lim, _) = LimitCertificate::precertificate(fam.limit_kernel(), &xs, &signs).unwrap();
    for i in 0..200 {
        let x = [i as f64 / 200.0];
        assert!((emp.value(&x) - lim.value(&x)).norm() < 1e-10, "{x:?}");
    }
}

#[test]
fn empirical_precertificate_interpolates() {
    let fam = FeatureFamily::laplace(vec![1.0, 1.0]).unwrap();
    let op = MeasurementOperator::sample(fam, 300, 2).unwrap();
    let xs = vec![Point::new(vec![0.5, 0.5]).unwrap(), Point::new(vec![6.0, 3.0]).unwrap()];
    let signs = vec![c(0.0, 1.0), c(-1.0, 0.0)];
    let (eta, _) = EmpiricalCertificate::precertificate(&op, &xs, &signs).unwrap();
    for (x, s) in xs.iter().zip(&signs) {
        let der = eta.derivatives(x, 1);
        assert!((der[0].value() - s).norm() < 1e-9);
        assert!(der[1].frobenius() < 1e-9);
    }
}

#[test]
fn well_separated_gaussian_pair_is_nondegenerate() {
    let k = LimitKernel::gaussian_iso(1, 1.0).unwrap();
    let xs = vec![Point::scalar(0.0), Point::scalar(12.0)];
    let a = vec![c(1.0, 0.0), c(-1.0, 0.0)];
    let (eta, _) = LimitCertificate::precertificate(&k, &xs, &a).unwrap();
    let r = paper_r_near(&k);
    let q = (-0.25f64).exp();
    let bx = DomainBox::new(vec![-5.0], vec![17.0]).unwrap();
    let rep = check_nondegeneracy(&eta, &k, &a, &xs, r, (1.0 - q) / 2.0, q / 4.0, &GridSpec::default_for(r, bx)).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.interpolation_error < 1e-12 && rep.gradient_error < 1e-12);
}

#[test]
fn colliding_pair_is_degenerate_and_reports_the_worst_point() {
    // same-sign spikes at distance 2 r_near: eta bulges above 1 in between
    let k = LimitKernel::gaussian_iso(1, 1.0).unwrap();
    let r = paper_r_near(&k);
    let xs = vec![Point::scalar(0.0), Point::scalar(2.5 * r)];
    let a = vec![c(1.0, 0.0), c(1.0, 0.0)];
    let (eta, _) = LimitCertificate::precertificate(&k, &xs, &a).unwrap();
    let bx = DomainBox::new(vec![-5.0], vec![6.0]).unwrap();
    let rep = check_nondegeneracy(&eta, &k, &a, &xs, r, 0.1, 0.3, &GridSpec::default_for(r, bx)).unwrap();
    assert!(!rep.pass);
    assert!(rep.worst_near_point.is_some() || rep.worst_far_point.is_some());
}

#[test]
fn gaussian_admissibility_depends_on_separation() {
    let k = LimitKernel::gaussian_iso(1, 1.0).unwrap();
    let p = paper_constants(&k, 2).unwrap();
    let spec = ScanSpec::default_for(&k, p.r_near);
    assert!(verify_admissible(&k, &p, &spec).unwrap().pass);
    let tight = verify_admissible(&k, &p.with_delta(p.delta / 10.0), &spec).unwrap();
    assert!(!tight.pass);
    assert!(tight.failures().iter().all(|f| f.worst_offset.is_some() || f.worst_pair.is_some()));
}

#[test]
fn certified_separation_is_invariant_to_gaussian_scale() {
    // d_H is scale free, so the certified Delta must not depend on the variance
    let a = paper_constants(&LimitKernel::gaussian_iso(1, 1.0).unwrap(), 2).unwrap();
    let b = paper_constants(&LimitKernel::gaussian_iso(1, 9.0).unwrap(), 2).unwrap();
    assert!((a.delta - b.delta).abs() < 1e-6 * a.delta, "{} {}", a.delta, b.delta);
}
