use nalgebra::DMatrix;
use num_complex::Complex64;
use offgrid::features::FeatureFamily;
use offgrid::geometry::Point;
use offgrid::sketch::{
    compute_sketch, exact_sketch, learn_gmm, match_means, read_dataset_csv, sample_gmm, write_dataset_csv, GmmModel,
};
use offgrid::solver::SolverConfig;

fn model() -> GmmModel {
    GmmModel::new(
        vec![0.25, 0.75],
        vec![Point::new(vec![0.0, 1.0]).unwrap(), Point::new(vec![4.0, -2.0]).unwrap()],
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
    )
    .unwrap()
}

#[test]
fn exact_sketch_is_the_gaussian_characteristic_function() {
    let g = model();
    let fam = FeatureFamily::gmm_sketch(g.sigma.clone(), None).unwrap();
    let f = fam.sample_frequencies(30, 1).unwrap();
    let ex = exact_sketch(&g, &f);
    for (o, v) in f.omegas.iter().zip(&ex) {
        let q = o[0] * o[0] * 1.0 + 2.0 * o[0] * o[1] * 0.3 + o[1] * o[1] * 0.5;
        let want = (Complex64::new(0.0, o[1]).exp() * 0.25 + Complex64::new(0.0, 4.0 * o[0] - 2.0 * o[1]).exp() * 0.75)
            * (-0.5 * q).exp()
            / 30f64.sqrt();
        assert!((v - want).norm() < 1e-14);
    }
}

#[test]
fn empirical_sketch_converges_to_the_exact_one() {
    let g = model();
    let fam = FeatureFamily::gmm_sketch(g.sigma.clone(), None).unwrap();
    let f = fam.sample_frequencies(100, 2).unwrap();
    let ex = exact_sketch(&g, &f);
    let err = |n: usize| -> f64 {
        let sk = compute_sketch(&sample_gmm(&g, n, 3).unwrap(), &f).unwrap();
        sk.values.iter().zip(&ex).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
    };
    // each entry has variance at most 1/(m n), so the norm is about 1/sqrt(n)
    let e3 = err(1000);
    let e5 = err(100_000);
    assert!(e3 < 5.0 / 1000f64.sqrt(), "{e3}");
    assert!(e5 < 5.0 / 100_000f64.sqrt(), "{e5}");
    assert!(e5 < e3);
}

#[test]
fn single_component_is_recovered() {
    let sigma = DMatrix::identity(1, 1);
    let truth = GmmModel::new(vec![1.0], vec![Point::scalar(1.7)], sigma.clone()).unwrap();
    let fam = FeatureFamily::gmm_sketch(sigma.clone(), None).unwrap();
    let f = fam.sample_frequencies(200, 4).unwrap();
    let sk = compute_sketch(&sample_gmm(&truth, 50_000, 4).unwrap(), &f).unwrap();
    let k = fam.limit_kernel();
    let bx = k.default_box(&truth.means, 2.0).unwrap();
    let fit = learn_gmm(&sk, &sigma, None, &SolverConfig::new(k, 0.01).with_domain(bx)).unwrap();
    assert!(!fit.empty);
    let mm = match_means(&fit.model, &truth).unwrap();
    assert!(mm.count_match, "{:?}", fit.model);
    assert!(mm.max_error < 0.05, "{}", mm.max_error);
    assert!((fit.model.weights[0] - 1.0).abs() < 1e-12);
}

#[test]
fn matching_is_permutation_invariant() {
    let g = model();
    let mut p = g.clone();
    p.weights.reverse();
    p.means.reverse();
    let mm = match_means(&p, &g).unwrap();
    assert_eq!(mm.max_error, 0.0);
    assert_eq!(mm.pairs.iter().map(|q| (q.0, q.1)).collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
}

#[test]
fn sample_moments_match_the_model() {
    let g = model();
    let data = sample_gmm(&g, 200_000, 9).unwrap();
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..2).map(|c| data.iter().map(|p| p.coords()[c]).sum::<f64>() / n).collect();
    let want = [0.75 * 4.0, 0.25 * 1.0 + 0.75 * -2.0];
    for c in 0..2 {
        assert!((mean[c] - want[c]).abs() < 0.02, "{mean:?}");
    }
}

#[test]
fn dataset_csv_roundtrip() {
    let data = sample_gmm(&model(), 50, 1).unwrap();
    let mut buf = Vec::new();
    write_dataset_csv(&data, &mut buf).unwrap();
    assert_eq!(read_dataset_csv(&buf[..]).unwrap(), data);
}
