//! Python bindings: `import offgrid`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use offgrid::admissibility::{minimal_certified_separation, paper_template, ScanSpec};
use offgrid::certificates::{check_nondegeneracy, GridSpec, LimitCertificate};
use offgrid::features::{DiscreteMeasure, FeatureFamily, MeasurementOperator};
use offgrid::geometry::{DomainBox, LimitKernel, Point};
use offgrid::sketch::{compute_sketch, learn_gmm, sample_gmm, GmmModel};
use offgrid::solver::{solve_blasso, stability_report, SolverConfig};

fn err(e: offgrid::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square matrix as a list of rows"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn points(xs: Vec<Vec<f64>>) -> PyResult<Vec<Point>> {
    xs.into_iter().map(|x| Point::new(x).map_err(err)).collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn domain(kernel: &LimitKernel, xs: &[Point], bounds: Option<(Vec<f64>, Vec<f64>)>, margin: f64) -> PyResult<DomainBox> {
    match bounds {
        Some((lo, hi)) => DomainBox::new(lo, hi).map_err(err),
        None if kernel.period().is_some() => Ok(DomainBox::unit(kernel.dim())),
        None => kernel.default_box(xs, margin).map_err(err),
    }
}

/// A limit kernel with its Fisher geometry.
#[pyclass(name = "Kernel", module = "offgrid", frozen)]
struct PyKernel(LimitKernel);

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn fejer(fc: u32, d: usize) -> PyResult<Self> {
        LimitKernel::fejer(fc, d).map(PyKernel).map_err(err)
    }

    #[staticmethod]
    fn gaussian(sigma: Vec<Vec<f64>>) -> PyResult<Self> {
        LimitKernel::gaussian(matrix(sigma)?).map(PyKernel).map_err(err)
    }

    #[staticmethod]
    fn laplace(alpha: Vec<f64>) -> PyResult<Self> {
        LimitKernel::laplace(alpha).map(PyKernel).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn eval(&self, x: Vec<f64>, xp: Vec<f64>) -> PyResult<f64> {
        self.0.eval(&x, &xp).map_err(err)
    }

    fn metric(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.0.metric_tensor(&x).map(|h| rows(&h)).map_err(err)
    }

    fn distance(&self, x: Vec<f64>, xp: Vec<f64>) -> PyResult<f64> {
        self.0.fisher_distance(&x, &xp).map_err(err)
    }

    /// Metric-normalized derivative block K^(ij)(x, x') as a flat row-major list.
    fn deriv(&self, i: usize, j: usize, x: Vec<f64>, xp: Vec<f64>) -> PyResult<Vec<Complex64>> {
        let b = self.0.deriv(i, j, &Point::new(x).map_err(err)?, &Point::new(xp).map_err(err)?).map_err(err)?;
        Ok(b.value.data().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Kernel({}, d={})", self.0.name(), self.0.dim())
    }
}

#[pyclass(name = "FeatureFamily", module = "offgrid", frozen)]
struct PyFamily(FeatureFamily);

#[pymethods]
impl PyFamily {
    #[staticmethod]
    fn discrete_fourier(fc: u32, d: usize) -> PyResult<Self> {
        FeatureFamily::discrete_fourier(fc, d).map(PyFamily).map_err(err)
    }

    #[staticmethod]
    fn gaussian_fourier(sigma: Vec<Vec<f64>>) -> PyResult<Self> {
        FeatureFamily::gaussian_fourier(matrix(sigma)?).map(PyFamily).map_err(err)
    }

    #[staticmethod]
    fn laplace(alpha: Vec<f64>) -> PyResult<Self> {
        FeatureFamily::laplace(alpha).map(PyFamily).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (sigma, c=None))]
    fn gmm_sketch(sigma: Vec<Vec<f64>>, c: Option<f64>) -> PyResult<Self> {
        FeatureFamily::gmm_sketch(matrix(sigma)?, c).map(PyFamily).map_err(err)
    }

    #[getter]
    fn kernel(&self) -> PyKernel {
        PyKernel(self.0.limit_kernel().clone())
    }

    fn sample_frequencies(&self, m: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.0.sample_frequencies(m, seed).map(|f| f.omegas).map_err(err)
    }
}

/// Φ for one draw of m frequencies.
#[pyclass(name = "Operator", module = "offgrid", frozen)]
struct PyOperator(MeasurementOperator);

#[pymethods]
impl PyOperator {
    #[new]
    fn new(family: &PyFamily, m: usize, seed: u64) -> PyResult<Self> {
        MeasurementOperator::sample(family.0.clone(), m, seed).map(PyOperator).map_err(err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn kernel(&self) -> PyKernel {
        PyKernel(self.0.kernel().clone())
    }

    #[getter]
    fn frequencies(&self) -> Vec<Vec<f64>> {
        self.0.freqs().omegas.clone()
    }

    fn forward(&self, amplitudes: Vec<Complex64>, positions: Vec<Vec<f64>>) -> PyResult<Vec<Complex64>> {
        let mu = DiscreteMeasure::new(amplitudes, points(positions)?).map_err(err)?;
        self.0.forward(&mu).map_err(err)
    }

    /// (Φ*p)(x).
    fn adjoint(&self, p: Vec<Complex64>, x: Vec<f64>) -> PyResult<Complex64> {
        if p.len() != self.0.m() {
            return Err(PyValueError::new_err(format!("p has length {} but m = {}", p.len(), self.0.m())));
        }
        self.0.kernel().check_point(&x).map_err(err)?;
        Ok(self.0.adjoint_value(&p, &x))
    }

    fn empirical_kernel(&self, x: Vec<f64>, xp: Vec<f64>) -> PyResult<Complex64> {
        self.0.empirical_kernel(0, 0, &x, &xp).map(|b| b.value.value()).map_err(err)
    }
}

#[pyclass(name = "Solution", module = "offgrid", frozen, get_all)]
struct PySolution {
    amplitudes: Vec<Complex64>,
    positions: Vec<Vec<f64>>,
    objective: f64,
    gap: f64,
    certificate_max: f64,
    iterations: usize,
    converged: bool,
    message: Option<String>,
}

#[pymethods]
impl PySolution {
    fn __len__(&self) -> usize {
        self.amplitudes.len()
    }

    fn __repr__(&self) -> String {
        format!("Solution(spikes={}, objective={:.6e}, gap={:.2e})", self.amplitudes.len(), self.objective, self.gap)
    }
}

/// Solves the BLASSO on y. `domain` is (lo, hi); without it the box around
/// `anchors` (or the torus) is searched.
#[pyfunction]
#[pyo3(signature = (op, y, lam, domain=None, anchors=None, max_atoms=None, tol_gap=None))]
fn solve(
    op: &PyOperator,
    y: Vec<Complex64>,
    lam: f64,
    domain: Option<(Vec<f64>, Vec<f64>)>,
    anchors: Option<Vec<Vec<f64>>>,
    max_atoms: Option<usize>,
    tol_gap: Option<f64>,
) -> PyResult<PySolution> {
    let kernel = op.0.kernel();
    let mut cfg = SolverConfig::new(kernel, lam);
    if domain.is_some() || kernel.period().is_none() {
        let xs = points(anchors.unwrap_or_default())?;
        if domain.is_none() && xs.is_empty() {
            return Err(PyValueError::new_err("non-periodic kernels need a domain or anchors"));
        }
        cfg.domain = Some(self::domain(kernel, &xs, domain, 3.0)?);
    }
    if let Some(n) = max_atoms {
        cfg.max_atoms = n;
    }
    if let Some(t) = tol_gap {
        cfg.tol_gap = t;
    }
    let r = solve_blasso(&op.0, &y, &cfg).map_err(err)?;
    Ok(PySolution {
        amplitudes: r.measure.amplitudes,
        positions: r.measure.positions.into_iter().map(Point::into_vec).collect(),
        objective: r.objective,
        gap: r.gap,
        certificate_max: r.certificate_max,
        iterations: r.iterations,
        converged: r.converged,
        message: r.message,
    })
}

/// Support-stability summary of a recovered measure against the truth.
#[pyfunction]
#[pyo3(signature = (kernel, amplitudes, positions, true_amplitudes, true_positions, lam, w_norm=0.0))]
#[allow(clippy::too_many_arguments)]
fn stability<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    amplitudes: Vec<Complex64>,
    positions: Vec<Vec<f64>>,
    true_amplitudes: Vec<Complex64>,
    true_positions: Vec<Vec<f64>>,
    lam: f64,
    w_norm: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let rec = DiscreteMeasure::new(amplitudes, points(positions)?).map_err(err)?;
    let truth = DiscreteMeasure::new(true_amplitudes, points(true_positions)?).map_err(err)?;
    let r = stability_report(&rec, &truth, &kernel.0, lam, w_norm).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("spike_count_match", r.spike_count_match)?;
    d.set_item("sign_match", r.sign_match)?;
    d.set_item("amplitude_error", r.amplitude_error)?;
    d.set_item("position_error", r.position_error)?;
    d.set_item("bound_rhs", r.bound_rhs)?;
    d.set_item("bound_satisfied", r.bound_satisfied)?;
    d.set_item("matching", r.matching)?;
    Ok(d)
}

/// Published constants of the kernel's family with Δ certified for s_max spikes.
#[pyfunction]
fn certified_constants<'py>(py: Python<'py>, kernel: &PyKernel, s_max: usize) -> PyResult<Bound<'py, PyDict>> {
    let t = paper_template(&kernel.0, s_max).map_err(err)?;
    let sep = minimal_certified_separation(&kernel.0, &t, &ScanSpec::default_for(&kernel.0, t.r_near)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("r_near", t.r_near)?;
    d.set_item("delta", sep.delta)?;
    d.set_item("eps0", t.eps0)?;
    d.set_item("eps2", t.eps2)?;
    d.set_item("h", t.h)?;
    d.set_item("c_h", t.c_h)?;
    d.set_item("s_max", t.s_max)?;
    d.set_item("admissible", sep.report.pass)?;
    let b = PyDict::new(py);
    for ((i, j), v) in &t.b {
        b.set_item((*i, *j), *v)?;
    }
    d.set_item("b", b)?;
    Ok(d)
}

/// Nondegeneracy of the limit pre-certificate of a spike configuration.
#[pyfunction]
#[pyo3(signature = (kernel, amplitudes, positions, r_near, eps0, eps2, domain=None))]
#[allow(clippy::too_many_arguments)]
fn nondegeneracy<'py>(
    py: Python<'py>,
    kernel: &PyKernel,
    amplitudes: Vec<Complex64>,
    positions: Vec<Vec<f64>>,
    r_near: f64,
    eps0: f64,
    eps2: f64,
    domain: Option<(Vec<f64>, Vec<f64>)>,
) -> PyResult<Bound<'py, PyDict>> {
    let xs = points(positions)?;
    let (eta, _) = LimitCertificate::precertificate(&kernel.0, &xs, &amplitudes).map_err(err)?;
    let bx = self::domain(&kernel.0, &xs, domain, 5.0)?;
    let rep = check_nondegeneracy(&eta, &kernel.0, &amplitudes, &xs, r_near, eps0, eps2, &GridSpec::default_for(r_near, bx))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pass", rep.pass)?;
    d.set_item("eps0_measured", rep.eps0_measured)?;
    d.set_item("eps2_measured", rep.eps2_measured)?;
    d.set_item("max_abs_eta", rep.max_abs_eta)?;
    d.set_item("worst_near_point", rep.worst_near_point.map(Point::into_vec))?;
    d.set_item("worst_far_point", rep.worst_far_point.map(Point::into_vec))?;
    Ok(d)
}

#[pyfunction]
fn gmm_sample(weights: Vec<f64>, means: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let model = GmmModel::new(weights, points(means)?, matrix(sigma)?).map_err(err)?;
    Ok(sample_gmm(&model, n, seed).map_err(err)?.into_iter().map(Point::into_vec).collect())
}

/// Sketches `data` with m random frequencies and learns a mixture with known Σ.
/// Returns (weights, means).
#[pyfunction]
#[pyo3(signature = (data, sigma, m, lam, seed, c=None))]
fn gmm_learn(
    data: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    m: usize,
    lam: f64,
    seed: u64,
    c: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let sigma = matrix(sigma)?;
    let data = points(data)?;
    let fam = FeatureFamily::gmm_sketch(sigma.clone(), c).map_err(err)?;
    let freqs = fam.sample_frequencies(m, seed).map_err(err)?;
    let sketch = compute_sketch(&data, &freqs).map_err(err)?;
    // search box: data bounding box
    let d = sigma.nrows();
    let lo: Vec<f64> = (0..d).map(|c| data.iter().map(|p| p.coords()[c]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|c| data.iter().map(|p| p.coords()[c]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let cfg = SolverConfig::new(fam.limit_kernel(), lam).with_domain(DomainBox::new(lo, hi).map_err(err)?);
    let fit = learn_gmm(&sketch, &sigma, c, &cfg).map_err(err)?;
    Ok((fit.model.weights, fit.model.means.into_iter().map(Point::into_vec).collect()))
}

#[pymodule]
#[pyo3(name = "offgrid")]
pub fn offgrid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", offgrid::VERSION)?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyFamily>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(certified_constants, m)?)?;
    m.add_function(wrap_pyfunction!(nondegeneracy, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_sample, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_learn, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_roundtrip() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matrix(vec![vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn default_domain_covers_anchors() {
        let k = LimitKernel::gaussian_iso(1, 4.0).unwrap();
        let xs = vec![Point::scalar(-1.0), Point::scalar(2.0)];
        let bx = domain(&k, &xs, None, 3.0).unwrap();
        assert!(bx.contains(&[-1.0]) && bx.contains(&[2.0]));
        let torus = domain(&LimitKernel::fejer(8, 2).unwrap(), &[], None, 3.0).unwrap();
        assert_eq!(torus, DomainBox::unit(2));
    }
}
