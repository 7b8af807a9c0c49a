//! BLASSO solver: conditional gradient with sliding.
//!
//! P(μ) = ½‖Φμ − y‖² + λ|μ|(X). The dual value of a point p with
//! sup|Φ*p| ≤ 1 is D(p) = ½‖y‖² − ½‖y − λp‖².

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::admissibility::paper_r_near;
use crate::assignment::min_cost_matching;
use crate::error::{Error, Result};
use crate::features::{vec_norm, DiscreteMeasure, MeasurementOperator};
use crate::geometry::{DomainBox, KernelFamily, LimitKernel, Point};
use crate::linalg::max_eigenvalue_sym;
use crate::rng::{substream, PROBE};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_atoms: usize,
    /// Spacing of the atom search grid, in d_H units.
    pub grid_init_spacing: f64,
    /// Sliding (joint amplitude/position) iterations per outer step.
    pub local_steps: usize,
    /// Atoms closer than this in d_H are merged.
    pub atom_merge_radius: f64,
    pub tol_gap: f64,
    pub tol_grad: f64,
    pub max_outer_iters: usize,
    pub seed: u64,
    /// Search domain; required except for periodic kernels.
    pub domain: Option<DomainBox>,
}

impl SolverConfig {
    pub fn new(kernel: &LimitKernel, lambda: f64) -> Self {
        let r = paper_r_near(kernel);
        SolverConfig {
            lambda,
            max_atoms: 50,
            grid_init_spacing: r / 2.0,
            local_steps: 30,
            atom_merge_radius: r / 4.0,
            tol_gap: 1e-9,
            tol_grad: 1e-7,
            max_outer_iters: 100,
            seed: 0,
            domain: None,
        }
    }

    pub fn with_domain(mut self, bx: DomainBox) -> Self {
        self.domain = Some(bx);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.lambda, "lambda")?;
        pos(self.grid_init_spacing, "grid_init_spacing")?;
        pos(self.atom_merge_radius, "atom_merge_radius")?;
        pos(self.tol_gap, "tol_gap")?;
        pos(self.tol_grad, "tol_grad")?;
        if self.max_atoms == 0 || self.max_outer_iters == 0 {
            return Err(Error::InvalidInput("max_atoms and max_outer_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub gap: f64,
    pub atoms: usize,
    pub certificate_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub measure: DiscreteMeasure,
    /// max |η_λ| over the search grid and its local maxima.
    pub certificate_max: f64,
    pub gap: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: Option<String>,
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "objective", "gap", "atoms", "certificate_max"])?;
        for t in &self.trace {
            wr.write_record([
                t.iteration.to_string(),
                format!("{:.16e}", t.objective),
                format!("{:.16e}", t.gap),
                t.atoms.to_string(),
                format!("{:.16e}", t.certificate_max),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn objective(op: &MeasurementOperator, y: &[Complex64], lambda: f64, mu: &DiscreteMeasure) -> Result<f64> {
    let fx = op.forward(mu)?;
    let r: f64 = fx.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(0.5 * r + lambda * mu.total_variation())
}

fn dual_value(y: &[Complex64], lambda: f64, p: &[Complex64], scale: f64) -> f64 {
    let y2: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let r2: f64 = y.iter().zip(p).map(|(a, b)| (a - b * (lambda * scale)).norm_sqr()).sum();
    0.5 * y2 - 0.5 * r2
}

/// Candidate positions and their feature columns.
struct SearchGrid {
    points: Vec<Vec<f64>>,
    /// m × G matrix of feature columns.
    features: DMatrix<Complex64>,
    spacing: f64,
    domain: DomainBox,
}

impl SearchGrid {
    fn new(op: &MeasurementOperator, domain: &DomainBox, spacing: f64) -> Result<Self> {
        let kernel = op.kernel();
        let d = kernel.dim();
        if domain.dim() != d {
            return Err(Error::InvalidInput("domain dimension differs from kernel dimension".into()));
        }
        let (zlo, zhi) = kernel.normalized_bounds(domain);
        let periodic = kernel.period().is_some();
        let n: Vec<usize> = (0..d)
            .map(|c| {
                let e = zhi[c] - zlo[c];
                let k = (e / spacing).ceil() as usize;
                if periodic { k.max(1) } else { k.max(1) + 1 }
            })
            .collect();
        let total: usize = n.iter().product();
        if total > 4_000_000 {
            return Err(Error::InvalidInput(format!("search grid would have {total} points; increase grid_init_spacing")));
        }
        let mut points = Vec::with_capacity(total);
        for f in 0..total {
            let mut rest = f;
            let z: Vec<f64> = (0..d)
                .map(|c| {
                    let i = rest % n[c];
                    rest /= n[c];
                    let e = zhi[c] - zlo[c];
                    if periodic {
                        zlo[c] + e * i as f64 / n[c] as f64
                    } else if n[c] == 1 {
                        zlo[c]
                    } else {
                        zlo[c] + e * i as f64 / (n[c] - 1) as f64
                    }
                })
                .collect();
            let x = kernel.from_normalized(&z);
            if kernel.in_box(domain, &x) && kernel.check_point(&x).is_ok() || periodic {
                points.push(x);
            } else if let Some(x) = clamp_into(kernel, domain, &x) {
                points.push(x);
            }
        }
        let cols: Vec<Vec<Complex64>> = points.par_iter().map(|x| op.feature_column(x)).collect();
        let m = op.m();
        let features = DMatrix::from_fn(m, cols.len(), |k, g| cols[g][k]);
        Ok(SearchGrid { points, features, spacing, domain: domain.clone() })
    }

    /// |Φ*p| at every grid point.
    fn abs_eta(&self, p: &[Complex64]) -> Vec<f64> {
        let pv = DVector::from_column_slice(p);
        let v = self.features.adjoint() * pv;
        v.iter().map(|c| c.norm()).collect()
    }
}

fn clamp_into(kernel: &LimitKernel, bx: &DomainBox, x: &[f64]) -> Option<Vec<f64>> {
    let c: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.clamp(bx.lo[i], bx.hi[i])).collect();
    kernel.check_point(&c).ok().map(|_| c)
}

/// Keeps a moved position valid: torus wrap for Fejér, x ≥ 0 for Laplace.
fn admissible_position(kernel: &LimitKernel, x: Vec<f64>) -> Option<Vec<f64>> {
    match kernel.family() {
        KernelFamily::Fejer { .. } => Some(x.into_iter().map(|v| v.rem_euclid(1.0)).collect()),
        _ => {
            if kernel.check_point(&x).is_ok() {
                Some(x)
            } else {
                None
            }
        }
    }
}

/// Metric-preconditioned Newton ascent of |Φ*p|² from `x0`.
fn ascend(op: &MeasurementOperator, p: &[Complex64], x0: &[f64], radius: f64) -> (Vec<f64>, f64) {
    let kernel = op.kernel();
    let d = kernel.dim();
    let mut x = x0.to_vec();
    let mut f = op.adjoint_value(p, &x).norm_sqr();
    for _ in 0..80 {
        let der = match op.adjoint_derivatives(p, &x, 2) {
            Ok(v) => v,
            Err(_) => break,
        };
        let eta = der[0].value();
        let g = DVector::from_fn(d, |c, _| 2.0 * (eta.conj() * der[1].data()[c]).re);
        let h = DMatrix::from_fn(d, d, |a, b| {
            2.0 * (der[1].data()[a].conj() * der[1].data()[b]).re + 2.0 * (eta.conj() * der[2].get(&[a, b])).re
        });
        let gn = g.norm();
        if gn < 1e-15 * f.max(1e-300) {
            break;
        }
        let newton = if max_eigenvalue_sym(&h) < 0.0 { (-&h).cholesky().map(|c| c.solve(&g)) } else { None };
        let mut v = newton.unwrap_or_else(|| &g * (radius / gn));
        if v.norm() > radius {
            v *= radius / v.norm();
        }
        let s = kernel.metric_inv_sqrt(&x);
        let mut accepted = false;
        for _ in 0..40 {
            let step = &s * &v;
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(cand) = admissible_position(kernel, cand) {
                let fc = op.adjoint_value(p, &cand).norm_sqr();
                if fc > f {
                    x = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            v *= 0.5;
        }
        if !accepted || v.norm() < 1e-13 {
            break;
        }
    }
    (x, f.sqrt())
}

struct Maximum {
    x: Vec<f64>,
    value: f64,
    certificate_max: f64,
}

fn find_max(op: &MeasurementOperator, grid: &SearchGrid, p: &[Complex64], seed: u64, iter: usize) -> Maximum {
    let vals = grid.abs_eta(p);
    let grid_max = vals.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    // top local maxima: skip grid points within two spacings of a chosen start
    let kernel = op.kernel();
    let mut starts: Vec<usize> = Vec::new();
    for &g in &order {
        if starts.len() >= 10 {
            break;
        }
        let xg = &grid.points[g];
        if starts.iter().all(|&s| kernel.distance_unchecked(&grid.points[s], xg) > 2.0 * grid.spacing) {
            starts.push(g);
        }
    }
    let mut rng = substream(seed, PROBE, iter as u64);
    for _ in 0..2 {
        if !grid.points.is_empty() {
            starts.push(rng.random_range(0..grid.points.len()));
        }
    }
    let results: Vec<(Vec<f64>, f64)> =
        starts.par_iter().map(|&g| ascend(op, p, &grid.points[g], 2.0 * grid.spacing)).collect();
    let mut best = Maximum { x: grid.points.first().cloned().unwrap_or_default(), value: grid_max, certificate_max: grid_max };
    if let Some(&g) = order.first() {
        best.x = grid.points[g].clone();
    }
    for (x, v) in results {
        let inside = kernel.period().is_some() || grid.domain.contains(&x);
        if inside && v > best.value {
            best.value = v;
            best.x = x;
        }
    }
    best.certificate_max = best.value.max(grid_max);
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualityGap {
    pub gap: f64,
    pub primal: f64,
    pub dual: f64,
    pub certificate_max: f64,
}

/// P(μ) − D(p/max(1, sup|Φ*p|)) with p = (y − Φμ)/λ, the sup taken over a
/// grid of the domain refined by local ascent.
pub fn duality_gap(
    op: &MeasurementOperator,
    y: &[Complex64],
    lambda: f64,
    mu: &DiscreteMeasure,
    domain: &DomainBox,
    spacing: f64,
) -> Result<DualityGap> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let grid = SearchGrid::new(op, domain, spacing)?;
    let fx = op.forward(mu)?;
    let p: Vec<Complex64> = y.iter().zip(&fx).map(|(a, b)| (a - b) / lambda).collect();
    let mx = find_max(op, &grid, &p, 0, 0);
    let primal = objective(op, y, lambda, mu)?;
    let dual = dual_value(y, lambda, &p, 1.0 / mx.certificate_max.max(1.0));
    Ok(DualityGap { gap: primal - dual, primal, dual, certificate_max: mx.certificate_max })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoResult {
    pub amplitudes: Vec<Complex64>,
    pub gap: f64,
    pub iterations: usize,
}

/// min_a ½‖Φ_X a − y‖² + λ‖a‖₁ by accelerated proximal gradient.
pub fn lasso_on_support(op: &MeasurementOperator, xs: &[Point], y: &[Complex64], lambda: f64) -> Result<LassoResult> {
    lasso_warm(op, xs, y, lambda, None)
}

fn lasso_warm(
    op: &MeasurementOperator,
    xs: &[Point],
    y: &[Complex64],
    lambda: f64,
    warm: Option<&[Complex64]>,
) -> Result<LassoResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if y.len() != op.m() {
        return Err(Error::InvalidInput(format!("y has length {} but m = {}", y.len(), op.m())));
    }
    let a = op.feature_matrix(xs)?;
    Ok(lasso_matrix(&a, y, lambda, warm, 1e-10, 1_000_000))
}

/// Complex soft-thresholding a ↦ a·max(0, 1 − τ/|a|).
pub fn soft_threshold(a: Complex64, tau: f64) -> Complex64 {
    let n = a.norm();
    if n <= tau {
        ZERO
    } else {
        a * (1.0 - tau / n)
    }
}

/// Proximal solver on an explicit matrix, run until the duality gap is below `tol`.
pub fn lasso_matrix(
    a: &DMatrix<Complex64>,
    y: &[Complex64],
    lambda: f64,
    warm: Option<&[Complex64]>,
    tol: f64,
    max_iter: usize,
) -> LassoResult {
    let s = a.ncols();
    if s == 0 {
        return LassoResult { amplitudes: vec![], gap: 0.0, iterations: 0 };
    }
    let yv = DVector::from_column_slice(y);
    let g = a.adjoint() * a;
    let b = a.adjoint() * &yv;
    let y2 = yv.norm_squared();
    let lip = crate::linalg::spectral_norm_c(&g).max(1e-300);
    let t = 1.0 / lip;
    let mut x = match warm {
        Some(w) if w.len() == s => DVector::from_column_slice(w),
        _ => DVector::from_element(s, ZERO),
    };
    let gap_of = |x: &DVector<Complex64>| -> (f64, f64) {
        let gx = &g * x;
        let r2 = (x.dotc(&gx).re - 2.0 * x.dotc(&b).re + y2).max(0.0);
        let primal = 0.5 * r2 + lambda * x.iter().map(|v| v.norm()).sum::<f64>();
        let corr = &b - &gx; // Φ*(y − Φa)
        let cmax = corr.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let tau = if cmax > lambda { lambda / cmax } else { 1.0 };
        // q = τ r: Re⟨y,q⟩ − ½‖q‖²
        let yr = y2 - x.dotc(&b).re;
        let dual = tau * yr - 0.5 * tau * tau * r2;
        (primal - dual, primal)
    };
    let mut z = x.clone();
    let mut tk = 1.0f64;
    let (mut gap, mut fprev) = gap_of(&x);
    let mut it = 0;
    let mut checkpoint = gap;
    while gap > tol && it < max_iter {
        it += 1;
        // degenerate Gram matrices only converge sublinearly; stop once progress stalls
        if it % 5000 == 0 {
            if gap > 0.5 * checkpoint {
                break;
            }
            checkpoint = gap;
        }
        if it % 200 == 0 {
            if let Some(xp) = newton_polish(&g, &b, lambda, &x) {
                let (gp, fp) = gap_of(&xp);
                if gp < gap {
                    x = xp;
                    z = x.clone();
                    tk = 1.0;
                    gap = gp;
                    fprev = fp;
                    continue;
                }
            }
        }
        let grad = &g * &z - &b;
        let xn = DVector::from_iterator(s, (0..s).map(|i| soft_threshold(z[i] - grad[i] * t, lambda * t)));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let (gn, fnew) = gap_of(&xn);
        if fnew > fprev {
            // adaptive restart
            z = x.clone();
            tk = 1.0;
            continue;
        }
        z = &xn + (&xn - &x) * Complex64::new((tk - 1.0) / tn, 0.0);
        x = xn;
        tk = tn;
        gap = gn;
        fprev = fnew;
    }
    LassoResult { amplitudes: x.iter().cloned().collect(), gap, iterations: it }
}

/// Newton iterations on G a − b + λ a/|a| = 0 over the nonzero entries of `x`.
fn newton_polish(g: &DMatrix<Complex64>, b: &DVector<Complex64>, lambda: f64, x: &DVector<Complex64>) -> Option<DVector<Complex64>> {
    let act: Vec<usize> = (0..x.len()).filter(|&i| x[i].norm() > 0.0).collect();
    if act.is_empty() {
        return None;
    }
    let n = act.len();
    let mut a: Vec<Complex64> = act.iter().map(|&i| x[i]).collect();
    for _ in 0..30 {
        let mut res = DVector::zeros(2 * n);
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for (p, &i) in act.iter().enumerate() {
            let mut gi = -b[i];
            for (q, &j) in act.iter().enumerate() {
                let gij = g[(i, j)];
                gi += gij * a[q];
                jac[(2 * p, 2 * q)] = gij.re;
                jac[(2 * p, 2 * q + 1)] = -gij.im;
                jac[(2 * p + 1, 2 * q)] = gij.im;
                jac[(2 * p + 1, 2 * q + 1)] = gij.re;
            }
            let na = a[p].norm();
            if na == 0.0 {
                return None;
            }
            let u = [a[p].re / na, a[p].im / na];
            res[2 * p] = gi.re + lambda * u[0];
            res[2 * p + 1] = gi.im + lambda * u[1];
            for r in 0..2 {
                for c in 0..2 {
                    let id = if r == c { 1.0 } else { 0.0 };
                    jac[(2 * p + r, 2 * p + c)] += lambda / na * (id - u[r] * u[c]);
                }
            }
        }
        let step = jac.lu().solve(&(-&res))?;
        for p in 0..n {
            a[p] += Complex64::new(step[2 * p], step[2 * p + 1]);
        }
        if step.norm() < 1e-15 * (1.0 + a.iter().map(|v| v.norm()).sum::<f64>()) {
            break;
        }
    }
    let mut out = DVector::from_element(x.len(), ZERO);
    for (p, &i) in act.iter().enumerate() {
        if !a[p].re.is_finite() || !a[p].im.is_finite() {
            return None;
        }
        out[i] = a[p];
    }
    Some(out)
}

struct State {
    a: Vec<Complex64>,
    xs: Vec<Point>,
}

impl State {
    fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure { amplitudes: self.a.clone(), positions: self.xs.clone() }
    }
}

fn eval_obj(op: &MeasurementOperator, y: &[Complex64], lambda: f64, st: &State) -> f64 {
    objective(op, y, lambda, &st.measure()).unwrap_or(f64::INFINITY)
}

/// Levenberg–Marquardt on (a, X) jointly; only decreasing steps are kept.
fn slide(op: &MeasurementOperator, y: &[Complex64], lambda: f64, st: State, steps: usize) -> State {
    let kernel = op.kernel();
    let d = kernel.dim();
    let mut st = st;
    let mut f = eval_obj(op, y, lambda, &st);
    let mut damp = 1e-3;
    for _ in 0..steps {
        let s = st.a.len();
        if s == 0 || st.a.iter().any(|v| v.norm() < 1e-12) {
            break;
        }
        let gamma = match op.gamma_matrix(&st.xs) {
            Ok(g) => g,
            Err(_) => break,
        };
        let n = s * (d + 2);
        // Jacobian columns: Re a_i, Im a_i, then the d position directions
        let mut jac = DMatrix::from_element(op.m(), n, ZERO);
        for i in 0..s {
            for k in 0..op.m() {
                jac[(k, i * (d + 2))] = gamma[(k, i)];
                jac[(k, i * (d + 2) + 1)] = gamma[(k, i)] * Complex64::new(0.0, 1.0);
                for c in 0..d {
                    jac[(k, i * (d + 2) + 2 + c)] = gamma[(k, s + i * d + c)] * st.a[i];
                }
            }
        }
        let fx = op.forward(&st.measure()).expect("valid state");
        let r = DVector::from_iterator(op.m(), fx.iter().zip(y).map(|(a, b)| a - b));
        let jr = jac.adjoint() * &r;
        let jj = jac.adjoint() * &jac;
        let mut grad = DVector::from_fn(n, |j, _| jr[j].re);
        let mut hess = DMatrix::from_fn(n, n, |a, b| jj[(a, b)].re);
        for i in 0..s {
            let ai = st.a[i];
            let na = ai.norm();
            let u = [ai.re / na, ai.im / na];
            let o = i * (d + 2);
            grad[o] += lambda * u[0];
            grad[o + 1] += lambda * u[1];
            for p in 0..2 {
                for q in 0..2 {
                    let id = if p == q { 1.0 } else { 0.0 };
                    hess[(o + p, o + q)] += lambda / na * (id - u[p] * u[q]);
                }
            }
        }
        if grad.norm() < 1e-15 {
            break;
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut m = hess.clone();
            for j in 0..n {
                m[(j, j)] += damp * (hess[(j, j)].abs() + 1e-12);
            }
            let step = match m.cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => {
                    damp *= 10.0;
                    continue;
                }
            };
            if let Some(cand) = apply_step(kernel, &st, &step) {
                let fc = eval_obj(op, y, lambda, &cand);
                if fc < f {
                    let rel = (f - fc) / f.abs().max(1e-300);
                    st = cand;
                    f = fc;
                    damp = (damp / 3.0).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
            }
            damp *= 4.0;
        }
        if !improved {
            break;
        }
    }
    st
}

fn apply_step(kernel: &LimitKernel, st: &State, step: &DVector<f64>) -> Option<State> {
    let d = kernel.dim();
    let mut a = st.a.clone();
    let mut xs = Vec::with_capacity(st.xs.len());
    for (i, x) in st.xs.iter().enumerate() {
        let o = i * (d + 2);
        a[i] += Complex64::new(step[o], step[o + 1]);
        let s = kernel.metric_inv_sqrt(x);
        let v = DVector::from_fn(d, |c, _| step[o + 2 + c]);
        let dx = s * v;
        let cand: Vec<f64> = x.iter().zip(dx.iter()).map(|(p, q)| p + q).collect();
        xs.push(Point::new(admissible_position(kernel, cand)?).ok()?);
    }
    Some(State { a, xs })
}

/// Merges atoms closer than `radius` (amplitudes summed, position of the larger
/// atom kept) and drops atoms with |a| < 1e-10.
fn merge_and_drop(kernel: &LimitKernel, st: &State, radius: f64) -> State {
    let mut idx: Vec<usize> = (0..st.a.len()).collect();
    idx.sort_by(|&i, &j| st.a[j].norm().total_cmp(&st.a[i].norm()));
    let mut a: Vec<Complex64> = Vec::new();
    let mut xs: Vec<Point> = Vec::new();
    for i in idx {
        match xs.iter().position(|x| kernel.distance_unchecked(x, &st.xs[i]) < radius) {
            Some(j) => a[j] += st.a[i],
            None => {
                a.push(st.a[i]);
                xs.push(st.xs[i].clone());
            }
        }
    }
    let keep: Vec<usize> = (0..a.len()).filter(|&i| a[i].norm() >= 1e-10).collect();
    State { a: keep.iter().map(|&i| a[i]).collect(), xs: keep.iter().map(|&i| xs[i].clone()).collect() }
}

pub fn solve_blasso(op: &MeasurementOperator, y: &[Complex64], config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if y.len() != op.m() {
        return Err(Error::InvalidInput(format!("y has length {} but m = {}", y.len(), op.m())));
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidInput("observations contain non-finite values".into()));
    }
    let kernel = op.kernel();
    let domain = match (&config.domain, kernel.period()) {
        (Some(bx), _) => bx.clone(),
        (None, Some(_)) => DomainBox::unit(kernel.dim()),
        (None, None) => {
            return Err(Error::InvalidInput("a search domain is required for non-periodic kernels".into()));
        }
    };
    let lambda = config.lambda;
    let grid = SearchGrid::new(op, &domain, config.grid_init_spacing)?;
    let mut st = State { a: vec![], xs: vec![] };
    let mut obj = eval_obj(op, y, lambda, &st);
    let mut best_dual = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut message = None;
    let mut gap = f64::INFINITY;
    let mut cert_max = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=config.max_outer_iters {
        iterations = it;
        let fx = op.forward(&st.measure())?;
        let p: Vec<Complex64> = y.iter().zip(&fx).map(|(a, b)| (a - b) / lambda).collect();
        let mx = find_max(op, &grid, &p, config.seed, it);
        cert_max = mx.certificate_max;
        best_dual = best_dual.max(dual_value(y, lambda, &p, 1.0 / cert_max.max(1.0)));
        gap = obj - best_dual;
        trace.push(TraceRow { iteration: it, objective: obj, gap, atoms: st.a.len(), certificate_max: cert_max });
        if cert_max <= 1.0 + config.tol_grad || gap <= config.tol_gap * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
        if st.a.len() >= config.max_atoms {
            message = Some(format!("atom budget {} reached", config.max_atoms));
            break;
        }
        let prev = State { a: st.a.clone(), xs: st.xs.clone() };
        let mut cand = State { a: st.a.clone(), xs: st.xs.clone() };
        if cand.xs.iter().all(|x| kernel.distance_unchecked(x, &mx.x) > 1e-9) {
            cand.a.push(ZERO);
            cand.xs.push(Point::new(mx.x.clone())?);
        }
        let warm = cand.a.clone();
        cand.a = lasso_warm(op, &cand.xs, y, lambda, Some(&warm))?.amplitudes;
        cand = merge_and_drop(kernel, &cand, 0.0);
        cand = slide(op, y, lambda, cand, config.local_steps);
        if !cand.xs.is_empty() {
            let warm = cand.a.clone();
            let re = lasso_warm(op, &cand.xs, y, lambda, Some(&warm))?.amplitudes;
            let trial = State { a: re, xs: cand.xs.clone() };
            if eval_obj(op, y, lambda, &trial) <= eval_obj(op, y, lambda, &cand) {
                cand = trial;
            }
        }
        let merged = merge_and_drop(kernel, &cand, config.atom_merge_radius);
        if merged.a.len() < cand.a.len() && !merged.xs.is_empty() {
            let warm = merged.a.clone();
            let re = lasso_warm(op, &merged.xs, y, lambda, Some(&warm))?.amplitudes;
            let merged = merge_and_drop(kernel, &State { a: re, xs: merged.xs }, 0.0);
            if eval_obj(op, y, lambda, &merged) <= eval_obj(op, y, lambda, &cand) * (1.0 + 1e-12) {
                cand = merged;
            }
        } else {
            cand = merged;
        }
        let new_obj = eval_obj(op, y, lambda, &cand);
        if new_obj > obj {
            st = prev;
            message = Some("no objective decrease; stopped".into());
            break;
        }
        st = cand;
        obj = new_obj;
    }
    if !converged && message.is_none() {
        message = Some(format!("iteration cap {} reached", config.max_outer_iters));
    }
    Ok(SolveResult {
        measure: st.measure(),
        certificate_max: cert_max,
        gap,
        objective: obj,
        iterations,
        converged,
        message,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub spike_count_match: bool,
    pub sign_match: bool,
    pub amplitude_error: f64,
    pub position_error: f64,
    pub bound_rhs: f64,
    pub bound_satisfied: bool,
    /// (recovered index, true index) pairs.
    pub matching: Vec<(usize, usize)>,
}

pub fn stability_report(
    recovered: &DiscreteMeasure,
    truth: &DiscreteMeasure,
    kernel: &LimitKernel,
    lambda: f64,
    w_norm: f64,
) -> Result<StabilityReport> {
    if truth.is_empty() {
        return Err(Error::InvalidInput("truth must contain at least one spike".into()));
    }
    let amin = truth.amplitudes.iter().map(|a| a.norm()).fold(f64::INFINITY, f64::min);
    if amin == 0.0 {
        return Err(Error::InvalidInput("truth amplitudes must be nonzero".into()));
    }
    let cost: Vec<Vec<f64>> = recovered
        .positions
        .iter()
        .map(|x| truth.positions.iter().map(|x0| kernel.fisher_distance(x, x0)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let matching = min_cost_matching(&cost)?;
    let mut amp2 = 0.0;
    let mut pos2 = 0.0;
    let mut sign_match = true;
    for &(i, j) in &matching {
        let (a, a0) = (recovered.amplitudes[i], truth.amplitudes[j]);
        amp2 += (a - a0).norm_sqr();
        pos2 += cost[i][j].powi(2);
        let s = if a.norm() > 0.0 { a / a.norm() } else { ZERO };
        sign_match &= ((a0 / a0.norm()).conj() * s).re > 0.0;
    }
    let amplitude_error = amp2.sqrt();
    let position_error = pos2.sqrt();
    let bound_rhs = (truth.len() as f64).sqrt() * (lambda + w_norm) / amin;
    Ok(StabilityReport {
        spike_count_match: recovered.len() == truth.len(),
        sign_match,
        amplitude_error,
        position_error,
        bound_rhs,
        bound_satisfied: amplitude_error + position_error <= bound_rhs,
        matching,
    })
}

pub fn residual_norm(op: &MeasurementOperator, y: &[Complex64], mu: &DiscreteMeasure) -> Result<f64> {
    let fx = op.forward(mu)?;
    let r: Vec<Complex64> = fx.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(vec_norm(&r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFamily;

    fn fejer_op(m: usize) -> MeasurementOperator {
        MeasurementOperator::sample(FeatureFamily::discrete_fourier(10, 1).unwrap(), m, 3).unwrap()
    }

    #[test]
    fn soft_threshold_keeps_phase() {
        let a = Complex64::from_polar(2.0, 0.4);
        let b = soft_threshold(a, 0.5);
        assert!((b.arg() - 0.4).abs() < 1e-15 && (b.norm() - 1.5).abs() < 1e-15);
        assert_eq!(soft_threshold(a, 3.0), ZERO);
    }

    #[test]
    fn zero_observations_give_zero_measure() {
        let op = fejer_op(64);
        let cfg = SolverConfig::new(op.kernel(), 0.1);
        let res = solve_blasso(&op, &vec![ZERO; 64], &cfg).unwrap();
        assert!(res.measure.is_empty());
        assert_eq!(res.objective, 0.0);
        assert!(res.converged);
    }

    #[test]
    fn lasso_above_threshold_is_zero() {
        let op = fejer_op(64);
        let xs = vec![Point::scalar(0.2), Point::scalar(0.6)];
        let y = op.forward(&DiscreteMeasure::new(vec![Complex64::new(1.0, 0.0); 2], xs.clone()).unwrap()).unwrap();
        let phi = op.feature_matrix(&xs).unwrap();
        let b = phi.adjoint() * DVector::from_column_slice(&y);
        let lam = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let res = lasso_on_support(&op, &xs, &y, lam).unwrap();
        assert!(res.amplitudes.iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn lasso_kkt() {
        let op = fejer_op(64);
        let xs = vec![Point::scalar(0.2), Point::scalar(0.3), Point::scalar(0.7)];
        let mu = DiscreteMeasure::new(vec![Complex64::new(1.0, 0.5), Complex64::new(-0.3, 0.0), Complex64::new(0.0, 2.0)], xs.clone()).unwrap();
        let y = op.forward(&mu).unwrap();
        let lam = 0.05;
        let res = lasso_on_support(&op, &xs, &y, lam).unwrap();
        assert!(res.gap <= 1e-10, "{res:?}");
        let phi = op.feature_matrix(&xs).unwrap();
        let r = &phi * DVector::from_column_slice(&res.amplitudes) - DVector::from_column_slice(&y);
        let c = phi.adjoint() * r;
        assert!(c.iter().all(|v| v.norm() <= lam + 1e-8));
    }

    #[test]
    fn missing_domain_rejected() {
        let fam = FeatureFamily::gaussian_fourier(DMatrix::identity(1, 1)).unwrap();
        let op = MeasurementOperator::sample(fam, 16, 1).unwrap();
        let cfg = SolverConfig::new(op.kernel(), 0.1);
        assert!(solve_blasso(&op, &vec![ZERO; 16], &cfg).is_err());
    }

    #[test]
    fn exact_stability_report() {
        let k = LimitKernel::fejer(10, 1).unwrap();
        let mu = DiscreteMeasure::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, -2.0)], vec![Point::scalar(0.1), Point::scalar(0.5)]).unwrap();
        let rep = stability_report(&mu, &mu, &k, 0.01, 0.0).unwrap();
        assert!(rep.spike_count_match && rep.sign_match && rep.bound_satisfied);
        assert_eq!(rep.amplitude_error + rep.position_error, 0.0);
    }
}
