//! Vanishing-derivative pre-certificates, nondegeneracy checks and dual
//! certificates.
//!
//! Unknowns are ordered [α_1..α_s, β_1..β_s] with each β_i ∈ C^d, and the
//! system is Υ [α; β] = [sign(a); 0]. The resulting certificate is
//! η(x) = Σ_i α_i K(x, x_i) + K^(01)(x, x_i) β_i, with the empirical kernel in
//! place of K for empirical systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{DiscreteMeasure, MeasurementOperator};
use crate::geometry::{block_from_tables, DomainBox, FactorTable, LimitKernel, Point, MAX_SLOT_ORDER};
use crate::linalg::{hermitian_solve, min_eigenvalue_hermitian};
use crate::tensor::Tensor;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Empirical,
    Limit,
}

#[derive(Clone, Debug)]
pub struct GammaSystem {
    pub points: Vec<Point>,
    pub gram: DMatrix<Complex64>,
    pub min_eig: f64,
    /// s(d+1) > m: more unknowns than measurements.
    pub rank_deficient_regime: bool,
    pub kind: SystemKind,
    gamma: Option<DMatrix<Complex64>>,
}

impl GammaSystem {
    pub fn size(&self) -> usize {
        self.gram.nrows()
    }

    /// Normalized Γ_X (empirical systems only).
    pub fn gamma(&self) -> Option<&DMatrix<Complex64>> {
        self.gamma.as_ref()
    }
}

pub fn rhs(signs: &[Complex64], d: usize) -> DVector<Complex64> {
    let s = signs.len();
    let mut v = DVector::from_element(s * (d + 1), ZERO);
    for (i, sg) in signs.iter().enumerate() {
        v[i] = *sg;
    }
    v
}

fn check_distinct(kernel: &LimitKernel, xs: &[Point]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("need at least one position".into()));
    }
    for x in xs {
        kernel.check_point(x)?;
    }
    for i in 0..xs.len() {
        for j in 0..i {
            if kernel.distance_unchecked(&xs[i], &xs[j]) < 1e-12 {
                return Err(Error::InvalidInput(format!("duplicate positions {i} and {j}")));
            }
        }
    }
    Ok(())
}

pub fn build_gamma(op: &MeasurementOperator, xs: &[Point]) -> Result<GammaSystem> {
    check_distinct(op.kernel(), xs)?;
    let d = op.dim();
    let gamma = op.gamma_matrix(xs)?;
    let gram = gamma.adjoint() * &gamma;
    let min_eig = min_eigenvalue_hermitian(&gram);
    Ok(GammaSystem {
        points: xs.to_vec(),
        rank_deficient_regime: xs.len() * (d + 1) > op.m(),
        gram,
        min_eig,
        kind: SystemKind::Empirical,
        gamma: Some(gamma),
    })
}

/// Υ_X assembled from the limit kernel blocks.
pub fn build_limit_gamma(kernel: &LimitKernel, xs: &[Point]) -> Result<GammaSystem> {
    check_distinct(kernel, xs)?;
    let s = xs.len();
    let d = kernel.dim();
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| kernel.to_normalized(x)).collect();
    let mut gram = DMatrix::from_element(s * (d + 1), s * (d + 1), ZERO);
    for j in 0..s {
        for i in 0..s {
            // row: first argument x_j, column: second argument x_i
            let delta = kernel.coord_diff(&zs[j], &zs[i]);
            let tabs: Vec<FactorTable> = delta.iter().map(|&t| kernel.factor_table(t)).collect();
            gram[(j, i)] = block_from_tables(d, 0, 0, &tabs).value();
            let k01 = block_from_tables(d, 0, 1, &tabs);
            let k10 = block_from_tables(d, 1, 0, &tabs);
            let k11 = block_from_tables(d, 1, 1, &tabs);
            for c in 0..d {
                gram[(j, s + i * d + c)] = k01.data()[c];
                gram[(s + j * d + c, i)] = k10.data()[c];
                for c2 in 0..d {
                    gram[(s + j * d + c, s + i * d + c2)] = k11.get(&[c, c2]);
                }
            }
        }
    }
    let min_eig = min_eigenvalue_hermitian(&gram);
    Ok(GammaSystem { points: xs.to_vec(), gram, min_eig, rank_deficient_regime: false, kind: SystemKind::Limit, gamma: None })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateCoefficients {
    pub alpha: Vec<Complex64>,
    pub beta: Vec<Vec<Complex64>>,
    pub kind: SystemKind,
    pub min_eig: f64,
}

impl CertificateCoefficients {
    pub fn stacked(&self) -> DVector<Complex64> {
        let mut v: Vec<Complex64> = self.alpha.clone();
        for b in &self.beta {
            v.extend_from_slice(b);
        }
        DVector::from_vec(v)
    }
}

pub fn validate_signs(signs: &[Complex64]) -> Result<()> {
    for (i, s) in signs.iter().enumerate() {
        if !s.re.is_finite() || !s.im.is_finite() || (s.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("sign {i} is not unimodular: {s}")));
        }
    }
    Ok(())
}

/// sign(a_i) = a_i/|a_i|; zero amplitudes are rejected.
pub fn signs_of(a: &[Complex64]) -> Result<Vec<Complex64>> {
    a.iter()
        .enumerate()
        .map(|(i, v)| {
            if v.norm() == 0.0 || !v.norm().is_finite() {
                Err(Error::InvalidInput(format!("amplitude {i} is zero or non-finite")))
            } else {
                Ok(v / v.norm())
            }
        })
        .collect()
}

pub fn precertificate(system: &GammaSystem, signs: &[Complex64]) -> Result<CertificateCoefficients> {
    let s = system.points.len();
    if signs.len() != s {
        return Err(Error::InvalidInput(format!("{} signs for {} positions", signs.len(), s)));
    }
    validate_signs(signs)?;
    let d = system.points[0].dim();
    let (sol, min_eig) = hermitian_solve(&system.gram, &rhs(signs, d), 1e-10)?;
    let alpha = (0..s).map(|i| sol[i]).collect();
    let beta = (0..s).map(|i| (0..d).map(|c| sol[s + i * d + c]).collect()).collect();
    Ok(CertificateCoefficients { alpha, beta, kind: system.kind, min_eig })
}

/// A function η = Φ*p (or its limit analogue) with normalized derivatives.
pub trait Certificate: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Complex64;
    /// Normalized derivatives of orders 0..=r.
    fn derivatives(&self, x: &[f64], r: usize) -> Vec<Tensor>;
    /// Upper bound on ‖∇_z η‖ over the box, z the normalized coordinates.
    fn lipschitz(&self, bx: &DomainBox) -> f64;
    /// Upper bound on ‖∇_z η‖ over the cell |z − center|_c ≤ half_c, if cheaper than the global one.
    fn local_lipschitz(&self, _center: &[f64], _half: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct LimitCertificate {
    kernel: LimitKernel,
    zs: Vec<Vec<f64>>,
    alpha: Vec<Complex64>,
    beta: Vec<Vec<Complex64>>,
}

impl LimitCertificate {
    pub fn new(kernel: &LimitKernel, xs: &[Point], coeffs: &CertificateCoefficients) -> Self {
        LimitCertificate {
            kernel: kernel.clone(),
            zs: xs.iter().map(|x| kernel.to_normalized(x)).collect(),
            alpha: coeffs.alpha.clone(),
            beta: coeffs.beta.clone(),
        }
    }

    /// Limit pre-certificate for positions `xs` and signs.
    pub fn precertificate(kernel: &LimitKernel, xs: &[Point], signs: &[Complex64]) -> Result<(Self, CertificateCoefficients)> {
        let sys = build_limit_gamma(kernel, xs)?;
        let coeffs = precertificate(&sys, signs)?;
        Ok((Self::new(kernel, xs, &coeffs), coeffs))
    }

    pub fn scaled(&self, f: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.alpha {
            *a *= f;
        }
        for b in &mut out.beta {
            for v in b {
                *v *= f;
            }
        }
        out
    }
}

impl Certificate for LimitCertificate {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn value(&self, x: &[f64]) -> Complex64 {
        self.derivatives(x, 0).remove(0).value()
    }

    fn derivatives(&self, x: &[f64], r: usize) -> Vec<Tensor> {
        let d = self.kernel.dim();
        let z = self.kernel.to_normalized(x);
        let mut out: Vec<Tensor> = (0..=r).map(|o| Tensor::zeros(d, o)).collect();
        for (i, zi) in self.zs.iter().enumerate() {
            let delta = self.kernel.coord_diff(&z, zi);
            let tabs: Vec<FactorTable> = delta.iter().map(|&t| self.kernel.factor_table(t)).collect();
            for (o, acc) in out.iter_mut().enumerate() {
                let k0 = block_from_tables(d, o, 0, &tabs);
                acc.add_scaled(&k0, self.alpha[i]);
                let k1 = block_from_tables(d, o, 1, &tabs).contract_last(&self.beta[i]);
                acc.add_scaled(&k1, Complex64::new(1.0, 0.0));
            }
        }
        out
    }

    fn lipschitz(&self, _bx: &DomainBox) -> f64 {
        let b10 = self.kernel.block_bound(1, 0);
        let b11 = self.kernel.block_bound(1, 1);
        self.alpha.iter().map(|a| a.norm() * b10).sum::<f64>()
            + self.beta.iter().map(|b| crate::linalg::cnorm(b) * b11).sum::<f64>()
    }

    fn local_lipschitz(&self, center: &[f64], half: &[f64]) -> Option<f64> {
        let d = self.kernel.dim();
        let env = self.kernel.factor_envelope();
        let mut total = 0.0;
        for (i, zi) in self.zs.iter().enumerate() {
            let delta = self.kernel.coord_diff(center, zi);
            let tabs: Vec<FactorTable> = (0..d)
                .map(|c| {
                    let e = env.at(delta[c].abs() - half[c]);
                    let mut t = [[0.0; MAX_SLOT_ORDER + 1]; MAX_SLOT_ORDER + 1];
                    for a in 0..2 {
                        for b in 0..2 {
                            t[a][b] = e[a][b];
                        }
                    }
                    t
                })
                .collect();
            total += self.alpha[i].norm() * block_from_tables(d, 1, 0, &tabs).frobenius()
                + block_from_tables(d, 1, 1, &tabs).frobenius() * crate::linalg::cnorm(&self.beta[i]);
        }
        Some(total)
    }
}

/// η = Φ*p for a fixed dual vector p.
#[derive(Clone, Debug)]
pub struct EmpiricalCertificate {
    op: MeasurementOperator,
    p: Vec<Complex64>,
}

impl EmpiricalCertificate {
    pub fn new(op: &MeasurementOperator, p: Vec<Complex64>) -> Result<Self> {
        if p.len() != op.m() {
            return Err(Error::InvalidInput(format!("dual vector has length {} but m = {}", p.len(), op.m())));
        }
        Ok(EmpiricalCertificate { op: op.clone(), p })
    }

    /// Empirical pre-certificate p_X = Γ_X (Γ_X*Γ_X)^{-1} [sign; 0].
    pub fn precertificate(op: &MeasurementOperator, xs: &[Point], signs: &[Complex64]) -> Result<(Self, CertificateCoefficients)> {
        let sys = build_gamma(op, xs)?;
        let coeffs = precertificate(&sys, signs)?;
        let p = sys.gamma().expect("empirical system") * coeffs.stacked();
        Ok((EmpiricalCertificate { op: op.clone(), p: p.iter().cloned().collect() }, coeffs))
    }

    pub fn p(&self) -> &[Complex64] {
        &self.p
    }

    pub fn scaled(&self, f: f64) -> Self {
        EmpiricalCertificate { op: self.op.clone(), p: self.p.iter().map(|v| v * f).collect() }
    }
}

impl Certificate for EmpiricalCertificate {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn value(&self, x: &[f64]) -> Complex64 {
        self.op.adjoint_value(&self.p, x)
    }

    fn derivatives(&self, x: &[f64], r: usize) -> Vec<Tensor> {
        self.op.adjoint_derivatives(&self.p, x, r).expect("valid point and order")
    }

    fn lipschitz(&self, bx: &DomainBox) -> f64 {
        self.p.iter().enumerate().map(|(k, pk)| pk.norm() * self.op.gradient_sup(k, bx)).sum()
    }
}

/// η_λ = Φ*((y − Φμ)/λ).
pub fn dual_certificate(op: &MeasurementOperator, y: &[Complex64], lambda: f64, mu: &DiscreteMeasure) -> Result<EmpiricalCertificate> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if y.len() != op.m() {
        return Err(Error::InvalidInput(format!("y has length {} but m = {}", y.len(), op.m())));
    }
    let fx = op.forward(mu)?;
    let p = y.iter().zip(&fx).map(|(a, b)| (a - b) / lambda).collect();
    EmpiricalCertificate::new(op, p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub near_spacing: f64,
    pub far_spacing: f64,
    pub domain: DomainBox,
    /// Halve spacings until the decision is stable for two consecutive levels.
    pub refine: bool,
    pub max_refinements: usize,
    pub record: bool,
}

impl GridSpec {
    pub fn default_for(r_near: f64, domain: DomainBox) -> Self {
        GridSpec { near_spacing: r_near / 50.0, far_spacing: r_near / 10.0, domain, refine: true, max_refinements: 3, record: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Near,
    Far,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRecord {
    pub point: Vec<f64>,
    pub abs_eta: f64,
    pub region: Region,
    /// Near: (1−|η|)/d² − ε₂. Far: 1−|η| − ε₀.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NondegeneracyReport {
    pub eps0_measured: f64,
    pub eps2_measured: f64,
    pub worst_far_point: Option<Point>,
    pub worst_near_point: Option<Point>,
    pub pass: bool,
    pub eps0_target: f64,
    pub eps2_target: f64,
    pub r_near: f64,
    pub max_abs_eta: f64,
    pub exceeds_one: bool,
    pub overlap_warning: bool,
    /// max |η(x_i) − sign_i|
    pub interpolation_error: f64,
    /// max ‖d¹η(x_i)‖
    pub gradient_error: f64,
    /// min_i of −λ_max(Re(conj(sign_i) d²η(x_i)))
    pub hessian_curvature: f64,
    pub near_spacing: f64,
    pub far_spacing: f64,
    pub refinements: usize,
    pub n_evaluated: usize,
    pub records: Vec<GridRecord>,
}

impl NondegeneracyReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.records.first().map_or(0, |r| r.point.len());
        let mut header: Vec<String> = (1..=d).map(|c| format!("x_{c}")).collect();
        header.extend(["abs_eta", "region", "margin"].iter().map(|s| s.to_string()));
        wr.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.point.iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{:.16e}", r.abs_eta));
            row.push(match r.region {
                Region::Near => "near".into(),
                Region::Far => "far".into(),
            });
            row.push(format!("{:.16e}", r.margin));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct Level {
    eps0: f64,
    eps2: f64,
    worst_far: Option<Vec<f64>>,
    worst_near: Option<Vec<f64>>,
    max_abs: f64,
    overlap: bool,
    n: usize,
    records: Vec<GridRecord>,
}

#[allow(clippy::too_many_arguments)]
pub fn check_nondegeneracy(
    eta: &dyn Certificate,
    kernel: &LimitKernel,
    a: &[Complex64],
    xs: &[Point],
    r_near: f64,
    eps0: f64,
    eps2: f64,
    grid: &GridSpec,
) -> Result<NondegeneracyReport> {
    let signs = signs_of(a)?;
    if xs.len() != signs.len() || xs.is_empty() {
        return Err(Error::InvalidInput("need one amplitude per position and at least one spike".into()));
    }
    if !(grid.near_spacing > 0.0) || !(grid.far_spacing > 0.0) || !(r_near > 0.0) {
        return Err(Error::InvalidInput("grid spacings and r_near must be positive".into()));
    }
    for x in xs {
        kernel.check_point(x)?;
    }
    let d = kernel.dim();
    // spike diagnostics
    let mut interp = 0.0f64;
    let mut grad = 0.0f64;
    let mut curv = f64::INFINITY;
    for (x, s) in xs.iter().zip(&signs) {
        let der = eta.derivatives(x, 2);
        interp = interp.max((der[0].value() - s).norm());
        grad = grad.max(der[1].frobenius());
        let h = &der[2];
        let re = DMatrix::from_fn(d, d, |i, j| (s.conj() * h.get(&[i, j])).re);
        curv = curv.min(-crate::linalg::max_eigenvalue_sym(&re));
    }

    let lip = eta.lipschitz(&grid.domain);
    let mut levels: Vec<(bool, Level, f64, f64)> = Vec::new();
    let mut hn = grid.near_spacing;
    let mut hf = grid.far_spacing;
    let max_levels = if grid.refine { grid.max_refinements.max(1) + 1 } else { 1 };
    for _ in 0..max_levels {
        let lvl = evaluate_level(eta, kernel, xs, r_near, eps0, eps2, hn, hf, lip, grid);
        let pass = lvl.eps0 >= eps0 - TOL && lvl.eps2 >= eps2 - TOL;
        levels.push((pass, lvl, hn, hf));
        let n = levels.len();
        if !grid.refine || (n >= 2 && levels[n - 1].0 == levels[n - 2].0) {
            break;
        }
        hn *= 0.5;
        hf *= 0.5;
    }
    let refinements = levels.len() - 1;
    let (pass, lvl, hn, hf) = levels.pop().expect("at least one level");
    let to_point = |v: Option<Vec<f64>>| v.map(|c| Point::new(c).expect("finite grid point"));
    Ok(NondegeneracyReport {
        eps0_measured: lvl.eps0,
        eps2_measured: lvl.eps2,
        worst_far_point: to_point(lvl.worst_far),
        worst_near_point: to_point(lvl.worst_near),
        pass,
        eps0_target: eps0,
        eps2_target: eps2,
        r_near,
        max_abs_eta: lvl.max_abs,
        exceeds_one: lvl.max_abs > 1.0 + 1e-12,
        overlap_warning: lvl.overlap,
        interpolation_error: interp,
        gradient_error: grad,
        hessian_curvature: curv,
        near_spacing: hn,
        far_spacing: hf,
        refinements,
        n_evaluated: lvl.n,
        records: lvl.records,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_level(
    eta: &dyn Certificate,
    kernel: &LimitKernel,
    xs: &[Point],
    r_near: f64,
    eps0: f64,
    eps2: f64,
    hn: f64,
    hf: f64,
    lip: f64,
    grid: &GridSpec,
) -> Level {
    let d = kernel.dim();
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| kernel.to_normalized(x)).collect();
    let nearest = |z: &[f64]| -> (usize, f64) {
        zs.iter()
            .enumerate()
            .map(|(j, zj)| (j, kernel.coord_diff(z, zj).iter().map(|v| v * v).sum::<f64>().sqrt()))
            .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc })
    };
    let valid = |x: &[f64]| kernel.in_box(&grid.domain, x) && kernel.check_point(x).is_ok();

    // near balls
    let k = (r_near / hn).floor() as i64;
    let side = (2 * k + 1) as usize;
    let mut offsets: Vec<Vec<f64>> = Vec::new();
    for f in 0..side.pow(d as u32) {
        let mut rest = f;
        let off: Vec<f64> = (0..d)
            .map(|_| {
                let i = (rest % side) as i64 - k;
                rest /= side;
                i as f64 * hn
            })
            .collect();
        let r2: f64 = off.iter().map(|v| v * v).sum();
        if r2 > 0.0 && r2 <= r_near * r_near * (1.0 + 1e-12) {
            offsets.push(off);
        }
    }
    let near_pts: Vec<(usize, Vec<f64>)> =
        (0..zs.len()).flat_map(|j| offsets.iter().map(move |o| (j, o.clone()))).collect();
    // ((1 - |eta|)/d^2, |eta|, point, nearer to another spike)
    type NearSample = Option<(f64, f64, Vec<f64>, bool)>;
    let near: Vec<NearSample> = near_pts
        .par_iter()
        .map(|(j, off)| {
            let z: Vec<f64> = zs[*j].iter().zip(off).map(|(a, b)| a + b).collect();
            let x = kernel.from_normalized(&z);
            if !valid(&x) {
                return None;
            }
            let (jn, dist) = nearest(&z);
            let a = eta.value(&x).norm();
            Some(((1.0 - a) / (dist * dist), a, x, jn != *j))
        })
        .collect();
    let mut lvl = Level {
        eps0: f64::INFINITY,
        eps2: f64::INFINITY,
        worst_far: None,
        worst_near: None,
        max_abs: 0.0,
        overlap: false,
        n: 0,
        records: Vec::new(),
    };
    for (ratio, a, x, ov) in near.into_iter().flatten() {
        lvl.n += 1;
        lvl.overlap |= ov;
        lvl.max_abs = lvl.max_abs.max(a);
        if ratio < lvl.eps2 {
            lvl.eps2 = ratio;
            lvl.worst_near = Some(x.clone());
        }
        if grid.record {
            lvl.records.push(GridRecord { point: x, abs_eta: a, region: Region::Near, margin: ratio - eps2 });
        }
    }

    // far region: cells in normalized coordinates, pruned by the Lipschitz bound
    let (zlo, zhi) = kernel.normalized_bounds(&grid.domain);
    let ext: Vec<f64> = (0..d).map(|c| zhi[c] - zlo[c]).collect();
    let mut n_per: Vec<usize> = ext.iter().map(|e| (e / hf).ceil().max(1.0) as usize).collect();
    // coarse start: at most ~4096 root cells, sides a power-of-two multiple of the leaf
    let mut depth = 0u32;
    while n_per.iter().product::<usize>() > 4096 && n_per.iter().any(|&n| n > 1) {
        n_per = n_per.iter().map(|n| n.div_ceil(2)).collect();
        depth += 1;
    }
    let leaf: Vec<f64> = (0..d).map(|c| ext[c] / (n_per[c] as f64 * (1u64 << depth) as f64)).collect();
    let mut cells: Vec<(Vec<f64>, u32)> = Vec::new();
    for f in 0..n_per.iter().product::<usize>() {
        let mut rest = f;
        let center: Vec<f64> = (0..d)
            .map(|c| {
                let i = rest % n_per[c];
                rest /= n_per[c];
                let w = leaf[c] * (1u64 << depth) as f64;
                zlo[c] + (i as f64 + 0.5) * w
            })
            .collect();
        cells.push((center, depth));
    }
    let torus = kernel.period().is_some();
    while !cells.is_empty() {
        // (leaf sample, children to refine)
        type CellOutcome = (Option<(f64, f64, Vec<f64>)>, Vec<(Vec<f64>, u32)>);
        let results: Vec<CellOutcome> = cells
            .par_iter()
            .map(|(center, lev)| {
                let half: Vec<f64> = leaf.iter().map(|l| 0.5 * l * (1u64 << lev) as f64).collect();
                let rad = half.iter().map(|h| h * h).sum::<f64>().sqrt();
                let (_, dist) = nearest(center);
                if dist + rad < r_near {
                    return (None, vec![]);
                }
                let x = kernel.from_normalized(center);
                let inside = torus || (valid(&x) && (0..d).all(|c| center[c] >= zlo[c] - 1e-12 && center[c] <= zhi[c] + 1e-12));
                let mut rec = None;
                let mut abs = 1.0;
                if inside {
                    abs = eta.value(&x).norm();
                    if dist >= r_near {
                        rec = Some((1.0 - abs, abs, x));
                    }
                }
                let mut children = Vec::new();
                let l = eta.local_lipschitz(center, &half).map_or(lip, |v| v.min(lip));
                let prune = inside && 1.0 - abs - l * rad >= eps0;
                if *lev > 0 && !prune {
                    for ch in 0..(1usize << d) {
                        let cc: Vec<f64> = (0..d)
                            .map(|c| center[c] + if ch >> c & 1 == 1 { 0.5 } else { -0.5 } * half[c])
                            .collect();
                        children.push((cc, lev - 1));
                    }
                }
                (rec, children)
            })
            .collect();
        let mut next = Vec::new();
        for (rec, ch) in results {
            if let Some((margin, a, x)) = rec {
                lvl.n += 1;
                lvl.max_abs = lvl.max_abs.max(a);
                if margin < lvl.eps0 {
                    lvl.eps0 = margin;
                    lvl.worst_far = Some(x.clone());
                }
                if grid.record {
                    lvl.records.push(GridRecord { point: x, abs_eta: a, region: Region::Far, margin: margin - eps0 });
                }
            }
            next.extend(ch);
        }
        cells = next;
    }
    lvl
}

/// The three summands of η_{λ,w} = η_X + φᵀΠ_X w/λ + φᵀΠ_X Φ_{X0}a0/λ.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub base: EmpiricalCertificate,
    pub noise_term: EmpiricalCertificate,
    pub taylor_term: EmpiricalCertificate,
    /// ‖Π_X Γ_{X0}[a0; 0]‖ = ‖Π_X Φ_{X0} a0‖
    pub projected_norm: f64,
}

impl Decomposition {
    pub fn eval(&self, x: &[f64]) -> (Complex64, Complex64, Complex64) {
        (self.base.value(x), self.noise_term.value(x), self.taylor_term.value(x))
    }

    pub fn sum(&self, x: &[f64]) -> Complex64 {
        let (a, b, c) = self.eval(x);
        a + b + c
    }
}

/// Orthogonal projector onto the complement of the column span of Γ_X.
pub struct Projector {
    gamma: DMatrix<Complex64>,
    gram: DMatrix<Complex64>,
}

impl Projector {
    pub fn new(op: &MeasurementOperator, xs: &[Point]) -> Result<Self> {
        let sys = build_gamma(op, xs)?;
        let scale = sys.gram.diagonal().iter().map(|v| v.re).fold(0.0, f64::max).max(1e-300);
        if sys.min_eig <= 1e-10 * scale {
            return Err(Error::RankDeficient { min_eig: sys.min_eig });
        }
        Ok(Projector { gamma: sys.gamma.expect("empirical"), gram: sys.gram })
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let v = DVector::from_column_slice(v);
        let (c, _) = hermitian_solve(&self.gram, &(self.gamma.adjoint() * &v), 0.0)?;
        Ok((v - &self.gamma * c).iter().cloned().collect())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn certificate_decomposition(
    op: &MeasurementOperator,
    xs: &[Point],
    x0s: &[Point],
    a0: &[Complex64],
    w: &[Complex64],
    lambda: f64,
    signs: &[Complex64],
) -> Result<Decomposition> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if w.len() != op.m() {
        return Err(Error::InvalidInput(format!("noise has length {} but m = {}", w.len(), op.m())));
    }
    let proj = Projector::new(op, xs)?;
    let (base, _) = EmpiricalCertificate::precertificate(op, xs, signs)?;
    let pw: Vec<Complex64> = proj.apply(w)?.into_iter().map(|v| v / lambda).collect();
    let mu0 = DiscreteMeasure::new(a0.to_vec(), x0s.to_vec())?;
    let y0 = op.forward(&mu0)?;
    let p0 = proj.apply(&y0)?;
    let projected_norm = crate::linalg::cnorm(&p0);
    let pt: Vec<Complex64> = p0.into_iter().map(|v| v / lambda).collect();
    Ok(Decomposition {
        base,
        noise_term: EmpiricalCertificate::new(op, pw)?,
        taylor_term: EmpiricalCertificate::new(op, pt)?,
        projected_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFamily;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn local_lipschitz_bounds_gradient_in_cell() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for k in [LimitKernel::fejer(64, 2).unwrap(), LimitKernel::gaussian_iso(2, 1.0).unwrap(), LimitKernel::laplace(vec![1.0, 2.0]).unwrap()] {
            let xs: Vec<Point> = [[0.0, 0.0], [6.0, 1.0], [2.0, 7.0]]
                .iter()
                .map(|o| {
                    let base = k.to_normalized(&[0.3, 0.3]);
                    Point::new(k.from_normalized(&[base[0] + o[0], base[1] + o[1]])).unwrap()
                })
                .collect();
            let signs = vec![one(), -one(), Complex64::new(0.0, 1.0)];
            let (eta, _) = LimitCertificate::precertificate(&k, &xs, &signs).unwrap();
            let z0 = k.to_normalized(&xs[0]);
            for _ in 0..200 {
                let center: Vec<f64> = (0..2).map(|c| z0[c] + rng.random_range(-3.0..12.0)).collect();
                let half = [rng.random_range(0.01..2.0), rng.random_range(0.01..2.0)];
                let bound = eta.local_lipschitz(&center, &half).unwrap();
                for _ in 0..10 {
                    let z: Vec<f64> = (0..2).map(|c| center[c] + half[c] * rng.random_range(-1.0..1.0)).collect();
                    let x = k.from_normalized(&z);
                    if k.check_point(&x).is_err() {
                        continue;
                    }
                    let g = eta.derivatives(&x, 1).remove(1);
                    let gn = g.data().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                    assert!(gn <= bound * (1.0 + 1e-9) + 1e-300, "{} {gn} > {bound}", k.name());
                }
            }
        }
    }

    #[test]
    fn single_spike_limit_is_kernel() {
        let k = LimitKernel::gaussian_iso(2, 1.0).unwrap();
        let xs = vec![Point::new(vec![0.2, -0.1]).unwrap()];
        let sign = Complex64::from_polar(1.0, 0.7);
        let (eta, c) = LimitCertificate::precertificate(&k, &xs, &[sign]).unwrap();
        assert!((c.alpha[0] - sign).norm() < 1e-14);
        assert!(crate::linalg::cnorm(&c.beta[0]) < 1e-14);
        let x = [0.9, 0.4];
        assert!((eta.value(&x) - sign * k.eval(&x, &xs[0]).unwrap()).norm() < 1e-14);
    }

    #[test]
    fn exact_gram_single_spike_identity() {
        let fam = FeatureFamily::discrete_fourier(6, 2).unwrap();
        let op = MeasurementOperator::exact_discrete_fourier(fam).unwrap();
        let sys = build_gamma(&op, &[Point::new(vec![0.3, 0.6]).unwrap()]).unwrap();
        let id = DMatrix::<Complex64>::identity(3, 3);
        assert!((&sys.gram - id).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn duplicate_positions_rejected() {
        let k = LimitKernel::gaussian_iso(1, 1.0).unwrap();
        let xs = vec![Point::scalar(0.5), Point::scalar(0.5)];
        assert!(matches!(build_limit_gamma(&k, &xs), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_amplitude_rejected() {
        assert!(signs_of(&[one(), Complex64::new(0.0, 0.0)]).is_err());
    }

    #[test]
    fn gaussian_single_spike_passes_paper_constants() {
        let k = LimitKernel::gaussian_iso(1, 1.0).unwrap();
        let xs = vec![Point::scalar(0.0)];
        let (eta, _) = LimitCertificate::precertificate(&k, &xs, &[one()]).unwrap();
        let r = 1.0 / 2f64.sqrt();
        let bx = k.default_box(&xs, 10.0).unwrap();
        let grid = GridSpec::default_for(r, bx);
        let e0 = 1.0 - (-0.25f64).exp();
        let e2 = (-0.25f64).exp() / 2.0;
        let rep = check_nondegeneracy(&eta, &k, &[one()], &xs, r, e0, e2, &grid).unwrap();
        assert!(rep.pass, "{rep:?}");
        let big = eta.scaled(1.1);
        let rep = check_nondegeneracy(&big, &k, &[one()], &xs, r, e0, e2, &grid).unwrap();
        assert!(!rep.pass && rep.exceeds_one);
    }
}
