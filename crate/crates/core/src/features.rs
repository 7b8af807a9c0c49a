//! Random feature families, the measurement operator and its adjoint.
//!
//! Inner products are ⟨u,v⟩ = Σ ū_k v_k, so the adjoint of
//! Φμ = (√w_k Σ_i a_i φ_k(x_i))_k is (Φ*p)(x) = Σ_k √w_k conj(φ_k(x)) p_k and
//! Re⟨Φμ,p⟩ = Re Σ_i ā_i (Φ*p)(x_i). Sampled operators use w_k = 1/m; the
//! exact-expectation operator for the discrete Fourier family enumerates the
//! whole lattice with w_k = Λ(ω_k).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{fejer_coefficients, DerivBlock, DomainBox, LimitKernel, Point};
use crate::linalg::sym_sqrt_pair;
use crate::rng::{substream, FREQUENCIES, PROBE};
use crate::tensor::{count_table, Tensor};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureKind {
    DiscreteFourier { fc: u32 },
    GaussianFourier { sigma: DMatrix<f64> },
    LaplaceFeatures { alpha: Vec<f64> },
    GmmSketch { sigma: DMatrix<f64>, c: f64 },
}

#[derive(Clone, Debug)]
enum Sampler {
    Lattice { cdf: Vec<f64> },
    Normal { chol: DMatrix<f64> },
    Exponential { rates: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct FeatureFamily {
    kind: FeatureKind,
    d: usize,
    kernel: LimitKernel,
    sampler: Sampler,
}

impl FeatureFamily {
    pub fn discrete_fourier(fc: u32, d: usize) -> Result<Self> {
        let kernel = LimitKernel::fejer(fc, d)?;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = fejer_coefficients(fc)
            .into_iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect();
        let total = *cdf.last().unwrap();
        for v in &mut cdf {
            *v /= total;
        }
        Ok(FeatureFamily { kind: FeatureKind::DiscreteFourier { fc }, d, kernel, sampler: Sampler::Lattice { cdf } })
    }

    pub fn gaussian_fourier(sigma: DMatrix<f64>) -> Result<Self> {
        let kernel = LimitKernel::gaussian(sigma.clone())?;
        let (_, inv_root) = sym_sqrt_pair(&sigma)?;
        let d = sigma.nrows();
        Ok(FeatureFamily {
            kind: FeatureKind::GaussianFourier { sigma },
            d,
            kernel,
            sampler: Sampler::Normal { chol: inv_root },
        })
    }

    pub fn laplace(alpha: Vec<f64>) -> Result<Self> {
        let kernel = LimitKernel::laplace(alpha.clone())?;
        let d = alpha.len();
        let rates = alpha.iter().map(|a| 2.0 * a).collect();
        Ok(FeatureFamily { kind: FeatureKind::LaplaceFeatures { alpha }, d, kernel, sampler: Sampler::Exponential { rates } })
    }

    /// Sketching features C e^{i⟨ω,x⟩} e^{-½ ωᵀΣω} with ω ~ N(0, cΣ^{-1});
    /// `c` defaults to 1/d.
    pub fn gmm_sketch(sigma: DMatrix<f64>, c: Option<f64>) -> Result<Self> {
        let d = sigma.nrows();
        let c = c.unwrap_or(1.0 / d as f64);
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidInput(format!("frequency scale c must be positive, got {c}")));
        }
        let (_, inv_root) = sym_sqrt_pair(&sigma)?;
        let kernel = LimitKernel::gaussian(&sigma * (2.0 + 1.0 / c))?;
        Ok(FeatureFamily {
            kind: FeatureKind::GmmSketch { sigma, c },
            d,
            kernel,
            sampler: Sampler::Normal { chol: inv_root * c.sqrt() },
        })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// The deterministic m → ∞ kernel of this family.
    pub fn limit_kernel(&self) -> &LimitKernel {
        &self.kernel
    }

    /// Normalising constant of the GMM features, 1 otherwise.
    pub fn gmm_constant(&self) -> f64 {
        match &self.kind {
            FeatureKind::GmmSketch { c, .. } => (1.0 + 2.0 * c).powf(self.d as f64 / 4.0),
            _ => 1.0,
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        match &self.sampler {
            Sampler::Lattice { cdf } => {
                let fc = ((cdf.len() - 1) / 2) as f64;
                (0..self.d)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                        k as f64 - fc
                    })
                    .collect()
            }
            Sampler::Normal { chol } => {
                let g: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(rng)).collect();
                (0..self.d).map(|r| (0..self.d).map(|c| chol[(r, c)] * g[c]).sum()).collect()
            }
            Sampler::Exponential { rates } => rates
                .iter()
                .map(|&r| Exp::new(r).expect("positive rate").sample(rng))
                .collect(),
        }
    }

    /// Amplitude factor A(ω) in φ_ω(x) = A(ω) Π_c g_c(x_c).
    fn amplitude(&self, omega: &[f64]) -> f64 {
        match &self.kind {
            FeatureKind::LaplaceFeatures { alpha } => alpha.iter().map(|a| a.powf(-0.5)).product(),
            FeatureKind::GmmSketch { sigma, .. } => {
                let q: f64 = (0..self.d)
                    .map(|r| (0..self.d).map(|c| omega[r] * sigma[(r, c)] * omega[c]).sum::<f64>())
                    .sum();
                self.gmm_constant() * (-0.5 * q).exp()
            }
            _ => 1.0,
        }
    }

    /// Derivatives g_c^(n)(x_c), n = 0..=r, of one coordinate factor.
    fn coord_jet(&self, omega: f64, c: usize, xc: f64, r: usize) -> [Complex64; 4] {
        let mut out = [Complex64::new(0.0, 0.0); 4];
        match &self.kind {
            FeatureKind::LaplaceFeatures { alpha } => {
                let u = xc + alpha[c];
                let g = u.sqrt() * (-xc * omega).exp();
                let l1 = 0.5 / u - omega;
                let l2 = -0.5 / (u * u);
                let l3 = 1.0 / (u * u * u);
                let vals = [1.0, l1, l2 + l1 * l1, l3 + 3.0 * l1 * l2 + l1 * l1 * l1];
                for n in 0..=r {
                    out[n] = Complex64::new(g * vals[n], 0.0);
                }
            }
            _ => {
                let theta = if let FeatureKind::DiscreteFourier { .. } = self.kind { 2.0 * PI } else { 1.0 };
                let w = theta * omega;
                let e = Complex64::from_polar(1.0, w * xc);
                let mut f = Complex64::new(1.0, 0.0);
                for o in out.iter_mut().take(r + 1) {
                    *o = f * e;
                    f *= I * w;
                }
            }
        }
        out
    }

    /// φ_ω(x).
    pub fn feature(&self, omega: &[f64], x: &[f64]) -> Complex64 {
        let mut v = Complex64::new(self.amplitude(omega), 0.0);
        for c in 0..self.d {
            v *= self.coord_jet(omega[c], c, x[c], 0)[0];
        }
        v
    }

    pub fn sample_frequencies(&self, m: usize, seed: u64) -> Result<FrequencySet> {
        if m == 0 {
            return Err(Error::InvalidInput("number of frequencies must be >= 1".into()));
        }
        let omegas = (0..m)
            .map(|k| {
                let mut rng = substream(seed, FREQUENCIES, k as u64);
                self.draw(&mut rng)
            })
            .collect();
        Ok(FrequencySet { omegas, seed })
    }
}

pub fn sample_frequencies(family: &FeatureFamily, m: usize, seed: u64) -> Result<FrequencySet> {
    family.sample_frequencies(m, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySet {
    pub omegas: Vec<Vec<f64>>,
    pub seed: u64,
}

impl FrequencySet {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.omegas.first().map_or(0, |o| o.len());
        let mut header = vec!["index".to_string()];
        header.extend((1..=d).map(|c| format!("omega_{c}")));
        wr.write_record(&header)?;
        for (k, o) in self.omegas.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(o.iter().map(|v| format!("{v:.16e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut omegas = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(|s| s.trim().parse::<f64>()).collect();
            omegas.push(vals.map_err(|e| Error::InvalidInput(format!("bad frequency entry: {e}")))?);
        }
        Ok(FrequencySet { omegas, seed })
    }
}

/// Σ a_i δ_{x_i} with complex amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub amplitudes: Vec<Complex64>,
    pub positions: Vec<Point>,
}

impl DiscreteMeasure {
    pub fn new(amplitudes: Vec<Complex64>, positions: Vec<Point>) -> Result<Self> {
        if amplitudes.len() != positions.len() {
            return Err(Error::InvalidInput(format!(
                "{} amplitudes for {} positions",
                amplitudes.len(),
                positions.len()
            )));
        }
        if let Some(p) = positions.first() {
            if positions.iter().any(|q| q.dim() != p.dim()) {
                return Err(Error::InvalidInput("positions have mixed dimensions".into()));
            }
        }
        Ok(DiscreteMeasure { amplitudes, positions })
    }

    pub fn empty() -> Self {
        DiscreteMeasure { amplitudes: vec![], positions: vec![] }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// |μ|(X) = ‖a‖₁.
    pub fn total_variation(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm()).sum()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        DiscreteMeasure { amplitudes: self.amplitudes.iter().map(|a| a * s).collect(), positions: self.positions.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct MeasurementOperator {
    family: FeatureFamily,
    freqs: FrequencySet,
    /// √w_k · A(ω_k)
    coef: Vec<f64>,
    sqrt_w: Vec<f64>,
}

impl MeasurementOperator {
    pub fn new(family: FeatureFamily, freqs: FrequencySet) -> Result<Self> {
        let m = freqs.len();
        if m == 0 {
            return Err(Error::InvalidInput("empty frequency set".into()));
        }
        if freqs.omegas.iter().any(|o| o.len() != family.dim()) {
            return Err(Error::InvalidInput("frequency dimension differs from family dimension".into()));
        }
        let sqrt_w = vec![1.0 / (m as f64).sqrt(); m];
        Ok(Self::with_weights(family, freqs, sqrt_w))
    }

    fn with_weights(family: FeatureFamily, freqs: FrequencySet, sqrt_w: Vec<f64>) -> Self {
        let coef = freqs.omegas.iter().zip(&sqrt_w).map(|(o, s)| s * family.amplitude(o)).collect();
        MeasurementOperator { family, freqs, coef, sqrt_w }
    }

    pub fn sample(family: FeatureFamily, m: usize, seed: u64) -> Result<Self> {
        let freqs = family.sample_frequencies(m, seed)?;
        Self::new(family, freqs)
    }

    /// Every lattice frequency weighted by Λ, so empirical objects equal
    /// their expectations (discrete Fourier family only).
    pub fn exact_discrete_fourier(family: FeatureFamily) -> Result<Self> {
        let fc = match family.kind {
            FeatureKind::DiscreteFourier { fc } => fc,
            _ => return Err(Error::InvalidInput("exact expectation needs the discrete Fourier family".into())),
        };
        let coeffs = fejer_coefficients(fc);
        let n = coeffs.len();
        let d = family.dim();
        let total = n.pow(d as u32);
        let mut omegas = Vec::with_capacity(total);
        let mut sqrt_w = Vec::with_capacity(total);
        for f in 0..total {
            let mut rest = f;
            let mut o = vec![0.0; d];
            let mut w = 1.0;
            for oc in o.iter_mut() {
                let k = rest % n;
                rest /= n;
                *oc = k as f64 - fc as f64;
                w *= coeffs[k];
            }
            omegas.push(o);
            sqrt_w.push(w.sqrt());
        }
        Ok(Self::with_weights(family, FrequencySet { omegas, seed: 0 }, sqrt_w))
    }

    pub fn family(&self) -> &FeatureFamily {
        &self.family
    }

    pub fn kernel(&self) -> &LimitKernel {
        &self.family.kernel
    }

    pub fn freqs(&self) -> &FrequencySet {
        &self.freqs
    }

    pub fn m(&self) -> usize {
        self.freqs.len()
    }

    /// √w_k per frequency (1/√m when sampled).
    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_w
    }

    /// Upper bound on sup_{x ∈ box} ‖d¹(√w_k φ_k)(x)‖.
    pub fn gradient_sup(&self, k: usize, bx: &DomainBox) -> f64 {
        let o = &self.freqs.omegas[k];
        let cf = self.coef[k].abs();
        match &self.family.kind {
            FeatureKind::LaplaceFeatures { alpha } => {
                // |φ| ≤ Π sup √u e^{-xω}, normalized partials are φ·(1 − 2uω)
                let mut amp = cf;
                let mut grad2 = 0.0;
                for c in 0..self.family.d {
                    let (lo, hi) = (bx.lo[c].max(0.0) + alpha[c], bx.hi[c] + alpha[c]);
                    let ustar = if o[c] > 0.0 { (0.5 / o[c]).clamp(lo, hi) } else { hi };
                    amp *= ustar.sqrt() * (-(ustar - alpha[c]) * o[c]).exp();
                    let e1 = (1.0 - 2.0 * lo * o[c]).abs();
                    let e2 = (1.0 - 2.0 * hi * o[c]).abs();
                    grad2 += e1.max(e2).powi(2);
                }
                amp * grad2.sqrt()
            }
            _ => {
                let theta = if let FeatureKind::DiscreteFourier { .. } = self.family.kind { 2.0 * PI } else { 1.0 };
                let x0 = bx.lo.clone();
                let s = self.family.kernel.metric_inv_sqrt(&x0);
                let d = self.family.d;
                let g: f64 = (0..d)
                    .map(|r| (0..d).map(|c| s[(r, c)] * theta * o[c]).sum::<f64>().powi(2))
                    .sum::<f64>()
                    .sqrt();
                cf * g
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.family.d
    }

    /// Column (√w_k φ_k(x))_k.
    pub fn feature_column(&self, x: &[f64]) -> Vec<Complex64> {
        let d = self.family.d;
        self.freqs
            .omegas
            .iter()
            .zip(&self.coef)
            .map(|(o, &cf)| {
                let mut v = Complex64::new(cf, 0.0);
                for c in 0..d {
                    v *= self.family.coord_jet(o[c], c, x[c], 0)[0];
                }
                v
            })
            .collect()
    }

    /// Raw (unnormalized) derivative entries of √w_k φ_k at x for orders 0..=r,
    /// as one flat array per order.
    fn raw_derivatives(&self, k: usize, x: &[f64], r: usize, tables: &[Vec<Vec<usize>>]) -> Vec<Vec<Complex64>> {
        let d = self.family.d;
        let o = &self.freqs.omegas[k];
        let jets: Vec<[Complex64; 4]> = (0..d).map(|c| self.family.coord_jet(o[c], c, x[c], r)).collect();
        let cf = self.coef[k];
        (0..=r)
            .map(|order| {
                tables[order]
                    .iter()
                    .map(|counts| {
                        let mut v = Complex64::new(cf, 0.0);
                        for c in 0..d {
                            v *= jets[c][counts[c]];
                        }
                        v
                    })
                    .collect()
            })
            .collect()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        self.family.kernel.check_point(x)
    }

    pub fn forward(&self, mu: &DiscreteMeasure) -> Result<Vec<Complex64>> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.m()];
        for (a, x) in mu.amplitudes.iter().zip(&mu.positions) {
            self.check_x(x)?;
            for (yk, v) in y.iter_mut().zip(self.feature_column(x)) {
                *yk += a * v;
            }
        }
        Ok(y)
    }

    /// Metric-normalized derivatives of Φ*p at x for every order 0..=r.
    pub fn adjoint_derivatives(&self, p: &[Complex64], x: &[f64], r: usize) -> Result<Vec<Tensor>> {
        if r > 3 {
            return Err(Error::InvalidInput(format!("adjoint derivative order {r} > 3")));
        }
        if p.len() != self.m() {
            return Err(Error::InvalidInput(format!("dual vector has length {} but m = {}", p.len(), self.m())));
        }
        self.check_x(x)?;
        let d = self.family.d;
        let tables: Vec<Vec<Vec<usize>>> = (0..=r).map(|o| count_table(d, o)).collect();
        let mut acc: Vec<Vec<Complex64>> =
            (0..=r).map(|o| vec![Complex64::new(0.0, 0.0); d.pow(o as u32)]).collect();
        for (k, pk) in p.iter().enumerate() {
            if *pk == Complex64::new(0.0, 0.0) {
                continue;
            }
            let raw = self.raw_derivatives(k, x, r, &tables);
            for (a, rv) in acc.iter_mut().zip(raw) {
                for (ae, re) in a.iter_mut().zip(rv) {
                    *ae += re.conj() * pk;
                }
            }
        }
        let s = self.family.kernel.metric_inv_sqrt(x);
        Ok(acc
            .into_iter()
            .enumerate()
            .map(|(o, data)| Tensor::from_vec(d, o, data).apply_all_slots(&s))
            .collect())
    }

    pub fn adjoint_eval(&self, p: &[Complex64], x: &[f64], r: usize) -> Result<Tensor> {
        Ok(self.adjoint_derivatives(p, x, r)?.pop().expect("nonempty"))
    }

    /// (Φ*p)(x) only.
    pub fn adjoint_value(&self, p: &[Complex64], x: &[f64]) -> Complex64 {
        self.feature_column(x).iter().zip(p).map(|(f, pk)| f.conj() * pk).sum()
    }

    /// Normalized derivative arrays of √w_k φ_k(x) for all k, order r.
    fn normalized_feature_derivs(&self, x: &[f64], r: usize) -> Vec<Tensor> {
        let d = self.family.d;
        let tables: Vec<Vec<Vec<usize>>> = (0..=r).map(|o| count_table(d, o)).collect();
        let s = self.family.kernel.metric_inv_sqrt(x);
        (0..self.m())
            .map(|k| {
                let raw = self.raw_derivatives(k, x, r, &tables).pop().unwrap();
                Tensor::from_vec(d, r, raw).apply_all_slots(&s)
            })
            .collect()
    }

    /// Ĉov^(ij)(x,x′) = Σ_k w_k conj(d^iφ_k(x)) ⊗ d^jφ_k(x′).
    pub fn empirical_kernel(&self, i: usize, j: usize, x: &[f64], xp: &[f64]) -> Result<DerivBlock> {
        if i > 2 || j > 2 {
            return Err(Error::UnsupportedOrder { i, j });
        }
        self.check_x(x)?;
        self.check_x(xp)?;
        let d = self.family.d;
        let a = self.normalized_feature_derivs(x, i);
        let b = self.normalized_feature_derivs(xp, j);
        let mut out = Tensor::zeros(d, i + j);
        let nb = d.pow(j as u32);
        for (ta, tb) in a.iter().zip(&b) {
            for (fa, va) in ta.data().iter().enumerate() {
                let ca = va.conj();
                for (fb, vb) in tb.data().iter().enumerate() {
                    out.data_mut()[fa * nb + fb] += ca * vb;
                }
            }
        }
        Ok(DerivBlock { i, j, value: out })
    }

    /// Φ_X as an m × s matrix.
    pub fn feature_matrix(&self, xs: &[Point]) -> Result<DMatrix<Complex64>> {
        let mut mat = DMatrix::zeros(self.m(), xs.len());
        for (i, x) in xs.iter().enumerate() {
            self.check_x(x)?;
            for (k, v) in self.feature_column(x).into_iter().enumerate() {
                mat[(k, i)] = v;
            }
        }
        Ok(mat)
    }

    /// Metric-normalized Γ_X: columns [φ(x_1) .. φ(x_s), d¹φ(x_1) .. d¹φ(x_s)]
    /// (gradient columns grouped per spike).
    pub fn gamma_matrix(&self, xs: &[Point]) -> Result<DMatrix<Complex64>> {
        let s = xs.len();
        let d = self.family.d;
        let mut mat = DMatrix::zeros(self.m(), s * (d + 1));
        for (i, x) in xs.iter().enumerate() {
            self.check_x(x)?;
            for (k, v) in self.feature_column(x).into_iter().enumerate() {
                mat[(k, i)] = v;
            }
            for (k, t) in self.normalized_feature_derivs(x, 1).into_iter().enumerate() {
                for c in 0..d {
                    mat[(k, s + i * d + c)] = t.data()[c];
                }
            }
        }
        Ok(mat)
    }
}

pub fn forward(op: &MeasurementOperator, mu: &DiscreteMeasure) -> Result<Vec<Complex64>> {
    op.forward(mu)
}

pub fn adjoint_eval(op: &MeasurementOperator, p: &[Complex64], x: &Point, r: usize) -> Result<Tensor> {
    op.adjoint_eval(p, x, r)
}

pub fn empirical_kernel(op: &MeasurementOperator, i: usize, j: usize, x: &Point, xp: &Point) -> Result<DerivBlock> {
    op.empirical_kernel(i, j, x, xp)
}

/// Empirical 99th percentiles of L_r(ω) = sup_x ‖d^r φ_ω(x)‖, r = 0..3.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBounds {
    pub l: [f64; 4],
}

pub fn estimate_feature_bounds(family: &FeatureFamily, bx: &DomainBox, m_probe: usize, seed: u64) -> Result<FeatureBounds> {
    if m_probe == 0 {
        return Err(Error::InvalidInput("m_probe must be >= 1".into()));
    }
    let d = family.dim();
    if bx.dim() != d {
        return Err(Error::InvalidInput("domain box dimension differs from family".into()));
    }
    let kernel = family.limit_kernel();
    let (zlo, zhi) = kernel.normalized_bounds(bx);
    let per_dim: usize = match d {
        1 => 257,
        2 => 33,
        _ => 9,
    };
    let mut grid: Vec<Vec<f64>> = Vec::new();
    for f in 0..per_dim.pow(d as u32) {
        let mut rest = f;
        let z: Vec<f64> = (0..d)
            .map(|c| {
                let k = rest % per_dim;
                rest /= per_dim;
                zlo[c] + (zhi[c] - zlo[c]) * k as f64 / (per_dim - 1) as f64
            })
            .collect();
        let x = kernel.from_normalized(&z);
        if kernel.in_box(bx, &x) && kernel.check_point(&x).is_ok() {
            grid.push(x);
        }
    }
    let step0 = (0..d).map(|c| (zhi[c] - zlo[c]) / (per_dim - 1) as f64).fold(0.0, f64::max);
    let tables: Vec<Vec<Vec<usize>>> = (0..=3).map(|o| count_table(d, o)).collect();
    let sups: Vec<[f64; 4]> = (0..m_probe)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, PROBE, k as u64);
            let omega = family.draw(&mut rng);
            let single = MeasurementOperator::with_weights(
                family.clone(),
                FrequencySet { omegas: vec![omega], seed },
                vec![1.0],
            );
            let norms = |x: &[f64]| -> [f64; 4] {
                let raw = single.raw_derivatives(0, x, 3, &tables);
                let s = kernel.metric_inv_sqrt(x);
                let mut out = [0.0; 4];
                for (r, data) in raw.into_iter().enumerate() {
                    out[r] = Tensor::from_vec(d, r, data).apply_all_slots(&s).op_norm();
                }
                out
            };
            let mut best = [0.0f64; 4];
            let mut arg = vec![grid[0].clone(); 4];
            for x in &grid {
                let v = norms(x);
                for r in 0..4 {
                    if v[r] > best[r] {
                        best[r] = v[r];
                        arg[r] = x.clone();
                    }
                }
            }
            // compass search in normalized coordinates from the best grid point
            for r in 0..4 {
                let mut z = kernel.to_normalized(&arg[r]);
                let mut step = step0;
                while step > step0 * 1e-3 {
                    let mut moved = false;
                    for c in 0..d {
                        for sgn in [-1.0, 1.0] {
                            let mut zt = z.clone();
                            zt[c] += sgn * step;
                            let x = kernel.from_normalized(&zt);
                            if !kernel.in_box(bx, &x) || kernel.check_point(&x).is_err() {
                                continue;
                            }
                            let v = norms(&x)[r];
                            if v > best[r] {
                                best[r] = v;
                                z = zt;
                                moved = true;
                            }
                        }
                    }
                    if !moved {
                        step *= 0.5;
                    }
                }
            }
            best
        })
        .collect();
    let mut l = [0.0; 4];
    for (r, lr) in l.iter_mut().enumerate() {
        let mut v: Vec<f64> = sups.iter().map(|s| s[r]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((0.99 * m_probe as f64).ceil() as usize).clamp(1, m_probe) - 1;
        *lr = v[idx];
    }
    Ok(FeatureBounds { l })
}

/// ‖v‖ for a complex vector, as used by callers of the operator.
pub fn vec_norm(v: &[Complex64]) -> f64 {
    crate::linalg::cnorm(v)
}

/// Re⟨u, v⟩ = Re Σ ū_k v_k.
pub fn re_inner(u: &[Complex64], v: &[Complex64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a.conj() * b).re).sum()
}

pub fn to_dvector(v: &[Complex64]) -> DVector<Complex64> {
    DVector::from_column_slice(v)
}
