//! Limit kernels, their Fisher geometry and metric-normalized derivative blocks.
//!
//! All three families are translation invariant once positions are mapped to
//! normalized coordinates z (Fejér: √C·x on a torus of period √C, Gaussian:
//! Σ^{-1/2}x, Laplace: log(x+α)). In those coordinates the Fisher distance is
//! the Euclidean norm of z − z′ and every block K^(ij) is a product of 1-D
//! factors k^(n,m)(δ_c), one per coordinate, where n and m count how many
//! slots of each argument hit coordinate c.

use std::f64::consts::PI;
use std::ops::Deref;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::sym_sqrt_pair;
use crate::tensor::{count_table, Tensor};

/// Highest per-slot derivative order handled by the 1-D factors.
pub const MAX_SLOT_ORDER: usize = 3;
const JET: usize = 2 * MAX_SLOT_ORDER + 1;

pub type FactorTable = [[f64; MAX_SLOT_ORDER + 1]; MAX_SLOT_ORDER + 1];

#[derive(Clone, Debug, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("point must have at least one coordinate".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Point(coords))
    }

    pub fn scalar(x: f64) -> Self {
        Point(vec![x])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// sup_{|δ| ≥ τ} |k^(n,m)(δ)| for n, m ≤ 1, tabulated on a uniform grid in τ.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorEnvelope {
    step: f64,
    tails: Vec<[[f64; 2]; 2]>,
}

impl FactorEnvelope {
    pub fn at(&self, tau: f64) -> [[f64; 2]; 2] {
        let k = (tau.max(0.0) / self.step).floor() as usize;
        self.tails[k.min(self.tails.len() - 1)]
    }
}

/// Axis-aligned working box in domain units.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidInput(format!("empty or non-finite box {lo:?}..{hi:?}")));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn unit(d: usize) -> Self {
        DomainBox { lo: vec![0.0; d], hi: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    Fejer { fc: u32 },
    Gaussian { sigma: DMatrix<f64> },
    Laplace { alpha: Vec<f64> },
}

#[derive(Clone, Debug)]
enum Repr {
    Torus { sqrt_c: f64, m: f64, coeffs: Vec<f64> },
    Affine { root: DMatrix<f64>, inv_root: DMatrix<f64>, inv: DMatrix<f64> },
    Log,
}

#[derive(Clone, Debug)]
pub struct LimitKernel {
    family: KernelFamily,
    d: usize,
    domain_radius: Option<f64>,
    repr: Repr,
    sups: Arc<OnceLock<FactorTable>>,
    envelope: Arc<OnceLock<FactorEnvelope>>,
}

/// Fourier coefficients c_j (j = -fc..fc) of (sin(πMt)/(M sin πt))^4 with
/// M = fc/2 + 1: the self-convolution of the triangle (M - |k|)/M^2.
pub fn fejer_coefficients(fc: u32) -> Vec<f64> {
    let half = (fc / 2) as i64;
    let m = half as f64 + 1.0;
    let tri = |k: i64| if k.abs() <= half { (m - k.abs() as f64) / (m * m) } else { 0.0 };
    (-(fc as i64)..=fc as i64)
        .map(|j| (-half..=half).map(|k| tri(k) * tri(j - k)).sum())
        .collect()
}

pub fn fejer_constant(fc: u32) -> f64 {
    let f = fc as f64;
    PI * PI * f * (f + 4.0) / 3.0
}

fn binom(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

fn jet_mul(a: &[f64; JET], b: &[f64; JET]) -> [f64; JET] {
    let mut out = [0.0; JET];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (0..=k).map(|i| binom(k, i) * a[i] * b[k - i]).sum();
    }
    out
}

/// Derivatives of t -> (sin(πMt)/(M sin πt))^4 at t, orders 0..JET-1.
fn fejer_jet(t: f64, m: f64, coeffs: &[f64]) -> [f64; JET] {
    let den0 = m * (PI * t).sin();
    if den0.abs() < 1.0 {
        // Fourier series near the removable singularity
        let fc = (coeffs.len() - 1) / 2;
        let mut out = [0.0; JET];
        out[0] = coeffs[fc];
        for j in 1..=fc {
            let w = 2.0 * PI * j as f64;
            let c = 2.0 * coeffs[fc + j];
            let mut wk = 1.0;
            for (k, o) in out.iter_mut().enumerate() {
                *o += c * wk * (w * t + k as f64 * PI / 2.0).cos();
                wk *= w;
            }
        }
        return out;
    }
    let mut num = [0.0; JET];
    let mut den = [0.0; JET];
    for k in 0..JET {
        let ph = k as f64 * PI / 2.0;
        num[k] = (PI * m).powi(k as i32) * (PI * m * t + ph).sin();
        den[k] = m * PI.powi(k as i32) * (PI * t + ph).sin();
    }
    let mut q = [0.0; JET];
    for k in 0..JET {
        let mut acc = num[k];
        for j in 1..=k {
            acc -= binom(k, j) * den[j] * q[k - j];
        }
        q[k] = acc / den[0];
    }
    let q2 = jet_mul(&q, &q);
    jet_mul(&q2, &q2)
}

/// Derivatives of t -> exp(-t^2/2): (-1)^k He_k(t) e^{-t^2/2}.
fn gauss_jet(t: f64) -> [f64; JET] {
    let g = (-0.5 * t * t).exp();
    let mut he = [0.0; JET];
    he[0] = 1.0;
    he[1] = t;
    for k in 1..JET - 1 {
        he[k + 1] = t * he[k] - k as f64 * he[k - 1];
    }
    let mut out = [0.0; JET];
    for k in 0..JET {
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        out[k] = s * he[k] * g;
    }
    out
}

/// Derivatives of L -> sech(L/2). Uses S^(k)(y) = S·P_k(T) with
/// P_{k+1} = -T P_k + (1 - T^2) P_k', S = sech y, T = tanh y.
fn laplace_jet(l: f64) -> [f64; JET] {
    let y = 0.5 * l;
    let s = 1.0 / y.cosh();
    let t = y.tanh();
    let mut poly: Vec<f64> = vec![1.0];
    let mut out = [0.0; JET];
    for (k, o) in out.iter_mut().enumerate() {
        let pv: f64 = poly.iter().rev().fold(0.0, |acc, c| acc * t + c);
        *o = s * pv * 0.5f64.powi(k as i32);
        let mut next = vec![0.0; poly.len() + 2];
        for (i, &c) in poly.iter().enumerate() {
            next[i + 1] -= c;
            if i >= 1 {
                let dc = c * i as f64;
                next[i - 1] += dc;
                next[i + 1] -= dc;
            }
        }
        poly = next;
    }
    out
}

/// Normalized derivative operators in L = log u - log v, per slot order.
/// First argument: (2u)^n ∂_u^n; second: (2v)^m ∂_v^m.
const LAPLACE_P: [[f64; 4]; 4] =
    [[1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, -4.0, 4.0, 0.0], [0.0, 16.0, -24.0, 8.0]];
const LAPLACE_Q: [[f64; 4]; 4] =
    [[1.0, 0.0, 0.0, 0.0], [0.0, -2.0, 0.0, 0.0], [0.0, 4.0, 4.0, 0.0], [0.0, -16.0, -24.0, -8.0]];

fn wrap_half(t: f64) -> f64 {
    t - (t + 0.5).floor()
}

impl LimitKernel {
    pub fn fejer(fc: u32, d: usize) -> Result<Self> {
        if fc < 2 || !fc.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("Fejér cutoff must be even and >= 2, got {fc}")));
        }
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be >= 1".into()));
        }
        let sqrt_c = fejer_constant(fc).sqrt();
        let repr = Repr::Torus { sqrt_c, m: (fc / 2) as f64 + 1.0, coeffs: fejer_coefficients(fc) };
        Ok(Self::build(KernelFamily::Fejer { fc }, d, repr))
    }

    pub fn gaussian(sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        let (root, inv_root) = sym_sqrt_pair(&sigma)?;
        let inv = &inv_root * &inv_root;
        Ok(Self::build(KernelFamily::Gaussian { sigma }, d, Repr::Affine { root, inv_root, inv }))
    }

    pub fn gaussian_iso(d: usize, variance: f64) -> Result<Self> {
        Self::gaussian(DMatrix::identity(d, d) * variance)
    }

    pub fn laplace(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidInput(format!("Laplace alpha must be positive, got {alpha:?}")));
        }
        let d = alpha.len();
        Ok(Self::build(KernelFamily::Laplace { alpha }, d, Repr::Log))
    }

    fn build(family: KernelFamily, d: usize, repr: Repr) -> Self {
        LimitKernel { family, d, domain_radius: None, repr, sups: Arc::new(OnceLock::new()), envelope: Arc::new(OnceLock::new()) }
    }

    pub fn with_domain_radius(mut self, r: f64) -> Self {
        self.domain_radius = Some(r);
        self
    }

    pub fn domain_radius(&self) -> Option<f64> {
        self.domain_radius
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            KernelFamily::Fejer { .. } => "fejer",
            KernelFamily::Gaussian { .. } => "gaussian",
            KernelFamily::Laplace { .. } => "laplace",
        }
    }

    /// Period of the normalized torus (Fejér only).
    pub fn period(&self) -> Option<f64> {
        match &self.repr {
            Repr::Torus { sqrt_c, .. } => Some(*sqrt_c),
            _ => None,
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::InvalidInput(format!(
                "point has dimension {} but kernel has {}",
                x.len(),
                self.d
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite point {x:?}")));
        }
        if let KernelFamily::Laplace { .. } = self.family {
            if x.iter().any(|v| *v < 0.0) {
                return Err(Error::Domain(format!("Laplace coordinates must be nonnegative, got {x:?}")));
            }
        }
        Ok(())
    }

    /// Normalized coordinates z(x).
    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        match (&self.repr, &self.family) {
            (Repr::Torus { sqrt_c, .. }, _) => x.iter().map(|v| v * sqrt_c).collect(),
            (Repr::Affine { inv_root, .. }, _) => mat_vec(inv_root, x),
            (Repr::Log, KernelFamily::Laplace { alpha }) => {
                x.iter().zip(alpha).map(|(v, a)| (v + a).ln()).collect()
            }
            _ => unreachable!(),
        }
    }

    /// Inverse of `to_normalized`; Fejér positions are wrapped into [0,1).
    pub fn from_normalized(&self, z: &[f64]) -> Vec<f64> {
        match (&self.repr, &self.family) {
            (Repr::Torus { sqrt_c, .. }, _) => z.iter().map(|v| (v / sqrt_c).rem_euclid(1.0)).collect(),
            (Repr::Affine { root, .. }, _) => mat_vec(root, z),
            (Repr::Log, KernelFamily::Laplace { alpha }) => {
                z.iter().zip(alpha).map(|(v, a)| v.exp() - a).collect()
            }
            _ => unreachable!(),
        }
    }

    /// δ = z − z′, with the torus representative in [−P/2, P/2) for Fejér.
    pub fn coord_diff(&self, z: &[f64], zp: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Torus { sqrt_c, .. } => {
                z.iter().zip(zp).map(|(a, b)| wrap_half((a - b) / sqrt_c) * sqrt_c).collect()
            }
            _ => z.iter().zip(zp).map(|(a, b)| a - b).collect(),
        }
    }

    /// Table k^(n,m)(δ) for n, m ≤ 3 at one coordinate offset.
    pub fn factor_table(&self, delta: f64) -> FactorTable {
        let mut tab = [[0.0; MAX_SLOT_ORDER + 1]; MAX_SLOT_ORDER + 1];
        match &self.repr {
            Repr::Torus { sqrt_c, m, coeffs } => {
                let jet = fejer_jet(wrap_half(delta / sqrt_c), *m, coeffs);
                for (n, row) in tab.iter_mut().enumerate() {
                    for (mm, v) in row.iter_mut().enumerate() {
                        let k = n + mm;
                        let s = if mm % 2 == 0 { 1.0 } else { -1.0 };
                        *v = s * jet[k] / sqrt_c.powi(k as i32);
                    }
                }
            }
            Repr::Affine { .. } => {
                let jet = gauss_jet(delta);
                for (n, row) in tab.iter_mut().enumerate() {
                    for (mm, v) in row.iter_mut().enumerate() {
                        let s = if mm % 2 == 0 { 1.0 } else { -1.0 };
                        *v = s * jet[n + mm];
                    }
                }
            }
            Repr::Log => {
                let jet = laplace_jet(delta);
                for (n, row) in tab.iter_mut().enumerate() {
                    for (mm, v) in row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (a, pa) in LAPLACE_P[n].iter().enumerate() {
                            for (b, qb) in LAPLACE_Q[mm].iter().enumerate() {
                                acc += pa * qb * jet[a + b];
                            }
                        }
                        *v = acc;
                    }
                }
            }
        }
        tab
    }

    /// K^(ij) at a normalized offset δ = z(x) − z(x′). No domain checks.
    pub fn deriv_offset(&self, i: usize, j: usize, delta: &[f64]) -> Tensor {
        let tabs: Vec<FactorTable> = delta.iter().map(|&t| self.factor_table(t)).collect();
        block_from_tables(self.d, i, j, &tabs)
    }

    pub fn eval_offset(&self, delta: &[f64]) -> f64 {
        delta.iter().map(|&t| self.factor_table(t)[0][0]).product()
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(xp)?;
        let delta = self.coord_diff(&self.to_normalized(x), &self.to_normalized(xp));
        Ok(self.eval_offset(&delta))
    }

    pub fn deriv(&self, i: usize, j: usize, x: &[f64], xp: &[f64]) -> Result<DerivBlock> {
        if i > 2 || j > 2 {
            return Err(Error::UnsupportedOrder { i, j });
        }
        self.check_point(x)?;
        self.check_point(xp)?;
        let delta = self.coord_diff(&self.to_normalized(x), &self.to_normalized(xp));
        Ok(DerivBlock { i, j, value: self.deriv_offset(i, j, &delta) })
    }

    pub fn metric_tensor(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(self.metric_unchecked(x))
    }

    fn metric_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        match (&self.repr, &self.family) {
            (Repr::Torus { sqrt_c, .. }, _) => DMatrix::identity(self.d, self.d) * (sqrt_c * sqrt_c),
            (Repr::Affine { inv, .. }, _) => inv.clone(),
            (Repr::Log, KernelFamily::Laplace { alpha }) => DMatrix::from_diagonal(
                &nalgebra::DVector::from_iterator(
                    self.d,
                    x.iter().zip(alpha).map(|(v, a)| (2.0 * (v + a)).powi(-2)),
                ),
            ),
            _ => unreachable!(),
        }
    }

    /// H_x^{-1/2}, used to normalize raw derivatives.
    pub fn metric_inv_sqrt(&self, x: &[f64]) -> DMatrix<f64> {
        match (&self.repr, &self.family) {
            (Repr::Torus { sqrt_c, .. }, _) => DMatrix::identity(self.d, self.d) / *sqrt_c,
            (Repr::Affine { root, .. }, _) => root.clone(),
            (Repr::Log, KernelFamily::Laplace { alpha }) => DMatrix::from_diagonal(
                &nalgebra::DVector::from_iterator(self.d, x.iter().zip(alpha).map(|(v, a)| 2.0 * (v + a))),
            ),
            _ => unreachable!(),
        }
    }

    /// ‖Id − H_{x0}^{-1/2} H_x^{1/2}‖.
    pub fn metric_deviation(&self, x0: &[f64], x: &[f64]) -> f64 {
        let a = self.metric_inv_sqrt(x0);
        let b = self.metric_inv_sqrt(x);
        let binv = b.try_inverse().expect("metric square root is invertible");
        crate::linalg::spectral_norm(&(DMatrix::identity(self.d, self.d) - a * binv))
    }

    pub fn fisher_distance(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(xp)?;
        Ok(self.distance_unchecked(x, xp))
    }

    pub fn distance_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        let delta = self.coord_diff(&self.to_normalized(x), &self.to_normalized(xp));
        delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Upper bound on sup_δ |k^(n,m)(δ)| per 1-D factor, from a dense scan.
    pub fn factor_sups(&self) -> FactorTable {
        *self.sups.get_or_init(|| {
            let (hi, step) = match &self.repr {
                Repr::Torus { sqrt_c, m, .. } => (0.5 * sqrt_c, sqrt_c / (m * 400.0)),
                Repr::Affine { .. } => (16.0, 1e-3),
                Repr::Log => (120.0, 1e-3),
            };
            let n = (hi / step).ceil() as usize;
            let mut sup = [[0.0f64; MAX_SLOT_ORDER + 1]; MAX_SLOT_ORDER + 1];
            for k in 0..=n {
                let t = self.factor_table(k as f64 * step);
                for a in 0..=MAX_SLOT_ORDER {
                    for b in 0..=MAX_SLOT_ORDER {
                        sup[a][b] = sup[a][b].max(t[a][b].abs());
                    }
                }
            }
            for row in sup.iter_mut() {
                for v in row.iter_mut() {
                    *v *= 1.01;
                }
            }
            sup
        })
    }

    /// Tail suprema of the first-order factor derivatives, for local Lipschitz bounds.
    pub fn factor_envelope(&self) -> &FactorEnvelope {
        self.envelope.get_or_init(|| {
            let (hi, step) = match &self.repr {
                Repr::Torus { sqrt_c, .. } => (0.5 * sqrt_c, 0.01),
                Repr::Affine { .. } => (40.0, 0.005),
                Repr::Log => (1500.0, 0.01),
            };
            let sups = self.factor_sups();
            let n = (hi / step).ceil() as usize;
            let node = |k: usize| {
                let t = (k as f64 * step).min(hi);
                let (a, b) = (self.factor_table(t), self.factor_table(-t));
                let mut v = [[0.0; 2]; 2];
                for (i, row) in v.iter_mut().enumerate() {
                    for (j, e) in row.iter_mut().enumerate() {
                        *e = a[i][j].abs().max(b[i][j].abs());
                    }
                }
                v
            };
            // sup over [t_k, t_k+1] ≤ max of the endpoints + slope sup · step/2
            let mut tails = vec![[[0.0; 2]; 2]; n + 1];
            let mut next = node(n);
            let mut acc = next;
            tails[n] = acc;
            for k in (0..n).rev() {
                let cur = node(k);
                for i in 0..2 {
                    for j in 0..2 {
                        let seg = cur[i][j].max(next[i][j]) + 0.5 * step * sups[i + 1][j];
                        acc[i][j] = acc[i][j].max(seg);
                    }
                }
                tails[k] = acc;
                next = cur;
            }
            FactorEnvelope { step, tails }
        })
    }

    /// Frobenius-type upper bound on sup over all pairs of ‖K^(ij)‖.
    pub fn block_bound(&self, i: usize, j: usize) -> f64 {
        let sups = self.factor_sups();
        let tabs = vec![sups; self.d];
        block_from_tables(self.d, i, j, &tabs).frobenius()
    }

    /// Bounding box of `points` inflated by `margin` in d_H (whole torus for Fejér).
    pub fn default_box(&self, points: &[Point], margin: f64) -> Result<DomainBox> {
        if let Repr::Torus { .. } = self.repr {
            return Ok(DomainBox::unit(self.d));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("cannot infer a domain from zero points".into()));
        }
        let zs: Vec<Vec<f64>> = points.iter().map(|p| self.to_normalized(p)).collect();
        let mut zlo = zs[0].clone();
        let mut zhi = zs[0].clone();
        for z in &zs {
            for c in 0..self.d {
                zlo[c] = zlo[c].min(z[c]);
                zhi[c] = zhi[c].max(z[c]);
            }
        }
        for c in 0..self.d {
            zlo[c] -= margin;
            zhi[c] += margin;
        }
        let (mut lo, mut hi) = (vec![f64::INFINITY; self.d], vec![f64::NEG_INFINITY; self.d]);
        for corner in 0..(1usize << self.d) {
            let z: Vec<f64> =
                (0..self.d).map(|c| if corner >> c & 1 == 1 { zhi[c] } else { zlo[c] }).collect();
            let x = self.from_normalized(&z);
            for c in 0..self.d {
                lo[c] = lo[c].min(x[c]);
                hi[c] = hi[c].max(x[c]);
            }
        }
        if let KernelFamily::Laplace { .. } = self.family {
            for v in lo.iter_mut() {
                *v = v.max(0.0);
            }
        }
        DomainBox::new(lo, hi)
    }

    /// Bounds in normalized coordinates of the image of a domain box.
    pub fn normalized_bounds(&self, bx: &DomainBox) -> (Vec<f64>, Vec<f64>) {
        match &self.repr {
            Repr::Torus { sqrt_c, .. } => (vec![0.0; self.d], vec![*sqrt_c; self.d]),
            Repr::Log => (self.to_normalized(&bx.lo), self.to_normalized(&bx.hi)),
            Repr::Affine { .. } => {
                let (mut lo, mut hi) = (vec![f64::INFINITY; self.d], vec![f64::NEG_INFINITY; self.d]);
                for corner in 0..(1usize << self.d) {
                    let x: Vec<f64> = (0..self.d)
                        .map(|c| if corner >> c & 1 == 1 { bx.hi[c] } else { bx.lo[c] })
                        .collect();
                    let z = self.to_normalized(&x);
                    for c in 0..self.d {
                        lo[c] = lo[c].min(z[c]);
                        hi[c] = hi[c].max(z[c]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Whether a point (domain units) lies in the box; the torus is always inside.
    pub fn in_box(&self, bx: &DomainBox, x: &[f64]) -> bool {
        match self.repr {
            Repr::Torus { .. } => true,
            _ => bx.contains(x),
        }
    }
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|r| (0..a.ncols()).map(|c| a[(r, c)] * x[c]).sum()).collect()
}

/// Assembles the order i+j block from per-coordinate factor tables.
pub fn block_from_tables(d: usize, i: usize, j: usize, tabs: &[FactorTable]) -> Tensor {
    let order = i + j;
    let mut t = Tensor::zeros(d, order);
    for f in 0..t.len() {
        let idx = t.multi_index(f);
        let mut n = [0usize; 8];
        let mut m = [0usize; 8];
        for &a in &idx[..i] {
            n[a] += 1;
        }
        for &a in &idx[i..] {
            m[a] += 1;
        }
        let v: f64 = (0..d).map(|c| tabs[c][n[c]][m[c]]).product();
        t.data_mut()[f] = Complex64::new(v, 0.0);
    }
    t
}

/// A metric-normalized kernel derivative block K^(ij)(x,x′).
#[derive(Clone, Debug, PartialEq)]
pub struct DerivBlock {
    pub i: usize,
    pub j: usize,
    pub value: Tensor,
}

impl DerivBlock {
    pub fn norm(&self) -> f64 {
        self.value.op_norm()
    }
}

pub fn kernel_eval(kernel: &LimitKernel, x: &Point, xp: &Point) -> Result<f64> {
    kernel.eval(x, xp)
}

pub fn kernel_deriv(kernel: &LimitKernel, i: usize, j: usize, x: &Point, xp: &Point) -> Result<DerivBlock> {
    kernel.deriv(i, j, x, xp)
}

pub fn metric_tensor(kernel: &LimitKernel, x: &Point) -> Result<DMatrix<f64>> {
    kernel.metric_tensor(x)
}

pub fn fisher_distance(kernel: &LimitKernel, x: &Point, xp: &Point) -> Result<f64> {
    kernel.fisher_distance(x, xp)
}

/// Applies H^{-1/2} to every slot of a raw derivative array.
pub fn normalize_derivative(h: &DMatrix<f64>, raw: &Tensor) -> Result<Tensor> {
    if raw.order() > 3 {
        return Err(Error::InvalidInput(format!("derivative order {} > 3", raw.order())));
    }
    let (_, inv_root) = sym_sqrt_pair(h)?;
    if inv_root.nrows() != raw.dim() && raw.order() > 0 {
        return Err(Error::InvalidInput("metric and array dimensions differ".into()));
    }
    Ok(raw.apply_all_slots(&inv_root))
}

/// Per-entry coordinate counts; re-exported for feature derivative assembly.
pub fn slot_counts(d: usize, r: usize) -> Vec<Vec<usize>> {
    count_table(d, r)
}
