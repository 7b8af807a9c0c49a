//! Numerical verification of kernel admissibility and certified separations.
//!
//! All three kernels are translation invariant in normalized coordinates, so
//! every pairwise condition is scanned over offsets δ = z(x) − z(x′) only.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{block_from_tables, FactorTable, KernelFamily, LimitKernel};
use crate::linalg::{max_eigenvalue_sym, spectral_norm};

/// Blocks (i, j) with i, j ≤ 2 and i + j ≤ 3.
pub const BLOCKS: [(usize, usize); 8] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1), (1, 2)];

const TOL: f64 = 1e-12;

fn block_index(i: usize, j: usize) -> usize {
    BLOCKS.iter().position(|&b| b == (i, j)).expect("block in range")
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityParams {
    pub r_near: f64,
    pub delta: f64,
    pub eps0: f64,
    pub eps2: f64,
    pub b: BTreeMap<(usize, usize), f64>,
    pub s_max: usize,
    pub h: f64,
    pub c_h: f64,
}

impl AdmissibilityParams {
    pub fn new(
        r_near: f64,
        delta: f64,
        eps0: f64,
        eps2: f64,
        b: BTreeMap<(usize, usize), f64>,
        s_max: usize,
        c_h: f64,
    ) -> Result<Self> {
        for key in BLOCKS.iter().chain(std::iter::once(&(2, 2))) {
            match b.get(key) {
                Some(v) if v.is_finite() && *v > 0.0 => {}
                _ => return Err(Error::InvalidInput(format!("missing or nonpositive B{}{}", key.0, key.1))),
            }
        }
        if s_max == 0 {
            return Err(Error::InvalidInput("s_max must be at least 1".into()));
        }
        let h = Self::compute_h(eps0, eps2, b[&(1, 0)], b[&(1, 2)]);
        Ok(AdmissibilityParams { r_near, delta, eps0, eps2, b, s_max, h, c_h })
    }

    pub fn compute_h(eps0: f64, eps2: f64, b10: f64, b12: f64) -> f64 {
        (eps0 / (32.0 * b10 + 32.0))
            .min(eps2 / (32.0 * b12 + 32.0))
            .min(5.0 * eps2 / (16.0 * b12 + 24.0))
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.b.get(&(i, j)).copied().unwrap_or(f64::INFINITY)
    }

    /// Bound factor c on ‖Im K^(02)‖ in the near region.
    pub fn c_im(&self) -> f64 {
        let t = self.eps2 * self.r_near * self.r_near;
        0.5 * ((2.0 - t) / t).sqrt()
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        AdmissibilityParams { delta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.r_near > 0.0 && self.r_near < self.delta / 4.0) {
            return bad(format!("need 0 < r_near < Delta/4, got r_near={} Delta={}", self.r_near, self.delta));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return bad(format!("eps0 must lie in (0,1), got {}", self.eps0));
        }
        if !(self.eps2 > 0.0 && self.eps2 < self.r_near.powi(-2)) {
            return bad(format!("eps2 must lie in (0, r_near^-2), got {}", self.eps2));
        }
        if self.h != Self::compute_h(self.eps0, self.eps2, self.b(1, 0), self.b(1, 2)) {
            return bad("stored h does not match its formula".into());
        }
        if !(self.c_h >= 0.0) {
            return bad("C_H must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSpec {
    /// Spacing inside the cube |δ|_∞ ≤ 1.5 r_near.
    pub near_spacing: f64,
    /// Approximate number of grid points outside it.
    pub far_budget: usize,
    /// Grid maxima used as starts for local maximisation, per condition.
    pub local_starts: usize,
    /// Scan radius beyond Δ/4 for non-periodic kernels.
    pub tail: Option<f64>,
}

impl ScanSpec {
    pub fn default_for(kernel: &LimitKernel, r_near: f64) -> Self {
        let far_budget = match kernel.dim() {
            1 => 200_000,
            2 => 60_000,
            _ => 40_000,
        };
        ScanSpec { near_spacing: r_near / 50.0, far_budget, local_starts: 5, tail: None }
    }
}

fn default_tail(kernel: &LimitKernel) -> f64 {
    match kernel.family() {
        KernelFamily::Gaussian { .. } => 12.0,
        _ => 80.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Global,
    NearOrSeparated,
    Near,
    Far,
    Separated,
    Diagonal,
    NearPunctured,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Global => "all pairs",
            Regime::NearOrSeparated => "d<=r_near or d>Delta/4",
            Regime::Near => "d<=r_near",
            Regime::Far => "d>=r_near",
            Regime::Separated => "d>=Delta/4",
            Regime::Diagonal => "x=x'",
            Regime::NearPunctured => "0<d<=r_near",
        }
    }

    fn contains(&self, rho: f64, r: f64, delta: f64) -> bool {
        match self {
            Regime::Global => true,
            Regime::NearOrSeparated => rho <= r * (1.0 + TOL) || rho > delta / 4.0,
            Regime::Near => rho <= r * (1.0 + TOL),
            Regime::Far => rho >= r * (1.0 - TOL),
            Regime::Separated => rho >= delta / 4.0 * (1.0 - TOL),
            Regime::Diagonal => rho == 0.0,
            Regime::NearPunctured => rho > 0.0 && rho <= r * (1.0 + TOL),
        }
    }

    fn depends_on_delta(&self) -> bool {
        matches!(self, Regime::NearOrSeparated | Regime::Separated)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quantity {
    Block(usize),
    K22,
    ReCurvature,
    ImNorm,
    Abs,
    Metric,
}

#[derive(Clone, Debug)]
struct Condition {
    id: String,
    regime: Regime,
    quantity: Quantity,
    bound: f64,
}

fn conditions(p: &AdmissibilityParams) -> Vec<Condition> {
    let c = |id: String, regime, quantity, bound| Condition { id, regime, quantity, bound };
    let mut out = vec![
        c("uniform_00".into(), Regime::Global, Quantity::Block(block_index(0, 0)), p.b(0, 0)),
        c("uniform_10".into(), Regime::Global, Quantity::Block(block_index(1, 0)), p.b(1, 0)),
        c("uniform_02".into(), Regime::NearOrSeparated, Quantity::Block(block_index(0, 2)), p.b(0, 2)),
        c("uniform_11".into(), Regime::NearOrSeparated, Quantity::Block(block_index(1, 1)), p.b(1, 1)),
        c("uniform_12".into(), Regime::NearOrSeparated, Quantity::Block(block_index(1, 2)), p.b(1, 2)),
        c("uniform_22".into(), Regime::Diagonal, Quantity::K22, p.b(2, 2)),
        c("near_curvature".into(), Regime::Near, Quantity::ReCurvature, -p.eps2),
        c("near_imaginary".into(), Regime::Near, Quantity::ImNorm, p.c_im() * p.eps2),
        c("far_value".into(), Regime::Far, Quantity::Abs, 1.0 - p.eps0),
    ];
    for (k, (i, j)) in BLOCKS.iter().enumerate() {
        out.push(c(format!("separation_{i}{j}"), Regime::Separated, Quantity::Block(k), p.h / p.s_max as f64));
    }
    out.push(c("metric".into(), Regime::NearPunctured, Quantity::Metric, p.c_h));
    out
}

#[derive(Clone, Debug)]
struct Sample {
    delta: Vec<f64>,
    rho: f64,
    spacing: f64,
    norms: [f64; 8],
    k22: f64,
    re_max: f64,
    im_norm: f64,
    abs_k: f64,
    metric: f64,
}

impl Sample {
    fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Block(k) => self.norms[k],
            Quantity::K22 => self.k22,
            Quantity::ReCurvature => self.re_max,
            Quantity::ImNorm => self.im_norm,
            Quantity::Abs => self.abs_k,
            Quantity::Metric => self.metric,
        }
    }
}

struct Evaluator<'a> {
    kernel: &'a LimitKernel,
    r_near: f64,
    /// Below these Frobenius norms the (larger) Frobenius value is kept
    /// instead of the operator norm; it cannot change any decision.
    cutoffs: [f64; 8],
    /// Reference for the metric condition, chosen so z0 + δ stays in the domain.
    z_metric: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(kernel: &'a LimitKernel, r_near: f64, cutoffs: [f64; 8]) -> Self {
        let base = kernel.to_normalized(&vec![0.0; kernel.dim()]);
        let z_metric = base.iter().map(|b| b + 2.0 * r_near).collect();
        Evaluator { kernel, r_near, cutoffs, z_metric }
    }

    fn wrap(&self, delta: &[f64]) -> Vec<f64> {
        self.kernel.coord_diff(delta, &vec![0.0; delta.len()])
    }

    fn sample(&self, delta: &[f64], spacing: f64) -> Sample {
        let d = self.kernel.dim();
        let delta = self.wrap(delta);
        let rho = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tabs: Vec<FactorTable> = delta.iter().map(|&t| self.kernel.factor_table(t)).collect();
        let mut norms = [0.0; 8];
        for (k, &(i, j)) in BLOCKS.iter().enumerate() {
            let b = block_from_tables(d, i, j, &tabs);
            let fro = b.frobenius();
            norms[k] = if fro < self.cutoffs[k] { fro } else { b.op_norm() };
        }
        let k02 = block_from_tables(d, 0, 2, &tabs);
        let re = DMatrix::from_fn(d, d, |a, c| k02.get(&[a, c]).re);
        let im = DMatrix::from_fn(d, d, |a, c| k02.get(&[a, c]).im);
        let k22 = if rho == 0.0 { block_from_tables(d, 2, 2, &tabs).op_norm() } else { 0.0 };
        let metric = if rho > 0.0 && rho <= self.r_near * (1.0 + TOL) {
            let x0 = self.kernel.from_normalized(&self.z_metric);
            let z: Vec<f64> = self.z_metric.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let x = self.kernel.from_normalized(&z);
            self.kernel.metric_deviation(&x0, &x) / rho
        } else {
            0.0
        };
        Sample {
            abs_k: block_from_tables(d, 0, 0, &tabs).value().norm(),
            delta,
            rho,
            spacing,
            norms,
            k22,
            re_max: max_eigenvalue_sym(&re),
            im_norm: spectral_norm(&im),
            metric,
        }
    }
}

/// Grid over offsets: a fine cube around 0 plus a budgeted cube of half-width `radius`.
fn grid_offsets(kernel: &LimitKernel, r_near: f64, radius: f64, spec: &ScanSpec) -> Vec<(Vec<f64>, f64)> {
    let d = kernel.dim();
    let hn = spec.near_spacing;
    let near_half = 1.5 * r_near;
    let mut out = Vec::new();
    let n = (near_half / hn).floor() as i64;
    cube_points(d, n, hn, |p| out.push((p, hn)));
    let per_dim = (spec.far_budget as f64).powf(1.0 / d as f64).max(2.0);
    let hf = (2.0 * radius / per_dim).max(hn);
    let nf = (radius / hf).ceil() as i64;
    cube_points(d, nf, hf, |p| {
        if p.iter().any(|v| v.abs() > near_half) {
            out.push((p, hf));
        }
    });
    out
}

fn cube_points(d: usize, n: i64, h: f64, mut f: impl FnMut(Vec<f64>)) {
    let side = (2 * n + 1) as usize;
    let total = side.pow(d as u32);
    for flat in 0..total {
        let mut rest = flat;
        let p = (0..d)
            .map(|_| {
                let i = (rest % side) as i64 - n;
                rest /= side;
                i as f64 * h
            })
            .collect();
        f(p);
    }
}

/// Points on the sphere of radius `rho` (d ≤ 2), spaced about `h` apart.
fn shell_points(d: usize, rho: f64, h: f64) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![rho], vec![-rho]],
        2 => {
            let n = ((2.0 * std::f64::consts::PI * rho / h).ceil() as usize).clamp(8, 4000);
            (0..n)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    vec![rho * t.cos(), rho * t.sin()]
                })
                .collect()
        }
        _ => vec![],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub id: String,
    pub regime: Regime,
    pub measured: f64,
    pub bound: f64,
    /// bound − measured; nonnegative (up to 1e-12) means the condition holds.
    pub margin: f64,
    pub pass: bool,
    pub worst_offset: Option<Vec<f64>>,
    pub worst_pair: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub params: AdmissibilityParams,
    pub params_valid: bool,
    pub params_message: Option<String>,
    pub conditions: Vec<ConditionResult>,
    pub pass: bool,
    pub n_points: usize,
}

impl AdmissibilityReport {
    pub fn condition(&self, id: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.id == id)
    }

    pub fn failures(&self) -> Vec<&ConditionResult> {
        self.conditions.iter().filter(|c| !c.pass).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["condition", "regime", "worst_x", "worst_x_prime", "measured", "bound", "margin", "pass"])?;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        for c in &self.conditions {
            let (a, b) = c.worst_pair.as_ref().map_or((String::new(), String::new()), |(a, b)| (fmt(a), fmt(b)));
            wr.write_record([
                c.id.clone(),
                c.regime.name().to_string(),
                a,
                b,
                format!("{:.16e}", c.measured),
                format!("{:.16e}", c.bound),
                format!("{:.16e}", c.margin),
                c.pass.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn pair_for(kernel: &LimitKernel, delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let base = kernel.to_normalized(&vec![0.0; kernel.dim()]);
    let zp: Vec<f64> = base.iter().zip(delta).map(|(b, t)| b + (-t).max(0.0)).collect();
    let z: Vec<f64> = zp.iter().zip(delta).map(|(a, t)| a + t).collect();
    (kernel.from_normalized(&z), kernel.from_normalized(&zp))
}

fn scan_radius(kernel: &LimitKernel, r_near: f64, delta: f64, spec: &ScanSpec) -> f64 {
    match kernel.period() {
        Some(p) => 0.5 * p,
        None => (delta / 4.0).max(1.5 * r_near) + spec.tail.unwrap_or_else(|| default_tail(kernel)),
    }
}

fn cutoffs_for(p: &AdmissibilityParams) -> [f64; 8] {
    let mut c = [f64::INFINITY; 8];
    for cond in conditions(p) {
        if let Quantity::Block(k) = cond.quantity {
            c[k] = c[k].min(0.5 * cond.bound);
        }
    }
    c
}

fn scan(ev: &Evaluator, offsets: &[(Vec<f64>, f64)]) -> Vec<Sample> {
    offsets.par_iter().map(|(p, h)| ev.sample(p, *h)).collect()
}

fn assess(
    kernel: &LimitKernel,
    params: &AdmissibilityParams,
    ev: &Evaluator,
    samples: &[Sample],
    spec: &ScanSpec,
    only_delta: bool,
) -> AdmissibilityReport {
    let d = kernel.dim();
    let r = params.r_near;
    let dl = params.delta;
    // boundary shells of the regimes
    let mut extra: Vec<Sample> = Vec::new();
    let mut radii = vec![dl / 4.0, dl / 4.0 * (1.0 + 1e-9)];
    if !only_delta {
        radii.push(r);
    }
    let rmax = samples.iter().map(|s| s.rho).fold(0.0, f64::max);
    for rho in radii {
        if rho > 0.0 && rho <= rmax {
            for p in shell_points(d, rho, spec.near_spacing.max(rho * 1e-3)) {
                extra.push(ev.sample(&p, spec.near_spacing));
            }
        }
    }
    let all: Vec<&Sample> = samples.iter().chain(extra.iter()).collect();
    let mut results = Vec::new();
    for cond in conditions(params) {
        if only_delta && !cond.regime.depends_on_delta() {
            continue;
        }
        let inside = |s: &Sample| cond.regime.contains(s.rho, r, dl);
        let mut top: Vec<(f64, &Sample)> = Vec::new();
        for s in all.iter().filter(|s| inside(s)) {
            let v = s.get(cond.quantity);
            if top.len() < spec.local_starts.max(1) || v > top.last().unwrap().0 {
                top.push((v, s));
                top.sort_by(|a, b| b.0.total_cmp(&a.0));
                top.truncate(spec.local_starts.max(1));
            }
        }
        let mut best: Option<(f64, Vec<f64>)> = top.first().map(|(v, s)| (*v, s.delta.clone()));
        if cond.regime != Regime::Diagonal {
            for (v0, s0) in top.iter().take(spec.local_starts) {
                let (v, p) = local_max(ev, &cond, params, &s0.delta, *v0, s0.spacing);
                if best.as_ref().is_none_or(|b| v > b.0) {
                    best = Some((v, p));
                }
            }
        }
        let (measured, worst) = match best {
            Some((v, p)) => (v, Some(p)),
            None => (f64::NEG_INFINITY, None),
        };
        let margin = cond.bound - measured;
        results.push(ConditionResult {
            pass: margin >= -TOL * cond.bound.abs().max(1.0),
            id: cond.id.clone(),
            regime: cond.regime,
            measured,
            bound: cond.bound,
            margin,
            worst_pair: worst.as_ref().map(|p| pair_for(kernel, p)),
            worst_offset: worst,
        });
    }
    let valid = params.validate();
    let pass = valid.is_ok() && results.iter().all(|c| c.pass);
    AdmissibilityReport {
        params: params.clone(),
        params_valid: valid.is_ok(),
        params_message: valid.err().map(|e| e.to_string()),
        conditions: results,
        pass,
        n_points: all.len(),
    }
}

/// Compass search for a larger value of one condition's quantity, inside its regime.
fn local_max(
    ev: &Evaluator,
    cond: &Condition,
    params: &AdmissibilityParams,
    start: &[f64],
    v0: f64,
    h0: f64,
) -> (f64, Vec<f64>) {
    let d = start.len();
    let mut p = start.to_vec();
    let mut v = v0;
    let mut h = h0;
    let mut iters = 0;
    while h > h0 / 512.0 && iters < 400 {
        iters += 1;
        let mut moved = false;
        for c in 0..d {
            for sgn in [1.0, -1.0] {
                let mut q = p.clone();
                q[c] += sgn * h;
                let s = ev.sample(&q, h);
                if !cond.regime.contains(s.rho, params.r_near, params.delta) {
                    continue;
                }
                let w = s.get(cond.quantity);
                if w > v {
                    v = w;
                    p = s.delta;
                    moved = true;
                }
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    (v, p)
}

/// Evaluates every admissibility condition on a grid of offsets.
pub fn verify_admissible(kernel: &LimitKernel, params: &AdmissibilityParams, spec: &ScanSpec) -> Result<AdmissibilityReport> {
    if !(spec.near_spacing > 0.0) || !(params.r_near > 0.0) {
        return Err(Error::InvalidInput("near spacing and r_near must be positive".into()));
    }
    let radius = scan_radius(kernel, params.r_near, params.delta.max(0.0), spec);
    let ev = Evaluator::new(kernel, params.r_near, cutoffs_for(params));
    let offsets = grid_offsets(kernel, params.r_near, radius, spec);
    let samples = scan(&ev, &offsets);
    Ok(assess(kernel, params, &ev, &samples, spec, false))
}

#[derive(Clone, Debug)]
pub struct CertifiedSeparation {
    pub delta: f64,
    /// Full verification at `delta`.
    pub report: AdmissibilityReport,
    /// Whether the Δ-dependent conditions hold at `delta`.
    pub separation_pass: bool,
    pub evaluations: usize,
}

fn delta_ok(rep: &AdmissibilityReport) -> bool {
    rep.conditions.iter().all(|c| c.pass)
}

/// Smallest Δ (to 1%) for which every Δ-dependent condition holds, with the
/// other parameters fixed by `template`.
pub fn minimal_certified_separation(
    kernel: &LimitKernel,
    template: &AdmissibilityParams,
    spec: &ScanSpec,
) -> Result<CertifiedSeparation> {
    let r = template.r_near;
    let lo_bracket = 4.0 * r * (1.0 + 1e-9);
    let hi_bracket = 1e6 * r;
    let mut reach = match kernel.family() {
        KernelFamily::Laplace { .. } => laplace_separation(kernel.dim(), template.s_max, template.h) / 4.0,
        _ => 28.0,
    };
    let cut = cutoffs_for(&template.with_delta(lo_bracket));
    let ev = Evaluator::new(kernel, r, cut);
    let mut evaluations = 0;
    loop {
        let radius = scan_radius(kernel, r, 4.0 * reach, spec);
        let samples = scan(&ev, &grid_offsets(kernel, r, radius, spec));
        // outermost offset violating a Δ-dependent bound
        let sep = template.h / template.s_max as f64;
        let violating = |s: &Sample| {
            s.norms.iter().any(|v| *v > sep)
                || s.norms[block_index(0, 2)] > template.b(0, 2)
                || s.norms[block_index(1, 1)] > template.b(1, 1)
                || s.norms[block_index(1, 2)] > template.b(1, 2)
        };
        let rho_v = samples.iter().filter(|s| violating(s)).map(|s| s.rho).fold(0.0, f64::max);
        let periodic = kernel.period().is_some();
        if !periodic && rho_v > radius - 0.5 * spec.tail.unwrap_or_else(|| default_tail(kernel)) {
            reach *= 2.0;
            if 4.0 * reach > hi_bracket {
                return Err(Error::Separation(format!("no certified separation below {hi_bracket}")));
            }
            continue;
        }
        let test = |dl: f64, evaluations: &mut usize| {
            *evaluations += 1;
            delta_ok(&assess(kernel, &template.with_delta(dl), &ev, &samples, spec, true))
        };
        let mut hi = (4.0 * rho_v * (1.0 + 1e-9)).max(lo_bracket);
        let mut grow = 0;
        while !test(hi, &mut evaluations) {
            hi *= 1.05;
            grow += 1;
            if hi > hi_bracket || grow > 200 || (periodic && hi / 4.0 > radius * (kernel.dim() as f64).sqrt()) {
                return Err(Error::Separation(format!(
                    "separation conditions fail for every Delta up to {hi:.6e}"
                )));
            }
        }
        let mut lo = (hi / 1.2).max(lo_bracket);
        if lo < hi {
            while lo > lo_bracket && test(lo, &mut evaluations) {
                hi = lo;
                lo = (lo / 1.2).max(lo_bracket);
            }
            if lo == lo_bracket && lo < hi && test(lo, &mut evaluations) {
                hi = lo;
            }
            while hi / lo > 1.01 {
                let mid = (hi * lo).sqrt();
                if test(mid, &mut evaluations) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        let report = verify_admissible(kernel, &template.with_delta(hi), spec)?;
        let separation_pass = report
            .conditions
            .iter()
            .filter(|c| c.regime.depends_on_delta())
            .all(|c| c.pass);
        return Ok(CertifiedSeparation { delta: hi, report, separation_pass, evaluations: evaluations + 1 });
    }
}

/// 2d·log 2 + 2·log(52·d^{3/2}·s_max/h).
pub fn laplace_separation(d: usize, s_max: usize, h: f64) -> f64 {
    let d = d as f64;
    2.0 * d * 2f64.ln() + 2.0 * (52.0 * d.powf(1.5) * s_max as f64 / h).ln()
}

/// Explicit uniform bounds for the Gaussian kernel.
pub fn gaussian_bounds(d: usize) -> BTreeMap<(usize, usize), f64> {
    let e = std::f64::consts::E;
    let b1 = (-0.5f64).exp();
    let b2 = 2.0 / e + 1.0;
    let b3 = 3.0 / e.sqrt() + (3.0 / e).powf(1.5);
    let mut b = BTreeMap::new();
    b.insert((0, 0), 1.0);
    b.insert((1, 0), b1);
    b.insert((0, 1), b1);
    b.insert((2, 0), b2);
    b.insert((1, 1), b2);
    b.insert((0, 2), b2);
    b.insert((2, 1), b3);
    b.insert((1, 2), b3);
    b.insert((2, 2), ((d + 1) as f64).max(3.0));
    b
}

/// Grid suprema of ‖K^(ij)‖ around the diagonal, inflated by 1%.
pub fn measure_bounds(kernel: &LimitKernel, r_near: f64, spec: &ScanSpec) -> BTreeMap<(usize, usize), f64> {
    let lobe = match kernel.family() {
        KernelFamily::Fejer { fc } => kernel.period().unwrap() / (*fc as f64 / 2.0 + 1.0),
        _ => 1.0,
    };
    let radius = match kernel.period() {
        Some(p) => (0.5 * p).min(4.0 * lobe),
        None => 8.0,
    };
    let ev = Evaluator::new(kernel, r_near, [0.0; 8]);
    let sub = ScanSpec { far_budget: spec.far_budget.min(20_000), ..spec.clone() };
    let samples = scan(&ev, &grid_offsets(kernel, r_near, radius, &sub));
    let mut b = BTreeMap::new();
    for (k, &(i, j)) in BLOCKS.iter().enumerate() {
        let cond = Condition { id: String::new(), regime: Regime::Global, quantity: Quantity::Block(k), bound: 0.0 };
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.sort_by(|&a, &c| samples[c].norms[k].total_cmp(&samples[a].norms[k]));
        let dummy = AdmissibilityParams {
            r_near,
            delta: 0.0,
            eps0: 0.5,
            eps2: 0.5,
            b: BTreeMap::new(),
            s_max: 1,
            h: 0.0,
            c_h: 0.0,
        };
        let mut best = 0.0f64;
        for &a in idx.iter().take(spec.local_starts.max(1)) {
            let s = &samples[a];
            best = best.max(local_max(&ev, &cond, &dummy, &s.delta, s.norms[k], s.spacing).0);
        }
        b.insert((i, j), best * 1.01);
    }
    let z = ev.sample(&vec![0.0; kernel.dim()], spec.near_spacing);
    b.insert((2, 2), z.k22 * 1.01);
    b
}

/// Published neighbourhood radius r_near for the kernel's family.
pub fn paper_r_near(kernel: &LimitKernel) -> f64 {
    match kernel.family() {
        KernelFamily::Fejer { .. } => 1.0 / (8.0 * 2f64.sqrt()),
        KernelFamily::Gaussian { .. } => 1.0 / 2f64.sqrt(),
        KernelFamily::Laplace { .. } => 0.2,
    }
}

/// Constants published for each family, with Δ left at 0 (not yet certified).
pub fn paper_template(kernel: &LimitKernel, s_max: usize) -> Result<AdmissibilityParams> {
    let d = kernel.dim();
    match kernel.family() {
        KernelFamily::Fejer { fc } => {
            if *fc < 128 {
                return Err(Error::UnsupportedConstants(format!(
                    "Fejer constants are tabulated for f_c >= 128, got {fc}"
                )));
            }
            let r = paper_r_near(kernel);
            let b = measure_bounds(kernel, r, &ScanSpec::default_for(kernel, r));
            AdmissibilityParams::new(r, 0.0, 0.00097, 0.941, b, s_max, 0.0)
        }
        KernelFamily::Gaussian { .. } => {
            let r = paper_r_near(kernel);
            let q = (-0.25f64).exp();
            AdmissibilityParams::new(r, 0.0, 1.0 - q, q / 2.0, gaussian_bounds(d), s_max, 0.0)
        }
        KernelFamily::Laplace { .. } => {
            let r = paper_r_near(kernel);
            let b = measure_bounds(kernel, r, &ScanSpec::default_for(kernel, r));
            AdmissibilityParams::new(r, 0.0, 0.005, 1.52, b, s_max, 1.25)
        }
    }
}

/// Published constants with Δ instantiated by certified bisection.
pub fn paper_constants(kernel: &LimitKernel, s_max: usize) -> Result<AdmissibilityParams> {
    let t = paper_template(kernel, s_max)?;
    let sep = minimal_certified_separation(kernel, &t, &ScanSpec::default_for(kernel, t.r_near))?;
    Ok(t.with_delta(sep.delta))
}
