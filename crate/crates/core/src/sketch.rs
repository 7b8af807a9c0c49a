//! Compressive learning of Gaussian mixtures with a shared known covariance.
//!
//! The stored sketch holds the raw generalized moments
//! y_k = (1/√m)(1/n) Σ_j e^{i⟨ω_k, z_j⟩}. The GMM feature constant
//! C = (1+2c)^{d/4} is applied in `learn_gmm`, so that C·y ≈ Φμ for μ the
//! mixture weights placed at the means.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::assignment::min_cost_matching;
use crate::error::{Error, Result};
use crate::features::{FeatureFamily, FrequencySet, MeasurementOperator};
use crate::geometry::Point;
use crate::linalg::sym_sqrt_pair;
use crate::rng::{substream, DATA};
use crate::solver::{solve_blasso, SolveResult, SolverConfig};

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub sigma: DMatrix<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Point>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if sigma.ncols() != d || d == 0 {
            return Err(Error::InvalidInput("covariance must be a nonempty square matrix".into()));
        }
        sym_sqrt_pair(&sigma)?;
        if sigma.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidInput("covariance must be positive definite".into()));
        }
        if weights.len() != means.len() {
            return Err(Error::InvalidInput(format!("{} weights for {} means", weights.len(), means.len())));
        }
        if means.iter().any(|m| m.dim() != d) {
            return Err(Error::InvalidInput("mean dimension differs from covariance".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be nonnegative".into()));
        }
        if !weights.is_empty() && (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("weights must sum to 1".into()));
        }
        Ok(GmmModel { weights, means, sigma })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        writeln!(w, "dim {d}")?;
        writeln!(w, "components {}", self.len())?;
        for (wt, m) in self.weights.iter().zip(&self.means) {
            let coords: Vec<String> = m.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "component {wt:.16e} {}", coords.join(" "))?;
        }
        for r in 0..d {
            let row: Vec<String> = (0..d).map(|c| format!("{:.16e}", self.sigma[(r, c)])).collect();
            writeln!(w, "sigma {}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("model file: {m}"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s}")));
        let mut d = None;
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("dim") => d = Some(it.next().ok_or_else(|| bad("missing dim"))?.parse::<usize>().map_err(|_| bad("dim"))?),
                Some("components") | None => {}
                Some("component") => {
                    weights.push(num(it.next().ok_or_else(|| bad("missing weight"))?)?);
                    means.push(Point::new(it.map(num).collect::<Result<Vec<f64>>>()?)?);
                }
                Some("sigma") => rows.push(it.map(num).collect::<Result<Vec<f64>>>()?),
                Some(other) => return Err(bad(&format!("unknown key {other}"))),
            }
        }
        let d = d.ok_or_else(|| bad("missing dim"))?;
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(bad("sigma must have dim rows of dim entries"));
        }
        GmmModel::new(weights, means, DMatrix::from_fn(d, d, |r, c| rows[r][c]))
    }
}

/// n i.i.d. draws: component by weight, then N(mean, Σ).
pub fn sample_gmm(model: &GmmModel, n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    if model.is_empty() {
        return Err(Error::InvalidInput("model has no components".into()));
    }
    let d = model.dim();
    let chol = model.sigma.clone().cholesky().ok_or_else(|| Error::InvalidInput("covariance not SPD".into()))?.l();
    let mut cdf = Vec::with_capacity(model.len());
    let mut acc = 0.0;
    for w in &model.weights {
        acc += w;
        cdf.push(acc);
    }
    let chunks = n.div_ceil(CHUNK);
    let out: Vec<Vec<Point>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, DATA, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * acc;
                    let k = cdf.partition_point(|&v| v <= u).min(model.len() - 1);
                    let g = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                    let x = &chol * g;
                    Point::new((0..d).map(|i| model.means[k][i] + x[i]).collect()).expect("finite draw")
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sketch {
    pub values: Vec<Complex64>,
    pub freqs: FrequencySet,
    pub n: usize,
}

impl Sketch {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.freqs.omegas.first().map_or(0, |o| o.len());
        let mut header: Vec<String> = vec!["index".into(), "re".into(), "im".into()];
        header.extend((1..=d).map(|c| format!("omega_{c}")));
        wr.write_record(&header)?;
        for (k, (v, o)) in self.values.iter().zip(&self.freqs.omegas).enumerate() {
            let mut row = vec![k.to_string(), format!("{:.16e}", v.re), format!("{:.16e}", v.im)];
            row.extend(o.iter().map(|x| format!("{x:.16e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn moments(points: &[Point], omega: &[f64]) -> Complex64 {
    points
        .iter()
        .map(|z| Complex64::from_polar(1.0, z.iter().zip(omega).map(|(a, b)| a * b).sum()))
        .sum()
}

/// y_k = (1/√m)(1/n) Σ_j e^{i⟨ω_k, z_j⟩}.
pub fn compute_sketch(data: &[Point], freqs: &FrequencySet) -> Result<Sketch> {
    if data.is_empty() || freqs.is_empty() {
        return Err(Error::InvalidInput("sketch needs data and frequencies".into()));
    }
    let d = data[0].dim();
    if data.iter().any(|z| z.dim() != d) || freqs.omegas.iter().any(|o| o.len() != d) {
        return Err(Error::InvalidInput("dimension mismatch between data and frequencies".into()));
    }
    let n = data.len();
    let scale = 1.0 / ((freqs.len() as f64).sqrt() * n as f64);
    let values = freqs
        .omegas
        .par_iter()
        .map(|o| data.chunks(CHUNK).map(|c| moments(c, o)).sum::<Complex64>() * scale)
        .collect();
    Ok(Sketch { values, freqs: freqs.clone(), n })
}

/// n → ∞ sketch: (1/√m) Σ_i w_i e^{i⟨ω,x_i⟩} e^{−½ ωᵀΣω}.
pub fn exact_sketch(model: &GmmModel, freqs: &FrequencySet) -> Vec<Complex64> {
    let d = model.dim();
    let s = 1.0 / (freqs.len() as f64).sqrt();
    freqs
        .omegas
        .iter()
        .map(|o| {
            let q: f64 = (0..d).map(|r| (0..d).map(|c| o[r] * model.sigma[(r, c)] * o[c]).sum::<f64>()).sum();
            let cf: Complex64 = model
                .weights
                .iter()
                .zip(&model.means)
                .map(|(w, m)| Complex64::from_polar(*w, m.iter().zip(o).map(|(a, b)| a * b).sum()))
                .sum();
            cf * ((-0.5 * q).exp() * s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub solve: SolveResult,
    /// Indices of atoms whose phase exceeded the tolerance (excluded).
    pub phase_flagged: Vec<usize>,
    /// No usable atoms were recovered.
    pub empty: bool,
}

pub const PHASE_TOLERANCE: f64 = 0.1;

/// Runs the BLASSO on the sketch with GMM features and projects the result to a mixture.
pub fn learn_gmm(sketch: &Sketch, sigma: &DMatrix<f64>, c: Option<f64>, config: &SolverConfig) -> Result<GmmFit> {
    let family = FeatureFamily::gmm_sketch(sigma.clone(), c)?;
    let cst = family.gmm_constant();
    let op = MeasurementOperator::new(family, sketch.freqs.clone())?;
    let y: Vec<Complex64> = sketch.values.iter().map(|v| v * cst).collect();
    let solve = solve_blasso(&op, &y, config)?;
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut phase_flagged = Vec::new();
    for (i, (a, x)) in solve.measure.amplitudes.iter().zip(&solve.measure.positions).enumerate() {
        if a.arg().abs() <= PHASE_TOLERANCE {
            weights.push(a.norm());
            means.push(x.clone());
        } else {
            phase_flagged.push(i);
        }
    }
    let total: f64 = weights.iter().sum();
    let empty = weights.is_empty() || total <= 0.0;
    let model = if empty {
        GmmModel { weights: vec![], means: vec![], sigma: sigma.clone() }
    } else {
        let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        GmmModel::new(w, means, sigma.clone())?
    };
    Ok(GmmFit { model, solve, phase_flagged, empty })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanMatching {
    /// (estimated index, true index, ‖μ̂ − μ‖_{Σ⁻¹}).
    pub pairs: Vec<(usize, usize, f64)>,
    pub max_error: f64,
    pub count_match: bool,
}

/// Minimum-cost matching of means in the Mahalanobis norm of Σ.
pub fn match_means(estimate: &GmmModel, truth: &GmmModel) -> Result<MeanMatching> {
    let (_, inv_root) = sym_sqrt_pair(&truth.sigma)?;
    let dist = |a: &Point, b: &Point| {
        let v = DVector::from_iterator(a.dim(), a.iter().zip(b.iter()).map(|(x, y)| x - y));
        (&inv_root * v).norm()
    };
    let cost: Vec<Vec<f64>> =
        estimate.means.iter().map(|a| truth.means.iter().map(|b| dist(a, b)).collect()).collect();
    let pairs: Vec<(usize, usize, f64)> =
        min_cost_matching(&cost)?.into_iter().map(|(i, j)| (i, j, cost[i][j])).collect();
    let max_error = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    Ok(MeanMatching { pairs, max_error, count_match: estimate.len() == truth.len() })
}

pub fn write_dataset_csv<W: Write>(data: &[Point], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let d = data.first().map_or(0, |p| p.dim());
    wr.write_record((1..=d).map(|c| format!("x_{c}")))?;
    for p in data {
        wr.write_record(p.iter().map(|v| format!("{v:.16e}")))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: std::io::Read>(r: R) -> Result<Vec<Point>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        out.push(Point::new(v.map_err(|e| Error::InvalidInput(format!("bad data entry: {e}")))?)?);
    }
    Ok(out)
}
