//! Typed experiment plans built from a raw configuration.

use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use offgrid::admissibility::paper_r_near;
use offgrid::features::FeatureFamily;
use offgrid::geometry::{DomainBox, LimitKernel, Point};
use offgrid::solver::SolverConfig;

use crate::config::{err, CResult, RawConfig};

/// Below this λ the solver cannot resolve the objective and the cell is skipped.
pub const LAMBDA_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum KernelSpec {
    Fejer { fc: u32, d: usize },
    Gaussian { sigma: DMatrix<f64> },
    Laplace { alpha: Vec<f64> },
}

impl KernelSpec {
    pub fn parse(c: &RawConfig) -> CResult<Self> {
        let family = c.string_opt("kernel.family")?.map_or_else(|| err("kernel.family", "missing"), Ok)?;
        let d = c.usize("kernel.dim", Some(1))?;
        if d == 0 {
            return err("kernel.dim", "must be at least 1");
        }
        let spec = match family.as_str() {
            "fejer" => {
                let fc = c.usize("kernel.fc", None)?;
                if fc == 0 || fc > u32::MAX as usize {
                    return err("kernel.fc", "must be a positive cutoff frequency");
                }
                KernelSpec::Fejer { fc: fc as u32, d }
            }
            "gaussian" => {
                let sigma = match c.matrix("kernel.sigma")? {
                    Some(s) => s,
                    None => DMatrix::identity(d, d) * c.positive("kernel.variance", Some(1.0))?,
                };
                if sigma.nrows() != d {
                    return err("kernel.sigma", format!("expected a {d}x{d} matrix"));
                }
                KernelSpec::Gaussian { sigma }
            }
            "laplace" => {
                let alpha = c.f64_list("kernel.alpha")?.unwrap_or_else(|| vec![1.0]);
                let alpha = if alpha.len() == 1 { vec![alpha[0]; d] } else { alpha };
                if alpha.len() != d {
                    return err("kernel.alpha", format!("expected 1 or {d} entries"));
                }
                KernelSpec::Laplace { alpha }
            }
            other => return err("kernel.family", format!("unknown family `{other}` (fejer, gaussian, laplace)")),
        };
        spec.family().map_err(|e| crate::config::ConfigError { key: "kernel".into(), message: e.to_string() })?;
        Ok(spec)
    }

    pub fn family(&self) -> offgrid::Result<FeatureFamily> {
        match self {
            KernelSpec::Fejer { fc, d } => FeatureFamily::discrete_fourier(*fc, *d),
            KernelSpec::Gaussian { sigma } => FeatureFamily::gaussian_fourier(sigma.clone()),
            KernelSpec::Laplace { alpha } => FeatureFamily::laplace(alpha.clone()),
        }
    }

    pub fn kernel(&self) -> LimitKernel {
        self.family().expect("validated at parse time").limit_kernel().clone()
    }
}

#[derive(Clone, Debug)]
pub enum AmplitudeLaw {
    Fixed(Vec<Complex64>),
    /// Circular complex Gaussian CN(0,1), drawn per seed.
    ComplexGaussian,
}

#[derive(Clone, Debug)]
pub enum NoiseModel {
    None,
    /// i.i.d. complex Gaussian with E|w_k|² = σ_w²/m.
    Gaussian,
    File(Vec<Complex64>),
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    max_atoms: Option<usize>,
    grid_spacing: Option<f64>,
    local_steps: Option<usize>,
    merge_radius: Option<f64>,
    tol_gap: Option<f64>,
    tol_grad: Option<f64>,
    max_iters: Option<usize>,
    domain: Option<DomainBox>,
    domain_margin: f64,
}

impl SolverOptions {
    pub fn parse(c: &RawConfig, d: usize, margin_default: f64) -> CResult<Self> {
        let pos_opt = |k: &str| -> CResult<Option<f64>> {
            match c.f64_opt(k)? {
                Some(v) if !(v > 0.0 && v.is_finite()) => err(k, format!("must be positive, got {v}")),
                v => Ok(v),
            }
        };
        let domain = match (c.f64_list("solver.domain_lo")?, c.f64_list("solver.domain_hi")?) {
            (None, None) => None,
            (Some(lo), Some(hi)) => {
                if lo.len() != d || hi.len() != d {
                    return err("solver.domain_lo", format!("domain bounds need {d} entries"));
                }
                Some(DomainBox::new(lo, hi).map_err(|e| crate::config::ConfigError {
                    key: "solver.domain_lo".into(),
                    message: e.to_string(),
                })?)
            }
            (Some(_), None) => return err("solver.domain_hi", "missing (domain_lo given)"),
            (None, Some(_)) => return err("solver.domain_lo", "missing (domain_hi given)"),
        };
        let opts = SolverOptions {
            max_atoms: c.usize_opt("solver.max_atoms")?,
            grid_spacing: pos_opt("solver.grid_spacing")?,
            local_steps: c.usize_opt("solver.local_steps")?,
            merge_radius: pos_opt("solver.merge_radius")?,
            tol_gap: pos_opt("solver.tol_gap")?,
            tol_grad: pos_opt("solver.tol_grad")?,
            max_iters: c.usize_opt("solver.max_iters")?,
            domain,
            domain_margin: c.positive("solver.domain_margin", Some(margin_default))?,
        };
        if opts.max_atoms == Some(0) {
            return err("solver.max_atoms", "must be at least 1");
        }
        if opts.max_iters == Some(0) {
            return err("solver.max_iters", "must be at least 1");
        }
        Ok(opts)
    }

    pub fn build(&self, kernel: &LimitKernel, lambda: f64, anchors: &[Point]) -> offgrid::Result<SolverConfig> {
        let mut cfg = SolverConfig::new(kernel, lambda);
        if let Some(v) = self.max_atoms {
            cfg.max_atoms = v;
        }
        if let Some(v) = self.grid_spacing {
            cfg.grid_init_spacing = v;
        }
        if let Some(v) = self.local_steps {
            cfg.local_steps = v;
        }
        if let Some(v) = self.merge_radius {
            cfg.atom_merge_radius = v;
        }
        if let Some(v) = self.tol_gap {
            cfg.tol_gap = v;
        }
        if let Some(v) = self.tol_grad {
            cfg.tol_grad = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_outer_iters = v;
        }
        cfg.domain = match &self.domain {
            Some(b) => Some(b.clone()),
            None if kernel.period().is_some() => None,
            None => Some(kernel.default_box(anchors, self.domain_margin)?),
        };
        Ok(cfg)
    }
}

pub fn parse_seeds(c: &RawConfig, cli: Option<&[u64]>) -> CResult<Vec<u64>> {
    // read even when overridden so the key still counts as known
    let from_config = c.usize_list("seeds")?;
    let seeds: Vec<u64> = match cli {
        Some(s) => s.to_vec(),
        None => from_config.unwrap_or_else(|| vec![0]).into_iter().map(|v| v as u64).collect(),
    };
    if seeds.is_empty() {
        return err("seeds", "seed list is empty");
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return err("seeds", "seeds must be distinct");
    }
    Ok(seeds)
}

fn parse_positions(c: &RawConfig, kernel: &LimitKernel) -> CResult<Vec<Point>> {
    let pts = c.points("truth.positions")?.map_or_else(|| err("truth.positions", "missing"), Ok)?;
    if pts.is_empty() {
        return err("truth.positions", "needs at least one spike");
    }
    pts.into_iter()
        .map(|p| {
            if p.len() != kernel.dim() {
                return err("truth.positions", format!("point {p:?} does not have dimension {}", kernel.dim()));
            }
            kernel
                .check_point(&p)
                .and_then(|_| Point::new(p))
                .map_err(|e| crate::config::ConfigError { key: "truth.positions".into(), message: e.to_string() })
        })
        .collect()
}

fn parse_amplitudes(c: &RawConfig, s: usize) -> CResult<AmplitudeLaw> {
    let law = c.string_opt("truth.amplitude_law")?.unwrap_or_else(|| "fixed".into());
    match law.as_str() {
        "fixed" => {
            let a = c.complex_list("truth.amplitudes")?.unwrap_or_else(|| vec![Complex64::new(1.0, 0.0); s]);
            if a.len() != s {
                return err("truth.amplitudes", format!("expected {s} amplitudes, one per position"));
            }
            if a.iter().any(|v| v.norm() == 0.0 || !v.re.is_finite() || !v.im.is_finite()) {
                return err("truth.amplitudes", "amplitudes must be finite and nonzero");
            }
            Ok(AmplitudeLaw::Fixed(a))
        }
        "complex_gaussian" => {
            if c.has("truth.amplitudes") {
                return err("truth.amplitudes", "not used with amplitude_law = complex_gaussian");
            }
            Ok(AmplitudeLaw::ComplexGaussian)
        }
        other => err("truth.amplitude_law", format!("unknown law `{other}` (fixed, complex_gaussian)")),
    }
}

fn nonempty<T>(key: &str, v: Vec<T>) -> CResult<Vec<T>> {
    if v.is_empty() {
        err(key, "grid is empty")
    } else {
        Ok(v)
    }
}

fn read_noise_file(path: &PathBuf) -> CResult<Vec<Complex64>> {
    let key = "noise.file";
    let mut rd = csv::Reader::from_path(path).map_err(|e| crate::config::ConfigError {
        key: key.into(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| crate::config::ConfigError { key: key.into(), message: e.to_string() })?;
        if rec.len() != 2 {
            return err(key, "noise file rows must be `re,im`");
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|e| crate::config::ConfigError { key: key.into(), message: e.to_string() });
        out.push(Complex64::new(p(&rec[0])?, p(&rec[1])?));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RecoveryPlan {
    pub kernel: KernelSpec,
    pub positions: Vec<Point>,
    pub amplitudes: AmplitudeLaw,
    pub m: Vec<usize>,
    pub lambda: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub noise: NoiseModel,
    pub seeds: Vec<u64>,
    pub solver: SolverOptions,
    pub write_measures: bool,
}

impl RecoveryPlan {
    /// `sweep` reads grids from `sweep.*`; otherwise the scalar keys are used
    /// (a list for `lambda` gives λ-error curves).
    pub fn parse(c: &RawConfig, seeds: Option<&[u64]>, sweep: bool) -> CResult<Self> {
        let kernel = KernelSpec::parse(c)?;
        let lk = kernel.kernel();
        let positions = parse_positions(c, &lk)?;
        let amplitudes = parse_amplitudes(c, positions.len())?;
        let model = c.string_opt("noise.model")?.unwrap_or_else(|| "none".into());
        let (m, lambda, sigma_w) = if sweep {
            let m = c.usize_list("sweep.m")?.or(c.usize_list("features.m")?);
            let l = c.f64_list("sweep.lambda")?.or(c.f64_list("lambda")?);
            let s = c.f64_list("sweep.sigma_w")?.or(c.f64_list("noise.sigma_w")?);
            (
                nonempty("sweep.m", m.map_or_else(|| err("sweep.m", "missing"), Ok)?)?,
                nonempty("sweep.lambda", l.map_or_else(|| err("sweep.lambda", "missing"), Ok)?)?,
                nonempty("sweep.sigma_w", s.unwrap_or_else(|| vec![0.0]))?,
            )
        } else {
            let m = c.usize("features.m", None)?;
            let l = c.f64_list("lambda")?.map_or_else(|| err("lambda", "missing"), Ok)?;
            let s = if model == "gaussian" { vec![c.f64("noise.sigma_w")?] } else { vec![0.0] };
            (vec![m], nonempty("lambda", l)?, s)
        };
        if m.contains(&0) {
            return err(if sweep { "sweep.m" } else { "features.m" }, "m must be at least 1");
        }
        let lkey = if sweep { "sweep.lambda" } else { "lambda" };
        if let Some(l) = lambda.iter().find(|l| !l.is_finite() || **l <= 0.0) {
            return err(lkey, format!("lambda must be positive, got {l}"));
        }
        let skey = if sweep { "sweep.sigma_w" } else { "noise.sigma_w" };
        if let Some(s) = sigma_w.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return err(skey, format!("noise level must be nonnegative, got {s}"));
        }
        let noise = match model.as_str() {
            "none" => {
                if sigma_w.iter().any(|s| *s != 0.0) {
                    return err(skey, "noise levels given but noise.model = none");
                }
                NoiseModel::None
            }
            "gaussian" => NoiseModel::Gaussian,
            "file" => {
                let path = c.path_opt("noise.file")?.map_or_else(|| err("noise.file", "missing"), Ok)?;
                let w = read_noise_file(&path)?;
                if m.iter().any(|mm| *mm != w.len()) {
                    return err("noise.file", format!("noise vector has length {} but m = {:?}", w.len(), m));
                }
                NoiseModel::File(w)
            }
            other => return err("noise.model", format!("unknown model `{other}` (none, gaussian, file)")),
        };
        let solver = SolverOptions::parse(c, lk.dim(), 3.0)?;
        let write_measures = c.bool("output.measures", true)?;
        let seeds = parse_seeds(c, seeds)?;
        c.reject_unknown()?;
        Ok(RecoveryPlan { kernel, positions, amplitudes, m, lambda, sigma_w, noise, seeds, solver, write_measures })
    }
}

#[derive(Clone, Debug)]
pub struct CertifyPlan {
    pub kernel: KernelSpec,
    pub positions: Vec<Point>,
    pub amplitudes: Vec<Complex64>,
    pub s_max: usize,
    pub r_near: Option<f64>,
    pub eps0: Option<f64>,
    pub eps2: Option<f64>,
    pub c_h: Option<f64>,
    pub delta: Option<f64>,
    pub near_spacing: f64,
    pub domain_margin: f64,
    pub record_grid: bool,
}

impl CertifyPlan {
    pub fn parse(c: &RawConfig) -> CResult<Self> {
        let kernel = KernelSpec::parse(c)?;
        let lk = kernel.kernel();
        let positions = parse_positions(c, &lk)?;
        let amplitudes = match parse_amplitudes(c, positions.len())? {
            AmplitudeLaw::Fixed(a) => a,
            AmplitudeLaw::ComplexGaussian => return err("truth.amplitude_law", "certify needs fixed amplitudes"),
        };
        let pos_opt = |k: &str| -> CResult<Option<f64>> {
            match c.f64_opt(k)? {
                Some(v) if !(v > 0.0 && v.is_finite()) => err(k, format!("must be positive, got {v}")),
                v => Ok(v),
            }
        };
        let r_near = pos_opt("certify.r_near")?;
        let eps0 = pos_opt("certify.eps0")?;
        let eps2 = pos_opt("certify.eps2")?;
        let c_h = match c.f64_opt("certify.c_h")? {
            Some(v) if !v.is_finite() || v < 0.0 => return err("certify.c_h", format!("must be nonnegative, got {v}")),
            v => v,
        };
        if let KernelSpec::Fejer { fc, .. } = kernel {
            if fc < 128 && (r_near.is_none() || eps0.is_none() || eps2.is_none()) {
                return err("kernel.fc", "published Fejer constants need fc >= 128; set certify.r_near, certify.eps0 and certify.eps2");
            }
        }
        let s_max = c.usize("certify.s_max", Some(positions.len()))?;
        if s_max < positions.len() {
            return err("certify.s_max", "must be at least the number of positions");
        }
        let r = r_near.unwrap_or_else(|| paper_r_near(&lk));
        let plan = CertifyPlan {
            kernel,
            positions,
            amplitudes,
            s_max,
            r_near,
            eps0,
            eps2,
            c_h,
            delta: pos_opt("certify.delta")?,
            near_spacing: c.positive("certify.near_spacing", Some(r / 50.0))?,
            domain_margin: c.positive("certify.domain_margin", Some(5.0))?,
            record_grid: c.bool("certify.record_grid", false)?,
        };
        c.reject_unknown()?;
        Ok(plan)
    }
}

#[derive(Clone, Debug)]
pub struct GmmPlan {
    pub sigma: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub n: usize,
    pub m: usize,
    pub c: Option<f64>,
    pub lambda: f64,
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub solver: SolverOptions,
    pub write_sketch: bool,
}

impl GmmPlan {
    pub fn parse(c: &RawConfig, seeds: Option<&[u64]>) -> CResult<Self> {
        let sigma = c.matrix("gmm.sigma")?.map_or_else(|| err("gmm.sigma", "missing"), Ok)?;
        let d = sigma.nrows();
        let means: Vec<Point> = c
            .points("gmm.means")?
            .map_or_else(|| err("gmm.means", "missing"), Ok)?
            .into_iter()
            .map(|p| {
                if p.len() != d {
                    return err("gmm.means", format!("means must have dimension {d}"));
                }
                Point::new(p).map_err(|e| crate::config::ConfigError { key: "gmm.means".into(), message: e.to_string() })
            })
            .collect::<CResult<_>>()?;
        let weights = c.f64_list("gmm.weights")?.map_or_else(|| err("gmm.weights", "missing"), Ok)?;
        offgrid::sketch::GmmModel::new(weights.clone(), means.clone(), sigma.clone())
            .map_err(|e| crate::config::ConfigError { key: "gmm".into(), message: e.to_string() })?;
        if means.is_empty() {
            return err("gmm.means", "needs at least one component");
        }
        let n = c.usize("gmm.n", None)?;
        let m = c.usize("features.m", None)?;
        if n == 0 {
            return err("gmm.n", "must be at least 1");
        }
        if m == 0 {
            return err("features.m", "must be at least 1");
        }
        let plan = GmmPlan {
            sigma,
            weights,
            means,
            n,
            m,
            c: match c.f64_opt("features.c")? {
                Some(v) if !(v > 0.0 && v.is_finite()) => return err("features.c", format!("must be positive, got {v}")),
                v => v,
            },
            lambda: c.positive("lambda", None)?,
            tolerance: c.positive("gmm.tolerance", Some(0.1))?,
            seeds: parse_seeds(c, seeds)?,
            solver: SolverOptions::parse(c, d, 2.0)?,
            write_sketch: c.bool("output.sketch", false)?,
        };
        c.reject_unknown()?;
        Ok(plan)
    }
}
