//! Subcommand bodies. Each one computes everything first and then writes.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use num_complex::Complex64;
use offgrid::admissibility::{
    gaussian_bounds, measure_bounds, minimal_certified_separation, paper_template, verify_admissible,
    AdmissibilityParams, ScanSpec,
};
use offgrid::certificates::{check_nondegeneracy, signs_of, GridSpec, LimitCertificate};
use offgrid::features::{DiscreteMeasure, MeasurementOperator};
use offgrid::geometry::{KernelFamily, Point};
use offgrid::rng::{substream, NOISE, SIGNS};
use offgrid::sketch::{compute_sketch, exact_sketch, learn_gmm, match_means, sample_gmm, GmmModel};
use offgrid::solver::{solve_blasso, stability_report};
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::plan::{AmplitudeLaw, CertifyPlan, GmmPlan, KernelSpec, NoiseModel, RecoveryPlan, LAMBDA_FLOOR};

pub struct Meta<'a> {
    pub command: &'a str,
    pub config_hash: &'a str,
    pub seeds: &'a [u64],
}

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(" ")
}

/// Writes `name` under `dir` plus a `name.meta` sidecar.
pub fn write_table(dir: &Path, name: &str, header: &[String], rows: &[Vec<String>], meta: &Meta) -> Result<()> {
    let path = dir.join(name);
    let mut wr = csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))?;
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(r)?;
    }
    wr.flush()?;
    write_meta(dir, name, meta)
}

pub fn write_meta(dir: &Path, name: &str, meta: &Meta) -> Result<()> {
    let seeds: Vec<String> = meta.seeds.iter().map(|s| s.to_string()).collect();
    let mut f = fs::File::create(dir.join(format!("{name}.meta")))?;
    writeln!(f, "file = {name}")?;
    writeln!(f, "command = {}", meta.command)?;
    writeln!(f, "config_sha256 = {}", meta.config_hash)?;
    writeln!(f, "seeds = {}", seeds.join(","))?;
    writeln!(f, "version = {}", offgrid::VERSION)?;
    Ok(())
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn truth_amplitudes(law: &AmplitudeLaw, s: usize, seed: u64) -> Vec<Complex64> {
    match law {
        AmplitudeLaw::Fixed(a) => a.clone(),
        AmplitudeLaw::ComplexGaussian => {
            let half = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid");
            (0..s)
                .map(|i| {
                    let mut rng = substream(seed, SIGNS, i as u64);
                    Complex64::new(half.sample(&mut rng), half.sample(&mut rng))
                })
                .collect()
        }
    }
}

fn noise_vector(model: &NoiseModel, m: usize, sigma_w: f64, seed: u64) -> Vec<Complex64> {
    match model {
        NoiseModel::None => vec![Complex64::new(0.0, 0.0); m],
        NoiseModel::File(w) => w.clone(),
        NoiseModel::Gaussian => {
            let s = sigma_w / (2.0 * m as f64).sqrt();
            (0..m)
                .map(|k| {
                    let mut rng = substream(seed, NOISE, k as u64);
                    let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    Complex64::new(s * a, s * b)
                })
                .collect()
        }
    }
}

pub struct Cell {
    pub seed: u64,
    pub m: usize,
    pub lambda: f64,
    pub sigma_w: f64,
    pub noise_norm: f64,
    pub spike_count: usize,
    pub count_match: bool,
    pub sign_match: bool,
    pub amplitude_error: f64,
    pub position_error: f64,
    pub bound_rhs: f64,
    pub bound_satisfied: bool,
    pub gap: f64,
    pub runtime_ms: u128,
    pub measure: DiscreteMeasure,
}

impl Cell {
    pub fn success(&self) -> bool {
        self.count_match && self.sign_match
    }
}

pub fn run_cell(plan: &RecoveryPlan, m: usize, lambda: f64, sigma_w: f64, seed: u64) -> Result<Cell> {
    let t = Instant::now();
    let op = MeasurementOperator::sample(plan.kernel.family()?, m, seed)?;
    let kernel = op.kernel().clone();
    let a0 = truth_amplitudes(&plan.amplitudes, plan.positions.len(), seed);
    let mu0 = DiscreteMeasure::new(a0, plan.positions.clone())?;
    let w = noise_vector(&plan.noise, m, sigma_w, seed);
    let y: Vec<Complex64> = op.forward(&mu0)?.iter().zip(&w).map(|(a, b)| a + b).collect();
    let noise_norm = w.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let cfg = plan.solver.build(&kernel, lambda, &plan.positions)?;
    let res = solve_blasso(&op, &y, &cfg).with_context(|| format!("solver failed (seed {seed}, m {m}, lambda {lambda})"))?;
    let rep = stability_report(&res.measure, &mu0, &kernel, lambda, noise_norm)?;
    Ok(Cell {
        seed,
        m,
        lambda,
        sigma_w,
        noise_norm,
        spike_count: res.measure.len(),
        count_match: rep.spike_count_match,
        sign_match: rep.sign_match,
        amplitude_error: rep.amplitude_error,
        position_error: rep.position_error,
        bound_rhs: rep.bound_rhs,
        bound_satisfied: rep.bound_satisfied,
        gap: res.gap,
        runtime_ms: t.elapsed().as_millis(),
        measure: res.measure,
    })
}

pub fn recover(plan: &RecoveryPlan, out: &Path, meta: &Meta) -> Result<()> {
    let m = plan.m[0];
    let sigma_w = plan.sigma_w[0];
    let mut jobs = Vec::new();
    for &seed in &plan.seeds {
        for &lambda in &plan.lambda {
            if lambda < LAMBDA_FLOOR {
                eprintln!("warning: lambda {lambda:e} is below {LAMBDA_FLOOR:e}; skipped");
                continue;
            }
            jobs.push((seed, lambda));
        }
    }
    let cells: Vec<Cell> =
        jobs.par_iter().map(|&(seed, lambda)| run_cell(plan, m, lambda, sigma_w, seed)).collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.seed.to_string(),
                c.m.to_string(),
                fmt(c.lambda),
                fmt(c.noise_norm),
                c.spike_count.to_string(),
                c.sign_match.to_string(),
                fmt(c.amplitude_error),
                fmt(c.position_error),
                fmt(c.bound_rhs),
                c.bound_satisfied.to_string(),
                fmt(c.gap),
                c.runtime_ms.to_string(),
            ]
        })
        .collect();
    write_table(
        out,
        "recovery.csv",
        &header(&[
            "seed", "m", "lambda", "noise_norm", "spike_count", "sign_match", "amplitude_error", "position_error",
            "bound_rhs", "bound_satisfied", "gap", "runtime_ms",
        ]),
        &rows,
        meta,
    )?;
    let curve: Vec<Vec<String>> = cells
        .iter()
        .map(|c| vec![fmt(c.lambda), fmt(c.amplitude_error + c.position_error), format!("seed_{}", c.seed)])
        .collect();
    write_table(out, "lambda_error.csv", &header(&["lambda", "error", "series"]), &curve, meta)?;
    if plan.write_measures {
        let d = plan.positions[0].dim();
        let mut cols = header(&["seed", "lambda", "index", "re", "im"]);
        cols.extend((1..=d).map(|c| format!("x_{c}")));
        let mut rows = Vec::new();
        for c in &cells {
            for (i, (a, x)) in c.measure.amplitudes.iter().zip(&c.measure.positions).enumerate() {
                let mut r = vec![c.seed.to_string(), fmt(c.lambda), i.to_string(), fmt(a.re), fmt(a.im)];
                r.extend(x.iter().map(|v| fmt(*v)));
                rows.push(r);
            }
        }
        write_table(out, "measures.csv", &cols, &rows, meta)?;
    }
    let ok = cells.iter().filter(|c| c.success()).count();
    println!("recover: {ok}/{} runs recovered the spike count and signs", cells.len());
    Ok(())
}

pub fn sweep(plan: &RecoveryPlan, out: &Path, meta: &Meta) -> Result<()> {
    let mut grid = Vec::new();
    for &lambda in &plan.lambda {
        for &m in &plan.m {
            for &sigma_w in &plan.sigma_w {
                grid.push((lambda, m, sigma_w));
            }
        }
    }
    let jobs: Vec<(usize, u64)> = grid
        .iter()
        .enumerate()
        .filter(|(_, (l, _, _))| *l >= LAMBDA_FLOOR)
        .flat_map(|(g, _)| plan.seeds.iter().map(move |s| (g, *s)))
        .collect();
    let cells: Vec<(usize, Cell)> = jobs
        .par_iter()
        .map(|&(g, seed)| {
            let (lambda, m, sigma_w) = grid[g];
            run_cell(plan, m, lambda, sigma_w, seed).map(|c| (g, c))
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for (g, &(lambda, m, sigma_w)) in grid.iter().enumerate() {
        if lambda < LAMBDA_FLOOR {
            eprintln!("warning: lambda {lambda:e} is below {LAMBDA_FLOOR:e}; cell skipped");
            rows.push(vec![fmt(lambda), m.to_string(), fmt(sigma_w), "0".into(), "0".into(), String::new(), "true".into()]);
            continue;
        }
        let mine: Vec<&Cell> = cells.iter().filter(|(h, _)| *h == g).map(|(_, c)| c).collect();
        let ok = mine.iter().filter(|c| c.success()).count();
        rows.push(vec![
            fmt(lambda),
            m.to_string(),
            fmt(sigma_w),
            mine.len().to_string(),
            ok.to_string(),
            fmt(ok as f64 / mine.len() as f64),
            "false".into(),
        ]);
    }
    write_table(
        out,
        "frontier.csv",
        &header(&["lambda", "m", "sigma_w", "seeds", "successes", "success_fraction", "skipped"]),
        &rows,
        meta,
    )?;
    let runs: Vec<Vec<String>> = cells
        .iter()
        .map(|(_, c)| {
            vec![
                c.seed.to_string(),
                c.m.to_string(),
                fmt(c.lambda),
                fmt(c.sigma_w),
                fmt(c.noise_norm),
                c.spike_count.to_string(),
                c.sign_match.to_string(),
                fmt(c.amplitude_error),
                fmt(c.position_error),
                fmt(c.bound_rhs),
                c.bound_satisfied.to_string(),
                fmt(c.gap),
                c.runtime_ms.to_string(),
            ]
        })
        .collect();
    write_table(
        out,
        "sweep_runs.csv",
        &header(&[
            "seed", "m", "lambda", "sigma_w", "noise_norm", "spike_count", "sign_match", "amplitude_error",
            "position_error", "bound_rhs", "bound_satisfied", "gap", "runtime_ms",
        ]),
        &runs,
        meta,
    )?;
    println!("sweep: {} cells, {} runs", grid.len(), cells.len());
    Ok(())
}

pub fn certify(plan: &CertifyPlan, out: &Path, meta: &Meta) -> Result<bool> {
    let kernel = plan.kernel.kernel();
    let mut t = match (&plan.kernel, plan.r_near, plan.eps0, plan.eps2) {
        (KernelSpec::Fejer { fc, .. }, ..) if *fc < 128 => None,
        _ => Some(paper_template(&kernel, plan.s_max)?),
    };
    if plan.r_near.is_some() || plan.eps0.is_some() || plan.eps2.is_some() || plan.c_h.is_some() || t.is_none() {
        let base = t.take();
        let r = plan.r_near.or(base.as_ref().map(|b| b.r_near)).expect("checked at parse time");
        let eps0 = plan.eps0.or(base.as_ref().map(|b| b.eps0)).expect("checked at parse time");
        let eps2 = plan.eps2.or(base.as_ref().map(|b| b.eps2)).expect("checked at parse time");
        let c_h = plan.c_h.or(base.as_ref().map(|b| b.c_h)).unwrap_or(0.0);
        let b = match (kernel.family(), plan.r_near) {
            (KernelFamily::Gaussian { .. }, _) => gaussian_bounds(kernel.dim()),
            (_, None) if base.is_some() => base.as_ref().unwrap().b.clone(),
            _ => measure_bounds(&kernel, r, &ScanSpec::default_for(&kernel, r)),
        };
        t = Some(AdmissibilityParams::new(r, 0.0, eps0, eps2, b, plan.s_max, c_h)?);
    }
    let template = t.expect("set above");
    let spec = ScanSpec::default_for(&kernel, template.r_near);
    let params = match plan.delta {
        Some(dl) => template.with_delta(dl),
        None => template.with_delta(minimal_certified_separation(&kernel, &template, &spec)?.delta),
    };
    let adm = verify_admissible(&kernel, &params, &spec)?;

    let xs = &plan.positions;
    let mut min_separation = f64::INFINITY;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            min_separation = min_separation.min(kernel.fisher_distance(&xs[i], &xs[j])?);
        }
    }
    let signs = signs_of(&plan.amplitudes)?;
    let (eta, _) = LimitCertificate::precertificate(&kernel, xs, &signs)?;
    let mut grid = GridSpec::default_for(params.r_near, kernel.default_box(xs, plan.domain_margin)?);
    grid.near_spacing = plan.near_spacing;
    grid.record = plan.record_grid;
    let nd = check_nondegeneracy(&eta, &kernel, &plan.amplitudes, xs, params.r_near, params.eps0 / 2.0, params.eps2 / 2.0, &grid)?;

    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join("admissibility.csv"))?;
    adm.write_csv(&mut f)?;
    write_meta(out, "admissibility.csv", meta)?;
    let opt_point = |p: &Option<Point>| p.as_ref().map_or(String::new(), |p| fmt_point(p));
    write_table(
        out,
        "nondegeneracy.csv",
        &header(&[
            "eps0_target", "eps0_measured", "eps2_target", "eps2_measured", "max_abs_eta", "interpolation_error",
            "gradient_error", "worst_far_point", "worst_near_point", "min_separation", "delta", "pass",
        ]),
        &[vec![
            fmt(nd.eps0_target),
            fmt(nd.eps0_measured),
            fmt(nd.eps2_target),
            fmt(nd.eps2_measured),
            fmt(nd.max_abs_eta),
            fmt(nd.interpolation_error),
            fmt(nd.gradient_error),
            opt_point(&nd.worst_far_point),
            opt_point(&nd.worst_near_point),
            fmt(min_separation),
            fmt(params.delta),
            nd.pass.to_string(),
        ]],
        meta,
    )?;
    if plan.record_grid {
        let mut f = fs::File::create(out.join("nondegeneracy_grid.csv"))?;
        nd.write_csv(&mut f)?;
        write_meta(out, "nondegeneracy_grid.csv", meta)?;
    }
    let mut f = fs::File::create(out.join("constants.txt"))?;
    writeln!(f, "kernel = {}", kernel.name())?;
    writeln!(f, "dim = {}", kernel.dim())?;
    writeln!(f, "r_near = {}", fmt(params.r_near))?;
    writeln!(f, "delta = {}", fmt(params.delta))?;
    writeln!(f, "eps0 = {}", fmt(params.eps0))?;
    writeln!(f, "eps2 = {}", fmt(params.eps2))?;
    writeln!(f, "c_h = {}", fmt(params.c_h))?;
    writeln!(f, "h = {}", fmt(params.h))?;
    writeln!(f, "s_max = {}", params.s_max)?;
    for ((i, j), v) in &params.b {
        writeln!(f, "b{i}{j} = {}", fmt(*v))?;
    }
    let pass = adm.pass && nd.pass;
    writeln!(f, "admissible = {}", adm.pass)?;
    writeln!(f, "nondegenerate = {}", nd.pass)?;
    writeln!(f, "verdict = {}", if pass { "PASS" } else { "FAIL" })?;
    write_meta(out, "constants.txt", meta)?;

    let worst = match (&nd.worst_near_point, &nd.worst_far_point) {
        _ if nd.pass => String::new(),
        (Some(p), _) if nd.eps2_measured < nd.eps2_target => format!(" worst_near=[{}]", fmt_point(p)),
        (_, Some(p)) => format!(" worst_far=[{}]", fmt_point(p)),
        (Some(p), None) => format!(" worst_near=[{}]", fmt_point(p)),
        (None, None) => String::new(),
    };
    println!(
        "certify: {} kernel={} d={} delta={} min_separation={} admissible={} nondegenerate={}{}",
        if pass { "PASS" } else { "FAIL" },
        kernel.name(),
        kernel.dim(),
        fmt(params.delta),
        fmt(min_separation),
        adm.pass,
        nd.pass,
        worst
    );
    Ok(pass)
}

pub fn gmm(plan: &GmmPlan, out: &Path, meta: &Meta) -> Result<()> {
    let truth = GmmModel::new(plan.weights.clone(), plan.means.clone(), plan.sigma.clone())?;
    let family = offgrid::features::FeatureFamily::gmm_sketch(plan.sigma.clone(), plan.c)?;
    struct Run {
        seed: u64,
        fit: offgrid::sketch::GmmFit,
        matching: offgrid::sketch::MeanMatching,
        sketch: offgrid::sketch::Sketch,
        noise: f64,
        ms: u128,
    }
    let runs: Vec<Run> = plan
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Run> {
            let t = Instant::now();
            let freqs = family.sample_frequencies(plan.m, seed)?;
            let data = sample_gmm(&truth, plan.n, seed)?;
            let sketch = compute_sketch(&data, &freqs)?;
            let exact = exact_sketch(&truth, &freqs);
            let noise = sketch.values.iter().zip(&exact).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let op = MeasurementOperator::new(family.clone(), freqs)?;
            let cfg = plan.solver.build(op.kernel(), plan.lambda, &plan.means)?;
            let fit = learn_gmm(&sketch, &plan.sigma, plan.c, &cfg)?;
            let matching = match_means(&fit.model, &truth)?;
            Ok(Run { seed, fit, matching, sketch, noise, ms: t.elapsed().as_millis() })
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    let mut matched = Vec::new();
    let mut summary = Vec::new();
    let mut ok = 0;
    for r in &runs {
        for &(i, j, e) in &r.matching.pairs {
            matched.push(vec![
                r.seed.to_string(),
                i.to_string(),
                j.to_string(),
                fmt(e),
                fmt(r.fit.model.weights[i]),
                fmt(truth.weights[j]),
            ]);
        }
        let success = r.matching.count_match && !r.fit.empty && r.matching.max_error <= plan.tolerance;
        ok += success as usize;
        let flagged: Vec<String> = r.fit.phase_flagged.iter().map(|v| v.to_string()).collect();
        summary.push(vec![
            r.seed.to_string(),
            r.fit.model.len().to_string(),
            r.matching.count_match.to_string(),
            if r.fit.empty { String::new() } else { fmt(r.matching.max_error) },
            success.to_string(),
            flagged.join(" "),
            fmt(r.noise),
            fmt(r.fit.solve.gap),
            r.ms.to_string(),
        ]);
        let name = format!("model_seed{}.txt", r.seed);
        r.fit.model.write_text(fs::File::create(out.join(&name))?)?;
        write_meta(out, &name, meta)?;
        if plan.write_sketch {
            let name = format!("sketch_seed{}.csv", r.seed);
            r.sketch.write_csv(fs::File::create(out.join(&name))?)?;
            write_meta(out, &name, meta)?;
        }
    }
    write_table(
        out,
        "matched_means.csv",
        &header(&["seed", "estimated", "true", "error", "weight_estimated", "weight_true"]),
        &matched,
        meta,
    )?;
    write_table(
        out,
        "gmm_summary.csv",
        &header(&[
            "seed", "components", "count_match", "max_error", "success", "phase_flagged", "sketch_noise", "gap",
            "runtime_ms",
        ]),
        &summary,
        meta,
    )?;
    println!("gmm: {ok}/{} seeds recovered {} components within {}", runs.len(), truth.len(), plan.tolerance);
    Ok(())
}
