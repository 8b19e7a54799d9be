//! Reproduction runs: a plain solve, the three perturbation ratio experiments and the bounds report.
//!
//! Each experiment has a function returning typed rows and a `write_*` companion
//! producing the CSV. Every file starts with the provenance comment of
//! [`ExperimentConfig::provenance_line`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bounds::{self, BoundsReport, ReportOptions};
use crate::certificate::{Certificate, DEFAULT_GRID_POINTS};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::model::{synthesize, uniform_noise, MeasurementSet};
use crate::numerics::{dist2, norm2};
use crate::recovery::{self, RecoveryResult};
use crate::solver::{self, BundleState, PenaltyProblem, SolveOptions};

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `# provenance` followed by whatever `body` emits.
pub fn write_with_provenance<F>(path: &Path, cfg: &ExperimentConfig, body: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    writeln!(buf, "{}", cfg.provenance_line())?;
    body(&mut buf)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

fn clean_measurements(cfg: &ExperimentConfig) -> Result<MeasurementSet> {
    synthesize(&cfg.sources, &cfg.grid, &cfg.kernel, None)
}

fn run(cfg: &ExperimentConfig, ms: &MeasurementSet, iters: usize, record: bool) -> Result<BundleState> {
    let problem = PenaltyProblem::new(ms, cfg.kernel, cfg.pi, cfg.tau)?;
    solver::solve(
        &problem,
        SolveOptions { alpha: cfg.alpha, max_iters: iters, record_iterates: record, ..Default::default() },
    )
}

/// Clean solve over `reference_iterations` with every iterate recorded.
pub fn reference_run(cfg: &ExperimentConfig) -> Result<BundleState> {
    run(cfg, &clean_measurements(cfg)?, cfg.reference_iterations, true)
}

/// `lambda^(p)` from a recorded run; iterates after an early stop repeat the last one.
fn iterate(state: &BundleState, p: usize) -> &[f64] {
    let h = state.iterate_history.as_ref().expect("iterates were recorded");
    &h[p.min(h.len() - 1)]
}

/// Final iterate `lambda^(P)`, the reference estimate of the dual solution.
pub fn lambda_best(state: &BundleState) -> Vec<f64> {
    state.iterate_history.as_ref().and_then(|h| h.last().cloned()).unwrap_or_else(|| state.iterate.clone())
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub state: BundleState,
    pub recovery: Result<RecoveryResult>,
    pub files: Vec<PathBuf>,
}

/// Solve, then write `convergence.csv`, `certificate.csv` and, when a support is found, `recovery.csv`.
pub fn cmd_solve(cfg: &ExperimentConfig, out: &Path) -> Result<SolveOutcome> {
    let ms = clean_measurements(cfg)?;
    let state = run(cfg, &ms, cfg.iterations, false)?;
    let mut files = Vec::new();
    let path = out.join("convergence.csv");
    write_with_provenance(&path, cfg, |w| state.write_history_csv(w, false))?;
    files.push(path);
    let cert = Certificate::new(&state.iterate, &cfg.grid, cfg.kernel)?;
    let path = out.join("certificate.csv");
    write_with_provenance(&path, cfg, |w| cert.write_csv(w, DEFAULT_GRID_POINTS))?;
    files.push(path);
    let recovery = recovery::recover(&cert, &ms.y);
    if let Ok(r) = &recovery {
        let path = out.join("recovery.csv");
        write_with_provenance(&path, cfg, |w| r.write_csv(w))?;
        files.push(path);
    }
    Ok(SolveOutcome { state, recovery, files })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    /// Local refinement from the true location failed.
    RefineFailed,
    /// The ratio denominator vanished.
    ZeroDenominator,
    /// The noise draw was identically zero.
    ZeroNoise,
    SolveFailed,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::RefineFailed => "refine_failed",
            RowStatus::ZeroDenominator => "zero_denominator",
            RowStatus::ZeroNoise => "zero_noise",
            RowStatus::SolveFailed => "solve_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTRow {
    pub p: usize,
    /// 1-based source index.
    pub source: usize,
    pub t_err: Option<f64>,
    pub lambda_dist: f64,
    pub ratio: Option<f64>,
    pub ct: f64,
    pub status: RowStatus,
}

/// Distances to `lambda*_best` below this many units of roundoff in its norm
/// are indistinguishable from zero.
pub const ROUNDING_ULPS: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct LambdaTReport {
    pub rows: Vec<LambdaTRow>,
    pub ct: Vec<f64>,
    /// `||lambda^(P-1) - lambda*_best||_2`.
    pub last_step: f64,
    /// `ROUNDING_ULPS * eps * ||lambda*_best||_2`.
    pub rounding_floor: f64,
    /// Rows with `||lambda^(p) - lambda*_best||_2` below this are dropped:
    /// the larger of `last_step` and `rounding_floor`.
    pub threshold: f64,
    /// Window iterates dropped by the threshold.
    pub skipped: usize,
    pub lambda_best: Vec<f64>,
}

fn ct_per_source(cfg: &ExperimentConfig, lambda_best: &[f64]) -> Result<Vec<f64>> {
    let cert = Certificate::new(lambda_best, &cfg.grid, cfg.kernel)?;
    let ln = norm2(lambda_best);
    let (s, m) = (cfg.kernel.sigma(), cfg.grid.len());
    cfg.sources.locations().iter().map(|&t| bounds::constant_ct(cert.d2(t), s, m, ln)).collect()
}

fn refined_locations(cfg: &ExperimentConfig, lambda: &[f64]) -> Result<Vec<Result<f64>>> {
    let cert = Certificate::new(lambda, &cfg.grid, cfg.kernel)?;
    Ok(cfg.sources.locations().iter().map(|&t| cert.refine_location(t)).collect())
}

/// Location error against dual error over the iterate window.
pub fn exp_lambda_t(cfg: &ExperimentConfig) -> Result<LambdaTReport> {
    exp_lambda_t_from(cfg, &reference_run(cfg)?)
}

pub fn exp_lambda_t_from(cfg: &ExperimentConfig, state: &BundleState) -> Result<LambdaTReport> {
    let best = lambda_best(state);
    let ct = ct_per_source(cfg, &best)?;
    let big_p = cfg.reference_iterations;
    let last_step = dist2(iterate(state, big_p.saturating_sub(1)), &best);
    let rounding_floor = ROUNDING_ULPS * f64::EPSILON * norm2(&best);
    let threshold = last_step.max(rounding_floor);
    let (mut rows, mut skipped) = (Vec::new(), 0);
    for p in cfg.window.0..=cfg.window.1 {
        let lp = iterate(state, p);
        let dist = dist2(lp, &best);
        if dist < threshold {
            skipped += 1;
            continue;
        }
        for (i, t) in refined_locations(cfg, lp)?.into_iter().enumerate() {
            let t_star = cfg.sources.locations()[i];
            let (t_err, ratio, status) = match t {
                Err(_) => (None, None, RowStatus::RefineFailed),
                Ok(_) if dist == 0.0 => (t.ok().map(|t| (t - t_star).abs()), None, RowStatus::ZeroDenominator),
                Ok(t) => {
                    let e = (t - t_star).abs();
                    (Some(e), Some(e / dist), RowStatus::Ok)
                }
            };
            rows.push(LambdaTRow { p, source: i + 1, t_err, lambda_dist: dist, ratio, ct: ct[i], status });
        }
    }
    Ok(LambdaTReport { rows, ct, last_step, rounding_floor, threshold, skipped, lambda_best: best })
}

pub fn write_lambda_t<W: Write>(report: &LambdaTReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "source", "t_err", "lambda_dist", "ratio", "Ct", "two_Ct", "status"])?;
    for r in &report.rows {
        w.write_record([
            r.p.to_string(),
            r.source.to_string(),
            fmt_opt(r.t_err),
            r.lambda_dist.to_string(),
            fmt_opt(r.ratio),
            r.ct.to_string(),
            (2.0 * r.ct).to_string(),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaRow {
    pub p: usize,
    pub a_err: Option<f64>,
    pub t_err: Option<f64>,
    pub ratio: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone)]
pub struct TaReport {
    pub rows: Vec<TaRow>,
    pub ca_log10: f64,
}

/// Amplitude error against location error over the iterate window.
pub fn exp_t_a(cfg: &ExperimentConfig) -> Result<TaReport> {
    exp_t_a_from(cfg, &reference_run(cfg)?)
}

pub fn exp_t_a_from(cfg: &ExperimentConfig, state: &BundleState) -> Result<TaReport> {
    let ms = clean_measurements(cfg)?;
    let (t_star, a_star) = (cfg.sources.locations(), cfg.sources.amplitudes());
    let phi = recovery::build_phi(&cfg.grid, &cfg.kernel, t_star);
    let smin = crate::numerics::svd(&phi)?.sigma_min();
    let ca = bounds::constant_ca(cfg.kernel.sigma(), cfg.grid.len(), cfg.sources.amplitude_l2_norm(), smin)?;
    let mut rows = Vec::new();
    for p in cfg.window.0..=cfg.window.1 {
        let located: Result<Vec<f64>> = refined_locations(cfg, iterate(state, p))?.into_iter().collect();
        let Ok(t) = located else {
            rows.push(TaRow { p, a_err: None, t_err: None, ratio: None, status: RowStatus::RefineFailed });
            continue;
        };
        let t_err = dist2(&t, t_star);
        let a = recovery::recover_amplitudes(&cfg.grid, &cfg.kernel, &t, &ms.y)?;
        let a_err = dist2(&a, a_star);
        let (ratio, status) =
            if t_err > 0.0 { (Some(a_err / t_err), RowStatus::Ok) } else { (None, RowStatus::ZeroDenominator) };
        rows.push(TaRow { p, a_err: Some(a_err), t_err: Some(t_err), ratio, status });
    }
    Ok(TaReport { rows, ca_log10: ca.log10 })
}

pub fn write_t_a<W: Write>(report: &TaReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "a_err", "t_err", "ratio", "Ca_log10", "status"])?;
    for r in &report.rows {
        w.write_record([
            r.p.to_string(),
            fmt_opt(r.a_err),
            fmt_opt(r.t_err),
            fmt_opt(r.ratio),
            report.ca_log10.to_string(),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub w_c: f64,
    /// Norm of the noise restricted to the selected samples.
    pub w_norm: f64,
    /// `||lambda_best - lambda*_best||_2` over the selected samples.
    pub lambda_dist: Option<f64>,
    pub ratio: Option<f64>,
    pub t_err: Option<f64>,
    pub t_ratio: Option<f64>,
    pub w_norm_full: f64,
    pub lambda_dist_full: Option<f64>,
    pub ratio_full: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
    pub c_lambda: Result<f64>,
    pub selected_samples: Vec<usize>,
}

fn restrict(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&j| v[j]).collect()
}

/// Dual and location error against measurement noise over the `w_c` grid.
///
/// Sweep points run in parallel; point `i` draws its noise with seed `seed + i`.
pub fn exp_noise(cfg: &ExperimentConfig) -> Result<NoiseReport> {
    let clean = clean_measurements(cfg)?;
    let best = lambda_best(&run(cfg, &clean, cfg.noise_iterations, false)?);
    let report = bounds::full_report_with(
        &cfg.sources,
        &cfg.grid,
        &cfg.kernel,
        &best,
        cfg.pi,
        cfg.tau,
        &ReportOptions { p_variant: cfg.p_variant, selection: None },
    )?;
    let selected = report.selected_samples.clone()?;
    let t_star = cfg.sources.locations();
    let m = cfg.grid.len();

    let point = |(i, &w_c): (usize, &f64)| -> NoiseRow {
        let empty = |w_norm: f64, w_norm_full: f64, status| NoiseRow {
            w_c,
            w_norm,
            lambda_dist: None,
            ratio: None,
            t_err: None,
            t_ratio: None,
            w_norm_full,
            lambda_dist_full: None,
            ratio_full: None,
            status,
        };
        let w = match uniform_noise(m, w_c, cfg.seed.wrapping_add(i as u64)) {
            Ok(w) => w,
            Err(_) => return empty(f64::NAN, f64::NAN, RowStatus::SolveFailed),
        };
        let (w_bar, w_full) = (norm2(&restrict(&w, &selected)), norm2(&w));
        if w_full == 0.0 {
            return empty(w_bar, w_full, RowStatus::ZeroNoise);
        }
        let noisy = synthesize(&cfg.sources, &cfg.grid, &cfg.kernel, Some(&w));
        let Ok(state) = noisy.and_then(|ms| run(cfg, &ms, cfg.noise_iterations, false)) else {
            return empty(w_bar, w_full, RowStatus::SolveFailed);
        };
        let lb = state.iterate;
        let d_bar = dist2(&restrict(&lb, &selected), &restrict(&best, &selected));
        let d_full = dist2(&lb, &best);
        let located: Result<Vec<f64>> =
            refined_locations(cfg, &lb).and_then(|v| v.into_iter().collect::<Result<Vec<f64>>>());
        let (t_err, status) = match located {
            Ok(t) => (Some(dist2(&t, t_star)), RowStatus::Ok),
            Err(_) => (None, RowStatus::RefineFailed),
        };
        NoiseRow {
            w_c,
            w_norm: w_bar,
            lambda_dist: Some(d_bar),
            ratio: (w_bar > 0.0).then(|| d_bar / w_bar),
            t_err,
            t_ratio: t_err.map(|e| e / w_full),
            w_norm_full: w_full,
            lambda_dist_full: Some(d_full),
            ratio_full: Some(d_full / w_full),
            status,
        }
    };
    let rows: Vec<NoiseRow> = cfg.noise_grid.par_iter().enumerate().map(point).collect();
    Ok(NoiseReport { rows, c_lambda: report.c_lambda, selected_samples: selected })
}

pub fn write_noise<W: Write>(report: &NoiseReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "w_c",
        "w_bar_norm",
        "lambda_bar_dist",
        "ratio",
        "C_lambda",
        "t_err",
        "t_ratio",
        "w_norm",
        "lambda_dist",
        "ratio_full",
        "status",
    ])?;
    let cl = report.c_lambda.clone().ok();
    for r in &report.rows {
        w.write_record([
            r.w_c.to_string(),
            r.w_norm.to_string(),
            fmt_opt(r.lambda_dist),
            fmt_opt(r.ratio),
            fmt_opt(cl),
            fmt_opt(r.t_err),
            fmt_opt(r.t_ratio),
            r.w_norm_full.to_string(),
            fmt_opt(r.lambda_dist_full),
            fmt_opt(r.ratio_full),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Bounds report at `lambda*_best` from a reference run.
pub fn cmd_bounds(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let state = run(cfg, &clean_measurements(cfg)?, cfg.reference_iterations, false)?;
    bounds::full_report_with(
        &cfg.sources,
        &cfg.grid,
        &cfg.kernel,
        &state.iterate,
        cfg.pi,
        cfg.tau,
        &ReportOptions { p_variant: cfg.p_variant, selection: None },
    )
}
