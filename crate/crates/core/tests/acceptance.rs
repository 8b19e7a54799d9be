//! Exit criteria. Each test prints one `criterion N ... PASS|FAIL` line.
//!
//! Run with `cargo test -p spikedual --test acceptance -- --nocapture --test-threads=1`
//! to see the lines in order.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikedual::bounds;
use spikedual::certificate::{Certificate, DEFAULT_GRID_POINTS, DEFAULT_MERGE_TOL};
use spikedual::experiments::{self, RowStatus};
use spikedual::model::synthesize;
use spikedual::numerics;
use spikedual::recovery::{self, build_phi};
use spikedual::solver::{self, Cut};
use spikedual::{BundleState, ExperimentConfig, Kernel, PenaltyProblem, SampleGrid, SolveOptions, SourceModel};

use common::{dist2, gauss, global_max, richardson};

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    // the raw handle bypasses the harness capture, so passing criteria report too
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

struct Run {
    cfg: ExperimentConfig,
    problem: PenaltyProblem,
    state: BundleState,
    elapsed: Duration,
}

fn solve_recorded(cfg: ExperimentConfig, iters: usize) -> Run {
    let ms = synthesize(&cfg.sources, &cfg.grid, &cfg.kernel, None).unwrap();
    let problem = PenaltyProblem::new(&ms, cfg.kernel, cfg.pi, cfg.tau).unwrap();
    let start = Instant::now();
    let state = solver::solve(
        &problem,
        SolveOptions { alpha: cfg.alpha, max_iters: iters, record_iterates: true, ..Default::default() },
    )
    .unwrap();
    Run { cfg, problem, state, elapsed: start.elapsed() }
}

fn five_spike_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| solve_recorded(common::five_spikes(), 2000))
}

fn three_spike_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = common::three_spikes();
        let iters = cfg.reference_iterations;
        solve_recorded(cfg, iters)
    })
}

#[test]
fn criterion_01_kernel_derivatives_and_constants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for sigma in [0.05, 0.07, 0.1, 0.3] {
        let k = Kernel::new(sigma).unwrap();
        let f = |t: f64| gauss(sigma, t);
        for _ in 0..200 {
            let t = rng.gen_range(-3.0 * sigma..3.0 * sigma);
            for order in 1..=3u8 {
                let fd = richardson(&f, t, 0.1 * sigma, order, 3);
                let exact = k.derivative(t, order).unwrap();
                worst = worst.max(((exact - fd) / fd).abs());
            }
        }
    }
    let mut worst_sup: f64 = 0.0;
    for sigma in [0.05, 0.07, 0.1, 0.3] {
        let k = Kernel::new(sigma).unwrap();
        let b = k.deriv_sup_bounds();
        for order in 1..=3u8 {
            let g = |t: f64| k.derivative(t, order).unwrap().abs();
            let (_, v) = global_max(&g, -5.0 * sigma, 5.0 * sigma, 20001);
            worst_sup = worst_sup.max(((b.get(order).unwrap() - v) / v).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "kernel derivatives and extremal constants",
        worst < 1e-6 && worst_sup < 1e-10 && elapsed < Duration::from_secs(1),
        format!(
            "max rel err derivatives {worst:.2e} (< 1e-6), suprema {worst_sup:.2e} (< 1e-10), {elapsed:.2?} (< 1 s)"
        ),
    );
}

#[test]
fn criterion_02_five_spike_reproduction() {
    let run = five_spike_run();
    let cert = Certificate::new(&run.state.iterate, &run.cfg.grid, run.cfg.kernel).unwrap();
    let maxima = cert.global_maximizers(DEFAULT_GRID_POINTS, DEFAULT_MERGE_TOL).unwrap();
    let truth = run.cfg.sources.locations();
    let loc_err = if maxima.len() == truth.len() {
        maxima.locations.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let ms = synthesize(&run.cfg.sources, &run.cfg.grid, &run.cfg.kernel, None).unwrap();
    let amp_err = match recovery::recover(&cert, &ms.y) {
        Ok(r) if r.len() == 5 => r.amplitudes.iter().map(|a| (a - 1.0).abs()).fold(0.0, f64::max),
        _ => f64::INFINITY,
    };
    verdict(
        2,
        "five-spike reproduction",
        loc_err <= 5e-4 && amp_err <= 1e-3 && run.state.iterations() <= 2000 && run.elapsed < Duration::from_secs(120),
        format!(
            "{} maximizers, max |t - t*| {loc_err:.2e} (<= 5e-4), max |a - 1| {amp_err:.2e} (<= 1e-3), {} iterations, {:.2?} (< 2 min)",
            maxima.len(),
            run.state.iterations(),
            run.elapsed
        ),
    );
}

#[test]
fn criterion_03_three_spike_reproduction() {
    let run = three_spike_run();
    let cert = Certificate::new(&run.state.iterate, &run.cfg.grid, run.cfg.kernel).unwrap();
    let errs: Vec<f64> = run
        .cfg
        .sources
        .locations()
        .iter()
        .map(|&t| cert.refine_location(t).map_or(f64::INFINITY, |r| (r - t).abs()))
        .collect();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        3,
        "three-spike reproduction",
        worst <= 1e-6 && run.elapsed < Duration::from_secs(300),
        format!(
            "|t_i - t_i*| = [{}] (<= 1e-6), {} iterations (fixed point {}), {:.2?} (< 5 min)",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", "),
            run.state.iterations(),
            run.state.stalled,
            run.elapsed
        ),
    );
}

#[test]
fn criterion_04_location_dual_ratio() {
    let run = three_spike_run();
    let rep = experiments::exp_lambda_t_from(&run.cfg, &run.state).unwrap();
    let mut violations = Vec::new();
    let mut unverified = 0;
    let mut worst: f64 = 0.0;
    for r in &rep.rows {
        match (r.status, r.ratio) {
            (RowStatus::Ok, Some(v)) => {
                worst = worst.max(v / r.ct);
                if v > 2.0 * r.ct {
                    violations.push(format!(
                        "p={} source {} dist {:.3e} t_err {:.3e} ratio/C_t {:.2}",
                        r.p,
                        r.source,
                        r.lambda_dist,
                        r.t_err.unwrap_or(f64::NAN),
                        v / r.ct
                    ));
                }
            }
            _ => unverified += 1,
        }
    }
    // location error of the reference dual vector itself
    let cert = Certificate::new(&rep.lambda_best, &run.cfg.grid, run.cfg.kernel).unwrap();
    let ref_err: Vec<String> = run
        .cfg
        .sources
        .locations()
        .iter()
        .map(|&t| cert.refine_location(t).map_or("n/a".into(), |r| format!("{:.2e}", (r - t).abs())))
        .collect();
    let checked = rep.rows.len() - unverified;
    verdict(
        4,
        "location error against dual error",
        violations.is_empty() && unverified == 0 && checked > 0,
        format!(
            "{checked} rows checked, {} above 2 C_t [{}], {unverified} unverifiable, max ratio / C_t {worst:.3}; \
             {} window iterates dropped below threshold {:.2e} (last step {:.2e}, rounding floor {:.2e}); \
             reference location errors [{}]",
            violations.len(),
            violations.join("; "),
            rep.skipped,
            rep.threshold,
            rep.last_step,
            rep.rounding_floor,
            ref_err.join(", ")
        ),
    );
}

#[test]
fn criterion_05_amplitude_location_ratio() {
    let run = three_spike_run();
    let rep = experiments::exp_t_a_from(&run.cfg, &run.state).unwrap();
    let ratios: Vec<f64> = rep.rows.iter().filter_map(|r| r.ratio).collect();
    let above = ratios.iter().filter(|r| r.log10() >= rep.ca_log10).count();
    let half = ratios.len() / 2;
    let first_max = ratios[..half].iter().copied().fold(0.0, f64::max);
    let second_max = ratios[half..].iter().copied().fold(0.0, f64::max);
    let monotone_growth = ratios.windows(2).all(|w| w[1] >= w[0]) && ratios.first() < ratios.last();
    let bounded = second_max <= first_max && !monotone_growth;
    verdict(
        5,
        "amplitude error against location error",
        !ratios.is_empty() && above == 0 && bounded,
        format!(
            "{} rows, {above} with log10 ratio >= C_a log10 {:.2}, max ratio first half {first_max:.3e} second half {second_max:.3e}",
            ratios.len(),
            rep.ca_log10
        ),
    );
}

#[test]
fn criterion_06_noise_sweep() {
    let cfg = common::three_spikes();
    let start = Instant::now();
    let rep = experiments::exp_noise(&cfg).unwrap();
    let elapsed = start.elapsed();
    let c_lambda = rep.c_lambda.clone().unwrap_or(f64::NAN);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for r in &rep.rows {
        match r.ratio {
            Some(v) if r.status == RowStatus::Ok && v <= c_lambda => worst = worst.max(v / c_lambda),
            Some(v) => {
                violations += 1;
                worst = worst.max(v / c_lambda);
            }
            None => violations += 1,
        }
    }
    let mean = |lo: f64, hi: f64| {
        let v: Vec<f64> =
            rep.rows.iter().filter(|r| r.w_c > lo && r.w_c <= hi * (1.0 + 1e-12)).filter_map(|r| r.t_ratio).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (first, last) = (mean(1e-6, 1e-5), mean(1e-2, 1e-1));
    let no_growth = last <= 3.0 * first;
    verdict(
        6,
        "dual error against noise",
        violations == 0 && no_growth && elapsed < Duration::from_secs(1800),
        format!(
            "{} noise levels, C_lambda {c_lambda:.3e}, {violations} restricted ratios above C_lambda (max ratio / C_lambda {worst:.2e}); \
             t ratio mean first decade {first:.3e}, last decade {last:.3e} (<= 3x); {elapsed:.2?} (< 30 min)",
            rep.rows.len()
        ),
    );
}

#[test]
fn criterion_07_column_perturbation_bound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let grid = SampleGrid::equispaced(21).unwrap();
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for i in 0..1000 {
        let sigma = if i % 2 == 0 { 0.07 } else { 0.1 };
        let k = Kernel::new(sigma).unwrap();
        let n = rng.gen_range(1..=5);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let scale = 10f64.powf(rng.gen_range(-9.0..-1.0));
        let tt: Vec<f64> = t.iter().map(|x| x + scale * rng.gen_range(-1.0..1.0)).collect();
        let dn = dist2(&t, &tt);
        let e = (build_phi(&grid, &k, &tt) - build_phi(&grid, &k, &t)).norm();
        let bound = bounds::matrix_perturbation_bound_log10(sigma, 21, dn);
        let margin = bound - e.log10();
        min_margin = min_margin.min(margin);
        if !(margin >= 0.0) {
            violations += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        7,
        "column perturbation bound",
        violations == 0 && elapsed < Duration::from_secs(10),
        format!("1000 pairs, {violations} violations, smallest log10 margin {min_margin:.2}, {elapsed:.2?} (< 10 s)"),
    );
}

#[test]
fn criterion_08_dual_radius_two_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q2 = -10f64.powf(rng.gen_range(-3.0..8.0));
        let sigma = rng.gen_range(0.02..0.5);
        let m = rng.gen_range(1..200);
        let lambda_norm = 10f64.powf(rng.gen_range(-2.0..6.0));
        let a = bounds::radius_delta_lambda(q2, sigma, m, lambda_norm).unwrap();
        let b = bounds::radius_delta_lambda_composed(q2, sigma, m, lambda_norm).unwrap();
        worst = worst.max(((a - b) / a).abs());
    }
    verdict(8, "dual radius two-path identity", worst <= 1e-12, format!("max rel diff {worst:.2e} (<= 1e-12)"));
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Model value with compensated sums. Plain evaluation at `|lambda| ~ 1e5`
/// carries errors of several 1e-9, too coarse for the checks below.
fn model_exact(cuts: &[Cut], x: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for c in cuts {
        let (mut s, mut err) = (c.value, 0.0);
        for (g, (xi, ai)) in c.slope.iter().zip(x.iter().zip(&c.anchor)) {
            let (d, de) = two_sum(*xi, -*ai);
            let p = g * d;
            let (s2, se) = two_sum(s, p);
            s = s2;
            err += se + g.mul_add(d, -p) + g * de;
        }
        best = best.max(s + err);
    }
    best
}

/// Largest violation of `model(x_{l+1}) <= level_l` over projected steps.
fn level_feasibility(run: &Run) -> f64 {
    let st = &run.state;
    let h = st.iterate_history.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for (l, level) in st.level_history.iter().enumerate() {
        if st.gap_history[l] <= 1e-12 || l + 1 >= h.len() {
            break;
        }
        let x = &h[l + 1];
        worst = worst.max(model_exact(&st.cuts[..=l], x) - level);
        worst = worst.max(x.iter().map(|v| v.abs() - run.cfg.tau).fold(0.0, f64::max));
    }
    worst
}

fn model_below_objective(run: &Run, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let st = &run.state;
    let tau = run.cfg.tau;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100 {
        let x: Vec<f64> = if i % 2 == 0 {
            (0..st.iterate.len()).map(|_| rng.gen_range(-tau..tau)).collect()
        } else {
            let r = 10f64.powf(rng.gen_range(-6.0..3.0));
            st.best_iterate.iter().map(|b| (b + r * rng.gen_range(-1.0..1.0)).clamp(-tau, tau)).collect()
        };
        let psi = run.problem.psi(&x).unwrap();
        worst = worst.max(model_exact(&st.cuts, &x) - psi);
    }
    worst
}

#[test]
fn criterion_09_bundle_invariants() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, run, seed) in [("five-spike", five_spike_run(), 1), ("three-spike", three_spike_run(), 2)] {
        let st = &run.state;
        let mu_ok = st.mu_history.windows(2).all(|w| w[1] <= w[0]);
        let nu_ok = st.nu_history.windows(2).all(|w| w[1] >= w[0]);
        let min_gap = st.mu_history.iter().zip(&st.nu_history).map(|(m, n)| m - n).fold(f64::INFINITY, f64::min);
        let lp_drop = st.lp_value_history.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        let feas = level_feasibility(run);
        let probe = model_below_objective(run, seed);
        let ok = mu_ok && nu_ok && min_gap >= -1e-8 && feas <= 1e-8 && probe <= 1e-9;
        pass &= ok;
        lines.push(format!(
            "{name}: mu monotone {mu_ok}, nu monotone {nu_ok}, min(mu - nu) {min_gap:.1e} (>= -1e-8), \
             level violation {feas:.1e} (<= 1e-8), max (model - psi) {probe:.3e} (<= 1e-9), \
             largest raw LP value drop {lp_drop:.1e}, {} fallbacks",
            st.projection_fallbacks
        ));
    }
    verdict(9, "bundle invariants", pass, lines.join("; "));
}

#[test]
fn criterion_10_smallest_singular_value_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut violations = 0;
    for _ in 0..1000 {
        let (r, c) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let scale = 10f64.powf(rng.gen_range(-8.0..0.5));
        let a = DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let e = DMatrix::from_fn(r, c, |_, _| scale * rng.gen_range(-1.0..1.0));
        let sa = numerics::svd(&a).unwrap();
        let sae = numerics::svd(&(&a + &e)).unwrap().sigma_min();
        // roundoff of the two decompositions
        let slack = 64.0 * f64::EPSILON * (sa.sigma_max() + e.norm());
        if sae < sa.sigma_min() - e.norm() - slack {
            violations += 1;
        }
    }
    verdict(
        10,
        "smallest singular value perturbation",
        violations == 0,
        format!("1000 pairs, {violations} violations"),
    );
}

#[test]
fn criterion_11_least_squares_amplitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let sigma = rng.gen_range(0.05..0.1);
        let k = rng.gen_range(1..=4);
        let mut t: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).any(|w| w[1] - w[0] < 2.0 * sigma) {
            continue;
        }
        let a: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..2.0)).collect();
        let grid = SampleGrid::equispaced(rng.gen_range(21..41)).unwrap();
        let kern = Kernel::new(sigma).unwrap();
        let y = synthesize(&SourceModel::new(t.clone(), a.clone()).unwrap(), &grid, &kern, None).unwrap().y;
        let got = recovery::recover_amplitudes(&grid, &kern, &t, &y).unwrap();
        worst = got.iter().zip(&a).map(|(g, e)| ((g - e) / e).abs()).fold(worst, f64::max);
        done += 1;
    }
    verdict(
        11,
        "least-squares amplitudes",
        worst <= 1e-10,
        format!("100 configurations, max rel err {worst:.2e} (<= 1e-10)"),
    );
}
