//! Perturbation constants and radii.
//!
//! Three chains are covered: dual error to location error (`C_t`, `delta_0`,
//! `delta_lambda`), location error to amplitude error (`C_a` and its radius),
//! and measurement noise to dual error (`C_lambda`, `delta_w`, `P`, built on the
//! reduced Jacobian `J*`). Every quantity carrying `exp(4 / sigma^2)` is
//! evaluated in log10 space.

use std::f64::consts::{E, LN_10, SQRT_2};
use std::io::Write;

use nalgebra::DMatrix;

use crate::certificate::Certificate;
use crate::error::{Error, Result};
use crate::kernel::{c2_constant, third_derivative_constant, Kernel};
use crate::model::{SampleGrid, SourceModel};
use crate::numerics::{self, norm2, DenseMatrix};
use crate::recovery::build_phi;

/// Linear values are only materialised below this log10.
pub const MAX_LINEAR_LOG10: f64 = 300.0;

fn curvature(q2: f64) -> Result<f64> {
    if q2 < 0.0 && q2.is_finite() {
        Ok(-q2)
    } else {
        Err(Error::InvalidCurvature(q2))
    }
}

fn check_sigma_m(sigma: f64, m: usize) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    Ok(())
}

/// Radius around `t*` in which the certificate stays concave.
pub fn radius_delta0(q2: f64, sigma: f64, m: usize, lambda_norm: f64) -> Result<f64> {
    let b = curvature(q2)?;
    check_sigma_m(sigma, m)?;
    let c = third_derivative_constant();
    Ok(sigma * sigma * b / ((m as f64).sqrt() * (4.0 + 2.0 * c * lambda_norm / sigma)))
}

/// Admissible dual perturbation, closed form.
pub fn radius_delta_lambda(q2: f64, sigma: f64, m: usize, lambda_norm: f64) -> Result<f64> {
    let b = curvature(q2)?;
    check_sigma_m(sigma, m)?;
    let r = lambda_norm / sigma;
    let c = third_derivative_constant();
    Ok(b * b * sigma.powi(3) * E.sqrt() / (4.0 * SQRT_2 * (2.0 + c * r) * m as f64))
}

/// Admissible dual perturbation built from `delta_0`.
pub fn radius_delta_lambda_composed(q2: f64, sigma: f64, m: usize, lambda_norm: f64) -> Result<f64> {
    let d0 = radius_delta0(q2, sigma, m, lambda_norm)?;
    Ok(sigma * E.sqrt() * q2.abs() / (2.0 * (2.0 * m as f64).sqrt()) * d0)
}

/// Location sensitivity `C_t`.
pub fn constant_ct(q2: f64, sigma: f64, m: usize, lambda_norm: f64) -> Result<f64> {
    let b = curvature(q2)?;
    check_sigma_m(sigma, m)?;
    let c = third_derivative_constant();
    let cl = c * lambda_norm;
    let first = 2.0 * (2.0 * m as f64).sqrt() * (2.0 * sigma + cl) / (b * sigma * E.sqrt() * (4.0 * sigma + cl));
    Ok(first + 2.0 * sigma / (4.0 * sigma + cl))
}

/// `C_t` in the compact form `(1 / (4 + cR)) [1 + 2 sqrt(2m)(2 + cR) / (|q''| sqrt e)]`.
///
/// Differs from [`constant_ct`] by a factor `sigma` in the first term and a
/// factor 2 in the second.
pub fn constant_ct_compact(q2: f64, sigma: f64, m: usize, lambda_norm: f64) -> Result<f64> {
    let b = curvature(q2)?;
    check_sigma_m(sigma, m)?;
    let cr = third_derivative_constant() * lambda_norm / sigma;
    Ok((1.0 + 2.0 * (2.0 * m as f64).sqrt() * (2.0 + cr) / (b * E.sqrt())) / (4.0 + cr))
}

/// A positive quantity kept in log10 form, with the linear value when representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogValue {
    pub log10: f64,
    pub value: Option<f64>,
}

impl LogValue {
    pub fn from_log10(log10: f64) -> Self {
        let value = (log10 < MAX_LINEAR_LOG10).then(|| 10f64.powf(log10));
        Self { log10, value }
    }
}

/// `log10(4 e^{4/sigma^2} sqrt(m) / sigma^2)`, shared by `C_a` and the `||E||_F` bound.
pub fn column_perturbation_log10(sigma: f64, m: usize) -> f64 {
    (4.0 * (m as f64).sqrt() / (sigma * sigma)).log10() + 4.0 / (sigma * sigma) / LN_10
}

/// Bound on `||Phi(t~) - Phi(t*)||_F` for a location error of norm `dt_norm`, in log10.
pub fn matrix_perturbation_bound_log10(sigma: f64, m: usize, dt_norm: f64) -> f64 {
    column_perturbation_log10(sigma, m) + dt_norm.log10()
}

/// Amplitude sensitivity `C_a = 4 e^{4/sigma^2} sqrt(m) ||a||_2 / (sigma^2 sigma_min(Phi))`.
pub fn constant_ca(sigma: f64, m: usize, a_norm: f64, sigma_min_phi: f64) -> Result<LogValue> {
    check_sigma_m(sigma, m)?;
    if !(sigma_min_phi > 0.0) {
        return Err(Error::NotInvertible { sigma_min: sigma_min_phi });
    }
    if !(a_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("amplitude norm must be positive, got {a_norm}")));
    }
    Ok(LogValue::from_log10(column_perturbation_log10(sigma, m) + a_norm.log10() - sigma_min_phi.log10()))
}

/// Location radius under which the perturbed `Phi` keeps full rank, in log10.
pub fn t_condition_radius_log10(sigma: f64, m: usize, sigma_max: f64, sigma_min: f64) -> Result<f64> {
    check_sigma_m(sigma, m)?;
    if !(sigma_min > 0.0 && sigma_max >= sigma_min) {
        return Err(Error::InvalidArgument(format!("need sigma_max >= sigma_min > 0, got {sigma_max}, {sigma_min}")));
    }
    let r2 = (sigma_min / sigma_max).powi(2);
    // sqrt(1 + r^2) - 1 without cancellation
    let bracket = r2 / ((1.0 + r2).sqrt() + 1.0);
    Ok((sigma * sigma * sigma_max / (4.0 * (m as f64).sqrt())).log10() - 4.0 / (sigma * sigma) / LN_10
        + bracket.log10())
}

pub fn t_condition_radius(sigma: f64, m: usize, sigma_max: f64, sigma_min: f64) -> Result<f64> {
    Ok(10f64.powf(t_condition_radius_log10(sigma, m, sigma_max, sigma_min)?))
}

/// Lower bound on the certificate curvature near `t*`.
pub fn b_lower_bound(q2: f64, sigma: f64, lambda_norm: f64) -> Result<f64> {
    let b = curvature(q2)?;
    let cl = third_derivative_constant() * lambda_norm;
    Ok(b * (1.0 - cl / (4.0 * sigma + 2.0 * cl)))
}

/// `Delta2_bar`, with the worst case `||lambda_delta|| = ||lambda*|| + delta_lambda`
/// and `||lambda - lambda*|| = delta_lambda`.
pub fn constant_delta2(
    k: usize,
    m: usize,
    sigma: f64,
    ct: f64,
    lambda_star_norm: f64,
    delta_lambda: f64,
    b_lower: f64,
) -> Result<f64> {
    check_sigma_m(sigma, m)?;
    let sm = (m as f64).sqrt();
    let den = sigma * sigma * b_lower - 2.0 * sm * delta_lambda;
    if !(den > 0.0) {
        return Err(Error::RadiusTooLarge { margin: den });
    }
    let num = (c2_constant() * ct * sm * (lambda_star_norm + delta_lambda) + 2.0 * SQRT_2 / E.sqrt() * sigma)
        * (k as f64).sqrt();
    Ok(num / (den * den))
}

/// Which grouping of terms to use for `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PVariant {
    /// Terms as stated alongside `C_lambda` and `delta_w`.
    #[default]
    Theorem,
    /// Adds `2 C_t` to the `1 / sigma^2` group, as in the Jacobian perturbation bound.
    Lemma,
}

#[allow(clippy::too_many_arguments)]
pub fn constant_p_variant(
    k: usize,
    _m: usize,
    sigma: f64,
    pi: f64,
    tau: f64,
    ct: f64,
    delta2: f64,
    variant: PVariant,
) -> f64 {
    let kf = k as f64;
    let sk = kf.sqrt();
    let se = E.sqrt();
    let mut inv_s2 = 2.0 * sk * ct * ct * pi + 4.0 * kf * ct * delta2 * tau * pi;
    if variant == PVariant::Lemma {
        inv_s2 += 2.0 * ct;
    }
    let inv_s = (2.0 * kf).sqrt() * ct / se
        + 4.0 * sk * ct * ct * pi
        + 2.0 * SQRT_2 * delta2 * pi / se
        + 8.0 * kf * ct * delta2 * tau * pi
        + (2.0 * kf).sqrt() * delta2 * pi / se
        + (2.0 / E).sqrt() * ct;
    SQRT_2 * kf * (inv_s2 / (sigma * sigma) + inv_s / sigma)
}

pub fn constant_p(k: usize, m: usize, sigma: f64, pi: f64, tau: f64, ct: f64, delta2: f64) -> f64 {
    constant_p_variant(k, m, sigma, pi, tau, ct, delta2, PVariant::Theorem)
}

/// `(C_lambda, delta_w) = (2 / sigma_min(J), sigma_min(J)^2 / (4 P))`.
pub fn constant_clambda_and_deltaw(j: &DenseMatrix, p: f64) -> Result<(f64, f64)> {
    let smin = numerics::svd(j)?.sigma_min();
    clambda_deltaw_from_sigma(smin, p)
}

fn clambda_deltaw_from_sigma(smin: f64, p: f64) -> Result<(f64, f64)> {
    if !(smin > 0.0) {
        return Err(Error::NotInvertible { sigma_min: smin });
    }
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("P must be positive, got {p}")));
    }
    Ok((2.0 / smin, smin * smin / (4.0 * p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DenseMatrix,
    /// `2k` sample indices (rows), ascending.
    pub selected_samples: Vec<usize>,
    /// `k` sample indices whose dual entries are kept as unknowns, ascending.
    pub kept_lambda: Vec<usize>,
    pub kept_rule: KeptRule,
}

/// How the kept dual entries of `J*` were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeptRule {
    /// Nearest selected sample per source.
    Nearest,
    /// The nearest rule gave a numerically singular `J*`; the `k`-subset of the
    /// selected samples with the largest `sigma_min(J*)` was used instead.
    BestConditioned,
    /// Indices supplied by the caller.
    Explicit,
}

impl KeptRule {
    pub fn as_str(self) -> &'static str {
        match self {
            KeptRule::Nearest => "nearest",
            KeptRule::BestConditioned => "best_conditioned",
            KeptRule::Explicit => "explicit",
        }
    }
}

/// Subsets enumerated by the best-conditioned fallback before giving up.
pub const MAX_KEPT_SUBSETS: usize = 1 << 16;

fn is_singular(j: &DenseMatrix, smin: f64) -> bool {
    smin <= f64::EPSILON * j.amax() * (j.nrows().max(j.ncols()) as f64)
}

fn sigma_min_of(j: &DenseMatrix) -> Result<f64> {
    Ok(numerics::svd(j)?.sigma_min())
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Nearest-rule Jacobian, or the best-conditioned kept subset when that one is singular.
pub fn jacobian_with_fallback(
    src: &SourceModel,
    grid: &SampleGrid,
    kernel: &Kernel,
    q2: &[f64],
    selected: &[usize],
    nearest_kept: &[usize],
) -> Result<Jacobian> {
    let matrix = jacobian_from_indices(src, grid, kernel, q2, selected, nearest_kept)?;
    if !is_singular(&matrix, sigma_min_of(&matrix)?) {
        return Ok(Jacobian {
            matrix,
            selected_samples: selected.to_vec(),
            kept_lambda: nearest_kept.to_vec(),
            kept_rule: KeptRule::Nearest,
        });
    }
    let (n, k) = (selected.len(), nearest_kept.len());
    let mut comb: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>, DenseMatrix)> = None;
    for _ in 0..MAX_KEPT_SUBSETS {
        let kept: Vec<usize> = comb.iter().map(|&c| selected[c]).collect();
        let j = jacobian_from_indices(src, grid, kernel, q2, selected, &kept)?;
        let smin = sigma_min_of(&j)?;
        if best.as_ref().is_none_or(|b| smin > b.0) {
            best = Some((smin, kept, j));
        }
        if !next_combination(&mut comb, n) {
            break;
        }
    }
    match best {
        Some((smin, kept, j)) if !is_singular(&j, smin) => Ok(Jacobian {
            matrix: j,
            selected_samples: selected.to_vec(),
            kept_lambda: kept,
            kept_rule: KeptRule::BestConditioned,
        }),
        // every subset is singular: report the nearest-rule matrix
        _ => Ok(Jacobian {
            matrix,
            selected_samples: selected.to_vec(),
            kept_lambda: nearest_kept.to_vec(),
            kept_rule: KeptRule::Nearest,
        }),
    }
}

/// Two nearest samples per source, next-nearest on collision, and for each
/// source the nearest selected sample not already kept.
pub fn select_samples(src: &SourceModel, grid: &SampleGrid) -> Result<(Vec<usize>, Vec<usize>)> {
    let (k, m) = (src.len(), grid.len());
    if m < 2 * k {
        return Err(Error::InsufficientSamples { needed: 2 * k, available: m });
    }
    let s = grid.samples();
    let mut taken = vec![false; m];
    let by_distance = |t: f64| {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| (s[a] - t).abs().total_cmp(&(s[b] - t).abs()).then(a.cmp(&b)));
        order
    };
    let mut selected = Vec::with_capacity(2 * k);
    for &t in src.locations() {
        let picks: Vec<usize> = by_distance(t).into_iter().filter(|&j| !taken[j]).take(2).collect();
        for &j in &picks {
            taken[j] = true;
        }
        selected.extend(picks);
    }
    selected.sort_unstable();
    let mut kept = Vec::with_capacity(k);
    for &t in src.locations() {
        let j = by_distance(t).into_iter().find(|j| selected.contains(j) && !kept.contains(j));
        kept.extend(j);
    }
    kept.sort_unstable();
    Ok((selected, kept))
}

/// `J = [J_lambda | J_nu]` over the given rows and kept columns, with curvatures `q2[i] = q''(t_i*)`.
pub fn jacobian_from_indices(
    src: &SourceModel,
    grid: &SampleGrid,
    kernel: &Kernel,
    q2: &[f64],
    selected: &[usize],
    kept: &[usize],
) -> Result<DenseMatrix> {
    let k = src.len();
    if q2.len() != k {
        return Err(Error::InvalidArgument("one curvature per source is required".into()));
    }
    for &v in q2 {
        curvature(v)?;
    }
    if selected.iter().chain(kept).any(|&j| j >= grid.len()) {
        return Err(Error::InvalidArgument("sample index out of range".into()));
    }
    let s = grid.samples();
    let (t, a) = (src.locations(), src.amplitudes());
    let cols = kept.len() + k;
    Ok(DMatrix::from_fn(selected.len(), cols, |r, c| {
        let sj = s[selected[r]];
        if c < kept.len() {
            let sl = s[kept[c]];
            (0..k).map(|i| a[i] * kernel.d1(t[i] - sj) * kernel.d1(t[i] - sl) / q2[i]).sum()
        } else {
            -kernel.phi(t[c - kept.len()] - sj)
        }
    }))
}

/// Reduced Jacobian at the true sources, with curvatures read from `cert`.
pub fn assemble_jacobian(
    src: &SourceModel,
    grid: &SampleGrid,
    kernel: &Kernel,
    cert: &Certificate<'_>,
) -> Result<Jacobian> {
    let (selected, kept) = select_samples(src, grid)?;
    let q2: Vec<f64> = src.locations().iter().map(|&t| cert.d2(t)).collect();
    jacobian_with_fallback(src, grid, kernel, &q2, &selected, &kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceBounds {
    pub location: f64,
    pub q2: f64,
    pub delta0: Result<f64>,
    pub delta_lambda: Result<f64>,
    pub ct: Result<f64>,
    pub ct_compact: Result<f64>,
    pub b_lower: Result<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub sigma: f64,
    pub m: usize,
    pub k: usize,
    pub pi: f64,
    pub tau: f64,
    pub lambda_norm: f64,
    /// `||lambda*||_2 / sigma`.
    pub r: f64,
    pub c: f64,
    pub c2: f64,
    pub sources: Vec<SourceBounds>,
    /// Largest `C_t` over sources.
    pub ct_max: Result<f64>,
    /// Smallest `delta_lambda` over sources.
    pub delta_lambda_min: Result<f64>,
    pub sigma_max_phi: Result<f64>,
    pub sigma_min_phi: Result<f64>,
    pub ca: Result<LogValue>,
    pub t_condition_radius_log10: Result<f64>,
    pub selected_samples: Result<Vec<usize>>,
    pub kept_lambda: Result<Vec<usize>>,
    pub kept_rule: Result<KeptRule>,
    pub jacobian: Result<DenseMatrix>,
    pub sigma_min_j: Result<f64>,
    /// Worst case over sources.
    pub delta2: Result<f64>,
    pub p: Result<f64>,
    pub p_variant: PVariant,
    pub c_lambda: Result<f64>,
    pub delta_w: Result<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub p_variant: PVariant,
    /// Replaces the nearest-sample rule for `J*` with explicit `(rows, kept)` indices.
    pub selection: Option<(Vec<usize>, Vec<usize>)>,
}

fn all_ok<T: Clone>(items: impl IntoIterator<Item = Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}

pub fn full_report(
    src: &SourceModel,
    grid: &SampleGrid,
    kernel: &Kernel,
    lambda_star: &[f64],
    pi: f64,
    tau: f64,
) -> Result<BoundsReport> {
    full_report_with(src, grid, kernel, lambda_star, pi, tau, &ReportOptions::default())
}

/// Every constant for the configuration, each field failing on its own.
///
/// Only a dual vector of the wrong length is fatal.
#[allow(clippy::too_many_arguments)]
pub fn full_report_with(
    src: &SourceModel,
    grid: &SampleGrid,
    kernel: &Kernel,
    lambda_star: &[f64],
    pi: f64,
    tau: f64,
    opts: &ReportOptions,
) -> Result<BoundsReport> {
    let cert = Certificate::new(lambda_star, grid, *kernel)?;
    let (sigma, m, k) = (kernel.sigma(), grid.len(), src.len());
    let lambda_norm = norm2(lambda_star);

    let sources: Vec<SourceBounds> = src
        .locations()
        .iter()
        .map(|&t| {
            let q2 = cert.d2(t);
            SourceBounds {
                location: t,
                q2,
                delta0: radius_delta0(q2, sigma, m, lambda_norm),
                delta_lambda: radius_delta_lambda(q2, sigma, m, lambda_norm),
                ct: constant_ct(q2, sigma, m, lambda_norm),
                ct_compact: constant_ct_compact(q2, sigma, m, lambda_norm),
                b_lower: b_lower_bound(q2, sigma, lambda_norm),
            }
        })
        .collect();
    let ct_max = all_ok(sources.iter().map(|s| s.ct.clone())).map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max));
    let delta_lambda_min =
        all_ok(sources.iter().map(|s| s.delta_lambda.clone())).map(|v| v.into_iter().fold(f64::INFINITY, f64::min));

    let phi_svd = numerics::svd(&build_phi(grid, kernel, src.locations()));
    let sigma_max_phi = phi_svd.as_ref().map(|s| s.sigma_max()).map_err(Clone::clone);
    let sigma_min_phi = phi_svd.as_ref().map(|s| s.sigma_min()).map_err(Clone::clone);
    let ca = sigma_min_phi.clone().and_then(|smin| constant_ca(sigma, m, src.amplitude_l2_norm(), smin));
    let t_cond = match (&sigma_max_phi, &sigma_min_phi) {
        (Ok(smax), Ok(smin)) => t_condition_radius_log10(sigma, m, *smax, *smin),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };

    let q2s: Vec<f64> = sources.iter().map(|s| s.q2).collect();
    let selection = match &opts.selection {
        Some(sel) => Ok(sel.clone()),
        None => select_samples(src, grid),
    };
    let jac = selection.clone().and_then(|(rows, kept)| match opts.selection {
        Some(_) => jacobian_from_indices(src, grid, kernel, &q2s, &rows, &kept).map(|matrix| Jacobian {
            matrix,
            selected_samples: rows,
            kept_lambda: kept,
            kept_rule: KeptRule::Explicit,
        }),
        None => jacobian_with_fallback(src, grid, kernel, &q2s, &rows, &kept),
    });
    let jacobian = jac.clone().map(|j| j.matrix);
    let sigma_min_j = jacobian.clone().and_then(|j| {
        let smin = sigma_min_of(&j)?;
        if is_singular(&j, smin) {
            Err(Error::NotInvertible { sigma_min: smin })
        } else {
            Ok(smin)
        }
    });

    let delta2 = delta_lambda_min.clone().and_then(|dl| {
        let per_source = sources.iter().map(|s| {
            let (ct, b) = (s.ct.clone()?, s.b_lower.clone()?);
            constant_delta2(k, m, sigma, ct, lambda_norm, dl, b)
        });
        all_ok(per_source).map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max))
    });
    let p = match (&ct_max, &delta2) {
        (Ok(ct), Ok(d2)) => Ok(constant_p_variant(k, m, sigma, pi, tau, *ct, *d2, opts.p_variant)),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let cl_dw = match (&sigma_min_j, &p) {
        (Ok(s), Ok(p)) => clambda_deltaw_from_sigma(*s, *p),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    // C_lambda only needs the Jacobian
    let c_lambda = sigma_min_j.clone().map(|s| 2.0 / s);

    Ok(BoundsReport {
        sigma,
        m,
        k,
        pi,
        tau,
        lambda_norm,
        r: lambda_norm / sigma,
        c: third_derivative_constant(),
        c2: c2_constant(),
        sources,
        ct_max,
        delta_lambda_min,
        sigma_max_phi,
        sigma_min_phi,
        ca,
        t_condition_radius_log10: t_cond,
        selected_samples: selection.clone().map(|s| s.0),
        kept_lambda: jac.clone().map(|j| j.kept_lambda).or_else(|_| selection.map(|s| s.1)),
        kept_rule: jac.map(|j| j.kept_rule),
        jacobian,
        sigma_min_j,
        delta2,
        p,
        p_variant: opts.p_variant,
        c_lambda,
        delta_w: cl_dw.map(|v| v.1),
    })
}

fn fmt_f(v: &Result<f64>) -> String {
    match v {
        Ok(x) => x.to_string(),
        Err(e) => format!("error: {e}"),
    }
}

fn fmt_idx(v: &Result<Vec<usize>>) -> String {
    match v {
        Ok(ix) => ix.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(" "),
        Err(e) => format!("error: {e}"),
    }
}

impl BoundsReport {
    /// Ordered `(key, value)` pairs; sample indices are 1-based.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("sigma".into(), self.sigma.to_string()),
            ("m".into(), self.m.to_string()),
            ("k".into(), self.k.to_string()),
            ("pi".into(), self.pi.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("lambda_norm".into(), self.lambda_norm.to_string()),
            ("R".into(), self.r.to_string()),
            ("c".into(), self.c.to_string()),
            ("c2".into(), self.c2.to_string()),
        ];
        for (i, s) in self.sources.iter().enumerate() {
            let i = i + 1;
            out.push((format!("t_{i}"), s.location.to_string()));
            out.push((format!("q2_{i}"), s.q2.to_string()));
            out.push((format!("delta0_{i}"), fmt_f(&s.delta0)));
            out.push((format!("delta_lambda_{i}"), fmt_f(&s.delta_lambda)));
            out.push((format!("Ct_{i}"), fmt_f(&s.ct)));
            out.push((format!("Ct_compact_{i}"), fmt_f(&s.ct_compact)));
            let ratio = match (&s.ct, &s.ct_compact) {
                (Ok(a), Ok(b)) => Ok(a / b),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            out.push((format!("Ct_ratio_{i}"), fmt_f(&ratio)));
            out.push((format!("B_lower_{i}"), fmt_f(&s.b_lower)));
        }
        out.push(("Ct_max".into(), fmt_f(&self.ct_max)));
        out.push(("delta_lambda_min".into(), fmt_f(&self.delta_lambda_min)));
        out.push(("sigma_max_phi".into(), fmt_f(&self.sigma_max_phi)));
        out.push(("sigma_min_phi".into(), fmt_f(&self.sigma_min_phi)));
        out.push(("Ca_log10".into(), fmt_f(&self.ca.clone().map(|c| c.log10))));
        let ca_lin = match &self.ca {
            Ok(LogValue { value: Some(v), .. }) => v.to_string(),
            Ok(_) => "overflow".into(),
            Err(e) => format!("error: {e}"),
        };
        out.push(("Ca".into(), ca_lin));
        out.push(("t_condition_radius_log10".into(), fmt_f(&self.t_condition_radius_log10)));
        out.push(("selected_samples".into(), fmt_idx(&self.selected_samples)));
        out.push(("kept_lambda".into(), fmt_idx(&self.kept_lambda)));
        let rule = match &self.kept_rule {
            Ok(r) => r.as_str().to_string(),
            Err(e) => format!("error: {e}"),
        };
        out.push(("kept_rule".into(), rule));
        out.push(("sigma_min_J".into(), fmt_f(&self.sigma_min_j)));
        out.push(("Delta2_bar".into(), fmt_f(&self.delta2)));
        let variant = match self.p_variant {
            PVariant::Theorem => "theorem",
            PVariant::Lemma => "lemma",
        };
        out.push(("P_variant".into(), variant.into()));
        out.push(("P".into(), fmt_f(&self.p)));
        out.push(("C_lambda".into(), fmt_f(&self.c_lambda)));
        out.push(("delta_w".into(), fmt_f(&self.delta_w)));
        out
    }

    pub fn write_kv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in self.entries() {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }

    /// The same entries as one CSV header and one row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let entries = self.entries();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(entries.iter().map(|e| e.0.as_str()))?;
        w.write_record(entries.iter().map(|e| e.1.as_str()))?;
        w.flush()?;
        Ok(())
    }
}
