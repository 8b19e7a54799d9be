//! The dual certificate `q(t) = sum_j lambda_j phi(t - s_j)`.
//!
//! Global maximisation over `[0, 1]` is done by dense sampling followed by
//! safeguarded Newton on `q'`. The default grid (4001 points, spacing 2.5e-4)
//! resolves every kernel width of interest (`sigma >= 0.05`) with at least
//! 200 points per `sigma`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::{SampleGrid, SourceModel};

pub const DEFAULT_GRID_POINTS: usize = 4001;
pub const DEFAULT_MERGE_TOL: f64 = 1e-4;
/// Fraction of `sup - inf` (on the grid) within which a local maximum counts as global.
pub const DEFAULT_VALUE_TOL_FRACTION: f64 = 1e-3;

const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_GRAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct Certificate<'a> {
    lambda: &'a [f64],
    grid: &'a SampleGrid,
    kernel: Kernel,
}

/// Stationary local maxima of `q` attaining (within tolerance) its global supremum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaximizerSet {
    pub locations: Vec<f64>,
    pub values: Vec<f64>,
    pub curvatures: Vec<f64>,
}

impl MaximizerSet {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// `|q(t_i) - 1|` per source.
    pub source_deviation: Vec<f64>,
    /// Supremum of `q` outside the `merge_tol` neighbourhoods of the sources.
    pub away_sup: f64,
    pub pass: bool,
}

impl<'a> Certificate<'a> {
    pub fn new(lambda: &'a [f64], grid: &'a SampleGrid, kernel: Kernel) -> Result<Self> {
        if lambda.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "lambda has length {} but grid has {} samples",
                lambda.len(),
                grid.len()
            )));
        }
        Ok(Self { lambda, grid, kernel })
    }

    pub fn lambda(&self) -> &'a [f64] {
        self.lambda
    }

    pub fn grid(&self) -> &'a SampleGrid {
        self.grid
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn value(&self, t: f64) -> f64 {
        self.lambda.iter().zip(self.grid.samples()).map(|(l, s)| l * self.kernel.phi(t - s)).sum()
    }

    pub fn d1(&self, t: f64) -> f64 {
        self.lambda.iter().zip(self.grid.samples()).map(|(l, s)| l * self.kernel.d1(t - s)).sum()
    }

    pub fn d2(&self, t: f64) -> f64 {
        self.lambda.iter().zip(self.grid.samples()).map(|(l, s)| l * self.kernel.d2(t - s)).sum()
    }

    /// `(q, q', q'')` together, plus `sum_j |lambda_j phi'(t - s_j)|` as a roundoff scale for `q'`.
    fn eval012(&self, t: f64) -> (f64, f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0, 0.0);
        for (l, s) in self.lambda.iter().zip(self.grid.samples()) {
            let (p, p1, p2) = self.kernel.phi_012(t - s);
            out.0 += l * p;
            out.1 += l * p1;
            out.2 += l * p2;
            out.3 += (l * p1).abs();
        }
        out
    }

    /// `q` or one of its first two derivatives.
    pub fn eval(&self, t: f64, order: u8) -> Result<f64> {
        match order {
            0 => Ok(self.value(t)),
            1 => Ok(self.d1(t)),
            2 => Ok(self.d2(t)),
            _ => Err(Error::InvalidArgument(format!("unsupported certificate order {order}"))),
        }
    }

    fn sample(&self, grid_points: usize) -> (Vec<f64>, Vec<f64>) {
        let ts: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
        let qs = ts.iter().map(|&t| self.value(t)).collect();
        (ts, qs)
    }

    /// Safeguarded Newton on `q'` inside `[lo, hi]`, started at `t0`.
    ///
    /// Falls back to bisection whenever the Newton step leaves the current
    /// bracket or `q'' >= 0`, which requires `q'(lo) > 0 > q'(hi)`.
    pub fn refine_in_bracket(&self, lo: f64, hi: f64, t0: f64) -> Result<f64> {
        let (mut a, mut b) = (lo, hi);
        let bracketed = self.d1(a) > 0.0 && self.d1(b) < 0.0;
        let mut t = t0.clamp(a, b);
        for _ in 0..NEWTON_MAX_ITERS {
            let (_, g, h, scale) = self.eval012(t);
            if g.abs() < NEWTON_GRAD_TOL || g.abs() <= 4.0 * f64::EPSILON * scale {
                return Ok(t);
            }
            if bracketed {
                if g > 0.0 {
                    a = t;
                } else {
                    b = t;
                }
            }
            let newton = if h < 0.0 { t - g / h } else { f64::NAN };
            let next = if newton.is_finite() && newton > a && newton < b {
                newton
            } else if bracketed {
                0.5 * (a + b)
            } else {
                return Err(Error::NoConvergence { iterations: 0, last: t });
            };
            if (next - t).abs() <= 2.0 * f64::EPSILON * t.abs().max(1e-300) {
                return Ok(next);
            }
            t = next;
        }
        let (_, g, h, scale) = self.eval012(t);
        if h < 0.0 && g.abs() <= 1e3 * f64::EPSILON * scale.max(1.0) {
            return Ok(t);
        }
        Err(Error::NoConvergence { iterations: NEWTON_MAX_ITERS, last: t })
    }

    /// Local maximiser near `t0`, searched within `[t0 - sigma, t0 + sigma] ∩ [0, 1]`.
    pub fn refine_location(&self, t0: f64) -> Result<f64> {
        let w = self.kernel.sigma();
        let (lo, hi) = ((t0 - w).max(0.0), (t0 + w).min(1.0));
        let t = self.refine_in_bracket(lo, hi, t0)?;
        if self.d2(t) >= 0.0 {
            return Err(Error::NoConvergence { iterations: NEWTON_MAX_ITERS, last: t });
        }
        Ok(t)
    }

    /// Refined grid-local maxima whose value lies within the tolerance of the best one.
    fn candidate_maxima(&self, grid_points: usize) -> (Vec<(f64, f64)>, f64, Vec<f64>, Vec<f64>) {
        let (ts, qs) = self.sample(grid_points);
        let (lo, hi) = qs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| (lo.min(q), hi.max(q)));
        let value_tol = DEFAULT_VALUE_TOL_FRACTION * (hi - lo);
        let mut found = Vec::new();
        for i in 1..grid_points - 1 {
            if !(qs[i] > qs[i - 1] && qs[i] >= qs[i + 1]) || qs[i] < hi - value_tol {
                continue;
            }
            if let Ok(t) = self.refine_in_bracket(ts[i - 1], ts[i + 1], ts[i]) {
                found.push((t, self.value(t)));
            }
        }
        (found, value_tol, ts, qs)
    }

    pub fn global_maximizers(&self, grid_points: usize, merge_tol: f64) -> Result<MaximizerSet> {
        if grid_points < 101 {
            return Err(Error::InvalidArgument("need at least 101 grid points".into()));
        }
        if !(merge_tol > 0.0) {
            return Err(Error::InvalidArgument("merge tolerance must be positive".into()));
        }
        let (mut found, value_tol, _, _) = self.candidate_maxima(grid_points);
        let best = found.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        found.retain(|&(t, v)| v >= best - value_tol && self.d2(t) <= 1e-9);
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(found.len());
        for (t, v) in found {
            match merged.last_mut() {
                Some(last) if t - last.0 < merge_tol => {
                    if v > last.1 {
                        *last = (t, v);
                    }
                }
                _ => merged.push((t, v)),
            }
        }
        Ok(MaximizerSet {
            curvatures: merged.iter().map(|&(t, _)| self.d2(t)).collect(),
            locations: merged.iter().map(|m| m.0).collect(),
            values: merged.iter().map(|m| m.1).collect(),
        })
    }

    /// Location and value of `sup_{[0,1]} q`; ties go to the smallest `t`.
    pub fn sup(&self) -> (f64, f64) {
        self.sup_with(DEFAULT_GRID_POINTS)
    }

    pub fn sup_with(&self, grid_points: usize) -> (f64, f64) {
        let (mut found, _, ts, qs) = self.candidate_maxima(grid_points.max(3));
        found.push((0.0, qs[0]));
        found.push((1.0, qs[ts.len() - 1]));
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = found[0];
        for &(t, v) in &found[1..] {
            // values equal up to roundoff count as ties
            if v > best.1 + 8.0 * f64::EPSILON * best.1.abs().max(1.0) {
                best = (t, v);
            }
        }
        best
    }

    /// Checks `q(t_i) = 1` at every source and `q < 1` elsewhere, up to `tol`.
    pub fn validate(&self, src: &SourceModel, tol: f64) -> Result<CertificateReport> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let source_deviation: Vec<f64> = src.locations().iter().map(|&t| (self.value(t) - 1.0).abs()).collect();
        let away_sup = self.sup_away_from(src.locations(), DEFAULT_MERGE_TOL);
        let pass = source_deviation.iter().all(|d| *d <= tol) && away_sup <= 1.0 + tol;
        Ok(CertificateReport { source_deviation, away_sup, pass })
    }

    /// Supremum of `q` over `[0, 1]` minus open `radius`-neighbourhoods of `points`.
    pub fn sup_away_from(&self, points: &[f64], radius: f64) -> f64 {
        let excluded = |t: f64| points.iter().any(|p| (t - p).abs() < radius);
        let (ts, qs) = self.sample(DEFAULT_GRID_POINTS);
        let mut best = f64::NEG_INFINITY;
        for (i, (&t, &q)) in ts.iter().zip(&qs).enumerate() {
            if excluded(t) {
                continue;
            }
            best = best.max(q);
            let interior = i > 0 && i + 1 < ts.len();
            if interior && q > qs[i - 1] && q >= qs[i + 1] {
                if let Ok(r) = self.refine_in_bracket(ts[i - 1], ts[i + 1], t) {
                    if !excluded(r) {
                        best = best.max(self.value(r));
                    }
                }
            }
        }
        for p in points {
            for edge in [p - radius, p + radius] {
                if (0.0..=1.0).contains(&edge) {
                    best = best.max(self.value(edge));
                }
            }
        }
        best
    }

    /// Writes `(t, q(t))` at `grid_points` uniform points as CSV.
    pub fn write_csv<W: Write>(&self, out: W, grid_points: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "q"])?;
        let (ts, qs) = self.sample(grid_points.max(2));
        for (t, q) in ts.iter().zip(qs) {
            w.write_record([t.to_string(), q.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
