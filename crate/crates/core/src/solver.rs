//! Level bundle method for the exact-penalty dual
//!
//! ```text
//!     min  Psi(lambda) = -y^T lambda + Pi * max(sup_s q_lambda(s) - 1, 0)
//!     s.t. ||lambda||_inf <= tau
//! ```
//!
//! Each iteration evaluates a subgradient at the current iterate, appends the
//! corresponding cut to the polyhedral model, recomputes the model minimum
//! `nu` over the box and the best value `mu`, and projects the current iterate
//! onto the level set `{model <= alpha * mu + (1 - alpha) * nu}`.

use crate::certificate::Certificate;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::{MeasurementSet, SampleGrid};
use crate::numerics::{self, dot, AffinePiece, BoxBounds, ConstraintId, Halfspace};

/// Sup values within this distance of 1 use the active subgradient branch.
const ACTIVE_TOL: f64 = 1e-12;
pub const DEFAULT_GAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PenaltyProblem {
    y: Vec<f64>,
    grid: SampleGrid,
    kernel: Kernel,
    pi: f64,
    tau: f64,
}

/// Objective value and one subgradient at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub psi: f64,
    pub subgradient: Vec<f64>,
    /// Maximiser of the certificate when the penalty branch is active.
    pub t_active: Option<f64>,
    pub sup_location: f64,
    pub sup_value: f64,
}

impl PenaltyProblem {
    pub fn new(measurements: &MeasurementSet, kernel: Kernel, pi: f64, tau: f64) -> Result<Self> {
        if !(pi.is_finite() && pi > 0.0) {
            return Err(Error::InvalidArgument(format!("penalty weight must be positive, got {pi}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!("box radius must be positive, got {tau}")));
        }
        Ok(Self { y: measurements.y.clone(), grid: measurements.grid.clone(), kernel, pi, tau })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    fn certificate<'a>(&'a self, lambda: &'a [f64]) -> Result<Certificate<'a>> {
        Certificate::new(lambda, &self.grid, self.kernel)
    }

    pub fn psi(&self, lambda: &[f64]) -> Result<f64> {
        let (_, sup) = self.certificate(lambda)?.sup();
        Ok(-dot(&self.y, lambda) + self.pi * (sup - 1.0).max(0.0))
    }

    pub fn oracle(&self, lambda: &[f64]) -> Result<OracleOutput> {
        let (t_star, sup) = self.certificate(lambda)?.sup();
        let psi = -dot(&self.y, lambda) + self.pi * (sup - 1.0).max(0.0);
        let mut g: Vec<f64> = self.y.iter().map(|y| -y).collect();
        let t_active = if sup >= 1.0 - ACTIVE_TOL {
            for (gj, s) in g.iter_mut().zip(self.grid.samples()) {
                *gj += self.pi * self.kernel.phi(t_star - s);
            }
            Some(t_star)
        } else {
            None
        };
        Ok(OracleOutput { psi, subgradient: g, t_active, sup_location: t_star, sup_value: sup })
    }

    pub fn subgradient(&self, lambda: &[f64]) -> Result<(Vec<f64>, Option<f64>)> {
        let o = self.oracle(lambda)?;
        Ok((o.subgradient, o.t_active))
    }
}

/// Affine minorant `value + slope^T (lambda - anchor)` of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub anchor: Vec<f64>,
    pub value: f64,
    pub slope: Vec<f64>,
}

impl Cut {
    pub fn eval(&self, lambda: &[f64]) -> f64 {
        self.value + self.slope.iter().zip(lambda.iter().zip(&self.anchor)).map(|(g, (l, a))| g * (l - a)).sum::<f64>()
    }

    /// `eval` with error-free transformations; accurate to a few ulps of the result.
    fn eval_compensated(&self, lambda: &[f64]) -> f64 {
        let (mut s, mut err) = (self.value, 0.0);
        for (g, (l, a)) in self.slope.iter().zip(lambda.iter().zip(&self.anchor)) {
            let (d, de) = two_sum(*l, -*a);
            let p = g * d;
            let pe = g.mul_add(d, -p);
            let (s2, se) = two_sum(s, p);
            s = s2;
            err += se + pe + g * de;
        }
        s + err
    }

    /// Model change that rounding `lambda` to storage precision can cause.
    fn storage_slack(&self, lambda: &[f64]) -> f64 {
        self.slope.iter().zip(lambda).map(|(g, l)| (g * l).abs()).sum::<f64>() * f64::EPSILON
    }

    fn piece_at(&self, center: &[f64]) -> AffinePiece {
        AffinePiece { slope: self.slope.clone(), intercept: self.eval_compensated(center) }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Polyhedral model `max_i cut_i(lambda)`.
pub fn model_value(cuts: &[Cut], lambda: &[f64]) -> f64 {
    cuts.iter().map(|c| c.eval(lambda)).fold(f64::NEG_INFINITY, f64::max)
}

fn shifted_box(tau: f64, center: &[f64]) -> BoxBounds {
    BoxBounds { lower: center.iter().map(|c| -tau - c).collect(), upper: center.iter().map(|c| tau - c).collect() }
}

fn model_min_at(
    cuts: &[Cut],
    tau: f64,
    center: &[f64],
    warm: Option<&[ConstraintId]>,
) -> Result<(f64, Vec<f64>, Vec<ConstraintId>)> {
    let pieces: Vec<AffinePiece> = cuts.iter().map(|c| c.piece_at(center)).collect();
    let sol = numerics::lp_min(&pieces, &shifted_box(tau, center), warm)?;
    let argmin: Vec<f64> = sol.argmin.iter().zip(center).map(|(d, c)| d + c).collect();
    Ok((sol.value, argmin, sol.basis))
}

/// Exact minimum of the cut model over `||lambda||_inf <= tau` and a minimiser.
pub fn model_min(cuts: &[Cut], tau: f64) -> Result<(f64, Vec<f64>)> {
    let Some(last) = cuts.last() else {
        return Err(Error::InvalidArgument("model minimum needs at least one cut".into()));
    };
    let center = vec![0.0; last.anchor.len()];
    let (nu, argmin, _) = model_min_at(cuts, tau, &center, None)?;
    Ok((nu, argmin))
}

/// Euclidean projection of `point` onto `{model <= level} ∩ box`.
pub fn level_project(cuts: &[Cut], level: f64, point: &[f64], tau: f64) -> Result<Vec<f64>> {
    match project_step(cuts, level, point, tau, 0.0) {
        Ok(x) => Ok(x),
        Err(Error::Infeasible) => {
            let nu = model_min(cuts, tau).map(|r| r.0).unwrap_or(f64::NAN);
            Err(Error::LevelSetEmpty { level, nu })
        }
        Err(e) => Err(e),
    }
}

/// Projects `point` onto `{cut_i <= level - slack_mult * storage slack of cut_i}` within the box.
fn project_step(cuts: &[Cut], level: f64, point: &[f64], tau: f64, slack_mult: f64) -> Result<Vec<f64>> {
    let rows: Vec<Halfspace> = cuts
        .iter()
        .map(|c| {
            let margin = slack_mult * c.storage_slack(point);
            Halfspace::new(c.slope.clone(), level - margin - c.eval_compensated(point))
        })
        .collect();
    let zero = vec![0.0; point.len()];
    let p = numerics::qp_project(&zero, &rows, &shifted_box(tau, point))?;
    Ok(p.point.iter().zip(point).map(|(d, x)| (d + x).clamp(-tau, tau)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub alpha: f64,
    pub max_iters: usize,
    pub record_iterates: bool,
    pub gap_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { alpha: 0.25, max_iters: 500, record_iterates: false, gap_tol: DEFAULT_GAP_TOL }
    }
}

#[derive(Debug, Clone)]
pub struct BundleState {
    /// Current iterate `lambda^l`.
    pub iterate: Vec<f64>,
    pub cuts: Vec<Cut>,
    /// Best objective value seen, `mu^l`.
    pub mu: f64,
    /// Model minimum over the box, `nu^l`.
    pub nu: f64,
    /// Point achieving `mu`.
    pub best_iterate: Vec<f64>,
    pub mu_history: Vec<f64>,
    pub nu_history: Vec<f64>,
    pub gap_history: Vec<f64>,
    /// LP optimal values before the running maximum that defines `nu`.
    pub lp_value_history: Vec<f64>,
    /// Level used for the projection at each iteration.
    pub level_history: Vec<f64>,
    /// `lambda^0, lambda^1, ...` when recording was requested.
    pub iterate_history: Option<Vec<Vec<f64>>>,
    /// Projections that fell back to the model minimiser because the level set was numerically empty.
    pub projection_fallbacks: usize,
    /// Set when a step returned the previous iterate; every later step would repeat it.
    pub stalled: bool,
    lp_basis: Option<Vec<ConstraintId>>,
}

impl BundleState {
    fn initial(m: usize, record: bool) -> Self {
        Self {
            iterate: vec![0.0; m],
            cuts: Vec::new(),
            mu: f64::INFINITY,
            nu: f64::NEG_INFINITY,
            best_iterate: vec![0.0; m],
            mu_history: Vec::new(),
            nu_history: Vec::new(),
            gap_history: Vec::new(),
            lp_value_history: Vec::new(),
            level_history: Vec::new(),
            iterate_history: record.then(|| vec![vec![0.0; m]]),
            projection_fallbacks: 0,
            stalled: false,
            lp_basis: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.gap_history.len()
    }

    pub fn gap(&self) -> f64 {
        self.mu - self.nu
    }

    /// Writes `(iter, mu, nu, gap[, lambda_1..lambda_m])` rows.
    pub fn write_history_csv<W: std::io::Write>(&self, out: W, with_iterates: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let m = self.iterate.len();
        let iterates = self.iterate_history.as_ref().filter(|_| with_iterates);
        let mut header = vec!["iter".to_string(), "mu".into(), "nu".into(), "gap".into()];
        if iterates.is_some() {
            header.extend((1..=m).map(|j| format!("lambda_{j}")));
        }
        w.write_record(&header)?;
        for l in 0..self.iterations() {
            let mut rec = vec![
                (l + 1).to_string(),
                self.mu_history[l].to_string(),
                self.nu_history[l].to_string(),
                self.gap_history[l].to_string(),
            ];
            if let Some(its) = iterates {
                rec.extend(its[l + 1].iter().map(|x| x.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the level bundle method from `lambda^0 = 0`.
pub fn solve(problem: &PenaltyProblem, opts: SolveOptions) -> Result<BundleState> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    let m = problem.dim();
    let tau = problem.tau();
    let mut st = BundleState::initial(m, opts.record_iterates);

    for _ in 0..opts.max_iters {
        let prev = st.iterate.clone();
        let o = problem.oracle(&prev)?;
        st.cuts.push(Cut { anchor: prev.clone(), value: o.psi, slope: o.subgradient });
        if o.psi < st.mu {
            st.mu = o.psi;
            st.best_iterate = prev.clone();
        }
        let (nu, argmin, basis) = model_min_at(&st.cuts, tau, &st.best_iterate, st.lp_basis.as_deref())?;
        st.lp_basis = Some(basis);
        // the exact model minimum cannot decrease as cuts are added; the LP value can, by roundoff
        st.lp_value_history.push(nu);
        st.nu = nu.max(st.nu);
        let gap = st.mu - st.nu;
        st.mu_history.push(st.mu);
        st.nu_history.push(st.nu);
        st.gap_history.push(gap);

        let level = opts.alpha * st.mu + (1.0 - opts.alpha) * st.nu;
        st.level_history.push(level);
        if gap <= opts.gap_tol {
            if let Some(h) = st.iterate_history.as_mut() {
                h.push(st.iterate.clone());
            }
            break;
        }
        let next = match level_project(&st.cuts, level, &prev, tau) {
            Ok(x) => x,
            Err(Error::LevelSetEmpty { .. }) => {
                st.projection_fallbacks += 1;
                argmin
            }
            Err(e) => return Err(e),
        };
        st.stalled = next == prev;
        st.iterate = next;
        if let Some(h) = st.iterate_history.as_mut() {
            h.push(st.iterate.clone());
        }
        if st.stalled {
            break;
        }
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize, SourceModel};
    use approx::assert_relative_eq;

    fn toy() -> PenaltyProblem {
        let g = SampleGrid::new(vec![0.5]).unwrap();
        let ms = MeasurementSet::from_observations(g, vec![1.0]).unwrap();
        PenaltyProblem::new(&ms, Kernel::new(0.1).unwrap(), 10.0, 100.0).unwrap()
    }

    #[test]
    fn psi_trivial() {
        let p = toy();
        assert_eq!(p.psi(&[0.0]).unwrap(), 0.0);
        assert_relative_eq!(p.psi(&[1.0]).unwrap(), -1.0, max_relative = 1e-14);
        // sup = 2 at 0.5
        assert_relative_eq!(p.psi(&[2.0]).unwrap(), -2.0 + 10.0, max_relative = 1e-14);
    }

    #[test]
    fn subgradient_branches() {
        let p = toy();
        let (g, t) = p.subgradient(&[0.0]).unwrap();
        assert_eq!(g, vec![-1.0]);
        assert!(t.is_none());
        let (g, t) = p.subgradient(&[2.0]).unwrap();
        assert!((t.unwrap() - 0.5).abs() < 1e-12);
        assert_relative_eq!(g[0], -1.0 + 10.0, max_relative = 1e-12);
    }

    #[test]
    fn problem_rejects_bad_parameters() {
        let g = SampleGrid::new(vec![0.5]).unwrap();
        let ms = MeasurementSet::from_observations(g, vec![1.0]).unwrap();
        let k = Kernel::new(0.1).unwrap();
        assert!(PenaltyProblem::new(&ms, k, 0.0, 1.0).is_err());
        assert!(PenaltyProblem::new(&ms, k, 1.0, -1.0).is_err());
        assert!(solve(&toy(), SolveOptions { alpha: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn model_min_single_cut() {
        let cut = Cut { anchor: vec![0.0; 3], value: 0.5, slope: vec![1.0, -2.0, 0.0] };
        let (nu, arg) = model_min(std::slice::from_ref(&cut), 2.0).unwrap();
        assert_relative_eq!(nu, 0.5 - 2.0 * 3.0, max_relative = 1e-14);
        assert_eq!(&arg[..2], &[-2.0, 2.0]);
        let (nu2, _) = model_min(&[cut.clone(), cut], 2.0).unwrap();
        assert_relative_eq!(nu2, nu, max_relative = 1e-14);
        assert!(model_min(&[], 1.0).is_err());
    }

    #[test]
    fn level_project_halfspace() {
        let m = 4;
        let mut slope = vec![0.0; m];
        slope[0] = 1.0;
        let cut = Cut { anchor: vec![0.0; m], value: 0.0, slope };
        let mut point = vec![0.3, -0.2, 0.7, 1.1];
        point[0] = 2.0;
        let x = level_project(std::slice::from_ref(&cut), 0.0, &point, 10.0).unwrap();
        assert!(x[0].abs() < 1e-15);
        assert_eq!(&x[1..], &point[1..]);
        // already inside
        let inside = vec![-1.0, 0.0, 0.0, 0.0];
        assert_eq!(level_project(std::slice::from_ref(&cut), 0.0, &inside, 10.0).unwrap(), inside);
        // empty
        let err = level_project(&[cut], -20.0, &inside, 10.0).unwrap_err();
        assert!(matches!(err, Error::LevelSetEmpty { .. }));
    }

    #[test]
    fn zero_iterations_is_initial_state() {
        let st = solve(&toy(), SolveOptions { max_iters: 0, ..Default::default() }).unwrap();
        assert!(st.cuts.is_empty());
        assert_eq!(st.iterate, vec![0.0]);
        assert_eq!(st.iterations(), 0);
    }

    #[test]
    fn single_source_single_sample_converges() {
        let g = SampleGrid::equispaced(5).unwrap();
        let k = Kernel::new(0.2).unwrap();
        let src = SourceModel::new(vec![0.5], vec![1.0]).unwrap();
        let ms = synthesize(&src, &g, &k, None).unwrap();
        let p = PenaltyProblem::new(&ms, k, 2.0, 100.0).unwrap();
        let st = solve(&p, SolveOptions { max_iters: 300, ..Default::default() }).unwrap();
        assert!(st.gap() < 1e-6, "gap {}", st.gap());
        assert_relative_eq!(st.mu, -1.0, epsilon = 1e-6);
    }
}
