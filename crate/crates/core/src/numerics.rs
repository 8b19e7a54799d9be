//! Small dense linear algebra and the two convex subproblems of the bundle
//! method: Euclidean projection onto a polyhedron intersected with a box, and
//! minimisation of a max-of-affine function over a box.
//!
//! Both subproblems are solved exactly (up to roundoff) by active-set methods;
//! the sizes involved are a few dozen variables and at most a few thousand
//! constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Thin SVD `M = U diag(S) V^T` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.s.last().copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(&self.s));
        &self.u * s * self.v.transpose()
    }
}

pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Svd { u: DMatrix::zeros(m.nrows(), 0), s: vec![], v: DMatrix::zeros(m.ncols(), 0) });
    }
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let dec = a.thin_svd().map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (dec.U(), dec.S().column_vector(), dec.V());
    let k = fs.nrows();
    // faer returns singular values in descending order
    Ok(Svd {
        u: DMatrix::from_fn(m.nrows(), k, |i, j| fu[(i, j)]),
        s: (0..k).map(|i| fs[i]).collect(),
        v: DMatrix::from_fn(m.ncols(), k, |i, j| fv[(i, j)]),
    })
}

pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.s)
}

/// Minimiser of `||A x - b||_2` through the SVD of `A`.
pub fn least_squares(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() < a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "least squares needs rows >= cols, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.len() != a.nrows() {
        return Err(Error::InvalidArgument("right-hand side length mismatch".into()));
    }
    let dec = svd(a)?;
    let (smax, smin) = (dec.sigma_max(), dec.sigma_min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::RankDeficient { sigma_min: smin, sigma_max: smax });
    }
    let bv = DVector::from_column_slice(b);
    let mut coef = dec.u.transpose() * bv;
    for (c, s) in coef.iter_mut().zip(&dec.s) {
        *c /= s;
    }
    Ok((dec.v * coef).iter().copied().collect())
}

/// Half-space `normal^T x <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }
}

/// Coordinate-wise bounds `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self { lower: vec![-radius; dim], upper: vec![radius; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(x, (lo, hi))| x.clamp(*lo, *hi)).collect()
    }

    fn shifted(&self, center: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(center).map(|(l, c)| l - c).collect(),
            upper: self.upper.iter().zip(center).map(|(u, c)| u - c).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Identifies a constraint of a problem made of general rows plus box bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintId {
    Row(usize),
    Upper(usize),
    Lower(usize),
}

// ---------------------------------------------------------------------------
// Projection QP
// ---------------------------------------------------------------------------

/// Result of [`qp_project`], with the multipliers of the active constraints.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: Vec<f64>,
    pub active: Vec<(ConstraintId, f64)>,
    pub iterations: usize,
}

struct ProjectionProblem<'a> {
    rows: &'a [Halfspace],
    // offsets after shifting the origin to the projected point
    offsets: Vec<f64>,
    bounds: BoxBounds,
    n: usize,
}

impl ProjectionProblem<'_> {
    fn residual(&self, id: ConstraintId, d: &[f64]) -> f64 {
        match id {
            ConstraintId::Row(i) => dot(&self.rows[i].normal, d) - self.offsets[i],
            ConstraintId::Upper(j) => d[j] - self.bounds.upper[j],
            ConstraintId::Lower(j) => self.bounds.lower[j] - d[j],
        }
    }

    fn normal_norm(&self, id: ConstraintId) -> f64 {
        match id {
            ConstraintId::Row(i) => norm2(&self.rows[i].normal),
            _ => 1.0,
        }
    }

    fn scale(&self, id: ConstraintId) -> f64 {
        match id {
            ConstraintId::Row(i) => self.offsets[i].abs(),
            ConstraintId::Upper(j) => self.bounds.upper[j].abs(),
            ConstraintId::Lower(j) => self.bounds.lower[j].abs(),
        }
    }

    /// `J^T n_id` for column-stored `j`.
    fn project_normal(&self, id: ConstraintId, j: &[Vec<f64>], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(j) {
            *o = match id {
                ConstraintId::Row(i) => dot(col, &self.rows[i].normal),
                ConstraintId::Upper(c) => col[c],
                ConstraintId::Lower(c) => -col[c],
            };
        }
    }

    fn ids(&self) -> impl Iterator<Item = ConstraintId> + '_ {
        (0..self.rows.len())
            .map(ConstraintId::Row)
            .chain((0..self.n).map(ConstraintId::Upper))
            .chain((0..self.n).map(ConstraintId::Lower))
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

/// Euclidean projection of `point` onto `{x : rows_i(x) <= 0 for all i} ∩ box`.
///
/// Goldfarb–Idnani dual active-set method specialised to the identity Hessian:
/// start from the unconstrained minimiser (the point itself) and add violated
/// constraints one at a time while keeping the multipliers dual feasible.
/// The origin is shifted to `point`, so roundoff scales with the length of the
/// step rather than with the magnitude of `point`.
pub fn qp_project(point: &[f64], rows: &[Halfspace], bounds: &BoxBounds) -> Result<Projection> {
    let n = point.len();
    if bounds.dim() != n || rows.iter().any(|h| h.normal.len() != n) {
        return Err(Error::InvalidArgument("dimension mismatch in projection".into()));
    }
    if bounds.lower.iter().zip(&bounds.upper).any(|(l, u)| l > u) {
        return Err(Error::Infeasible);
    }
    let prob = ProjectionProblem {
        rows,
        offsets: rows.iter().map(|h| h.offset - dot(&h.normal, point)).collect(),
        bounds: bounds.shifted(point),
        n,
    };

    let mut d = vec![0.0; n];
    // J stored by columns, R upper triangular stored by columns (R[col][row]).
    let mut jmat: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut col = vec![0.0; n];
            col[c] = 1.0;
            col
        })
        .collect();
    let mut rmat: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut active: Vec<ConstraintId> = Vec::with_capacity(n);
    let mut mult: Vec<f64> = Vec::with_capacity(n);

    let max_outer = 20 * (rows.len() + 2 * n) + 100;
    let mut dv = vec![0.0; n];
    let mut iterations = 0;

    for _ in 0..max_outer {
        iterations += 1;
        let dnorm = norm2(&d);
        let mut worst: Option<(ConstraintId, f64)> = None;
        for id in prob.ids() {
            if active.contains(&id) {
                continue;
            }
            let nn = prob.normal_norm(id);
            if nn == 0.0 {
                if prob.residual(id, &d) > 1e-12 * (1.0 + prob.scale(id)) {
                    return Err(Error::Infeasible);
                }
                continue;
            }
            let viol = prob.residual(id, &d) / nn;
            let tol = 1e-13 * (1.0 + dnorm + prob.scale(id) / nn);
            if viol > tol && worst.is_none_or(|(_, v)| viol > v) {
                worst = Some((id, viol));
            }
        }
        let Some((p, _)) = worst else {
            let point_out: Vec<f64> = point.iter().zip(&d).map(|(p, d)| p + d).collect();
            return Ok(Projection { point: point_out, active: active.into_iter().zip(mult).collect(), iterations });
        };

        let mut u_p = 0.0;
        let mut inner = 0;
        loop {
            inner += 1;
            if inner > 4 * n + 10 {
                return Err(Error::Numeric("projection inner loop did not terminate".into()));
            }
            let q = active.len();
            prob.project_normal(p, &jmat, &mut dv);
            let pn = prob.normal_norm(p);
            // primal direction z = -J2 d2
            let d2sq: f64 = dv[q..].iter().map(|x| x * x).sum();
            let mut z = vec![0.0; n];
            for (c, coef) in dv.iter().enumerate().skip(q) {
                for (zi, ji) in z.iter_mut().zip(&jmat[c]) {
                    *zi -= coef * ji;
                }
            }
            // dual direction r = -R^{-1} d1
            let mut r = vec![0.0; q];
            for row in (0..q).rev() {
                let mut acc = dv[row];
                for col in row + 1..q {
                    acc -= rmat[col][row] * r[col];
                }
                r[row] = acc / rmat[row][row];
            }
            for ri in r.iter_mut() {
                *ri = -*ri;
            }
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (i, (&ri, &ui)) in r.iter().zip(&mult).enumerate() {
                if ri < 0.0 {
                    let t = ui / -ri;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(i);
                    }
                }
            }
            let viol = prob.residual(p, &d);
            let t2 = if d2sq > (1e-14 * pn).powi(2) { viol.max(0.0) / d2sq } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::Infeasible);
            }
            if t2 <= t1 {
                for (di, zi) in d.iter_mut().zip(&z) {
                    *di += t2 * zi;
                }
                for (ui, ri) in mult.iter_mut().zip(&r) {
                    *ui = (*ui + t2 * ri).max(0.0);
                }
                u_p += t2;
                // add p: rotate dv[q..] into dv[q]
                for i in (q + 1..n).rev() {
                    let (c, s, rr) = givens(dv[i - 1], dv[i]);
                    dv[i - 1] = rr;
                    dv[i] = 0.0;
                    if s != 0.0 {
                        let (left, right) = jmat.split_at_mut(i);
                        let (a, b) = (&mut left[i - 1], &mut right[0]);
                        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                            let (xo, yo) = (*x, *y);
                            *x = c * xo + s * yo;
                            *y = -s * xo + c * yo;
                        }
                    }
                }
                rmat.push(dv[..=q].to_vec());
                active.push(p);
                mult.push(u_p);
                break;
            }
            // partial step, then drop the blocking constraint
            if t2.is_finite() || t1.is_finite() {
                if d2sq > (1e-14 * pn).powi(2) {
                    for (di, zi) in d.iter_mut().zip(&z) {
                        *di += t1 * zi;
                    }
                }
                for (ui, ri) in mult.iter_mut().zip(&r) {
                    *ui = (*ui + t1 * ri).max(0.0);
                }
                u_p += t1;
            }
            let l = drop_at.expect("finite t1 has a blocking index");
            active.remove(l);
            mult.remove(l);
            rmat.remove(l);
            // restore triangularity of R (columns l.. now have one subdiagonal entry)
            for i in l..rmat.len() {
                let (c, s, rr) = givens(rmat[i][i], rmat[i][i + 1]);
                rmat[i][i] = rr;
                rmat[i].truncate(i + 1);
                for col in rmat.iter_mut().skip(i + 1) {
                    let (xo, yo) = (col[i], col[i + 1]);
                    col[i] = c * xo + s * yo;
                    col[i + 1] = -s * xo + c * yo;
                }
                let (left, right) = jmat.split_at_mut(i + 1);
                let (a, b) = (&mut left[i], &mut right[0]);
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let (xo, yo) = (*x, *y);
                    *x = c * xo + s * yo;
                    *y = -s * xo + c * yo;
                }
            }
        }
    }
    Err(Error::Numeric("projection did not terminate".into()))
}

/// Stationarity and complementarity residuals of a projection, for checking.
pub fn projection_kkt_residual(point: &[f64], rows: &[Halfspace], bounds: &BoxBounds, proj: &Projection) -> (f64, f64) {
    let mut grad: Vec<f64> = proj.point.iter().zip(point).map(|(x, p)| x - p).collect();
    let mut compl: f64 = 0.0;
    for &(id, u) in &proj.active {
        let slack = match id {
            ConstraintId::Row(i) => {
                for (g, a) in grad.iter_mut().zip(&rows[i].normal) {
                    *g += u * a;
                }
                rows[i].residual(&proj.point)
            }
            ConstraintId::Upper(j) => {
                grad[j] += u;
                proj.point[j] - bounds.upper[j]
            }
            ConstraintId::Lower(j) => {
                grad[j] -= u;
                bounds.lower[j] - proj.point[j]
            }
        };
        compl = compl.max((u * slack).abs());
    }
    (grad.iter().fold(0.0f64, |m, g| m.max(g.abs())), compl)
}

// ---------------------------------------------------------------------------
// Max-affine LP
// ---------------------------------------------------------------------------

/// Affine function `intercept + slope^T x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl AffinePiece {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.slope, x)
    }
}

pub fn max_affine(pieces: &[AffinePiece], x: &[f64]) -> f64 {
    pieces.iter().map(|p| p.eval(x)).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub argmin: Vec<f64>,
    /// Optimal basis; pass back as a warm start after appending pieces.
    pub basis: Vec<ConstraintId>,
    pub pivots: usize,
}

/// `min_x max_i pieces_i(x)` over a box, as the epigraph LP
/// `min r  s.t.  slope_i^T x - r <= -intercept_i,  lower <= x <= upper`.
///
/// Dual simplex in inequality form. Any basis made of one piece and one bound
/// per coordinate on the side opposite to the piece's slope is dual feasible,
/// which gives a cold start; an optimal basis stays dual feasible when pieces
/// are appended, which gives the warm start used across bundle iterations.
pub fn lp_min(pieces: &[AffinePiece], bounds: &BoxBounds, warm: Option<&[ConstraintId]>) -> Result<LpSolution> {
    let n = bounds.dim();
    if pieces.is_empty() {
        return Err(Error::InvalidArgument("max-affine LP needs at least one piece".into()));
    }
    if pieces.iter().any(|p| p.slope.len() != n) {
        return Err(Error::InvalidArgument("dimension mismatch in LP".into()));
    }
    let cold = || -> Vec<ConstraintId> {
        let g = &pieces[0].slope;
        std::iter::once(ConstraintId::Row(0))
            .chain((0..n).map(|j| if g[j] < 0.0 { ConstraintId::Upper(j) } else { ConstraintId::Lower(j) }))
            .collect()
    };
    let mut basis = match warm {
        Some(b) if b.len() == n + 1 && b.iter().all(|id| valid_id(*id, pieces.len(), n)) => b.to_vec(),
        _ => cold(),
    };
    match dual_simplex(pieces, bounds, &mut basis) {
        Ok(sol) => Ok(sol),
        Err(_) if warm.is_some() => {
            basis = cold();
            dual_simplex(pieces, bounds, &mut basis)
        }
        Err(e) => Err(e),
    }
}

fn valid_id(id: ConstraintId, rows: usize, n: usize) -> bool {
    match id {
        ConstraintId::Row(i) => i < rows,
        ConstraintId::Upper(j) | ConstraintId::Lower(j) => j < n,
    }
}

// Constraint normal in the (x, r) space, dimension n + 1.
fn lp_normal(pieces: &[AffinePiece], n: usize, id: ConstraintId) -> Vec<f64> {
    let mut a = vec![0.0; n + 1];
    match id {
        ConstraintId::Row(i) => {
            a[..n].copy_from_slice(&pieces[i].slope);
            a[n] = -1.0;
        }
        ConstraintId::Upper(j) => a[j] = 1.0,
        ConstraintId::Lower(j) => a[j] = -1.0,
    }
    a
}

fn lp_rhs(pieces: &[AffinePiece], bounds: &BoxBounds, id: ConstraintId) -> f64 {
    match id {
        ConstraintId::Row(i) => -pieces[i].intercept,
        ConstraintId::Upper(j) => bounds.upper[j],
        ConstraintId::Lower(j) => -bounds.lower[j],
    }
}

fn dual_simplex(pieces: &[AffinePiece], bounds: &BoxBounds, basis: &mut [ConstraintId]) -> Result<LpSolution> {
    let n = bounds.dim();
    let dim = n + 1;
    let mut c = DVector::zeros(dim);
    c[n] = 1.0;
    let max_pivots = 50 * (pieces.len() + 2 * n) + 200;
    let mut degenerate_run = 0usize;

    for pivot in 0..max_pivots {
        let mut aw = DMatrix::zeros(dim, dim);
        let mut bw = DVector::zeros(dim);
        for (row, id) in basis.iter().enumerate() {
            let a = lp_normal(pieces, n, *id);
            for (col, v) in a.iter().enumerate() {
                aw[(row, col)] = *v;
            }
            bw[row] = lp_rhs(pieces, bounds, *id);
        }
        let lu = aw.clone().lu();
        let x = lu.solve(&bw).ok_or_else(|| Error::Numeric("singular LP basis".into()))?;
        let lut = aw.transpose().lu();
        let u = lut.solve(&(-&c)).ok_or_else(|| Error::Numeric("singular LP basis".into()))?;
        if u.iter().any(|&ui| ui < -1e-9 * (1.0 + u.amax())) {
            return Err(Error::Numeric("LP basis lost dual feasibility".into()));
        }
        let xs = x.as_slice();

        // pricing: most violated constraint, normalised; Bland after a long degenerate run
        let bland = degenerate_run > 2 * dim;
        let mut enter: Option<(ConstraintId, f64)> = None;
        let candidates = (0..pieces.len())
            .map(ConstraintId::Row)
            .chain((0..n).map(ConstraintId::Upper))
            .chain((0..n).map(ConstraintId::Lower));
        for id in candidates {
            if basis.contains(&id) {
                continue;
            }
            let (viol, scale) = match id {
                ConstraintId::Row(i) => {
                    let p = &pieces[i];
                    let val = p.intercept + dot(&p.slope, &xs[..n]);
                    let mag = p.intercept.abs()
                        + p.slope.iter().zip(&xs[..n]).map(|(g, x)| (g * x).abs()).sum::<f64>()
                        + xs[n].abs();
                    let norm = (1.0 + dot(&p.slope, &p.slope)).sqrt();
                    ((val - xs[n]) / norm, (1.0 + mag) / norm)
                }
                ConstraintId::Upper(j) => (xs[j] - bounds.upper[j], 1.0 + bounds.upper[j].abs()),
                ConstraintId::Lower(j) => (bounds.lower[j] - xs[j], 1.0 + bounds.lower[j].abs()),
            };
            // a few ulps of the terms that were summed
            if viol > 32.0 * f64::EPSILON * scale {
                let better = match enter {
                    None => true,
                    Some(_) if bland => false,
                    Some((_, v)) => viol > v,
                };
                if better {
                    enter = Some((id, viol));
                }
            }
        }
        let Some((k, _)) = enter else {
            // coordinates fixed by an active bound are exact
            let mut argmin = xs[..n].to_vec();
            for id in basis.iter() {
                match *id {
                    ConstraintId::Upper(j) => argmin[j] = bounds.upper[j],
                    ConstraintId::Lower(j) => argmin[j] = bounds.lower[j],
                    ConstraintId::Row(_) => {}
                }
            }
            return Ok(LpSolution { value: max_affine(pieces, &argmin), argmin, basis: basis.to_vec(), pivots: pivot });
        };

        let ak = DVector::from_vec(lp_normal(pieces, n, k));
        let v = lut.solve(&ak).ok_or_else(|| Error::Numeric("singular LP basis".into()))?;
        let vtol = 1e-12 * (1.0 + v.amax());
        let mut leave: Option<(usize, f64)> = None;
        for w in 0..dim {
            if v[w] > vtol {
                let theta = u[w].max(0.0) / v[w];
                let better = match leave {
                    None => true,
                    Some((lw, lt)) => {
                        theta < lt - 1e-15 * (1.0 + lt) || (theta <= lt + 1e-15 * (1.0 + lt) && basis[w] < basis[lw])
                    }
                };
                if better {
                    leave = Some((w, theta));
                }
            }
        }
        let Some((w, theta)) = leave else {
            return Err(Error::Infeasible);
        };
        degenerate_run = if theta <= 1e-14 { degenerate_run + 1 } else { 0 };
        basis[w] = k;
    }
    Err(Error::Numeric("LP pivot limit reached".into()))
}
