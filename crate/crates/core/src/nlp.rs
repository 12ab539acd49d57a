//! Bound-constrained augmented Lagrangian solver for small dense NLPs.
//!
//! Solves `min f(z)` subject to `c_E(z) = 0`, `c_I(z) ≤ 0`, `lb ≤ z ≤ ub`.
//! Each subproblem is minimised by a projected Newton-type method whose
//! Hessian model is `∇²f + ρ·JᵀJ + Σ wᵢ·Bᵢ` over the equality and active
//! inequality rows, with adaptive Levenberg damping. `Bᵢ` is a symmetric
//! rank-one secant estimate of the i-th constraint Hessian kept on that
//! row's own sparsity pattern.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Sparse Jacobian row.
#[derive(Debug, Clone, Default)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn clear(&mut self) {
        self.idx.clear();
        self.val.clear();
    }

    pub fn push(&mut self, i: usize, v: f64) {
        if v != 0.0 {
            self.idx.push(i);
            self.val.push(v);
        }
    }
}

pub trait NlpProblem {
    fn n(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    /// Objective value; fills the gradient and adds a positive semidefinite
    /// Hessian model into `hess` when given.
    fn objective(&self, z: &[f64], grad: &mut [f64], hess: Option<&mut DMatrix<f64>>) -> f64;
    /// Equalities first, then inequalities.
    fn constraints(&self, z: &[f64], c: &mut [f64]);
    /// Constraint values and one sparse row per constraint.
    fn jacobian(&self, z: &[f64], c: &mut [f64], rows: &mut [SparseRow]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlmOptions {
    pub constraint_tol: f64,
    pub stationarity_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_total_inner: usize,
    pub rho_init: f64,
    pub rho_max: f64,
    /// Optional wall-clock budget in seconds.
    pub time_budget: Option<f64>,
    /// Adds secant estimates of the constraint curvature to the model.
    pub secant_curvature: bool,
    /// Stops once feasible when the objective moved less than this
    /// (relative) over the last outer iteration.
    pub objective_rtol: f64,
    /// Moves finite, non-degenerate variable bounds into the inequality
    /// rows instead of projecting onto them.
    pub soft_bounds: bool,
}

impl Default for AlmOptions {
    fn default() -> Self {
        Self {
            constraint_tol: 1e-9,
            stationarity_tol: 1e-6,
            max_outer: 30,
            max_inner: 80,
            max_total_inner: 1500,
            rho_init: 1000.0,
            rho_max: 1e10,
            time_budget: None,
            secant_curvature: true,
            objective_rtol: 0.0,
            soft_bounds: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlmStatus {
    Converged,
    /// Feasible to tolerance but not certified stationary.
    Feasible,
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct AlmResult {
    pub z: Vec<f64>,
    pub status: AlmStatus,
    pub objective: f64,
    pub violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

struct Workspace {
    c: Vec<f64>,
    rows: Vec<SparseRow>,
    grad: Vec<f64>,
    curv: Vec<RowCurvature>,
    prev_rows: Vec<SparseRow>,
    prev_z: Option<Vec<f64>>,
}

/// SR1 estimate of one constraint Hessian on the variables its row has
/// touched so far.
#[derive(Debug, Clone, Default)]
struct RowCurvature {
    idx: Vec<usize>,
    b: Vec<f64>,
}

impl RowCurvature {
    fn slot(&mut self, j: usize) -> usize {
        if let Some(a) = self.idx.iter().position(|&i| i == j) {
            return a;
        }
        let k = self.idx.len();
        let mut b = vec![0.0; (k + 1) * (k + 1)];
        for r in 0..k {
            b[r * (k + 1)..r * (k + 1) + k].copy_from_slice(&self.b[r * k..r * k + k]);
        }
        self.b = b;
        self.idx.push(j);
        k
    }

    fn update(&mut self, old: &SparseRow, new: &SparseRow, step: &[f64]) {
        for &j in old.idx.iter().chain(&new.idx) {
            self.slot(j);
        }
        let k = self.idx.len();
        if k == 0 {
            return;
        }
        let mut y = vec![0.0; k];
        for (a, &j) in new.idx.iter().enumerate() {
            y[self.slot(j)] += new.val[a];
        }
        for (a, &j) in old.idx.iter().enumerate() {
            y[self.slot(j)] -= old.val[a];
        }
        let s: Vec<f64> = self.idx.iter().map(|&j| step[j]).collect();
        let mut r = y;
        for a in 0..k {
            for b in 0..k {
                r[a] -= self.b[a * k + b] * s[b];
            }
        }
        let rs: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sn = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn == 0.0 || rs.abs() <= 1e-8 * rn * sn {
            return;
        }
        for a in 0..k {
            for b in 0..k {
                self.b[a * k + b] += r[a] * r[b] / rs;
            }
        }
    }
}

fn project(z: &mut [f64], lb: &[f64], ub: &[f64]) {
    for i in 0..z.len() {
        z[i] = z[i].max(lb[i]).min(ub[i]);
    }
}

fn violation(c: &[f64], n_eq: usize) -> f64 {
    let mut v: f64 = 0.0;
    for (i, ci) in c.iter().enumerate() {
        v = v.max(if i < n_eq { ci.abs() } else { ci.max(0.0) });
    }
    v
}

struct Multipliers {
    lambda: Vec<f64>,
    rho: f64,
}

impl Multipliers {
    /// Augmented Lagrangian value from objective and constraint values.
    fn merit(&self, f: f64, c: &[f64], n_eq: usize) -> f64 {
        let mut l = f;
        let rho = self.rho;
        for (i, ci) in c.iter().enumerate() {
            let lam = self.lambda[i];
            if i < n_eq {
                l += lam * ci + 0.5 * rho * ci * ci;
            } else {
                let s = (lam + rho * ci).max(0.0);
                l += (s * s - lam * lam) / (2.0 * rho);
            }
        }
        l
    }

    /// Effective multiplier of each row, zero for inactive inequalities.
    fn weight(&self, i: usize, ci: f64, n_eq: usize) -> f64 {
        let v = self.lambda[i] + self.rho * ci;
        if i < n_eq {
            v
        } else {
            v.max(0.0)
        }
    }
}

/// Presents the bounds of `inner` as inequality rows `lb − z ≤ 0` and
/// `z − ub ≤ 0`. Fixed variables keep their bounds.
struct SoftBounds<'a, P: NlpProblem> {
    inner: &'a P,
    lb: Vec<f64>,
    ub: Vec<f64>,
    /// `(variable, sign)` of each appended row.
    extra: Vec<(usize, f64)>,
}

impl<'a, P: NlpProblem> SoftBounds<'a, P> {
    fn new(inner: &'a P) -> Self {
        let (lo, hi) = (inner.lower(), inner.upper());
        let mut lb = lo.to_vec();
        let mut ub = hi.to_vec();
        let mut extra = Vec::new();
        for i in 0..inner.n() {
            if lo[i] >= hi[i] {
                continue;
            }
            if lo[i].is_finite() {
                extra.push((i, -1.0));
                lb[i] = f64::NEG_INFINITY;
            }
            if hi[i].is_finite() {
                extra.push((i, 1.0));
                ub[i] = f64::INFINITY;
            }
        }
        Self { inner, lb, ub, extra }
    }

    fn bound_rows(&self, z: &[f64], c: &mut [f64]) {
        let (lo, hi) = (self.inner.lower(), self.inner.upper());
        for (r, &(i, s)) in self.extra.iter().enumerate() {
            c[r] = if s < 0.0 { lo[i] - z[i] } else { z[i] - hi[i] };
        }
    }
}

impl<P: NlpProblem> NlpProblem for SoftBounds<'_, P> {
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn lower(&self) -> &[f64] {
        &self.lb
    }
    fn upper(&self) -> &[f64] {
        &self.ub
    }
    fn n_eq(&self) -> usize {
        self.inner.n_eq()
    }
    fn n_ineq(&self) -> usize {
        self.inner.n_ineq() + self.extra.len()
    }
    fn objective(&self, z: &[f64], grad: &mut [f64], hess: Option<&mut DMatrix<f64>>) -> f64 {
        self.inner.objective(z, grad, hess)
    }
    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        let m = self.inner.n_eq() + self.inner.n_ineq();
        self.inner.constraints(z, &mut c[..m]);
        self.bound_rows(z, &mut c[m..]);
    }
    fn jacobian(&self, z: &[f64], c: &mut [f64], rows: &mut [SparseRow]) {
        let m = self.inner.n_eq() + self.inner.n_ineq();
        self.inner.jacobian(z, &mut c[..m], &mut rows[..m]);
        self.bound_rows(z, &mut c[m..]);
        for (r, &(i, s)) in self.extra.iter().enumerate() {
            rows[m + r].clear();
            rows[m + r].push(i, s);
        }
    }
}

pub fn solve<P: NlpProblem>(problem: &P, z0: &[f64], opts: &AlmOptions) -> AlmResult {
    if opts.soft_bounds {
        let soft = SoftBounds::new(problem);
        let mut r = solve_inner(&soft, z0, opts);
        // the caller sees iterates inside its own box
        project(&mut r.z, problem.lower(), problem.upper());
        let mut c = vec![0.0; problem.n_eq() + problem.n_ineq()];
        problem.constraints(&r.z, &mut c);
        r.violation = violation(&c, problem.n_eq());
        return r;
    }
    solve_inner(problem, z0, opts)
}

fn solve_inner<P: NlpProblem>(problem: &P, z0: &[f64], opts: &AlmOptions) -> AlmResult {
    let start = Instant::now();
    let n = problem.n();
    let n_eq = problem.n_eq();
    let m = n_eq + problem.n_ineq();
    let lb = problem.lower();
    let ub = problem.upper();
    let mut z = z0.to_vec();
    project(&mut z, lb, ub);
    let mut ws = Workspace {
        c: vec![0.0; m],
        rows: vec![SparseRow::default(); m],
        grad: vec![0.0; n],
        curv: if opts.secant_curvature { vec![RowCurvature::default(); m] } else { Vec::new() },
        prev_rows: Vec::new(),
        prev_z: None,
    };
    let mut mult = Multipliers {
        lambda: vec![0.0; m],
        rho: opts.rho_init,
    };
    let mut omega = 1e-2_f64.max(opts.stationarity_tol);
    let mut prev_violation = f64::INFINITY;
    let mut prev_objective = f64::INFINITY;
    let mut total_inner = 0;
    let mut damping = 1e-3;
    let out_of_time = || opts.time_budget.map_or(false, |b| start.elapsed().as_secs_f64() > b);

    let mut status = AlmStatus::IterationLimit;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let (stationarity, inner, stalled) = minimise_subproblem(
            problem,
            &mut z,
            &mult,
            omega,
            opts.max_inner.min(opts.max_total_inner.saturating_sub(total_inner)).max(1),
            &mut ws,
            &mut damping,
        );
        total_inner += inner;
        log::debug!("alm outer {outer}: rho {:.1e} inner {inner} stationarity {stationarity:.2e}", mult.rho);
        problem.constraints(&z, &mut ws.c);
        let viol = violation(&ws.c, n_eq);
        // A line search that cannot improve the merit near a stationary
        // point has reached round-off and counts as converged.
        let settled = omega <= opts.stationarity_tol * 1.0001 || (stalled && stationarity <= 1e2 * opts.stationarity_tol);
        if viol <= opts.constraint_tol && stationarity <= 1e2 * opts.stationarity_tol && settled && (stalled || stationarity <= opts.stationarity_tol) {
            status = AlmStatus::Converged;
            break;
        }
        let f = problem.objective(&z, &mut ws.grad, None);
        if viol <= opts.constraint_tol && (f - prev_objective).abs() <= opts.objective_rtol * f.abs().max(1.0) {
            status = AlmStatus::Feasible;
            break;
        }
        prev_objective = if viol <= opts.constraint_tol { f } else { f64::INFINITY };
        for i in 0..m {
            let w = mult.weight(i, ws.c[i], n_eq);
            mult.lambda[i] = w;
        }
        if viol > opts.constraint_tol && viol > 0.25 * prev_violation {
            mult.rho = (mult.rho * 10.0).min(opts.rho_max);
        }
        prev_violation = viol;
        omega = (omega * 0.1).max(opts.stationarity_tol);
        if total_inner >= opts.max_total_inner {
            break;
        }
        if out_of_time() {
            status = AlmStatus::TimeLimit;
            break;
        }
    }
    problem.constraints(&z, &mut ws.c);
    let viol = violation(&ws.c, n_eq);
    if status != AlmStatus::Converged && viol <= opts.constraint_tol {
        status = AlmStatus::Feasible;
    }
    let objective = problem.objective(&z, &mut ws.grad, None);
    AlmResult {
        z,
        status,
        objective,
        violation: viol,
        outer_iterations: outer,
        inner_iterations: total_inner,
    }
}

/// Returns the final projected-gradient norm, the iteration count and
/// whether the line search stalled.
fn minimise_subproblem<P: NlpProblem>(
    problem: &P,
    z: &mut Vec<f64>,
    mult: &Multipliers,
    tol: f64,
    max_iter: usize,
    ws: &mut Workspace,
    damping: &mut f64,
) -> (f64, usize, bool) {
    let n = z.len();
    let n_eq = problem.n_eq();
    let lb = problem.lower();
    let ub = problem.upper();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let mut trial = vec![0.0; n];
    let mut trial_c = vec![0.0; ws.c.len()];
    let mut scratch = vec![0.0; n];
    let mut pg_norm = f64::INFINITY;

    for it in 0..max_iter {
        hess.fill(0.0);
        let f = problem.objective(z, &mut ws.grad, Some(&mut hess));
        problem.jacobian(z, &mut ws.c, &mut ws.rows);
        if !ws.curv.is_empty() {
            if let Some(pz) = &ws.prev_z {
                let step: Vec<f64> = z.iter().zip(pz).map(|(a, b)| a - b).collect();
                for (i, cv) in ws.curv.iter_mut().enumerate() {
                    cv.update(&ws.prev_rows[i], &ws.rows[i], &step);
                }
            }
            ws.prev_rows.clone_from(&ws.rows);
            ws.prev_z = Some(z.clone());
        }
        let merit = mult.merit(f, &ws.c, n_eq);
        for (i, row) in ws.rows.iter().enumerate() {
            let ci = ws.c[i];
            let w = mult.weight(i, ci, n_eq);
            let active = i < n_eq || mult.lambda[i] + mult.rho * ci > 0.0;
            if w != 0.0 {
                for (k, &j) in row.idx.iter().enumerate() {
                    ws.grad[j] += w * row.val[k];
                }
                if let Some(cv) = ws.curv.get(i) {
                    let k = cv.idx.len();
                    for (a, &ja) in cv.idx.iter().enumerate() {
                        for (b, &jb) in cv.idx.iter().enumerate() {
                            hess[(ja, jb)] += w * cv.b[a * k + b];
                        }
                    }
                }
            }
            if active {
                for (a, &ja) in row.idx.iter().enumerate() {
                    let va = mult.rho * row.val[a];
                    for (b, &jb) in row.idx.iter().enumerate() {
                        hess[(ja, jb)] += va * row.val[b];
                    }
                }
            }
        }

        pg_norm = 0.0;
        for i in 0..n {
            let p = (z[i] - ws.grad[i]).max(lb[i]).min(ub[i]) - z[i];
            pg_norm = pg_norm.max(p.abs());
        }
        if pg_norm <= tol {
            return (pg_norm, it, false);
        }

        // Variables within `eps` of a bound only take a diagonally scaled
        // gradient step; the Newton block covers the rest.
        let eps = pg_norm.min(1e-6);
        let mut free = Vec::with_capacity(n);
        let mut near = Vec::new();
        for i in 0..n {
            if lb[i] >= ub[i] {
                continue;
            }
            let low = z[i] <= lb[i] + eps;
            let high = z[i] >= ub[i] - eps;
            if (low && ws.grad[i] > 0.0) || (high && ws.grad[i] < 0.0) {
                continue;
            }
            if low || high {
                near.push(i);
            } else {
                free.push(i);
            }
        }
        let nf = free.len();

        let mut accepted = false;
        for _attempt in 0..8 {
            let mut h = DMatrix::<f64>::zeros(nf, nf);
            let mut g = DVector::<f64>::zeros(nf);
            let mut diag_max: f64 = 0.0;
            for (a, &ia) in free.iter().enumerate() {
                g[a] = ws.grad[ia];
                for (b, &ib) in free.iter().enumerate() {
                    h[(a, b)] = hess[(ia, ib)];
                }
                diag_max = diag_max.max(h[(a, a)]);
            }
            let shift = *damping * (1.0 + diag_max);
            for a in 0..nf {
                h[(a, a)] += shift;
            }
            let step = match profile_cholesky_solve(&h, &g) {
                Some(s) => -s,
                None => {
                    *damping = (*damping * 10.0).min(1e8);
                    continue;
                }
            };
            scratch.iter_mut().for_each(|s| *s = 0.0);
            for (a, &ia) in free.iter().enumerate() {
                scratch[ia] = step[a];
            }
            for &i in &near {
                scratch[i] = -ws.grad[i] / (hess[(i, i)].max(0.0) + shift);
            }
            let mut alpha = 1.0;
            for _ls in 0..20 {
                let mut decrease = 0.0;
                for i in 0..n {
                    trial[i] = (z[i] + alpha * scratch[i]).max(lb[i]).min(ub[i]);
                    decrease += ws.grad[i] * (trial[i] - z[i]);
                }
                let ft = problem.objective(&trial, &mut vec![0.0; n], None);
                problem.constraints(&trial, &mut trial_c);
                let mt = mult.merit(ft, &trial_c, n_eq);
                if mt.is_finite() && mt <= merit + 1e-4 * decrease.min(0.0) && decrease <= 0.0 {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                if alpha == 1.0 {
                    *damping = (*damping / 3.0).max(1e-12);
                } else if alpha < 0.1 {
                    *damping = (*damping * 4.0).min(1e8);
                }
                break;
            }
            *damping = (*damping * 10.0).min(1e8);
        }
        if !accepted {
            return (pg_norm, it + 1, true);
        }
        z.copy_from_slice(&trial);
    }
    (pg_norm, max_iter, false)
}

/// Solves `H·x = g` for a symmetric positive definite `H` with a Cholesky
/// factorisation restricted to the row envelope. Columns much denser than
/// the rest are ordered last so that banded problems with a few coupling
/// variables stay cheap.
fn profile_cholesky_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let nnz: Vec<usize> = (0..n).map(|j| h.column(j).iter().filter(|v| **v != 0.0).count()).collect();
    let mut sorted = nnz.clone();
    sorted.sort_unstable();
    let cut = 4 * sorted[n / 2].max(1);
    let mut order: Vec<usize> = (0..n).filter(|&j| nnz[j] <= cut).collect();
    order.extend((0..n).filter(|&j| nnz[j] > cut));

    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut first = vec![0usize; n];
    for i in 0..n {
        let oi = order[i];
        first[i] = (0..=i).find(|&j| h[(oi, order[j])] != 0.0).unwrap_or(i);
    }
    for i in 0..n {
        let oi = order[i];
        for j in first[i]..i {
            let lo = first[i].max(first[j]);
            let mut s = h[(oi, order[j])];
            for k in lo..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
        let mut d = h[(oi, oi)];
        for k in first[i]..i {
            d -= l[(i, k)] * l[(i, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        l[(i, i)] = d.sqrt();
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = g[order[i]];
        for k in first[i]..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for r in i + 1..n {
            if first[r] <= i {
                s -= l[(r, i)] * y[r];
            }
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = DVector::zeros(n);
    for i in 0..n {
        x[order[i]] = y[i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// min (x-1)² + (y-2)²  s.t.  x + y = 1,  x ≥ 0.2 (as ineq), 0 ≤ y ≤ 0.6
    struct Toy {
        lb: Vec<f64>,
        ub: Vec<f64>,
    }

    impl NlpProblem for Toy {
        fn n(&self) -> usize {
            2
        }
        fn lower(&self) -> &[f64] {
            &self.lb
        }
        fn upper(&self) -> &[f64] {
            &self.ub
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn objective(&self, z: &[f64], g: &mut [f64], h: Option<&mut DMatrix<f64>>) -> f64 {
            g[0] = 2.0 * (z[0] - 1.0);
            g[1] = 2.0 * (z[1] - 2.0);
            if let Some(h) = h {
                h[(0, 0)] += 2.0;
                h[(1, 1)] += 2.0;
            }
            (z[0] - 1.0).powi(2) + (z[1] - 2.0).powi(2)
        }
        fn constraints(&self, z: &[f64], c: &mut [f64]) {
            c[0] = z[0] + z[1] - 1.0;
            c[1] = 0.2 - z[0];
        }
        fn jacobian(&self, z: &[f64], c: &mut [f64], rows: &mut [SparseRow]) {
            self.constraints(z, c);
            rows[0].clear();
            rows[0].push(0, 1.0);
            rows[0].push(1, 1.0);
            rows[1].clear();
            rows[1].push(0, -1.0);
        }
    }

    #[test]
    fn profile_cholesky_matches_dense_solve() {
        // banded matrix with one dense coupling row and column
        let n = 30;
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = 4.0 + i as f64 * 0.1;
            if i + 1 < n {
                h[(i, i + 1)] = -1.0;
                h[(i + 1, i)] = -1.0;
            }
        }
        for i in 1..n {
            h[(0, i)] = 0.05;
            h[(i, 0)] = 0.05;
        }
        let g = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = profile_cholesky_solve(&h, &g).unwrap();
        let dense = h.clone().cholesky().unwrap().solve(&g);
        assert!((x - dense).amax() < 1e-12);
        let mut bad = h.clone();
        bad[(3, 3)] = -1.0;
        assert!(profile_cholesky_solve(&bad, &g).is_none());
    }

    #[test]
    fn solves_toy_problem() {
        let p = Toy {
            lb: vec![-10.0, 0.0],
            ub: vec![10.0, 0.6],
        };
        let r = solve(&p, &[5.0, 5.0], &AlmOptions::default());
        assert_eq!(r.status, AlmStatus::Converged);
        // projection of (1, 2) on x + y = 1 is (0, 1); the bound y ≤ 0.6 then binds
        assert_abs_diff_eq!(r.z[0], 0.4, epsilon = 1e-7);
        assert_abs_diff_eq!(r.z[1], 0.6, epsilon = 1e-7);
    }

    /// Rosenbrock with a circle equality: min (1-x)² + 100(y-x²)²  s.t. x² + y² = 1.
    struct Circle {
        lb: Vec<f64>,
        ub: Vec<f64>,
    }

    impl NlpProblem for Circle {
        fn n(&self) -> usize {
            2
        }
        fn lower(&self) -> &[f64] {
            &self.lb
        }
        fn upper(&self) -> &[f64] {
            &self.ub
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            0
        }
        fn objective(&self, z: &[f64], g: &mut [f64], h: Option<&mut DMatrix<f64>>) -> f64 {
            let (x, y) = (z[0], z[1]);
            g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
            g[1] = 200.0 * (y - x * x);
            if let Some(h) = h {
                // Gauss-Newton model of the two residuals (1-x) and 10(y-x²)
                let j = [[-1.0, 0.0], [-20.0 * x, 10.0]];
                for a in 0..2 {
                    for b in 0..2 {
                        h[(a, b)] += 2.0 * (j[0][a] * j[0][b] + j[1][a] * j[1][b]);
                    }
                }
            }
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        }
        fn constraints(&self, z: &[f64], c: &mut [f64]) {
            c[0] = z[0] * z[0] + z[1] * z[1] - 1.0;
        }
        fn jacobian(&self, z: &[f64], c: &mut [f64], rows: &mut [SparseRow]) {
            self.constraints(z, c);
            rows[0].clear();
            rows[0].push(0, 2.0 * z[0]);
            rows[0].push(1, 2.0 * z[1]);
        }
    }

    #[test]
    fn solves_nonlinear_equality() {
        let p = Circle {
            lb: vec![-2.0, -2.0],
            ub: vec![2.0, 2.0],
        };
        let r = solve(&p, &[0.1, 0.1], &AlmOptions::default());
        assert!(matches!(r.status, AlmStatus::Converged | AlmStatus::Feasible), "{:?}", r.status);
        // known constrained minimiser of this classic problem
        assert_abs_diff_eq!(r.z[0], 0.786_415_2, epsilon = 1e-5);
        assert_abs_diff_eq!(r.z[1], 0.617_698_3, epsilon = 1e-5);
    }
}
