//! Trapezoidal direct collocation with free final time.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::nlp::{self, AlmOptions, AlmStatus, NlpProblem, SparseRow};

/// Continuous-time system with pointwise path constraints `g(x, u) ≤ 0`.
pub trait OcpModel {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn np(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn path(&self, x: &[f64], u: &[f64], g: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSpec {
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// Fixed initial components (`None` leaves the component free).
    pub x0: Vec<Option<f64>>,
    pub xf: Vec<Option<f64>>,
    pub tf_lower: f64,
    pub tf_upper: f64,
    /// Number of intervals.
    pub intervals: usize,
    /// Weight of the squared input-difference regulariser.
    pub smoothing: f64,
    /// Also enforces the path constraints at the Hermite midpoint of every
    /// interval. State bounds are always checked there.
    pub midpoint_path: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpGuess {
    pub tf: f64,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub tf: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub status: AlmStatus,
    pub max_defect: f64,
    pub max_path_violation: f64,
    pub iterations: usize,
}

struct Transcription<'a, M: OcpModel> {
    model: &'a M,
    n: usize,
    nx: usize,
    nu: usize,
    np: usize,
    sx: Vec<f64>,
    su: Vec<f64>,
    stf: f64,
    lb: Vec<f64>,
    ub: Vec<f64>,
    smoothing: f64,
    mid_path: bool,
    /// `(state, sign, limit)` of each finite state bound checked at midpoints.
    mid_bounds: Vec<(usize, f64, f64)>,
}

fn scale_of(lo: f64, hi: f64) -> f64 {
    let s = lo.abs().max(hi.abs());
    if s.is_finite() && s > 1e-3 {
        s
    } else if s.is_finite() {
        1e-3
    } else {
        1.0
    }
}

impl<'a, M: OcpModel> Transcription<'a, M> {
    fn new(model: &'a M, spec: &OcpSpec, tf_scale: f64) -> Self {
        let (nx, nu, np) = (model.nx(), model.nu(), model.np());
        let n = spec.intervals;
        let sx: Vec<f64> = (0..nx).map(|j| scale_of(spec.x_lower[j], spec.x_upper[j])).collect();
        let su: Vec<f64> = (0..nu).map(|j| scale_of(spec.u_lower[j], spec.u_upper[j])).collect();
        let stf = tf_scale.max(1e-3);
        let dim = 1 + (n + 1) * (nx + nu);
        let mut lb = vec![0.0; dim];
        let mut ub = vec![0.0; dim];
        lb[0] = spec.tf_lower / stf;
        ub[0] = spec.tf_upper / stf;
        for k in 0..=n {
            let base = 1 + k * (nx + nu);
            for j in 0..nx {
                let fixed = if k == 0 {
                    spec.x0[j]
                } else if k == n {
                    spec.xf[j]
                } else {
                    None
                };
                match fixed {
                    Some(v) => {
                        lb[base + j] = v / sx[j];
                        ub[base + j] = v / sx[j];
                    }
                    None => {
                        lb[base + j] = spec.x_lower[j] / sx[j];
                        ub[base + j] = spec.x_upper[j] / sx[j];
                    }
                }
            }
            for j in 0..nu {
                lb[base + nx + j] = spec.u_lower[j] / su[j];
                ub[base + nx + j] = spec.u_upper[j] / su[j];
            }
        }
        let mut mid_bounds = Vec::new();
        for j in 0..nx {
            if spec.x_lower[j].is_finite() {
                mid_bounds.push((j, -1.0, spec.x_lower[j]));
            }
            if spec.x_upper[j].is_finite() {
                mid_bounds.push((j, 1.0, spec.x_upper[j]));
            }
        }
        Self {
            model,
            n,
            nx,
            nu,
            np,
            sx,
            su,
            stf,
            lb,
            ub,
            smoothing: spec.smoothing,
            mid_path: spec.midpoint_path,
            mid_bounds,
        }
    }

    /// Defects are measured relative to the typical per-interval change.
    fn defect_scale(&self, j: usize) -> f64 {
        self.sx[j] / self.n as f64
    }

    fn base(&self, k: usize) -> usize {
        1 + k * (self.nx + self.nu)
    }

    fn node(&self, z: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
        let b = self.base(k);
        let x = (0..self.nx).map(|j| z[b + j] * self.sx[j]).collect();
        let u = (0..self.nu).map(|j| z[b + self.nx + j] * self.su[j]).collect();
        (x, u)
    }

    fn encode(&self, tf: f64, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut z = vec![0.0; self.lb.len()];
        z[0] = tf / self.stf;
        for k in 0..=self.n {
            let b = self.base(k);
            for j in 0..self.nx {
                z[b + j] = states[k][j] / self.sx[j];
            }
            for j in 0..self.nu {
                z[b + self.nx + j] = inputs[k][j] / self.su[j];
            }
        }
        z
    }

    fn decode(&self, z: &[f64]) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut states = Vec::with_capacity(self.n + 1);
        let mut inputs = Vec::with_capacity(self.n + 1);
        for k in 0..=self.n {
            let (x, u) = self.node(z, k);
            states.push(x);
            inputs.push(u);
        }
        (z[0] * self.stf, states, inputs)
    }

    /// Node-wise dynamics values and Jacobians `[∂f/∂x ∂f/∂u]` by central differences.
    fn node_dynamics(&self, x: &[f64], u: &[f64], f: &mut [f64], jac: Option<&mut DMatrix<f64>>) {
        self.model.rhs(x, u, f);
        if let Some(jac) = jac {
            let (nx, nu) = (self.nx, self.nu);
            let mut xp = x.to_vec();
            let mut up = u.to_vec();
            let mut fp = vec![0.0; nx];
            let mut fm = vec![0.0; nx];
            for i in 0..nx + nu {
                let (v, s) = if i < nx { (x[i], self.sx[i]) } else { (u[i - nx], self.su[i - nx]) };
                let h = 1e-6 * s.max(v.abs());
                if i < nx {
                    xp[i] = v + h;
                    self.model.rhs(&xp, &up, &mut fp);
                    xp[i] = v - h;
                    self.model.rhs(&xp, &up, &mut fm);
                    xp[i] = v;
                } else {
                    up[i - nx] = v + h;
                    self.model.rhs(&xp, &up, &mut fp);
                    up[i - nx] = v - h;
                    self.model.rhs(&xp, &up, &mut fm);
                    up[i - nx] = v;
                }
                for j in 0..nx {
                    jac[(j, i)] = (fp[j] - fm[j]) / (2.0 * h);
                }
            }
        }
    }

    fn node_path(&self, x: &[f64], u: &[f64], g: &mut [f64], jac: Option<&mut DMatrix<f64>>) {
        self.model.path(x, u, g);
        if let Some(jac) = jac {
            let (nx, nu, np) = (self.nx, self.nu, self.np);
            let mut xp = x.to_vec();
            let mut up = u.to_vec();
            let mut gp = vec![0.0; np];
            let mut gm = vec![0.0; np];
            for i in 0..nx + nu {
                let (v, s) = if i < nx { (x[i], self.sx[i]) } else { (u[i - nx], self.su[i - nx]) };
                let h = 1e-6 * s.max(v.abs());
                if i < nx {
                    xp[i] = v + h;
                    self.model.path(&xp, &up, &mut gp);
                    xp[i] = v - h;
                    self.model.path(&xp, &up, &mut gm);
                    xp[i] = v;
                } else {
                    up[i - nx] = v + h;
                    self.model.path(&xp, &up, &mut gp);
                    up[i - nx] = v - h;
                    self.model.path(&xp, &up, &mut gm);
                    up[i - nx] = v;
                }
                for j in 0..np {
                    jac[(j, i)] = (gp[j] - gm[j]) / (2.0 * h);
                }
            }
        }
    }

    fn evaluate(&self, z: &[f64], c: &mut [f64], mut rows: Option<&mut [SparseRow]>) {
        let (n, nx, nu, np) = (self.n, self.nx, self.nu, self.np);
        let tf = z[0] * self.stf;
        let half = tf / (2.0 * n as f64);
        let mut fs = vec![vec![0.0; nx]; n + 1];
        let mut jacs: Vec<DMatrix<f64>> = Vec::new();
        let want = rows.is_some();
        let mut pj = DMatrix::zeros(np, nx + nu);
        let mut g = vec![0.0; np];
        for k in 0..=n {
            let (x, u) = self.node(z, k);
            if want {
                let mut j = DMatrix::zeros(nx, nx + nu);
                self.node_dynamics(&x, &u, &mut fs[k], Some(&mut j));
                jacs.push(j);
            } else {
                self.node_dynamics(&x, &u, &mut fs[k], None);
            }
            let off = n * nx + k * np;
            self.node_path(&x, &u, &mut g, if want { Some(&mut pj) } else { None });
            c[off..off + np].copy_from_slice(&g);
            if let Some(rows) = rows.as_deref_mut() {
                let b = self.base(k);
                for p in 0..np {
                    let r = &mut rows[off + p];
                    r.clear();
                    for i in 0..nx + nu {
                        let s = if i < nx { self.sx[i] } else { self.su[i - nx] };
                        r.push(b + i, pj[(p, i)] * s);
                    }
                }
            }
        }
        for k in 0..n {
            let (b0, b1) = (self.base(k), self.base(k + 1));
            for j in 0..nx {
                let xk = z[b0 + j] * self.sx[j];
                let xk1 = z[b1 + j] * self.sx[j];
                let row = k * nx + j;
                c[row] = (xk1 - xk - half * (fs[k][j] + fs[k + 1][j])) / self.defect_scale(j);
                if let Some(rows) = rows.as_deref_mut() {
                    let r = &mut rows[row];
                    r.clear();
                    let inv = 1.0 / self.defect_scale(j);
                    r.push(0, -(self.stf / (2.0 * n as f64)) * (fs[k][j] + fs[k + 1][j]) * inv);
                    for (bb, jac, sign) in [(b0, &jacs[k], -1.0), (b1, &jacs[k + 1], 1.0)] {
                        for i in 0..nx {
                            let d = if i == j { sign } else { 0.0 };
                            r.push(bb + i, (d - half * jac[(j, i)]) * self.sx[i] * inv);
                        }
                        for i in 0..nu {
                            r.push(bb + nx + i, -half * jac[(j, nx + i)] * self.su[i] * inv);
                        }
                    }
                }
            }
        }
        self.evaluate_midpoints(z, &fs, &jacs, c, rows);
    }

    fn n_mid(&self) -> usize {
        if self.mid_path {
            self.np + self.mid_bounds.len()
        } else {
            self.mid_bounds.len()
        }
    }

    /// Hermite midpoint `x_m = (x_k + x_k+1)/2 + h/8·(f_k − f_k+1)` with the
    /// averaged input.
    fn evaluate_midpoints(&self, z: &[f64], fs: &[Vec<f64>], jacs: &[DMatrix<f64>], c: &mut [f64], mut rows: Option<&mut [SparseRow]>) {
        let (n, nx, nu, np) = (self.n, self.nx, self.nu, self.np);
        let h = z[0] * self.stf / n as f64;
        let first = n * nx + (n + 1) * np;
        let per = self.n_mid();
        let want = rows.is_some();
        let nv = 1 + 2 * (nx + nu);
        let mut g = vec![0.0; np];
        let mut pj = DMatrix::zeros(np, nx + nu);
        for k in 0..n {
            let (x0, u0) = self.node(z, k);
            let (x1, u1) = self.node(z, k + 1);
            let xm: Vec<f64> = (0..nx).map(|j| 0.5 * (x0[j] + x1[j]) + h / 8.0 * (fs[k][j] - fs[k + 1][j])).collect();
            let um: Vec<f64> = (0..nu).map(|j| 0.5 * (u0[j] + u1[j])).collect();
            // d(x_m, u_m)/d(tf, node k, node k+1) in scaled variables
            let mut dm = DMatrix::<f64>::zeros(nx + nu, nv);
            if want {
                let (b0, b1) = (1, 1 + nx + nu);
                for j in 0..nx {
                    dm[(j, 0)] = self.stf / (8.0 * n as f64) * (fs[k][j] - fs[k + 1][j]);
                    for i in 0..nx + nu {
                        let s = if i < nx { self.sx[i] } else { self.su[i - nx] };
                        let d = if i == j { 0.5 } else { 0.0 };
                        dm[(j, b0 + i)] = (d + h / 8.0 * jacs[k][(j, i)]) * s;
                        dm[(j, b1 + i)] = (d - h / 8.0 * jacs[k + 1][(j, i)]) * s;
                    }
                }
                for j in 0..nu {
                    dm[(nx + j, b0 + nx + j)] = 0.5 * self.su[j];
                    dm[(nx + j, b1 + nx + j)] = 0.5 * self.su[j];
                }
            }
            let var = |v: usize| -> usize {
                if v == 0 {
                    0
                } else if v <= nx + nu {
                    self.base(k) + v - 1
                } else {
                    self.base(k + 1) + v - 1 - (nx + nu)
                }
            };
            let off = first + k * per;
            let mut row = off;
            if self.mid_path {
                self.node_path(&xm, &um, &mut g, if want { Some(&mut pj) } else { None });
                for p in 0..np {
                    c[row] = g[p];
                    if let Some(rows) = rows.as_deref_mut() {
                        let r = &mut rows[row];
                        r.clear();
                        let d = pj.row(p) * &dm;
                        for v in 0..nv {
                            r.push(var(v), d[v]);
                        }
                    }
                    row += 1;
                }
            }
            for &(j, sign, lim) in &self.mid_bounds {
                c[row] = sign * (xm[j] - lim) / self.sx[j];
                if let Some(rows) = rows.as_deref_mut() {
                    let r = &mut rows[row];
                    r.clear();
                    for v in 0..nv {
                        r.push(var(v), sign * dm[(j, v)] / self.sx[j]);
                    }
                }
                row += 1;
            }
        }
    }
}

impl<M: OcpModel> NlpProblem for Transcription<'_, M> {
    fn n(&self) -> usize {
        self.lb.len()
    }

    fn lower(&self) -> &[f64] {
        &self.lb
    }

    fn upper(&self) -> &[f64] {
        &self.ub
    }

    fn n_eq(&self) -> usize {
        self.n * self.nx
    }

    fn n_ineq(&self) -> usize {
        (self.n + 1) * self.np + self.n * self.n_mid()
    }

    fn objective(&self, z: &[f64], grad: &mut [f64], hess: Option<&mut DMatrix<f64>>) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad[0] = 1.0;
        let mut f = z[0];
        let w = self.smoothing;
        if w > 0.0 {
            for k in 0..self.n {
                for i in 0..self.nu {
                    let a = self.base(k) + self.nx + i;
                    let b = self.base(k + 1) + self.nx + i;
                    let d = z[b] - z[a];
                    f += w * d * d;
                    grad[b] += 2.0 * w * d;
                    grad[a] -= 2.0 * w * d;
                }
            }
            if let Some(h) = hess {
                for k in 0..self.n {
                    for i in 0..self.nu {
                        let a = self.base(k) + self.nx + i;
                        let b = self.base(k + 1) + self.nx + i;
                        h[(a, a)] += 2.0 * w;
                        h[(b, b)] += 2.0 * w;
                        h[(a, b)] -= 2.0 * w;
                        h[(b, a)] -= 2.0 * w;
                    }
                }
            }
        }
        f
    }

    fn constraints(&self, z: &[f64], c: &mut [f64]) {
        self.evaluate(z, c, None);
    }

    fn jacobian(&self, z: &[f64], c: &mut [f64], rows: &mut [SparseRow]) {
        self.evaluate(z, c, Some(rows));
    }
}

pub fn solve_ocp<M: OcpModel>(model: &M, spec: &OcpSpec, guess: &OcpGuess, opts: &AlmOptions) -> OcpSolution {
    let tr = Transcription::new(model, spec, guess.tf);
    let z0 = tr.encode(guess.tf, &guess.states, &guess.inputs);
    let res = nlp::solve(&tr, &z0, opts);
    let (tf, states, inputs) = tr.decode(&res.z);
    let mut c = vec![0.0; tr.n_eq() + tr.n_ineq()];
    tr.constraints(&res.z, &mut c);
    let max_defect = c[..tr.n_eq()]
        .iter()
        .zip((0..tr.n_eq()).map(|r| tr.defect_scale(r % tr.nx)))
        .map(|(v, s)| (v * s).abs())
        .fold(0.0, f64::max);
    let node_rows = tr.n_eq() + (spec.intervals + 1) * tr.np;
    let mut max_path_violation = c[tr.n_eq()..node_rows].iter().fold(0.0_f64, |a, v| a.max(*v));
    // midpoint bound rows are relative to the state scale
    let per = tr.n_mid();
    for k in 0..spec.intervals {
        for (q, v) in c[node_rows + k * per..node_rows + (k + 1) * per].iter().enumerate() {
            let v = if tr.mid_path && q < tr.np { *v } else { v * tr.sx[tr.mid_bounds[q - if tr.mid_path { tr.np } else { 0 }].0] };
            max_path_violation = max_path_violation.max(v);
        }
    }
    let n = spec.intervals;
    OcpSolution {
        tf,
        times: (0..=n).map(|k| tf * k as f64 / n as f64).collect(),
        states,
        inputs,
        status: res.status,
        max_defect,
        max_path_violation,
        iterations: res.inner_iterations,
    }
}

/// Linear state interpolation with zero inputs, a common initial guess.
pub fn linear_guess(x0: &[f64], xf: &[f64], nu: usize, tf: f64, intervals: usize) -> OcpGuess {
    let states = (0..=intervals)
        .map(|k| {
            let s = k as f64 / intervals as f64;
            x0.iter().zip(xf).map(|(a, b)| a + (b - a) * s).collect()
        })
        .collect();
    OcpGuess {
        tf,
        states,
        inputs: vec![vec![0.0; nu]; intervals + 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Double integrator `ẍ = u` with a speed limit.
    struct DoubleIntegrator;

    impl OcpModel for DoubleIntegrator {
        fn nx(&self) -> usize {
            2
        }
        fn nu(&self) -> usize {
            1
        }
        fn np(&self) -> usize {
            0
        }
        fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
            dx[0] = x[1];
            dx[1] = u[0];
        }
        fn path(&self, _x: &[f64], _u: &[f64], _g: &mut [f64]) {}
    }

    fn spec(distance: f64, vmax: f64, n: usize) -> OcpSpec {
        OcpSpec {
            x_lower: vec![-10.0, -vmax],
            x_upper: vec![10.0, vmax],
            u_lower: vec![-1.0],
            u_upper: vec![1.0],
            x0: vec![Some(0.0), Some(0.0)],
            xf: vec![Some(distance), Some(0.0)],
            tf_lower: 0.0,
            tf_upper: 50.0,
            intervals: n,
            smoothing: 1e-6,
            midpoint_path: false,
        }
    }

    #[test]
    fn rest_to_rest_bang_bang() {
        let s = spec(2.0, 10.0, 40);
        let g = linear_guess(&[0.0, 0.0], &[2.0, 0.0], 1, 4.0, 40);
        let sol = solve_ocp(&DoubleIntegrator, &s, &g, &AlmOptions::default());
        assert!(matches!(sol.status, AlmStatus::Converged | AlmStatus::Feasible), "{:?}", sol.status);
        assert!(sol.max_defect <= 1e-6);
        assert!((sol.tf - 2.0 * 2f64.sqrt()).abs() <= 0.02 * 2.0 * 2f64.sqrt(), "tf {}", sol.tf);
    }

    #[test]
    fn rest_to_rest_with_coast() {
        let s = spec(4.0, 1.0, 40);
        let g = linear_guess(&[0.0, 0.0], &[4.0, 0.0], 1, 6.0, 40);
        let sol = solve_ocp(&DoubleIntegrator, &s, &g, &AlmOptions::default());
        assert!(sol.max_defect <= 1e-6);
        assert_abs_diff_eq!(sol.tf, 5.0, epsilon = 0.1);
    }
}
