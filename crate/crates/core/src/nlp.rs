//! Primal-dual interior-point method for smooth nonlinear programs
//!
//! ```text
//! min f(x)  s.t.  g(x) = 0,  h(x) ≤ 0
//! ```
//!
//! in the style of MATPOWER's MIPS: slacks `z > 0` turn `h(x) + z = 0` into
//! equalities, the reduced Newton system
//!
//! ```text
//! [ M   Jgᵀ ] [dx]   [-N]       M = ∇²L + Jhᵀ diag(μ/z) Jh
//! [ Jg  -δc ] [dλ] = [-g]       N = ∇L + Jhᵀ diag(1/z) (μ∘h + γ)
//! ```
//!
//! is factored by sparse LDLᵀ, with a diagonal shift on `M` until the
//! inertia is right.

use std::collections::BTreeMap;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::qdldl::{QDLDLFactorisation, QDLDLSettingsBuilder};
use log::debug;

/// Sparse entries `(row, col, value)`.
pub type Triplets = Vec<(usize, usize, f64)>;

pub trait NlpProblem {
    fn n(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn eq(&self, x: &[f64], out: &mut [f64]);
    fn eq_jacobian(&self, x: &[f64]) -> Triplets;
    fn ineq(&self, x: &[f64], out: &mut [f64]);
    fn ineq_jacobian(&self, x: &[f64]) -> Triplets;
    /// Hessian of `σ f + λᵀg + μᵀh`; any triangle or both, duplicates are
    /// summed and only entries with `row ≤ col` are used after symmetrizing.
    fn hessian(&self, x: &[f64], sigma: f64, lambda: &[f64], mu: &[f64]) -> Triplets;
}

#[derive(Debug, Clone, Copy)]
pub struct MipsOptions {
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub max_iter: usize,
    pub xi: f64,
    pub sigma: f64,
    pub z0: f64,
    pub time_limit_s: f64,
}

impl Default for MipsOptions {
    fn default() -> Self {
        MipsOptions {
            feas_tol: 1e-9,
            grad_tol: 1e-6,
            comp_tol: 1e-7,
            max_iter: 300,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
            time_limit_s: 600.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MipsResult {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest equality or inequality violation at `x`.
    pub infeasibility: f64,
}

pub fn mips<P: NlpProblem>(prob: &P, x0: &[f64], opts: &MipsOptions) -> MipsResult {
    let clock = Instant::now();
    let (n, neq, niq) = (prob.n(), prob.n_eq(), prob.n_ineq());
    let mut x = x0.to_vec();
    let mut g = vec![0.0; neq];
    let mut h = vec![0.0; niq];
    let mut df = vec![0.0; n];
    prob.eq(&x, &mut g);
    prob.ineq(&x, &mut h);
    let mut f = prob.objective(&x);

    let mut z = vec![opts.z0; niq];
    let mut mu = vec![opts.z0; niq];
    let mut gamma = 1.0;
    for k in 0..niq {
        if h[k] < -opts.z0 {
            z[k] = -h[k];
        }
        if gamma / z[k] > opts.z0 {
            mu[k] = gamma / z[k];
        }
    }
    let mut lambda = vec![0.0; neq];
    let mut converged = false;
    let mut it = 0;
    let mut delta_w_last = 0.0;

    while it < opts.max_iter {
        prob.gradient(&x, &mut df);
        let jg = prob.eq_jacobian(&x);
        let jh = prob.ineq_jacobian(&x);
        let lx = lagrangian_gradient(&df, &jg, &lambda, &jh, &mu);

        let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let maxh = h.iter().cloned().fold(0.0f64, f64::max);
        let feas = norm_inf(&g).max(maxh) / (1.0 + norm_inf(&x).max(norm_inf(&z)));
        let grad = norm_inf(&lx) / (1.0 + norm_inf(&lambda).max(norm_inf(&mu)));
        let comp = dot(&z, &mu) / (1.0 + norm_inf(&x));
        if it > 0 && feas < opts.feas_tol && grad < opts.grad_tol && comp < opts.comp_tol {
            converged = true;
            break;
        }
        if clock.elapsed().as_secs_f64() > opts.time_limit_s {
            break;
        }

        // Reduced system.
        let hess = prob.hessian(&x, 1.0, &lambda, &mu);
        let mut m_entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(r, c, v) in &hess {
            let key = if r <= c { (r, c) } else { (c, r) };
            *m_entries.entry(key).or_default() += v;
        }
        let mut rhs_n = lx.clone();
        let rows_h = by_row(&jh, niq);
        for (k, row) in rows_h.iter().enumerate() {
            let d = mu[k] / z[k];
            let w = (mu[k] * h[k] + gamma) / z[k];
            for &(a, va) in row {
                rhs_n[a] += va * w;
                for &(b, vb) in row {
                    if a <= b {
                        *m_entries.entry((a, b)).or_default() += d * va * vb;
                    }
                }
            }
        }
        for j in 0..n {
            m_entries.entry((j, j)).or_default();
        }

        let mut rhs = vec![0.0; n + neq];
        for j in 0..n {
            rhs[j] = -rhs_n[j];
        }
        for k in 0..neq {
            rhs[n + k] = -g[k];
        }
        let Some(sol) = solve_kkt(n, neq, &m_entries, &jg, &rhs, &mut delta_w_last) else {
            debug!("mips: KKT factorization failed at iteration {it}");
            break;
        };
        let dx = &sol[..n];
        let dlam = &sol[n..];

        // Slack and multiplier steps.
        let mut jh_dx = vec![0.0; niq];
        for &(r, c, v) in &jh {
            jh_dx[r] += v * dx[c];
        }
        let dz: Vec<f64> = (0..niq).map(|k| -h[k] - z[k] - jh_dx[k]).collect();
        let dmu: Vec<f64> = (0..niq).map(|k| -mu[k] + (gamma - mu[k] * dz[k]) / z[k]).collect();

        let step = |v: &[f64], dv: &[f64]| {
            let mut a = 1.0f64;
            for (vi, dvi) in v.iter().zip(dv) {
                if *dvi < 0.0 {
                    a = a.min(opts.xi * (-vi / dvi));
                }
            }
            a
        };
        let alpha_p = step(&z, &dz);
        let alpha_d = step(&mu, &dmu);

        for j in 0..n {
            x[j] += alpha_p * dx[j];
        }
        for k in 0..niq {
            z[k] += alpha_p * dz[k];
            mu[k] += alpha_d * dmu[k];
        }
        for k in 0..neq {
            lambda[k] += alpha_d * dlam[k];
        }
        if niq > 0 {
            gamma = opts.sigma * dot(&z, &mu) / niq as f64;
        }
        prob.eq(&x, &mut g);
        prob.ineq(&x, &mut h);
        f = prob.objective(&x);
        it += 1;
        if !f.is_finite() || x.iter().any(|v| !v.is_finite()) {
            break;
        }
    }

    let infeas = g
        .iter()
        .map(|v| v.abs())
        .chain(h.iter().map(|&v| v.max(0.0)))
        .fold(0.0f64, f64::max);
    MipsResult {
        objective: f,
        x,
        lambda,
        mu,
        converged,
        iterations: it,
        infeasibility: infeas,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn by_row(t: &Triplets, rows: usize) -> Vec<Vec<(usize, f64)>> {
    let mut out = vec![Vec::new(); rows];
    for &(r, c, v) in t {
        out[r].push((c, v));
    }
    out
}

fn lagrangian_gradient(df: &[f64], jg: &Triplets, lam: &[f64], jh: &Triplets, mu: &[f64]) -> Vec<f64> {
    let mut lx = df.to_vec();
    for &(r, c, v) in jg {
        lx[c] += v * lam[r];
    }
    for &(r, c, v) in jh {
        lx[c] += v * mu[r];
    }
    lx
}

/// Factors and solves the regularized KKT system, raising the primal shift
/// until the matrix has exactly `n` positive eigenvalues.
fn solve_kkt(
    n: usize,
    neq: usize,
    m: &BTreeMap<(usize, usize), f64>,
    jg: &Triplets,
    rhs: &[f64],
    delta_w_last: &mut f64,
) -> Option<Vec<f64>> {
    let dim = n + neq;
    let mut delta_c = 1e-10;
    let mut base: BTreeMap<(usize, usize), f64> = m.clone();
    for &(r, c, v) in jg {
        *base.entry((c, n + r)).or_default() += v;
    }
    for k in 0..neq {
        base.entry((n + k, n + k)).or_default();
    }
    let mut delta_w = 0.0;
    for attempt in 0..40 {
        let mut entries = base.clone();
        for j in 0..n {
            *entries.get_mut(&(j, j)).unwrap() += delta_w;
        }
        for k in 0..neq {
            *entries.get_mut(&(n + k, n + k)).unwrap() -= delta_c;
        }
        let a = csc_upper(dim, &entries);
        let settings = QDLDLSettingsBuilder::default()
            .regularize_enable(false)
            .build()
            .ok()?;
        if let Ok(mut fact) = QDLDLFactorisation::new(&a, Some(settings)) {
            let good = fact.positive_inertia() == n && fact.D.iter().all(|d| d.is_finite() && *d != 0.0);
            if good {
                let mut x = rhs.to_vec();
                fact.solve(&mut x);
                if x.iter().all(|v| v.is_finite()) {
                    *delta_w_last = delta_w;
                    return Some(x);
                }
            }
        }
        if attempt == 0 {
            // Rank-deficient constraint Jacobians show up as wrong inertia
            // too; a larger dual shift handles them.
            delta_c = 1e-8;
        }
        delta_w = if attempt == 0 {
            if *delta_w_last == 0.0 { 1e-4 } else { (*delta_w_last / 3.0).max(1e-20) }
        } else if *delta_w_last == 0.0 {
            delta_w * 100.0
        } else {
            delta_w * 8.0
        };
        if delta_w > 1e20 {
            break;
        }
    }
    None
}

fn csc_upper(dim: usize, entries: &BTreeMap<(usize, usize), f64>) -> CscMatrix<f64> {
    // Keys are (row, col) with row ≤ col; CSC wants column-major order.
    let mut by_col: Vec<(usize, usize, f64)> = entries.iter().map(|(&(r, c), &v)| (c, r, v)).collect();
    by_col.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut colptr = vec![0usize; dim + 1];
    let mut rowval = Vec::with_capacity(by_col.len());
    let mut nzval = Vec::with_capacity(by_col.len());
    for &(c, r, v) in &by_col {
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
    }
    for c in 0..dim {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(dim, dim, colptr, rowval, nzval)
}
