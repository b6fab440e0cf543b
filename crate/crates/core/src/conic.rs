//! Continuous conic programs (linear, second-order and small PSD cones)
//! solved with Clarabel's interior-point method, plus the small Hermitian
//! projection used by cut separation.
//!
//! # Dual signs
//!
//! `duals[r]` multiplies `g_r(x)` where `g_r(x) = a·x − rhs` for `≤` and `=`
//! rows and `g_r(x) = rhs − a·x` for `≥` rows. At an optimum
//! `objective(x) + Σ duals[r]·g_r(x)` is the Lagrangian, inequality duals are
//! nonnegative and equality duals are free.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{LinExpr, ModelIR, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub primal: Vec<f64>,
    /// One multiplier per linear row of the model, see the module docs.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    /// Set when the solver stopped at its relaxed accuracy level.
    pub reduced_accuracy: bool,
    pub iterations: u32,
    pub solve_time: f64,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }

    /// A value that lower-bounds the optimum: the smaller of the primal and
    /// dual objectives.
    pub fn bound(&self) -> f64 {
        self.objective.min(self.dual_objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iters: u32,
    pub time_limit_s: f64,
    pub verbose: bool,
}

impl Default for ConicOptions {
    fn default() -> Self {
        ConicOptions {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iters: 200,
            time_limit_s: f64::INFINITY,
            verbose: false,
        }
    }
}

#[derive(Default)]
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the slack row `s = b − A x` equal to `expr` (so `A = −terms`).
    fn push_expr(&mut self, e: &LinExpr) {
        let r = self.b.len();
        for &(j, a) in &e.terms {
            self.i.push(r);
            self.j.push(j);
            self.v.push(-a);
        }
        self.b.push(e.constant);
    }

    /// Appends `a·x + s = b`.
    fn push_row(&mut self, terms: &[(usize, f64)], rhs: f64, scale: f64) {
        let r = self.b.len();
        for &(j, a) in terms {
            self.i.push(r);
            self.j.push(j);
            self.v.push(a * scale);
        }
        self.b.push(rhs * scale);
    }

    fn len(&self) -> usize {
        self.b.len()
    }
}

/// Solves the continuous conic program. Binary markers are ignored; the
/// caller is expected to pass a relaxation.
pub fn solve_conic(model: &ModelIR, opts: &ConicOptions) -> Result<ConicSolution> {
    model.validate()?;
    let n = model.n_vars();
    let mut rows = Rows::default();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    // Slack-row index of every linear row, with sign.
    let mut row_slot = vec![(0usize, 1.0f64); model.rows.len()];

    // Zero cone: equalities and fixed variables.
    let start = rows.len();
    for (r, row) in model.rows.iter().enumerate() {
        if row.sense == Sense::Eq {
            row_slot[r] = (rows.len(), 1.0);
            rows.push_row(&row.terms, row.rhs, 1.0);
        }
    }
    for (j, v) in model.variables.iter().enumerate() {
        if v.lo == v.hi {
            rows.push_row(&[(j, 1.0)], v.lo, 1.0);
        }
    }
    if rows.len() > start {
        cones.push(SupportedConeT::ZeroConeT(rows.len() - start));
    }

    // Nonnegative cone: inequalities, bounds and 1×1 PSD blocks.
    let start = rows.len();
    for (r, row) in model.rows.iter().enumerate() {
        match row.sense {
            Sense::Le => {
                row_slot[r] = (rows.len(), 1.0);
                rows.push_row(&row.terms, row.rhs, 1.0);
            }
            Sense::Ge => {
                row_slot[r] = (rows.len(), 1.0);
                rows.push_row(&row.terms, row.rhs, -1.0);
            }
            Sense::Eq => {}
        }
    }
    for (j, v) in model.variables.iter().enumerate() {
        if v.lo == v.hi {
            continue;
        }
        if v.hi.is_finite() {
            rows.push_row(&[(j, 1.0)], v.hi, 1.0);
        }
        if v.lo.is_finite() {
            rows.push_row(&[(j, -1.0)], -v.lo, 1.0);
        }
    }
    for p in &model.psds {
        if p.dim == 1 {
            rows.push_expr(&p.entries[0]);
        }
    }
    if rows.len() > start {
        cones.push(SupportedConeT::NonnegativeConeT(rows.len() - start));
    }

    // Second-order cones: (rhs, lhs...).
    for c in &model.socs {
        rows.push_expr(&c.rhs);
        for e in &c.lhs {
            rows.push_expr(e);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + c.lhs.len()));
    }
    // Rotated cones Σ l² ≤ x·y as (x + y, x − y, 2l...).
    let rotated = model
        .rotated
        .iter()
        .map(|c| (c.lhs.clone(), c.x.clone(), c.y.clone()))
        .chain(model.psds.iter().filter(|p| p.dim == 2).map(|p| {
            (vec![p.entry(0, 1).clone()], p.entry(0, 0).clone(), p.entry(1, 1).clone())
        }));
    for (lhs, x, y) in rotated {
        rows.push_expr(&add(&x, &y, 1.0));
        rows.push_expr(&add(&x, &y, -1.0));
        for e in &lhs {
            rows.push_expr(&scale(e, 2.0));
        }
        cones.push(SupportedConeT::SecondOrderConeT(2 + lhs.len()));
    }
    if model.psds.iter().any(|p| p.dim > 2) {
        return Err(Error::Model("PSD cones larger than 2×2 are not supported".into()));
    }

    let m = rows.len();
    let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(j, c) in &model.objective.terms {
        q[j] += c;
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(opts.verbose)
        .tol_feas(opts.tol_feas)
        .tol_gap_abs(opts.tol_gap)
        .tol_gap_rel(opts.tol_gap)
        .max_iter(opts.max_iters)
        .time_limit(opts.time_limit_s)
        .presolve_enable(false)
        .build()
        .map_err(|e| Error::Solver(format!("{e:?}")))?;

    let clock = Instant::now();
    let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings)
        .map_err(|e| Error::Solver(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let (status, reduced) = match sol.status {
        SolverStatus::Solved => (ConicStatus::Optimal, false),
        SolverStatus::AlmostSolved => (ConicStatus::Optimal, true),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            (ConicStatus::Infeasible, false)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            (ConicStatus::Unbounded, false)
        }
        SolverStatus::MaxTime => (ConicStatus::TimeLimit, false),
        _ => (ConicStatus::NumericalFailure, false),
    };
    let primal = sol.x.clone();
    let duals: Vec<f64> = row_slot.iter().map(|&(k, s)| s * sol.z[k]).collect();
    let k = model.objective.constant;
    let objective = sol.obj_val + k;
    let dual_objective = sol.obj_val_dual + k;
    let residuals = Residuals {
        primal_infeas: if status == ConicStatus::Optimal { model.max_violation(&primal) } else { f64::INFINITY },
        dual_infeas: sol.r_dual,
        gap: (objective - dual_objective).abs() / objective.abs().max(1.0),
    };
    Ok(ConicSolution {
        status,
        primal,
        duals,
        objective,
        dual_objective,
        residuals,
        reduced_accuracy: reduced,
        iterations: sol.iterations,
        solve_time: clock.elapsed().as_secs_f64(),
    })
}

fn add(x: &LinExpr, y: &LinExpr, sign: f64) -> LinExpr {
    let mut terms = x.terms.clone();
    terms.extend(y.terms.iter().map(|&(j, a)| (j, sign * a)));
    LinExpr::new(terms, x.constant + sign * y.constant)
}

fn scale(e: &LinExpr, k: f64) -> LinExpr {
    LinExpr::new(e.terms.iter().map(|&(j, a)| (j, k * a)).collect(), k * e.constant)
}

/// A partially specified Hermitian matrix: all diagonal entries plus the
/// listed off-diagonal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianPattern {
    pub dim: usize,
    pub diag: Vec<f64>,
    /// `(k, l, value)` with `k < l`; the `(l, k)` entry is the conjugate.
    pub offdiag: Vec<(usize, usize, Complex<f64>)>,
}

impl HermitianPattern {
    /// Frobenius inner product over the specified entries.
    pub fn dot(&self, other: &HermitianPattern) -> f64 {
        let d: f64 = self.diag.iter().zip(&other.diag).map(|(a, b)| a * b).sum();
        let o: f64 = self
            .offdiag
            .iter()
            .zip(&other.offdiag)
            .map(|(a, b)| 2.0 * (a.2.re * b.2.re + a.2.im * b.2.im))
            .sum();
        d + o
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sub(&self, other: &HermitianPattern) -> HermitianPattern {
        HermitianPattern {
            dim: self.dim,
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a - b).collect(),
            offdiag: self
                .offdiag
                .iter()
                .zip(&other.offdiag)
                .map(|(a, b)| (a.0, a.1, a.2 - b.2))
                .collect(),
        }
    }

    pub fn scaled(&self, k: f64) -> HermitianPattern {
        HermitianPattern {
            dim: self.dim,
            diag: self.diag.iter().map(|a| a * k).collect(),
            offdiag: self.offdiag.iter().map(|a| (a.0, a.1, a.2 * k)).collect(),
        }
    }

    fn to_matrix(&self, fill: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
        let mut m = fill.clone();
        for (k, &d) in self.diag.iter().enumerate() {
            m[(k, k)] = Complex::new(d, 0.0);
        }
        for &(k, l, z) in &self.offdiag {
            m[(k, l)] = z;
            m[(l, k)] = z.conj();
        }
        m
    }

    fn from_matrix(&self, m: &DMatrix<Complex<f64>>) -> HermitianPattern {
        HermitianPattern {
            dim: self.dim,
            diag: (0..self.dim).map(|k| m[(k, k)].re).collect(),
            offdiag: self.offdiag.iter().map(|&(k, l, _)| (k, l, m[(k, l)])).collect(),
        }
    }

    /// Smallest eigenvalue of the pattern matrix with unspecified entries
    /// set to zero.
    pub fn min_eigenvalue_zero_filled(&self) -> f64 {
        let z = DMatrix::from_element(self.dim, self.dim, Complex::new(0.0, 0.0));
        hermitian_eigen(&self.to_matrix(&z)).0.min()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdProjection {
    pub status: ConicStatus,
    /// Point with a PSD completion.
    pub projected: HermitianPattern,
    /// `x̂ − x*` repaired so that, zero-filled, it is negative semidefinite.
    pub normal: HermitianPattern,
    pub iterations: usize,
}

/// Projects a partial Hermitian matrix onto the set of partial matrices that
/// admit a PSD completion, in the Frobenius norm over the specified entries.
///
/// Minimizes `½‖P(X) − target‖²` over PSD `X` by accelerated projected
/// gradient (unit step, restarted when the objective goes up); `P` keeps the
/// pattern entries. The normal is returned with its positive spectrum
/// removed, so `⟨normal, y⟩ ≤ 0` holds exactly for every completable `y`.
pub fn solve_small_psd(target: &HermitianPattern, max_iters: usize, tol: f64) -> PsdProjection {
    let n = target.dim;
    let zero = Complex::new(0.0, 0.0);
    let mut y = DMatrix::from_element(n, n, zero);
    let mut x = DMatrix::from_element(n, n, zero);
    let mut momentum = 1.0f64;
    let mut last_obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..max_iters {
        iterations = it + 1;
        let next = psd_part(&target.to_matrix(&y));
        let obj = target.sub(&target.from_matrix(&next)).norm();
        let change = (&next - &x).norm();
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        if obj > last_obj {
            // Restart from the plain step.
            momentum = 1.0;
            y = x.clone();
            continue;
        }
        let beta = (momentum - 1.0) / m_next;
        y = &next + (&next - &x) * Complex::new(beta, 0.0);
        x = next;
        momentum = m_next;
        last_obj = obj;
        if change <= tol * (1.0 + x.norm()) {
            converged = true;
            break;
        }
    }
    let projected = target.from_matrix(&x);
    let mut normal = target.sub(&projected);
    // Remove any positive spectrum left by early termination.
    let lmax = -normal.scaled(-1.0).min_eigenvalue_zero_filled();
    if lmax > 0.0 {
        for d in &mut normal.diag {
            *d -= lmax * (1.0 + 1e-12) + 1e-15;
        }
    }
    let status = if converged || iterations > 0 && normal.norm().is_finite() {
        ConicStatus::Optimal
    } else {
        ConicStatus::NumericalFailure
    };
    PsdProjection {
        status: if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            status
        } else {
            ConicStatus::NumericalFailure
        },
        projected,
        normal,
        iterations,
    }
}

fn hermitian_eigen(m: &DMatrix<Complex<f64>>) -> (nalgebra::DVector<f64>, DMatrix<Complex<f64>>) {
    let e = nalgebra::linalg::SymmetricEigen::new(m.clone());
    (e.eigenvalues, e.eigenvectors)
}

fn psd_part(m: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut out = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for (k, &lam) in vals.iter().enumerate() {
        if lam > 0.0 {
            let v = vecs.column(k);
            out += v * v.adjoint() * Complex::new(lam, 0.0);
        }
    }
    // Symmetrize against rounding.
    (&out + out.adjoint()) * Complex::new(0.5, 0.0)
}
