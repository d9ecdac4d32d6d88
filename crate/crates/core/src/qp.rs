//! Dense convex QP solver used for every stage subproblem, model
//! minimization and extensive-form oracle solve.
//!
//! ```text
//!     minimize     ½ xᵀPx + qᵀx + r
//!     subject to   A_eq x  = b_eq        (λ, free)
//!                  A_in x <= b_in        (μ ≥ 0)
//!                  lower <= x <= upper   (z_lower, z_upper ≥ 0)
//! ```
//!
//! Multipliers follow the Lagrangian `obj + λᵀ(A_eq x − b_eq) + μᵀ(A_in x − b_in)
//! + z_upperᵀ(x − upper) + z_lowerᵀ(lower − x)`, so stationarity reads
//! `Px + q + A_eqᵀλ + A_inᵀμ − z_lower + z_upper = 0` and the optimal value
//! moves by `−λᵀδ` when `b_eq` moves by `δ`.
//!
//! The method is Mehrotra's predictor-corrector interior point iteration on the
//! reduced Newton system `[P + GᵀWG, Aᵀ; A, 0]`, where bound rows contribute
//! only to the diagonal. Once the iterates are close, an active-set polish
//! solves the equality-constrained KKT system of the inferred active set,
//! which recovers primal and dual values to near machine precision whenever
//! the active set is identified correctly. The polished point is kept only if
//! its residuals beat the interior point ones.

use nalgebra::DMatrix;
use serde_json::json;

use crate::error::{check_dim, Error, Result};
use crate::model::{is_symmetric, min_eigenvalue, Matrix, Vector};

pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;
const STEP_FRACTION: f64 = 0.99;
const REG: f64 = 1e-13;
const POLISH_ROUNDS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: Matrix,
    pub q: Vector,
    pub r: f64,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    pub a_ineq: Matrix,
    pub b_ineq: Vector,
    pub lower: Vector,
    pub upper: Vector,
}

impl QpProblem {
    /// Validated constructor; `P` must be symmetric PSD within 1e-9.
    pub fn new(
        p: Matrix,
        q: Vector,
        r: f64,
        a_eq: Matrix,
        b_eq: Vector,
        lower: Vector,
        upper: Vector,
    ) -> Result<Self> {
        let d = q.len();
        let qp = Self {
            p,
            q,
            r,
            a_eq,
            b_eq,
            a_ineq: Matrix::zeros(0, d),
            b_ineq: Vector::zeros(0),
            lower,
            upper,
        };
        qp.validate()?;
        Ok(qp)
    }

    pub fn with_inequalities(mut self, a_ineq: Matrix, b_ineq: Vector) -> Result<Self> {
        self.a_ineq = a_ineq;
        self.b_ineq = b_ineq;
        self.validate_dims()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.r
    }

    fn validate_dims(&self) -> Result<()> {
        let d = self.dim();
        if self.p.nrows() != d || self.p.ncols() != d {
            return Err(Error::Dimension(format!(
                "P is {}x{}, expected {d}x{d}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.a_eq.ncols() != d || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::Dimension(
                "equality block has inconsistent shape".into(),
            ));
        }
        if self.a_ineq.ncols() != d || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(Error::Dimension(
                "inequality block has inconsistent shape".into(),
            ));
        }
        check_dim("lower bounds", d, self.lower.len())?;
        check_dim("upper bounds", d, self.upper.len())?;
        for (l, u) in self.lower.iter().zip(self.upper.iter()) {
            if l > u || l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::Infeasible(format!(
                    "empty bound interval [{l}, {u}]"
                )));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.validate_dims()?;
        if !is_symmetric(&self.p, 1e-12) {
            return Err(Error::InvalidInput("P is not symmetric".into()));
        }
        let scale = self.p.amax().max(1.0);
        if min_eigenvalue(&self.p) < -1e-9 * scale {
            return Err(Error::InvalidInput("P is not positive semidefinite".into()));
        }
        Ok(())
    }

    /// Debug dump in the instance-file matrix conventions (row-major arrays,
    /// infinite bounds as `null`).
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &Matrix| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        let vec = |v: &Vector| -> Vec<f64> { v.iter().copied().collect() };
        let bound = |v: &Vector| -> Vec<Option<f64>> {
            v.iter().map(|b| b.is_finite().then_some(*b)).collect()
        };
        json!({
            "P": rows(&self.p),
            "q": vec(&self.q),
            "r": self.r,
            "Aeq": rows(&self.a_eq),
            "beq": vec(&self.b_eq),
            "Ain": rows(&self.a_ineq),
            "bin": vec(&self.b_ineq),
            "lower": bound(&self.lower),
            "upper": bound(&self.upper),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub x_star: Vector,
    /// Duals of `A_eq x = b_eq`.
    pub lambda_eq: Vector,
    /// Duals of `A_in x <= b_in`.
    pub mu_ineq: Vector,
    pub z_lower: Vector,
    pub z_upper: Vector,
    pub value: f64,
    /// Scaled KKT residual, see [`kkt_residuals`].
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Scaled optimality residuals. Each is normalised by `1 +` the magnitude of
/// the terms it balances, so the measure is invariant to uniform rescaling
/// of large objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn kkt_residuals(p: &QpProblem, sol: &SubproblemSolution) -> KktResiduals {
    let x = &sol.x_star;
    let px = &p.p * x;
    let aty = p.a_eq.transpose() * &sol.lambda_eq;
    let gtz = p.a_ineq.transpose() * &sol.mu_ineq;
    let zb = &sol.z_upper - &sol.z_lower;
    let grad = &px + &p.q + &aty + &gtz + &zb;
    let mut dual_neg = 0.0_f64;
    for v in sol
        .mu_ineq
        .iter()
        .chain(sol.z_lower.iter())
        .chain(sol.z_upper.iter())
    {
        dual_neg = dual_neg.max(-v);
    }
    let stat_scale = 1.0
        + inf_norm(&px)
            .max(inf_norm(&p.q))
            .max(inf_norm(&aty))
            .max(inf_norm(&gtz))
            .max(inf_norm(&zb));

    let ax = &p.a_eq * x;
    let gx = &p.a_ineq * x;
    let xa = x.abs();
    let ax_abs = p.a_eq.abs() * &xa;
    let gx_abs = p.a_ineq.abs() * &xa;
    // Each row is measured against its own magnitude so that a large row
    // (a steep cut, say) does not hide the violation of a small one.
    let row = |v: f64, rhs: f64, lhs_abs: f64| v / (1.0 + rhs.abs().max(lhs_abs));
    let mut viol = 0.0_f64;
    for i in 0..ax.len() {
        viol = viol.max(row((ax[i] - p.b_eq[i]).abs(), p.b_eq[i], ax_abs[i]));
    }
    let mut comp = 0.0_f64;
    for i in 0..gx.len() {
        let slack = p.b_ineq[i] - gx[i];
        viol = viol.max(row(-slack, p.b_ineq[i], gx_abs[i]));
        comp = comp.max((sol.mu_ineq[i] * slack).abs());
    }
    let mut dual_inf = 0.0_f64;
    for i in 0..x.len() {
        if p.lower[i].is_finite() {
            let slack = x[i] - p.lower[i];
            viol = viol.max(row(-slack, p.lower[i], xa[i]));
            comp = comp.max((sol.z_lower[i] * slack).abs());
        } else {
            dual_inf = dual_inf.max(sol.z_lower[i].abs());
        }
        if p.upper[i].is_finite() {
            let slack = p.upper[i] - x[i];
            viol = viol.max(row(-slack, p.upper[i], xa[i]));
            comp = comp.max((sol.z_upper[i] * slack).abs());
        } else {
            dual_inf = dual_inf.max(sol.z_upper[i].abs());
        }
    }
    let obj = p.objective(x);
    // Multipliers on infinite bounds cannot be balanced by any slack.
    let stationarity = inf_norm(&grad).max(dual_neg).max(dual_inf) / stat_scale;
    KktResiduals {
        stationarity,
        primal: viol,
        complementarity: comp / (1.0 + obj.abs().max(stat_scale)),
    }
}

/// Internal standard form: equalities `E x = e` (original rows followed by
/// fixed variables) and inequalities split into dense rows plus bound rows.
struct StandardForm<'a> {
    p: &'a QpProblem,
    e_mat: Matrix,
    e_rhs: Vector,
    fixed: Vec<usize>,
    lower_idx: Vec<usize>,
    upper_idx: Vec<usize>,
}

impl<'a> StandardForm<'a> {
    fn new(p: &'a QpProblem) -> Self {
        let d = p.dim();
        let mut fixed = Vec::new();
        let mut lower_idx = Vec::new();
        let mut upper_idx = Vec::new();
        for i in 0..d {
            let (l, u) = (p.lower[i], p.upper[i]);
            if l == u {
                fixed.push(i);
            } else {
                if l.is_finite() {
                    lower_idx.push(i);
                }
                if u.is_finite() {
                    upper_idx.push(i);
                }
            }
        }
        let m0 = p.num_eq();
        let m = m0 + fixed.len();
        let mut e_mat = Matrix::zeros(m, d);
        let mut e_rhs = Vector::zeros(m);
        e_mat.rows_mut(0, m0).copy_from(&p.a_eq);
        e_rhs.rows_mut(0, m0).copy_from(&p.b_eq);
        for (k, &i) in fixed.iter().enumerate() {
            e_mat[(m0 + k, i)] = 1.0;
            e_rhs[m0 + k] = p.lower[i];
        }
        Self {
            p,
            e_mat,
            e_rhs,
            fixed,
            lower_idx,
            upper_idx,
        }
    }

    fn d(&self) -> usize {
        self.p.dim()
    }

    fn m(&self) -> usize {
        self.e_rhs.len()
    }

    fn kg(&self) -> usize {
        self.p.num_ineq()
    }

    fn k(&self) -> usize {
        self.kg() + self.lower_idx.len() + self.upper_idx.len()
    }

    /// Right-hand side `h` of the stacked inequality rows `G x <= h`.
    fn h(&self) -> Vector {
        let mut h = Vector::zeros(self.k());
        let kg = self.kg();
        h.rows_mut(0, kg).copy_from(&self.p.b_ineq);
        for (k, &i) in self.lower_idx.iter().enumerate() {
            h[kg + k] = -self.p.lower[i];
        }
        let off = kg + self.lower_idx.len();
        for (k, &i) in self.upper_idx.iter().enumerate() {
            h[off + k] = self.p.upper[i];
        }
        h
    }

    fn gx(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.k());
        let kg = self.kg();
        if kg > 0 {
            out.rows_mut(0, kg).copy_from(&(&self.p.a_ineq * x));
        }
        for (k, &i) in self.lower_idx.iter().enumerate() {
            out[kg + k] = -x[i];
        }
        let off = kg + self.lower_idx.len();
        for (k, &i) in self.upper_idx.iter().enumerate() {
            out[off + k] = x[i];
        }
        out
    }

    /// Largest row residual, each relative to `1 + max(|rhs|, Σ|a_ij x_j|)`.
    fn primal_residual(
        &self,
        r_p: &Vector,
        r_g: &Vector,
        x: &Vector,
        e_abs: &Matrix,
        h: &Vector,
    ) -> f64 {
        let xa = x.abs();
        let ex = e_abs * &xa;
        let mut out = 0.0_f64;
        for i in 0..r_p.len() {
            out = out.max(r_p[i].abs() / (1.0 + self.e_rhs[i].abs().max(ex[i])));
        }
        let kg = self.kg();
        let gx = if kg > 0 {
            self.p.a_ineq.abs() * &xa
        } else {
            Vector::zeros(0)
        };
        for i in 0..r_g.len() {
            let lhs = if i < kg {
                gx[i]
            } else if i < kg + self.lower_idx.len() {
                xa[self.lower_idx[i - kg]]
            } else {
                xa[self.upper_idx[i - kg - self.lower_idx.len()]]
            };
            out = out.max(r_g[i].abs() / (1.0 + h[i].abs().max(lhs)));
        }
        out
    }

    /// Row `i` of the stacked `G` as a column vector.
    fn constraint_row(&self, i: usize) -> Vector {
        let kg = self.kg();
        let off = kg + self.lower_idx.len();
        if i < kg {
            return self.p.a_ineq.row(i).transpose();
        }
        let mut row = Vector::zeros(self.d());
        if i < off {
            row[self.lower_idx[i - kg]] = -1.0;
        } else {
            row[self.upper_idx[i - off]] = 1.0;
        }
        row
    }

    fn gt(&self, w: &Vector) -> Vector {
        let kg = self.kg();
        let mut out = if kg > 0 {
            self.p.a_ineq.transpose() * w.rows(0, kg)
        } else {
            Vector::zeros(self.d())
        };
        for (k, &i) in self.lower_idx.iter().enumerate() {
            out[i] -= w[kg + k];
        }
        let off = kg + self.lower_idx.len();
        for (k, &i) in self.upper_idx.iter().enumerate() {
            out[i] += w[off + k];
        }
        out
    }

    /// `P + GᵀWG` for a diagonal weight `w`.
    fn reduced_hessian(&self, w: &Vector) -> Matrix {
        let mut k = self.p.p.clone();
        let kg = self.kg();
        if kg > 0 {
            let mut scaled = self.p.a_ineq.clone();
            for (r, mut row) in scaled.row_iter_mut().enumerate() {
                row *= w[r].sqrt();
            }
            k += scaled.transpose() * &scaled;
        }
        for (j, &i) in self.lower_idx.iter().enumerate() {
            k[(i, i)] += w[kg + j];
        }
        let off = kg + self.lower_idx.len();
        for (j, &i) in self.upper_idx.iter().enumerate() {
            k[(i, i)] += w[off + j];
        }
        k
    }

    fn initial_x(&self) -> Vector {
        let p = self.p;
        Vector::from_iterator(
            self.d(),
            (0..self.d()).map(|i| {
                let (l, u) = (p.lower[i], p.upper[i]);
                match (l.is_finite(), u.is_finite()) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l + 1.0,
                    (false, true) => u - 1.0,
                    (false, false) => 0.0,
                }
            }),
        )
    }

    /// Maps internal multipliers back to the public layout.
    fn unpack(&self, x: Vector, y: &Vector, z: &Vector, iterations: usize) -> SubproblemSolution {
        let d = self.d();
        let m0 = self.p.num_eq();
        let kg = self.kg();
        let mut z_lower = Vector::zeros(d);
        let mut z_upper = Vector::zeros(d);
        for (k, &i) in self.lower_idx.iter().enumerate() {
            z_lower[i] = z[kg + k];
        }
        let off = kg + self.lower_idx.len();
        for (k, &i) in self.upper_idx.iter().enumerate() {
            z_upper[i] = z[off + k];
        }
        for (k, &i) in self.fixed.iter().enumerate() {
            let yi = y[m0 + k];
            if yi >= 0.0 {
                z_upper[i] = yi;
            } else {
                z_lower[i] = -yi;
            }
        }
        let mut sol = SubproblemSolution {
            value: self.p.objective(&x),
            x_star: x,
            lambda_eq: y.rows(0, m0).into_owned(),
            mu_ineq: z.rows(0, kg).into_owned(),
            z_lower,
            z_upper,
            kkt_residual: f64::INFINITY,
            iterations,
        };
        sol.kkt_residual = kkt_residuals(self.p, &sol).max();
        sol
    }
}

/// LU solve of the quasi-definite system `[K Eᵀ; E −δI]` with a few steps of
/// iterative refinement against the unregularised matrix.
/// Upper limit on iterative refinement steps; refinement stops earlier once
/// the residual of the unregularised system stops shrinking.
const REFINE_STEPS: usize = 30;

struct KktSolver {
    exact: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KktSolver {
    fn new(k: &Matrix, e: &Matrix, primal_reg: f64, dual_reg: f64) -> Option<Self> {
        let d = k.nrows();
        let m = e.nrows();
        let mut exact = DMatrix::zeros(d + m, d + m);
        exact.view_mut((0, 0), (d, d)).copy_from(k);
        if m > 0 {
            exact.view_mut((d, 0), (m, d)).copy_from(e);
            exact.view_mut((0, d), (d, m)).copy_from(&e.transpose());
        }
        let mut reg = exact.clone();
        for i in 0..d {
            reg[(i, i)] += primal_reg;
        }
        for i in d..d + m {
            reg[(i, i)] -= dual_reg;
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { exact, lu })
    }

    fn solve(&self, rhs: &Vector) -> Option<Vector> {
        let mut sol = self.lu.solve(rhs)?;
        let mut res = rhs - &self.exact * &sol;
        let mut res_norm = inf_norm(&res);
        for _ in 0..REFINE_STEPS {
            let next = &sol + self.lu.solve(&res)?;
            let next_res = rhs - &self.exact * &next;
            let next_norm = inf_norm(&next_res);
            if !(next_norm < res_norm) {
                break;
            }
            (sol, res, res_norm) = (next, next_res, next_norm);
        }
        if sol.iter().all(|v| v.is_finite()) {
            Some(sol)
        } else {
            None
        }
    }
}

fn max_step(v: &Vector, dv: &Vector) -> f64 {
    let mut a = 1.0_f64;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

fn data_scale(p: &QpProblem) -> f64 {
    p.p.amax()
        .max(inf_norm(&p.q))
        .max(p.a_eq.amax())
        .max(p.a_ineq.amax())
        .max(1.0)
}

/// Solves a convex QP to scaled KKT residual `tol`.
pub fn solve_qp(p: &QpProblem, tol: f64) -> Result<SubproblemSolution> {
    match solve_inner(p, tol) {
        Err(Error::NonConvergence {
            iterations,
            residual,
        }) => {
            if let Some(violation) = min_violation(p)? {
                if violation > 1e-7 * (1.0 + data_scale(p)) {
                    return Err(Error::Infeasible(format!(
                        "constraints cannot be satisfied (minimum total violation {violation:.3e})"
                    )));
                }
            }
            Err(Error::NonConvergence {
                iterations,
                residual,
            })
        }
        other => other,
    }
}

/// Phase-1 LP: the least total violation `Σ|E x − e| + Σ(Gx − h)⁺` over the
/// bound box. `None` when the phase-1 solve itself fails.
fn min_violation(p: &QpProblem) -> Result<Option<f64>> {
    let d = p.dim();
    let m = p.num_eq();
    let kg = p.num_ineq();
    let nv = d + 2 * m + kg;
    let mut q = Vector::zeros(nv);
    q.rows_mut(d, 2 * m + kg).fill(1.0);
    let mut a_eq = Matrix::zeros(m, nv);
    a_eq.view_mut((0, 0), (m, d)).copy_from(&p.a_eq);
    for i in 0..m {
        a_eq[(i, d + i)] = 1.0;
        a_eq[(i, d + m + i)] = -1.0;
    }
    let mut a_in = Matrix::zeros(kg, nv);
    a_in.view_mut((0, 0), (kg, d)).copy_from(&p.a_ineq);
    for i in 0..kg {
        a_in[(i, d + 2 * m + i)] = -1.0;
    }
    let mut lower = Vector::zeros(nv);
    let mut upper = Vector::from_element(nv, f64::INFINITY);
    lower.rows_mut(0, d).copy_from(&p.lower);
    upper.rows_mut(0, d).copy_from(&p.upper);
    let phase1 = QpProblem {
        p: Matrix::zeros(nv, nv),
        q,
        r: 0.0,
        a_eq,
        b_eq: p.b_eq.clone(),
        a_ineq: a_in,
        b_ineq: p.b_ineq.clone(),
        lower,
        upper,
    };
    match solve_inner(&phase1, 1e-9) {
        Ok(sol) => Ok(Some(sol.value)),
        Err(Error::NonConvergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn solve_inner(p: &QpProblem, tol: f64) -> Result<SubproblemSolution> {
    p.validate_dims()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let sf = StandardForm::new(p);
    let d = sf.d();
    let m = sf.m();
    let k = sf.k();
    let h = sf.h();
    let scale = data_scale(p);
    let inner_tol = (tol * 1e-2).max(1e-14);

    let mut x = sf.initial_x();
    let e_abs = sf.e_mat.abs();
    let mut y = Vector::zeros(m);
    let gx0 = sf.gx(&x);
    let mut s = Vector::from_iterator(k, (0..k).map(|i| (h[i] - gx0[i]).max(1.0)));
    let mut z = Vector::from_element(k, 1.0);

    let mut best: Option<SubproblemSolution> = None;
    // iterate with the smallest merit seen; late steps can lose accuracy
    let mut best_iter: Option<(f64, Vector, Vector, Vector, Vector)> = None;
    let mut iterations = 0;
    let mut stall = 0;
    let mut last_res = f64::INFINITY;

    for it in 0..MAX_ITER {
        iterations = it + 1;
        let gx = sf.gx(&x);
        let r_d = &sf.p.p * &x + &p.q + sf.e_mat.transpose() * &y + sf.gt(&z);
        let r_p = &sf.e_mat * &x - &sf.e_rhs;
        let r_g = &gx + &s - &h;
        let mu = if k > 0 { s.dot(&z) / k as f64 } else { 0.0 };

        let dual_scale = 1.0
            + inf_norm(&(&sf.p.p * &x))
                .max(inf_norm(&p.q))
                .max(inf_norm(&sf.gt(&z)));
        let dres = inf_norm(&r_d) / dual_scale;
        let pres = sf.primal_residual(&r_p, &r_g, &x, &e_abs, &h);
        let gap = mu / (1.0 + p.objective(&x).abs().max(dual_scale));
        let res = dres.max(pres).max(gap);
        if !res.is_finite() {
            break;
        }
        if res < 0.5 * last_res {
            stall = 0;
        } else {
            stall += 1;
        }
        last_res = last_res.min(res);
        if best_iter.as_ref().is_none_or(|b| res < b.0) {
            best_iter = Some((res, x.clone(), y.clone(), s.clone(), z.clone()));
        }

        if res <= inner_tol || (stall >= 8 && res <= tol) {
            break;
        }
        if stall >= 25 {
            break;
        }

        if it >= 5 {
            if let Some(err) = detect_infeasibility(&sf, &y, &z, &h, &x, scale) {
                return Err(err);
            }
        }

        let w = Vector::from_iterator(k, (0..k).map(|i| z[i] / s[i]));
        let kmat = sf.reduced_hessian(&w);
        // tied to the data, not to the barrier weights, which blow up near
        // the boundary and would swamp the equality rows
        let Some(kkt) = KktSolver::new(&kmat, &sf.e_mat, REG * scale, REG * scale) else {
            break;
        };

        let solve_dir = |r_c: &Vector| -> Option<(Vector, Vector, Vector, Vector)> {
            // dz = W G dx + S⁻¹(Z r_g − r_c)
            let t = Vector::from_iterator(k, (0..k).map(|i| (z[i] * r_g[i] - r_c[i]) / s[i]));
            let rhs_x = -&r_d - sf.gt(&t);
            let mut rhs = Vector::zeros(d + m);
            rhs.rows_mut(0, d).copy_from(&rhs_x);
            rhs.rows_mut(d, m).copy_from(&(-&r_p));
            let sol = kkt.solve(&rhs)?;
            let dx = sol.rows(0, d).into_owned();
            let dy = sol.rows(d, m).into_owned();
            let gdx = sf.gx(&dx);
            let dz = Vector::from_iterator(k, (0..k).map(|i| w[i] * gdx[i] + t[i]));
            let ds = -&r_g - gdx;
            Some((dx, dy, ds, dz))
        };

        let r_c_aff = s.component_mul(&z);
        let Some((dx_a, dy_a, ds_a, dz_a)) = solve_dir(&r_c_aff) else {
            break;
        };
        let (dx, dy, ds, dz) = if k > 0 {
            let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let s_aff = &s + &ds_a * a_aff;
            let z_aff = &z + &dz_a * a_aff;
            let mu_aff = s_aff.dot(&z_aff) / k as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let r_c = Vector::from_iterator(
                k,
                (0..k).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu),
            );
            match solve_dir(&r_c) {
                Some(dir) => dir,
                None => break,
            }
        } else {
            (dx_a, dy_a, ds_a, dz_a)
        };
        let alpha = if k > 0 {
            (STEP_FRACTION * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0)
        } else {
            1.0
        };
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
        if inf_norm(&x) > 1e12 * scale {
            return Err(Error::Unbounded("primal iterates diverge".into()));
        }
    }

    if let Some((_, bx, by, bs, bz)) = best_iter {
        (x, y, s, z) = (bx, by, bs, bz);
    }
    let ipm = sf.unpack(x.clone(), &y, &z, iterations);
    let polished = polish(&sf, &x, &s, &z, iterations);
    for cand in [Some(ipm), polished].into_iter().flatten() {
        if best
            .as_ref()
            .is_none_or(|b| cand.kkt_residual < b.kkt_residual)
        {
            best = Some(cand);
        }
    }
    let best = best.expect("interior point candidate always exists");
    if best.kkt_residual <= tol {
        Ok(best)
    } else {
        if let Some(err) = detect_infeasibility(&sf, &y, &z, &h, &x, scale) {
            return Err(err);
        }
        Err(Error::NonConvergence {
            iterations,
            residual: best.kkt_residual,
        })
    }
}

/// Farkas test on the normalised dual iterates: `Eᵀy + Gᵀz ≈ 0`, `z ≥ 0`,
/// `eᵀy + hᵀz < 0` certifies primal infeasibility.
fn detect_infeasibility(
    sf: &StandardForm,
    y: &Vector,
    z: &Vector,
    h: &Vector,
    x: &Vector,
    scale: f64,
) -> Option<Error> {
    let norm = inf_norm(y).max(inf_norm(z));
    if norm < 1e6 * scale {
        return None;
    }
    let yn = y / norm;
    let zn = z / norm;
    let lin = sf.e_mat.transpose() * &yn + sf.gt(&zn);
    let obj = sf.e_rhs.dot(&yn) + h.dot(&zn);
    let primal_res =
        inf_norm(&(&sf.e_mat * x - &sf.e_rhs)).max(inf_norm(&(sf.gx(x) - h).map(|v| v.max(0.0))));
    if inf_norm(&lin) <= 1e-6 * scale && obj < -1e-8 && primal_res > 1e-9 {
        return Some(Error::Infeasible(format!(
            "Farkas certificate found (normalised dual objective {obj:.3e})"
        )));
    }
    None
}

/// Orthonormal basis of a growing row space, used to keep the polish
/// constraint rows linearly independent.
#[derive(Default)]
struct RowBasis {
    rows: Vec<Vector>,
}

impl RowBasis {
    /// Adds `row` when it is independent of the rows so far.
    fn insert(&mut self, row: Vector) -> bool {
        let norm = row.norm();
        if norm == 0.0 {
            return false;
        }
        let mut r = row;
        for _ in 0..2 {
            for q in &self.rows {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let left = r.norm();
        if left <= 1e-9 * norm {
            return false;
        }
        self.rows.push(r / left);
        true
    }
}

/// Active-set polish: solve the KKT system with constraints whose dual
/// exceeds their slack treated as equalities. While some multiplier is
/// negative, the most negative constraint is released and the system solved
/// again.
fn polish(
    sf: &StandardForm,
    x_ipm: &Vector,
    s: &Vector,
    z: &Vector,
    iterations: usize,
) -> Option<SubproblemSolution> {
    let d = sf.d();
    let m = sf.m();
    let h = sf.h();
    let reg_scale = sf.p.p.amax().max(1.0);
    let neg_tol = -1e-9 * (1.0 + inf_norm(z));
    let mut candidates: Vec<usize> = (0..sf.k()).filter(|&i| z[i] > s[i]).collect();
    candidates.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    let mut basis = RowBasis::default();
    for r in 0..m {
        basis.insert(sf.e_mat.row(r).transpose());
    }
    let mut active = Vec::new();
    for i in candidates {
        if basis.insert(sf.constraint_row(i)) {
            active.push(i);
        }
    }

    for _ in 0..=active.len().min(POLISH_ROUNDS) {
        let na = active.len();
        let mut cons = Matrix::zeros(m + na, d);
        cons.rows_mut(0, m).copy_from(&sf.e_mat);
        let mut rhs = Vector::zeros(d + m + na);
        rhs.rows_mut(0, d).copy_from(&(-&sf.p.q));
        rhs.rows_mut(d, m).copy_from(&sf.e_rhs);
        for (r, &i) in active.iter().enumerate() {
            cons.row_mut(m + r)
                .copy_from(&sf.constraint_row(i).transpose());
            rhs[d + m + r] = h[i];
        }
        let kkt = KktSolver::new(&sf.p.p, &cons, 1e-12 * reg_scale, 1e-12 * reg_scale)?;
        let sol = kkt.solve(&rhs)?;
        let x = sol.rows(0, d).into_owned();
        if inf_norm(&(&x - x_ipm)) > 1e-3 * (1.0 + inf_norm(x_ipm)) {
            return None;
        }
        let duals = sol.rows(d + m, na);
        if duals.iter().all(|&v| v >= neg_tol) {
            let y = sol.rows(d, m).into_owned();
            let mut zfull = Vector::zeros(sf.k());
            for (r, &i) in active.iter().enumerate() {
                zfull[i] = duals[r].max(0.0);
            }
            return Some(sf.unpack(x, &y, &zfull, iterations));
        }
        let worst = duals.imin();
        active.remove(worst);
    }
    None
}
