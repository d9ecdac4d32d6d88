//! Epigraph QPs over a cut model.
//!
//! A model whose cuts share one quadratic coefficient α is
//! `(α/2)‖x‖² + max_i (θ̃_i + <β̃_i, x>)`, so minimizing a quadratic plus the
//! model over a polyhedron is a QP in `(x, r)`:
//!
//! ```text
//!     min  ½xᵀ(P + αI)x + qᵀx + r + const
//!     s.t. <β̃_i, x> − r <= −θ̃_i     for every cut i
//!          A x = b − B x_prev         (coupling rows)
//!          Σ x = 1, x >= 0            (simplex base set) or l <= x <= u (box)
//! ```
//!
//! With no cuts, `r` is pinned to the model floor.

use crate::error::{check_dim, Result};
use crate::model::{
    BaseSet, ConstraintSetS1, CutModel, Matrix, QuadraticStageCost, ShiftedAffineForm, Vector,
};
use crate::qp::{QpProblem, SubproblemSolution};

/// A built epigraph QP together with the row layout needed to read back
/// the state, the epigraph value and the coupling-constraint duals.
#[derive(Debug, Clone, PartialEq)]
pub struct StageQp {
    pub qp: QpProblem,
    pub n: usize,
    /// Coupling rows occupy `a_eq[0..coupling_rows]`.
    pub coupling_rows: usize,
    pub simplex_row: Option<usize>,
}

impl StageQp {
    pub fn r_index(&self) -> usize {
        self.n
    }

    pub fn state(&self, sol: &SubproblemSolution) -> Vector {
        sol.x_star.rows(0, self.n).into_owned()
    }

    pub fn epigraph(&self, sol: &SubproblemSolution) -> f64 {
        sol.x_star[self.n]
    }

    pub fn coupling_duals(&self, sol: &SubproblemSolution) -> Vector {
        sol.lambda_eq.rows(0, self.coupling_rows).into_owned()
    }
}

/// Epigraph QP for `min ½xᵀPx + qᵀx + c0 + model(x)` over
/// `{x ∈ base_set, A x = rhs}`.
pub fn build_model_qp(
    p_x: &Matrix,
    q_x: &Vector,
    constant: f64,
    coupling: Option<(&Matrix, &Vector)>,
    base_set: &BaseSet,
    future: &CutModel,
) -> Result<StageQp> {
    check_dim("model dimension", q_x.len(), future.dimension())?;
    let alpha = future.uniform_alpha()?;
    build_epigraph_qp(
        p_x,
        q_x,
        constant,
        coupling,
        base_set,
        alpha,
        future.shifted_forms(),
        future.floor(),
    )
}

/// Same as [`build_model_qp`] for a model given directly by its shifted
/// forms, all sharing the coefficient `alpha`. An empty form list pins the
/// epigraph variable to `floor`.
#[allow(clippy::too_many_arguments)]
pub fn build_epigraph_qp(
    p_x: &Matrix,
    q_x: &Vector,
    constant: f64,
    coupling: Option<(&Matrix, &Vector)>,
    base_set: &BaseSet,
    alpha: f64,
    forms: &[ShiftedAffineForm],
    floor: f64,
) -> Result<StageQp> {
    let n = q_x.len();
    base_set.validate_dim(n)?;
    let d = n + 1;

    let mut p = Matrix::zeros(d, d);
    p.view_mut((0, 0), (n, n)).copy_from(p_x);
    if !forms.is_empty() {
        for i in 0..n {
            p[(i, i)] += alpha;
        }
    }
    let mut q = Vector::zeros(d);
    q.rows_mut(0, n).copy_from(q_x);
    q[n] = 1.0;

    let (coupling_rows, a_c, b_c) = match coupling {
        Some((a, rhs)) => (rhs.len(), a.clone(), rhs.clone()),
        None => (0, Matrix::zeros(0, n), Vector::zeros(0)),
    };
    let simplex = matches!(base_set, BaseSet::Simplex);
    let m = coupling_rows + usize::from(simplex);
    let mut a_eq = Matrix::zeros(m, d);
    let mut b_eq = Vector::zeros(m);
    a_eq.view_mut((0, 0), (coupling_rows, n)).copy_from(&a_c);
    b_eq.rows_mut(0, coupling_rows).copy_from(&b_c);
    if simplex {
        a_eq.view_mut((coupling_rows, 0), (1, n)).fill(1.0);
        b_eq[coupling_rows] = 1.0;
    }

    let mut lower = Vector::from_element(d, f64::NEG_INFINITY);
    let mut upper = Vector::from_element(d, f64::INFINITY);
    match base_set {
        BaseSet::Box { lower: l, upper: u } => {
            lower.rows_mut(0, n).copy_from(l);
            upper.rows_mut(0, n).copy_from(u);
        }
        BaseSet::Simplex => lower.rows_mut(0, n).fill(0.0),
    }

    let mut a_in = Matrix::zeros(forms.len(), d);
    let mut b_in = Vector::zeros(forms.len());
    for (i, f) in forms.iter().enumerate() {
        check_dim("cut slope", n, f.beta_tilde.len())?;
        a_in.view_mut((i, 0), (1, n))
            .copy_from(&f.beta_tilde.transpose());
        a_in[(i, n)] = -1.0;
        b_in[i] = -f.theta_tilde;
    }
    if forms.is_empty() {
        lower[n] = floor;
        upper[n] = floor;
    }

    let qp = QpProblem {
        p,
        q,
        r: constant,
        a_eq,
        b_eq,
        a_ineq: a_in,
        b_ineq: b_in,
        lower,
        upper,
    };
    Ok(StageQp {
        qp,
        n,
        coupling_rows,
        simplex_row: simplex.then_some(coupling_rows),
    })
}

/// The stage subproblem `min f(x_prev, x) + future(x)` over the stage
/// constraints with `x_prev` fixed. Its optimal value includes the model
/// term, and the pure `x_prev` terms of the cost are folded into the constant.
pub fn build_stage_subproblem(
    cost: &QuadraticStageCost,
    cons: &ConstraintSetS1,
    x_prev: &Vector,
    future: &CutModel,
) -> Result<StageQp> {
    let n = cost.n();
    check_dim("x_prev", n, x_prev.len())?;
    check_dim("constraint dimension", n, cons.n())?;
    let h_pp = cost.block_prev_prev();
    let h_np = cost.block_next_prev();
    let h_nn = cost.block_next_next();
    let q_x = &h_np * x_prev + cost.c_next();
    let constant = 0.5 * x_prev.dot(&(&h_pp * x_prev)) + cost.c_prev().dot(x_prev) + cost.d();
    let rhs = &cons.b - &cons.b_mat * x_prev;
    build_model_qp(
        &h_nn,
        &q_x,
        constant,
        Some((&cons.a, &rhs)),
        &cons.base_set,
        future,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticCut;
    use crate::qp::{solve_qp, DEFAULT_TOL};
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn one_d_cost() -> QuadraticStageCost {
        // f = ½(x_prev² + 2 x²) + x_prev x + ... on z = (x_prev, x)
        let h = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        QuadraticStageCost::new(1, h, v(&[0.3, -1.0]), 0.25, 1.5).unwrap()
    }

    fn unit_box() -> ConstraintSetS1 {
        ConstraintSetS1::base_only(1, BaseSet::boxed(v(&[-1.0]), v(&[2.0])).unwrap()).unwrap()
    }

    #[test]
    fn empty_model_gives_the_bare_stage_cost() {
        let cost = one_d_cost();
        let x_prev = v(&[0.4]);
        let sqp =
            build_stage_subproblem(&cost, &unit_box(), &x_prev, &CutModel::new(1, 0.0)).unwrap();
        let sol = solve_qp(&sqp.qp, DEFAULT_TOL).unwrap();
        let x = sqp.state(&sol);
        assert_abs_diff_eq!(sol.value, cost.eval(&x_prev, &x).unwrap(), epsilon = 1e-12);
        assert_eq!(sqp.epigraph(&sol), 0.0);
        // interior minimiser: ∂f/∂x = 0.5·0.4 + 2x − 1 = 0
        assert_abs_diff_eq!(x[0], 0.4, epsilon = 1e-10);
    }

    #[test]
    fn single_affine_cut_is_tight_at_optimum() {
        let cost = one_d_cost();
        let x_prev = v(&[0.4]);
        let cut = QuadraticCut::new(1.0, v(&[-2.0]), v(&[0.0]), 0.0).unwrap();
        let model = CutModel::new(1, 0.0).add_cut(cut.clone()).unwrap();
        let sqp = build_stage_subproblem(&cost, &unit_box(), &x_prev, &model).unwrap();
        let sol = solve_qp(&sqp.qp, DEFAULT_TOL).unwrap();
        let x = sqp.state(&sol);
        assert_abs_diff_eq!(sqp.epigraph(&sol), cut.eval(&x).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn value_matches_grid_enumeration() {
        let cost = one_d_cost();
        let x_prev = v(&[-0.7]);
        let model = CutModel::new(1, 0.0)
            .add_cut(QuadraticCut::new(0.5, v(&[-1.0]), v(&[1.0]), 0.8).unwrap())
            .unwrap()
            .add_cut(QuadraticCut::new(0.2, v(&[1.5]), v(&[-0.5]), 0.8).unwrap())
            .unwrap();
        let sqp = build_stage_subproblem(&cost, &unit_box(), &x_prev, &model).unwrap();
        let sol = solve_qp(&sqp.qp, DEFAULT_TOL).unwrap();

        // the objective is convex in x, so ternary search is exact up to rounding
        let f = |x: f64| cost.eval(&x_prev, &v(&[x])).unwrap() + model.eval(&v(&[x])).unwrap();
        let (mut lo, mut hi) = (-1.0, 2.0);
        for _ in 0..200 {
            let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let best = f(0.5 * (lo + hi));
        assert_abs_diff_eq!(sol.value, best, epsilon = 1e-8);
    }

    #[test]
    fn mixed_alpha_model_is_rejected() {
        let model = CutModel::new(1, 0.0)
            .add_cut(QuadraticCut::new(0.0, v(&[0.0]), v(&[0.0]), 1.0).unwrap())
            .unwrap()
            .add_cut(QuadraticCut::new(0.0, v(&[0.0]), v(&[0.0]), 0.0).unwrap())
            .unwrap();
        assert!(build_stage_subproblem(&one_d_cost(), &unit_box(), &v(&[0.0]), &model).is_err());
    }

    #[test]
    fn simplex_layout() {
        let n = 3;
        let h = Matrix::identity(6, 6);
        let cost = QuadraticStageCost::new(n, h, Vector::zeros(6), 0.0, 1.0).unwrap();
        let cons = ConstraintSetS1::new(
            Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            Matrix::from_row_slice(1, 3, &[-0.5, 0.0, 0.0]),
            v(&[0.0]),
            BaseSet::Simplex,
        )
        .unwrap();
        let x_prev = v(&[0.4, 0.3, 0.3]);
        let sqp = build_stage_subproblem(&cost, &cons, &x_prev, &CutModel::new(n, 0.0)).unwrap();
        assert_eq!(sqp.coupling_rows, 1);
        assert_eq!(sqp.simplex_row, Some(1));
        let sol = solve_qp(&sqp.qp, DEFAULT_TOL).unwrap();
        let x = sqp.state(&sol);
        assert!(cons.is_feasible(&x, &x_prev, 1e-9));
        assert_abs_diff_eq!(x[0], 0.2, epsilon = 1e-10);
    }
}
