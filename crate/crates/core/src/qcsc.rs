//! Single-stage cutting-plane methods.
//!
//! All three solvers minimize a convex `f̃` over a box or simplex by
//! repeatedly minimizing a max-of-cuts model `Γ_k`:
//!
//! * Kelley: affine cuts `ℓ(·, x_j) = f̃(x_j) + <f̃'(x_j), · − x_j>`;
//! * QCSC: quadratic cuts `ℓ(·, x_j) + (μ/2)‖· − x_j‖²` for μ-convex `f̃`;
//! * reformulated QCSC: affine cuts of `f = f̃ − (μ/2)‖·‖²` plus the shared
//!   term `(μ/2)‖·‖²`, which is pointwise the same model as QCSC.
//!
//! Each iteration records the trial point `x_k ∈ argmin Γ_k`, the incumbent
//! `y_k` (best trial point so far, earliest on ties) and the certified gap
//! `t_k = f̃(y_k) − Γ_k(x_k) ≥ f̃(y_k) − f̃*`.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::model::{BaseSet, CutModel, Matrix, QuadraticCut, ShiftedAffineForm, Vector};
use crate::qp::{solve_qp, DEFAULT_TOL};
use crate::stage::build_epigraph_qp;

/// Value-and-subgradient access to a convex objective on a compact domain.
pub trait SubgradientOracle {
    fn dim(&self) -> usize;

    fn value_and_subgradient(&self, x: &Vector) -> Result<(f64, Vector)>;

    /// Strong-convexity constant (0 if only convex).
    fn mu(&self) -> f64;

    fn domain(&self) -> &BaseSet;

    /// `(M, L, μ, D)` when known, enabling [`complexity_bound`].
    fn constants(&self) -> Option<ComplexityConstants> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityConstants {
    /// Half the jump bound of the subgradient of `f̃ − (μ/2)‖·‖²`.
    pub m: f64,
    /// Lipschitz constant of its smooth part.
    pub l: f64,
    pub mu: f64,
    /// Diameter of the domain.
    pub d: f64,
}

/// Uniform bound on the first gap, `M² + (L/2 + 1)D²`.
pub fn first_gap_bound(m: f64, l: f64, d: f64) -> f64 {
    m * m + (0.5 * l + 1.0) * d * d
}

/// Contraction factor τ with `1/τ = 1 + με / (8(M² + εL))`.
pub fn gap_contraction(m: f64, l: f64, mu: f64, eps: f64) -> f64 {
    let denom = 8.0 * (m * m + eps * l);
    if denom == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + mu * eps / denom)
}

/// Worst-case QCSC iteration count to reach gap `eps`:
/// `⌈1 + (1 + 8(M² + εL)/(με)) · log(4t̄(D)/(3ε))⌉`, or 1 when `4t̄ ≤ 3ε`.
pub fn complexity_bound(m: f64, l: f64, mu: f64, d: f64, eps: f64) -> Result<u64> {
    if !(mu > 0.0) || !(eps > 0.0) || !(d > 0.0) {
        return Err(Error::InvalidInput(format!(
            "complexity bound needs mu, eps, D > 0 (got mu={mu}, eps={eps}, D={d})"
        )));
    }
    if !(m >= 0.0) || !(l >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "complexity bound needs M, L >= 0 (got M={m}, L={l})"
        )));
    }
    let tbar = first_gap_bound(m, l, d);
    if 4.0 * tbar <= 3.0 * eps {
        return Ok(1);
    }
    let factor = 1.0 + 8.0 * (m * m + eps * l) / (mu * eps);
    let k = 1.0 + factor * (4.0 * tbar / (3.0 * eps)).ln();
    Ok(k.ceil() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Kelley,
    Qcsc,
    QcscReform,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kelley" => Ok(Algorithm::Kelley),
            "qcsc" => Ok(Algorithm::Qcsc),
            "qcsc-reform" => Ok(Algorithm::QcscReform),
            other => Err(Error::InvalidInput(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterationLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct QcscRun {
    pub algorithm: Algorithm,
    pub eps: f64,
    pub mu: f64,
    /// `x_0, x_1, …, x_K`.
    pub iterates: Vec<Vec<f64>>,
    /// `f̃(y_k)` for `k = 1..=K`.
    pub incumbent_values: Vec<f64>,
    /// Index into `iterates` of `y_k` for `k = 1..=K`.
    pub incumbent_index: Vec<usize>,
    /// `Γ_k(x_k)` for `k = 1..=K`.
    pub model_values: Vec<f64>,
    /// `t_k` for `k = 1..=K`.
    pub gaps: Vec<f64>,
    /// Number of cuts in `Γ_k` for `k = 1..=K`.
    pub model_sizes: Vec<usize>,
    pub status: RunStatus,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    #[serde(skip)]
    pub forms: Vec<ShiftedAffineForm>,
}

impl QcscRun {
    /// Number of model minimizations performed.
    pub fn iterations(&self) -> usize {
        self.gaps.len()
    }

    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `Γ_k(x)`: the model built from the cuts at `x_0..x_{k-1}`.
    pub fn model_value(&self, k: usize, x: &Vector) -> f64 {
        let forms = &self.forms[..k];
        let alpha = forms.first().map_or(0.0, |f| f.alpha);
        let best = forms
            .iter()
            .map(|f| f.affine_part(x))
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * alpha * x.norm_squared() + best
    }
}

/// Iteration cap used when the caller does not give one.
pub fn default_max_iter(oracle: &dyn SubgradientOracle, eps: f64) -> usize {
    oracle
        .constants()
        .and_then(|c| complexity_bound(c.m, c.l, c.mu, c.d, eps).ok())
        .map_or(1000, |b| (10 * b).min(1_000_000) as usize)
}

pub fn run_kelley(
    oracle: &dyn SubgradientOracle,
    x0: &Vector,
    eps: f64,
    max_iter: usize,
) -> Result<QcscRun> {
    run_cutting_plane(oracle, x0, eps, max_iter, Algorithm::Kelley)
}

pub fn run_qcsc(
    oracle: &dyn SubgradientOracle,
    x0: &Vector,
    eps: f64,
    max_iter: usize,
) -> Result<QcscRun> {
    run_cutting_plane(oracle, x0, eps, max_iter, Algorithm::Qcsc)
}

pub fn run_qcsc_reformulated(
    oracle: &dyn SubgradientOracle,
    x0: &Vector,
    eps: f64,
    max_iter: usize,
) -> Result<QcscRun> {
    run_cutting_plane(oracle, x0, eps, max_iter, Algorithm::QcscReform)
}

pub fn run_algorithm(
    algorithm: Algorithm,
    oracle: &dyn SubgradientOracle,
    x0: &Vector,
    eps: f64,
    max_iter: usize,
) -> Result<QcscRun> {
    run_cutting_plane(oracle, x0, eps, max_iter, algorithm)
}

/// The model as seen by one algorithm; both representations answer the same
/// two questions (add a cut, evaluate) so the main loop is shared.
enum Model {
    Cuts(CutModel),
    Reformulated {
        mu: f64,
        forms: Vec<ShiftedAffineForm>,
    },
}

impl Model {
    fn add(&mut self, x: &Vector, fx: f64, gx: &Vector, alpha: f64) -> Result<()> {
        match self {
            Model::Cuts(model) => {
                model.push_cut(QuadraticCut::new(fx, gx.clone(), x.clone(), alpha)?)
            }
            Model::Reformulated { mu, forms } => {
                // ℓ_f(u, x) with f = f̃ − (μ/2)‖·‖², f'(x) = f̃'(x) − μx
                let f_val = fx - 0.5 * *mu * x.norm_squared();
                let f_grad = gx - x * *mu;
                forms.push(ShiftedAffineForm {
                    theta_tilde: f_val - f_grad.dot(x),
                    beta_tilde: f_grad,
                    alpha: *mu,
                });
                Ok(())
            }
        }
    }

    fn forms(&self) -> &[ShiftedAffineForm] {
        match self {
            Model::Cuts(model) => model.shifted_forms(),
            Model::Reformulated { forms, .. } => forms,
        }
    }

    fn eval(&self, x: &Vector) -> Result<f64> {
        match self {
            Model::Cuts(model) => model.eval(x),
            Model::Reformulated { mu, forms } => Ok(0.5 * mu * x.norm_squared()
                + forms
                    .iter()
                    .map(|f| f.affine_part(x))
                    .fold(f64::NEG_INFINITY, f64::max)),
        }
    }

    fn len(&self) -> usize {
        self.forms().len()
    }
}

fn run_cutting_plane(
    oracle: &dyn SubgradientOracle,
    x0: &Vector,
    eps: f64,
    max_iter: usize,
    algorithm: Algorithm,
) -> Result<QcscRun> {
    let n = oracle.dim();
    check_dim("x0", n, x0.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let domain = oracle.domain();
    domain.validate_dim(n)?;
    if !domain.contains(x0, 1e-9) {
        return Err(Error::InvalidInput("x0 lies outside the domain".into()));
    }
    let mu = match algorithm {
        Algorithm::Kelley => 0.0,
        _ => {
            let mu = oracle.mu();
            if !(mu > 0.0) {
                return Err(Error::Contract(format!(
                    "quadratic cuts need a positive strong-convexity constant, got {mu}"
                )));
            }
            mu
        }
    };
    let mut model = match algorithm {
        Algorithm::QcscReform => Model::Reformulated {
            mu,
            forms: Vec::new(),
        },
        _ => Model::Cuts(CutModel::new(n, 0.0)),
    };

    let (f0, g0) = eval_oracle(oracle, x0, n)?;
    model.add(x0, f0, &g0, mu)?;

    let mut run = QcscRun {
        algorithm,
        eps,
        mu,
        iterates: vec![x0.iter().copied().collect()],
        incumbent_values: Vec::new(),
        incumbent_index: Vec::new(),
        model_values: Vec::new(),
        gaps: Vec::new(),
        model_sizes: Vec::new(),
        status: RunStatus::IterationLimit,
        best_point: x0.iter().copied().collect(),
        best_value: f0,
        forms: Vec::new(),
    };
    let mut best_index = 0;
    let zero_p = Matrix::zeros(n, n);
    let zero_q = Vector::zeros(n);

    for k in 1..=max_iter {
        let sqp = build_epigraph_qp(&zero_p, &zero_q, 0.0, None, domain, mu, model.forms(), 0.0)?;
        let sol = solve_qp(&sqp.qp, DEFAULT_TOL)?;
        let xk = sqp.state(&sol);
        let gamma = model.eval(&xk)?;
        let (fk, gk) = eval_oracle(oracle, &xk, n)?;
        run.iterates.push(xk.iter().copied().collect());
        if fk < run.best_value {
            run.best_value = fk;
            best_index = k;
        }
        let gap = run.best_value - gamma;
        run.incumbent_values.push(run.best_value);
        run.incumbent_index.push(best_index);
        run.model_values.push(gamma);
        run.gaps.push(gap);
        run.model_sizes.push(model.len());
        model.add(&xk, fk, &gk, mu)?;
        if gap <= eps {
            run.status = RunStatus::Converged;
            break;
        }
    }
    run.best_point = run.iterates[best_index].clone();
    run.forms = model.forms().to_vec();
    Ok(run)
}

fn eval_oracle(oracle: &dyn SubgradientOracle, x: &Vector, n: usize) -> Result<(f64, Vector)> {
    let (f, g) = oracle.value_and_subgradient(x)?;
    if g.len() != n || !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle(format!(
            "oracle returned an invalid value or subgradient at {:?}",
            x.as_slice()
        )));
    }
    Ok((f, g))
}

/// `max_k [(t_{k+1} − ε/4) − τ(t_k − ε/4)]` over a recorded run; nonpositive
/// when every step obeys the contraction with factor τ.
pub fn gap_recursion_excess(run: &QcscRun, tau: f64) -> f64 {
    let q = run.eps / 4.0;
    run.gaps
        .windows(2)
        .map(|w| (w[1] - q) - tau * (w[0] - q))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One branch `a‖x‖² + <b, x> + c` of a piecewise quadratic objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBranch {
    pub a: f64,
    pub b: Vector,
    pub c: f64,
}

/// `f̃(x) = max_i (a_i‖x‖² + <b_i, x> + c_i)`; the subgradient is the gradient
/// of the first branch attaining the max.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseQuadratic {
    dim: usize,
    branches: Vec<QuadBranch>,
    mu: f64,
    domain: BaseSet,
}

impl PiecewiseQuadratic {
    /// `mu` defaults to `2·min a_i`.
    pub fn new(branches: Vec<QuadBranch>, domain: BaseSet, mu: Option<f64>) -> Result<Self> {
        let Some(first) = branches.first() else {
            return Err(Error::InvalidInput(
                "objective needs at least one branch".into(),
            ));
        };
        let dim = first.b.len();
        for br in &branches {
            check_dim("branch linear term", dim, br.b.len())?;
            if !(br.a >= 0.0) || !br.c.is_finite() || br.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(
                    "branches need finite data and a nonnegative quadratic coefficient".into(),
                ));
            }
        }
        domain.validate_dim(dim)?;
        let min_a = branches.iter().map(|b| b.a).fold(f64::INFINITY, f64::min);
        let mu = mu.unwrap_or(2.0 * min_a);
        if mu < 0.0 || mu > 2.0 * min_a + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "mu = {mu} is not a valid strong-convexity constant (at most {})",
                2.0 * min_a
            )));
        }
        Ok(Self {
            dim,
            branches,
            mu,
            domain,
        })
    }

    /// `max(1000(x−4)² + 2, 1000(x+5)² + 8, 500(x−3)² + 6)` on `[−10, 10]`.
    pub fn kinked_1d() -> Self {
        let br = |a: f64, center: f64, offset: f64| QuadBranch {
            a,
            b: Vector::from_element(1, -2.0 * a * center),
            c: a * center * center + offset,
        };
        Self::new(
            vec![
                br(1000.0, 4.0, 2.0),
                br(1000.0, -5.0, 8.0),
                br(500.0, 3.0, 6.0),
            ],
            BaseSet::Box {
                lower: Vector::from_element(1, -10.0),
                upper: Vector::from_element(1, 10.0),
            },
            None,
        )
        .expect("built-in objective is valid")
    }

    pub fn branches(&self) -> &[QuadBranch] {
        &self.branches
    }

    pub fn value(&self, x: &Vector) -> f64 {
        let nx = x.norm_squared();
        self.branches
            .iter()
            .map(|b| b.a * nx + b.b.dot(x) + b.c)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl SubgradientOracle for PiecewiseQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_subgradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        check_dim("oracle point", self.dim, x.len())?;
        let nx = x.norm_squared();
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, b) in self.branches.iter().enumerate() {
            let v = b.a * nx + b.b.dot(x) + b.c;
            if v > best.0 {
                best = (v, i);
            }
        }
        let b = &self.branches[best.1];
        Ok((best.0, x * (2.0 * b.a) + &b.b))
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn domain(&self) -> &BaseSet {
        &self.domain
    }
}

/// `f̃(x) = (μ/2)‖x‖² + ½(x − b)ᵀQ(x − b) + M‖x − c‖` on a box. Its
/// `f̃ − (μ/2)‖·‖²` has subgradient jumps of at most `2M` and a smooth part
/// with Lipschitz gradient `L = λ_max(Q)`, so `(M, L, μ, D)` are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeObjective {
    mu: f64,
    q: Matrix,
    b: Vector,
    m: f64,
    c: Vector,
    domain: BaseSet,
    lipschitz: f64,
}

impl CompositeObjective {
    pub fn new(mu: f64, q: Matrix, b: Vector, m: f64, c: Vector, domain: BaseSet) -> Result<Self> {
        let n = b.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Dimension("Q must be n x n".into()));
        }
        check_dim("kink centre", n, c.len())?;
        domain.validate_dim(n)?;
        if !matches!(domain, BaseSet::Box { .. }) {
            return Err(Error::InvalidInput(
                "composite objective needs a box domain".into(),
            ));
        }
        if !(mu > 0.0) || !(m >= 0.0) {
            return Err(Error::InvalidInput("need mu > 0 and M >= 0".into()));
        }
        let q = (&q + q.transpose()) * 0.5;
        let eig = q.symmetric_eigenvalues();
        if eig.min() < -1e-12 {
            return Err(Error::InvalidInput(
                "Q must be positive semidefinite".into(),
            ));
        }
        let lipschitz = eig.max().max(0.0);
        Ok(Self {
            mu,
            q,
            b,
            m,
            c,
            domain,
            lipschitz,
        })
    }
}

impl SubgradientOracle for CompositeObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value_and_subgradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        check_dim("oracle point", self.dim(), x.len())?;
        let xb = x - &self.b;
        let qxb = &self.q * &xb;
        let xc = x - &self.c;
        let dist = xc.norm();
        let value = 0.5 * self.mu * x.norm_squared() + 0.5 * xb.dot(&qxb) + self.m * dist;
        let mut grad = x * self.mu + qxb;
        if dist > 0.0 {
            grad += xc * (self.m / dist);
        }
        Ok((value, grad))
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn domain(&self) -> &BaseSet {
        &self.domain
    }

    fn constants(&self) -> Option<ComplexityConstants> {
        Some(ComplexityConstants {
            m: self.m,
            l: self.lipschitz,
            mu: self.mu,
            d: self.domain.diameter(self.dim()),
        })
    }
}
