//! Domain types shared by every solver: strongly convex quadratic stage
//! costs, quadratic cuts and the max-of-cuts models built from them,
//! constraint sets, stagewise-independent noise and full instances.
//!
//! Stage costs are quadratic forms on the stacked vector `z = (x_prev, x_next)`:
//!
//! ```text
//!     f(x_prev, x_next) = 1/2 z' H z + c' z + d
//! ```
//!
//! A cut centred at `x̄` is `θ + <β, x − x̄> + (α/2)‖x − x̄‖²`; `α = 0` gives
//! the affine cuts of classical SDDP.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const SYMMETRY_RTOL: f64 = 1e-12;
const EIGEN_SLACK: f64 = 1e-9;
const PROB_TOL: f64 = 1e-12;

pub(crate) fn is_symmetric(m: &Matrix, rtol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rtol * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Stage cost `f(x_prev, x_next) = ½ zᵀHz + cᵀz + d` with a certified
/// strong-convexity constant `alpha` (λ_min(H) ≥ alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStageCost {
    n: usize,
    h: Matrix,
    c: Vector,
    d: f64,
    alpha: f64,
}

impl QuadraticStageCost {
    pub fn new(n: usize, h: Matrix, c: Vector, d: f64, alpha: f64) -> Result<Self> {
        if h.nrows() != 2 * n || h.ncols() != 2 * n {
            return Err(Error::Dimension(format!(
                "stage cost H must be {0}x{0}, got {1}x{2}",
                2 * n,
                h.nrows(),
                h.ncols()
            )));
        }
        check_dim("stage cost c", 2 * n, c.len())?;
        if !d.is_finite() || h.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "stage cost has non-finite entries".into(),
            ));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "strong-convexity constant must be positive, got {alpha}"
            )));
        }
        if !is_symmetric(&h, SYMMETRY_RTOL) {
            return Err(Error::InvalidInput("stage cost H is not symmetric".into()));
        }
        let lmin = min_eigenvalue(&h);
        if lmin < alpha - EIGEN_SLACK {
            return Err(Error::InvalidInput(format!(
                "alpha = {alpha} is not certified: smallest eigenvalue of H is {lmin}"
            )));
        }
        Ok(Self { n, h, c, d, alpha })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn c(&self) -> &Vector {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn stack(&self, x_prev: &Vector, x_next: &Vector) -> Result<Vector> {
        check_dim("x_prev", self.n, x_prev.len())?;
        check_dim("x_next", self.n, x_next.len())?;
        let mut z = Vector::zeros(2 * self.n);
        z.rows_mut(0, self.n).copy_from(x_prev);
        z.rows_mut(self.n, self.n).copy_from(x_next);
        Ok(z)
    }

    pub fn eval(&self, x_prev: &Vector, x_next: &Vector) -> Result<f64> {
        let z = self.stack(x_prev, x_next)?;
        Ok(0.5 * z.dot(&(&self.h * &z)) + self.c.dot(&z) + self.d)
    }

    /// The two n-blocks `(∂/∂x_prev, ∂/∂x_next)` of `Hz + c`.
    pub fn grad(&self, x_prev: &Vector, x_next: &Vector) -> Result<(Vector, Vector)> {
        let z = self.stack(x_prev, x_next)?;
        let g = &self.h * &z + &self.c;
        Ok((
            g.rows(0, self.n).into_owned(),
            g.rows(self.n, self.n).into_owned(),
        ))
    }

    pub(crate) fn block_prev_prev(&self) -> Matrix {
        self.h.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub(crate) fn block_next_prev(&self) -> Matrix {
        self.h.view((self.n, 0), (self.n, self.n)).into_owned()
    }

    pub(crate) fn block_next_next(&self) -> Matrix {
        self.h.view((self.n, self.n), (self.n, self.n)).into_owned()
    }

    pub(crate) fn c_prev(&self) -> Vector {
        self.c.rows(0, self.n).into_owned()
    }

    pub(crate) fn c_next(&self) -> Vector {
        self.c.rows(self.n, self.n).into_owned()
    }
}

pub fn eval_stage_cost(cost: &QuadraticStageCost, x_prev: &Vector, x_next: &Vector) -> Result<f64> {
    cost.eval(x_prev, x_next)
}

pub fn grad_stage_cost(
    cost: &QuadraticStageCost,
    x_prev: &Vector,
    x_next: &Vector,
) -> Result<(Vector, Vector)> {
    cost.grad(x_prev, x_next)
}

/// `θ + <β, x − x̄> + (α/2)‖x − x̄‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCut {
    pub theta: f64,
    pub beta: Vector,
    pub center: Vector,
    pub alpha: f64,
}

impl QuadraticCut {
    pub fn new(theta: f64, beta: Vector, center: Vector, alpha: f64) -> Result<Self> {
        check_dim("cut beta vs center", center.len(), beta.len())?;
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cut alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        if !theta.is_finite() || beta.iter().chain(center.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cut has non-finite entries".into()));
        }
        Ok(Self {
            theta,
            beta,
            center,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn eval(&self, x: &Vector) -> Result<f64> {
        check_dim("cut evaluation point", self.dim(), x.len())?;
        let diff = x - &self.center;
        Ok(self.theta + self.beta.dot(&diff) + 0.5 * self.alpha * diff.norm_squared())
    }

    pub fn to_shifted_affine(&self) -> ShiftedAffineForm {
        let c = &self.center;
        ShiftedAffineForm {
            theta_tilde: self.theta - self.beta.dot(c) + 0.5 * self.alpha * c.norm_squared(),
            beta_tilde: &self.beta - c * self.alpha,
            alpha: self.alpha,
        }
    }
}

pub fn cut_eval(cut: &QuadraticCut, x: &Vector) -> Result<f64> {
    cut.eval(x)
}

pub fn to_shifted_affine(cut: &QuadraticCut) -> ShiftedAffineForm {
    cut.to_shifted_affine()
}

/// `x ↦ (α/2)‖x‖² + θ̃ + <β̃, x>`: a cut with the quadratic term pulled out
/// so that a model of equal-α cuts is one shared quadratic plus a max of
/// affine pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedAffineForm {
    pub theta_tilde: f64,
    pub beta_tilde: Vector,
    pub alpha: f64,
}

impl ShiftedAffineForm {
    pub fn dim(&self) -> usize {
        self.beta_tilde.len()
    }

    pub fn affine_part(&self, x: &Vector) -> f64 {
        self.theta_tilde + self.beta_tilde.dot(x)
    }

    pub fn eval(&self, x: &Vector) -> Result<f64> {
        check_dim("shifted form evaluation point", self.dim(), x.len())?;
        Ok(0.5 * self.alpha * x.norm_squared() + self.affine_part(x))
    }
}

/// Pointwise maximum of cuts. An empty model evaluates to `floor`, which must
/// be a valid lower bound of the function being approximated.
#[derive(Debug, Clone, PartialEq)]
pub struct CutModel {
    dimension: usize,
    cuts: Vec<QuadraticCut>,
    shifted: Vec<ShiftedAffineForm>,
    floor: f64,
}

impl CutModel {
    pub fn new(dimension: usize, floor: f64) -> Self {
        Self {
            dimension,
            cuts: Vec::new(),
            shifted: Vec::new(),
            floor,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn cuts(&self) -> &[QuadraticCut] {
        &self.cuts
    }

    pub fn shifted_forms(&self) -> &[ShiftedAffineForm] {
        &self.shifted
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn eval(&self, x: &Vector) -> Result<f64> {
        check_dim("model evaluation point", self.dimension, x.len())?;
        if self.cuts.is_empty() {
            return Ok(self.floor);
        }
        let mut best = f64::NEG_INFINITY;
        for cut in &self.cuts {
            best = best.max(cut.eval(x)?);
        }
        Ok(best)
    }

    /// Appends under exclusive access.
    pub fn push_cut(&mut self, cut: QuadraticCut) -> Result<()> {
        check_dim("cut dimension", self.dimension, cut.dim())?;
        self.shifted.push(cut.to_shifted_affine());
        self.cuts.push(cut);
        Ok(())
    }

    pub fn add_cut(&self, cut: QuadraticCut) -> Result<CutModel> {
        let mut next = self.clone();
        next.push_cut(cut)?;
        Ok(next)
    }

    /// The alpha shared by all cuts (0 for an empty model).
    pub fn uniform_alpha(&self) -> Result<f64> {
        let Some(first) = self.cuts.first() else {
            return Ok(0.0);
        };
        let a = first.alpha;
        if self.cuts.iter().any(|c| c.alpha != a) {
            return Err(Error::Contract(
                "cut model mixes different quadratic coefficients".into(),
            ));
        }
        Ok(a)
    }
}

pub fn model_eval(model: &CutModel, x: &Vector) -> Result<f64> {
    model.eval(x)
}

pub fn add_cut(model: &CutModel, cut: QuadraticCut) -> Result<CutModel> {
    model.add_cut(cut)
}

/// The stage base set 𝒳_t.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseSet {
    Box {
        lower: Vector,
        upper: Vector,
    },
    /// `{x ≥ 0, Σ x_i = 1}`.
    Simplex,
}

impl BaseSet {
    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        for (l, u) in lower.iter().zip(upper.iter()) {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::InvalidInput(format!(
                    "box bounds must be finite with lower <= upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(BaseSet::Box { lower, upper })
    }

    pub fn validate_dim(&self, n: usize) -> Result<()> {
        match self {
            BaseSet::Box { lower, .. } => check_dim("box bounds", n, lower.len()),
            BaseSet::Simplex => Ok(()),
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            BaseSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            BaseSet::Simplex => x.iter().all(|v| *v >= -tol) && (x.sum() - 1.0).abs() <= tol,
        }
    }

    /// Euclidean diameter.
    pub fn diameter(&self, n: usize) -> f64 {
        match self {
            BaseSet::Box { lower, upper } => (upper - lower).norm(),
            BaseSet::Simplex => {
                if n > 1 {
                    std::f64::consts::SQRT_2
                } else {
                    0.0
                }
            }
        }
    }

    /// A uniformly random point (uniform over the box; flat Dirichlet over
    /// the simplex).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vector {
        match self {
            BaseSet::Box { lower, upper } => Vector::from_iterator(
                n,
                lower
                    .iter()
                    .zip(upper.iter())
                    .map(|(l, u)| l + (u - l) * rng.gen::<f64>()),
            ),
            BaseSet::Simplex => {
                let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                Vector::from_iterator(n, e.into_iter().map(|v| v / s))
            }
        }
    }
}

/// Linear coupling `A x + B x_prev = b` over a base set (type S1).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSetS1 {
    pub a: Matrix,
    pub b_mat: Matrix,
    pub b: Vector,
    pub base_set: BaseSet,
}

impl ConstraintSetS1 {
    pub fn new(a: Matrix, b_mat: Matrix, b: Vector, base_set: BaseSet) -> Result<Self> {
        if a.nrows() != b.len() || b_mat.nrows() != b.len() || a.ncols() != b_mat.ncols() {
            return Err(Error::Dimension(format!(
                "coupling constraints: A is {}x{}, B is {}x{}, b has {} rows",
                a.nrows(),
                a.ncols(),
                b_mat.nrows(),
                b_mat.ncols(),
                b.len()
            )));
        }
        base_set.validate_dim(a.ncols())?;
        Ok(Self {
            a,
            b_mat,
            b,
            base_set,
        })
    }

    /// Only the base set, no coupling rows.
    pub fn base_only(n: usize, base_set: BaseSet) -> Result<Self> {
        Self::new(
            Matrix::zeros(0, n),
            Matrix::zeros(0, n),
            Vector::zeros(0),
            base_set,
        )
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_coupling_rows(&self) -> usize {
        self.b.len()
    }

    pub fn is_feasible(&self, x: &Vector, x_prev: &Vector, tol: f64) -> bool {
        if !self.base_set.contains(x, tol) {
            return false;
        }
        let res = &self.a * x + &self.b_mat * x_prev - &self.b;
        res.iter().all(|r| r.abs() <= tol)
    }
}

/// One convex quadratic constraint component `g(z) = ½ zᵀHz + cᵀz + d ≤ 0`
/// on the stacked `z = (x_prev, x_next)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticComponent {
    pub h: Matrix,
    pub c: Vector,
    pub d: f64,
}

impl QuadraticComponent {
    pub fn new(n: usize, h: Matrix, c: Vector, d: f64) -> Result<Self> {
        if h.nrows() != 2 * n || h.ncols() != 2 * n {
            return Err(Error::Dimension(
                "constraint component H must be 2n x 2n".into(),
            ));
        }
        check_dim("constraint component c", 2 * n, c.len())?;
        if !is_symmetric(&h, SYMMETRY_RTOL) || min_eigenvalue(&h) < -EIGEN_SLACK {
            return Err(Error::InvalidInput(
                "constraint component is not convex (H must be symmetric PSD)".into(),
            ));
        }
        Ok(Self { h, c, d })
    }

    fn stack(x_prev: &Vector, x_next: &Vector) -> Vector {
        let n = x_prev.len();
        let mut z = Vector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(x_prev);
        z.rows_mut(n, n).copy_from(x_next);
        z
    }

    pub fn eval(&self, x_prev: &Vector, x_next: &Vector) -> f64 {
        let z = Self::stack(x_prev, x_next);
        0.5 * z.dot(&(&self.h * &z)) + self.c.dot(&z) + self.d
    }

    /// Gradient with respect to `x_prev`.
    pub fn grad_prev(&self, x_prev: &Vector, x_next: &Vector) -> Vector {
        let n = x_prev.len();
        let z = Self::stack(x_prev, x_next);
        (&self.h * &z + &self.c).rows(0, n).into_owned()
    }
}

/// S1 constraints plus convex quadratic inequalities `g_i ≤ 0` (type S2).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSetS2 {
    pub linear: ConstraintSetS1,
    pub g: Vec<QuadraticComponent>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageConstraints {
    S1(ConstraintSetS1),
    S2(ConstraintSetS2),
}

impl StageConstraints {
    pub fn linear(&self) -> &ConstraintSetS1 {
        match self {
            StageConstraints::S1(c) => c,
            StageConstraints::S2(c) => &c.linear,
        }
    }

    pub fn is_s2(&self) -> bool {
        matches!(self, StageConstraints::S2(_))
    }
}

/// Realizations and probabilities of the noise at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageNoise {
    pub xis: Vec<Vector>,
    pub probs: Vec<f64>,
}

impl StageNoise {
    pub fn new(xis: Vec<Vector>, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput(
                "a stage needs at least one realization".into(),
            ));
        }
        if !xis.is_empty() {
            check_dim(
                "noise realizations vs probabilities",
                probs.len(),
                xis.len(),
            )?;
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "probabilities must be strictly positive".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { xis, probs })
    }

    pub fn deterministic() -> Self {
        Self {
            xis: Vec::new(),
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Stagewise-independent noise for stages `1..=T`; stage 1 is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub stages: Vec<StageNoise>,
}

impl NoiseModel {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> &StageNoise {
        &self.stages[t - 1]
    }
}

/// Data of one stage: a cost per realization and either one shared
/// constraint set or one per realization.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub costs: Vec<QuadraticStageCost>,
    pub constraints: Vec<StageConstraints>,
}

/// A T-stage problem with stagewise-independent discrete noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MspInstance {
    n: usize,
    x0: Vector,
    stages: Vec<StageData>,
    noise: NoiseModel,
}

impl MspInstance {
    pub fn new(n: usize, x0: Vector, stages: Vec<StageData>, noise: NoiseModel) -> Result<Self> {
        check_dim("x0", n, x0.len())?;
        if stages.is_empty() {
            return Err(Error::InvalidInput(
                "an instance needs at least one stage".into(),
            ));
        }
        check_dim("noise stages", stages.len(), noise.num_stages())?;
        for (i, (stage, sn)) in stages.iter().zip(noise.stages.iter()).enumerate() {
            let t = i + 1;
            let m = sn.len();
            let ctx = |e: Error| e.at_stage(t);
            if stage.costs.len() != m {
                return Err(ctx(Error::Dimension(format!(
                    "{} costs for {} realizations",
                    stage.costs.len(),
                    m
                ))));
            }
            if stage.constraints.len() != 1 && stage.constraints.len() != m {
                return Err(ctx(Error::Dimension(format!(
                    "{} constraint sets for {} realizations (expected 1 or {m})",
                    stage.constraints.len(),
                    m
                ))));
            }
            if t == 1 && m != 1 {
                return Err(ctx(Error::InvalidInput(
                    "stage-1 data must be deterministic (a single realization)".into(),
                )));
            }
            for cost in &stage.costs {
                check_dim("stage cost dimension", n, cost.n()).map_err(ctx)?;
            }
            for cons in &stage.constraints {
                check_dim("constraint dimension", n, cons.linear().n()).map_err(ctx)?;
            }
        }
        Ok(Self {
            n,
            x0,
            stages,
            noise,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn stage(&self, t: usize) -> &StageData {
        &self.stages[t - 1]
    }

    pub fn num_realizations(&self, t: usize) -> usize {
        self.noise.stage(t).len()
    }

    pub fn probs(&self, t: usize) -> &[f64] {
        &self.noise.stage(t).probs
    }

    pub fn cost(&self, t: usize, j: usize) -> &QuadraticStageCost {
        &self.stages[t - 1].costs[j]
    }

    pub fn constraints(&self, t: usize, j: usize) -> &StageConstraints {
        let cons = &self.stages[t - 1].constraints;
        if cons.len() == 1 {
            &cons[0]
        } else {
            &cons[j]
        }
    }

    /// Strong-convexity constant of the stage-t cost-to-go, `Σ_j p_tj α_tj`.
    pub fn aggregated_alpha(&self, t: usize) -> f64 {
        self.probs(t)
            .iter()
            .zip(self.stage(t).costs.iter())
            .map(|(p, c)| p * c.alpha())
            .sum()
    }

    pub fn base_set(&self, t: usize) -> &BaseSet {
        &self.constraints(t, 0).linear().base_set
    }

    pub fn has_s2(&self) -> bool {
        self.stages
            .iter()
            .any(|s| s.constraints.iter().any(StageConstraints::is_s2))
    }
}

/// Quadratic expansion of `ρ‖A x_next + B x_prev − b‖²` on the stacked
/// ordering, as `(ΔH, Δc, Δd)` in the `½zᵀHz + cᵀz + d` convention.
pub fn penalty_expansion(cons: &ConstraintSetS1, rho: f64) -> (Matrix, Vector, f64) {
    let n = cons.n();
    let m = cons.num_coupling_rows();
    let mut stacked = Matrix::zeros(m, 2 * n);
    stacked.view_mut((0, 0), (m, n)).copy_from(&cons.b_mat);
    stacked.view_mut((0, n), (m, n)).copy_from(&cons.a);
    let dh = stacked.transpose() * &stacked * (2.0 * rho);
    let dc = stacked.transpose() * &cons.b * (-2.0 * rho);
    let dd = rho * cons.b.norm_squared();
    (dh, dc, dd)
}

/// `f + ρ‖A x_next + B x_prev − b‖²`, keeping the original alpha as its
/// certificate. Requires the columns of `(A B)` to be linearly independent.
pub fn make_penalized_stage_cost(
    cost: &QuadraticStageCost,
    cons: &ConstraintSetS1,
    rho: f64,
) -> Result<QuadraticStageCost> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidInput(format!(
            "penalty must be positive, got {rho}"
        )));
    }
    check_dim("constraint dimension", cost.n(), cons.n())?;
    let n = cost.n();
    let m = cons.num_coupling_rows();
    let mut ab = Matrix::zeros(m, 2 * n);
    ab.view_mut((0, 0), (m, n)).copy_from(&cons.a);
    ab.view_mut((0, n), (m, n)).copy_from(&cons.b_mat);
    let rank = if m == 0 {
        0
    } else {
        ab.rank(1e-10 * ab.amax().max(1.0))
    };
    if rank < 2 * n {
        return Err(Error::InvalidInput(format!(
            "columns of (A B) are linearly dependent (rank {rank} < {})",
            2 * n
        )));
    }
    let (dh, dc, dd) = penalty_expansion(cons, rho);
    let h = cost.h() + dh;
    let h = (&h + h.transpose()) * 0.5;
    QuadraticStageCost::new(n, h, cost.c() + dc, cost.d() + dd, cost.alpha())
}
