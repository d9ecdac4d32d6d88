//! Multistage decomposition with quadratic (SQDP) or affine (SDDP) cuts.
//!
//! Each iteration samples one scenario, runs a forward pass with the current
//! cost-to-go models, then walks back from stage T to 2 adding one cut per
//! stage at the forward trial states. The lower bound is the value of the
//! stage-1 subproblem; the upper bound is the mean of the most recent
//! forward-pass costs.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{
    ConstraintSetS2, CutModel, MspInstance, NoiseModel, QuadraticCut, StageConstraints, Vector,
};
use crate::oracle::{subtree_value, ScenarioTree};
use crate::qp::{solve_qp, DEFAULT_TOL};
use crate::stage::build_stage_subproblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CutMode {
    #[default]
    Quadratic,
    Affine,
}

impl CutMode {
    /// Name of the method this mode implements.
    pub fn method(self) -> &'static str {
        match self {
            CutMode::Quadratic => "SQDP",
            CutMode::Affine => "SDDP",
        }
    }
}

impl std::str::FromStr for CutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(CutMode::Quadratic),
            "affine" => Ok(CutMode::Affine),
            other => Err(Error::InvalidInput(format!("unknown cut mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative gap tolerance.
    pub eps: f64,
    /// Number of trailing forward costs in the upper bound.
    pub ub_window: usize,
    pub forward_scenarios_per_iter: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub cut_mode: CutMode,
    /// Value of an empty stage-t model, for `t = 2..=T`. Missing entries
    /// default to `floor`.
    pub floors: Vec<f64>,
    pub floor: f64,
    pub qp_tol: f64,
    /// Confidence multiplier on the standard error added to the upper bound.
    pub z: f64,
    /// Worker threads for per-realization backward solves.
    pub jobs: usize,
    /// When set, every stage QP is written there as JSON.
    #[serde(skip)]
    pub dump_qp_dir: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            ub_window: 200,
            forward_scenarios_per_iter: 1,
            max_iter: 5000,
            seed: 0,
            cut_mode: CutMode::Quadratic,
            floors: Vec::new(),
            floor: 0.0,
            qp_tol: DEFAULT_TOL,
            z: 0.0,
            jobs: 1,
            dump_qp_dir: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.ub_window == 0 {
            return Err(Error::InvalidInput("ub_window must be at least 1".into()));
        }
        if self.forward_scenarios_per_iter == 0 {
            return Err(Error::InvalidInput(
                "forward_scenarios_per_iter must be at least 1".into(),
            ));
        }
        if !(self.qp_tol > 0.0) {
            return Err(Error::InvalidInput("qp_tol must be positive".into()));
        }
        if !(self.z >= 0.0) {
            return Err(Error::InvalidInput("z must be nonnegative".into()));
        }
        if !self.floor.is_finite() || self.floors.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidInput("floors must be finite".into()));
        }
        Ok(())
    }

    fn floor_at(&self, t: usize) -> f64 {
        self.floors.get(t - 2).copied().unwrap_or(self.floor)
    }
}

/// Cost-to-go models `𝒬_t` for `t = 2..=T+1`; the last one is the
/// terminal zero function and never receives cuts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModels {
    num_stages: usize,
    models: Vec<CutModel>,
}

impl ValueModels {
    pub fn new(instance: &MspInstance, config: &SolverConfig) -> Self {
        let t_max = instance.num_stages();
        let n = instance.n();
        let mut models: Vec<CutModel> = (2..=t_max)
            .map(|t| CutModel::new(n, config.floor_at(t)))
            .collect();
        models.push(CutModel::new(n, 0.0));
        Self {
            num_stages: t_max,
            models,
        }
    }

    /// Model of `𝒬_t`, `2 <= t <= T+1`.
    pub fn get(&self, t: usize) -> &CutModel {
        &self.models[t - 2]
    }

    fn get_mut(&mut self, t: usize) -> &mut CutModel {
        &mut self.models[t - 2]
    }

    /// Model of the future cost seen by the stage-t subproblem.
    pub fn future(&self, t: usize) -> &CutModel {
        self.get(t + 1)
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn total_cuts(&self) -> usize {
        self.models.iter().map(CutModel::len).sum()
    }
}

/// Forward-pass outcome along one sampled scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Realization index per stage `1..=T` (0-based; stage 1 is always 0).
    pub scenario: Vec<usize>,
    /// `x_1..x_T`.
    pub states: Vec<Vector>,
    /// Immediate cost `f_t(x_{t-1}, x_t)` per stage.
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
}

impl Trajectory {
    /// State entering stage `t`: `x_0` for `t = 1`.
    pub fn incoming<'a>(&'a self, instance: &'a MspInstance, t: usize) -> &'a Vector {
        if t == 1 {
            instance.x0()
        } else {
            &self.states[t - 2]
        }
    }
}

/// Draws one realization index per stage, independently.
pub fn sample_scenario<R: Rng + ?Sized>(noise: &NoiseModel, rng: &mut R) -> Vec<usize> {
    noise
        .stages
        .iter()
        .map(|stage| {
            if stage.len() == 1 {
                0
            } else {
                WeightedIndex::new(&stage.probs)
                    .expect("validated probabilities")
                    .sample(rng)
            }
        })
        .collect()
}

/// Solution of one stage subproblem at a given incoming state.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolve {
    pub x: Vector,
    /// Optimal value including the future-cost model.
    pub value: f64,
    /// Immediate cost alone.
    pub stage_cost: f64,
    /// `∂/∂x_prev` of the stage cost at the solution plus `Bᵀλ`.
    pub beta: Vector,
    pub kkt_residual: f64,
}

/// Shared options for the per-stage solves.
#[derive(Debug)]
pub struct SolveContext {
    pub qp_tol: f64,
    pub dump_dir: Option<PathBuf>,
    pool: Option<rayon::ThreadPool>,
    dumped: AtomicUsize,
}

impl Default for SolveContext {
    fn default() -> Self {
        Self {
            qp_tol: DEFAULT_TOL,
            dump_dir: None,
            pool: None,
            dumped: AtomicUsize::new(0),
        }
    }
}

impl SolveContext {
    pub fn from_config(config: &SolverConfig) -> Result<Self> {
        let pool = if config.jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.jobs)
                    .build()
                    .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        if let Some(dir) = &config.dump_qp_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            qp_tol: config.qp_tol,
            dump_dir: config.dump_qp_dir.clone(),
            pool,
            dumped: AtomicUsize::new(0),
        })
    }

    /// Maps `f` over `0..m`, in parallel when a pool is configured; the
    /// output order is always ascending in the index.
    fn map_indices<T, F>(&self, m: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            Some(pool) if m > 1 => pool.install(|| (0..m).into_par_iter().map(&f).collect()),
            _ => (0..m).map(f).collect(),
        }
    }
}

/// Solves the stage-t subproblem for realization `j` with the given
/// future-cost model.
pub fn solve_stage(
    instance: &MspInstance,
    t: usize,
    j: usize,
    x_prev: &Vector,
    future: &CutModel,
    ctx: &SolveContext,
) -> Result<StageSolve> {
    solve_stage_to(instance, t, j, x_prev, future, ctx, ctx.qp_tol)
}

fn solve_stage_to(
    instance: &MspInstance,
    t: usize,
    j: usize,
    x_prev: &Vector,
    future: &CutModel,
    ctx: &SolveContext,
    tol: f64,
) -> Result<StageSolve> {
    let cons = match instance.constraints(t, j) {
        StageConstraints::S1(c) => c,
        StageConstraints::S2(_) => {
            return Err(Error::Unsupported(
                "stage subproblems with quadratic constraints (S2) cannot be solved by the embedded QP solver"
                    .into(),
            )
            .at_stage(t))
        }
    };
    let cost = instance.cost(t, j);
    let sqp = build_stage_subproblem(cost, cons, x_prev, future).map_err(|e| e.at_stage(t))?;
    if let Some(dir) = &ctx.dump_dir {
        let k = ctx.dumped.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!("qp_{k:06}_t{t}_j{j}.json"));
        std::fs::write(path, crate::io::to_json_string(&sqp.qp.to_json())?)?;
    }
    let sol = solve_qp(&sqp.qp, tol).map_err(|e| e.at_stage(t))?;
    let x = sqp.state(&sol);
    let (g_prev, _) = cost.grad(x_prev, &x)?;
    let beta = g_prev + cons.b_mat.transpose() * sqp.coupling_duals(&sol);
    Ok(StageSolve {
        stage_cost: cost.eval(x_prev, &x)?,
        value: sol.value,
        x,
        beta,
        kkt_residual: sol.kkt_residual,
    })
}

/// Runs stages `1..=T` along `scenario`, each stage using the model of the
/// next stage's cost-to-go.
pub fn forward_pass(
    instance: &MspInstance,
    models: &ValueModels,
    scenario: &[usize],
    ctx: &SolveContext,
) -> Result<Trajectory> {
    let t_max = instance.num_stages();
    check_dim("scenario", t_max, scenario.len())?;
    let mut states = Vec::with_capacity(t_max);
    let mut stage_costs = Vec::with_capacity(t_max);
    let mut x_prev = instance.x0().clone();
    for t in 1..=t_max {
        let j = scenario[t - 1];
        if j >= instance.num_realizations(t) {
            return Err(Error::InvalidInput(format!("realization {j} out of range")).at_stage(t));
        }
        let s = solve_stage(instance, t, j, &x_prev, models.future(t), ctx)?;
        stage_costs.push(s.stage_cost);
        x_prev = s.x.clone();
        states.push(s.x);
    }
    Ok(Trajectory {
        scenario: scenario.to_vec(),
        total_cost: stage_costs.iter().sum(),
        states,
        stage_costs,
    })
}

/// Per-realization ingredients of a stage cut.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationCut {
    pub theta: f64,
    pub beta: Vector,
    pub alpha: f64,
}

/// Probability-weighted aggregation in ascending realization order.
pub fn aggregate_cut(
    probs: &[f64],
    parts: &[RealizationCut],
    x_trial: &Vector,
    mode: CutMode,
) -> Result<QuadraticCut> {
    check_dim("realization cuts", probs.len(), parts.len())?;
    let mut theta = 0.0;
    let mut beta = Vector::zeros(x_trial.len());
    let mut alpha = 0.0;
    for (p, part) in probs.iter().zip(parts) {
        theta += p * part.theta;
        beta += &part.beta * *p;
        alpha += p * part.alpha;
    }
    let alpha = match mode {
        CutMode::Quadratic => alpha,
        CutMode::Affine => 0.0,
    };
    QuadraticCut::new(theta, beta, x_trial.clone(), alpha)
}

/// `Σ_i μ_i ∂_{x_prev} g_i(x_prev, x)`, the extra slope term of an S2 cut
/// given multipliers of the quadratic constraints.
pub fn s2_beta_term(
    cons: &ConstraintSetS2,
    x_prev: &Vector,
    x: &Vector,
    mu: &[f64],
) -> Result<Vector> {
    check_dim("S2 multipliers", cons.g.len(), mu.len())?;
    let mut out = Vector::zeros(x_prev.len());
    for (g, m) in cons.g.iter().zip(mu) {
        if *m < 0.0 {
            return Err(Error::InvalidInput(
                "S2 multipliers must be nonnegative".into(),
            ));
        }
        out += g.grad_prev(x_prev, x) * *m;
    }
    Ok(out)
}

/// Cut on `𝒬_t` at `x_trial` from the subproblems of every realization,
/// each using the current model of `𝒬_{t+1}`.
pub fn compute_stage_cut(
    instance: &MspInstance,
    models: &ValueModels,
    t: usize,
    x_trial: &Vector,
    mode: CutMode,
    ctx: &SolveContext,
) -> Result<QuadraticCut> {
    if t < 2 || t > instance.num_stages() {
        return Err(Error::InvalidInput(format!(
            "cuts exist for stages 2..={}, got {t}",
            instance.num_stages()
        )));
    }
    let m = instance.num_realizations(t);
    let future = models.future(t);
    let solved = ctx.map_indices(m, |j| solve_stage(instance, t, j, x_trial, future, ctx));
    let mut parts = Vec::with_capacity(m);
    for (j, s) in solved.into_iter().enumerate() {
        let s = s?;
        parts.push(RealizationCut {
            theta: s.value,
            beta: s.beta,
            alpha: instance.cost(t, j).alpha(),
        });
    }
    aggregate_cut(instance.probs(t), &parts, x_trial, mode)
}

/// Adds one cut per stage `T, T-1, …, 2` at the trajectory's trial states.
pub fn backward_pass(
    instance: &MspInstance,
    models: &mut ValueModels,
    trajectory: &Trajectory,
    mode: CutMode,
    ctx: &SolveContext,
) -> Result<Vec<QuadraticCut>> {
    let mut added = Vec::new();
    for t in (2..=instance.num_stages()).rev() {
        let cut = compute_stage_cut(
            instance,
            models,
            t,
            trajectory.incoming(instance, t),
            mode,
            ctx,
        )?;
        models.get_mut(t).push_cut(cut.clone())?;
        added.push(cut);
    }
    Ok(added)
}

/// Tolerance for the bound subproblem. Its value is reported and compared
/// across iterations, so it is solved tighter than the trial subproblems.
const BOUND_TOL: f64 = 1e-10;

/// Optimal value of the stage-1 subproblem under the current models.
pub fn lower_bound(
    instance: &MspInstance,
    models: &ValueModels,
    ctx: &SolveContext,
) -> Result<f64> {
    let x0 = instance.x0();
    let tight = ctx.qp_tol.min(BOUND_TOL);
    match solve_stage_to(instance, 1, 0, x0, models.future(1), ctx, tight) {
        Err(e) if tight < ctx.qp_tol && matches!(e.root(), Error::NonConvergence { .. }) => {
            Ok(solve_stage(instance, 1, 0, x0, models.future(1), ctx)?.value)
        }
        r => Ok(r?.value),
    }
}

/// Sample mean of `costs`, plus `z` standard errors when `z > 0`.
pub fn statistical_upper_bound(costs: &[f64], z: f64) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::InvalidInput(
            "upper bound needs at least one cost".into(),
        ));
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    if z == 0.0 || costs.len() < 2 {
        return Ok(mean);
    }
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(mean + z * var.sqrt() / n.sqrt())
}

/// Stopping test: relative gap when `ub > 0`, otherwise an absolute gap
/// scaled by `max(1, |lb|)`.
pub fn gap_met(lb: f64, ub: f64, eps: f64) -> bool {
    if ub > 0.0 {
        (ub - lb) / ub <= eps
    } else {
        ub - lb <= eps * lb.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lb: f64,
    pub ub: Option<f64>,
    pub fwd_cost: f64,
    pub cuts_total: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationStatus {
    Converged,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutRecord {
    pub theta: f64,
    pub beta: Vec<f64>,
    pub center: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageModelRecord {
    pub stage: usize,
    pub floor: f64,
    pub cuts: Vec<CutRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: &'static str,
    pub status: TerminationStatus,
    pub iterations: usize,
    pub lb: f64,
    pub ub: Option<f64>,
    pub records: Vec<IterationRecord>,
    pub config: SolverConfig,
    pub models: Vec<StageModelRecord>,
    #[serde(skip)]
    pub final_models: ValueModels,
}

impl RunReport {
    /// Relative gap `(UB − LB)/UB` at termination, if an upper bound exists.
    pub fn relative_gap(&self) -> Option<f64> {
        self.ub.map(|ub| (ub - self.lb) / ub)
    }

    /// Writes `iter,lb,ub,fwd_cost,cuts_total,wall_ms`; `ub` is empty until
    /// the window fills.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "lb", "ub", "fwd_cost", "cuts_total", "wall_ms"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                fmt17(r.lb),
                r.ub.map(fmt17).unwrap_or_default(),
                fmt17(r.fwd_cost),
                r.cuts_total.to_string(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn model_records(models: &ValueModels) -> Vec<StageModelRecord> {
    (2..=models.num_stages())
        .map(|t| {
            let m = models.get(t);
            StageModelRecord {
                stage: t,
                floor: m.floor(),
                cuts: m
                    .cuts()
                    .iter()
                    .map(|c| CutRecord {
                        theta: c.theta,
                        beta: c.beta.iter().copied().collect(),
                        center: c.center.iter().copied().collect(),
                        alpha: c.alpha,
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Runs the decomposition until the gap test passes or `max_iter` is hit.
pub fn run(instance: &MspInstance, config: &SolverConfig) -> Result<RunReport> {
    config.validate()?;
    if instance.has_s2() {
        return Err(Error::Unsupported(
            "end-to-end solving of stages with quadratic constraints (S2) is not available".into(),
        ));
    }
    let ctx = SolveContext::from_config(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut models = ValueModels::new(instance, config);
    let mut costs: Vec<f64> = Vec::new();
    let mut records = Vec::new();
    let mut status = TerminationStatus::IterationLimit;
    let mut lb = lower_bound(instance, &models, &ctx)?;
    let mut ub = None;
    let start = Instant::now();

    for k in 1..=config.max_iter {
        let mut fwd = 0.0;
        for _ in 0..config.forward_scenarios_per_iter {
            let scenario = sample_scenario(instance.noise(), &mut rng);
            let traj = forward_pass(instance, &models, &scenario, &ctx)?;
            fwd += traj.total_cost;
            costs.push(traj.total_cost);
            backward_pass(instance, &mut models, &traj, config.cut_mode, &ctx)?;
        }
        fwd /= config.forward_scenarios_per_iter as f64;
        lb = lower_bound(instance, &models, &ctx)?;
        ub = if costs.len() >= config.ub_window {
            Some(statistical_upper_bound(
                &costs[costs.len() - config.ub_window..],
                config.z,
            )?)
        } else {
            None
        };
        records.push(IterationRecord {
            iter: k,
            lb,
            ub,
            fwd_cost: fwd,
            cuts_total: models.total_cuts(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if ub.is_some_and(|u| gap_met(lb, u, config.eps)) {
            status = TerminationStatus::Converged;
            break;
        }
    }
    Ok(RunReport {
        method: config.cut_mode.method(),
        status,
        iterations: records.len(),
        lb,
        ub,
        records,
        config: config.clone(),
        models: model_records(&models),
        final_models: models,
    })
}

/// Decisions of the current policy at one scenario-tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNode {
    pub stage: usize,
    pub realization: usize,
    pub parent: Option<usize>,
    pub path_prob: f64,
    pub x: Vector,
}

/// Applies the policy defined by `models` at every node of the full tree.
pub fn simulate_policy_full_tree(
    instance: &MspInstance,
    models: &ValueModels,
    node_budget: usize,
    ctx: &SolveContext,
) -> Result<Vec<PolicyNode>> {
    let tree = ScenarioTree::build(instance, 1, node_budget)?;
    let mut out: Vec<PolicyNode> = Vec::with_capacity(tree.len());
    // breadth-first order: parents precede children
    for node in &tree.nodes {
        let x_prev = match node.parent {
            Some(p) => out[p].x.clone(),
            None => instance.x0().clone(),
        };
        let s = solve_stage(
            instance,
            node.stage,
            node.realization,
            &x_prev,
            models.future(node.stage),
            ctx,
        )?;
        out.push(PolicyNode {
            stage: node.stage,
            realization: node.realization,
            parent: node.parent,
            path_prob: node.path_prob,
            x: s.x,
        });
    }
    Ok(out)
}

/// `𝒬_{t+1}(x_n) − 𝒬^k_{t+1}(x_n)` for each simulated node `n` at stage
/// `t < T`, paired with the node index.
pub fn policy_gaps(
    instance: &MspInstance,
    models: &ValueModels,
    nodes: &[PolicyNode],
    node_budget: usize,
) -> Result<Vec<(usize, f64)>> {
    let t_max = instance.num_stages();
    let mut gaps = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        if node.stage >= t_max {
            continue;
        }
        let t = node.stage + 1;
        let exact = subtree_value(instance, t, &node.x, node_budget)?;
        gaps.push((i, exact - models.get(t).eval(&node.x)?));
    }
    Ok(gaps)
}
