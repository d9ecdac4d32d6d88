//! Brute-force reference values.
//!
//! The extensive form puts one decision vector on every node of the scenario
//! tree and solves the resulting QP in one shot. It is exact and exponential
//! in `T`, so everything here is guarded by a node budget.

use crate::error::{Error, Result};
use crate::model::{BaseSet, Matrix, MspInstance, Vector};
use crate::qp::{solve_qp, QpProblem, DEFAULT_TOL};

pub const DEFAULT_NODE_BUDGET: usize = 50_000;

/// Dense assembly limit on the number of extensive-form variables.
pub const MAX_DENSE_VARIABLES: usize = 6_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub stage: usize,
    /// 0-based realization index at `stage`.
    pub realization: usize,
    pub parent: Option<usize>,
    /// Transition probability from the parent.
    pub prob: f64,
    /// Product of transition probabilities along the path from the top.
    pub path_prob: f64,
    pub children: Vec<usize>,
}

/// Scenario tree (or forest, when started below stage 1) of the stages
/// `start_stage..=T`. Top nodes hang off an implicit parent holding the
/// incoming state; for `start_stage = 1` there is a single root.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub start_stage: usize,
    pub num_stages: usize,
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    BreadthFirst,
    DepthFirst,
}

/// Node count of the tree over stages `start..=T`, saturating.
pub fn tree_size(instance: &MspInstance, start: usize) -> usize {
    let mut total = 0usize;
    let mut level = 1usize;
    for t in start..=instance.num_stages() {
        level = level.saturating_mul(instance.num_realizations(t));
        total = total.saturating_add(level);
    }
    total
}

impl ScenarioTree {
    /// Breadth-first tree over stages `start_stage..=T`.
    pub fn build(instance: &MspInstance, start_stage: usize, budget: usize) -> Result<Self> {
        Self::build_with(instance, start_stage, budget, Layout::BreadthFirst)
    }

    fn build_with(
        instance: &MspInstance,
        start_stage: usize,
        budget: usize,
        layout: Layout,
    ) -> Result<Self> {
        let t_max = instance.num_stages();
        if start_stage == 0 || start_stage > t_max {
            return Err(Error::InvalidInput(format!(
                "tree start stage {start_stage} outside 1..={t_max}"
            )));
        }
        let size = tree_size(instance, start_stage);
        if size > budget {
            return Err(Error::BudgetExceeded {
                nodes: size,
                budget,
            });
        }
        let mut tree = ScenarioTree {
            start_stage,
            num_stages: t_max,
            nodes: Vec::with_capacity(size),
        };
        match layout {
            Layout::BreadthFirst => {
                let mut frontier: Vec<Option<usize>> = vec![None];
                for t in start_stage..=t_max {
                    let mut next = Vec::new();
                    for parent in frontier {
                        for j in 0..instance.num_realizations(t) {
                            next.push(Some(tree.push(instance, t, j, parent)));
                        }
                    }
                    frontier = next;
                }
            }
            Layout::DepthFirst => {
                for j in 0..instance.num_realizations(start_stage) {
                    tree.push_dfs(instance, start_stage, j, None);
                }
            }
        }
        Ok(tree)
    }

    fn push(&mut self, instance: &MspInstance, t: usize, j: usize, parent: Option<usize>) -> usize {
        let prob = instance.probs(t)[j];
        let path_prob = parent.map_or(1.0, |p| self.nodes[p].path_prob) * prob;
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            stage: t,
            realization: j,
            parent,
            prob,
            path_prob,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    fn push_dfs(&mut self, instance: &MspInstance, t: usize, j: usize, parent: Option<usize>) {
        let id = self.push(instance, t, j, parent);
        if t < self.num_stages {
            for k in 0..instance.num_realizations(t + 1) {
                self.push_dfs(instance, t + 1, k, Some(id));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.children.is_empty())
    }

    pub fn nodes_at_stage(&self, t: usize) -> impl Iterator<Item = (usize, &TreeNode)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.stage == t)
    }

    /// Path probability mass on the leaves; 1 for a well-formed tree.
    pub fn leaf_mass(&self) -> f64 {
        self.leaves().map(|n| n.path_prob).sum()
    }
}

/// Optimal value and decisions of an extensive-form problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensiveSolution {
    pub value: f64,
    /// Decision of every tree node, in tree order.
    pub decisions: Vec<Vector>,
    pub tree: ScenarioTree,
}

impl ExtensiveSolution {
    /// First top-level decision (the stage-1 decision of a full tree).
    pub fn root_decision(&self) -> &Vector {
        &self.decisions[0]
    }
}

/// `𝒬_1(x_0)` and the optimal stage-1 decision.
pub fn extensive_form_value(instance: &MspInstance, node_budget: usize) -> Result<(f64, Vector)> {
    let sol = solve_extensive(instance, 1, instance.x0(), node_budget)?;
    Ok((sol.value, sol.root_decision().clone()))
}

/// Full extensive-form solve over stages `start..=T` with incoming state
/// `x_prev`, on the breadth-first tree.
pub fn solve_extensive(
    instance: &MspInstance,
    start: usize,
    x_prev: &Vector,
    node_budget: usize,
) -> Result<ExtensiveSolution> {
    let tree = ScenarioTree::build(instance, start, node_budget)?;
    let (value, decisions) = solve_tree(instance, &tree, x_prev)?;
    Ok(ExtensiveSolution {
        value,
        decisions,
        tree,
    })
}

/// `𝒬_t(x_prev)`, the expected optimal cost of stages `t..=T` given the
/// incoming state, with `𝒬_{T+1} ≡ 0`. Assembled on a depth-first tree so it
/// shares no layout with [`extensive_form_value`].
pub fn subtree_value(
    instance: &MspInstance,
    t: usize,
    x_prev: &Vector,
    node_budget: usize,
) -> Result<f64> {
    let t_max = instance.num_stages();
    if t == t_max + 1 {
        return Ok(0.0);
    }
    if t == 0 || t > t_max + 1 {
        return Err(Error::InvalidInput(format!(
            "stage {t} outside 1..={}",
            t_max + 1
        )));
    }
    let tree = ScenarioTree::build_with(instance, t, node_budget, Layout::DepthFirst)?;
    Ok(solve_tree(instance, &tree, x_prev)?.0)
}

fn solve_tree(
    instance: &MspInstance,
    tree: &ScenarioTree,
    x_prev: &Vector,
) -> Result<(f64, Vec<Vector>)> {
    if instance.has_s2() {
        return Err(Error::Unsupported(
            "the extensive form handles linear (S1) constraints only".into(),
        ));
    }
    let n = instance.n();
    crate::error::check_dim("x_prev", n, x_prev.len())?;
    let nn = tree.len();
    let d = nn * n;
    if d > MAX_DENSE_VARIABLES {
        return Err(Error::Unsupported(format!(
            "extensive form with {d} variables exceeds the dense limit of {MAX_DENSE_VARIABLES}"
        )));
    }

    let mut p = Matrix::zeros(d, d);
    let mut q = Vector::zeros(d);
    let mut r = 0.0;
    let mut lower = Vector::from_element(d, f64::NEG_INFINITY);
    let mut upper = Vector::from_element(d, f64::INFINITY);
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();

    for (i, node) in tree.nodes.iter().enumerate() {
        let (t, j, w) = (node.stage, node.realization, node.path_prob);
        let cost = instance.cost(t, j);
        let h_pp = cost.block_prev_prev();
        let h_np = cost.block_next_prev();
        let h_nn = cost.block_next_next();
        let xi = i * n;
        add_block(&mut p, xi, xi, &h_nn, w);
        let cons = instance.constraints(t, j).linear();
        match node.parent {
            Some(par) => {
                let xp = par * n;
                add_block(&mut p, xp, xp, &h_pp, w);
                add_block(&mut p, xi, xp, &h_np, w);
                add_block(&mut p, xp, xi, &h_np.transpose(), w);
                let mut qp_ = q.rows_mut(xp, n);
                qp_ += cost.c_prev() * w;
                let mut qi = q.rows_mut(xi, n);
                qi += cost.c_next() * w;
                r += w * cost.d();
                for row in 0..cons.num_coupling_rows() {
                    let mut entries = Vec::with_capacity(2 * n);
                    for k in 0..n {
                        entries.push((xi + k, cons.a[(row, k)]));
                        entries.push((xp + k, cons.b_mat[(row, k)]));
                    }
                    rows.push((entries, cons.b[row]));
                }
            }
            None => {
                let mut qi = q.rows_mut(xi, n);
                qi += (&h_np * x_prev + cost.c_next()) * w;
                r += w
                    * (0.5 * x_prev.dot(&(&h_pp * x_prev)) + cost.c_prev().dot(x_prev) + cost.d());
                let rhs = &cons.b - &cons.b_mat * x_prev;
                for row in 0..cons.num_coupling_rows() {
                    let entries = (0..n).map(|k| (xi + k, cons.a[(row, k)])).collect();
                    rows.push((entries, rhs[row]));
                }
            }
        }
        match &cons.base_set {
            BaseSet::Box { lower: l, upper: u } => {
                lower.rows_mut(xi, n).copy_from(l);
                upper.rows_mut(xi, n).copy_from(u);
            }
            BaseSet::Simplex => {
                lower.rows_mut(xi, n).fill(0.0);
                rows.push(((0..n).map(|k| (xi + k, 1.0)).collect(), 1.0));
            }
        }
    }

    let mut a_eq = Matrix::zeros(rows.len(), d);
    let mut b_eq = Vector::zeros(rows.len());
    for (ri, (entries, rhs)) in rows.iter().enumerate() {
        for &(col, v) in entries {
            a_eq[(ri, col)] += v;
        }
        b_eq[ri] = *rhs;
    }
    // symmetrize away rounding from the two off-diagonal block writes
    let p = (&p + p.transpose()) * 0.5;
    let qp = QpProblem {
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
    let sol = solve_qp(&qp, DEFAULT_TOL)?;
    let decisions = (0..nn)
        .map(|i| sol.x_star.rows(i * n, n).into_owned())
        .collect();
    Ok((sol.value, decisions))
}

fn add_block(p: &mut Matrix, row: usize, col: usize, block: &Matrix, w: f64) {
    let mut view = p.view_mut((row, col), (block.nrows(), block.ncols()));
    view += block * w;
}

/// Exhaustive grid minimization over a box of dimension 1 or 2. Returns the
/// best grid point (first in row-major order on ties) and its value.
pub fn grid_min<F>(objective: F, domain: &BaseSet, resolution: f64) -> Result<(Vector, f64)>
where
    F: Fn(&Vector) -> f64,
{
    let BaseSet::Box { lower, upper } = domain else {
        return Err(Error::InvalidInput("grid search needs a box domain".into()));
    };
    let dim = lower.len();
    if dim == 0 || dim > 2 {
        return Err(Error::InvalidInput(format!(
            "grid search supports dimension 1 or 2, got {dim}"
        )));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidInput(
            "grid resolution must be positive".into(),
        ));
    }
    let counts: Vec<usize> = (0..dim)
        .map(|i| ((upper[i] - lower[i]) / resolution).ceil() as usize + 1)
        .collect();
    let total = counts.iter().fold(1f64, |acc, &c| acc * c as f64);
    if total > 1e9 {
        return Err(Error::InvalidInput(format!(
            "grid of {total:.0} points is too large"
        )));
    }
    let coord = |i: usize, k: usize| {
        if k + 1 == counts[i] {
            upper[i]
        } else {
            lower[i] + k as f64 * resolution
        }
    };
    let mut x = Vector::zeros(dim);
    let mut best = (Vector::zeros(dim), f64::INFINITY);
    let outer = if dim == 2 { counts[1] } else { 1 };
    for k1 in 0..outer {
        if dim == 2 {
            x[1] = coord(1, k1);
        }
        for k0 in 0..counts[0] {
            x[0] = coord(0, k0);
            let v = objective(&x);
            if v < best.1 {
                best = (x.clone(), v);
            }
        }
    }
    Ok(best)
}
