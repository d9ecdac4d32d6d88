//! Random benchmark family and SDDP-vs-SQDP comparison runs.
//!
//! Stage costs are `½ zᵀ(ξξᵀ + λ₀I)z + ξᵀz` on `z = (x_{t-1}, x_t)` with
//! `ξ ∈ [0,1]^{2n}` drawn uniformly, and every `x_t` lies on the unit simplex.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_instance;
use crate::model::{
    BaseSet, ConstraintSetS1, Matrix, MspInstance, NoiseModel, QuadraticStageCost,
    StageConstraints, StageData, StageNoise, Vector,
};
use crate::oracle::{extensive_form_value, DEFAULT_NODE_BUDGET};
use crate::sqdp::{fmt17, run, CutMode, SolverConfig, TerminationStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkParams {
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub lambda0: f64,
    #[serde(default)]
    pub seed: u64,
    /// Initial state; the simplex barycenter when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Solver settings for this row; `cut_mode` is overridden per method.
    #[serde(default)]
    pub config: SolverConfig,
}

impl BenchmarkParams {
    pub fn new(t: usize, n: usize, m: usize, lambda0: f64, seed: u64) -> Self {
        Self {
            t,
            n,
            m,
            lambda0,
            seed,
            x0: None,
            config: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::InvalidInput("T, n and M must be at least 1".into()));
        }
        if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        Ok(())
    }
}

fn stage_cost(xi: &Vector, lambda0: f64, n: usize) -> Result<QuadraticStageCost> {
    let h = xi * xi.transpose() + Matrix::identity(2 * n, 2 * n) * lambda0;
    QuadraticStageCost::new(n, h, xi.clone(), 0.0, lambda0)
}

/// Draws the instance for `params`. Noise vectors are drawn stage by stage
/// (the single stage-1 vector first), realization by realization.
pub fn generate_instance(params: &BenchmarkParams) -> Result<MspInstance> {
    params.validate()?;
    let (t_max, n, m) = (params.t, params.n, params.m);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let simplex = StageConstraints::S1(ConstraintSetS1::base_only(n, BaseSet::Simplex)?);
    let mut stages = Vec::with_capacity(t_max);
    let mut noise = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let count = if t == 1 { 1 } else { m };
        let xis: Vec<Vector> = (0..count)
            .map(|_| Vector::from_fn(2 * n, |_, _| rng.gen::<f64>()))
            .collect();
        let costs = xis
            .iter()
            .map(|xi| stage_cost(xi, params.lambda0, n))
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageData {
            costs,
            constraints: vec![simplex.clone()],
        });
        noise.push(StageNoise::new(xis, vec![1.0 / count as f64; count])?);
    }
    let x0 = match &params.x0 {
        Some(x) => Vector::from_column_slice(x),
        None => Vector::from_element(n, 1.0 / n as f64),
    };
    MspInstance::new(n, x0, stages, NoiseModel { stages: noise })
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Append the extensive-form optimum when the tree fits the budget.
    pub with_oracle: bool,
    pub node_budget: Option<usize>,
    /// Generated instances are written here when set.
    pub instance_dir: Option<PathBuf>,
    /// Grid rows run concurrently on this many threads when above 1.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub lambda0: f64,
    pub seed: u64,
    pub iters: Option<usize>,
    pub wall_ms: Option<f64>,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
    pub ext_opt: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

pub const CSV_HEADER: [&str; 10] = [
    "method", "T", "n", "M", "lambda0", "iters", "wall_ms", "lb", "ub", "ext_opt",
];

fn instance_file_name(p: &BenchmarkParams) -> String {
    format!(
        "instance_T{}_n{}_M{}_l{}_s{}.json",
        p.t, p.n, p.m, p.lambda0, p.seed
    )
}

fn run_params(params: &BenchmarkParams, opts: &BenchOptions) -> Vec<BenchRow> {
    let row = |method: &str| BenchRow {
        method: method.to_string(),
        t: params.t,
        n: params.n,
        m: params.m,
        lambda0: params.lambda0,
        seed: params.seed,
        iters: None,
        wall_ms: None,
        lb: None,
        ub: None,
        ext_opt: None,
        converged: false,
        error: None,
    };
    let modes = [CutMode::Quadratic, CutMode::Affine];
    let instance = match generate_instance(params) {
        Ok(i) => i,
        Err(e) => {
            return modes
                .iter()
                .map(|m| BenchRow {
                    error: Some(e.to_string()),
                    ..row(m.method())
                })
                .collect()
        }
    };
    let mut instance_error = None;
    if let Some(dir) = &opts.instance_dir {
        if let Err(e) = write_instance(&dir.join(instance_file_name(params)), &instance) {
            instance_error = Some(e.to_string());
        }
    }
    let ext_opt = if opts.with_oracle {
        extensive_form_value(&instance, opts.node_budget.unwrap_or(DEFAULT_NODE_BUDGET))
            .ok()
            .map(|(v, _)| v)
    } else {
        None
    };
    modes
        .iter()
        .map(|&mode| {
            let config = SolverConfig {
                cut_mode: mode,
                ..params.config.clone()
            };
            let start = Instant::now();
            let mut r = row(mode.method());
            r.ext_opt = ext_opt;
            r.error = instance_error.clone();
            match run(&instance, &config) {
                Ok(report) => {
                    r.iters = Some(report.iterations);
                    r.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                    r.lb = Some(report.lb);
                    r.ub = report.ub;
                    r.converged = report.status == TerminationStatus::Converged;
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r
        })
        .collect()
}

/// One row per (params, method), SQDP before SDDP, in grid order. Failures
/// are recorded in the row and do not stop the grid.
pub fn run_comparison(grid: &[BenchmarkParams], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if let Some(dir) = &opts.instance_dir {
        std::fs::create_dir_all(dir)?;
    }
    let rows: Vec<Vec<BenchRow>> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| grid.par_iter().map(|p| run_params(p, opts)).collect())
    } else {
        grid.iter().map(|p| run_params(p, opts)).collect()
    };
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.t.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            fmt17(r.lambda0),
            r.iters.map(|i| i.to_string()).unwrap_or_default(),
            r.wall_ms.map(|x| format!("{x:.3}")).unwrap_or_default(),
            opt(r.lb),
            opt(r.ub),
            opt(r.ext_opt),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Vec<BenchmarkParams>> {
    let grid: Vec<BenchmarkParams> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for (i, p) in grid.iter().enumerate() {
        p.validate()
            .map_err(|e| Error::InvalidInput(format!("grid[{i}]: {e}")))?;
    }
    Ok(grid)
}
