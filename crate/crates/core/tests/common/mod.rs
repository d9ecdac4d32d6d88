//! Random instances shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sqdp_core::bench::{generate_instance, BenchmarkParams};
use sqdp_core::model::{
    BaseSet, ConstraintSetS1, Matrix, MspInstance, NoiseModel, QuadraticStageCost,
    StageConstraints, StageData, StageNoise, Vector,
};
use sqdp_core::oracle::extensive_form_value;
use sqdp_core::qcsc::CompositeObjective;
use sqdp_core::qp::QpProblem;
use sqdp_core::sqdp::RunReport;

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(n, |_, _| uniform(rng, lo, hi))
}

/// `R Rᵀ / d + alpha I` with `R` uniform in `[−1, 1]`.
pub fn random_pd(rng: &mut ChaCha8Rng, d: usize, alpha: f64) -> Matrix {
    let r = Matrix::from_fn(d, d, |_, _| uniform(rng, -1.0, 1.0));
    let h = &r * r.transpose() / d as f64 + Matrix::identity(d, d) * alpha;
    (&h + h.transpose()) * 0.5
}

/// Positive probabilities summing to one.
pub fn random_probs(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| uniform(rng, 0.2, 1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
    let head: f64 = p[..m - 1].iter().sum();
    p[m - 1] = 1.0 - head;
    p
}

/// A cost `½zᵀHz + cᵀz + d` whose minimum over all of `ℝ^{2n}` is
/// nonnegative, so a zero floor is a valid lower bound for every cost-to-go.
pub fn nonnegative_cost(rng: &mut ChaCha8Rng, n: usize) -> QuadraticStageCost {
    let alpha = uniform(rng, 0.2, 2.0);
    let h = random_pd(rng, 2 * n, alpha);
    let c = random_vector(rng, 2 * n, -2.0, 2.0);
    let hinv_c = h.clone().cholesky().unwrap().solve(&c);
    let d = 0.5 * c.dot(&hinv_c) + uniform(rng, 0.0, 0.5);
    QuadraticStageCost::new(n, h, c, d, alpha).unwrap()
}

/// States in `[−1, 1]^n` with one coupling row per realization,
/// `x_t(0) − κ x_{t−1}(0) = b_j` with `|κ| ≤ 0.5` and `|b_j| ≤ 0.4`, so every
/// previous state in the box leaves the stage feasible.
pub fn coupled_box_msp(rng: &mut ChaCha8Rng, t_max: usize, n: usize, m: usize) -> MspInstance {
    let lower = Vector::from_element(n, -1.0);
    let upper = Vector::from_element(n, 1.0);
    let base = BaseSet::boxed(lower, upper).unwrap();
    let mut stages = Vec::new();
    let mut noise = Vec::new();
    for t in 1..=t_max {
        let count = if t == 1 { 1 } else { m };
        let kappa = uniform(rng, -0.5, 0.5);
        let costs = (0..count).map(|_| nonnegative_cost(rng, n)).collect();
        let constraints = (0..count)
            .map(|_| {
                let mut a = Matrix::zeros(1, n);
                a[(0, 0)] = 1.0;
                let mut b_mat = Matrix::zeros(1, n);
                b_mat[(0, 0)] = -kappa;
                let b = Vector::from_element(1, uniform(rng, -0.4, 0.4));
                StageConstraints::S1(ConstraintSetS1::new(a, b_mat, b, base.clone()).unwrap())
            })
            .collect();
        stages.push(StageData { costs, constraints });
        noise.push(StageNoise::new(Vec::new(), random_probs(rng, count)).unwrap());
    }
    let x0 = random_vector(rng, n, -1.0, 1.0);
    MspInstance::new(n, x0, stages, NoiseModel { stages: noise }).unwrap()
}

/// Simplex states, one nonnegative cost per realization and random
/// probabilities.
pub fn simplex_msp(rng: &mut ChaCha8Rng, t_max: usize, n: usize, m: usize) -> MspInstance {
    let simplex = StageConstraints::S1(ConstraintSetS1::base_only(n, BaseSet::Simplex).unwrap());
    let mut stages = Vec::new();
    let mut noise = Vec::new();
    for t in 1..=t_max {
        let count = if t == 1 { 1 } else { m };
        let costs = (0..count).map(|_| nonnegative_cost(rng, n)).collect();
        stages.push(StageData {
            costs,
            constraints: vec![simplex.clone()],
        });
        noise.push(StageNoise::new(Vec::new(), random_probs(rng, count)).unwrap());
    }
    let x0 = Vector::from_element(n, 1.0 / n as f64);
    MspInstance::new(n, x0, stages, NoiseModel { stages: noise }).unwrap()
}

/// A small MSP with `T ≤ 3`, `n ≤ 4`, `M ≤ 3`; the kind rotates with `i`
/// between coupled boxes, random simplex costs and the benchmark family.
pub fn desk_msp(rng: &mut ChaCha8Rng, i: usize) -> MspInstance {
    let t_max = rng.gen_range(2..=3);
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=3);
    match i % 3 {
        0 => coupled_box_msp(rng, t_max, n, m),
        1 => simplex_msp(rng, t_max, n, m),
        _ => {
            let lambda0 = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
            generate_instance(&BenchmarkParams::new(t_max, n, m, lambda0, rng.gen())).unwrap()
        }
    }
}

/// Checks that the lower bounds never decrease and end below the
/// extensive-form optimum.
pub fn lb_soundness(report: &RunReport, ext: f64) -> Result<(), String> {
    for w in report.records.windows(2) {
        if w[1].lb < w[0].lb - 1e-8 {
            return Err(format!(
                "LB decreased at iteration {}: {} -> {}",
                w[1].iter, w[0].lb, w[1].lb
            ));
        }
    }
    if report.lb > ext + 1e-6 {
        return Err(format!("final LB {} exceeds the optimum {ext}", report.lb));
    }
    Ok(())
}

pub fn extensive(inst: &MspInstance) -> f64 {
    extensive_form_value(inst, 100_000).unwrap().0
}

/// `(μ/2)‖x‖² + ½(x−b)ᵀQ(x−b) + M‖x−c‖` on `[−1, 1]^n` with random data;
/// `smooth` forces `M = 0`.
pub fn composite(rng: &mut ChaCha8Rng, smooth: bool) -> (CompositeObjective, Vector) {
    let n = rng.gen_range(1..=3);
    let mu = uniform(rng, 0.5, 5.0);
    let l_target = uniform(rng, 0.0, 5.0);
    let q = random_pd(rng, n, 0.0);
    let lmax = q.symmetric_eigenvalues().max().max(1e-12);
    let q = q * (l_target / lmax);
    let m = if smooth { 0.0 } else { uniform(rng, 0.1, 2.0) };
    let b = random_vector(rng, n, -2.0, 2.0);
    let c = random_vector(rng, n, -1.0, 1.0);
    let domain =
        BaseSet::boxed(Vector::from_element(n, -1.0), Vector::from_element(n, 1.0)).unwrap();
    let x0 = random_vector(rng, n, -1.0, 1.0);
    (CompositeObjective::new(mu, q, b, m, c, domain).unwrap(), x0)
}

/// A feasible random QP together with a strictly feasible point: equality
/// rows, inequality rows with slack at least `1e-3` at that point, and a mix
/// of finite and infinite bounds. `P` is positive definite unless every
/// variable is boxed.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let d = rng.gen_range(2..=8);
    let boxed_all = rng.gen_bool(0.3);
    let p = if boxed_all {
        let k = rng.gen_range(1..=d);
        let r = Matrix::from_fn(d, k, |_, _| uniform(rng, -1.0, 1.0));
        let p = &r * r.transpose();
        (&p + p.transpose()) * 0.5
    } else {
        let alpha = uniform(rng, 0.01, 1.0);
        random_pd(rng, d, alpha)
    };
    let q = random_vector(rng, d, -3.0, 3.0);
    let xf = random_vector(rng, d, -1.0, 1.0);
    let m_eq = rng.gen_range(0..=d / 2);
    let a_eq = Matrix::from_fn(m_eq, d, |_, _| uniform(rng, -1.0, 1.0));
    let b_eq = &a_eq * &xf;
    let m_in = rng.gen_range(0..=d);
    let a_in = Matrix::from_fn(m_in, d, |_, _| uniform(rng, -1.0, 1.0));
    let slack = random_vector(rng, m_in, 1e-3, 0.5);
    let b_in = &a_in * &xf + slack;
    let mut lower = Vector::from_element(d, f64::NEG_INFINITY);
    let mut upper = Vector::from_element(d, f64::INFINITY);
    for i in 0..d {
        if boxed_all || rng.gen_bool(0.5) {
            lower[i] = xf[i] - uniform(rng, 0.05, 1.0);
        }
        if boxed_all || rng.gen_bool(0.5) {
            upper[i] = xf[i] + uniform(rng, 0.05, 1.0);
        }
    }
    QpProblem::new(p, q, uniform(rng, -1.0, 1.0), a_eq, b_eq, lower, upper)
        .unwrap()
        .with_inequalities(a_in, b_in)
        .unwrap()
}
