//! Randomized invariants of the cut models, the cutting-plane methods, the
//! engine and the oracle.

mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqdp_core::io::{instance_from_str, instance_to_string};
use sqdp_core::model::{CutModel, QuadraticCut, StageConstraints};
use sqdp_core::oracle::{grid_min, solve_extensive, subtree_value, tree_size, ScenarioTree};
use sqdp_core::qcsc::{run_algorithm, Algorithm, SubgradientOracle};
use sqdp_core::qp::{kkt_residuals, solve_qp, DEFAULT_TOL};
use sqdp_core::sqdp::{run, CutMode, SolverConfig};

fn random_cut(rng: &mut ChaCha8Rng, n: usize) -> QuadraticCut {
    QuadraticCut::new(
        uniform(rng, -5.0, 5.0),
        random_vector(rng, n, -3.0, 3.0),
        random_vector(rng, n, -1.0, 1.0),
        uniform(rng, 0.0, 4.0),
    )
    .unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifted_form_matches_the_cut(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let cut = random_cut(&mut rng, n);
        let shifted = cut.to_shifted_affine();
        for _ in 0..10 {
            let x = random_vector(&mut rng, n, -2.0, 2.0);
            let (a, b) = (cut.eval(&x).unwrap(), shifted.eval(&x).unwrap());
            prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn adding_a_cut_never_lowers_the_model(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=4);
        let mut model = CutModel::new(n, uniform(&mut rng, -10.0, 0.0));
        let points: Vec<_> = (0..20).map(|_| random_vector(&mut rng, n, -2.0, 2.0)).collect();
        let mut previous: Option<Vec<f64>> = None;
        for _ in 0..6 {
            let cut = random_cut(&mut rng, n);
            model = model.add_cut(cut.clone()).unwrap();
            let values: Vec<f64> = points.iter().map(|x| model.eval(x).unwrap()).collect();
            for (x, v) in points.iter().zip(&values) {
                prop_assert!(*v >= cut.eval(x).unwrap());
            }
            if let Some(prev) = &previous {
                for (v, p) in values.iter().zip(prev) {
                    prop_assert!(v >= p);
                }
            }
            previous = Some(values);
        }
    }

    #[test]
    fn stage_costs_are_strongly_convex(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=4);
        let cost = nonnegative_cost(&mut rng, n);
        let alpha = cost.alpha();
        for _ in 0..10 {
            let (p1, x1) = (random_vector(&mut rng, n, -2.0, 2.0), random_vector(&mut rng, n, -2.0, 2.0));
            let (p2, x2) = (random_vector(&mut rng, n, -2.0, 2.0), random_vector(&mut rng, n, -2.0, 2.0));
            let pm = (&p1 + &p2) * 0.5;
            let xm = (&x1 + &x2) * 0.5;
            let dist2 = (&p1 - &p2).norm_squared() + (&x1 - &x2).norm_squared();
            let mid = cost.eval(&pm, &xm).unwrap();
            let avg = 0.5 * (cost.eval(&p1, &x1).unwrap() + cost.eval(&p2, &x2).unwrap());
            prop_assert!(mid <= avg - alpha / 8.0 * dist2 + 1e-9 * (1.0 + avg.abs()));
            prop_assert!(mid >= 0.0);
        }
    }

    #[test]
    fn qp_solutions_are_certified(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = random_qp(&mut rng);
        let sol = solve_qp(&qp, DEFAULT_TOL).unwrap();
        prop_assert!(sol.kkt_residual <= DEFAULT_TOL);
        prop_assert!(kkt_residuals(&qp, &sol).max() <= DEFAULT_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn models_stay_below_the_objective(seed in any::<u64>(), smooth in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (obj, x0) = composite(&mut rng, smooth);
        let n = obj.dim();
        for alg in [Algorithm::Kelley, Algorithm::Qcsc, Algorithm::QcscReform] {
            let run = run_algorithm(alg, &obj, &x0, 1e-4, 300).unwrap();
            for w in run.incumbent_values.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            for &g in &run.gaps {
                prop_assert!(g >= -1e-9);
            }
            for _ in 0..10 {
                let x = obj.domain().sample(n, &mut rng);
                let fx = obj.value_and_subgradient(&x).unwrap().0;
                for k in 1..=run.iterations() {
                    prop_assert!(run.model_value(k, &x) <= fx + 1e-9 * (1.0 + fx.abs()));
                }
            }
        }
    }

    #[test]
    fn certified_gap_covers_the_grid_optimum(seed in any::<u64>(), smooth in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (obj, x0) = composite(&mut rng, smooth);
        prop_assume!(obj.dim() <= 2);
        let resolution = if obj.dim() == 1 { 1e-4 } else { 1e-2 };
        let (_, grid) = grid_min(|x| obj.value_and_subgradient(x).unwrap().0, obj.domain(), resolution).unwrap();
        let run = run_algorithm(Algorithm::Qcsc, &obj, &x0, 1e-4, 300).unwrap();
        prop_assert!(run.best_value - grid <= run.final_gap() + 1e-9);
    }

    #[test]
    fn scenario_tree_mass_is_one(seed in any::<u64>(), start in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = rng.gen_range(0..3);
        let inst = desk_msp(&mut rng, i);
        let start = start.min(inst.num_stages());
        let tree = ScenarioTree::build(&inst, start, 100_000).unwrap();
        prop_assert_eq!(tree.len(), tree_size(&inst, start));
        prop_assert!((tree.leaf_mass() - 1.0).abs() <= 1e-12);
        for t in start..=inst.num_stages() {
            let mass: f64 = tree.nodes_at_stage(t).map(|(_, node)| node.path_prob).sum();
            prop_assert!((mass - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn instance_json_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = rng.gen_range(0..3);
        let inst = desk_msp(&mut rng, i);
        let text = instance_to_string(&inst).unwrap();
        let back = instance_from_str(&text).unwrap();
        prop_assert_eq!(instance_to_string(&back).unwrap(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn extensive_value_satisfies_the_dynamic_programming_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = rng.gen_range(0..3);
        let inst = desk_msp(&mut rng, i);
        let ext = solve_extensive(&inst, 1, inst.x0(), 100_000).unwrap();
        let x1 = ext.root_decision();
        let stage1 = inst.cost(1, 0).eval(inst.x0(), x1).unwrap();
        let rest = subtree_value(&inst, 2, x1, 100_000).unwrap();
        prop_assert!(close(ext.value, stage1 + rest, 1e-7), "{} vs {}", ext.value, stage1 + rest);
        let StageConstraints::S1(cons) = inst.constraints(1, 0) else { unreachable!() };
        prop_assert!(cons.is_feasible(x1, inst.x0(), 1e-7));
    }

    #[test]
    fn runs_are_deterministic_and_bounded(seed in any::<u64>(), quadratic in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = rng.gen_range(0..3);
        let inst = desk_msp(&mut rng, i);
        let config = SolverConfig {
            max_iter: 15,
            ub_window: 5,
            seed,
            cut_mode: if quadratic { CutMode::Quadratic } else { CutMode::Affine },
            ..SolverConfig::default()
        };
        let a = run(&inst, &config).unwrap();
        let b = run(&inst, &config).unwrap();
        prop_assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            prop_assert_eq!(ra.lb.to_bits(), rb.lb.to_bits());
            prop_assert_eq!(ra.ub.map(f64::to_bits), rb.ub.map(f64::to_bits));
            prop_assert_eq!(ra.fwd_cost.to_bits(), rb.fwd_cost.to_bits());
            prop_assert_eq!(ra.cuts_total, rb.cuts_total);
        }
        if let Err(e) = lb_soundness(&a, extensive(&inst)) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn subtree_past_the_horizon_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = simplex_msp(&mut rng, 2, 3, 2);
    assert_eq!(subtree_value(&inst, 3, inst.x0(), 1000).unwrap(), 0.0);
    assert!(subtree_value(&inst, 0, inst.x0(), 1000).is_err());
    assert!(subtree_value(&inst, 4, inst.x0(), 1000).is_err());
}
