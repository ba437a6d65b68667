use matchscore::estimator::{objective_grid, GridAxis};
use matchscore::market::ProductionSpec;
use matchscore::*;
use proptest::prelude::*;

fn observed(n: usize, seed: u64, beta2: f64, model: Model, use_ir: bool, lambda: f64) -> (ProductionSpec, Market, InequalitySet) {
    let spec = ProductionSpec::case2(0.5, beta2, 8.0).unwrap();
    let market = generate_market(n, seed).unwrap();
    let outcome = solve_assignment(&value_matrix(&spec, &market)).unwrap();
    let data = ObservedData::new(&market, &outcome, model.has_unmatched(), model.has_transfers());
    let set = build_inequalities(&data, &ScoreConfig::new(model, use_ir, lambda).unwrap()).unwrap();
    (spec, market, set)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matched_only_regimes_ignore_the_matching_cost(
        seed in any::<u64>(),
        n in 2usize..25,
        beta2 in -3.0f64..1.0,
        beta1 in -10.0f64..10.0,
        with_transfers in any::<bool>(),
    ) {
        let model = if with_transfers { Model::T } else { Model::None };
        let (spec, market, set) = observed(n, seed, beta2, model, false, 1.0);
        let obj = Objective::compile(&set, &spec, &market);
        let base = obj.score(Candidate::new(beta1, -10.0));
        for b2 in [-5.0, 0.0, 5.0, 10.0] {
            prop_assert_eq!(obj.score(Candidate::new(beta1, b2)), base);
        }
    }

    #[test]
    fn unmatched_without_ir_is_non_increasing_in_cost_coefficient(
        seed in any::<u64>(),
        n in 2usize..25,
        beta2 in -3.0f64..0.0,
        beta1 in -2.0f64..3.0,
    ) {
        let (spec, market, set) = observed(n, seed, beta2, Model::U, false, 1.0);
        let obj = Objective::compile(&set, &spec, &market);
        let scores: Vec<u64> = (0..=40)
            .map(|k| obj.score(Candidate::new(beta1, -10.0 + 0.5 * k as f64)).pairwise_satisfied)
            .collect();
        prop_assert!(scores.windows(2).all(|w| w[1] <= w[0]), "{:?}", scores);
    }

    #[test]
    fn weighted_total_is_pairwise_plus_weighted_ir(
        seed in any::<u64>(),
        n in 1usize..20,
        lambda in 1.0f64..500.0,
        b1 in -10.0f64..10.0,
        b2 in -10.0f64..10.0,
    ) {
        let (spec, market, set) = observed(n, seed, -2.0, Model::UT, true, lambda);
        let v = score(Candidate::new(b1, b2), &set, &spec, &market);
        prop_assert_eq!(v.weighted_total, v.pairwise_satisfied as f64 + lambda * v.ir_satisfied as f64);
        prop_assert!(v.pairwise_satisfied as usize <= set.pairwise().filter(|r| !r.vacuous).count());
        prop_assert!(v.ir_satisfied as usize <= set.ir().count());
    }

    #[test]
    fn score_ignores_row_order(seed in any::<u64>(), n in 2usize..15, shift in 0usize..1000) {
        let (spec, market, mut set) = observed(n, seed, -1.5, Model::U, true, 100.0);
        let before = score(Candidate::new(0.3, -1.0), &set, &spec, &market);
        let len = set.rows.len().max(1);
        set.rows.rotate_left(shift % len);
        set.rows.reverse();
        prop_assert_eq!(score(Candidate::new(0.3, -1.0), &set, &spec, &market), before);
    }

    #[test]
    fn equilibrium_transfers_are_supported(seed in any::<u64>(), n in 1usize..30, beta2 in -3.0f64..1.0) {
        let spec = ProductionSpec::case2(0.5, beta2, 8.0).unwrap();
        let market = generate_market(n, seed).unwrap();
        let values = value_matrix(&spec, &market);
        let o = solve_assignment(&values).unwrap();
        prop_assert!(verify_stability(&o, &values).passed);
        prop_assert_eq!(o.unmatched_buyers.len(), o.unmatched_sellers.len());
        for (&(b, s), &p) in &o.transfers {
            prop_assert!(p >= 0.0 && p <= values[(b, s)]);
        }
        prop_assert_eq!(extract_transfers(&o, &values).unwrap(), o.transfers.clone());
    }

    #[test]
    fn market_json_round_trips(seed in any::<u64>(), n in 1usize..8) {
        let market = generate_market(n, seed).unwrap();
        let text = serde_json::to_string(&market).unwrap();
        prop_assert_eq!(serde_json::from_str::<Market>(&text).unwrap(), market);
    }

    #[test]
    fn de_trace_never_decreases(seed in any::<u64>()) {
        let cfg = DeConfig { population: 12, max_generations: 25, seed, ..DeConfig::default() };
        let run = maximize(|x| -(x[0] - 1.0).abs() - (x[1] + 2.0).abs(), &cfg).unwrap();
        prop_assert!(run.trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*run.trace.last().unwrap(), run.best_value);
        prop_assert!(run.best.iter().all(|x| (-10.0..=10.0).contains(x)));
    }
}

#[test]
fn matched_only_grid_columns_are_constant() {
    for seed in 0..5 {
        let (spec, market, set) = observed(15, seed, -2.0, Model::None, false, 1.0);
        let obj = Objective::compile(&set, &spec, &market);
        let grid = objective_grid(&obj, GridAxis::new(-1.0, 2.0, 13).unwrap(), GridAxis::new(-10.0, 10.0, 21).unwrap())
            .unwrap();
        assert!(grid.constant_in_beta2());
    }
}

#[test]
fn unmatched_grid_columns_are_non_increasing() {
    for seed in 0..5 {
        let (spec, market, set) = observed(20, seed, -2.0, Model::U, false, 1.0);
        let obj = Objective::compile(&set, &spec, &market);
        let grid = objective_grid(&obj, GridAxis::new(-1.0, 2.0, 13).unwrap(), GridAxis::new(-10.0, 10.0, 41).unwrap())
            .unwrap();
        for i in 0..grid.beta1.len() {
            for j in 1..grid.beta2.len() {
                assert!(grid.at(i, j).weighted_total <= grid.at(i, j - 1).weighted_total);
            }
        }
    }
}

#[test]
fn large_weight_keeps_the_argmax_inside_the_box() {
    // lambda above the pairwise row count makes every IR row bind.
    for seed in 0..5 {
        let (spec, market, set) = observed(30, seed, -2.0, Model::U, true, 100.0);
        let pairwise = set.pairwise().filter(|r| !r.vacuous).count() as f64;
        let obj = Objective::compile(&set, &spec, &market).with_lambda(pairwise + 1.0);
        let grid = objective_grid(&obj, GridAxis::new(-1.0, 2.0, 31).unwrap(), GridAxis::new(-10.0, 10.0, 201).unwrap())
            .unwrap();
        assert!(grid.argmax.iter().all(|&(_, j)| j > 0 && j < grid.beta2.len() - 1), "seed {seed}");
    }
}
