use proptest::prelude::*;

use sdquant::{
    dual_objective_with, solve_dual, tie_weights, CostSpec, GridDensity, PointConfiguration,
    Quadrature, SolverOptions,
};

fn grid(values: &[f64], nx: usize) -> GridDensity {
    let ny = values.len() / nx;
    GridDensity::new(
        vec![0.0, 0.0],
        vec![1.0 / nx as f64, 1.0 / ny as f64],
        vec![nx, ny],
        values[..nx * ny].to_vec(),
    )
    .unwrap()
    .normalize()
    .unwrap()
}

fn points(flat: &[f64]) -> PointConfiguration {
    let rows: Vec<Vec<f64>> = flat.chunks(2).map(<[f64]>::to_vec).collect();
    PointConfiguration::from_rows(&rows).unwrap()
}

fn target(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cell_center_solution_is_optimal_and_matches_its_plan(
        values in prop::collection::vec(0.05f64..1.0, 30),
        flat in prop::collection::vec(-0.2f64..1.2, 6),
        raw in prop::collection::vec(0.2f64..1.0, 3),
        probe in prop::collection::vec(-0.3f64..0.3, 3),
    ) {
        let d = grid(&values, 6);
        let y = points(&flat);
        prop_assume!(!y.on_diagonal());
        let lambda = target(&raw);
        let c = CostSpec::SquaredEuclidean;
        let opts = SolverOptions::default().with_quadrature(Quadrature::CellCenter).with_mass_tol(1e-12);
        let r = solve_dual(&d, &y, &c, &lambda, &opts, None).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.max_residual() <= 1e-12);
        let plan = r.plan.as_ref().unwrap();
        prop_assert!((plan.cost(&d, &y, &c) - r.value).abs() <= 1e-10);
        // every other potential scores lower
        let w: Vec<f64> = r.weights.w.iter().zip(&probe).map(|(a, b)| a + b).collect();
        let other = dual_objective_with(&d, &y, &w, &c, &lambda, Quadrature::CellCenter).unwrap();
        prop_assert!(other <= r.value + 1e-12);
    }

    #[test]
    fn exact_solution_balances_and_maximizes(
        values in prop::collection::vec(0.05f64..1.0, 36),
        flat in prop::collection::vec(0.0f64..1.0, 8),
        raw in prop::collection::vec(0.2f64..1.0, 4),
        probe in prop::collection::vec(-0.05f64..0.05, 4),
    ) {
        let d = grid(&values, 6);
        let y = points(&flat);
        prop_assume!(!y.on_diagonal());
        let lambda = target(&raw);
        let c = CostSpec::SquaredEuclidean;
        let opts = SolverOptions::default().with_mass_tol(1e-10);
        let r = solve_dual(&d, &y, &c, &lambda, &opts, None).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.max_residual() <= 1e-10);
        let w: Vec<f64> = r.weights.w.iter().zip(&probe).map(|(a, b)| a + b).collect();
        let other = dual_objective_with(&d, &y, &w, &c, &lambda, Quadrature::Exact).unwrap();
        prop_assert!(other <= r.value + 1e-10);
        let mean: f64 = r.weights.w.iter().sum::<f64>() / 4.0;
        prop_assert!(mean.abs() <= 1e-12);
    }

    #[test]
    fn duplicates_merge_into_their_first_index(
        values in prop::collection::vec(0.05f64..1.0, 25),
        flat in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let d = grid(&values, 5);
        let mut with_dup = flat.clone();
        with_dup.extend_from_slice(&flat[..2]);
        let y = points(&with_dup);
        let y_short = points(&flat);
        prop_assume!(!y_short.on_diagonal());
        let c = CostSpec::SquaredEuclidean;
        for quadrature in [Quadrature::Exact, Quadrature::CellCenter] {
            let opts = SolverOptions::default().with_quadrature(quadrature).with_mass_tol(1e-11);
            let lambda = tie_weights(&y);
            prop_assert_eq!(lambda.as_slice(), &[2.0 / 3.0, 1.0 / 3.0, 0.0][..]);
            let r = solve_dual(&d, &y, &c, lambda.as_slice(), &opts, None).unwrap();
            let short = solve_dual(&d, &y_short, &c, &lambda.as_slice()[..2], &opts, None).unwrap();
            prop_assert!((r.value - short.value).abs() <= 1e-9);
            prop_assert_eq!(r.weights.w[2], 0.0);
            prop_assert_eq!(r.masses[2], 0.0);
        }
    }
}

#[test]
fn warm_start_reaches_the_same_optimum() {
    let values: Vec<f64> = (0..64).map(|k| 1.0 + (k % 7) as f64).collect();
    let d = grid(&values, 8);
    let y = points(&[0.1, 0.2, 0.8, 0.3, 0.5, 0.9, 0.4, 0.4]);
    let c = CostSpec::SquaredEuclidean;
    let lambda = [0.25; 4];
    let opts = SolverOptions::default().with_mass_tol(1e-11);
    let cold = solve_dual(&d, &y, &c, &lambda, &opts, None).unwrap();
    let warm = solve_dual(&d, &y, &c, &lambda, &opts, Some(&[0.3, -0.1, 0.0, 0.05])).unwrap();
    assert!((cold.value - warm.value).abs() < 1e-10);
    for (a, b) in cold.weights.w.iter().zip(&warm.weights.w) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn non_quadratic_costs_use_cell_centers() {
    let values = vec![1.0; 36];
    let d = grid(&values, 6);
    let y = points(&[0.2, 0.2, 0.8, 0.7]);
    let c = CostSpec::p_power(1.0).unwrap();
    assert!(solve_dual(&d, &y, &c, &[0.5, 0.5], &SolverOptions::default(), None).is_err());
    let opts = SolverOptions::default()
        .with_quadrature(Quadrature::CellCenter)
        .with_mass_tol(1e-12);
    let r = solve_dual(&d, &y, &c, &[0.5, 0.5], &opts, None).unwrap();
    assert!(r.converged);
    assert!((r.plan.unwrap().cost(&d, &y, &c) - r.value).abs() < 1e-12);
}
