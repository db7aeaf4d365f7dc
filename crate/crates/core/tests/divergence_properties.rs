use ndarray::Array2;
use proptest::prelude::*;

use sdquant::divergences::{sample_directions, sliced_along};
use sdquant::{
    build_disk_mixture, entropic_semidiscrete, max_sliced_semidiscrete, numeric,
    sliced_w2_discrete, w2_1d_discrete, CostSpec, EntropicConfig, GaussianComponent,
    MaxSlicedOptions, PointConfiguration, SlicedConfig, WeightedCloud,
};

fn rotation(angle: f64) -> [f64; 4] {
    let (s, c) = angle.sin_cos();
    [c, -s, s, c]
}

fn cloud(points: &[f64], dim: usize, weights: Vec<f64>) -> WeightedCloud {
    WeightedCloud::new(
        Array2::from_shape_vec((points.len() / dim, dim), points.to_vec()).unwrap(),
        weights,
    )
    .unwrap()
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let rest = 1.0 - numeric::sum(w[..w.len() - 1].iter().copied());
    *w.last_mut().unwrap() = rest;
    w
}

proptest! {
    #[test]
    fn w2_1d_is_a_symmetric_nonnegative_shift_square(
        xa in prop::collection::vec(-5.0f64..5.0, 1..8),
        ra in prop::collection::vec(0.1f64..1.0, 8),
        xb in prop::collection::vec(-5.0f64..5.0, 1..8),
        rb in prop::collection::vec(0.1f64..1.0, 8),
        shift in -3.0f64..3.0,
    ) {
        let wa = simplex(&ra[..xa.len()]);
        let wb = simplex(&rb[..xb.len()]);
        let v = w2_1d_discrete(&xa, &wa, &xb, &wb).unwrap();
        prop_assert!(v >= 0.0);
        let sym = w2_1d_discrete(&xb, &wb, &xa, &wa).unwrap();
        prop_assert!((v - sym).abs() <= 1e-12 * (1.0 + v));
        prop_assert!(w2_1d_discrete(&xa, &wa, &xa, &wa).unwrap() == 0.0);
        // translating one measure by s adds s² + 2s(mean_b − mean_a)
        let moved: Vec<f64> = xb.iter().map(|x| x + shift).collect();
        let mean = |x: &[f64], w: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let expect = v + shift * shift + 2.0 * shift * (mean(&xb, &wb) - mean(&xa, &wa));
        let got = w2_1d_discrete(&xa, &wa, &moved, &wb).unwrap();
        prop_assert!((got - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
    }

    #[test]
    fn sliced_is_symmetric_and_bounded_by_the_plan_cost(
        pa in prop::collection::vec(-2.0f64..2.0, 6),
        pb in prop::collection::vec(-2.0f64..2.0, 6),
        seed in 0u64..1000,
    ) {
        let a = cloud(&pa, 2, vec![1.0 / 3.0; 3]);
        let b = cloud(&pb, 2, vec![1.0 / 3.0; 3]);
        let cfg = SlicedConfig { num_directions: 50, seed };
        let ab = sliced_w2_discrete(&a, &b, &cfg).unwrap();
        let ba = sliced_w2_discrete(&b, &a, &cfg).unwrap();
        prop_assert!((ab.value - ba.value).abs() <= 1e-12);
        // projecting the identity matching costs at most its full squared length
        let matched: f64 = (0..3).map(|i| {
            let (dx, dy) = (pa[2 * i] - pb[2 * i], pa[2 * i + 1] - pb[2 * i + 1]);
            (dx * dx + dy * dy) / 3.0
        }).sum();
        prop_assert!(ab.value <= matched + 1e-12);
    }
}

#[test]
fn sliced_is_rotation_invariant_in_distribution() {
    let a = cloud(
        &[0.0, 0.0, 1.0, 0.2, -0.5, 0.9, 0.3, -0.7],
        2,
        vec![0.1, 0.2, 0.3, 0.4],
    );
    let b = cloud(&[0.4, 0.1, -0.2, -0.3, 0.8, 0.8], 2, vec![0.5, 0.25, 0.25]);
    let base = sliced_w2_discrete(
        &a,
        &b,
        &SlicedConfig {
            num_directions: 4000,
            seed: 1,
        },
    )
    .unwrap();
    for (k, angle) in [0.3f64, 1.1, 2.5, 4.0].into_iter().enumerate() {
        let r = rotation(angle);
        let est = sliced_w2_discrete(
            &a.transformed(&r),
            &b.transformed(&r),
            &SlicedConfig {
                num_directions: 4000,
                seed: 10 + k as u64,
            },
        )
        .unwrap();
        let se = (base.std_error.powi(2) + est.std_error.powi(2)).sqrt();
        assert!(
            (est.value - base.value).abs() <= 3.0 * se,
            "{} vs {} (se {se})",
            est.value,
            base.value
        );
    }
}

#[test]
fn max_sliced_is_rotation_invariant_on_an_isotropic_instance() {
    let g = [GaussianComponent::isotropic(vec![0.0, 0.0], 0.15, 1.0)];
    let d = build_disk_mixture(&[0.0, 0.0], 1.0, &g, &[96, 96]).unwrap();
    let square = |phase: f64| {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                let t = phase + k as f64 * std::f64::consts::FRAC_PI_2;
                vec![0.45 * t.cos(), 0.45 * t.sin()]
            })
            .collect();
        PointConfiguration::from_rows(&rows).unwrap()
    };
    let base = max_sliced_semidiscrete(&d, &square(0.0), &MaxSlicedOptions::default())
        .unwrap()
        .value;
    let phases = sample_directions(1, 8, 3);
    for (k, p) in phases.iter().enumerate() {
        let phase = p[0] * 0.7 + k as f64 * 0.37;
        let v = max_sliced_semidiscrete(
            &d,
            &square(phase),
            &MaxSlicedOptions {
                seed: k as u64,
                ..Default::default()
            },
        )
        .unwrap()
        .value;
        assert!(
            (v - base).abs() <= 0.02 * base,
            "phase {phase}: {v} vs {base}"
        );
    }
}

#[test]
fn max_sliced_vanishes_only_when_the_projections_agree() {
    // one point at the barycenter of a symmetric density still differs in spread
    let g = [GaussianComponent::isotropic(vec![0.0, 0.0], 0.1, 1.0)];
    let d = build_disk_mixture(&[0.0, 0.0], 1.0, &g, &[40, 40]).unwrap();
    let y = PointConfiguration::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let r = max_sliced_semidiscrete(&d, &y, &MaxSlicedOptions::default()).unwrap();
    assert!(r.value > 0.0);
    assert!((numeric::norm(&r.direction) - 1.0).abs() < 1e-12);
    // the maximum dominates the mean over shared directions
    let dirs = sample_directions(2, 64, 4);
    let grid = WeightedCloud::new(
        Array2::from_shape_vec(
            (d.support().len(), 2),
            d.support()
                .iter()
                .flat_map(|&k| d.center(k).to_vec())
                .collect(),
        )
        .unwrap(),
        d.support().iter().map(|&k| d.cell_mass(k)).collect(),
    )
    .unwrap();
    let mean = sliced_along(&grid, &WeightedCloud::from_configuration(&y), &dirs).unwrap();
    assert!(r.value >= mean.value);
}

#[test]
fn entropic_values_stay_above_minus_epsilon_and_balance() {
    let g = [
        GaussianComponent::isotropic(vec![-0.3, 0.1], 0.05, 0.5),
        GaussianComponent::isotropic(vec![0.3, -0.2], 0.08, 0.5),
    ];
    let d = build_disk_mixture(&[0.0, 0.0], 1.0, &g, &[48, 48]).unwrap();
    let y = PointConfiguration::from_rows(&[
        vec![-0.3, 0.1],
        vec![0.3, -0.2],
        vec![0.0, 0.5],
        vec![0.0, 0.5],
    ])
    .unwrap();
    for eps in [1.0, 0.1, 0.01, 0.002] {
        let cfg = EntropicConfig {
            epsilon: eps,
            ..Default::default()
        };
        let r = entropic_semidiscrete(&d, &y, &CostSpec::SquaredEuclidean, &cfg).unwrap();
        assert!(r.value >= -eps);
        assert!(r.grad_norm <= cfg.grad_tol);
        assert!((numeric::sum(r.soft_masses.iter().copied()) - 1.0).abs() <= 1e-10);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0] - 1e-14));
        assert_eq!(r.weights.w[0], 0.0);
        assert_eq!(r.weights.w[3], 0.0);
    }
}

#[test]
fn entropic_accepts_a_p_power_cost() {
    let g = [GaussianComponent::isotropic(vec![0.0, 0.0], 0.1, 1.0)];
    let d = build_disk_mixture(&[0.0, 0.0], 1.0, &g, &[32, 32]).unwrap();
    let y = PointConfiguration::from_rows(&[vec![-0.2, 0.0], vec![0.3, 0.1]]).unwrap();
    let cost = CostSpec::p_power(1.5).unwrap();
    let r = entropic_semidiscrete(
        &d,
        &y,
        &cost,
        &EntropicConfig {
            epsilon: 0.05,
            ..Default::default()
        },
    )
    .unwrap();
    for m in &r.soft_masses {
        assert!((m - 0.5).abs() < 1e-10);
    }
}
