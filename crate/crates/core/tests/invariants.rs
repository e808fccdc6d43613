use obstacle_core::estimators::{build_partition, fit_layer, QuadratureRule};
use obstacle_core::experiments::{format_float, rate_analysis};
use obstacle_core::scheme::Mesh;
use obstacle_core::{binomial_american_put, reduce_geometric};
use proptest::prelude::*;

fn cloud(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (40usize..400).prop_flat_map(move |n| prop::collection::vec(-5.0f64..5.0, n * dim))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_covers_every_point(points in cloud(2), cells in 1usize..6, min in 1usize..30) {
        let n = points.len() / 2;
        let part = build_partition(&points, 2, cells, min).unwrap();
        prop_assert_eq!(part.counts().iter().sum::<usize>(), n);
        prop_assert_eq!(part.counts().len(), part.cell_count());
        if n >= min {
            prop_assert!(part.counts().iter().all(|&c| c >= min), "{:?}", part.counts());
        }
        for x in points.chunks_exact(2) {
            prop_assert!(part.cell_of(x) < part.cell_count());
        }
    }

    #[test]
    fn regression_reproduces_affine_targets(
        points in cloud(3),
        coef in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let part = build_partition(&points, 3, 3, 16).unwrap();
        let f = |x: &[f64], c: usize| coef[4 * c] + (0..3).map(|k| coef[4 * c + 1 + k] * x[k]).sum::<f64>();
        let targets: Vec<f64> = points.chunks_exact(3).flat_map(|x| [f(x, 0), f(x, 1)]).collect();
        let est = fit_layer(&part, &points, &targets, 2).unwrap();
        let (mut clamped, mut out) = ([0.0; 3], [0.0; 2]);
        for x in points.chunks_exact(3) {
            est.evaluate_channels(x, &mut clamped, &mut out);
            for (c, o) in out.iter().enumerate() {
                prop_assert!((o - f(x, c)).abs() < 1e-8 * (1.0 + f(x, c).abs()), "{} vs {}", o, f(x, c));
            }
        }
    }

    #[test]
    fn rate_analysis_recovers_power_laws(
        p in 0.1f64..2.0,
        c in prop_oneof![-2.0f64..-0.1, 0.1f64..2.0],
        reference in -1.0f64..1.0,
    ) {
        let pts: Vec<(f64, f64)> = [4.0, 9.0, 20.0, 45.0]
            .iter()
            .map(|n: &f64| (1.0 / n, reference + c * (1.0 / n).powf(p)))
            .collect();
        let table = rate_analysis(&pts, reference, 1e-14).unwrap();
        for row in &table.rows {
            let exponent = row.error_ratio.unwrap().ln() / (row.h1 / row.h2).ln();
            prop_assert!((exponent - p).abs() < 1e-12 * p.max(1.0) * 100.0);
        }
    }

    #[test]
    fn binomial_is_monotone_in_strike_and_spot(k in 4.0f64..12.0, dk in 0.01f64..2.0, s in 1.5f64..2.5) {
        let red = reduce_geometric(&[0.03; 3], &[0.1; 3], &[s, 2.0, 2.0], 0.03);
        let up = reduce_geometric(&[0.03; 3], &[0.1; 3], &[s * 1.05, 2.0, 2.0], 0.03);
        let base = binomial_american_put(&red, k, 1.0, 200).unwrap();
        prop_assert!(binomial_american_put(&red, k + dk, 1.0, 200).unwrap() >= base - 1e-12);
        prop_assert!(binomial_american_put(&up, k, 1.0, 200).unwrap() <= base + 1e-12);
        prop_assert!(base >= (k - red.spot).max(0.0) - 1e-12);
    }

    #[test]
    fn mesh_interpolation_stays_within_node_range(
        values in prop::collection::vec(-10.0f64..10.0, 36),
        x in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let mesh = Mesh::new(6, vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let (v, outside) = mesh.interpolate(&values, &x);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        let inside = (-1.0..=1.0).contains(&x[0]) && (0.0..=2.0).contains(&x[1]);
        prop_assert_eq!(outside, !inside);
    }

    #[test]
    fn csv_floats_keep_nine_digits(x in prop::num::f64::NORMAL) {
        let y: f64 = format_float(x).parse().unwrap();
        prop_assert!(((y - x) / x).abs() <= 5e-9, "{} -> {}", x, format_float(x));
    }

    #[test]
    fn gauss_hermite_integrates_polynomials(q in 2usize..25, coefs in prop::collection::vec(-1.0f64..1.0, 1..8)) {
        // deg ≤ 2q − 1 is integrated exactly against N(0, 1).
        prop_assume!(coefs.len() <= 2 * q);
        let rule = QuadratureRule::gauss_hermite(q, 1).unwrap();
        let moment = |k: usize| if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|j| j as f64).product::<f64>() };
        let exact: f64 = coefs.iter().enumerate().map(|(k, c)| c * moment(k)).sum();
        let mut approx = 0.0;
        rule.for_each_node(|z, w| {
            approx += w * coefs.iter().enumerate().map(|(k, c)| c * z[0].powi(k as i32)).sum::<f64>();
        });
        prop_assert!((approx - exact).abs() < 1e-11, "{} vs {}", approx, exact);
    }
}
