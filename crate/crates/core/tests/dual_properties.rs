use proptest::prelude::*;

use volwmc::bachelier::{bachelier_price, bachelier_vega, parity_residual, put_from_call, Flavor};
use volwmc::exotics::{barrier_sweep, default_barriers};
use volwmc::market::SurfaceGrid;
use volwmc::weight_decoder::{surface_from_weights, ParityMode, WdPayoffs};
use volwmc::wmc::{
    generate_brownian_paths, relative_entropy, solve_lagrange_dual, vanilla_payoffs, weighted_price, weights_from_lagrange, ColumnMeta,
    DualOptions, PayoffMatrix, WeightVector,
};

fn random_matrix(rows: usize, cols: usize, values: &[f64]) -> PayoffMatrix {
    let meta = (0..cols)
        .map(|j| ColumnMeta::Vanilla {
            flavor: Flavor::Call,
            strike_offset: j as f64,
            expiry: 1.0,
        })
        .collect();
    PayoffMatrix::new(rows, values[..rows * cols].to_vec(), meta).unwrap()
}

fn normalise(raw: &[f64]) -> WeightVector {
    let s: f64 = raw.iter().sum();
    WeightVector::new(raw.iter().map(|v| v / s).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_solution_is_gibbs_and_entropy_minimal(
        values in prop::collection::vec(-1.0f64..1.0, 40 * 3),
        raw in prop::collection::vec(0.2f64..1.0, 40),
    ) {
        let g = random_matrix(40, 3, &values);
        let feasible = normalise(&raw);
        let targets = weighted_price(&g, &feasible).unwrap();
        let sol = solve_lagrange_dual(&g, &targets, &DualOptions::default()).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.max_residual <= 1e-8);
        let gibbs = weights_from_lagrange(&g, &sol.lambda).unwrap();
        for (a, b) in sol.weights.as_slice().iter().zip(gibbs.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let q = WeightVector::uniform(40);
        let d_sol = relative_entropy(&sol.weights, &q).unwrap();
        let d_feasible = relative_entropy(&feasible, &q).unwrap();
        prop_assert!(d_sol <= d_feasible + 1e-9, "{d_sol} > {d_feasible}");
    }

    #[test]
    fn entropy_grows_along_feasible_directions(
        values in prop::collection::vec(-1.0f64..1.0, 30 * 2),
        raw in prop::collection::vec(0.2f64..1.0, 30),
        dir in prop::collection::vec(-1.0f64..1.0, 30),
    ) {
        let g = random_matrix(30, 2, &values);
        let targets = weighted_price(&g, &normalise(&raw)).unwrap();
        let sol = solve_lagrange_dual(&g, &targets, &DualOptions { tolerance: 1e-12, ..DualOptions::default() }).unwrap();
        // project the direction onto the null space of [G, 1]ᵀ by Gram–Schmidt
        let mut basis: Vec<Vec<f64>> = vec![vec![1.0; 30]];
        basis.extend((0..2).map(|j| g.column(j)));
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        for b in basis {
            let mut v = b.clone();
            for o in &ortho {
                let c: f64 = v.iter().zip(o).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(o).for_each(|(x, y)| *x -= c * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            ortho.push(v.into_iter().map(|x| x / n).collect());
        }
        let mut d = dir.clone();
        for o in &ortho {
            let c: f64 = d.iter().zip(o).map(|(x, y)| x * y).sum();
            d.iter_mut().zip(o).for_each(|(x, y)| *x -= c * y);
        }
        let q = WeightVector::uniform(30);
        let base = relative_entropy(&sol.weights, &q).unwrap();
        let p = sol.weights.as_slice();
        let step = 0.5 * p.iter().copied().fold(f64::INFINITY, f64::min) / d.iter().map(|x| x.abs()).fold(1e-300, f64::max);
        for s in [step, -step] {
            let moved = WeightVector::new(p.iter().zip(&d).map(|(a, b)| a + s * b).collect()).unwrap();
            prop_assert!(relative_entropy(&moved, &q).unwrap() >= base - 1e-12);
        }
    }

    #[test]
    fn weighted_price_is_linear(
        values in prop::collection::vec(-1.0f64..1.0, 20 * 2),
        a in prop::collection::vec(0.1f64..1.0, 20),
        b in prop::collection::vec(0.1f64..1.0, 20),
        t in 0.0f64..1.0,
    ) {
        let g = random_matrix(20, 2, &values);
        let (pa, pb) = (normalise(&a), normalise(&b));
        let mix = WeightVector::new(pa.as_slice().iter().zip(pb.as_slice()).map(|(x, y)| t * x + (1.0 - t) * y).collect()).unwrap();
        let (ga, gb, gm) = (weighted_price(&g, &pa).unwrap(), weighted_price(&g, &pb).unwrap(), weighted_price(&g, &mix).unwrap());
        for j in 0..2 {
            prop_assert!((gm[j] - t * ga[j] - (1.0 - t) * gb[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn parity_put_has_zero_residual(k in -0.01f64..0.01, sigma in 1e-3f64..0.02, t in 0.5f64..5.0) {
        let call = bachelier_price(0.0, k, sigma, t, Flavor::Call, 1.0).unwrap();
        prop_assert_eq!(parity_residual(k, call, put_from_call(k, call)), 0.0);
        let put = bachelier_price(0.0, k, sigma, t, Flavor::Put, 1.0).unwrap();
        prop_assert!((put - put_from_call(k, call)).abs() < 1e-17);
    }

    #[test]
    fn barrier_curve_is_monotone(seed in 0u64..1000, raw in prop::collection::vec(0.01f64..1.0, 64)) {
        let paths = generate_brownian_paths(64, 5.0, 20, 0.008, seed).unwrap();
        let curve = barrier_sweep(&paths, &normalise(&raw), 0.0, &default_barriers(), 5.0).unwrap();
        prop_assert!(curve.windows(2).all(|c| c[0].price <= c[1].price));
    }
}

#[test]
fn dual_weights_recover_target_vols() {
    let sigma = 0.0066;
    let grid = SurfaceGrid::default();
    let paths = generate_brownian_paths(4000, 5.0, 20, 0.006, 31).unwrap();
    let g = vanilla_payoffs(&paths, &grid, &[Flavor::Call]).unwrap();
    let targets: Vec<f64> = grid.nodes().map(|(k, t)| bachelier_price(0.0, k, sigma, t, Flavor::Call, 1.0).unwrap()).collect();
    let tol = 1e-9;
    let sol = solve_lagrange_dual(&g, &targets, &DualOptions { tolerance: tol, ..DualOptions::default() }).unwrap();
    assert!(sol.converged);
    let payoffs = WdPayoffs::new(&paths, &grid).unwrap();
    let (_, _, vols, failed, _) = surface_from_weights(&payoffs, &grid, &sol.weights, ParityMode::ParityConstrained).unwrap();
    assert!(failed.is_empty());
    for ((k, t), v) in grid.nodes().zip(vols) {
        let bound = tol / bachelier_vega(0.0, k, sigma, t, 1.0) * 1.01;
        assert!((v - sigma).abs() <= bound, "node ({k}, {t}): {v} vs {sigma}, bound {bound:e}");
    }
}
