//! Minimum-entropy reweighting of Brownian paths onto a Bachelier surface,
//! with and without martingale window constraints.

use volwmc::bachelier::{bachelier_price, Flavor};
use volwmc::market::SurfaceGrid;
use volwmc::wmc::{
    generate_brownian_paths, martingale_constraint_columns, martingale_loss, martingale_windows, relative_entropy,
    solve_lagrange_dual, vanilla_payoffs, DualOptions, WeightVector,
};

fn main() -> volwmc::Result<()> {
    let sigma = 0.0066;
    let paths = generate_brownian_paths(4000, 5.0, 500, sigma, 11)?;
    let grid = SurfaceGrid::default();
    let calls = vanilla_payoffs(&paths, &grid, &[Flavor::Call])?;
    let targets: Vec<f64> = grid
        .nodes()
        .map(|(k, t)| bachelier_price(0.0, k, 1.1 * sigma, t, Flavor::Call, 1.0))
        .collect::<volwmc::Result<_>>()?;

    let sol = solve_lagrange_dual(&calls, &targets, &DualOptions::default())?;
    let uniform = WeightVector::uniform(paths.nu());
    println!(
        "vanillas only: {} iterations, max residual {:.2e}, D(p|q) {:.4}",
        sol.iterations,
        sol.max_residual,
        relative_entropy(&sol.weights, &uniform)?
    );

    let windows = martingale_windows(&grid.expiries, 20, (-0.01, 0.01), 0.001)?;
    println!("martingale loss: uniform {:.4}, calibrated {:.4}", martingale_loss(&paths, &uniform, &windows)?.relative_loss, martingale_loss(&paths, &sol.weights, &windows)?.relative_loss);

    let g = calls.append(&martingale_constraint_columns(&paths, &windows)?)?;
    let mut c = targets.clone();
    c.extend(std::iter::repeat_n(0.0, windows.len()));
    let both = solve_lagrange_dual(&g, &c, &DualOptions::default())?;
    println!(
        "with {} window columns: max residual {:.2e}, martingale loss {:.2e}",
        windows.len(),
        both.max_residual,
        martingale_loss(&paths, &both.weights, &windows)?.relative_loss
    );
    Ok(())
}
