//! Up-and-out ATM call across barrier levels on calibrated Brownian paths
//! and on SABR paths fitted to the same 5y smile.

use volwmc::bachelier::Flavor;
use volwmc::exotics::{barrier_standard_error, barrier_sweep, default_barriers};
use volwmc::market::SurfaceGrid;
use volwmc::sabr::{sabr_normal_vol, simulate_sabr_paths, SabrParams};
use volwmc::wmc::{generate_brownian_paths, solve_lagrange_dual, vanilla_payoffs, DualOptions, WeightVector};
use volwmc::bachelier::bachelier_price;

fn main() -> volwmc::Result<()> {
    let sabr = SabrParams::new(0.0065, -0.2, 0.35)?;
    let grid = SurfaceGrid::default();
    let paths = generate_brownian_paths(4000, 5.0, 500, 0.0065, 11)?;
    let g = vanilla_payoffs(&paths, &grid, &[Flavor::Call])?;
    // term structure declining with expiry, unlike the flat SABR α
    let c: Vec<f64> = grid
        .nodes()
        .map(|(k, t)| {
            let v = sabr_normal_vol(&sabr, 0.0, k, 5.0)? * (t / 5.0).powf(-0.1);
            bachelier_price(0.0, k, v, t, Flavor::Call, 1.0)
        })
        .collect::<volwmc::Result<_>>()?;
    let p = solve_lagrange_dual(&g, &c, &DualOptions::default())?.weights;
    let sabr_paths = simulate_sabr_paths(&sabr, 4000, 5.0, 500, 17)?;
    let u = WeightVector::uniform(sabr_paths.nu());

    let levels = default_barriers();
    let a = barrier_sweep(&paths, &p, 0.0, &levels, 5.0)?;
    let b = barrier_sweep(&sabr_paths, &u, 0.0, &levels, 5.0)?;
    println!("{:>7} {:>12} {:>12} {:>8}", "B", "weighted", "sabr", "z-score");
    for (x, y) in a.iter().zip(&b) {
        let se = barrier_standard_error(&paths, &p, 0.0, x.barrier, 5.0)?.hypot(barrier_standard_error(&sabr_paths, &u, 0.0, x.barrier, 5.0)?);
        println!("{:>7.3} {:>12.4e} {:>12.4e} {:>8.2}", x.barrier, x.price, y.price, (x.price - y.price) / se);
    }
    Ok(())
}
