//! Terminal densities of a path set under uniform and calibrated weights.

use volwmc::bachelier::{bachelier_price, Flavor};
use volwmc::market::SurfaceGrid;
use volwmc::wmc::{generate_brownian_paths, risk_neutral_density, solve_lagrange_dual, vanilla_payoffs, Bins, DualOptions, WeightVector};

fn main() -> volwmc::Result<()> {
    let paths = generate_brownian_paths(4000, 5.0, 100, 0.006, 3)?;
    let grid = SurfaceGrid::default();
    let g = vanilla_payoffs(&paths, &grid, &[Flavor::Call])?;
    let c: Vec<f64> = grid
        .nodes()
        .map(|(k, t)| bachelier_price(0.0, k, 0.0065 + 0.1 * k, t, Flavor::Call, 1.0))
        .collect::<volwmc::Result<_>>()?;
    let p = solve_lagrange_dual(&g, &c, &DualOptions::default())?.weights;
    let bins = Bins { lo: -0.04, hi: 0.04, count: 16 };
    for t in [1.0, 5.0] {
        let q = risk_neutral_density(&paths, &WeightVector::uniform(paths.nu()), t, bins)?;
        let r = risk_neutral_density(&paths, &p, t, bins)?;
        println!("T = {t}: uniform mean/std {:?}, calibrated {:?}", q.mean_and_std(), r.mean_and_std());
        for ((x, a), b) in r.centers().iter().zip(q.density()).zip(r.density()) {
            println!("  {x:+.4}  {a:8.2}  {b:8.2}");
        }
    }
    Ok(())
}
