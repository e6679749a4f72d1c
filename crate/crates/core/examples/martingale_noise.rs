//! Martingale window residuals of unweighted Brownian path sets.

use volwmc::pipeline::martingale_noise_floor;
use volwmc::wmc::{generate_brownian_paths, martingale_loss, martingale_windows, WeightVector};

fn main() -> volwmc::Result<()> {
    let expiries = [0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
    let set = martingale_windows(&expiries, 20, (-0.01, 0.01), 0.001)?;
    let paths = generate_brownian_paths(4000, 5.0, 500, 0.0066, 1)?;
    let r = martingale_loss(&paths, &WeightVector::uniform(paths.nu()), &set)?;
    println!("{} windows, {} skipped, relative loss {:.4}", set.len(), r.skipped, r.relative_loss);
    for (w, res) in set.windows.iter().zip(&r.residuals).take(20) {
        println!("  t {} → {}  centre {:+.4}  residual {:?}", w.t1, w.t2, w.center, res);
    }
    let levels = martingale_noise_floor(4000, 5.0, 500, 0.0066, &set, 10, 2)?;
    let mean = levels.iter().sum::<f64>() / levels.len() as f64;
    println!("noise floor over 10 path sets: {mean:.4} (min {:.4}, max {:.4})", levels.iter().cloned().fold(f64::INFINITY, f64::min), levels.iter().cloned().fold(0.0, f64::max));
    Ok(())
}
