//! Fits normal SABR to a smile and checks the Hagan expansion against simulation.

use volwmc::bachelier::{implied_normal_vol, Flavor};
use volwmc::sabr::{fit_sabr_smile, sabr_normal_vol, simulate_sabr_paths, SabrParams};

fn main() -> volwmc::Result<()> {
    let truth = SabrParams::new(0.006, -0.3, 0.4)?;
    let strikes = [-0.005, -0.0025, -0.00125, 0.0, 0.00125, 0.0025, 0.005];
    let smile: Vec<(f64, f64)> = strikes
        .iter()
        .map(|&k| Ok((k, sabr_normal_vol(&truth, 0.0, k, 5.0)?)))
        .collect::<volwmc::Result<_>>()?;
    let fit = fit_sabr_smile(&smile, 5.0)?;
    println!("true {truth:?}\nfit  {:?} rms {:.2e}", fit.params, fit.rms);

    let paths = simulate_sabr_paths(&truth, 20_000, 1.0, 200, 9)?;
    let last = paths.steps();
    for k in strikes {
        let price = paths.paths().map(|p| (p[last] - k).max(0.0)).sum::<f64>() / paths.nu() as f64;
        let mc = implied_normal_vol(price, 0.0, k, 1.0, Flavor::Call, 1.0)?;
        let hagan = sabr_normal_vol(&truth, 0.0, k, 1.0)?;
        println!("dK {k:>8.5}  hagan {hagan:.6}  mc {mc:.6}  rel {:+.3}%", 100.0 * (mc / hagan - 1.0));
    }
    Ok(())
}
