//! Prices a strip of normal-model swaptions and inverts them back to vols.

use volwmc::bachelier::{bachelier_price, bachelier_vega, implied_normal_vol, put_from_call, Flavor};

fn main() -> volwmc::Result<()> {
    let (sigma, t) = (0.0065, 2.0);
    println!("{:>9} {:>12} {:>12} {:>12} {:>14}", "dK", "call", "put", "vega", "implied - σ");
    for k in [-0.005, -0.0025, -0.00125, 0.0, 0.00125, 0.0025, 0.005] {
        let call = bachelier_price(0.0, k, sigma, t, Flavor::Call, 1.0)?;
        let put = bachelier_price(0.0, k, sigma, t, Flavor::Put, 1.0)?;
        assert!((put - put_from_call(k, call)).abs() < 1e-15);
        let back = implied_normal_vol(call, 0.0, k, t, Flavor::Call, 1.0)?;
        println!(
            "{k:>9.5} {call:>12.6e} {put:>12.6e} {:>12.6e} {:>14.3e}",
            bachelier_vega(0.0, k, sigma, t, 1.0),
            back - sigma
        );
    }
    Ok(())
}
