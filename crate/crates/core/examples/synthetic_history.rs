//! Generates a synthetic surface history, splits it and measures day-to-day noise.

use volwmc::market::{chronological_split, sliding_window_std, synthetic_history, Dispersion, RegimeConfig};

fn main() -> volwmc::Result<()> {
    let h = synthetic_history(500, 42, &RegimeConfig::default())?;
    let split = chronological_split(&h, 0.7, 50, 1)?;
    println!(
        "{} days from {} to {}: train {}, validation {}, test {}",
        h.len(),
        h.dates()[0],
        h.dates()[h.len() - 1],
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    for &t in &h.grid.expiries {
        println!("mean ATM vol {t:>4}y  {:.5}", h.mean_atm_vol(t));
    }
    let noise = sliding_window_std(&h, 5, Dispersion::Relative)?;
    println!("mean 5-day relative dispersion {:.4}", noise.iter().sum::<f64>() / noise.len() as f64);
    Ok(())
}
