//! Learns a map from latent coordinates to path weights and prices a
//! surface from a latent point without solving the dual.

use volwmc::market::{chronological_split, mrae_values, synthetic_history, RegimeConfig};
use volwmc::vae::{calibrate_latent, sample_synthetic_surfaces, surface_observations, train_vae, LatentPoint, VaeConfig};
use volwmc::weight_decoder::{build_training_targets, reconstruct_surface_via_wmc, train_weight_decoder, ParityMode, WdConfig, WdPayoffs};
use volwmc::wmc::generate_brownian_paths;

fn main() -> volwmc::Result<()> {
    let h = synthetic_history(300, 42, &RegimeConfig::default())?;
    let split = chronological_split(&h, 0.8, 30, 1)?;
    let vcfg = VaeConfig {
        epochs: 200,
        patience: 40,
        ..VaeConfig::default()
    };
    let (vae, _) = train_vae(&h.grid, split.train.surfaces(), split.validation.surfaces(), &vcfg, 7)?;
    let calibrate = |s: &volwmc::market::VolSurface| -> volwmc::Result<LatentPoint> {
        let (mu, _) = vae.encode(s)?;
        let init = LatentPoint::new(mu.iter().map(|v| v.clamp(-4.0, 4.0)).collect())?;
        Ok(calibrate_latent(&vae, &surface_observations(s), &init, (-4.0, 4.0))?.z)
    };
    let latents: Vec<LatentPoint> = split.train.surfaces().iter().map(calibrate).collect::<volwmc::Result<_>>()?;
    let mut all = latents.clone();
    all.extend(sample_synthetic_surfaces(&vae, 200, 4.0, 3)?.samples.into_iter().map(|s| s.z));

    let sigma = split.train.mean_atm_vol(2.0);
    let paths = generate_brownian_paths(1000, 5.0, 100, sigma, 11)?;
    let train = build_training_targets(&vae, &all, &h.grid)?;
    let monitor = build_training_targets(&vae, &latents, &h.grid)?;
    let cfg = WdConfig {
        epochs: 30,
        ..WdConfig::default()
    };
    let (wd, report) = train_weight_decoder(&paths, sigma, &h.grid, &train, &monitor, &cfg, 5)?;
    println!("weight decoder: {} epochs, best validation price MSE {:.3e}", report.epochs_run, report.best_validation);

    let payoffs = WdPayoffs::new(&paths, &h.grid)?;
    for s in split.test.surfaces().iter().step_by(15) {
        let z = calibrate(s)?;
        let rec = reconstruct_surface_via_wmc(&wd, &payoffs, &paths, &h.grid, &z, ParityMode::ParityConstrained)?;
        let vols: Vec<f64> = rec.vols.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        println!(
            "{}: weighted-measure MRAE {:.4}, VAE MRAE {:.4}, failed nodes {}, parity {:.1e}",
            s.date,
            mrae_values(&s.vols, &vols)?,
            mrae_values(&s.vols, &vae.decode_surface(z.as_slice())?)?,
            rec.failed_nodes.len(),
            rec.max_parity_residual
        );
    }
    Ok(())
}
