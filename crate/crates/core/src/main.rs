use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use volwmc::bachelier::{bachelier_price, implied_normal_vol, Flavor};
use volwmc::exotics::{barrier_levels, barrier_sweep};
use volwmc::market::{
    chronological_split, load_history, save_history, sliding_window_std, synthetic_history, Dispersion, MarketHistory,
    RegimeConfig,
};
use volwmc::pipeline::{desk_config, emit_report, quick_config, run_pipeline, PipelineConfig, REPORT_TAGS};
use volwmc::sabr::{fit_sabr_smile, simulate_sabr_paths, SabrParams};
use volwmc::vae::{
    calibrate_latent, default_sweep_values, latent_sweep, sample_synthetic_surfaces, surface_observations, train_vae,
    LatentPoint, VaeConfig, VaeModel,
};
use volwmc::weight_decoder::{
    build_training_targets, reconstruct_surface_via_wmc, train_weight_decoder, ParityMode, WdConfig, WdPayoffs,
    WeightDecoder,
};
use volwmc::wmc::{
    generate_brownian_paths, load_paths, load_quotes, load_weights, martingale_loss, martingale_windows, quote_payoffs,
    save_paths, save_weights, solve_lagrange_dual, DualOptions, WeightVector,
};
use volwmc::{Error, Result};

#[derive(Parser)]
#[command(name = "volwmc", version, about = "Latent vol surfaces and weighted Monte Carlo pricing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Surface histories.
    #[command(subcommand)]
    Data(DataCmd),
    /// Bachelier prices and implied vols.
    #[command(subcommand)]
    Price(PriceCmd),
    /// Variational autoencoder.
    #[command(subcommand)]
    Vae(VaeCmd),
    /// Path sets, the entropy dual and martingale diagnostics.
    #[command(subcommand)]
    Wmc(WmcCmd),
    /// Weight decoder.
    #[command(subcommand)]
    Wd(WdCmd),
    /// Normal SABR benchmark.
    #[command(subcommand)]
    Sabr(SabrCmd),
    /// Path-dependent payoffs.
    #[command(subcommand)]
    Exotic(ExoticCmd),
    /// Runs the full pipeline into a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints a complete configuration (`desk` or `quick`).
    Config {
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Writes a figure table of a run as CSV.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Figure tag, or `all`.
        #[arg(long)]
        which: String,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    /// Generates a synthetic SABR-driven history.
    Synth {
        #[arg(long, default_value_t = 1000)]
        days: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// TOML file with generator parameters.
        #[arg(long)]
        regime: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarises a history file.
    Stats {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, default_value_t = 5)]
        window: usize,
    },
}

#[derive(Args)]
struct OptionArgs {
    #[arg(long, default_value = "call")]
    kind: Flavor,
    #[arg(long, allow_hyphen_values = true)]
    strike_offset: f64,
    #[arg(long)]
    expiry: f64,
    #[arg(long, default_value_t = 1.0)]
    annuity: f64,
}

#[derive(Subcommand)]
enum PriceCmd {
    Vanilla {
        #[command(flatten)]
        option: OptionArgs,
        #[arg(long)]
        vol: f64,
    },
    ImpliedVol {
        #[command(flatten)]
        option: OptionArgs,
        #[arg(long)]
        price: f64,
    },
}

#[derive(Subcommand)]
enum VaeCmd {
    Train {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        latent_dim: usize,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 200)]
        patience: usize,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 100)]
        validation_days: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Calibrates latents to each date (or one date) of a history; CSV on stdout.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        date: Option<NaiveDate>,
        #[arg(long, default_value_t = 4.0)]
        bound: f64,
    },
    /// Decoded surfaces along one latent coordinate; CSV on stdout.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dim: usize,
    },
    /// Samples synthetic surfaces from the prior.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 4.0)]
        variance: f64,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum WmcCmd {
    Paths {
        #[arg(long, default_value_t = 4000)]
        nu: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimum-entropy weights matching a `kind,strike_offset,expiry_years,price` file.
    Solve {
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    MartLoss {
        #[arg(long)]
        paths: PathBuf,
        /// Uniform weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum WdCmd {
    /// Trains on the calibrated latents of the training dates plus synthetic draws.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        sigma_prior: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 500)]
        synthetic: usize,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        seed: u64,
    },
    /// Surface of the weighted measure at a latent point; CSV on stdout.
    Price {
        #[arg(long)]
        wd: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        /// Comma-separated latent coordinates.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        z: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum SabrCmd {
    Fit {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, default_value_t = 5.0)]
        expiry: f64,
    },
    Simulate {
        #[arg(long)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
        #[arg(long)]
        volvol: f64,
        #[arg(long, default_value_t = 4000)]
        nu: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExoticCmd {
    /// Up-and-out call prices across barrier levels; CSV on stdout.
    BarrierSweep {
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        strike: f64,
        #[arg(long, default_value_t = 5.0)]
        expiry: f64,
        #[arg(long, default_value_t = 0.01)]
        from: f64,
        #[arg(long, default_value_t = 0.1)]
        to: f64,
        #[arg(long, default_value_t = 0.005)]
        step: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) | Error::NoSolution(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn json_out<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn find_date(h: &MarketHistory, date: NaiveDate) -> Result<usize> {
    h.dates()
        .iter()
        .position(|d| *d == date)
        .ok_or_else(|| Error::InvalidInput(format!("{date} is not in the history")))
}

fn weights_or_uniform(weights: Option<PathBuf>, nu: usize) -> Result<WeightVector> {
    match weights {
        Some(p) => WeightVector::new(load_weights(p)?.1),
        None => Ok(WeightVector::uniform(nu)),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Data(DataCmd::Synth { days, seed, regime, out }) => {
            let cfg: RegimeConfig = match regime {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
                None => RegimeConfig::default(),
            };
            save_history(&synthetic_history(days, seed, &cfg)?, out)
        }
        Command::Data(DataCmd::Stats { history, window }) => {
            let h = load_history(history)?;
            let dates = h.dates();
            let std = sliding_window_std(&h, window, Dispersion::Relative)?;
            println!("days,{}", h.len());
            println!("first,{}", dates[0]);
            println!("last,{}", dates[dates.len() - 1]);
            for &t in &h.grid.expiries {
                println!("mean_atm_vol_{t}y,{}", h.mean_atm_vol(t));
            }
            println!("mean_window_std,{}", std.iter().sum::<f64>() / std.len() as f64);
            Ok(())
        }
        Command::Price(PriceCmd::Vanilla { option: o, vol }) => {
            println!("{}", bachelier_price(0.0, o.strike_offset, vol, o.expiry, o.kind, o.annuity)?);
            Ok(())
        }
        Command::Price(PriceCmd::ImpliedVol { option: o, price }) => {
            println!("{}", implied_normal_vol(price, 0.0, o.strike_offset, o.expiry, o.kind, o.annuity)?);
            Ok(())
        }
        Command::Vae(VaeCmd::Train {
            history,
            out,
            latent_dim,
            epochs,
            patience,
            train_fraction,
            validation_days,
            seed,
        }) => {
            let h = load_history(history)?;
            let split = chronological_split(&h, train_fraction, validation_days, seed)?;
            let cfg = VaeConfig {
                latent_dim,
                epochs,
                patience,
                ..VaeConfig::default()
            };
            let (model, report) = train_vae(&h.grid, split.train.surfaces(), split.validation.surfaces(), &cfg, seed)?;
            model.save(out)?;
            eprintln!(
                "epochs {} best {} train mse {:.4e} validation mse {:.4e} train mrae {:.4}",
                report.epochs_run, report.best_epoch, report.train_mse, report.validation_mse, report.train_mrae
            );
            Ok(())
        }
        Command::Vae(VaeCmd::Calibrate {
            model,
            history,
            date,
            bound,
        }) => {
            let m = VaeModel::load(model)?;
            let h = load_history(history)?;
            let surfaces = match date {
                Some(d) => vec![h.surfaces()[find_date(&h, d)?].clone()],
                None => h.surfaces().to_vec(),
            };
            let head: Vec<String> = (0..m.latent_dim).map(|i| format!("z{i}")).collect();
            println!("date,{},residual_norm,converged", head.join(","));
            for s in &surfaces {
                let (mu, _) = m.encode(s)?;
                let init = LatentPoint::new(mu.iter().map(|v| v.clamp(-bound, bound)).collect())?;
                let r = calibrate_latent(&m, &surface_observations(s), &init, (-bound, bound))?;
                let z: Vec<String> = r.z.as_slice().iter().map(|v| v.to_string()).collect();
                println!("{},{},{},{}", s.date, z.join(","), r.residual_norm, r.converged);
            }
            Ok(())
        }
        Command::Vae(VaeCmd::Sweep { model, dim }) => {
            let m = VaeModel::load(model)?;
            println!("dim,value,dK,T,vol,diff_vs_origin");
            for s in latent_sweep(&m, dim, &default_sweep_values(), &LatentPoint::origin(m.latent_dim))? {
                for (((k, t), v), d) in m.grid.nodes().zip(&s.vols).zip(&s.diff) {
                    println!("{dim},{},{k},{t},{v},{d}", s.value);
                }
            }
            Ok(())
        }
        Command::Vae(VaeCmd::Synth {
            model,
            n,
            variance,
            seed,
            out,
        }) => {
            let m = VaeModel::load(model)?;
            let set = sample_synthetic_surfaces(&m, n, variance, seed)?;
            eprintln!("kept {} discarded {}", set.samples.len(), set.discarded);
            std::fs::write(out, serde_json::to_string(&set)?)?;
            Ok(())
        }
        Command::Wmc(WmcCmd::Paths {
            nu,
            steps,
            horizon,
            sigma,
            seed,
            out,
        }) => save_paths(&generate_brownian_paths(nu, horizon, steps, sigma, seed)?, out),
        Command::Wmc(WmcCmd::Solve {
            paths,
            targets,
            tolerance,
            out,
        }) => {
            let paths = load_paths(paths)?;
            let quotes = load_quotes(targets)?;
            let g = quote_payoffs(&paths, &quotes)?;
            let c: Vec<f64> = quotes.iter().map(|q| q.price).collect();
            let opts = DualOptions {
                tolerance,
                ..DualOptions::default()
            };
            let sol = solve_lagrange_dual(&g, &c, &opts)?;
            eprintln!(
                "iterations {} max residual {:.3e} converged {}",
                sol.iterations, sol.max_residual, sol.converged
            );
            save_weights(sol.weights.as_slice(), paths.identity(), out)?;
            if sol.converged {
                Ok(())
            } else {
                Err(Error::NoSolution(format!("max residual {:.3e} above {tolerance:e}", sol.max_residual)))
            }
        }
        Command::Wmc(WmcCmd::MartLoss { paths, weights }) => {
            let paths = load_paths(paths)?;
            let p = weights_or_uniform(weights, paths.nu())?;
            let expiries = [0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
            let set = martingale_windows(&expiries, 20, (-0.01, 0.01), 0.001)?;
            let r = martingale_loss(&paths, &p, &set)?;
            println!("relative_loss,{}", r.relative_loss);
            println!("skipped,{}", r.skipped);
            Ok(())
        }
        Command::Wd(WdCmd::Train {
            model,
            history,
            paths,
            sigma_prior,
            out,
            train_fraction,
            synthetic,
            epochs,
            seed,
        }) => {
            let vae = VaeModel::load(model)?;
            let h = load_history(history)?;
            let paths = load_paths(paths)?;
            let split = chronological_split(&h, train_fraction, 0, seed)?;
            let bound = 4.0;
            let latents = split
                .train
                .surfaces()
                .iter()
                .map(|s| {
                    let (mu, _) = vae.encode(s)?;
                    let init = LatentPoint::new(mu.iter().map(|v| v.clamp(-bound, bound)).collect())?;
                    Ok(calibrate_latent(&vae, &surface_observations(s), &init, (-bound, bound))?.z)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut all = latents.clone();
            all.extend(sample_synthetic_surfaces(&vae, synthetic, 4.0, seed)?.samples.into_iter().map(|s| s.z));
            let train = build_training_targets(&vae, &all, &h.grid)?;
            let val = build_training_targets(&vae, &latents, &h.grid)?;
            let cfg = WdConfig {
                epochs,
                ..WdConfig::default()
            };
            let (wd, report) = train_weight_decoder(&paths, sigma_prior, &h.grid, &train, &val, &cfg, seed)?;
            eprintln!("epochs {} best {} validation {:.4e}", report.epochs_run, report.best_epoch, report.best_validation);
            wd.save(out)
        }
        Command::Wd(WdCmd::Price { wd, paths, z }) => {
            let wd = WeightDecoder::load(wd)?;
            let paths = load_paths(paths)?;
            let grid = volwmc::market::SurfaceGrid::default();
            let payoffs = WdPayoffs::new(&paths, &grid)?;
            let s = reconstruct_surface_via_wmc(&wd, &payoffs, &paths, &grid, &LatentPoint::new(z)?, ParityMode::ParityConstrained)?;
            println!("dK,T,call,put,vol");
            for (i, (k, t)) in grid.nodes().enumerate() {
                println!("{k},{t},{},{},{}", s.calls[i], s.puts[i], s.vols[i]);
            }
            Ok(())
        }
        Command::Sabr(SabrCmd::Fit { history, date, expiry }) => {
            let h = load_history(history)?;
            let s = &h.surfaces()[find_date(&h, date)?];
            let e = h
                .grid
                .expiries
                .iter()
                .position(|t| (t - expiry).abs() < 1e-12)
                .ok_or_else(|| Error::InvalidInput(format!("{expiry} is not a grid expiry")))?;
            json_out(&fit_sabr_smile(&s.smile(e), expiry)?)
        }
        Command::Sabr(SabrCmd::Simulate {
            alpha,
            rho,
            volvol,
            nu,
            steps,
            horizon,
            seed,
            out,
        }) => save_paths(&simulate_sabr_paths(&SabrParams::new(alpha, rho, volvol)?, nu, horizon, steps, seed)?, out),
        Command::Exotic(ExoticCmd::BarrierSweep {
            paths,
            weights,
            strike,
            expiry,
            from,
            to,
            step,
        }) => {
            let paths = load_paths(paths)?;
            let p = weights_or_uniform(weights, paths.nu())?;
            println!("barrier,price");
            for b in barrier_sweep(&paths, &p, strike, &barrier_levels(from, to, step)?, expiry)? {
                println!("{},{}", b.barrier, b.price);
            }
            Ok(())
        }
        Command::Run { config, out } => {
            let cfg = PipelineConfig::load(config)?;
            let m = run_pipeline(&cfg, &out)?;
            if let Some(metrics) = &m.metrics {
                for s in &metrics.summary {
                    eprintln!(
                        "{:<10} dates {:>4}  mrae direct {:.4} finetuned {:.4} calibration {:.4} weight decoder {:.4}",
                        s.set, s.dates, s.mrae_direct, s.mrae_finetuned, s.mrae_calibration, s.mrae_weight_decoder
                    );
                }
            }
            eprintln!("manifest written to {}", out.join("manifest.json").display());
            Ok(())
        }
        Command::Config { preset } => {
            let cfg = match preset.as_str() {
                "desk" => desk_config(),
                "quick" => quick_config(),
                other => return Err(Error::Config(format!("unknown preset {other:?}"))),
            };
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
        Command::Report { run, which } => {
            let tags: Vec<&str> = if which == "all" { REPORT_TAGS.to_vec() } else { vec![which.as_str()] };
            for t in tags {
                println!("{}", emit_report(&run, t)?.display());
            }
            Ok(())
        }
    }
}
