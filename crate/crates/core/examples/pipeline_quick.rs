//! Runs the whole pipeline at smoke-test scale and emits the figure tables.

use volwmc::pipeline::{emit_report, quick_config, run_pipeline, REPORT_TAGS};

fn main() -> volwmc::Result<()> {
    let out = std::env::temp_dir().join("volwmc-quick-run");
    let manifest = run_pipeline(&quick_config(), &out)?;
    let m = manifest.metrics.expect("completed run");
    for s in &m.summary {
        println!(
            "{:<10} direct {:.4} finetuned {:.4} calibration {:.4} weight decoder {:.4} mart loss {:.4}",
            s.set, s.mrae_direct, s.mrae_finetuned, s.mrae_calibration, s.mrae_weight_decoder, s.mean_relative_mart_loss
        );
    }
    println!("noise floor {:.4}, comparison date {}", m.noise_floor, m.comparison.date);
    for tag in REPORT_TAGS {
        println!("{}", emit_report(&out, tag)?.display());
    }
    Ok(())
}
