//! Finite-difference check of the full training loss for every aggregator.

use imram::gradcheck::{gradcheck, GradcheckConfig};
use imram::Aggregator;

fn main() -> imram::Result<()> {
    for aggregator in Aggregator::ALL {
        for seed in 0..3 {
            let report = gradcheck(&GradcheckConfig {
                aggregator,
                seed,
                ..GradcheckConfig::default()
            })?;
            let worst = report.worst().map(|p| p.param.as_str()).unwrap_or("-");
            println!(
                "{aggregator:>5} seed={seed} probes={:>3} skipped={} loss={:.4} max_rel_error={:.2e} worst={worst}",
                report.probes.len(),
                report.skipped,
                report.loss,
                report.max_rel_error
            );
        }
    }
    Ok(())
}
