//! Eight periods: full histories are too sparse to compare, but conditioning
//! on the previous treatment and covariate is enough when assignment is
//! Markov.

use seqnet::estimation::fit_pattern;
use seqnet::simulator::{simulate, DgpSpec};
use seqnet::stats::VarianceMode;
use seqnet::target::{enumerate_targets, StrataMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let dgp = DgpSpec::parse(&std::fs::read_to_string("data/markov8.dgp")?)?;
    let d = simulate(&dgp, 4000)?;
    let known = VarianceMode::Known(dgp.sigma * dgp.sigma);
    for mode in [StrataMode::Full, StrataMode::Markov] {
        let (found, skipped) = enumerate_targets(d.table(), mode);
        println!("{mode:?}: {} comparable targets, {} single-arm", found.len(), skipped.len());
        match fit_pattern(&dgp.pattern, d.table(), mode, known) {
            Ok(fit) => {
                for ((name, v), t) in dgp.pattern.names().iter().zip(&fit.phi_hat).zip(&dgp.truth) {
                    println!("  {name:<16} {v:>8.3}  (truth {t})");
                }
            }
            Err(e) => println!("  {e}"),
        }
    }
    Ok(())
}
