//! Fits a three-parameter pattern and the saturated pattern to the fixture.
//!
//! `cargo run --example estimate_pattern -- [pattern file] [sigma2]`

use seqnet::estimation::{fit_pattern, fitted_net_effects};
use seqnet::pattern::{parse_pattern, PatternSpec};
use seqnet::simulator::make_fixture_d0;
use seqnet::stats::VarianceMode;
use seqnet::target::StrataMode;

const THREE_GROUP: &str = "\
group first: when t == 1
group later: when t == 2 and not (z[1] == 1 and x[1][1] == 1)
group treated_high: when t == 2 and z[1] == 1 and x[1][1] == 1
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let source = match args.next() {
        Some(p) => std::fs::read_to_string(p)?,
        None => THREE_GROUP.to_string(),
    };
    let sigma2: f64 = args.next().map_or(Ok(16.0), |s| s.parse())?;
    let d = make_fixture_d0();
    let variance = VarianceMode::Known(sigma2);

    for (label, spec) in [("declared", parse_pattern(&source)?), ("saturated", PatternSpec::saturated(d.table()))] {
        let fit = fit_pattern(&spec, d.table(), StrataMode::Full, variance)?;
        println!("{label} pattern, χ² = {:.3} on {} df", fit.chi2, fit.df);
        for ((name, v), se) in spec.names().iter().zip(&fit.phi_hat).zip(fit.std_errors()) {
            println!("  {name:<22} {v:>9.4}  (se {se:.4})");
        }
        for f in fitted_net_effects(&fit, &spec, d.table())? {
            println!("  φ̂{} = {:.4}", f.stratum, f.value);
        }
    }
    Ok(())
}
