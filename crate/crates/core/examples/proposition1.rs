//! Redraws the fixture's outcomes many times and checks that point effects
//! of different strata and periods are uncorrelated.

use seqnet::estimation::proposition1_diagnostic;
use seqnet::simulator::make_fixture_d0;
use seqnet::stats::VarianceMode;

fn main() -> seqnet::error::Result<()> {
    let d = make_fixture_d0();
    let r = proposition1_diagnostic(&d, VarianceMode::Known(16.0), 2000, 7)?;
    for c in r.variances.iter().chain(&r.covariances) {
        println!(
            "{} × {}: {:.4} (expected {:.4}, z {:+.2}){}",
            c.a,
            c.b,
            c.empirical,
            c.expected,
            c.z,
            if c.flagged { "  FLAG" } else { "" }
        );
    }
    Ok(())
}
