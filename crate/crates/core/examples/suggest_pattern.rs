//! Starts from the saturated pattern and merges net effects the data cannot
//! tell apart.

use seqnet::estimation::{fit_pattern, pattern_discovery};
use seqnet::pattern::PatternSpec;
use seqnet::simulator::make_fixture_d0;
use seqnet::stats::VarianceMode;
use seqnet::target::StrataMode;

fn main() -> seqnet::error::Result<()> {
    let d = make_fixture_d0();
    let spec = PatternSpec::saturated(d.table());
    let fit = fit_pattern(&spec, d.table(), StrataMode::Full, VarianceMode::Known(16.0))?;
    let s = pattern_discovery(&fit, &spec, 0.05)?;
    for t in &s.tests {
        println!("{} vs {}: z {:+.3} {}", t.left, t.right, t.z, if t.merged { "merged" } else { "kept" });
    }
    for (g, v) in s.groups.iter().zip(&s.estimates) {
        println!("{v:>8.3}  {}", g.join(", "));
    }
    print!("{}", s.spec);
    Ok(())
}
