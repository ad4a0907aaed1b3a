//! With one net effect per period and two periods the weighted fit has a
//! closed form: ϕ̂2 is the inverse-variance mean of the second-period point
//! effects and ϕ̂1 = θ̂ − Δ ϕ̂2, where Δ is the difference in the share treated
//! at period 2 between the two first-period arms.

use seqnet::estimation::{estimate_point_effects, fit_pattern};
use seqnet::pattern::parse_pattern;
use seqnet::simulator::make_fixture_d0;
use seqnet::stats::VarianceMode;
use seqnet::target::StrataMode;

fn main() -> seqnet::error::Result<()> {
    let d = make_fixture_d0();
    let variance = VarianceMode::Known(16.0);
    let spec = parse_pattern("group early: when t == 1\ngroup late: when t == 2\n")?;
    let fit = fit_pattern(&spec, d.table(), StrataMode::Full, variance)?;

    let est = estimate_point_effects(&d, variance);
    let (first, second): (Vec<_>, Vec<_>) = est.iter().partition(|e| e.target.time() == 1);
    let den: f64 = second.iter().map(|e| 1.0 / e.variance).sum();
    let phi2 = second.iter().map(|e| e.value / e.variance).sum::<f64>() / den;
    let delta = 0.75 - 0.375;
    let phi1 = first[0].value - delta * phi2;
    let var2 = 1.0 / den;
    let var1 = first[0].variance + delta * delta * var2;

    println!("ϕ̂1 {:.6} vs {:.6}", fit.phi_hat[0], phi1);
    println!("ϕ̂2 {:.6} vs {:.6}", fit.phi_hat[1], phi2);
    println!("var ϕ̂1 {:.6} vs {:.6}", fit.covariance[0][0], var1);
    println!("var ϕ̂2 {:.6} vs {:.6}", fit.covariance[1][1], var2);
    println!("cov {:.6} vs {:.6}", fit.covariance[0][1], -delta * var2);
    Ok(())
}
