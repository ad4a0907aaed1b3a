//! Bias and RMSE of the fitted pattern as the sample grows.

use seqnet::simulator::{fit_experiment, DgpSpec};
use seqnet::stats::VarianceMode;
use seqnet::target::StrataMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dgp = DgpSpec::parse(&std::fs::read_to_string("data/three_period.dgp")?)?;
    let known = VarianceMode::Known(dgp.sigma * dgp.sigma);
    for n in [500, 2000, 8000] {
        let r = fit_experiment(&dgp, n, 400, StrataMode::Full, known)?;
        print!("N={n:<5}");
        for p in &r.params {
            print!("  {} {:.3} (rmse {:.3})", p.name, p.estimate.mean, p.rmse);
        }
        println!();
    }
    Ok(())
}
