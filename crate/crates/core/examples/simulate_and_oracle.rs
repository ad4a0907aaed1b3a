//! Draws a dataset from a process file and compares its empirical net effects
//! with the causal ones.
//!
//! `cargo run --example simulate_and_oracle -- data/two_period.dgp 5000`

use seqnet::net_effects::exact_net_effects;
use seqnet::simulator::{g_oracle, simulate, DgpSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "data/two_period.dgp".into());
    let n: usize = args.next().map_or(Ok(5000), |s| s.parse())?;
    let dgp = DgpSpec::parse(&std::fs::read_to_string(path)?)?;
    let d = simulate(&dgp, n)?;
    let truth = g_oracle(&dgp)?;
    let net = exact_net_effects(d.table())?;
    for (k, v) in &truth.phi {
        match net.phi(k) {
            Some(e) => println!("φ{k}: causal {v:>8.3}  empirical {e:>8.3}"),
            None => println!("φ{k}: causal {v:>8.3}  not observed"),
        }
    }
    Ok(())
}
