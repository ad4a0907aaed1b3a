//! Exact net effects of the fixture and the check that every point effect
//! splits into its own net effect plus the later ones.

use seqnet::net_effects::{exact_net_effects, verify_decomposition};
use seqnet::simulator::make_fixture_d0;

fn main() -> seqnet::error::Result<()> {
    let d = make_fixture_d0();
    let net = exact_net_effects(d.table())?;
    for (k, v) in net.phis() {
        println!("φ{k} = {v:.4}");
    }
    let report = verify_decomposition(d.table());
    for e in &report.entries {
        println!("{}: θ = {:.4}, decomposition = {:.4}", e.key, e.point_effect, e.decomposition);
    }
    println!("max deviation {:.2e}", report.max_deviation);
    Ok(())
}
