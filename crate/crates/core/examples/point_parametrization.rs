//! Point effects and covariate effects of the fixture, and the standard
//! parameters rebuilt from them.

use seqnet::point_params::PointParams;
use seqnet::simulator::make_fixture_d0;

fn main() -> seqnet::error::Result<()> {
    let d = make_fixture_d0();
    let table = d.table();
    let psi = PointParams::extract(table)?;
    println!("grand mean {:.4}", psi.grand_mean());
    for (k, v) in psi.thetas() {
        println!("θ{k} = {v:.4}");
    }
    for (k, v) in psi.gammas() {
        println!("γ{k} = {v:.4}");
    }
    let rebuilt = psi.reconstruct_table(table)?;
    let worst = table
        .leaves()
        .iter()
        .map(|&l| (table.node(l).mean - rebuilt.node(l).mean).abs())
        .fold(0.0, f64::max);
    println!("max |μ − μ(Ψ)| = {worst:.2e}");
    Ok(())
}
