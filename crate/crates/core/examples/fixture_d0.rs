//! Builds the two-period fixture and prints its history means.
//!
//! `cargo run --example fixture_d0 -- data/d0.csv` also writes it as CSV.

use seqnet::simulator::make_fixture_d0;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = make_fixture_d0();
    let table = d.table();
    println!("{} units, horizon {}", d.len(), d.horizon());
    for &leaf in table.leaves() {
        let node = table.node(leaf);
        println!("{:<24} n={:<3} mean={:.2}", table.key(leaf).to_string(), node.weight, node.mean);
    }
    if let Some(path) = std::env::args().nth(1) {
        d.write_csv(std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
