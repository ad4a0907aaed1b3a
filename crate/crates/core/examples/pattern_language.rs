//! Parses a pattern, prints its canonical form and the features it assigns
//! to a few strata.

use seqnet::key::StratumKey;
use seqnet::pattern::parse_pattern;

fn main() -> seqnet::error::Result<()> {
    let spec = parse_pattern(
        "# decaying effect, larger after a treated period\n\
         term level: 1\n\
         term decay: t - 1\n\
         term carry: t > 1 and z[t-1] == 1\n",
    )?;
    print!("{spec}");
    for (z, x) in [(vec![1], vec![]), (vec![0, 1], vec![vec![1]]), (vec![1, 0, 1], vec![vec![0], vec![1]])] {
        let key = StratumKey::new(z, x).expect("well formed");
        println!("{key}: {:?}", spec.features(3, &key)?);
    }
    Ok(())
}
