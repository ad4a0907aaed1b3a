//! Causal net effects by exact g-computation against a DGP's true laws.

use std::collections::BTreeMap;

use serde::Serialize;

use super::dgp::DgpSpec;
use crate::error::Result;
use crate::key::StratumKey;
use crate::point_params::KeyedValue;

/// `E{y(z_t, 0…0) | z̄_{t-1}, x̄_{t-1}}` for every observed past and level, and
/// the net effect of each active level against `z_t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalOracleResult {
    pub phi: BTreeMap<StratumKey, f64>,
    pub nu: BTreeMap<StratumKey, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CausalOracleDump {
    pub schema_version: u32,
    pub phi: Vec<KeyedValue>,
    pub nu: Vec<KeyedValue>,
}

impl CausalOracleResult {
    pub fn dump(&self) -> CausalOracleDump {
        let kv = |m: &BTreeMap<StratumKey, f64>| {
            m.iter()
                .map(|(k, &v)| KeyedValue {
                    key: k.clone(),
                    value: v,
                })
                .collect()
        };
        CausalOracleDump {
            schema_version: crate::report::SCHEMA_VERSION,
            phi: kv(&self.phi),
            nu: kv(&self.nu),
        }
    }
}

/// Mean outcome when treatments after `t` are held at 0, averaging the
/// remaining covariates over their law given `L`.
fn continuation(dgp: &DgpSpec, t: usize, z: &mut Vec<u32>, x: &mut Vec<u32>, latent: u32) -> Result<f64> {
    let horizon = dgp.horizon;
    if t == horizon {
        return dgp.outcome_mean(z, x, latent);
    }
    // x_t is drawn after z_t, then z_{t+1} = 0
    let p = dgp.covariate_probability(t, z, x, latent)?;
    let mut acc = 0.0;
    for (v, pv) in [(0u32, 1.0 - p), (1u32, p)] {
        x[t - 1] = v;
        z[t] = 0;
        acc += pv * continuation(dgp, t + 1, z, x, latent)?;
    }
    x[t - 1] = 0;
    Ok(acc)
}

pub fn g_oracle(dgp: &DgpSpec) -> Result<CausalOracleResult> {
    let horizon = dgp.horizon;
    let mut phi = BTreeMap::new();
    let mut nu = BTreeMap::new();
    for t in 1..=horizon {
        let bits = 2 * (t - 1);
        for code in 0u64..(1u64 << bits) {
            let past_z: Vec<u32> = (0..t - 1).map(|s| ((code >> (2 * s)) & 1) as u32).collect();
            let past_x: Vec<u32> = (0..t - 1).map(|s| ((code >> (2 * s + 1)) & 1) as u32).collect();
            let mut z = past_z.clone();
            z.resize(horizon, 0);
            let mut x = past_x.clone();
            x.resize(horizon - 1, 0);

            // posterior over L given the observed past
            let mut post = [0.0; 2];
            for latent in 0..2u32 {
                let mut w = if latent == 1 { dgp.latent } else { 1.0 - dgp.latent };
                if w == 0.0 {
                    continue;
                }
                for s in 1..t {
                    let pz = dgp.assign_probability(s, &z, &x, latent)?;
                    w *= if z[s - 1] == 1 { pz } else { 1.0 - pz };
                    let px = dgp.covariate_probability(s, &z, &x, latent)?;
                    w *= if x[s - 1] == 1 { px } else { 1.0 - px };
                }
                post[latent as usize] = w;
            }
            let total = post[0] + post[1];

            let mut value = [0.0; 2];
            for level in 0..2u32 {
                z[t - 1] = level;
                let mut m = 0.0;
                for latent in 0..2u32 {
                    if post[latent as usize] > 0.0 {
                        m += post[latent as usize] / total
                            * continuation(dgp, t, &mut z, &mut x, latent)?;
                    }
                }
                value[level as usize] = m;
                let key = StratumKey {
                    treatments: z[..t].to_vec(),
                    covariates: past_x.iter().map(|&v| vec![v]).collect(),
                };
                nu.insert(key, m);
            }
            let key = StratumKey {
                treatments: {
                    let mut v = past_z.clone();
                    v.push(1);
                    v
                },
                covariates: past_x.iter().map(|&v| vec![v]).collect(),
            };
            phi.insert(key, value[1] - value[0]);
        }
    }
    Ok(CausalOracleResult { phi, nu })
}
