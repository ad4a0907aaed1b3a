//! Data-generating processes with binary treatments and covariates.
//!
//! A DGP file is line oriented, `#` starts a comment:
//!
//! ```text
//! horizon 2                      # T
//! sigma 10                       # outcome noise sd
//! latent 0.5                     # pr(L = 1) of a latent binary L (default 0)
//! seed 7                         # optional default seed
//! assign: logistic(-0.5 + z[t-1] + x[t-1])   # pr(z_t = 1 | past)
//! covariate: logistic(-1 + z[t] + 2 * L)     # pr(x_t = 1 | past, z_t, L)
//! baseline: 50 + 4 * L           # outcome level under no treatment
//! covariate_effect 3             # slope on centered covariates
//! confound 2                     # optional: L enters assignment
//! group early: when t == 1       # pattern lines, as in pattern files
//! group late: when t == 2
//! truth early 30                 # one value per pattern parameter
//! truth late 20
//! ```
//!
//! The potential outcome under treatments `z̄` with covariates `x̄(z̄)` is
//!
//! ```text
//! y(z̄) = baseline(L) + β Σ_s {x_s − pr(x_s = 1 | past_s, L)}
//!        + Σ_t 1(z_t > 0) feature(t, z̄_t, x̄_{t-1}) · truth + σ ε
//! ```
//!
//! The centered covariate terms average to zero under any intervention, so
//! the causal net effect of `z_t` is exactly `feature · truth`. Assignment may
//! read the observed past only; with `confound s` its logit is shifted by
//! `s (2L − 1)`, which breaks ignorability whenever `L` moves the outcome.

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, ObservationRecord};
use crate::error::{Error, Result};
use crate::estimation::stream_rng;
use crate::expr::{parse_expr, Env, Expr};
use crate::key::StratumKey;
use crate::pattern::{Param, ParamKind, PatternSpec};
use crate::table::StratumTable;

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub horizon: usize,
    pub sigma: f64,
    pub latent: f64,
    pub seed: u64,
    assign: (Expr, usize),
    covariate: (Expr, usize),
    baseline: (Expr, usize),
    pub covariate_effect: f64,
    pub confounding: f64,
    pub pattern: PatternSpec,
    pub truth: Vec<f64>,
}

/// `(z, x, probability, mean outcome)` of one full history.
pub type History = (Vec<u32>, Vec<u32>, f64, f64);

/// Default seed when neither the file nor the caller sets one.
pub const DEFAULT_SEED: u64 = 20_261_017;

fn bernoulli(p: f64, v: u32) -> f64 {
    if v == 1 {
        p
    } else {
        1.0 - p
    }
}

impl DgpSpec {
    pub fn parse(source: &str) -> Result<Self> {
        let mut horizon = None;
        let mut sigma = None;
        let mut latent = 0.0;
        let mut seed = DEFAULT_SEED;
        let mut assign = None;
        let mut covariate = None;
        let mut baseline = None;
        let mut covariate_effect = 0.0;
        let mut confounding = 0.0;
        let mut params: Vec<Param> = Vec::new();
        let mut truth_lines: Vec<(String, f64, usize)> = Vec::new();

        for (i, raw) in source.lines().enumerate() {
            let line = i + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let err = |m: String| Error::Spec { line, message: m };
            let number = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("expected a number, found `{}`", s.trim())))
            };
            let expr = |s: &str| parse_expr(s, true).map_err(&err);
            let (word, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
            let word = word.trim_end_matches(':');
            let rest = rest.trim();
            match word {
                "horizon" => {
                    let v = number(rest)?;
                    if v < 1.0 || v.fract() != 0.0 || v > 16.0 {
                        return Err(err("horizon must be an integer in 1..=16".into()));
                    }
                    horizon = Some(v as usize);
                }
                "sigma" => {
                    let v = number(rest)?;
                    if v < 0.0 {
                        return Err(err("sigma must be non-negative".into()));
                    }
                    sigma = Some(v);
                }
                "latent" => {
                    latent = number(rest)?;
                    if !(0.0..=1.0).contains(&latent) {
                        return Err(err("latent probability must lie in [0, 1]".into()));
                    }
                }
                "seed" => {
                    seed = rest
                        .parse()
                        .map_err(|_| err(format!("bad seed `{rest}`")))?;
                }
                "assign" => assign = Some((expr(rest)?, line)),
                "covariate" => covariate = Some((expr(rest)?, line)),
                "baseline" => baseline = Some((expr(rest)?, line)),
                "covariate_effect" => covariate_effect = number(rest)?,
                "confound" => confounding = number(rest)?,
                "group" | "term" => {
                    let spec = crate::pattern::parse_pattern(text).map_err(|e| match e {
                        Error::Parse { message, .. } | Error::Spec { message, .. } => err(message),
                        other => other,
                    })?;
                    let mut p = spec.params()[0].clone();
                    p.line = line;
                    let (ParamKind::Group { predicate, .. } | ParamKind::Term { expr: predicate }) =
                        &p.kind;
                    if predicate.uses_latent() {
                        return Err(err("pattern lines cannot use L".into()));
                    }
                    params.push(p);
                }
                "truth" => {
                    let (name, v) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| err("expected `truth <name> <value>`".into()))?;
                    truth_lines.push((name.to_string(), number(v)?, line));
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        let missing = |what: &str| Error::Spec {
            line: 0,
            message: format!("missing `{what}` line"),
        };
        let horizon = horizon.ok_or_else(|| missing("horizon"))?;
        let pattern = PatternSpec::new(params).map_err(|e| match e {
            Error::Spec { line: 0, .. } => missing("group"),
            other => other,
        })?;
        let mut truth = vec![f64::NAN; pattern.dimension()];
        for (name, v, line) in truth_lines {
            let j = pattern
                .names()
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Spec {
                    line,
                    message: format!("truth for unknown parameter `{name}`"),
                })?;
            truth[j] = v;
        }
        if let Some(j) = truth.iter().position(|v| v.is_nan()) {
            return Err(Error::Spec {
                line: pattern.params()[j].line,
                message: format!("no truth given for `{}`", pattern.names()[j]),
            });
        }
        let dgp = DgpSpec {
            horizon,
            sigma: sigma.ok_or_else(|| missing("sigma"))?,
            latent,
            seed,
            assign: assign.ok_or_else(|| missing("assign"))?,
            covariate: if horizon > 1 {
                covariate.ok_or_else(|| missing("covariate"))?
            } else {
                covariate.unwrap_or((Expr::Num(0.5), 0))
            },
            baseline: baseline.unwrap_or((Expr::Num(0.0), 0)),
            covariate_effect,
            confounding,
            pattern,
            truth,
        };
        // baseline sees L and T only
        let env = Env {
            t: 0,
            horizon,
            z: &[],
            x: &[],
            latent: Some(0.0),
        };
        dgp.baseline.0.eval(&env).map_err(|m| Error::Spec {
            line: dgp.baseline.1,
            message: format!("baseline may only use L and T: {m}"),
        })?;
        Ok(dgp)
    }

    /// The same process with assignment shifted by `strength (2L − 1)` on the
    /// logit scale.
    pub fn with_confounding(&self, strength: f64) -> Self {
        Self {
            confounding: strength,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn probability(
        &self,
        which: &(Expr, usize),
        t: usize,
        z: &[u32],
        x: &[u32],
        latent: u32,
    ) -> Result<f64> {
        let zs: Vec<Option<u32>> = z.iter().map(|&v| Some(v)).collect();
        let xs: Vec<[u32; 1]> = x.iter().map(|&v| [v]).collect();
        let xr: Vec<Option<&[u32]>> = xs.iter().map(|v| Some(&v[..])).collect();
        let env = Env {
            t,
            horizon: self.horizon,
            z: &zs,
            x: &xr,
            latent: Some(latent as f64),
        };
        let p = which.0.eval(&env).map_err(|m| Error::Spec {
            line: which.1,
            message: m,
        })?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Spec {
                line: which.1,
                message: format!(
                    "probability {p} outside (0, 1) at t={t}, z={z:?}, x={x:?}, L={latent}"
                ),
            });
        }
        Ok(p)
    }

    /// `pr(z_t = 1 | z_1..z_{t-1}, x_1..x_{t-1}, L)`.
    pub fn assign_probability(&self, t: usize, z: &[u32], x: &[u32], latent: u32) -> Result<f64> {
        let p = self.probability(&self.assign, t, &z[..t - 1], &x[..t - 1], latent)?;
        if self.confounding == 0.0 {
            return Ok(p);
        }
        let logit = (p / (1.0 - p)).ln() + self.confounding * (2.0 * latent as f64 - 1.0);
        Ok(1.0 / (1.0 + (-logit).exp()))
    }

    /// `pr(x_t = 1 | z_1..z_t, x_1..x_{t-1}, L)`.
    pub fn covariate_probability(
        &self,
        t: usize,
        z: &[u32],
        x: &[u32],
        latent: u32,
    ) -> Result<f64> {
        self.probability(&self.covariate, t, &z[..t], &x[..t - 1], latent)
    }

    /// `E{y | z̄, x̄, L}`.
    pub fn outcome_mean(&self, z: &[u32], x: &[u32], latent: u32) -> Result<f64> {
        let env = Env {
            t: 0,
            horizon: self.horizon,
            z: &[],
            x: &[],
            latent: Some(latent as f64),
        };
        let mut m = self.baseline.0.eval(&env).map_err(|m| Error::Spec {
            line: self.baseline.1,
            message: m,
        })?;
        if self.covariate_effect != 0.0 {
            for s in 1..self.horizon {
                let p = self.covariate_probability(s, z, x, latent)?;
                m += self.covariate_effect * (x[s - 1] as f64 - p);
            }
        }
        for t in 1..=self.horizon {
            if z[t - 1] > 0 {
                m += self.effect(t, z, x)?;
            }
        }
        Ok(m)
    }

    /// `feature(t, z̄_t, x̄_{t-1}) · truth`, the structural blip of `z_t`.
    pub fn effect(&self, t: usize, z: &[u32], x: &[u32]) -> Result<f64> {
        let key = StratumKey {
            treatments: z[..t].to_vec(),
            covariates: x[..t - 1].iter().map(|&v| vec![v]).collect(),
        };
        let f = self.pattern.features(self.horizon, &key)?;
        Ok(f.iter().zip(&self.truth).map(|(a, b)| a * b).sum())
    }

    fn covariate_width(&self) -> usize {
        usize::from(self.horizon > 1)
    }

    /// Draws one unit from its own random stream.
    fn draw(&self, unit: usize) -> Result<ObservationRecord> {
        let mut rng = stream_rng(self.seed, unit as u64);
        let t_max = self.horizon;
        let latent = u32::from(rng.random::<f64>() < self.latent);
        let mut z = vec![0u32; t_max];
        let mut x = vec![0u32; t_max.saturating_sub(1)];
        for t in 1..=t_max {
            let p = self.assign_probability(t, &z, &x, latent)?;
            z[t - 1] = u32::from(rng.random::<f64>() < p);
            if t < t_max {
                let q = self.covariate_probability(t, &z, &x, latent)?;
                x[t - 1] = u32::from(rng.random::<f64>() < q);
            }
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        let outcome = self.outcome_mean(&z, &x, latent)? + self.sigma * eps;
        Ok(ObservationRecord {
            unit_id: format!("u{}", unit + 1),
            treatments: z,
            covariates: x.iter().map(|&v| vec![v]).collect(),
            outcome,
        })
    }

    /// All histories with their probability and mean outcome, marginal over L.
    pub fn histories(&self) -> Result<Vec<History>> {
        let t_max = self.horizon;
        let mut out = Vec::new();
        let bits = 2 * t_max - 1;
        for code in 0u64..(1u64 << bits) {
            let z: Vec<u32> = (0..t_max).map(|t| ((code >> (2 * t)) & 1) as u32).collect();
            let x: Vec<u32> = (0..t_max - 1)
                .map(|t| ((code >> (2 * t + 1)) & 1) as u32)
                .collect();
            let (mut w, mut wm) = (0.0, 0.0);
            for latent in 0..2u32 {
                let pl = bernoulli(self.latent, latent);
                if pl == 0.0 {
                    continue;
                }
                let mut p = pl;
                for t in 1..=t_max {
                    p *= bernoulli(self.assign_probability(t, &z, &x, latent)?, z[t - 1]);
                    if t < t_max {
                        p *= bernoulli(self.covariate_probability(t, &z, &x, latent)?, x[t - 1]);
                    }
                }
                w += p;
                wm += p * self.outcome_mean(&z, &x, latent)?;
            }
            out.push((z, x, w, wm / w));
        }
        Ok(out)
    }
}

impl FromStr for DgpSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// `n` i.i.d. units; unit `i` uses random stream `i` of the DGP seed, so the
/// result does not depend on the number of worker threads.
pub fn simulate(dgp: &DgpSpec, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::usage("n must be at least 1"));
    }
    let records: Vec<ObservationRecord> = (0..n)
        .into_par_iter()
        .map(|i| dgp.draw(i))
        .collect::<Result<_>>()?;
    Dataset::from_records(records, dgp.horizon, dgp.covariate_width())
}

/// Exact stratified table of the population: every history with its
/// probability as weight and `E{y | history}` as mean.
pub fn population_table(dgp: &DgpSpec) -> Result<StratumTable> {
    let entries = dgp.histories()?.into_iter().map(|(z, x, w, m)| {
        let key = StratumKey {
            treatments: z,
            covariates: x.into_iter().map(|v| vec![v]).collect(),
        };
        (key, w, m)
    });
    StratumTable::exact(dgp.horizon, dgp.covariate_width(), entries.collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const T2: &str = "\
horizon 2
sigma 1
latent 0.4
assign: logistic(-0.3 + 0.8 * z[t-1] + 0.6 * x[t-1])
covariate: logistic(-0.5 + z[t] + 1.5 * L)
baseline: 10 + 2 * L
covariate_effect 1.5
group early: when t == 1
group late: when t == 2
truth early 3
truth late -1
";

    #[test]
    fn parses_and_reports_lines() {
        let d = DgpSpec::parse(T2).unwrap();
        assert_eq!((d.horizon, d.truth.clone()), (2, vec![3.0, -1.0]));
        assert!(matches!(
            DgpSpec::parse(&T2.replace("truth late -1\n", "")),
            Err(Error::Spec { line: 9, .. })
        ));
        assert!(matches!(
            DgpSpec::parse(&T2.replace("baseline: 10 + 2 * L", "baseline: x[1]")),
            Err(Error::Spec { line: 6, .. })
        ));
        assert!(matches!(
            DgpSpec::parse(&T2.replace("sigma 1", "sigma one")),
            Err(Error::Spec { line: 2, .. })
        ));
        assert!(matches!(
            DgpSpec::parse(&T2.replace("latent 0.4", "hidden 0.4")),
            Err(Error::Spec { line: 3, .. })
        ));
    }

    #[test]
    fn population_weights_sum_to_one() {
        let d = DgpSpec::parse(T2).unwrap();
        let h = d.histories().unwrap();
        assert_eq!(h.len(), 8);
        let total: f64 = h.iter().map(|e| e.2).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn noiseless_constant_outcome() {
        let src = "horizon 2\nsigma 0\nassign: 0.5\ncovariate: 0.3\nbaseline: 7\ngroup all: when true\ntruth all 0\n";
        let d = simulate(&DgpSpec::parse(src).unwrap(), 50).unwrap();
        assert!(d.records().iter().all(|r| r.outcome == 7.0));
    }

    #[test]
    fn simulation_is_deterministic() {
        let dgp = DgpSpec::parse(T2).unwrap();
        assert_eq!(simulate(&dgp, 200).unwrap(), simulate(&dgp, 200).unwrap());
        assert_ne!(simulate(&dgp, 200).unwrap(), simulate(&dgp.with_seed(1), 200).unwrap());
    }

    #[test]
    fn degenerate_probability_is_a_spec_error() {
        let src = "horizon 1\nsigma 1\nassign: 1\ngroup all: when true\ntruth all 0\n";
        let dgp = DgpSpec::parse(src).unwrap();
        assert!(matches!(simulate(&dgp, 3), Err(Error::Spec { line: 3, .. })));
    }
}
