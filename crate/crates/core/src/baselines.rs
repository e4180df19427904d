//! Comparison methods built from the same components as the generator.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::match_marginals;
use crate::copula::{CopulaSampler, CopulaSpec};
use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::maxent::{self, ConstraintSet, LbfgsOptions, Solution};
use crate::rounding::largest_remainder;
use crate::schema::{Schema, TupleSpace};
use crate::synthesis::SyntheticPopulation;
use crate::tables::MarginalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    GenSyn,
    MaxEnt,
    Conditional,
    Sync,
    Syntropy,
    SynthAcs,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::GenSyn,
        Method::MaxEnt,
        Method::Conditional,
        Method::Sync,
        Method::Syntropy,
        Method::SynthAcs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GenSyn => "gensyn",
            Method::MaxEnt => "maxent",
            Method::Conditional => "conditional",
            Method::Sync => "sync",
            Method::Syntropy => "syntropy",
            Method::SynthAcs => "synthacs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Maximum entropy with a uniform prior over the whole tuple space.
pub fn baseline_maxent(constraints: &ConstraintSet, space: TupleSpace, opts: &LbfgsOptions) -> Result<Solution> {
    maxent::solve(&TupleDistribution::uniform(space), constraints, opts)
}

/// Minimum cross-entropy with the thresholded conditional chain as the only prior.
pub fn baseline_syntropy(
    p1: &TupleDistribution,
    constraints: &ConstraintSet,
    tau: f64,
    opts: &LbfgsOptions,
) -> Result<Solution> {
    maxent::solve(&maxent::threshold(p1, tau)?, constraints, opts)
}

/// Cumulative table for repeated draws from a tuple distribution.
struct TupleSampler {
    tuples: Vec<usize>,
    cumulative: Vec<f64>,
}

impl TupleSampler {
    fn new(p: &TupleDistribution) -> Result<Self> {
        let mut tuples = Vec::with_capacity(p.support_len());
        let mut cumulative = Vec::with_capacity(p.support_len());
        let mut acc = 0.0;
        for (t, q) in p.iter().filter(|&(_, q)| q > 0.0) {
            acc += q;
            tuples.push(t);
            cumulative.push(acc);
        }
        if tuples.is_empty() {
            return Err(Error::Numerical("cannot sample from an empty distribution".into()));
        }
        Ok(TupleSampler { tuples, cumulative })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let r = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= r);
        self.tuples[k.min(self.tuples.len() - 1)]
    }
}

fn check_size(n_pop: u64) -> Result<()> {
    if n_pop == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    Ok(())
}

/// `n_pop` independent draws from the conditional chain estimate `p1`.
pub fn baseline_conditional(p1: &TupleDistribution, n_pop: u64, seed: u64) -> Result<SyntheticPopulation> {
    check_size(n_pop)?;
    let sampler = TupleSampler::new(p1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SyntheticPopulation::from_records(p1.space().clone(), (0..n_pop).map(|_| sampler.draw(&mut rng)))
}

/// A single copula draw of `n_pop` individuals matched to the integer
/// marginal counts `eta`, so the marginals are reproduced exactly.
pub fn baseline_sync(schema: &Schema, spec: &CopulaSpec, eta: &[Vec<u64>], n_pop: u64, seed: u64) -> Result<SyntheticPopulation> {
    check_size(n_pop)?;
    if let Some(k) = eta.iter().position(|e| e.iter().sum::<u64>() != n_pop) {
        return Err(Error::Table(format!(
            "integer targets for `{}` do not sum to the population size {n_pop}",
            schema.variable(k).name
        )));
    }
    let sampler = CopulaSampler::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = sampler.draw_component_probs(n_pop as usize, &mut rng);
    let profiles = match_marginals(&y, spec.blocks(), eta, &mut rng)?;
    let space = schema.tuple_space();
    SyntheticPopulation::from_records(space.clone(), profiles.iter().map(|p| space.index_of(p)))
}

/// Simulated-annealing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealParams {
    /// Starting temperature; the initial TAE when unset.
    pub initial_temperature: Option<f64>,
    /// Geometric factor applied to the temperature after every proposal.
    pub cooling: f64,
    pub proposals: usize,
}

impl Default for AnnealParams {
    fn default() -> Self {
        AnnealParams {
            initial_temperature: None,
            cooling: 0.995,
            proposals: 100_000,
        }
    }
}

/// Progress of one annealing run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealTrace {
    pub initial_tae: f64,
    /// Smallest TAE any integer population of this size can reach.
    pub attainable_tae: f64,
    /// TAE of the returned (best visited) population.
    pub best_tae: f64,
    pub proposals: usize,
    pub accepted: usize,
    /// Best TAE so far, recorded after every accepted move.
    pub best_history: Vec<f64>,
}

/// Conditional-chain sample refined by simulated annealing on TAE.
///
/// Each proposal replaces one random record with a fresh draw from `p1`;
/// worse states are accepted with probability `exp(-Δ/T)`. The search stops
/// early once the TAE reaches the smallest value attainable with integer
/// counts (zero when the expected counts are integers) and returns the best
/// population visited.
pub fn baseline_synthacs(
    schema: &Schema,
    p1: &TupleDistribution,
    d1: &MarginalSet,
    n_pop: u64,
    params: &AnnealParams,
    seed: u64,
) -> Result<(SyntheticPopulation, AnnealTrace)> {
    check_size(n_pop)?;
    if !(params.cooling > 0.0 && params.cooling <= 1.0) {
        return Err(Error::Config(format!("cooling factor {} must lie in (0, 1]", params.cooling)));
    }
    let space = p1.space().clone();
    if space != schema.tuple_space() {
        return Err(Error::SpaceMismatch);
    }
    let sampler = TupleSampler::new(p1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_pop as f64;
    let expected: Vec<Vec<f64>> = (0..schema.len())
        .map(|k| Ok(d1.proportions(schema, k)?.iter().map(|p| p * n).collect()))
        .collect::<Result<_>>()?;
    let attainable: f64 = expected
        .iter()
        .map(|e| {
            let props: Vec<f64> = e.iter().map(|x| x / n).collect();
            let c = largest_remainder(&props, n_pop);
            c.iter().zip(e).map(|(&c, &e)| (c as f64 - e).abs()).sum::<f64>()
        })
        .sum();

    let mut records: Vec<usize> = (0..n_pop).map(|_| sampler.draw(&mut rng)).collect();
    let mut counts: Vec<Vec<f64>> = expected.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut tuple = vec![0; schema.len()];
    for &r in &records {
        space.decode_into(r, &mut tuple);
        for (k, &x) in tuple.iter().enumerate() {
            counts[k][x] += 1.0;
        }
    }
    let tae_of = |counts: &[Vec<f64>]| -> f64 {
        counts
            .iter()
            .zip(&expected)
            .flat_map(|(o, e)| o.iter().zip(e).map(|(o, e)| (o - e).abs()))
            .sum()
    };
    let initial_tae = tae_of(&counts);
    let done = |tae: f64| tae <= attainable + 1e-9 * n.max(1.0);

    let mut current = initial_tae;
    let mut best = initial_tae;
    let mut best_records = records.clone();
    let mut temperature = params.initial_temperature.unwrap_or(initial_tae);
    let mut old = vec![0; schema.len()];
    let mut new = vec![0; schema.len()];
    let mut proposals = 0;
    let mut accepted = 0;
    let mut best_history = Vec::new();

    while proposals < params.proposals && !done(current) {
        proposals += 1;
        let i = rng.random_range(0..records.len());
        let candidate = sampler.draw(&mut rng);
        let threshold = rng.random::<f64>();
        if candidate != records[i] {
            space.decode_into(records[i], &mut old);
            space.decode_into(candidate, &mut new);
            let mut delta = 0.0;
            for k in 0..schema.len() {
                let (a, b) = (old[k], new[k]);
                if a != b {
                    let (ea, eb) = (expected[k][a], expected[k][b]);
                    let (oa, ob) = (counts[k][a], counts[k][b]);
                    delta += (oa - 1.0 - ea).abs() - (oa - ea).abs() + (ob + 1.0 - eb).abs() - (ob - eb).abs();
                }
            }
            if delta <= 0.0 || (temperature > 0.0 && threshold < (-delta / temperature).exp()) {
                for k in 0..schema.len() {
                    counts[k][old[k]] -= 1.0;
                    counts[k][new[k]] += 1.0;
                }
                records[i] = candidate;
                current += delta;
                accepted += 1;
                if current < best {
                    // resync to avoid drift from the running sum
                    current = tae_of(&counts);
                    if current < best {
                        best = current;
                        best_records.copy_from_slice(&records);
                    }
                }
                best_history.push(best);
            }
        }
        temperature *= params.cooling;
    }

    let population = SyntheticPopulation::from_records(space, best_records)?;
    Ok((
        population,
        AnnealTrace {
            initial_tae,
            attainable_tae: attainable,
            best_tae: best,
            proposals,
            accepted,
            best_history,
        },
    ))
}
