use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CopulaSampler, CopulaSpec};
use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::rounding::largest_remainder;
use crate::schema::Schema;
use crate::tables::MarginalSet;

/// Per-variable category counts proportional to the target marginals,
/// summing to `n` for every variable.
pub fn integerize_targets(schema: &Schema, d1: &MarginalSet, n: usize) -> Result<Vec<Vec<u64>>> {
    (0..schema.len())
        .map(|k| Ok(largest_remainder(&d1.proportions(schema, k)?, n as u64)))
        .collect()
}

/// Assigns one category per variable to every row of `y` so that the final
/// category counts equal `eta` exactly.
///
/// Row `i` draws variable `k` from its block of `y` restricted to categories
/// with remaining capacity. When those categories all carry zero weight the
/// draw is proportional to the remaining capacities.
pub fn match_marginals<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    blocks: &[Range<usize>],
    eta: &[Vec<u64>],
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let n = y.nrows();
    if eta.len() != blocks.len() {
        return Err(Error::DimensionMismatch {
            expected: blocks.len(),
            actual: eta.len(),
        });
    }
    if blocks.last().map_or(0, |b| b.end) != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: blocks.last().map_or(0, |b| b.end),
            actual: y.ncols(),
        });
    }
    for (k, (b, e)) in blocks.iter().zip(eta).enumerate() {
        if e.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                actual: e.len(),
            });
        }
        let total: u64 = e.iter().sum();
        if total != n as u64 {
            return Err(Error::Numerical(format!(
                "targets for variable {k} sum to {total}, expected {n}"
            )));
        }
    }

    let mut capacity: Vec<Vec<u64>> = eta.to_vec();
    let mut profiles = Vec::with_capacity(n);
    let mut weights = Vec::new();
    for i in 0..n {
        let mut profile = Vec::with_capacity(blocks.len());
        for (b, cap) in blocks.iter().zip(capacity.iter_mut()) {
            weights.clear();
            weights.extend(b.clone().zip(cap.iter()).map(|(c, &left)| {
                let w = y[(i, c)];
                if left > 0 && w.is_finite() && w > 0.0 {
                    w
                } else {
                    0.0
                }
            }));
            let mut total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                weights.clear();
                weights.extend(cap.iter().map(|&left| left as f64));
                total = weights.iter().sum();
            }
            let pick = sample_index(&weights, total, rng);
            cap[pick] -= 1;
            profile.push(pick);
        }
        profiles.push(profile);
    }
    Ok(profiles)
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut r = rng.random::<f64>() * total;
    let mut last = 0;
    for (c, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if r < w {
                return c;
            }
            r -= w;
            last = c;
        }
    }
    last
}

/// Copula estimate of the joint distribution over the full tuple space:
/// the average of `spec.iterations` empirical distributions of matched draws.
///
/// Iteration `i` uses its own ChaCha stream of `seed`, so the result does not
/// depend on how iterations are scheduled across threads.
pub fn estimate_p2(schema: &Schema, spec: &CopulaSpec, eta: &[Vec<u64>], seed: u64) -> Result<TupleDistribution> {
    let sampler = CopulaSampler::new(spec)?;
    let space = schema.tuple_space();
    let n = spec.n_draw;
    let runs = (0..spec.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it as u64);
            let y = sampler.draw_component_probs(n, &mut rng);
            let profiles = match_marginals(&y, spec.blocks(), eta, &mut rng)?;
            let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
            for p in &profiles {
                *counts.entry(space.index_of(p)).or_default() += 1;
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>>>()?;

    let scale = 1.0 / (n as f64 * spec.iterations as f64);
    let mut avg: BTreeMap<usize, f64> = BTreeMap::new();
    for counts in &runs {
        for (&t, &c) in counts {
            *avg.entry(t).or_default() += c as f64 * scale;
        }
    }
    TupleDistribution::normalized(space, avg)
}
