//! Joint distribution from chained conditional tables.
//!
//! Variables are added in dependency order. The seed pair (if any) starts the
//! chain from its bivariate table; every later variable multiplies the joint
//! by its conditional given its parents, or by its marginal when it has none.

use std::collections::{BTreeMap, HashMap};

use crate::distribution::{TupleDistribution, PRUNE_FLOOR};
use crate::error::{Error, Result};
use crate::graph::DependencyGraph;
use crate::schema::{Schema, TupleSpace};
use crate::tables::{ConditionalSet, ConditionalTable, MarginalSet, UnivariateTable};

/// Normalized joint over a mutually-conditioned pair from its cross-tab.
pub fn seed_joint(schema: &Schema, pair: (usize, usize), d2: &ConditionalSet) -> Result<TupleDistribution> {
    let (a, b) = pair;
    let table = d2.covering_pair(a, b).ok_or_else(|| {
        Error::MissingTable(format!(
            "no bivariate table relating `{}` and `{}`",
            schema.variable(a).name,
            schema.variable(b).name
        ))
    })?;
    let (ra, rb) = (schema.variable(a).cardinality(), schema.variable(b).cardinality());
    let space = TupleSpace::new(vec![a, b], vec![ra, rb]);
    let mut weights = BTreeMap::new();
    for x in 0..ra {
        for y in 0..rb {
            let n = if table.child == b {
                table.get(&[x], y)
            } else {
                table.get(&[y], x)
            };
            if n > 0.0 {
                weights.insert(space.index_of(&[x, y]), n);
            }
        }
    }
    if weights.is_empty() {
        return Err(Error::Table(format!(
            "bivariate table for `{}` and `{}` is all zero",
            schema.variable(a).name,
            schema.variable(b).name
        )));
    }
    TupleDistribution::normalized(space, weights)
}

/// Multiplies `joint` by p(child | parents) from `cond`.
///
/// Parent combinations carrying mass but an all-zero row fall back to
/// `fallback` (the child's marginal) when given.
pub fn extend(
    schema: &Schema,
    joint: &TupleDistribution,
    child: usize,
    cond: &ConditionalTable,
    fallback: Option<&[f64]>,
) -> Result<TupleDistribution> {
    if cond.child != child {
        return Err(Error::Table(format!(
            "table is for `{}`, not `{}`",
            schema.variable(cond.child).name,
            schema.variable(child).name
        )));
    }
    let parent_pos: Vec<usize> = cond
        .parents
        .iter()
        .map(|&p| {
            joint.space().position(p).ok_or_else(|| {
                Error::Table(format!(
                    "parent `{}` of `{}` is not yet in the joint",
                    schema.variable(p).name,
                    schema.variable(child).name
                ))
            })
        })
        .collect::<Result<_>>()?;
    let radix = cond.child_radix();
    let space = joint.space().extended(child, radix);

    // Conditional rows, normalized once per parent combination.
    let rows: Vec<Option<Vec<f64>>> = (0..cond.parent_combinations())
        .map(|combo| {
            let row = cond.row(combo);
            let total: f64 = row.iter().sum();
            (total > 0.0).then(|| row.iter().map(|c| c / total).collect())
        })
        .collect();

    let mut weights = BTreeMap::new();
    let mut parent_values = vec![0; parent_pos.len()];
    for (idx, p) in joint.iter() {
        for (slot, &pos) in parent_values.iter_mut().zip(&parent_pos) {
            *slot = joint.space().value_at(idx, pos);
        }
        let conditional = match (&rows[cond.combination_index(&parent_values)], fallback) {
            (Some(row), _) => row.as_slice(),
            (None, Some(f)) => f,
            (None, None) => {
                return Err(Error::ZeroConditionalRow {
                    child: schema.variable(child).name.clone(),
                })
            }
        };
        for (c, &q) in conditional.iter().enumerate() {
            let w = p * q;
            if w > 0.0 {
                weights.insert(idx * radix + c, w);
            }
        }
    }
    TupleDistribution::from_weights(space, weights)
}

/// Multiplies `joint` by the child's marginal, for variables without parents.
pub fn extend_independent(
    schema: &Schema,
    joint: &TupleDistribution,
    child: usize,
    marginal: &UnivariateTable,
) -> Result<TupleDistribution> {
    let probs = marginal.proportions().map_err(|_| {
        Error::Table(format!(
            "univariate table for `{}` sums to zero",
            schema.variable(child).name
        ))
    })?;
    let radix = probs.len();
    let space = joint.space().extended(child, radix);
    let mut weights = BTreeMap::new();
    for (idx, p) in joint.iter() {
        for (c, &q) in probs.iter().enumerate() {
            if q > 0.0 {
                weights.insert(idx * radix + c, p * q);
            }
        }
    }
    TupleDistribution::from_weights(space, weights)
}

/// Builds the full joint over the schema's tuple space.
pub fn run_chain(
    schema: &Schema,
    graph: &DependencyGraph,
    order: &[usize],
    d1: &MarginalSet,
    d2: &ConditionalSet,
) -> Result<TupleDistribution> {
    let mut joint = TupleDistribution::unit();
    let mut rest = order;
    if let Some((a, b)) = graph.seed_pair() {
        match order {
            [x, y, tail @ ..] if (*x, *y) == (a, b) || (*x, *y) == (b, a) => {
                joint = seed_joint(schema, (a, b), d2)?;
                rest = tail;
            }
            _ => {
                return Err(Error::Config(
                    "variable order must start with the mutually conditioned pair".into(),
                ))
            }
        }
    }
    for &v in rest {
        let parents = graph.parents(v);
        joint = if parents.is_empty() {
            extend_independent(schema, &joint, v, d1.require(schema, v)?)?
        } else {
            let cond = d2.for_child(v, parents).ok_or_else(|| {
                Error::MissingTable(format!(
                    "no conditional table for `{}` given {:?}",
                    schema.variable(v).name,
                    parents.iter().map(|&p| &schema.variable(p).name).collect::<Vec<_>>()
                ))
            })?;
            let fallback = d1.get(v).and_then(|t| t.proportions().ok());
            extend(schema, &joint, v, cond, fallback.as_deref())?
        };
    }
    let mut full = joint.reindexed(&schema.tuple_space())?;
    full.prune(PRUNE_FLOOR)?;
    apply_rules(schema, &full)
}

/// Zeroes tuples forbidden by the schema's structural rules.
///
/// The removed mass of each tuple is handed to the tuples that agree with it
/// on every variable except the rule's child, so p(child | everything else)
/// is renormalized over the allowed categories. Groups with no allowed tuple
/// lose their mass, and the result is renormalized.
pub fn apply_rules(schema: &Schema, dist: &TupleDistribution) -> Result<TupleDistribution> {
    let mut current = dist.clone();
    let space = dist.space().clone();
    for rule in schema.rules() {
        let parent = schema.require(&rule.parent)?;
        let child = schema.require(&rule.child)?;
        let (Some(ppos), Some(cpos)) = (space.position(parent), space.position(child)) else {
            return Err(Error::SpaceMismatch);
        };
        let forbidden_parent: Vec<usize> = rule
            .parent_categories
            .iter()
            .map(|c| schema.resolve_category(parent, c))
            .collect::<Result<_>>()?;
        let forbidden_child: Vec<usize> = rule
            .child_categories
            .iter()
            .map(|c| schema.resolve_category(child, c))
            .collect::<Result<_>>()?;
        let stride = space.index_of(&unit_digit(space.vars().len(), cpos));

        // group key: index with the child digit cleared
        let mut groups: HashMap<usize, (f64, f64)> = HashMap::new();
        let mut kept = BTreeMap::new();
        for (i, p) in current.iter() {
            let c = space.value_at(i, cpos);
            let key = i - c * stride;
            let entry = groups.entry(key).or_insert((0.0, 0.0));
            if forbidden_parent.contains(&space.value_at(i, ppos)) && forbidden_child.contains(&c) {
                entry.0 += p;
            } else {
                entry.1 += p;
                kept.insert(i, p);
            }
        }
        for (i, p) in kept.iter_mut() {
            let c = space.value_at(*i, cpos);
            let (removed, allowed) = groups[&(*i - c * stride)];
            if removed > 0.0 {
                *p *= (removed + allowed) / allowed;
            }
        }
        current = TupleDistribution::normalized(space.clone(), kept)?;
    }
    Ok(current)
}

fn unit_digit(len: usize, pos: usize) -> Vec<usize> {
    let mut t = vec![0; len];
    t[pos] = 1;
    t
}
