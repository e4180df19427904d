//! Prior fusion, τ-thresholding and minimum cross-entropy refinement under
//! the target marginals.

pub mod lbfgs;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::schema::{Schema, TupleSpace};
use crate::tables::MarginalSet;

pub use lbfgs::{LbfgsOptions, Minimum};

/// Exponents are clipped to this magnitude before `exp`.
pub const EXP_CLIP: f64 = 500.0;

/// Tuples per chunk in the parallel dual evaluation. Fixed so that the
/// floating-point summation order does not depend on the thread count.
const CHUNK: usize = 2048;

/// Average of two priors over the union of their supports.
pub fn fuse_priors(p1: &TupleDistribution, p2: &TupleDistribution) -> Result<TupleDistribution> {
    if p1.space() != p2.space() {
        return Err(Error::SpaceMismatch);
    }
    let mut map: BTreeMap<usize, f64> = p1.iter().map(|(i, p)| (i, 0.5 * p)).collect();
    for (i, p) in p2.iter() {
        *map.entry(i).or_default() += 0.5 * p;
    }
    TupleDistribution::normalized(p1.space().clone(), map)
}

/// Default threshold: one expected individual in a population of `n_pop`.
pub fn default_tau(n_pop: u64) -> f64 {
    1.0 / n_pop as f64
}

/// Drops tuples with probability below `tau` and renormalizes the rest.
pub fn threshold(p: &TupleDistribution, tau: f64) -> Result<TupleDistribution> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("threshold {tau} must be nonnegative")));
    }
    let kept: BTreeMap<usize, f64> = p.iter().filter(|&(_, q)| q >= tau).collect();
    if kept.is_empty() {
        return Err(Error::EmptySupport { tau });
    }
    TupleDistribution::normalized(p.space().clone(), kept)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub variable: usize,
    pub category: usize,
    pub target: f64,
}

/// Indicator constraints `Σ_i w_i 1(x_k^i = c) = η`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    /// Validates ranges, rejects repeated (variable, category) pairs and
    /// checks that fully constrained variables have targets summing to 1.
    pub fn new(schema: &Schema, constraints: Vec<Constraint>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for c in &constraints {
            if c.variable >= schema.len() || c.category >= schema.variable(c.variable).cardinality() {
                return Err(Error::Table(format!(
                    "constraint on variable {} category {} is outside the schema",
                    c.variable, c.category
                )));
            }
            if !(0.0..=1.0).contains(&c.target) {
                return Err(Error::Table(format!("constraint target {} outside [0, 1]", c.target)));
            }
            if seen.insert((c.variable, c.category), c.target).is_some() {
                let v = schema.variable(c.variable);
                return Err(Error::Table(format!(
                    "conflicting constraints on {}:{}",
                    v.name, v.categories[c.category]
                )));
            }
        }
        for k in 0..schema.len() {
            let targets: Vec<f64> = seen.range((k, 0)..(k + 1, 0)).map(|(_, &t)| t).collect();
            if targets.len() == schema.variable(k).cardinality() {
                let sum: f64 = targets.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Table(format!(
                        "targets for {} sum to {sum}, not 1",
                        schema.variable(k).name
                    )));
                }
            }
        }
        Ok(ConstraintSet { constraints })
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn targets(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.target).collect()
    }

    /// `Σ_i w_i f_j(T_i)` for every constraint.
    pub fn expectations(&self, w: &TupleDistribution) -> Vec<f64> {
        let space = w.space();
        let mut out = vec![0.0; self.len()];
        for (j, c) in self.constraints.iter().enumerate() {
            let Some(pos) = space.position(c.variable) else { continue };
            out[j] = w.iter().filter(|&(i, _)| space.value_at(i, pos) == c.category).map(|(_, p)| p).sum();
        }
        out
    }

    /// Largest absolute gap between `w`'s expectations and the targets.
    pub fn max_violation(&self, w: &TupleDistribution) -> f64 {
        self.expectations(w)
            .iter()
            .zip(&self.constraints)
            .fold(0.0f64, |m, (e, c)| m.max((e - c.target).abs()))
    }
}

/// One constraint per (variable, category), with the target's proportions.
pub fn build_constraints(schema: &Schema, d1: &MarginalSet) -> Result<ConstraintSet> {
    let mut cs = Vec::with_capacity(schema.component_count());
    for k in 0..schema.len() {
        for (category, target) in d1.proportions(schema, k)?.into_iter().enumerate() {
            cs.push(Constraint {
                variable: k,
                category,
                target,
            });
        }
    }
    ConstraintSet::new(schema, cs)
}

/// The dual of the minimum cross-entropy problem over a fixed prior support.
///
/// `L(θ) = -Σ_j θ_j η_j + Σ_i u_i exp(Σ_j f_j(T_i) θ_j - 1)`
#[derive(Debug, Clone)]
pub struct DualProblem {
    space: TupleSpace,
    tuples: Vec<usize>,
    prior: Vec<f64>,
    /// Constraint indices active on each tuple, `offsets[i]..offsets[i + 1]`.
    active: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<f64>,
}

impl DualProblem {
    /// Tuples with zero prior are left out; they keep zero weight.
    pub fn new(u: &TupleDistribution, constraints: &ConstraintSet) -> Result<Self> {
        let space = u.space().clone();
        let mut positions = Vec::with_capacity(constraints.len());
        for c in constraints.constraints() {
            positions.push(space.position(c.variable).ok_or(Error::SpaceMismatch)?);
        }
        let mut tuples = Vec::with_capacity(u.support_len());
        let mut prior = Vec::with_capacity(u.support_len());
        let mut active = Vec::new();
        let mut offsets = vec![0];
        for (i, p) in u.iter() {
            if p <= 0.0 {
                continue;
            }
            tuples.push(i);
            prior.push(p);
            for (j, c) in constraints.constraints().iter().enumerate() {
                if space.value_at(i, positions[j]) == c.category {
                    active.push(j as u32);
                }
            }
            offsets.push(active.len());
        }
        if tuples.is_empty() {
            return Err(Error::EmptySupport { tau: 0.0 });
        }
        Ok(DualProblem {
            space,
            tuples,
            prior,
            active,
            offsets,
            targets: constraints.targets(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.targets.len()
    }

    pub fn support_len(&self) -> usize {
        self.tuples.len()
    }

    fn exponent(&self, i: usize, theta: &[f64]) -> f64 {
        let s: f64 = self.active[self.offsets[i]..self.offsets[i + 1]]
            .iter()
            .map(|&j| theta[j as usize])
            .sum();
        (s - 1.0).clamp(-EXP_CLIP, EXP_CLIP)
    }

    /// Dual value at `theta`; the gradient is written into `grad`.
    pub fn evaluate(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let j = self.dimension();
        let n = self.tuples.len();
        let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut value = 0.0;
                let mut g = vec![0.0; j];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let w = self.prior[i] * self.exponent(i, theta).exp();
                    value += w;
                    for &a in &self.active[self.offsets[i]..self.offsets[i + 1]] {
                        g[a as usize] += w;
                    }
                }
                (value, g)
            })
            .collect();
        let mut value = -theta.iter().zip(&self.targets).map(|(t, e)| t * e).sum::<f64>();
        grad.iter_mut().zip(&self.targets).for_each(|(g, e)| *g = -e);
        for (v, g) in &partials {
            value += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        value
    }

    /// `(L(θ), ∇L(θ))`.
    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.dimension()];
        let v = self.evaluate(theta, &mut g);
        (v, g)
    }

    /// `w_i = u_i exp(Σ_j f_j(T_i) θ_j - 1)`, not renormalized.
    pub fn weights(&self, theta: &[f64]) -> TupleDistribution {
        let map = (0..self.tuples.len())
            .map(|i| (self.tuples[i], self.prior[i] * self.exponent(i, theta).exp()))
            .collect();
        TupleDistribution::from_weights(self.space.clone(), map).expect("weights are finite and nonnegative")
    }
}

/// Dual value and gradient for a prior and constraint set.
pub fn dual_objective(theta: &[f64], u: &TupleDistribution, constraints: &ConstraintSet) -> Result<(f64, Vec<f64>)> {
    let problem = DualProblem::new(u, constraints)?;
    if theta.len() != problem.dimension() {
        return Err(Error::DimensionMismatch {
            expected: problem.dimension(),
            actual: theta.len(),
        });
    }
    Ok(problem.value_and_gradient(theta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub max_violation: f64,
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    /// Final weights, renormalized to unit mass.
    pub weights: TupleDistribution,
    /// Multipliers of the constraints that entered the optimization, indexed
    /// like [`Solution::active`].
    pub theta: Vec<f64>,
    /// Indices into the original constraint set that were optimized.
    pub active: Vec<usize>,
    /// Variables whose targets were rescaled because some positive-target
    /// category had no prior support.
    pub rescaled_variables: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest gap between the final weights' marginals and the original targets.
    pub max_violation: f64,
    pub log: Vec<LogRow>,
}

impl Solution {
    /// Writes `iteration,objective,grad_norm,max_violation`.
    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["iteration", "objective", "grad_norm", "max_violation"])
            .map_err(|e| Error::parse(path, e))?;
        for r in &self.log {
            w.write_record([
                r.iteration.to_string(),
                r.objective.to_string(),
                r.grad_norm.to_string(),
                r.max_violation.to_string(),
            ])
            .map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Minimum cross-entropy weights relative to `u` under `constraints`.
///
/// Before optimizing, tuples carrying a zero-target category are removed
/// (the optimum gives them zero weight) and those constraints dropped.
/// Positive-target categories absent from the remaining support cannot be
/// met; they are dropped and the variable's remaining targets rescaled to
/// sum to 1 so that the dual stays bounded.
pub fn solve(u: &TupleDistribution, constraints: &ConstraintSet, opts: &LbfgsOptions) -> Result<Solution> {
    let space = u.space();
    let cs = constraints.constraints();
    let positions: Vec<usize> = cs
        .iter()
        .map(|c| space.position(c.variable).ok_or(Error::SpaceMismatch))
        .collect::<Result<_>>()?;

    let zero: Vec<usize> = (0..cs.len()).filter(|&j| cs[j].target <= 0.0).collect();
    let support: BTreeMap<usize, f64> = u
        .iter()
        .filter(|&(i, p)| p > 0.0 && zero.iter().all(|&j| space.value_at(i, positions[j]) != cs[j].category))
        .collect();
    if support.is_empty() {
        return Err(Error::EmptySupport { tau: 0.0 });
    }

    let mut present = vec![false; cs.len()];
    for &i in support.keys() {
        for (j, c) in cs.iter().enumerate() {
            if space.value_at(i, positions[j]) == c.category {
                present[j] = true;
            }
        }
    }
    let active: Vec<usize> = (0..cs.len()).filter(|&j| cs[j].target > 0.0 && present[j]).collect();
    let mut rescaled_variables = Vec::new();
    let mut reduced = Vec::with_capacity(active.len());
    for &j in &active {
        let var = cs[j].variable;
        let lost = (0..cs.len()).any(|m| cs[m].variable == var && cs[m].target > 0.0 && !present[m]);
        let mut target = cs[j].target;
        if lost {
            let kept: f64 = active.iter().filter(|&&m| cs[m].variable == var).map(|&m| cs[m].target).sum();
            target /= kept;
            if !rescaled_variables.contains(&var) {
                rescaled_variables.push(var);
            }
        }
        reduced.push(Constraint {
            variable: var,
            category: cs[j].category,
            target,
        });
    }

    let prior = TupleDistribution::normalized(space.clone(), support)?;
    let reduced = ConstraintSet {
        constraints: reduced,
    };
    let problem = DualProblem::new(&prior, &reduced)?;
    let min = lbfgs::minimize(|t, g| problem.evaluate(t, g), &vec![0.0; problem.dimension()], opts);

    let mut weights = problem.weights(&min.x);
    weights.normalize()?;
    let log = min
        .history
        .iter()
        .map(|it| LogRow {
            iteration: it.iteration,
            objective: it.value,
            grad_norm: it.grad_norm,
            max_violation: it.grad_max,
        })
        .collect();
    Ok(Solution {
        max_violation: constraints.max_violation(&weights),
        weights,
        theta: min.x,
        active,
        rescaled_variables,
        converged: min.converged,
        iterations: min.iterations,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Variable;

    fn two_binary() -> Schema {
        Schema::new(vec![Variable::new("a", &["0", "1"]), Variable::new("b", &["0", "1"])], &[]).unwrap()
    }

    fn dist(space: &TupleSpace, entries: &[(usize, f64)]) -> TupleDistribution {
        TupleDistribution::from_weights(space.clone(), entries.iter().copied().collect()).unwrap()
    }

    #[test]
    fn fusion_examples() {
        let space = TupleSpace::new(vec![0, 1], vec![2, 2]);
        let p1 = dist(&space, &[(0, 0.5), (1, 0.5)]);
        let p2 = dist(&space, &[(2, 0.5), (3, 0.5)]);
        assert_eq!(fuse_priors(&p1, &p1).unwrap(), p1);
        let p = fuse_priors(&p1, &p2).unwrap();
        assert!((0..4).all(|i| (p.get(i) - 0.25).abs() < 1e-15));
        let q1 = dist(&space, &[(0, 0.7), (3, 0.3)]);
        let shrunk = fuse_priors(&q1, &TupleDistribution::uniform(space.clone())).unwrap();
        assert!((shrunk.get(0) - (0.35 + 0.125)).abs() < 1e-15);
        assert!((shrunk.get(1) - 0.125).abs() < 1e-15);
        let other = TupleSpace::new(vec![0], vec![2]);
        assert!(fuse_priors(&p1, &TupleDistribution::uniform(other)).is_err());
    }

    #[test]
    fn threshold_examples() {
        let space = TupleSpace::new(vec![0], vec![4]);
        let p = dist(&space, &[(0, 0.5), (1, 0.3), (2, 0.2), (3, 1e-9)]);
        let u = threshold(&p, default_tau(100)).unwrap();
        assert_eq!(u.support_len(), 3);
        assert!((u.get(0) - 0.5).abs() < 1e-15 && (u.get(2) - 0.2).abs() < 1e-15);
        let same = threshold(&p, 0.0).unwrap();
        assert_eq!(same.support_len(), 4);
        assert!(same.iter().all(|(i, q)| (q - p.get(i)).abs() < 1e-9));
        assert!(matches!(threshold(&p, 0.6), Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn constraint_examples() {
        let s = two_binary();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![510.0, 490.0], vec![0.0, 5.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        assert_eq!(cs.len(), 4);
        assert_eq!(cs.targets(), vec![0.51, 0.49, 0.0, 1.0]);
        let dup = vec![
            Constraint { variable: 0, category: 0, target: 1.0 },
            Constraint { variable: 0, category: 0, target: 0.0 },
        ];
        assert!(ConstraintSet::new(&s, dup).is_err());
        let bad_sum = vec![
            Constraint { variable: 0, category: 0, target: 0.5 },
            Constraint { variable: 0, category: 1, target: 0.6 },
        ];
        assert!(ConstraintSet::new(&s, bad_sum).is_err());
    }

    #[test]
    fn dual_at_zero() {
        let s = two_binary();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![3.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        let u = dist(&s.tuple_space(), &[(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)]);
        let (v, g) = dual_objective(&[0.0; 4], &u, &cs).unwrap();
        let e = (-1.0f64).exp();
        assert!((v - e).abs() < 1e-15);
        // u's marginals: a = (0.3, 0.7), b = (0.4, 0.6)
        let expected = [-0.75 + 0.3 * e, -0.25 + 0.7 * e, -0.5 + 0.4 * e, -0.5 + 0.6 * e];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_tuple_stationarity() {
        let s = two_binary();
        let cs = ConstraintSet::new(&s, vec![Constraint { variable: 0, category: 0, target: 1.0 }]).unwrap();
        let u = dist(&s.tuple_space(), &[(0, 0.25)]);
        let theta = 1.0 - 0.25f64.ln();
        let (_, g) = dual_objective(&[theta], &u, &cs).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn fixed_point_when_prior_satisfies_targets() {
        let s = two_binary();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![3.0, 7.0], vec![4.0, 6.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        let u = dist(&s.tuple_space(), &[(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)]);
        let sol = solve(&u, &cs, &LbfgsOptions::default()).unwrap();
        assert!(sol.max_violation < 1e-6);
        for i in 0..4 {
            assert!((sol.weights.get(i) - u.get(i)).abs() < 1e-6);
        }
    }

    #[test]
    fn two_atoms_forced() {
        let s = two_binary();
        let cs = ConstraintSet::new(
            &s,
            vec![
                Constraint { variable: 1, category: 0, target: 0.7 },
                Constraint { variable: 1, category: 1, target: 0.3 },
            ],
        )
        .unwrap();
        let u = dist(&s.tuple_space(), &[(0, 0.5), (1, 0.5)]);
        let sol = solve(&u, &cs, &LbfgsOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.weights.get(0) - 0.7).abs() < 1e-8);
        assert!((sol.weights.get(1) - 0.3).abs() < 1e-8);
    }

    #[test]
    fn uniform_prior_gives_product() {
        let s = Schema::new(vec![Variable::new("a", &["0", "1", "2"]), Variable::new("b", &["0", "1"])], &[]).unwrap();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![2.0, 3.0, 5.0], vec![1.0, 3.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        let space = s.tuple_space();
        let sol = solve(&TupleDistribution::uniform(space.clone()), &cs, &LbfgsOptions::default()).unwrap();
        let (pa, pb) = ([0.2, 0.3, 0.5], [0.25, 0.75]);
        for x in 0..3 {
            for y in 0..2 {
                assert!((sol.weights.get(space.index_of(&[x, y])) - pa[x] * pb[y]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_targets_remove_tuples() {
        let s = two_binary();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![0.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        let space = s.tuple_space();
        let sol = solve(&TupleDistribution::uniform(space.clone()), &cs, &LbfgsOptions::default()).unwrap();
        assert_eq!(sol.weights.get(0), 0.0);
        assert_eq!(sol.weights.get(1), 0.0);
        assert!((sol.weights.get(2) - 0.25).abs() < 1e-8);
        assert!(sol.max_violation < 1e-8);
    }

    #[test]
    fn unsupported_category_rescales_its_variable() {
        let s = Schema::new(vec![Variable::new("a", &["0", "1", "2"]), Variable::new("b", &["0", "1"])], &[]).unwrap();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![2.0, 2.0, 6.0], vec![1.0, 1.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        let space = s.tuple_space();
        // no tuple with a = 2
        let u = dist(
            &space,
            &[(space.index_of(&[0, 0]), 0.4), (space.index_of(&[0, 1]), 0.1), (space.index_of(&[1, 1]), 0.5)],
        );
        let sol = solve(&u, &cs, &LbfgsOptions::default()).unwrap();
        assert_eq!(sol.rescaled_variables, vec![0]);
        assert!((sol.weights.marginal(0)[0] - 0.5).abs() < 1e-6);
        assert!((sol.weights.marginal(1)[0] - 0.5).abs() < 1e-6);
        assert!((sol.max_violation - 0.6).abs() < 1e-6);
    }

    #[test]
    fn convergence_log_is_written() {
        let s = two_binary();
        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![1.0, 3.0], vec![2.0, 3.0]]).unwrap();
        let cs = build_constraints(&s, &d1).unwrap();
        let sol = solve(&TupleDistribution::uniform(s.tuple_space()), &cs, &LbfgsOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        sol.save_log(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("iteration,objective,grad_norm,max_violation\n"));
        assert_eq!(text.lines().count(), sol.log.len() + 1);
    }
}
