//! Dependency DAG over the schema variables, built from declared conditioning.
//!
//! A single mutually-conditioned pair (e.g. age given gender and gender given
//! age) is collapsed into a joint seed node at level 1. Every other variable
//! gets the longest-path depth from the roots as its level.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::tables::MarginalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderMode {
    /// Ascending entropy of the target marginal within each level.
    #[default]
    Entropy,
    /// Schema declaration order within each level.
    Declared,
}

impl std::str::FromStr for OrderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(OrderMode::Entropy),
            "declared" => Ok(OrderMode::Declared),
            other => Err(Error::Config(format!("unknown ordering mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    names: Vec<String>,
    /// Parents after collapsing the seed pair (the pair's mutual edges removed).
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    seed_pair: Option<(usize, usize)>,
    levels: Vec<usize>,
    order: Vec<usize>,
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn parents(&self, var: usize) -> &[usize] {
        &self.parents[var]
    }

    pub fn children(&self, var: usize) -> &[usize] {
        &self.children[var]
    }

    pub fn seed_pair(&self) -> Option<(usize, usize)> {
        self.seed_pair
    }

    pub fn level(&self, var: usize) -> usize {
        self.levels[var]
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// Level-respecting order with declaration order inside each level.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_independent(&self, var: usize) -> bool {
        self.parents[var].is_empty()
            && self.children[var].is_empty()
            && !self.in_seed_pair(var)
    }

    pub fn in_seed_pair(&self, var: usize) -> bool {
        matches!(self.seed_pair, Some((a, b)) if a == var || b == var)
    }

    /// Graphviz rendering: one node per variable, one edge per conditioning.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dependencies {\n  rankdir=TB;\n");
        for (v, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "  \"{name}\" [label=\"{name}\\nlevel {}\"];", self.levels[v]);
        }
        if let Some((a, b)) = self.seed_pair {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [dir=both, style=bold];",
                self.names[a], self.names[b]
            );
        }
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                let _ = writeln!(out, "  \"{}\" -> \"{}\";", self.names[p], self.names[c]);
            }
        }
        out.push_str("}\n");
        out
    }
}

pub fn build_graph(schema: &Schema) -> Result<DependencyGraph> {
    let k = schema.len();
    let names: Vec<String> = schema.variables().iter().map(|v| v.name.clone()).collect();
    let mut parents: Vec<Vec<usize>> = (0..k).map(|v| schema.parents(v).to_vec()).collect();

    let mut mutual = Vec::new();
    for c in 0..k {
        for &p in &parents[c] {
            if p > c && parents[p].contains(&c) {
                mutual.push((c, p));
            }
        }
    }
    let seed_pair = match mutual.as_slice() {
        [] => None,
        [pair] => Some(*pair),
        _ => {
            let mut involved: Vec<String> = mutual
                .iter()
                .flat_map(|&(a, b)| [names[a].clone(), names[b].clone()])
                .collect();
            involved.sort();
            involved.dedup();
            return Err(Error::Cycle(involved));
        }
    };
    if let Some((a, b)) = seed_pair {
        parents[a].retain(|&p| p != b);
        parents[b].retain(|&p| p != a);
        if !parents[a].is_empty() || !parents[b].is_empty() {
            return Err(Error::Schema(format!(
                "mutually conditioned pair (`{}`, `{}`) must not have other parents",
                names[a], names[b]
            )));
        }
    }

    let mut children = vec![Vec::new(); k];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }

    // Kahn's algorithm; levels are longest-path depths.
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut levels = vec![0usize; k];
    let mut ready: Vec<usize> = (0..k).filter(|&v| indegree[v] == 0).collect();
    let mut visited = 0;
    while let Some(v) = ready.pop() {
        visited += 1;
        levels[v] = 1 + parents[v].iter().map(|&p| levels[p]).max().unwrap_or(0);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    if visited < k {
        let mut stuck: Vec<String> = (0..k)
            .filter(|&v| indegree[v] > 0)
            .map(|v| names[v].clone())
            .collect();
        stuck.sort();
        return Err(Error::Cycle(stuck));
    }

    let mut graph = DependencyGraph {
        names,
        parents,
        children,
        seed_pair,
        levels,
        order: Vec::new(),
    };
    graph.order = sorted_order(&graph, |a, b| a.cmp(&b));
    Ok(graph)
}

/// Sorts variables by level, with the seed pair first in level 1, then by
/// `within_level`.
fn sorted_order(graph: &DependencyGraph, within_level: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..graph.len()).collect();
    order.sort_by(|&a, &b| {
        graph.levels[a]
            .cmp(&graph.levels[b])
            .then_with(|| graph.in_seed_pair(b).cmp(&graph.in_seed_pair(a)))
            .then_with(|| {
                if graph.in_seed_pair(a) && graph.in_seed_pair(b) {
                    a.cmp(&b)
                } else {
                    within_level(a, b)
                }
            })
    });
    order
}

/// Shannon entropy (natural log) of a count vector after normalization.
pub fn entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum()
}

const ENTROPY_TIE: f64 = 1e-12;

pub fn order_variables(graph: &DependencyGraph, d1: &MarginalSet, mode: OrderMode) -> Result<Vec<usize>> {
    match mode {
        OrderMode::Declared => Ok(graph.order.clone()),
        OrderMode::Entropy => {
            let mut h = Vec::with_capacity(graph.len());
            for v in 0..graph.len() {
                let table = d1.get(v).ok_or_else(|| {
                    Error::MissingTable(format!(
                        "entropy ordering needs a univariate table for `{}`",
                        graph.names[v]
                    ))
                })?;
                h.push(entropy(&table.counts));
            }
            Ok(sorted_order(graph, |a, b| {
                if (h[a] - h[b]).abs() <= ENTROPY_TIE {
                    graph.names[a].cmp(&graph.names[b])
                } else {
                    h[a].total_cmp(&h[b])
                }
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Variable;

    fn binary(names: &[&str]) -> Vec<Variable> {
        names.iter().map(|n| Variable::new(*n, &["0", "1"])).collect()
    }

    pub(crate) fn acs_schema() -> Schema {
        let cats = |n: usize| -> Vec<String> { (0..n).map(|i| i.to_string()).collect() };
        let vars = [
            ("age", 16),
            ("gender", 2),
            ("marital", 5),
            ("education", 7),
            ("employment", 3),
            ("poverty", 2),
            ("nativity", 2),
            ("mobility", 3),
        ]
        .into_iter()
        .map(|(n, r)| Variable {
            name: n.into(),
            categories: cats(r),
            source: "ACS".into(),
        })
        .collect();
        Schema::new(
            vars,
            &[
                ("age", &["gender"]),
                ("gender", &["age"]),
                ("marital", &["age", "gender"]),
                ("education", &["age", "gender"]),
                ("employment", &["age", "gender"]),
                ("poverty", &["gender", "employment"]),
                ("nativity", &["age"]),
                ("mobility", &["education"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn acs_levels() {
        let s = acs_schema();
        let g = build_graph(&s).unwrap();
        let level = |n: &str| g.level(s.index_of(n).unwrap());
        assert_eq!(level("age"), 1);
        assert_eq!(level("gender"), 1);
        for n in ["marital", "education", "employment", "nativity"] {
            assert_eq!(level(n), 2, "{n}");
        }
        assert_eq!(level("poverty"), 3);
        assert_eq!(level("mobility"), 3);
        assert_eq!(g.seed_pair(), Some((0, 1)));
        assert_eq!(&g.order()[..2], &[0, 1]);
    }

    #[test]
    fn chain_levels() {
        let s = Schema::new(binary(&["a", "b", "c"]), &[("b", &["a"]), ("c", &["b"])]).unwrap();
        let g = build_graph(&s).unwrap();
        assert_eq!(g.levels(), &[1, 2, 3]);
        assert_eq!(g.seed_pair(), None);
    }

    #[test]
    fn two_mutual_pairs_are_a_cycle() {
        let s = Schema::new(
            binary(&["a", "b", "c"]),
            &[("a", &["b"]), ("b", &["a", "c"]), ("c", &["b"])],
        )
        .unwrap();
        match build_graph(&s).unwrap_err() {
            Error::Cycle(vars) => assert_eq!(vars, ["a", "b", "c"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn longer_cycle_is_reported() {
        let s = Schema::new(
            binary(&["a", "b", "c", "d"]),
            &[("b", &["a", "d"]), ("c", &["b"]), ("d", &["c"])],
        )
        .unwrap();
        match build_graph(&s).unwrap_err() {
            Error::Cycle(vars) => assert_eq!(vars, ["b", "c", "d"]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn seed_pair_must_be_at_level_one() {
        let s = Schema::new(
            binary(&["a", "b", "c"]),
            &[("a", &["b", "c"]), ("b", &["a"])],
        )
        .unwrap();
        assert!(matches!(build_graph(&s), Err(Error::Schema(_))));
    }

    #[test]
    fn independent_variables_follow_seed_pair() {
        let s = Schema::new(
            binary(&["z", "a", "b", "c"]),
            &[("a", &["b"]), ("b", &["a"]), ("c", &["a"])],
        )
        .unwrap();
        let g = build_graph(&s).unwrap();
        assert!(g.is_independent(0));
        assert_eq!(g.level(0), 1);
        assert_eq!(g.order(), &[1, 2, 0, 3]);
    }

    fn d1_for(s: &Schema, counts: Vec<Vec<f64>>) -> MarginalSet {
        MarginalSet::from_counts(s, "t", counts).unwrap()
    }

    #[test]
    fn entropy_orders_within_level() {
        // Level-2 children of a root, with constructed marginals whose
        // entropies are roughly 0.4, 0.9, 1.2 and 1.8 nats.
        let vars = vec![
            Variable::new("root", &["0", "1"]),
            Variable::new("education", &["0", "1", "2", "3", "4", "5", "6"]),
            Variable::new("marital", &["0", "1", "2", "3", "4"]),
            Variable::new("employment", &["0", "1", "2"]),
            Variable::new("nativity", &["0", "1"]),
        ];
        let s = Schema::new(
            vars,
            &[
                ("education", &["root"]),
                ("marital", &["root"]),
                ("employment", &["root"]),
                ("nativity", &["root"]),
            ],
        )
        .unwrap();
        let counts = vec![
            vec![1.0, 1.0],
            vec![30.0, 20.0, 20.0, 10.0, 10.0, 5.0, 5.0],
            vec![55.0, 25.0, 10.0, 5.0, 5.0],
            vec![60.0, 30.0, 10.0],
            vec![87.0, 13.0],
        ];
        let h: Vec<f64> = counts.iter().map(|c| entropy(c)).collect();
        assert!((h[4] - 0.4).abs() < 0.05, "{h:?}");
        assert!((h[3] - 0.9).abs() < 0.05, "{h:?}");
        assert!((h[2] - 1.2).abs() < 0.05, "{h:?}");
        assert!((h[1] - 1.8).abs() < 0.05, "{h:?}");
        let g = build_graph(&s).unwrap();
        let order = order_variables(&g, &d1_for(&s, counts), OrderMode::Entropy).unwrap();
        let names: Vec<_> = order.iter().map(|&v| s.variable(v).name.as_str()).collect();
        assert_eq!(names, ["root", "nativity", "employment", "marital", "education"]);
    }

    #[test]
    fn equal_entropies_break_ties_by_name() {
        let s = Schema::new(binary(&["c", "b", "a"]), &[]).unwrap();
        let g = build_graph(&s).unwrap();
        let d1 = d1_for(&s, vec![vec![1.0, 3.0], vec![3.0, 1.0], vec![2.0, 6.0]]);
        assert_eq!(order_variables(&g, &d1, OrderMode::Entropy).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn declared_mode_keeps_config_order() {
        let s = Schema::new(binary(&["c", "b", "a"]), &[]).unwrap();
        let g = build_graph(&s).unwrap();
        let d1 = MarginalSet::empty(&s);
        assert_eq!(order_variables(&g, &d1, OrderMode::Declared).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn entropy_mode_requires_all_marginals() {
        let s = Schema::new(binary(&["a", "b"]), &[]).unwrap();
        let g = build_graph(&s).unwrap();
        assert!(matches!(
            order_variables(&g, &MarginalSet::empty(&s), OrderMode::Entropy),
            Err(Error::MissingTable(_))
        ));
    }

    #[test]
    fn parents_precede_children_and_build_is_deterministic() {
        let s = acs_schema();
        let g = build_graph(&s).unwrap();
        assert_eq!(g, build_graph(&s).unwrap());
        let counts: Vec<Vec<f64>> = s
            .cardinalities()
            .iter()
            .enumerate()
            .map(|(v, &r)| (0..r).map(|c| 1.0 + ((v * 7 + c * 3) % 5) as f64).collect())
            .collect();
        let d1 = d1_for(&s, counts.clone());
        for mode in [OrderMode::Entropy, OrderMode::Declared] {
            let order = order_variables(&g, &d1, mode).unwrap();
            let pos = |v: usize| order.iter().position(|&x| x == v).unwrap();
            for c in 0..s.len() {
                for &p in g.parents(c) {
                    assert!(pos(p) < pos(c));
                }
            }
        }
        // scaling a marginal leaves its entropy rank unchanged
        let mut scaled = counts;
        scaled[3].iter_mut().for_each(|c| *c *= 17.0);
        assert_eq!(
            order_variables(&g, &d1, OrderMode::Entropy).unwrap(),
            order_variables(&g, &d1_for(&s, scaled), OrderMode::Entropy).unwrap()
        );
    }

    #[test]
    fn dot_output_lists_edges() {
        let g = build_graph(&acs_schema()).unwrap();
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"employment\" -> \"poverty\""));
        assert!(dot.contains("dir=both"));
    }
}
