//! Integer populations expanded from tuple weights.

use std::collections::BTreeMap;
use std::path::Path;

use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::rounding::largest_remainder;
use crate::schema::{Schema, TupleSpace};

/// Individual records stored as tuple prevalences over the full tuple space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPopulation {
    space: TupleSpace,
    prevalence: BTreeMap<usize, u64>,
    size: u64,
}

impl SyntheticPopulation {
    pub fn from_counts(space: TupleSpace, counts: BTreeMap<usize, u64>) -> Result<Self> {
        if let Some((&i, _)) = counts.range(space.size()..).next() {
            return Err(Error::Numerical(format!("tuple index {i} outside the tuple space")));
        }
        let prevalence: BTreeMap<usize, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        let size = prevalence.values().sum();
        Ok(SyntheticPopulation { space, prevalence, size })
    }

    /// Tallies tuple indices, one per individual.
    pub fn from_records(space: TupleSpace, records: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for r in records {
            *counts.entry(r).or_insert(0u64) += 1;
        }
        Self::from_counts(space, counts)
    }

    pub fn space(&self) -> &TupleSpace {
        &self.space
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn prevalence(&self) -> &BTreeMap<usize, u64> {
        &self.prevalence
    }

    /// Tuple index of every individual, in ascending tuple order.
    pub fn records(&self) -> impl Iterator<Item = usize> + '_ {
        self.prevalence
            .iter()
            .flat_map(|(&t, &c)| std::iter::repeat_n(t, c as usize))
    }

    /// Category counts for every variable of the space, in space order.
    pub fn marginal_counts(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.space.radices().iter().map(|&r| vec![0.0; r]).collect();
        for (&t, &c) in &self.prevalence {
            for (pos, counts) in out.iter_mut().enumerate() {
                counts[self.space.value_at(t, pos)] += c as f64;
            }
        }
        out
    }

    /// Empirical distribution of the records.
    pub fn distribution(&self) -> Result<TupleDistribution> {
        let map = self.prevalence.iter().map(|(&t, &c)| (t, c as f64)).collect();
        TupleDistribution::normalized(self.space.clone(), map)
    }

    /// One row per individual with a column per variable.
    pub fn save_csv(&self, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let vars = self.space.vars();
        w.write_record(vars.iter().map(|&v| schema.variable(v).name.as_str()))
            .map_err(|e| Error::parse(path, e))?;
        let mut t = vec![0; vars.len()];
        for (&idx, &c) in &self.prevalence {
            self.space.decode_into(idx, &mut t);
            let row: Vec<&str> = vars
                .iter()
                .zip(&t)
                .map(|(&v, &x)| schema.variable(v).categories[x].as_str())
                .collect();
            for _ in 0..c {
                w.write_record(&row).map_err(|e| Error::parse(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a file written by [`save_csv`](Self::save_csv). Columns may come
    /// in any order but must name every schema variable.
    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let header = r.headers().map_err(|e| Error::parse(path, e))?.clone();
        let mut columns = vec![usize::MAX; schema.len()];
        for (col, name) in header.iter().enumerate() {
            let v = schema
                .index_of(name.trim())
                .ok_or_else(|| Error::parse(path, format!("unknown variable column {name:?}")))?;
            columns[v] = col;
        }
        if let Some(v) = columns.iter().position(|&c| c == usize::MAX) {
            return Err(Error::parse(path, format!("missing column for {}", schema.variable(v).name)));
        }
        let space = schema.tuple_space();
        let mut t = vec![0; schema.len()];
        let mut counts = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            for (v, &col) in columns.iter().enumerate() {
                let label = rec.get(col).unwrap_or("").trim();
                t[v] = schema.resolve_category(v, label)?;
            }
            *counts.entry(space.index_of(&t)).or_insert(0u64) += 1;
        }
        Self::from_counts(space, counts)
    }
}

/// Replicates each tuple of `w` by its largest-remainder share of `n_pop`.
pub fn expand(w: &TupleDistribution, n_pop: u64) -> Result<SyntheticPopulation> {
    if n_pop == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    let (tuples, weights): (Vec<usize>, Vec<f64>) = w.iter().unzip();
    if !weights.iter().any(|&p| p > 0.0) {
        return Err(Error::Numerical("cannot expand an empty distribution".into()));
    }
    let counts = largest_remainder(&weights, n_pop);
    SyntheticPopulation::from_counts(w.space().clone(), tuples.into_iter().zip(counts).collect())
}
