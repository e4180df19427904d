use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{Schema, TupleSpace};

/// Cells at or below this probability are dropped from sparse maps.
pub const PRUNE_FLOOR: f64 = 1e-15;
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Sparse probability map over a tuple space. Absent tuples have probability 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleDistribution {
    space: TupleSpace,
    probs: BTreeMap<usize, f64>,
}

impl TupleDistribution {
    /// Point mass on the single empty tuple.
    pub fn unit() -> Self {
        let mut probs = BTreeMap::new();
        probs.insert(0, 1.0);
        TupleDistribution {
            space: TupleSpace::unit(),
            probs,
        }
    }

    /// Wraps raw weights without normalizing. Zero entries are dropped.
    pub fn from_weights(space: TupleSpace, weights: BTreeMap<usize, f64>) -> Result<Self> {
        for (&i, &p) in &weights {
            if i >= space.size() {
                return Err(Error::Numerical(format!(
                    "tuple index {i} outside a space of {} tuples",
                    space.size()
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Numerical(format!("invalid probability {p} at tuple {i}")));
            }
        }
        let probs = weights.into_iter().filter(|&(_, p)| p > 0.0).collect();
        Ok(TupleDistribution { space, probs })
    }

    /// Wraps weights and rescales them to unit mass.
    pub fn normalized(space: TupleSpace, weights: BTreeMap<usize, f64>) -> Result<Self> {
        let mut d = Self::from_weights(space, weights)?;
        d.normalize()?;
        Ok(d)
    }

    pub fn uniform(space: TupleSpace) -> Self {
        let p = 1.0 / space.size() as f64;
        let probs = (0..space.size()).map(|i| (i, p)).collect();
        TupleDistribution { space, probs }
    }

    pub fn space(&self) -> &TupleSpace {
        &self.space
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs.get(&index).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (usize, f64)> + '_ {
        self.probs.iter().map(|(&i, &p)| (i, p))
    }

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn mass(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() < MASS_TOLERANCE
    }

    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Numerical(format!("cannot normalize a distribution of mass {mass}")));
        }
        self.probs.values_mut().for_each(|p| *p /= mass);
        Ok(())
    }

    /// Drops cells at or below `floor` and renormalizes.
    pub fn prune(&mut self, floor: f64) -> Result<()> {
        self.probs.retain(|_, p| *p > floor);
        self.normalize()
    }

    /// Probability of each category of the variable at tuple position `pos`.
    pub fn marginal(&self, pos: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space.radices()[pos]];
        for (&i, &p) in &self.probs {
            out[self.space.value_at(i, pos)] += p;
        }
        out
    }

    /// Two-way table of the variables at positions `a` and `b`.
    pub fn pair_table(&self, a: usize, b: usize) -> Vec<Vec<f64>> {
        let r = self.space.radices();
        let mut out = vec![vec![0.0; r[b]]; r[a]];
        for (&i, &p) in &self.probs {
            out[self.space.value_at(i, a)][self.space.value_at(i, b)] += p;
        }
        out
    }

    /// Re-indexes into `target`, which must cover the same variables.
    pub fn reindexed(&self, target: &TupleSpace) -> Result<Self> {
        if target.vars().len() != self.space.vars().len() {
            return Err(Error::SpaceMismatch);
        }
        let mut map = Vec::with_capacity(target.vars().len());
        for &v in target.vars() {
            let pos = self.space.position(v).ok_or(Error::SpaceMismatch)?;
            if self.space.radices()[pos] != target.radices()[map.len()] {
                return Err(Error::SpaceMismatch);
            }
            map.push(pos);
        }
        let mut src = vec![0; map.len()];
        let mut dst = vec![0; map.len()];
        let probs = self
            .probs
            .iter()
            .map(|(&i, &p)| {
                self.space.decode_into(i, &mut src);
                for (k, &pos) in map.iter().enumerate() {
                    dst[k] = src[pos];
                }
                (target.index_of(&dst), p)
            })
            .collect();
        Ok(TupleDistribution {
            space: target.clone(),
            probs,
        })
    }

    pub fn into_map(self) -> BTreeMap<usize, f64> {
        self.probs
    }

    /// Writes `tuple_index,<categories...>,probability` for every support tuple.
    pub fn save_csv(&self, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        self.save_columns(path, schema, &[], |_, _| Vec::new())
    }

    /// Like [`save_csv`](Self::save_csv) with extra numeric columns per tuple.
    pub fn save_columns(
        &self,
        path: impl AsRef<Path>,
        schema: &Schema,
        extra: &[&str],
        values: impl Fn(usize, f64) -> Vec<f64>,
    ) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut header = vec!["tuple_index".to_string()];
        header.extend(self.space.vars().iter().map(|&v| schema.variable(v).name.clone()));
        header.push("probability".into());
        header.extend(extra.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(|e| Error::parse(path, e))?;
        let mut t = vec![0; self.space.vars().len()];
        for (&i, &p) in &self.probs {
            self.space.decode_into(i, &mut t);
            let mut rec = vec![i.to_string()];
            rec.extend(
                self.space
                    .vars()
                    .iter()
                    .zip(&t)
                    .map(|(&v, &c)| schema.variable(v).categories[c].clone()),
            );
            rec.push(p.to_string());
            rec.extend(values(i, p).into_iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a distribution over the schema's full tuple space from a CSV
    /// with one column per variable and a `probability` column. Other
    /// columns are ignored; repeated tuples accumulate; the result is
    /// renormalized.
    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e))?;
        let header = r.headers().map_err(|e| Error::parse(path, e))?.clone();
        let column = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::parse(path, format!("missing column `{name}`")))
        };
        let columns = schema
            .variables()
            .iter()
            .map(|v| column(&v.name))
            .collect::<Result<Vec<_>>>()?;
        let prob = column("probability")?;
        let space = schema.tuple_space();
        let mut t = vec![0; schema.len()];
        let mut weights = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            for (v, &c) in columns.iter().enumerate() {
                t[v] = schema.resolve_category(v, rec.get(c).unwrap_or(""))?;
            }
            let raw = rec.get(prob).unwrap_or("");
            let p: f64 = raw
                .parse()
                .ok()
                .filter(|p: &f64| p.is_finite() && *p >= 0.0)
                .ok_or_else(|| Error::parse(path, format!("`{raw}` is not a probability")))?;
            *weights.entry(space.index_of(&t)).or_insert(0.0) += p;
        }
        Self::normalized(space, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginals_and_pair_tables() {
        let space = TupleSpace::new(vec![0, 1], vec![2, 2]);
        let d = TupleDistribution::normalized(
            space,
            [(0, 1.0), (1, 3.0), (3, 4.0)].into_iter().collect(),
        )
        .unwrap();
        assert_eq!(d.marginal(0), vec![0.5, 0.5]);
        assert_eq!(d.marginal(1), vec![0.125, 0.875]);
        assert_eq!(d.pair_table(0, 1), vec![vec![0.125, 0.375], vec![0.0, 0.5]]);
    }

    #[test]
    fn reindex_swaps_digit_order() {
        let space = TupleSpace::new(vec![1, 0], vec![3, 2]);
        let d = TupleDistribution::normalized(space.clone(), [(space.index_of(&[2, 1]), 1.0)].into_iter().collect())
            .unwrap();
        let target = TupleSpace::new(vec![0, 1], vec![2, 3]);
        let r = d.reindexed(&target).unwrap();
        assert_eq!(r.get(target.index_of(&[1, 2])), 1.0);
        assert!(d.reindexed(&TupleSpace::new(vec![0, 2], vec![2, 3])).is_err());
    }

    #[test]
    fn prune_drops_tiny_cells() {
        let space = TupleSpace::new(vec![0], vec![3]);
        let mut d = TupleDistribution::from_weights(
            space,
            [(0, 0.5), (1, 0.5), (2, 1e-16)].into_iter().collect(),
        )
        .unwrap();
        d.prune(PRUNE_FLOOR).unwrap();
        assert_eq!(d.support_len(), 2);
        assert!(d.is_normalized());
    }

    #[test]
    fn rejects_invalid_entries() {
        let space = TupleSpace::new(vec![0], vec![2]);
        assert!(TupleDistribution::from_weights(space.clone(), [(2, 1.0)].into_iter().collect()).is_err());
        assert!(TupleDistribution::from_weights(space.clone(), [(0, -1.0)].into_iter().collect()).is_err());
        assert!(TupleDistribution::normalized(space, BTreeMap::new()).is_err());
    }
}
