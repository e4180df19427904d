//! Aggregate frequency tables for the target and auxiliary locations.
//!
//! * univariate counts for the target (`variable,category,count`)
//! * conditional cross-tabs for the target
//!   (`child,parent1,parent2,p1_cat,p2_cat,child_cat,count`, `-` for no second parent)
//! * per-location component counts for auxiliary locations
//!   (`location,<var>:<cat>,...`)

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::schema::Schema;

const ABSENT: &str = "-";

fn parse_count(raw: &str, path: &Path) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("`{raw}` is not a number")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::parse(path, format!("count `{raw}` must be a nonnegative decimal")));
    }
    Ok(v)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Category counts of one variable at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateTable {
    pub variable: usize,
    pub location: String,
    pub counts: Vec<f64>,
}

impl UnivariateTable {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn proportions(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::Table(format!(
                "univariate table for variable #{} sums to zero",
                self.variable
            )));
        }
        Ok(self.counts.iter().map(|c| c / total).collect())
    }
}

/// The target location's univariate tables, at most one per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    tables: Vec<Option<UnivariateTable>>,
}

impl MarginalSet {
    pub fn empty(schema: &Schema) -> Self {
        MarginalSet {
            tables: vec![None; schema.len()],
        }
    }

    /// Builds a complete set from per-variable counts in schema order.
    pub fn from_counts(schema: &Schema, location: &str, counts: Vec<Vec<f64>>) -> Result<Self> {
        if counts.len() != schema.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                actual: counts.len(),
            });
        }
        let mut set = Self::empty(schema);
        for (v, c) in counts.into_iter().enumerate() {
            set.insert(
                schema,
                UnivariateTable {
                    variable: v,
                    location: location.to_string(),
                    counts: c,
                },
            )?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, schema: &Schema, table: UnivariateTable) -> Result<()> {
        let var = schema.variable(table.variable);
        if table.counts.len() != var.cardinality() {
            return Err(Error::Table(format!(
                "table for `{}` has {} counts, expected {}",
                var.name,
                table.counts.len(),
                var.cardinality()
            )));
        }
        if table.counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Table(format!("table for `{}` has a negative count", var.name)));
        }
        let slot = table.variable;
        self.tables[slot] = Some(table);
        Ok(())
    }

    pub fn get(&self, var: usize) -> Option<&UnivariateTable> {
        self.tables.get(var).and_then(Option::as_ref)
    }

    pub fn require(&self, schema: &Schema, var: usize) -> Result<&UnivariateTable> {
        self.get(var).ok_or_else(|| {
            Error::MissingTable(format!("no univariate table for `{}`", schema.variable(var).name))
        })
    }

    pub fn proportions(&self, schema: &Schema, var: usize) -> Result<Vec<f64>> {
        self.require(schema, var)?.proportions().map_err(|_| {
            Error::Table(format!(
                "univariate table for `{}` sums to zero",
                schema.variable(var).name
            ))
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &UnivariateTable> {
        self.tables.iter().flatten()
    }

    pub fn load(path: impl AsRef<Path>, schema: &Schema, location: &str) -> Result<Self> {
        let path = path.as_ref();
        #[derive(Deserialize)]
        struct Row {
            variable: String,
            category: String,
            count: String,
        }
        let mut counts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in csv_reader(path)?.deserialize::<Row>() {
            let row = row.map_err(|e| Error::parse(path, e))?;
            let v = schema.require(&row.variable)?;
            let c = schema.resolve_category(v, &row.category)?;
            let n = parse_count(&row.count, path)?;
            counts
                .entry(v)
                .or_insert_with(|| vec![0.0; schema.variable(v).cardinality()])[c] += n;
        }
        let mut set = Self::empty(schema);
        for (v, counts) in counts {
            set.insert(
                schema,
                UnivariateTable {
                    variable: v,
                    location: location.to_string(),
                    counts,
                },
            )?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        w.write_record(["variable", "category", "count"])
            .map_err(|e| Error::parse(path, e))?;
        for t in self.iter() {
            let var = schema.variable(t.variable);
            for (label, n) in var.categories.iter().zip(&t.counts) {
                w.write_record([var.name.as_str(), label.as_str(), &n.to_string()])
                    .map_err(|e| Error::parse(path, e))?;
            }
        }
        flush(w, path)
    }
}

/// Joint counts of a child variable with one or two parents, laid out
/// lexicographically over `(parents..., child)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    pub child: usize,
    pub parents: Vec<usize>,
    parent_radices: Vec<usize>,
    child_radix: usize,
    counts: Vec<f64>,
}

impl ConditionalTable {
    pub fn zeros(schema: &Schema, child: usize, parents: Vec<usize>) -> Result<Self> {
        if parents.is_empty() || parents.len() > 2 {
            return Err(Error::Table(format!(
                "conditional table for `{}` needs one or two parents",
                schema.variable(child).name
            )));
        }
        if parents.contains(&child) || (parents.len() == 2 && parents[0] == parents[1]) {
            return Err(Error::Table(format!(
                "conditional table for `{}` repeats a variable",
                schema.variable(child).name
            )));
        }
        let parent_radices: Vec<usize> = parents.iter().map(|&p| schema.variable(p).cardinality()).collect();
        let child_radix = schema.variable(child).cardinality();
        let cells = parent_radices.iter().product::<usize>() * child_radix;
        Ok(ConditionalTable {
            child,
            parents,
            parent_radices,
            child_radix,
            counts: vec![0.0; cells],
        })
    }

    pub fn parent_combinations(&self) -> usize {
        self.parent_radices.iter().product()
    }

    pub fn child_radix(&self) -> usize {
        self.child_radix
    }

    pub fn parent_radices(&self) -> &[usize] {
        &self.parent_radices
    }

    /// Flat index of a parent combination given parent categories in table order.
    pub fn combination_index(&self, parent_values: &[usize]) -> usize {
        parent_values
            .iter()
            .zip(&self.parent_radices)
            .fold(0, |acc, (&x, &r)| acc * r + x)
    }

    pub fn row(&self, combination: usize) -> &[f64] {
        let start = combination * self.child_radix;
        &self.counts[start..start + self.child_radix]
    }

    pub fn get(&self, parent_values: &[usize], child_value: usize) -> f64 {
        self.counts[self.combination_index(parent_values) * self.child_radix + child_value]
    }

    pub fn add(&mut self, parent_values: &[usize], child_value: usize, count: f64) {
        let i = self.combination_index(parent_values) * self.child_radix + child_value;
        self.counts[i] += count;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }
}

/// All conditional tables available for the target location.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionalSet {
    tables: Vec<ConditionalTable>,
}

impl ConditionalSet {
    pub fn new(tables: Vec<ConditionalTable>) -> Self {
        ConditionalSet { tables }
    }

    pub fn tables(&self) -> &[ConditionalTable] {
        &self.tables
    }

    pub fn push(&mut self, table: ConditionalTable) {
        self.tables.push(table);
    }

    /// The table for `child` whose parents are exactly `parents`, in order.
    pub fn for_child(&self, child: usize, parents: &[usize]) -> Option<&ConditionalTable> {
        self.tables
            .iter()
            .find(|t| t.child == child && t.parents == parents)
    }

    /// A single-parent table relating `a` and `b` in either direction.
    pub fn covering_pair(&self, a: usize, b: usize) -> Option<&ConditionalTable> {
        self.tables.iter().find(|t| {
            t.parents.len() == 1
                && ((t.child == a && t.parents[0] == b) || (t.child == b && t.parents[0] == a))
        })
    }

    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        #[derive(Deserialize)]
        struct Row {
            child: String,
            parent1: String,
            parent2: String,
            p1_cat: String,
            p2_cat: String,
            child_cat: String,
            count: String,
        }
        let mut tables: Vec<ConditionalTable> = Vec::new();
        for row in csv_reader(path)?.deserialize::<Row>() {
            let row = row.map_err(|e| Error::parse(path, e))?;
            let child = schema.require(&row.child)?;
            let mut parents = vec![schema.require(&row.parent1)?];
            let mut values = vec![schema.resolve_category(parents[0], &row.p1_cat)?];
            if row.parent2 != ABSENT {
                let p2 = schema.require(&row.parent2)?;
                parents.push(p2);
                values.push(schema.resolve_category(p2, &row.p2_cat)?);
            } else if row.p2_cat != ABSENT {
                return Err(Error::parse(
                    path,
                    format!("p2_cat `{}` given without a second parent", row.p2_cat),
                ));
            }
            let cv = schema.resolve_category(child, &row.child_cat)?;
            let n = parse_count(&row.count, path)?;
            let pos = match tables
                .iter()
                .position(|t| t.child == child && t.parents == parents)
            {
                Some(p) => p,
                None => {
                    tables.push(ConditionalTable::zeros(schema, child, parents)?);
                    tables.len() - 1
                }
            };
            tables[pos].add(&values, cv, n);
        }
        Ok(ConditionalSet { tables })
    }

    pub fn save(&self, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        w.write_record(["child", "parent1", "parent2", "p1_cat", "p2_cat", "child_cat", "count"])
            .map_err(|e| Error::parse(path, e))?;
        for t in &self.tables {
            let child = schema.variable(t.child);
            let p1 = schema.variable(t.parents[0]);
            let p2 = t.parents.get(1).map(|&p| schema.variable(p));
            for combo in 0..t.parent_combinations() {
                let (i1, i2) = match p2 {
                    Some(v) => (combo / v.cardinality(), Some(combo % v.cardinality())),
                    None => (combo, None),
                };
                for (cv, n) in t.row(combo).iter().enumerate() {
                    w.write_record([
                        child.name.as_str(),
                        p1.name.as_str(),
                        p2.map_or(ABSENT, |v| v.name.as_str()),
                        p1.categories[i1].as_str(),
                        match (p2, i2) {
                            (Some(v), Some(i)) => v.categories[i].as_str(),
                            _ => ABSENT,
                        },
                        child.categories[cv].as_str(),
                        &n.to_string(),
                    ])
                    .map_err(|e| Error::parse(path, e))?;
                }
            }
        }
        flush(w, path)
    }
}

/// Component counts (or proportions) for auxiliary locations: one row per
/// location, one column per (variable, category) in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryMatrix {
    pub locations: Vec<String>,
    pub values: DMatrix<f64>,
}

impl AuxiliaryMatrix {
    pub fn new(schema: &Schema, locations: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != schema.component_count() {
            return Err(Error::DimensionMismatch {
                expected: schema.component_count(),
                actual: values.ncols(),
            });
        }
        if values.nrows() != locations.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                actual: values.nrows(),
            });
        }
        if values.nrows() < 2 {
            return Err(Error::Table(format!(
                "auxiliary matrix needs at least two locations, found {}",
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Table("auxiliary matrix has a negative cell".into()));
        }
        Ok(AuxiliaryMatrix { locations, values })
    }

    pub fn location_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv_reader(path)?;
        let headers = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
        if headers.get(0) != Some("location") {
            return Err(Error::parse(path, "first column must be `location`"));
        }
        let mut column_of = Vec::with_capacity(headers.len() - 1);
        let blocks = schema.component_blocks();
        let mut covered = vec![false; schema.component_count()];
        for h in headers.iter().skip(1) {
            let (var, cat) = h
                .split_once(':')
                .ok_or_else(|| Error::parse(path, format!("column `{h}` is not `<var>:<cat>`")))?;
            let v = schema.require(var)?;
            let c = schema.resolve_category(v, cat)?;
            let col = blocks[v].start + c;
            covered[col] = true;
            column_of.push(col);
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return Err(Error::Table(format!(
                "auxiliary matrix has no column for `{}`",
                schema.component_labels()[missing]
            )));
        }
        let mut locations = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::parse(path, e))?;
            locations.push(record.get(0).unwrap_or_default().to_string());
            let mut row = vec![0.0; schema.component_count()];
            for (raw, &col) in record.iter().skip(1).zip(&column_of) {
                row[col] += parse_count(raw, path)?;
            }
            rows.extend(row);
        }
        let values = DMatrix::from_row_slice(locations.len(), schema.component_count(), &rows);
        Self::new(schema, locations, values)
    }

    pub fn save(&self, path: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        let mut header = vec!["location".to_string()];
        header.extend(schema.component_labels());
        w.write_record(&header).map_err(|e| Error::parse(path, e))?;
        for (r, loc) in self.locations.iter().enumerate() {
            let mut rec = vec![loc.clone()];
            rec.extend(self.values.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
        }
        flush(w, path)
    }
}

/// Converts each location's counts to within-variable proportions.
pub fn normalize_auxiliary(schema: &Schema, aux: &AuxiliaryMatrix) -> Result<AuxiliaryMatrix> {
    let mut values = aux.values.clone();
    for (r, loc) in aux.locations.iter().enumerate() {
        for (v, block) in schema.component_blocks().into_iter().enumerate() {
            let total: f64 = block.clone().map(|c| values[(r, c)]).sum();
            if total <= 0.0 {
                return Err(Error::ZeroBlock {
                    location: loc.clone(),
                    variable: schema.variable(v).name.clone(),
                });
            }
            for c in block {
                values[(r, c)] /= total;
            }
        }
    }
    Ok(AuxiliaryMatrix {
        locations: aux.locations.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Variable;

    fn schema() -> Schema {
        Schema::new(
            vec![
                Variable::new("a", &["x", "y"]),
                Variable::new("b", &["p", "q", "r"]),
            ],
            &[("b", &["a"])],
        )
        .unwrap()
    }

    #[test]
    fn normalizes_a_two_category_block() {
        let s = Schema::new(vec![Variable::new("a", &["x", "y"]), Variable::new("b", &["z"])], &[]).unwrap();
        let aux = AuxiliaryMatrix::new(
            &s,
            vec!["g0".into(), "g1".into()],
            DMatrix::from_row_slice(2, 3, &[10.0, 30.0, 5.0, 1.0, 1.0, 2.0]),
        )
        .unwrap();
        let n = normalize_auxiliary(&s, &aux).unwrap();
        assert!((n.values[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((n.values[(0, 1)] - 0.75).abs() < 1e-15);
        assert_eq!(n.values[(0, 2)], 1.0);
    }

    #[test]
    fn zero_block_names_location_and_variable() {
        let s = schema();
        let aux = AuxiliaryMatrix::new(
            &s,
            vec!["g0".into(), "g1".into()],
            DMatrix::from_row_slice(2, 5, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        match normalize_auxiliary(&s, &aux).unwrap_err() {
            Error::ZeroBlock { location, variable } => {
                assert_eq!(location, "g1");
                assert_eq!(variable, "b");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn normalized_blocks_sum_to_one_and_normalization_is_idempotent() {
        let s = schema();
        let aux = AuxiliaryMatrix::new(
            &s,
            vec!["g0".into(), "g1".into(), "g2".into()],
            DMatrix::from_row_slice(
                3,
                5,
                &[3.0, 7.0, 1.0, 2.0, 3.0, 10.0, 1.0, 0.5, 0.5, 9.0, 2.0, 2.0, 4.0, 4.0, 4.0],
            ),
        )
        .unwrap();
        let n = normalize_auxiliary(&s, &aux).unwrap();
        for r in 0..3 {
            for block in s.component_blocks() {
                let sum: f64 = block.map(|c| n.values[(r, c)]).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
        let again = normalize_auxiliary(&s, &n).unwrap();
        assert!((again.values.clone() - n.values.clone()).amax() < 1e-15);
    }

    #[test]
    fn auxiliary_needs_two_locations() {
        let s = schema();
        let err = AuxiliaryMatrix::new(&s, vec!["g0".into()], DMatrix::from_element(1, 5, 1.0));
        assert!(err.is_err());
    }

    #[test]
    fn tables_round_trip_through_csv() {
        let s = schema();
        let dir = tempfile::tempdir().unwrap();

        let d1 = MarginalSet::from_counts(&s, "t", vec![vec![4.0, 6.5], vec![1.0, 0.0, 9.0]]).unwrap();
        d1.save(dir.path().join("d1.csv"), &s).unwrap();
        assert_eq!(MarginalSet::load(dir.path().join("d1.csv"), &s, "t").unwrap(), d1);

        let mut t = ConditionalTable::zeros(&s, 1, vec![0]).unwrap();
        t.add(&[0], 2, 3.0);
        t.add(&[1], 0, 1.25);
        let d2 = ConditionalSet::new(vec![t]);
        d2.save(dir.path().join("d2.csv"), &s).unwrap();
        assert_eq!(ConditionalSet::load(dir.path().join("d2.csv"), &s).unwrap(), d2);

        let d3 = AuxiliaryMatrix::new(
            &s,
            vec!["g0".into(), "g1".into()],
            DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.5]),
        )
        .unwrap();
        d3.save(dir.path().join("d3.csv"), &s).unwrap();
        assert_eq!(AuxiliaryMatrix::load(dir.path().join("d3.csv"), &s).unwrap(), d3);
    }

    #[test]
    fn loading_applies_remap_and_sums_merged_labels() {
        let mut remap = BTreeMap::new();
        remap.insert(
            "b".to_string(),
            [("P1".to_string(), "p".to_string()), ("P2".to_string(), "p".to_string())]
                .into_iter()
                .collect(),
        );
        let s = schema().with_remap(remap).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d1.csv");
        std::fs::write(&path, "variable,category,count\nb,P1,2\nb,P2,3\nb,q,1.5\na,x,1\n").unwrap();
        let d1 = MarginalSet::load(&path, &s, "t").unwrap();
        assert_eq!(d1.get(1).unwrap().counts, vec![5.0, 1.5, 0.0]);
        assert_eq!(d1.get(0).unwrap().counts, vec![1.0, 0.0]);
    }

    #[test]
    fn rejects_negative_and_malformed_counts() {
        let s = schema();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d1.csv");
        std::fs::write(&path, "variable,category,count\na,x,-1\n").unwrap();
        assert!(MarginalSet::load(&path, &s, "t").is_err());
        std::fs::write(&path, "variable,category,count\na,x,many\n").unwrap();
        assert!(MarginalSet::load(&path, &s, "t").is_err());
        std::fs::write(&path, "variable,category,count\na,w,1\n").unwrap();
        assert!(MarginalSet::load(&path, &s, "t").is_err());
    }

    #[test]
    fn two_parent_conditional_csv() {
        let s = Schema::new(
            vec![
                Variable::new("a", &["x", "y"]),
                Variable::new("b", &["p", "q", "r"]),
                Variable::new("c", &["0", "1"]),
            ],
            &[("c", &["a", "b"])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d2.csv");
        std::fs::write(
            &path,
            "child,parent1,parent2,p1_cat,p2_cat,child_cat,count\nc,a,b,y,r,1,7\nc,a,b,x,p,0,2\n",
        )
        .unwrap();
        let d2 = ConditionalSet::load(&path, &s).unwrap();
        let t = d2.for_child(2, &[0, 1]).unwrap();
        assert_eq!(t.get(&[1, 2], 1), 7.0);
        assert_eq!(t.get(&[0, 0], 0), 2.0);
        assert_eq!(t.get(&[0, 1], 0), 0.0);
        assert_eq!(t.total(), 9.0);
    }
}
