//! Categorical schema: the ordered variables, their categories, and the
//! declared conditioning between them.
//!
//! A schema is read from a TOML file:
//!
//! ```toml
//! [[variable]]
//! name = "age"
//! categories = ["0-17", "18-64", "65+"]
//! source = "ACS"
//!
//! [conditioning]
//! marital = ["age", "gender"]
//!
//! [remap.age]
//! "Under 18" = "0-17"
//!
//! [[rule]]
//! parent = "age"
//! parent_categories = ["0-17"]
//! child = "marital"
//! child_categories = ["married"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub source: String,
}

impl Variable {
    pub fn new(name: impl Into<String>, categories: &[&str]) -> Self {
        Variable {
            name: name.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            source: String::new(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Structural impossibility: tuples where `parent` takes one of
/// `parent_categories` and `child` one of `child_categories` get zero mass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralRule {
    pub parent: String,
    pub parent_categories: Vec<String>,
    pub child: String,
    pub child_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SchemaFile {
    #[serde(rename = "variable")]
    variables: Vec<Variable>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    conditioning: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    remap: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, rename = "rule", skip_serializing_if = "Vec::is_empty")]
    rules: Vec<StructuralRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    variables: Vec<Variable>,
    /// Parents per variable, indexed like `variables`.
    parents: Vec<Vec<usize>>,
    remap: BTreeMap<String, BTreeMap<String, String>>,
    rules: Vec<StructuralRule>,
}

impl Schema {
    /// Builds and validates a schema. `conditioning` maps a child name to its
    /// parent names.
    pub fn new(variables: Vec<Variable>, conditioning: &[(&str, &[&str])]) -> Result<Self> {
        let conditioning = conditioning
            .iter()
            .map(|(c, ps)| (c.to_string(), ps.iter().map(|p| p.to_string()).collect()))
            .collect();
        Self::from_parts(variables, conditioning, BTreeMap::new(), Vec::new())
    }

    pub fn with_rules(mut self, rules: Vec<StructuralRule>) -> Result<Self> {
        self.rules = rules;
        self.validate_rules()?;
        Ok(self)
    }

    pub fn with_remap(mut self, remap: BTreeMap<String, BTreeMap<String, String>>) -> Result<Self> {
        self.remap = remap;
        self.validate_remap()?;
        Ok(self)
    }

    fn from_parts(
        variables: Vec<Variable>,
        conditioning: BTreeMap<String, Vec<String>>,
        remap: BTreeMap<String, BTreeMap<String, String>>,
        rules: Vec<StructuralRule>,
    ) -> Result<Self> {
        if variables.len() < 2 {
            return Err(Error::Schema(format!(
                "a schema needs at least two variables, found {}",
                variables.len()
            )));
        }
        let mut names = BTreeSet::new();
        for v in &variables {
            if v.name.is_empty() || v.name.contains(':') || v.name.contains(',') {
                return Err(Error::Schema(format!(
                    "variable name `{}` must be non-empty and free of ':' and ','",
                    v.name
                )));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
            }
            if v.categories.is_empty() {
                return Err(Error::Schema(format!("variable `{}` has no categories", v.name)));
            }
            let mut seen = BTreeSet::new();
            for c in &v.categories {
                if !seen.insert(c.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate category `{c}` in variable `{}`",
                        v.name
                    )));
                }
            }
        }

        let lookup = |name: &str| variables.iter().position(|v| v.name == name);
        let mut parents = vec![Vec::new(); variables.len()];
        for (child, ps) in &conditioning {
            let c = lookup(child)
                .ok_or_else(|| Error::Schema(format!("conditioning names unknown variable `{child}`")))?;
            if ps.is_empty() || ps.len() > 2 {
                return Err(Error::Schema(format!(
                    "`{child}` must be conditioned on one or two parents, found {}",
                    ps.len()
                )));
            }
            for p in ps {
                let pi = lookup(p).ok_or_else(|| {
                    Error::Schema(format!("`{child}` is conditioned on unknown parent `{p}`"))
                })?;
                if pi == c {
                    return Err(Error::Schema(format!("`{child}` is conditioned on itself")));
                }
                if parents[c].contains(&pi) {
                    return Err(Error::Schema(format!("`{child}` lists parent `{p}` twice")));
                }
                parents[c].push(pi);
            }
        }

        let schema = Schema {
            variables,
            parents,
            remap,
            rules,
        };
        schema.validate_remap()?;
        schema.validate_rules()?;
        Ok(schema)
    }

    fn validate_remap(&self) -> Result<()> {
        for (var, renames) in &self.remap {
            let v = self
                .index_of(var)
                .ok_or_else(|| Error::Schema(format!("remap names unknown variable `{var}`")))?;
            for target in renames.values() {
                if self.variables[v].category_index(target).is_none() {
                    return Err(Error::Schema(format!(
                        "remap target `{target}` is not a category of `{var}`"
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_rules(&self) -> Result<()> {
        for rule in &self.rules {
            for (var, cats) in [
                (&rule.parent, &rule.parent_categories),
                (&rule.child, &rule.child_categories),
            ] {
                let v = self
                    .index_of(var)
                    .ok_or_else(|| Error::Schema(format!("rule names unknown variable `{var}`")))?;
                for c in cats {
                    if self.variables[v].category_index(c).is_none() {
                        return Err(Error::Schema(format!(
                            "rule category `{c}` is not a category of `{var}`"
                        )));
                    }
                }
            }
            if rule.parent == rule.child {
                return Err(Error::Schema(format!(
                    "rule relates `{}` to itself",
                    rule.parent
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::parse("<schema>", e))?;
        Self::from_parts(file.variables, file.conditioning, file.remap, file.rules)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile {
            variables: self.variables.clone(),
            conditioning: self
                .parents
                .iter()
                .enumerate()
                .filter(|(_, ps)| !ps.is_empty())
                .map(|(c, ps)| {
                    (
                        self.variables[c].name.clone(),
                        ps.iter().map(|&p| self.variables[p].name.clone()).collect(),
                    )
                })
                .collect(),
            remap: self.remap.clone(),
            rules: self.rules.clone(),
        };
        toml::to_string(&file).expect("schema serializes to TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, idx: usize) -> &Variable {
        &self.variables[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Table(format!("unknown variable `{name}`")))
    }

    /// Declared parents of a variable, in declaration order.
    pub fn parents(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::cardinality).collect()
    }

    pub fn rules(&self) -> &[StructuralRule] {
        &self.rules
    }

    /// Resolves a table label to a category index, applying any remap.
    pub fn resolve_category(&self, var: usize, label: &str) -> Result<usize> {
        let v = &self.variables[var];
        let label = self
            .remap
            .get(&v.name)
            .and_then(|m| m.get(label))
            .map(String::as_str)
            .unwrap_or(label);
        v.category_index(label).ok_or_else(|| {
            Error::Table(format!("`{label}` is not a category of `{}`", v.name))
        })
    }

    /// Total number of categorical components, i.e. the summed cardinalities.
    pub fn component_count(&self) -> usize {
        self.variables.iter().map(Variable::cardinality).sum()
    }

    /// Column range of each variable's block in a component vector.
    pub fn component_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.variables
            .iter()
            .map(|v| {
                let r = start..start + v.cardinality();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn component_labels(&self) -> Vec<String> {
        self.variables
            .iter()
            .flat_map(|v| v.categories.iter().map(move |c| format!("{}:{}", v.name, c)))
            .collect()
    }

    pub fn tuple_space(&self) -> TupleSpace {
        TupleSpace::new(
            (0..self.len()).collect(),
            self.cardinalities(),
        )
    }
}

/// Number of tuples in the cartesian product of all category sets.
pub fn tuple_space_size(schema: &Schema) -> u128 {
    schema
        .variables
        .iter()
        .map(|v| v.cardinality() as u128)
        .product()
}

/// Lexicographic enumeration of the tuples over a list of schema variables.
/// The first variable is the most significant digit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TupleSpace {
    vars: Vec<usize>,
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl TupleSpace {
    /// # Panics
    /// If the product of radices overflows `usize`, or lengths differ.
    pub fn new(vars: Vec<usize>, radices: Vec<usize>) -> Self {
        assert_eq!(vars.len(), radices.len());
        let mut strides = vec![1; radices.len()];
        let mut size: usize = 1;
        for k in (0..radices.len()).rev() {
            strides[k] = size;
            size = size
                .checked_mul(radices[k])
                .expect("tuple space size overflows usize");
        }
        TupleSpace {
            vars,
            radices,
            strides,
            size,
        }
    }

    /// The space over no variables: a single empty tuple.
    pub fn unit() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    pub fn index_of(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.radices.len());
        tuple
            .iter()
            .zip(&self.strides)
            .map(|(&x, &s)| x * s)
            .sum()
    }

    pub fn tuple_of(&self, index: usize) -> Vec<usize> {
        let mut t = vec![0; self.radices.len()];
        self.decode_into(index, &mut t);
        t
    }

    pub fn decode_into(&self, index: usize, out: &mut [usize]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = (index / self.strides[k]) % self.radices[k];
        }
    }

    /// Category of the variable at `pos` within the tuple at `index`.
    #[inline]
    pub fn value_at(&self, index: usize, pos: usize) -> usize {
        (index / self.strides[pos]) % self.radices[pos]
    }

    /// This space with one more variable appended as least significant digit.
    pub fn extended(&self, var: usize, radix: usize) -> Self {
        let mut vars = self.vars.clone();
        vars.push(var);
        let mut radices = self.radices.clone();
        radices.push(radix);
        Self::new(vars, radices)
    }
}
