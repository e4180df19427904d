//! Evaluation measures: total absolute error, KL divergence, Cramér's V
//! association matrices and their Frobenius distance.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::synthesis::SyntheticPopulation;
use crate::tables::MarginalSet;

/// Mass added to each reference-supported cell of the synthetic distribution.
pub const KL_EPSILON: f64 = 1e-9;

fn check_aligned(observed: &[Vec<f64>], expected: &[Vec<f64>]) -> Result<()> {
    if observed.len() != expected.len() {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            actual: observed.len(),
        });
    }
    for (o, e) in observed.iter().zip(expected) {
        if o.len() != e.len() {
            return Err(Error::DimensionMismatch {
                expected: e.len(),
                actual: o.len(),
            });
        }
    }
    Ok(())
}

/// `Σ_j |O_j - E_j|` for each variable.
pub fn per_variable_tae(observed: &[Vec<f64>], expected: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_aligned(observed, expected)?;
    Ok(observed
        .iter()
        .zip(expected)
        .map(|(o, e)| o.iter().zip(e).map(|(a, b)| (a - b).abs()).sum())
        .collect())
}

/// `Σ_k Σ_j |O_jk - E_jk|`.
pub fn tae(observed: &[Vec<f64>], expected: &[Vec<f64>]) -> Result<f64> {
    Ok(per_variable_tae(observed, expected)?.iter().sum())
}

/// `D(P || Q)` in nats with the default smoothing.
pub fn kl_divergence(p: &TupleDistribution, q: &TupleDistribution) -> Result<f64> {
    kl_divergence_smoothed(p, q, KL_EPSILON)
}

/// `D(P || Q')` where `Q'` is `Q` plus `eps` on every tuple of P's support,
/// renormalized.
pub fn kl_divergence_smoothed(p: &TupleDistribution, q: &TupleDistribution, eps: f64) -> Result<f64> {
    if p.space() != q.space() {
        return Err(Error::SpaceMismatch);
    }
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("smoothing {eps} must be nonnegative")));
    }
    let pm = p.mass();
    let qm = q.mass();
    if !(pm > 0.0) || !(qm > 0.0) {
        return Err(Error::Numerical("KL divergence of an empty distribution".into()));
    }
    let z = qm + eps * p.support_len() as f64;
    let mut kl = 0.0;
    for (i, pi) in p.iter() {
        let pi = pi / pm;
        let qi = (q.get(i) + eps) / z;
        if qi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Cramér's V of a two-way table of counts or probabilities, without bias
/// correction. Empty rows and columns are ignored; a table with a single
/// observed row or column has V = 0.
pub fn cramers_v(table: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols_n = table.first().map_or(0, |r| r.len());
    let cols: Vec<f64> = (0..cols_n).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let n: f64 = rows.iter().sum();
    let r = rows.iter().filter(|&&x| x > 0.0).count();
    let c = cols.iter().filter(|&&x| x > 0.0).count();
    let k = r.min(c);
    if k < 2 || !(n > 0.0) {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        if rows[i] <= 0.0 {
            continue;
        }
        for (j, &o) in row.iter().enumerate() {
            if cols[j] <= 0.0 {
                continue;
            }
            let e = rows[i] * cols[j] / n;
            chi2 += (o - e) * (o - e) / e;
        }
    }
    (chi2 / (n * (k - 1) as f64)).sqrt().min(1.0)
}

/// Pairwise Cramér's V between all variables of the distribution's space,
/// with a unit diagonal.
pub fn association_matrix(d: &TupleDistribution) -> DMatrix<f64> {
    let k = d.space().vars().len();
    let mut a = DMatrix::identity(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let v = cramers_v(&d.pair_table(i, j));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// `sqrt(Σ_ij (a_ij - b_ij)^2)`.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    Ok((a - b).norm())
}

/// Scores of one synthetic population against the target marginals and a
/// reference joint distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub population: u64,
    pub tae: f64,
    /// KL(reference ‖ synthetic); absent without a reference distribution.
    pub kl: Option<f64>,
    /// Distance between the reference and synthetic association matrices.
    pub frobenius: Option<f64>,
    pub association_matrix: Vec<Vec<f64>>,
    pub per_variable_tae: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// Evaluates `population` against D1 scaled to the population size and,
/// when given, against the reference distribution.
pub fn evaluate(
    schema: &Schema,
    method: &str,
    population: &SyntheticPopulation,
    d1: &MarginalSet,
    reference: Option<&TupleDistribution>,
) -> Result<MetricsReport> {
    let n = population.size() as f64;
    let expected = (0..schema.len())
        .map(|k| {
            let table = d1.require(schema, k)?;
            // D1 counts for a population of this size are used as they are,
            // so an exact match scores exactly zero
            if table.total() == n {
                return Ok(table.counts.clone());
            }
            Ok(d1.proportions(schema, k)?.iter().map(|p| p * n).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let observed = population.marginal_counts();
    let per_var = per_variable_tae(&observed, &expected)?;
    let synthetic = population.distribution()?;
    let a = association_matrix(&synthetic);
    let (kl, frobenius) = match reference {
        Some(r) => (
            Some(kl_divergence(r, &synthetic)?),
            Some(frobenius_distance(&a, &association_matrix(r))?),
        ),
        None => (None, None),
    };
    Ok(MetricsReport {
        method: method.to_string(),
        population: population.size(),
        tae: per_var.iter().sum(),
        kl,
        frobenius,
        association_matrix: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        per_variable_tae: schema.variables().iter().map(|v| v.name.clone()).zip(per_var).collect(),
    })
}
