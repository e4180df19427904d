//! Gaussian-copula estimate of the joint distribution from auxiliary
//! locations, with capacity-constrained matching to the target marginals.

mod beta;
mod matching;

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::tables::AuxiliaryMatrix;

pub use beta::{fit_beta, BetaMarginal, ComponentMarginal, VARIANCE_CLAMP};
pub use matching::{estimate_p2, integerize_targets, match_marginals};

/// Eigenvalues below this are replaced during PSD repair.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Covariance structure and marginals of the categorical components.
#[derive(Debug, Clone)]
pub struct CopulaSpec {
    covariance: DMatrix<f64>,
    marginals: Vec<ComponentMarginal>,
    blocks: Vec<Range<usize>>,
    pub iterations: usize,
    pub n_draw: usize,
}

impl CopulaSpec {
    /// Builds a spec from explicit parts. `covariance` is symmetrized and
    /// repaired to be positive semi-definite.
    pub fn new(
        covariance: DMatrix<f64>,
        marginals: Vec<ComponentMarginal>,
        blocks: Vec<Range<usize>>,
        iterations: usize,
        n_draw: usize,
    ) -> Result<Self> {
        let m = marginals.len();
        if covariance.nrows() != m || covariance.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: covariance.nrows(),
            });
        }
        if blocks.last().map_or(0, |b| b.end) != m || blocks.windows(2).any(|w| w[0].end != w[1].start) {
            return Err(Error::Numerical("component blocks do not tile the components".into()));
        }
        if iterations == 0 || n_draw == 0 {
            return Err(Error::Config("copula iterations and draws must be at least 1".into()));
        }
        Ok(CopulaSpec {
            covariance: repair_psd(&covariance)?,
            marginals,
            blocks,
            iterations,
            n_draw,
        })
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn marginals(&self) -> &[ComponentMarginal] {
        &self.marginals
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Writes `sigma.csv` (labelled covariance) and `marginals.csv` (fitted
    /// Beta parameters per component) into `dir`.
    pub fn save_diagnostics(&self, dir: impl AsRef<Path>, schema: &Schema) -> Result<()> {
        let dir = dir.as_ref();
        let labels = schema.component_labels();

        let path = dir.join("sigma.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
        let mut header = vec!["component".to_string()];
        header.extend(labels.iter().cloned());
        w.write_record(&header).map_err(|e| Error::parse(&path, e))?;
        for (i, label) in labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.covariance.row(i).iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| Error::parse(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("marginals.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
        w.write_record(["component", "kind", "alpha", "beta", "mean", "variance"])
            .map_err(|e| Error::parse(&path, e))?;
        for (label, m) in labels.iter().zip(&self.marginals) {
            let (kind, a, b) = match m {
                ComponentMarginal::Beta(b) => ("beta", b.alpha().to_string(), b.beta().to_string()),
                ComponentMarginal::PointMass { .. } => ("point_mass", String::new(), String::new()),
            };
            w.write_record([label.as_str(), kind, &a, &b, &m.mean().to_string(), &m.variance().to_string()])
                .map_err(|e| Error::parse(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.transpose() * centered / (n as f64 - 1.0)
}

/// Symmetrizes `m` and, if it has clearly negative eigenvalues, clips them to
/// [`EIGEN_FLOOR`] and reassembles. Eigenvalues within rounding of zero are
/// left alone. Diagonal entries are floored at [`EIGEN_FLOOR`].
pub fn repair_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("covariance has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let tol = 1e-12 * scale;
    let mut out = if eig.eigenvalues.iter().any(|&l| l < -tol) {
        let clipped = eig.eigenvalues.map(|l| if l < -tol { EIGEN_FLOOR } else { l });
        let v = &eig.eigenvectors;
        let r = v * DMatrix::from_diagonal(&clipped) * v.transpose();
        (&r + r.transpose()) * 0.5
    } else {
        sym
    };
    for i in 0..out.nrows() {
        if out[(i, i)] < EIGEN_FLOOR {
            out[(i, i)] = EIGEN_FLOOR;
        }
    }
    Ok(out)
}

/// Copula spec from a normalized auxiliary matrix: per-component mean and
/// variance across locations give the marginals, the sample covariance gives Σ.
pub fn estimate_spec(
    schema: &Schema,
    aux: &AuxiliaryMatrix,
    iterations: usize,
    n_draw: usize,
) -> Result<CopulaSpec> {
    let x = &aux.values;
    if x.nrows() < 2 {
        return Err(Error::Table("auxiliary matrix needs at least two locations".into()));
    }
    if x.ncols() != schema.component_count() {
        return Err(Error::DimensionMismatch {
            expected: schema.component_count(),
            actual: x.ncols(),
        });
    }
    let cov = sample_covariance(x);
    let means = x.row_mean();
    let marginals = (0..x.ncols())
        .map(|m| ComponentMarginal::fit(m, means[m], cov[(m, m)].max(0.0)))
        .collect::<Result<Vec<_>>>()?;
    CopulaSpec::new(cov, marginals, schema.component_blocks(), iterations, n_draw)
}

/// `(Φ(z), 1 - Φ(z))`, each computed without cancellation.
fn normal_tails(z: f64) -> (f64, f64) {
    let s = z / std::f64::consts::SQRT_2;
    (0.5 * erfc(-s), 0.5 * erfc(s))
}

/// Draws component vectors from a [`CopulaSpec`].
///
/// The latent Gaussian uses the correlation matrix implied by Σ so that each
/// `Φ(Z_m)` is uniform; components with floored variance are independent.
#[derive(Debug, Clone)]
pub struct CopulaSampler {
    factor: DMatrix<f64>,
    marginals: Vec<ComponentMarginal>,
    blocks: Vec<Range<usize>>,
}

impl CopulaSampler {
    pub fn new(spec: &CopulaSpec) -> Result<Self> {
        let corr = correlation(&spec.covariance);
        let factor = gaussian_factor(&corr)?;
        Ok(CopulaSampler {
            factor,
            marginals: spec.marginals.clone(),
            blocks: spec.blocks.clone(),
        })
    }

    pub fn components(&self) -> usize {
        self.marginals.len()
    }

    /// `n` rows of `y_m = F_m^{-1}(Φ(Z_m))` before block renormalization.
    pub fn draw_raw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let m = self.components();
        let mut out = DMatrix::zeros(n, m);
        let mut eps = DVector::zeros(m);
        for i in 0..n {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            let z = &self.factor * &eps;
            for (c, marginal) in self.marginals.iter().enumerate() {
                let (lower, upper) = normal_tails(z[c]);
                out[(i, c)] = marginal.quantile(lower, upper);
            }
        }
        out
    }

    /// Like [`draw_raw`](Self::draw_raw) with each variable block rescaled to
    /// sum to 1. A block that sums to 0 becomes uniform.
    pub fn draw_component_probs<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let mut y = self.draw_raw(n, rng);
        for i in 0..n {
            for b in &self.blocks {
                let s: f64 = (b.start..b.end).map(|c| y[(i, c)]).sum();
                for c in b.clone() {
                    y[(i, c)] = if s > 0.0 { y[(i, c)] / s } else { 1.0 / b.len() as f64 };
                }
            }
        }
        y
    }
}

/// Correlation matrix of a covariance. Components whose variance sits at the
/// repair floor get a unit row and column.
pub fn correlation(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let degenerate: Vec<bool> = (0..n).map(|i| cov[(i, i)] <= EIGEN_FLOOR * (1.0 + 1e-9)).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if degenerate[i] || degenerate[j] {
            0.0
        } else {
            let r = cov[(i, j)] / (sd[i] * sd[j]);
            // rounding can leave an exact copy a hair short of 1
            if (r.abs() - 1.0).abs() < 1e-12 {
                r.signum()
            } else {
                r.clamp(-1.0, 1.0)
            }
        }
    })
}

/// Matrix `F` with `F Fᵀ` equal to `corr` and unit-norm rows: Cholesky when it
/// succeeds, otherwise the eigen square root with negative modes dropped.
pub fn gaussian_factor(corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = corr.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(corr.clone());
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut f = &eig.eigenvectors * DMatrix::from_diagonal(&root);
    for mut row in f.row_iter_mut() {
        let norm = row.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical("covariance factorization failed".into()));
        }
        row /= norm;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Variable;
    use crate::tables::normalize_auxiliary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_binary() -> Schema {
        Schema::new(vec![Variable::new("a", &["0", "1"]), Variable::new("b", &["0", "1"])], &[]).unwrap()
    }

    fn aux(schema: &Schema, rows: Vec<Vec<f64>>) -> AuxiliaryMatrix {
        let n = rows.len();
        let m = rows[0].len();
        let values = DMatrix::from_row_iterator(n, m, rows.into_iter().flatten());
        let raw = AuxiliaryMatrix::new(schema, (0..n).map(|i| format!("g{i}")).collect(), values).unwrap();
        normalize_auxiliary(schema, &raw).unwrap()
    }

    #[test]
    fn identical_rows_give_point_masses() {
        let s = two_binary();
        let a = aux(&s, vec![vec![3.0, 1.0, 1.0, 1.0]; 2]);
        let spec = estimate_spec(&s, &a, 1, 10).unwrap();
        assert!(spec
            .marginals()
            .iter()
            .all(|m| matches!(m, ComponentMarginal::PointMass { .. })));
        assert_eq!(spec.marginals()[0].mean(), 0.75);
        let sampler = CopulaSampler::new(&spec).unwrap();
        let y = sampler.draw_component_probs(5, &mut ChaCha8Rng::seed_from_u64(1));
        for i in 0..5 {
            assert!((y[(i, 0)] - 0.75).abs() < 1e-12);
            assert!((y[(i, 2)] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn copied_columns_are_perfectly_correlated() {
        let s = Schema::new(
            vec![Variable::new("a", &["0", "1"]), Variable::new("b", &["0", "1", "2"])],
            &[],
        )
        .unwrap();
        // a:0 and b:0 have the same proportions in every location
        let a = aux(
            &s,
            vec![
                vec![1.0, 3.0, 1.0, 1.0, 2.0],
                vec![1.0, 1.0, 2.0, 1.0, 1.0],
                vec![3.0, 1.0, 3.0, 0.5, 0.5],
                vec![2.0, 3.0, 4.0, 5.0, 1.0],
            ],
        );
        assert!((a.values[(3, 0)] - a.values[(3, 2)]).abs() < 1e-15);
        let spec = estimate_spec(&s, &a, 1, 10).unwrap();
        let c = spec.covariance();
        assert!((c[(0, 2)] / (c[(0, 0)] * c[(2, 2)]).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_one_pass_formula() {
        let s = Schema::new(
            vec![Variable::new("a", &["0", "1", "2"]), Variable::new("b", &["0", "1"])],
            &[],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(1.0..50.0)).collect()).collect();
        let a = aux(&s, rows);
        let spec = estimate_spec(&s, &a, 1, 10).unwrap();
        // sum of products minus n * mean_i * mean_j, over n - 1
        let x = &a.values;
        let n = x.nrows() as f64;
        for i in 0..5 {
            for j in 0..5 {
                let mut sxy = 0.0;
                let mut sx = 0.0;
                let mut sy = 0.0;
                for r in 0..x.nrows() {
                    sxy += x[(r, i)] * x[(r, j)];
                    sx += x[(r, i)];
                    sy += x[(r, j)];
                }
                let expected = (sxy - sx * sy / n) / (n - 1.0);
                assert!((spec.covariance()[(i, j)] - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn repair_clips_negative_modes() {
        // eigenvalues 3 and -1
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = repair_psd(&m).unwrap();
        let eig = SymmetricEigen::new(r.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        // the positive mode survives: v = (1,1)/sqrt2 with eigenvalue 3
        let v = DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
        assert!(((v.transpose() * &r * &v)[(0, 0)] - 3.0).abs() < 1e-9);
        let psd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(repair_psd(&psd).unwrap(), psd);
    }

    fn uniform_spec(cov: DMatrix<f64>, a: f64) -> CopulaSpec {
        let m = cov.nrows();
        let marginals = (0..m)
            .map(|c| ComponentMarginal::Beta(BetaMarginal::new(c, a, a)))
            .collect();
        CopulaSpec::new(cov, marginals, (0..m).map(|c| c..c + 1).collect(), 1, 1).unwrap()
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn identity_gives_independent_uniforms() {
        let spec = uniform_spec(DMatrix::identity(3, 3), 1.0);
        let y = CopulaSampler::new(&spec)
            .unwrap()
            .draw_raw(100_000, &mut ChaCha8Rng::seed_from_u64(3));
        let cols: Vec<Vec<f64>> = (0..3).map(|c| y.column(c).iter().copied().collect()).collect();
        for c in &cols {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            assert!((mean - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / 1e5).sqrt());
            assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // decile occupancy close to 1/10
            let mut bins = [0usize; 10];
            c.iter().for_each(|&v| bins[((v * 10.0) as usize).min(9)] += 1);
            assert!(bins.iter().all(|&b| (b as f64 / 1e5 - 0.1).abs() < 0.005));
        }
        assert!(pearson(&cols[0], &cols[1]).abs() < 0.05);
        assert!(pearson(&cols[1], &cols[2]).abs() < 0.05);
    }

    #[test]
    fn single_component_follows_its_beta() {
        let b = BetaMarginal::new(0, 6.0, 14.0);
        let spec = CopulaSpec::new(DMatrix::from_element(1, 1, 0.01), vec![ComponentMarginal::Beta(b)], vec![0..1], 1, 1)
            .unwrap();
        let n = 100_000;
        let y = CopulaSampler::new(&spec).unwrap().draw_raw(n, &mut ChaCha8Rng::seed_from_u64(11));
        let mean = y.iter().sum::<f64>() / n as f64;
        let se = (b.variance() / n as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn comonotone_copies_are_equal() {
        let spec = uniform_spec(DMatrix::from_element(2, 2, 0.04), 2.0);
        let y = CopulaSampler::new(&spec).unwrap().draw_raw(1000, &mut ChaCha8Rng::seed_from_u64(5));
        for i in 0..1000 {
            assert!((y[(i, 0)] - y[(i, 1)]).abs() < 1e-9);
        }
    }

    #[test]
    fn blocks_are_renormalized() {
        let s = Schema::new(
            vec![Variable::new("a", &["0", "1", "2"]), Variable::new("b", &["0", "1"])],
            &[],
        )
        .unwrap();
        let a = aux(
            &s,
            vec![
                vec![1.0, 3.0, 1.0, 1.0, 2.0],
                vec![1.0, 1.0, 2.0, 1.0, 1.0],
                vec![3.0, 1.0, 3.0, 0.5, 0.5],
            ],
        );
        let spec = estimate_spec(&s, &a, 1, 10).unwrap();
        let y = CopulaSampler::new(&spec)
            .unwrap()
            .draw_component_probs(200, &mut ChaCha8Rng::seed_from_u64(2));
        for i in 0..200 {
            assert!(((0..3).map(|c| y[(i, c)]).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(((3..5).map(|c| y[(i, c)]).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostics_are_written() {
        let s = two_binary();
        let a = aux(&s, vec![vec![3.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 3.0], vec![2.0, 1.0, 1.0, 1.0]]);
        let spec = estimate_spec(&s, &a, 1, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        spec.save_diagnostics(dir.path(), &s).unwrap();
        let sigma = std::fs::read_to_string(dir.path().join("sigma.csv")).unwrap();
        assert!(sigma.starts_with("component,a:0,a:1,b:0,b:1\n"));
        assert_eq!(sigma.lines().count(), 5);
        let marg = std::fs::read_to_string(dir.path().join("marginals.csv")).unwrap();
        assert_eq!(marg.lines().count(), 5);
    }
}
