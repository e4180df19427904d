//! Constructed ground truth: a known population together with the aggregate
//! tables a generator would receive for it.
//!
//! A truth population is drawn from either an explicit joint distribution or
//! a random recipe model. The recipe walks the dependency graph and draws
//! each variable from a log-linear table in its declared parents. A latent
//! binary class, invisible in every table, can additionally tilt two chosen
//! variables, which plants an association the conditioning paths cannot
//! carry.
//!
//! Auxiliary locations reweight the truth's individuals (latent class share
//! and mix of the first variable vary by location, scaled by
//! `heterogeneity`) and multiply every component count by `1 + s·ε`,
//! `ε ~ N(0, 1)`, with `s` the perturbation scale. With both set to zero each
//! auxiliary row equals the truth's own component counts.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::schema::Schema;
use crate::synthesis::SyntheticPopulation;
use crate::tables::{AuxiliaryMatrix, ConditionalSet, ConditionalTable, MarginalSet};

/// Location id used for the target's univariate tables.
pub const TARGET_LOCATION: &str = "target";

/// A category whose base probability is fixed by the recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareCategory {
    pub variable: String,
    pub category: String,
    pub prevalence: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    /// Standard deviation of the per-category base log-weights.
    #[serde(default = "half")]
    pub spread: f64,
    /// Standard deviation of the parent→child log-linear effects.
    #[serde(default = "one")]
    pub dependence: f64,
    /// Two variables tilted by the latent class.
    #[serde(default)]
    pub hidden: Option<[String; 2]>,
    /// Size of the latent tilt on the hidden variables' log-weights.
    #[serde(default = "one")]
    pub hidden_strength: f64,
    /// Base probabilities pinned for chosen categories. Exact for variables
    /// drawn without parents, a base-rate setting otherwise.
    #[serde(default)]
    pub rare: Vec<RareCategory>,
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            spread: half(),
            dependence: one(),
            hidden: None,
            hidden_strength: one(),
            rare: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruthJoint {
    Explicit(TupleDistribution),
    Recipe(Recipe),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSpec {
    pub schema: Schema,
    pub joint: TruthJoint,
    /// Individuals in the truth population.
    pub population: u64,
    /// Auxiliary locations in D3.
    pub locations: usize,
    /// Scale of the multiplicative noise on auxiliary counts.
    pub perturbation: f64,
    /// Scale of the between-location variation in latent class share and
    /// in every variable's mix.
    pub heterogeneity: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum JointFile {
    Explicit { path: PathBuf },
    Recipe(Recipe),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    schema: PathBuf,
    population: u64,
    locations: usize,
    perturbation: f64,
    #[serde(default)]
    heterogeneity: f64,
    #[serde(default)]
    seed: u64,
    joint: JointFile,
}

impl GroundTruthSpec {
    /// Reads a TOML spec; relative paths resolve against the spec's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SpecFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let schema = Schema::load(base.join(&file.schema))?;
        let joint = match file.joint {
            JointFile::Explicit { path } => TruthJoint::Explicit(TupleDistribution::load_csv(base.join(path), &schema)?),
            JointFile::Recipe(r) => TruthJoint::Recipe(r),
        };
        let spec = GroundTruthSpec {
            schema,
            joint,
            population: file.population,
            locations: file.locations,
            perturbation: file.perturbation,
            heterogeneity: file.heterogeneity,
            seed: file.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Config("truth population must be at least 1".into()));
        }
        if self.locations < 2 {
            return Err(Error::Config("at least two auxiliary locations are needed".into()));
        }
        for (name, v) in [("perturbation", self.perturbation), ("heterogeneity", self.heterogeneity)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} scale {v} must be nonnegative")));
            }
        }
        match &self.joint {
            TruthJoint::Explicit(d) if d.space() != &self.schema.tuple_space() => Err(Error::SpaceMismatch),
            TruthJoint::Explicit(_) => Ok(()),
            TruthJoint::Recipe(r) => {
                if let Some(pair) = &r.hidden {
                    for v in pair {
                        self.schema.require(v)?;
                    }
                    if pair[0] == pair[1] {
                        return Err(Error::Config("hidden association needs two distinct variables".into()));
                    }
                }
                for rare in &r.rare {
                    let v = self.schema.require(&rare.variable)?;
                    self.schema.resolve_category(v, &rare.category)?;
                    if !(rare.prevalence > 0.0 && rare.prevalence < 1.0) {
                        return Err(Error::Config(format!(
                            "prevalence {} of {}:{} must lie in (0, 1)",
                            rare.prevalence, rare.variable, rare.category
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Truth population and everything derived from it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub schema: Schema,
    pub population: SyntheticPopulation,
    /// Latent class of each individual, aligned with `population.records()`.
    pub latent: Vec<bool>,
    pub d1: MarginalSet,
    pub d2: ConditionalSet,
    pub d3: AuxiliaryMatrix,
    /// Empirical distribution of the truth population.
    pub reference: TupleDistribution,
}

/// Where [`GroundTruth::save`] put each file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthFiles {
    pub schema: PathBuf,
    pub population: PathBuf,
    pub d1: PathBuf,
    pub d2: PathBuf,
    pub d3: PathBuf,
    pub reference: PathBuf,
}

impl GroundTruth {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<TruthFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = TruthFiles {
            schema: dir.join("schema.toml"),
            population: dir.join("truth_population.csv"),
            d1: dir.join("d1.csv"),
            d2: dir.join("d2.csv"),
            d3: dir.join("d3.csv"),
            reference: dir.join("reference.csv"),
        };
        self.schema.save(&files.schema)?;
        self.population.save_csv(&files.population, &self.schema)?;
        self.d1.save(&files.d1, &self.schema)?;
        self.d2.save(&files.d2, &self.schema)?;
        self.d3.save(&files.d3, &self.schema)?;
        self.reference.save_csv(&files.reference, &self.schema)?;
        Ok(files)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut r = rng.random::<f64>();
    for (i, &q) in p.iter().enumerate() {
        if r < q {
            return i;
        }
        r -= q;
    }
    p.len() - 1
}

/// Random log-linear model drawn once per truth.
struct RecipeModel {
    /// Draw order; a seed pair appears first, its second member conditioned on the first.
    order: Vec<usize>,
    parents: Vec<Vec<usize>>,
    base: Vec<Vec<f64>>,
    /// `effects[v][j][parent category][child category]` for the j-th parent of v.
    effects: Vec<Vec<Vec<Vec<f64>>>>,
    /// Latent tilt per category for hidden variables, empty otherwise.
    latent: Vec<Vec<f64>>,
}

impl RecipeModel {
    fn new<R: Rng + ?Sized>(schema: &Schema, recipe: &Recipe, rng: &mut R) -> Result<Self> {
        let graph = build_graph(schema)?;
        let k = schema.len();
        let mut parents: Vec<Vec<usize>> = (0..k).map(|v| graph.parents(v).to_vec()).collect();
        if let Some((a, b)) = graph.seed_pair() {
            parents[b].push(a);
        }
        let card = schema.cardinalities();
        let mut base: Vec<Vec<f64>> = card
            .iter()
            .map(|&r| (0..r).map(|_| recipe.spread * normal(rng)).collect())
            .collect();
        for rare in &recipe.rare {
            let v = schema.require(&rare.variable)?;
            let c = schema.resolve_category(v, &rare.category)?;
            // pin the category's share of the base distribution
            let p = softmax(&base[v]);
            let others: f64 = 1.0 - p[c];
            for (i, l) in base[v].iter_mut().enumerate() {
                *l = if i == c { rare.prevalence.ln() } else { (p[i] / others * (1.0 - rare.prevalence)).ln() };
            }
        }
        let effects = (0..k)
            .map(|v| {
                parents[v]
                    .iter()
                    .map(|&p| {
                        (0..card[p])
                            .map(|_| (0..card[v]).map(|_| recipe.dependence * normal(rng)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut latent = vec![Vec::new(); k];
        if let Some(pair) = &recipe.hidden {
            for name in pair {
                let v = schema.require(name)?;
                // the first category against the rest
                latent[v] = (0..card[v])
                    .map(|c| recipe.hidden_strength * if c == 0 { 1.0 } else { -1.0 })
                    .collect();
            }
        }
        Ok(RecipeModel {
            order: graph.order().to_vec(),
            parents,
            base,
            effects,
            latent,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, z: bool, out: &mut [usize], rng: &mut R) {
        for &v in &self.order {
            let mut logits = self.base[v].clone();
            for (j, &p) in self.parents[v].iter().enumerate() {
                for (l, e) in logits.iter_mut().zip(&self.effects[v][j][out[p]]) {
                    *l += e;
                }
            }
            let sign = if z { 0.5 } else { -0.5 };
            for (l, t) in logits.iter_mut().zip(&self.latent[v]) {
                *l += sign * t;
            }
            out[v] = categorical(&softmax(&logits), rng);
        }
    }
}

/// Draws the truth population and derives D1, D2 and D3 from it.
pub fn make_ground_truth(spec: &GroundTruthSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let schema = &spec.schema;
    let space = schema.tuple_space();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.population as usize;

    let mut individuals: Vec<(usize, bool)> = Vec::with_capacity(n);
    match &spec.joint {
        TruthJoint::Explicit(joint) => {
            let (tuples, probs): (Vec<usize>, Vec<f64>) = joint.iter().unzip();
            for _ in 0..n {
                individuals.push((tuples[categorical(&probs, &mut rng)], false));
            }
        }
        TruthJoint::Recipe(recipe) => {
            let model = RecipeModel::new(schema, recipe, &mut rng)?;
            let mut t = vec![0; schema.len()];
            for _ in 0..n {
                let z = rng.random::<bool>();
                model.draw(z, &mut t, &mut rng);
                individuals.push((space.index_of(&t), z));
            }
        }
    }
    // records() enumerates in tuple order
    individuals.sort_unstable();
    let latent: Vec<bool> = individuals.iter().map(|&(_, z)| z).collect();
    let population = SyntheticPopulation::from_records(space.clone(), individuals.iter().map(|&(t, _)| t))?;
    let tuples: Vec<Vec<usize>> = individuals.iter().map(|&(t, _)| space.tuple_of(t)).collect();

    let d1 = MarginalSet::from_counts(schema, TARGET_LOCATION, population.marginal_counts())?;
    let mut d2 = ConditionalSet::default();
    for child in 0..schema.len() {
        let parents = schema.parents(child).to_vec();
        if parents.is_empty() {
            continue;
        }
        let mut table = ConditionalTable::zeros(schema, child, parents.clone())?;
        let mut pv = vec![0; parents.len()];
        for t in &tuples {
            for (slot, &p) in pv.iter_mut().zip(&parents) {
                *slot = t[p];
            }
            table.add(&pv, t[child], 1.0);
        }
        d2.push(table);
    }

    let d3 = auxiliary_rows(spec, &tuples, &latent, &mut rng)?;
    let reference = population.distribution()?;
    Ok(GroundTruth {
        schema: schema.clone(),
        population,
        latent,
        d1,
        d2,
        d3,
        reference,
    })
}

fn auxiliary_rows<R: Rng + ?Sized>(
    spec: &GroundTruthSpec,
    tuples: &[Vec<usize>],
    latent: &[bool],
    rng: &mut R,
) -> Result<AuxiliaryMatrix> {
    let schema = &spec.schema;
    let blocks = schema.component_blocks();
    let m = schema.component_count();
    let h = spec.heterogeneity;
    let cards = schema.cardinalities();
    let share = latent.iter().filter(|&&z| z).count() as f64 / latent.len() as f64;
    let mut values = DMatrix::zeros(spec.locations, m);
    let names = (0..spec.locations).map(|l| format!("aux{l:02}")).collect();

    for l in 0..spec.locations {
        // location class share on the logit scale, and a tilt of every variable's mix
        let shift = h * normal(rng);
        let tilt: Vec<Vec<f64>> = cards.iter().map(|&r| (0..r).map(|_| h * normal(rng)).collect()).collect();
        let class_weight = if share > 0.0 && share < 1.0 {
            let logit = (share / (1.0 - share)).ln() + 4.0 * shift;
            let target = 1.0 / (1.0 + (-logit).exp());
            [(1.0 - target) / (1.0 - share), target / share]
        } else {
            [1.0, 1.0]
        };
        for (t, &z) in tuples.iter().zip(latent) {
            let log_tilt: f64 = t.iter().zip(&tilt).map(|(&x, tk)| tk[x]).sum();
            let w = class_weight[z as usize] * log_tilt.exp();
            for (k, b) in blocks.iter().enumerate() {
                values[(l, b.start + t[k])] += w;
            }
        }
        let scale = tuples.len() as f64 / values.row(l).iter().take(blocks[0].len()).sum::<f64>();
        for j in 0..m {
            let noise = (1.0 + spec.perturbation * normal(rng)).max(0.0);
            values[(l, j)] *= scale * noise;
        }
        for b in &blocks {
            if values.row(l).columns_range(b.clone()).sum() <= 0.0 {
                // all-zero block after noise: fall back to the unperturbed weights
                for j in b.clone() {
                    values[(l, j)] = 1.0;
                }
            }
        }
    }
    AuxiliaryMatrix::new(schema, names, values)
}
