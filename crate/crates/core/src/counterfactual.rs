//! "Why not" explanations: minimal changes to mutable lab values that move
//! a predicted risk across a threshold, found by a seeded genetic search.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PatientRecord, Value};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::scalar::{to_f64, Scalar};
use crate::schema::{CohortSchema, FeatureSpec};
use crate::stats;

/// A change counts when it exceeds this many MAD-normalized units.
const CHANGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Decrease,
    Increase,
}

impl Direction {
    /// Whether a risk lies on the side the search starts from.
    pub fn starts_at(self, risk: f64, threshold: f64) -> bool {
        match self {
            Direction::Decrease => risk >= threshold,
            Direction::Increase => risk < threshold,
        }
    }

    pub fn is_valid(self, risk: f64, threshold: f64) -> bool {
        !self.starts_at(risk, threshold)
    }

    fn hinge(self, risk: f64, threshold: f64) -> f64 {
        match self {
            Direction::Decrease => (risk - threshold).max(0.0),
            Direction::Increase => (threshold - risk).max(0.0),
        }
    }
}

/// Box constraint and proximity scale of one mutable feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBound {
    pub feature: String,
    pub lower: f64,
    pub upper: f64,
    /// Training median absolute deviation, the unit of the L1 distance.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfConstraints {
    pub features: Vec<BoxBound>,
    pub threshold: f64,
    pub direction: Direction,
}

impl CfConstraints {
    /// All mutable lab features, boxed at the training 1st and 99th
    /// percentiles, threshold 0.5.
    pub fn from_training(dataset: &Dataset, direction: Direction) -> Result<Self> {
        let schema = &dataset.schema;
        let features = schema
            .mutable_features()
            .into_iter()
            .filter(|&i| schema.features[i].is_lab())
            .map(|i| {
                let name = &schema.features[i].name;
                let (lower, upper) = dataset.percentile_bounds(name, 0.01, 0.99)?;
                let col = dataset.numeric_column(i);
                let mad = stats::median_abs_deviation(&col).unwrap_or(0.0);
                let scale = if mad > 0.0 {
                    mad
                } else if upper > lower {
                    (upper - lower) / 4.0
                } else {
                    1.0
                };
                Ok(BoxBound {
                    feature: name.clone(),
                    lower,
                    upper,
                    scale,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if features.is_empty() {
            return Err(Error::Config("the schema has no mutable lab features".into()));
        }
        Ok(CfConstraints {
            features,
            threshold: 0.5,
            direction,
        })
    }

    /// Keeps only the named features.
    pub fn restrict<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        for n in names {
            if !self.features.iter().any(|b| b.feature == n.as_ref()) {
                return Err(Error::invalid(n.as_ref(), "not a mutable lab feature"));
            }
        }
        self.features
            .retain(|b| names.iter().any(|n| n.as_ref() == b.feature));
        Ok(self)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Config("mutable feature set is empty".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold", "must lie strictly between 0 and 1"));
        }
        let mut seen = HashSet::new();
        for b in &self.features {
            let spec = schema.feature(&b.feature)?;
            if !seen.insert(b.feature.as_str()) {
                return Err(Error::invalid(&b.feature, "listed twice"));
            }
            if !(spec.mutable && spec.is_lab() && spec.is_numerical()) {
                return Err(Error::invalid(&b.feature, "only mutable numerical lab features may change"));
            }
            let (min, max) = spec.range().expect("numerical");
            if !(b.lower <= b.upper && b.lower >= min && b.upper <= max) {
                return Err(Error::invalid(
                    &b.feature,
                    format!("bounds [{}, {}] must be ordered and inside [{min}, {max}]", b.lower, b.upper),
                ));
            }
            if !(b.scale > 0.0 && b.scale.is_finite()) {
                return Err(Error::invalid(&b.feature, "scale must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfConfig {
    pub k: usize,
    /// Model evaluations allowed for the genetic search.
    pub budget: usize,
    pub seed: u64,
    pub population: usize,
    pub lambda_proximity: f64,
    pub lambda_sparsity: f64,
    pub lambda_diversity: f64,
    /// Mutation standard deviation as a fraction of the box width.
    pub mutation_sigma: f64,
    /// Generations without improvement of the best valid candidate before
    /// stopping early.
    pub patience: usize,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            k: 3,
            budget: 20_000,
            seed: 0,
            population: 64,
            lambda_proximity: 0.5,
            lambda_sparsity: 0.1,
            lambda_diversity: 0.2,
            mutation_sigma: 0.1,
            patience: 30,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.population < 4 {
            return Err(Error::invalid("population", "must be at least 4"));
        }
        if self.budget < self.population {
            return Err(Error::invalid("budget", "must cover at least one population"));
        }
        for (name, v) in [
            ("lambda_proximity", self.lambda_proximity),
            ("lambda_sparsity", self.lambda_sparsity),
            ("lambda_diversity", self.lambda_diversity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be non-negative"));
            }
        }
        if !(self.mutation_sigma > 0.0 && self.mutation_sigma.is_finite()) {
            return Err(Error::invalid("mutation_sigma", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChange {
    pub feature: String,
    pub display_name: String,
    /// `None` when the original lab value was missing.
    pub raw_value: Option<f64>,
    pub raw_display: String,
    pub new_value: f64,
    pub new_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub evaluations: usize,
    pub generations: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CounterfactualResult<T: Scalar> {
    pub changes: Vec<FeatureChange>,
    pub original_risk: T,
    pub new_risk: T,
    pub valid: bool,
    /// Sum of MAD-normalized absolute changes.
    pub distance: f64,
    pub stats: SearchStats,
}

impl<T: Scalar> CounterfactualResult<T> {
    /// The input record with this result's changes applied.
    pub fn apply(&self, schema: &CohortSchema, record: &PatientRecord) -> Result<PatientRecord> {
        let mut out = record.clone();
        for c in &self.changes {
            let i = schema
                .feature_index(&c.feature)
                .ok_or_else(|| Error::UnknownFeature(c.feature.clone()))?;
            out.values[i] = Value::Number(c.new_value);
        }
        out.validate(schema)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CounterfactualSearch<T: Scalar> {
    pub outcome: String,
    pub direction: Direction,
    pub threshold: f64,
    pub original_risk: T,
    /// Possibly empty: the search may exhaust its budget without a valid
    /// change set.
    pub results: Vec<CounterfactualResult<T>>,
    pub stats: SearchStats,
}

#[derive(Clone)]
struct Candidate {
    genes: Vec<f64>,
    risk: f64,
    valid: bool,
    hinge: f64,
    distance: f64,
    changed: usize,
    fitness: f64,
}

struct Search<'a, T: Scalar> {
    model: &'a Forest<T>,
    outcome: usize,
    constraints: &'a CfConstraints,
    config: &'a CfConfig,
    specs: Vec<&'a FeatureSpec>,
    columns: Vec<usize>,
    base_row: Vec<T>,
    original: Vec<f64>,
    evaluations: usize,
}

impl<T: Scalar> Search<'_, T> {
    fn is_changed(&self, j: usize, x: f64) -> bool {
        ((x - self.original[j]) / self.constraints.features[j].scale).abs() > CHANGE_EPS
    }

    fn evaluate(&mut self, mut genes: Vec<f64>) -> Candidate {
        self.evaluations += 1;
        for j in 0..genes.len() {
            if !self.is_changed(j, genes[j]) {
                genes[j] = self.original[j];
            }
        }
        let mut row = self.base_row.clone();
        for (&c, &g) in self.columns.iter().zip(&genes) {
            row[c] = crate::scalar::lit(g);
        }
        let risk = to_f64(self.model.predict_outcome_encoded(&row, self.outcome));
        let (t, dir) = (self.constraints.threshold, self.constraints.direction);
        let mut distance = 0.0;
        let mut changed = 0;
        for (j, &g) in genes.iter().enumerate() {
            if self.is_changed(j, g) {
                changed += 1;
                distance += ((g - self.original[j]) / self.constraints.features[j].scale).abs();
            }
        }
        let hinge = dir.hinge(risk, t);
        Candidate {
            fitness: hinge + self.config.lambda_proximity * distance + self.config.lambda_sparsity * changed as f64,
            valid: dir.is_valid(risk, t),
            genes,
            risk,
            hinge,
            distance,
            changed,
        }
    }

    fn sample_in_box<R: Rng>(&self, j: usize, center: f64, rng: &mut R) -> f64 {
        let b = &self.constraints.features[j];
        let width = b.upper - b.lower;
        if width <= 0.0 {
            return b.lower;
        }
        let center = center.clamp(b.lower, b.upper);
        let normal = Normal::new(center, self.config.mutation_sigma * width).expect("positive sigma");
        for _ in 0..32 {
            let x = normal.sample(rng);
            if (b.lower..=b.upper).contains(&x) {
                return x;
            }
        }
        rng.random_range(b.lower..=b.upper)
    }

    fn initial<R: Rng>(&self, i: usize, rng: &mut R) -> Vec<f64> {
        let m = self.original.len();
        let max_changes = if i % 2 == 0 { m.min(2) } else { m };
        let n = rng.random_range(1..=max_changes);
        let mut genes = self.original.clone();
        for j in rand::seq::index::sample(rng, m, n) {
            let b = &self.constraints.features[j];
            genes[j] = rng.random_range(b.lower..=b.upper);
        }
        genes
    }

    fn child<R: Rng>(&self, a: &Candidate, b: &Candidate, rng: &mut R) -> Vec<f64> {
        let m = self.original.len();
        let mut genes: Vec<f64> = (0..m)
            .map(|j| if rng.random_bool(0.5) { a.genes[j] } else { b.genes[j] })
            .collect();
        let p = 1.0 / m as f64;
        let mut mutated = false;
        for j in 0..m {
            if rng.random_bool(p) {
                mutated = true;
                genes[j] = if self.is_changed(j, genes[j]) && rng.random_bool(0.3) {
                    self.original[j]
                } else {
                    self.sample_in_box(j, genes[j], rng)
                };
            }
        }
        if !mutated {
            let j = rng.random_range(0..m);
            genes[j] = self.sample_in_box(j, genes[j], rng);
        }
        genes
    }

    /// Rounds changed values to display precision, staying inside the box.
    fn rounded(&self, genes: &[f64]) -> Vec<f64> {
        genes
            .iter()
            .enumerate()
            .map(|(j, &g)| {
                if !self.is_changed(j, g) {
                    return g;
                }
                let spec = self.specs[j];
                let b = &self.constraints.features[j];
                let Some(p) = spec.precision else { return g };
                let step = 10f64.powi(-(p as i32));
                let r = spec.round_to_precision(g);
                if r > b.upper {
                    spec.round_to_precision((b.upper / step).floor() * step)
                } else if r < b.lower {
                    spec.round_to_precision((b.lower / step).ceil() * step)
                } else {
                    r
                }
            })
            .collect()
    }

    /// Rounds, then reverts single changes while validity holds, to a
    /// fixpoint: afterwards no single change can be reverted.
    fn minimize(&mut self, c: Candidate) -> Candidate {
        let mut best = c;
        let r = self.rounded(&best.genes);
        let in_box = r.iter().enumerate().all(|(j, &x)| {
            !self.is_changed(j, x) || {
                let b = &self.constraints.features[j];
                (b.lower..=b.upper).contains(&x)
            }
        });
        if in_box && r != best.genes {
            let rc = self.evaluate(r);
            if rc.valid {
                best = rc;
            }
        }
        loop {
            let mut order: Vec<usize> = (0..best.genes.len())
                .filter(|&j| self.is_changed(j, best.genes[j]))
                .collect();
            let scale = |j: usize| self.constraints.features[j].scale;
            order.sort_by(|&a, &b| {
                let da = ((best.genes[a] - self.original[a]) / scale(a)).abs();
                let db = ((best.genes[b] - self.original[b]) / scale(b)).abs();
                db.total_cmp(&da).then(a.cmp(&b))
            });
            let mut reverted = false;
            for j in order {
                let mut genes = best.genes.clone();
                genes[j] = self.original[j];
                let c = self.evaluate(genes);
                if c.valid {
                    best = c;
                    reverted = true;
                    break;
                }
            }
            if !reverted {
                return best;
            }
        }
    }

    fn normalized_gap(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = a.len() as f64;
        a.iter()
            .zip(b)
            .zip(&self.constraints.features)
            .map(|((x, y), bb)| ((x - y) / bb.scale).abs())
            .sum::<f64>()
            / m
    }
}

fn rank_key(c: &Candidate) -> (bool, f64, f64) {
    if c.valid {
        (false, c.fitness, 0.0)
    } else {
        (true, c.hinge, c.fitness)
    }
}

fn by_rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    let (ka, kb) = (rank_key(a), rank_key(b));
    ka.0.cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
}

fn genes_key(genes: &[f64]) -> Vec<u64> {
    genes.iter().map(|g| g.to_bits()).collect()
}

pub fn find_counterfactuals<T: Scalar>(
    model: &Forest<T>,
    record: &PatientRecord,
    outcome: &str,
    constraints: &CfConstraints,
    config: &CfConfig,
) -> Result<CounterfactualSearch<T>> {
    let started = Instant::now();
    config.validate()?;
    let k = model.schema.outcome_index(outcome)?;
    model.check_record(record)?;
    let schema = &model.schema;
    constraints.validate(schema)?;

    let base_row = model.encode(record);
    let original_risk = model.predict_outcome_encoded(&base_row, k);
    let (t, dir) = (constraints.threshold, constraints.direction);
    if !dir.starts_at(to_f64(original_risk), t) {
        return Err(Error::Precondition(format!(
            "{outcome} risk {:.3} is already {} the threshold {t}",
            to_f64(original_risk),
            match dir {
                Direction::Decrease => "below",
                Direction::Increase => "at or above",
            }
        )));
    }

    let indices: Vec<usize> = constraints
        .features
        .iter()
        .map(|b| schema.feature_index(&b.feature).expect("validated"))
        .collect();
    let mut search = Search {
        model,
        outcome: k,
        constraints,
        config,
        specs: indices.iter().map(|&i| &schema.features[i]).collect(),
        columns: indices.iter().map(|&i| model.encoder.groups[i].start).collect(),
        original: indices
            .iter()
            .map(|&i| model.effective_number(record, i).expect("numerical"))
            .collect(),
        base_row,
        evaluations: 0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut archive: Vec<Candidate> = Vec::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut population: Vec<Candidate> = Vec::with_capacity(config.population);
    for i in 0..config.population {
        let genes = search.initial(i, &mut rng);
        population.push(search.evaluate(genes));
    }
    let elite = (config.population / 8).max(2);
    let mut generations = 0;
    let mut best_valid = f64::INFINITY;
    let mut stale = 0;
    loop {
        for c in &population {
            if c.valid && seen.insert(genes_key(&c.genes)) {
                archive.push(c.clone());
            }
        }
        population.sort_by(by_rank);
        let best = population.iter().filter(|c| c.valid).map(|c| c.fitness).fold(f64::INFINITY, f64::min);
        if best < best_valid - 1e-12 {
            best_valid = best;
            stale = 0;
        } else if best_valid.is_finite() {
            stale += 1;
        }
        generations += 1;
        let remaining = config.budget.saturating_sub(search.evaluations);
        if remaining == 0 || stale >= config.patience {
            break;
        }
        let n_children = (config.population - elite).min(remaining);
        let mut next: Vec<Candidate> = population[..elite].to_vec();
        for _ in 0..n_children {
            let pick = |rng: &mut ChaCha8Rng| {
                let a = rng.random_range(0..population.len());
                let b = rng.random_range(0..population.len());
                a.min(b)
            };
            let (pa, pb) = (pick(&mut rng), pick(&mut rng));
            let genes = search.child(&population[pa], &population[pb], &mut rng);
            next.push(search.evaluate(genes));
        }
        population = next;
    }

    // Greedy diverse elite selection over the valid archive.
    archive.sort_by(by_rank);
    archive.truncate(256);
    let mut chosen: Vec<Candidate> = Vec::new();
    while chosen.len() < 2 * config.k && !archive.is_empty() {
        let idx = if chosen.is_empty() {
            0
        } else {
            let score = |c: &Candidate| {
                let gap = chosen
                    .iter()
                    .map(|e| search.normalized_gap(&c.genes, &e.genes))
                    .fold(f64::INFINITY, f64::min)
                    .min(1.0);
                c.fitness - config.lambda_diversity * gap
            };
            (0..archive.len())
                .min_by(|&a, &b| score(&archive[a]).total_cmp(&score(&archive[b])))
                .expect("non-empty")
        };
        chosen.push(archive.remove(idx));
    }

    let mut finals: Vec<Candidate> = Vec::new();
    let mut final_keys = HashSet::new();
    for c in chosen {
        let m = search.minimize(c);
        if m.valid && final_keys.insert(genes_key(&m.genes)) {
            finals.push(m);
        }
    }
    finals.sort_by(|a, b| a.changed.cmp(&b.changed).then(a.distance.total_cmp(&b.distance)));
    finals.truncate(config.k);

    let stats = SearchStats {
        evaluations: search.evaluations,
        generations,
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    let results = finals
        .into_iter()
        .map(|c| {
            let changes = (0..c.genes.len())
                .filter(|&j| search.is_changed(j, c.genes[j]))
                .map(|j| {
                    let spec = search.specs[j];
                    let raw = record.values[indices[j]];
                    FeatureChange {
                        feature: spec.name.clone(),
                        display_name: spec.display_name.clone(),
                        raw_value: raw.as_number(),
                        raw_display: raw.display(spec),
                        new_value: c.genes[j],
                        new_display: spec.format_number(c.genes[j]),
                    }
                })
                .collect();
            CounterfactualResult {
                changes,
                original_risk,
                new_risk: crate::scalar::lit(c.risk),
                valid: c.valid,
                distance: c.distance,
                stats: stats.clone(),
            }
        })
        .collect();
    Ok(CounterfactualSearch {
        outcome: outcome.to_string(),
        direction: dir,
        threshold: t,
        original_risk,
        results,
        stats,
    })
}
