use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskxai::counterfactual::{CfConstraints, CounterfactualResult, Direction};
use riskxai::insight::SimilarityCriteria;
use riskxai::{CohortSchema, Dataset, FeatureTag, PatientRecord, RandomForest, Value};

/// Re-checks a result against the model without trusting the engine.
pub fn audit(
    model: &RandomForest,
    record: &PatientRecord,
    outcome: &str,
    constraints: &CfConstraints,
    result: &CounterfactualResult<f64>,
) {
    let schema: &CohortSchema = &model.schema;
    let k = schema.outcome_index(outcome).unwrap();
    let changed = result.apply(schema, record).unwrap();
    let risk = model.predict_proba(&changed).unwrap().probabilities[k];
    assert_eq!(risk, result.new_risk);
    let t = constraints.threshold;
    match constraints.direction {
        Direction::Decrease => assert!(risk < t && t <= result.original_risk),
        Direction::Increase => assert!(result.original_risk < t && t <= risk),
    }
    for (i, (a, b)) in record.values.iter().zip(&changed.values).enumerate() {
        if a == b {
            continue;
        }
        let name = &schema.features[i].name;
        let bound = constraints
            .features
            .iter()
            .find(|bb| &bb.feature == name)
            .unwrap_or_else(|| panic!("immutable feature {name} changed"));
        assert!(schema.features[i].is_lab());
        let x = b.as_number().unwrap();
        assert!(bound.lower <= x && x <= bound.upper, "{name}={x} outside box");
    }
    assert!(!result.changes.is_empty());
    for c in &result.changes {
        let i = schema.feature_index(&c.feature).unwrap();
        let mut reverted = changed.clone();
        reverted.values[i] = record.values[i];
        let r = model.predict_proba(&reverted).unwrap().probabilities[k];
        assert!(
            !constraints.direction.is_valid(r, t),
            "reverting {} keeps validity",
            c.feature
        );
    }
}

/// Independent restatement of the matching rule.
pub fn brute_force(schema: &CohortSchema, data: &[PatientRecord], index: &PatientRecord, c: &SimilarityCriteria) -> Vec<usize> {
    let age = schema.feature_index(&c.age_feature).unwrap();
    let flags: Vec<usize> = schema
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.tags.contains(&FeatureTag::Comorbidity) && f.is_binary())
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for (n, r) in data.iter().enumerate() {
        if r.id == index.id {
            continue;
        }
        let (Value::Number(a), Value::Number(b)) = (r.values[age], index.values[age]) else { continue };
        if (a - b).abs() > c.age_tolerance {
            continue;
        }
        if c.exact_match.iter().any(|f| {
            let i = schema.feature_index(f).unwrap();
            r.values[i] != index.values[i]
        }) {
            continue;
        }
        let agree = flags.iter().filter(|&&i| r.values[i] == index.values[i]).count();
        if (agree as f64) < c.comorbidity_threshold * flags.len() as f64 - 1e-12 {
            continue;
        }
        out.push(n);
    }
    out
}

/// Random table concentrated on few ages/levels so matches actually occur.
pub fn random_table(seed: u64, n: usize) -> (Dataset, PatientRecord) {
    let schema = super::schema();
    let base = super::cohort(n.max(1), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = base.records[0].clone();
    let mut records = base.records.clone();
    for r in records.iter_mut().skip(1) {
        for (i, f) in schema.features.iter().enumerate() {
            if rng.random_bool(0.7) {
                continue;
            }
            r.values[i] = match f.name.as_str() {
                "age" => match index.values[i] {
                    Value::Number(a) => Value::Number((a + rng.random_range(-7..=7) as f64).clamp(18.0, 100.0)),
                    v => v,
                },
                _ => index.values[i],
            };
        }
    }
    (Dataset::new(schema, records, None).unwrap(), index)
}
