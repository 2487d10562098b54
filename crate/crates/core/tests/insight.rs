mod common;

use common::oracles::{brute_force, random_table};
use proptest::prelude::*;
use riskxai::forest::{train_forest, Hyperparams};
use riskxai::insight::{
    cohort_summary, comorbidity_agreement, find_similar, global_importance, GroupRule, ImportanceConfig,
    ImportanceMethod, SimilarityCriteria, SubgroupPair,
};
use riskxai::stats::spearman;
use riskxai::{Dataset, FeatureTag, PatientRecord, RandomForest, Value};

#[test]
fn identical_copies_match() {
    let schema = common::schema();
    let index = common::reference().records[0].clone();
    let mut a = index.clone();
    a.id = "copy-a".into();
    let mut b = index.clone();
    b.id = "copy-b".into();
    let d = Dataset::new(schema.clone(), vec![a, b, index.clone()], None).unwrap();
    assert_eq!(find_similar(&d, &index, &SimilarityCriteria::default()).unwrap(), vec![0, 1]);

    let sex = schema.feature_index("sex").unwrap();
    let mut c = index.clone();
    c.id = "other-sex".into();
    c.values[sex] = match c.values[sex] {
        Value::Binary(x) => Value::Binary(!x),
        v => v,
    };
    let d = Dataset::new(schema, vec![c], None).unwrap();
    assert!(find_similar(&d, &index, &SimilarityCriteria::default()).unwrap().is_empty());
}

#[test]
fn matches_brute_force_on_random_tables() {
    let c = SimilarityCriteria::default();
    let mut total = 0;
    for seed in 0..30 {
        let (d, index) = random_table(seed, 150);
        let got = find_similar(&d, &index, &c).unwrap();
        assert_eq!(got, brute_force(&d.schema, &d.records, &index, &c), "seed {seed}");
        total += got.len();
    }
    assert!(total > 0, "tables never produced a match");
}

#[test]
fn criteria_validation() {
    let d = common::reference();
    let index = &d.records[0];
    let bad = SimilarityCriteria {
        exact_match: vec!["blood_type".into()],
        ..Default::default()
    };
    assert!(matches!(find_similar(d, index, &bad), Err(riskxai::Error::UnknownFeature(_))));
    let bad = SimilarityCriteria {
        comorbidity_threshold: 1.5,
        ..Default::default()
    };
    assert!(find_similar(d, index, &bad).is_err());
    let bad = SimilarityCriteria {
        age_feature: "sex".into(),
        ..Default::default()
    };
    assert!(find_similar(d, index, &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn agreement_is_symmetric(a in 0usize..2000, b in 0usize..2000) {
        let d = common::reference();
        let flags = d.schema.features_with_tag(FeatureTag::Comorbidity);
        let (ra, rb) = (&d.records[a], &d.records[b]);
        prop_assert_eq!(comorbidity_agreement(ra, rb, &flags), comorbidity_agreement(rb, ra, &flags));
    }
}

fn small_model(train: &Dataset, seed: u64) -> RandomForest {
    let hp = Hyperparams {
        n_trees: 30,
        max_depth: 8,
        ..Default::default()
    };
    train_forest(train, &hp, seed).unwrap()
}

#[test]
fn summary_with_and_without_matches() {
    let schema = common::schema();
    let train = common::cohort(600, 3);
    let model = small_model(&train, 1);
    let index = train.records[5].clone();

    let nobody = Dataset::new(schema.clone(), vec![index.clone()], Some(vec![vec![false; 10]])).unwrap();
    let s = cohort_summary(&model, &nobody, &index, &SimilarityCriteria::default()).unwrap();
    assert_eq!(s.matched, 0);
    assert!(s.mean_predicted_risk.is_none() && s.observed_prevalence.is_none());
    let json = serde_json::to_value(&s).unwrap();
    assert!(json["mean_predicted_risk"].is_null());

    let copies: Vec<PatientRecord> = (0..4)
        .map(|i| PatientRecord {
            id: format!("c{i}"),
            values: index.values.clone(),
        })
        .collect();
    let labels = vec![vec![true; 10], vec![false; 10], vec![false; 10], vec![false; 10]];
    let d = Dataset::new(schema, copies, Some(labels)).unwrap();
    let s = cohort_summary(&model, &d, &index, &SimilarityCriteria::default()).unwrap();
    assert_eq!(s.matched, 4);
    for (m, p) in s.mean_predicted_risk.unwrap().iter().zip(&s.index_risk.probabilities) {
        assert!((m - p).abs() < 1e-12);
    }
    assert_eq!(s.observed_prevalence.unwrap(), vec![0.25; 10]);
}

#[test]
fn tree_absent_feature_scores_exactly_zero() {
    let g = common::generator_with_constant_trauma_room();
    let train = common::cohort_with(&g, 800, 4);
    let model = small_model(&train, 2);
    let cfg = ImportanceConfig {
        sample_size: 200,
        ..Default::default()
    };
    let gi = global_importance(&model, &train, None, &cfg).unwrap();
    assert_eq!(gi.overall.importance("trauma_room"), Some(0.0));
    assert_eq!(gi.overall.entries.last().unwrap().importance, 0.0);
    assert_eq!(gi.overall.entries.len(), 33);
    assert!(gi.overall.entries.iter().all(|e| e.importance >= 0.0));

    let perm = global_importance(
        &model,
        &train,
        None,
        &ImportanceConfig {
            method: ImportanceMethod::Permutation,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(perm.overall.importance("trauma_room"), Some(0.0));

    // deterministic given the seed
    assert_eq!(gi, global_importance(&model, &train, None, &cfg).unwrap());
}

#[test]
fn dominant_feature_ranks_first_for_its_outcome() {
    let train = common::cohort(3000, 8);
    let model = small_model(&train, 3);
    let cfg = ImportanceConfig {
        sample_size: 300,
        outcome: Some("prolonged_mv".into()),
        ..Default::default()
    };
    let gi = global_importance(&model, &train, None, &cfg).unwrap();
    assert_eq!(gi.overall.entries[0].feature, "procedure_code", "{:?}", &gi.overall.entries[..3]);
}

#[test]
fn neutral_grouping_gives_similar_rankings() {
    let train = common::cohort(4000, 12);
    let model = small_model(&train, 4);
    let rural = SubgroupPair {
        name: "rural".into(),
        rule: GroupRule::Flag { feature: "rural".into() },
        in_label: "Rural".into(),
        out_label: "Urban".into(),
    };
    let cfg = ImportanceConfig {
        sample_size: 500,
        ..Default::default()
    };
    let gi = global_importance(&model, &train, Some(&rural), &cfg).unwrap();
    assert_eq!(gi.groups.len(), 2);
    assert_eq!(gi.groups[0].n_records + gi.groups[1].n_records, train.len());
    let a = gi.groups[0].by_schema(&train.schema);
    let b = gi.groups[1].by_schema(&train.schema);
    let rho = spearman(&a, &b).unwrap();
    assert!(rho > 0.8, "rho = {rho}");
}

#[test]
fn empty_group_is_an_error() {
    let train = common::cohort(300, 2);
    let model = small_model(&train, 1);
    let everyone = SubgroupPair {
        name: "adults".into(),
        rule: GroupRule::AtMost {
            feature: "age".into(),
            value: 100.0,
        },
        in_label: "All".into(),
        out_label: "None".into(),
    };
    let e = global_importance(&model, &train, Some(&everyone), &ImportanceConfig::default()).unwrap_err();
    assert_eq!(e.code(), "empty_group");
}
