use proptest::prelude::*;
use serde_json::{json, Value};

use psrmab::env::config::EnvDocument;
use psrmab::harness::validate_config;

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        (-2.0f64..2.0).prop_map(Value::from),
        Just(json!(f64::MAX)),
        "[a-z-]{0,12}".prop_map(Value::from),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    scalar().prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::from),
            prop::collection::btree_map(
                prop::sample::select(vec![
                    "environment", "source", "name", "policies", "trials", "horizon", "arms", "segments",
                    "transition", "reward_means", "detector", "delta", "window", "change_points", "alpha",
                    "num_arms", "num_segments", "grid",
                ])
                .prop_map(String::from),
                inner,
                0..6,
            )
            .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

/// A valid environment document with one field replaced by junk.
fn mutated_env() -> impl Strategy<Value = Value> {
    let base = json!({
        "horizon": 100,
        "change_points": [0, 50, 100],
        "arms": [
            {"segments": [
                {"transition": [[0.9, 0.1], [0.2, 0.8]], "reward_means": [0.1, 0.9]},
                {"transition": [[0.5, 0.5], [0.5, 0.5]], "reward_means": [0.4, 0.6]}
            ]},
            {"segments": [
                {"transition": [[1.0]], "reward_means": [0.5]},
                {"transition": [[1.0]], "reward_means": [0.7]}
            ]}
        ]
    });
    let pointers = vec![
        "/horizon",
        "/change_points/1",
        "/arms/0/segments/1/transition/0",
        "/arms/1/segments/0/reward_means",
        "/arms/0/segments",
        "/arms",
    ];
    (prop::sample::select(pointers), value()).prop_map(move |(pointer, junk)| {
        let mut doc = base.clone();
        *doc.pointer_mut(pointer).expect("pointer exists") = junk;
        doc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn experiment_validation_never_panics(v in value()) {
        let _ = validate_config(&v.to_string());
    }

    #[test]
    fn experiment_validation_survives_arbitrary_text(s in "\\PC{0,200}") {
        let _ = validate_config(&s);
    }

    #[test]
    fn env_validation_never_panics(doc in mutated_env()) {
        if let Ok(d) = EnvDocument::parse(&doc.to_string()) {
            let _ = d.validate();
        }
    }

    #[test]
    fn synthetic_sources_never_panic(
        num_arms in 0usize..5,
        num_segments in 0usize..5,
        horizon in 0u64..50,
        grid in prop::collection::vec(-1.0f64..2.0, 0..4),
    ) {
        let text = json!({
            "environment": {"source": "synthetic", "num_arms": num_arms, "num_segments": num_segments,
                            "horizon": horizon, "grid": grid},
            "policies": ["de-cd"],
        })
        .to_string();
        let _ = validate_config(&text);
    }
}
