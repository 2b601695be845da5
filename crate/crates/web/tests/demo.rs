use storesel_web::{layout_json, scenario_text, simulate_json};

#[test]
fn analytical_levels_run_nsm_to_dsm_and_include_the_split() {
    let toml = scenario_text("analytical", 1200).unwrap();
    let v: serde_json::Value = serde_json::from_str(&layout_json(&toml).unwrap()).unwrap();
    let levels: Vec<&str> = v["levels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_str().unwrap())
        .collect();
    assert_eq!(levels.first(), Some(&"(V1,V2,V3,V4,V5,V6,V7,V8,V9,V10,V11,V12)"));
    assert_eq!(
        levels.last(),
        Some(&"(V1)(V2)(V3)(V4)(V5)(V6)(V7)(V8)(V9)(V10)(V11)(V12)")
    );
    assert!(
        levels.contains(&"(V1,V4,V5,V6,V8,V9,V10,V11,V12)(V2,V3,V7)"),
        "{levels:?}"
    );
    assert!(!v["query_oriented"].as_array().unwrap().is_empty());
}

#[test]
fn simulated_candidates_are_sorted_and_cover_every_engine() {
    let toml = scenario_text("transactional", 1200).unwrap();
    let v: serde_json::Value = serde_json::from_str(&simulate_json(&toml).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    let costs: Vec<f64> = rows.iter().map(|r| r["cost_us"].as_f64().unwrap()).collect();
    assert!(costs.windows(2).all(|w| w[0] <= w[1]));
    for engine in ["bplus", "lsm", "columnar"] {
        assert!(
            rows.iter()
                .any(|r| r["structure"].as_str().unwrap().starts_with(engine)),
            "{engine}"
        );
    }
}
