//! Browser bindings: layout levels and simulated candidate costs for a
//! scenario, plus the insertion-randomness metric.

use serde_json::json;
use storesel_core::advisor::generate_candidates;
use storesel_core::features::randomness;
use storesel_core::layout::{bytes_accessed, recommend_layouts, recommend_layouts_query_oriented, LayoutConfig};
use storesel_core::scenario::{lineitem_scenario, simulate, LineitemScale, ScenarioSpec};
use storesel_core::schema::EngineKind;
use storesel_core::sim::CostParams;
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn parse(toml: &str) -> Result<ScenarioSpec, String> {
    ScenarioSpec::from_toml(toml).map_err(|e| e.to_string())
}

/// TOML for one of the built-in LineItem mixes.
pub fn scenario_text(mix: &str, divisor: u32) -> Out {
    if divisor == 0 {
        return Err("divisor must be positive".into());
    }
    let spec = lineitem_scenario(
        mix,
        LineitemScale {
            divisor: divisor as u64,
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(spec.to_toml())
}

/// `{"levels": [...], "query_oriented": [...]}`, layouts coarse to fine.
pub fn layout_json(toml: &str) -> Out {
    let spec = parse(toml)?;
    let w = spec.workload().map_err(|e| e.to_string())?;
    let cfg = LayoutConfig::default();
    let cost = |op: &_| bytes_accessed(&spec.schema, op);
    let levels = recommend_layouts(&w, &spec.schema, &cfg, &cost).map_err(|e| e.to_string())?;
    let baseline = recommend_layouts_query_oriented(&w, &spec.schema, &cfg, &cost).map_err(|e| e.to_string())?;
    let text = |v: Vec<_>| v.iter().map(ToString::to_string).collect::<Vec<String>>();
    Ok(json!({ "levels": text(levels), "query_oriented": text(baseline) }).to_string())
}

/// Every valid (engine, layout level) pair with its simulated cost in
/// microseconds, cheapest first.
pub fn simulate_json(toml: &str) -> Out {
    let spec = parse(toml)?;
    let w = spec.workload().map_err(|e| e.to_string())?;
    let cost = |op: &_| bytes_accessed(&spec.schema, op);
    let levels = recommend_layouts(&w, &spec.schema, &LayoutConfig::default(), &cost).map_err(|e| e.to_string())?;
    let params = CostParams::default();
    let mut rows = Vec::new();
    for st in generate_candidates(&levels, &EngineKind::ALL) {
        let us = simulate(&spec, &st, &params).map_err(|e| e.to_string())?;
        rows.push((st.to_string(), us));
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    let out: Vec<_> = rows
        .into_iter()
        .map(|(s, us)| json!({ "structure": s, "cost_us": us }))
        .collect();
    Ok(serde_json::Value::from(out).to_string())
}

/// Randomness of integers separated by commas or whitespace.
pub fn randomness_of(text: &str) -> Result<f64, String> {
    let keys = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<i64>().map_err(|_| format!("not an integer: {t}")))
        .collect::<Result<Vec<_>, _>>()?;
    randomness(&keys).map_err(|e| e.to_string())
}

fn js(r: Out) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn scenario(mix: &str, divisor: u32) -> Result<String, JsValue> {
    js(scenario_text(mix, divisor))
}

#[wasm_bindgen]
pub fn layouts(toml: &str) -> Result<String, JsValue> {
    js(layout_json(toml))
}

#[wasm_bindgen]
pub fn simulate_candidates(toml: &str) -> Result<String, JsValue> {
    js(simulate_json(toml))
}

#[wasm_bindgen]
pub fn key_randomness(text: &str) -> Result<f64, JsValue> {
    randomness_of(text).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomness_parses_and_scores() {
        assert_eq!(randomness_of("1, 2 3\n4").unwrap(), 0.0);
        assert!((randomness_of("2 1 4 3").unwrap() - 8.0 / 12.0).abs() < 1e-12);
        assert!(randomness_of("7").is_err());
        assert!(randomness_of("1 x").unwrap_err().contains("x"));
    }

    #[test]
    fn rejects_unknown_mix_and_zero_divisor() {
        assert!(scenario_text("olap", 120).is_err());
        assert!(scenario_text("analytical", 0).is_err());
        assert!(layout_json("not toml").is_err());
    }
}
