//! Browser bindings. Every export takes plain strings and numbers and
//! returns a JSON string, so the page needs no glue beyond `JSON.parse`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mixdecomp::kernel::StochasticKernel;
use mixdecomp::report::{analyze, Chain};
use mixdecomp::wellcover::{oracle_certificate, propagation_bound, tree_bound, WellCoveringQuery};

/// Larger chains freeze the tab.
pub const STATE_LIMIT: usize = 600;

fn load(spec: &str) -> Result<Chain, String> {
    let c = Chain::parse_spec(spec).map_err(|e| e.to_string())?;
    if c.kernel.n_states() > STATE_LIMIT {
        return Err(format!("{} states; the demo stops at {STATE_LIMIT}", c.kernel.n_states()));
    }
    Ok(c)
}

pub fn profile_json(spec: &str) -> Result<Value, String> {
    let c = load(spec)?;
    let a = analyze(&c).map_err(|e| e.to_string())?;
    Ok(json!({
        "chain": c.label,
        "n_states": c.kernel.n_states(),
        "tau_mix": a.tau_mix,
        "relaxation_time": a.relaxation_time,
        "distances": a.profile.distances,
    }))
}

pub fn decomposition_json(spec: &str) -> Result<Value, String> {
    let c = load(spec)?;
    let a = analyze(&c).map_err(|e| e.to_string())?;
    Ok(json!({
        "chain": c.label,
        "tau_mix": a.tau_mix,
        "summary": a.decomposition.summary(),
        "projected_residual": a.projected_residual,
    }))
}

/// `rows` is a JSON matrix for the projected kernel, `thresholds` a JSON array.
pub fn well_covering_json(rows: &str, thresholds: &str, b: f64) -> Result<Value, String> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(rows).map_err(|e| format!("kernel: {e}"))?;
    let thresholds: Vec<f64> = serde_json::from_str(thresholds).map_err(|e| format!("thresholds: {e}"))?;
    let q = StochasticKernel::from_rows(rows).map_err(|e| e.to_string())?;
    let query = WellCoveringQuery::new(q, thresholds, b).map_err(|e| e.to_string())?;
    let mut out = serde_json::Map::new();
    let cap = 1u64 << 40;
    let entries = [
        ("oracle", oracle_certificate(&query, 64, cap)),
        ("tree", tree_bound(&query)),
        ("propagation", propagation_bound(&query, cap)),
    ];
    for (name, r) in entries {
        let v = match r {
            Ok(c) => json!({ "value": c.value, "extension": c.extension, "grid_tolerance": c.grid_tolerance }),
            Err(e) => json!({ "error": e.to_string() }),
        };
        out.insert(name.into(), v);
    }
    Ok(Value::Object(out))
}

fn wrap(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mixing_profile(spec: &str) -> Result<String, JsValue> {
    wrap(profile_json(spec))
}

#[wasm_bindgen]
pub fn decomposition(spec: &str) -> Result<String, JsValue> {
    wrap(decomposition_json(spec))
}

#[wasm_bindgen]
pub fn well_covering(rows: &str, thresholds: &str, b: f64) -> Result<String, JsValue> {
    wrap(well_covering_json(rows, thresholds, b))
}
