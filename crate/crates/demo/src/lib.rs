//! Browser bindings for the static demo page in `www/`.
//!
//! Each export takes plain strings and numbers and returns a JSON string.
//! The `*_json` functions carry the logic and are callable natively.

use serde_json::json;
use wasm_bindgen::prelude::*;

use pandora_delegation::harness::{gap_sweep, FamilyKind, FamilySpec, GapMethod, GapOptions};
use pandora_delegation::model::{cap_value, CapValues, Instance, Marginal};
use pandora_delegation::ocrs::{
    build_greedy_ocrs, estimate_selectability, ex_ante_membership, ocrs_scale, SelectMode,
    EXHAUSTIVE_SELECTABILITY_LIMIT,
};
use pandora_delegation::stats::EvalMode;

/// Largest size the gap curve accepts; brute force beyond it stalls the tab.
pub const DEMO_MAX_N: usize = 256;

const CURVE_POINTS: usize = 60;

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad {what} entry {s:?}")))
        .collect()
}

/// Cap value of a discrete law plus the excess curve `E[(V - t)_+]`.
pub fn cap_explorer_json(values: &str, probs: &str, cost: f64) -> Result<String, String> {
    let v: Vec<f64> = parse_list(values, "value")?;
    let p: Vec<f64> = parse_list(probs, "probability")?;
    if v.len() != p.len() || v.is_empty() {
        return Err(format!("{} values against {} probabilities", v.len(), p.len()));
    }
    if p.iter().any(|&q| !(0.0..=1.0).contains(&q)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err("probabilities must lie in [0, 1] and sum to 1".into());
    }
    let law = Marginal::from_pairs(v.iter().copied().zip(p.iter().copied()));
    let cap = cap_value(&law, cost).map_err(|e| e.to_string())?;
    let hi = law.max().max(cap);
    let curve: Vec<[f64; 2]> = (0..=CURVE_POINTS)
        .map(|j| {
            let t = hi * j as f64 / CURVE_POINTS as f64;
            [t, law.excess(t)]
        })
        .collect();
    let capped = law.capped(cap);
    Ok(json!({ "cap": cap, "mean": law.mean(), "capped_mean": capped.mean(), "curve": curve }).to_string())
}

/// Gap rows for a fixed family over the listed sizes.
pub fn gap_curve_json(family: &str, ns: &str, seed: u64) -> Result<String, String> {
    let family: FamilyKind = family.parse().map_err(|e: pandora_delegation::Error| e.to_string())?;
    if family.is_random() {
        return Err("the demo only sweeps the fixed families".into());
    }
    let ns: Vec<usize> = parse_list(ns, "size")?;
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > DEMO_MAX_N) {
        return Err(format!("size {n} outside 1..={DEMO_MAX_N}"));
    }
    let opts = GapOptions { method: GapMethod::default_for(family), samples: 20_000, seed, timing: false };
    let base = FamilySpec::new(family, ns.first().copied().unwrap_or(1));
    let report = gap_sweep(&base, &ns, &opts).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// Ex-ante membership and exhaustive selectability of the greedy scheme.
pub fn selectability_json(instance: &str) -> Result<String, String> {
    let inst = Instance::from_json(instance).map_err(|e| e.to_string())?;
    if inst.n() > EXHAUSTIVE_SELECTABILITY_LIMIT {
        return Err(format!("at most {EXHAUSTIVE_SELECTABILITY_LIMIT} elements in the browser"));
    }
    let run = || -> pandora_delegation::Result<(Vec<f64>, Vec<f64>, f64)> {
        let caps = CapValues::compute(&inst)?;
        let scale = ocrs_scale(&inst.constraint)?;
        let p: Vec<f64> = ex_ante_membership(&inst, &caps, EvalMode::Exact)?.iter().map(|e| scale * e.mean).collect();
        let ocrs = build_greedy_ocrs(&inst, &caps, &p)?;
        let sel = estimate_selectability(&ocrs, &p, SelectMode::Exhaustive)?.iter().map(|e| e.mean).collect();
        Ok((p, sel, scale))
    };
    let (p, sel, scale) = run().map_err(|e| e.to_string())?;
    Ok(json!({ "ex_ante": p, "selectability": sel, "scale": scale }).to_string())
}

#[wasm_bindgen]
pub fn cap_explorer(values: &str, probs: &str, cost: f64) -> Result<String, JsError> {
    cap_explorer_json(values, probs, cost).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gap_curve(family: &str, ns: &str, seed: u64) -> Result<String, JsError> {
    gap_curve_json(family, ns, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn selectability(instance: &str) -> Result<String, JsError> {
    selectability_json(instance).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn cap_of_two_point_law() {
        // E[(V - t)_+] = 0.5 (4 - t) = 1 at t = 2
        let out: Value = serde_json::from_str(&cap_explorer_json("0, 4", "0.5 0.5", 1.0).unwrap()).unwrap();
        assert!((out["cap"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert!((out["capped_mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(out["curve"].as_array().unwrap().len(), CURVE_POINTS + 1);
    }

    #[test]
    fn cap_rejects_bad_law() {
        assert!(cap_explorer_json("1,2", "0.5", 0.1).is_err());
        assert!(cap_explorer_json("1,2", "0.5,0.6", 0.1).is_err());
    }

    #[test]
    fn gap_curve_rows() {
        let out: Value = serde_json::from_str(&gap_curve_json("standard-impossibility", "2,4,8", 1).unwrap()).unwrap();
        assert_eq!(out["rows"].as_array().unwrap().len(), 3);
        assert!(out["slope"].as_f64().unwrap() < 0.0);
        assert!(gap_curve_json("random-matroid", "2", 1).is_err());
        assert!(gap_curve_json("standard-impossibility", "1000", 1).is_err());
    }

    #[test]
    fn selectability_bounds() {
        let spec = FamilySpec::new(FamilyKind::RandomMatroid, 4).with("support", 2.0);
        let inst = pandora_delegation::harness::generate_family(&spec).unwrap();
        let out: Value = serde_json::from_str(&selectability_json(&inst.to_json().unwrap()).unwrap()).unwrap();
        for s in out["selectability"].as_array().unwrap() {
            let s = s.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }
}
