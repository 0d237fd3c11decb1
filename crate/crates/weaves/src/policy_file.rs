//! Policy store: a versioned JSON dump of a Q-table, readable by hand.
//!
//! ```json
//! {
//!   "format": "weaves-policy",
//!   "version": 1,
//!   "seed": 11,
//!   "mode": "exploit",
//!   "config": {"alpha": 0.1, "gamma": 0.9, "epsilon_explore": 0.5, "epsilon_exploit": 0.05, "margin": 0.1},
//!   "entries": [
//!     {"state": [["position", {"sym": "whole"}], ["depth", {"int": 0}]],
//!      "action": {"kind": "choose_module", "payload": "gauss5"},
//!      "q": -84.0}
//!   ]
//! }
//! ```

use std::path::Path;

use serde_json::{json, Value};
use weaves_core::recommender::{Action, ActionKind, Feature, FeatureState, PolicyMode, QConfig, QPolicy};

use crate::error::{AppError, Result};

pub const FORMAT: &str = "weaves-policy";
pub const VERSION: u64 = 1;

fn feature_json(f: &Feature) -> Value {
    match f {
        Feature::Sym(s) => json!({ "sym": s }),
        Feature::Int(i) => json!({ "int": i }),
        Feature::Flag(b) => json!({ "flag": b }),
    }
}

pub fn policy_to_json(p: &QPolicy) -> Value {
    let c = p.config();
    let entries: Vec<Value> = p
        .entries()
        .map(|(s, a, q)| {
            let state: Vec<Value> = s.features().iter().map(|(n, v)| json!([n, feature_json(v)])).collect();
            json!({
                "state": state,
                "action": { "kind": a.kind.as_str(), "payload": a.payload },
                "q": q,
            })
        })
        .collect();
    json!({
        "format": FORMAT,
        "version": VERSION,
        "seed": p.seed(),
        "mode": match p.mode() { PolicyMode::Explore => "explore", PolicyMode::Exploit => "exploit" },
        "config": {
            "alpha": c.alpha,
            "gamma": c.gamma,
            "epsilon_explore": c.epsilon_explore,
            "epsilon_exploit": c.epsilon_exploit,
            "margin": c.margin,
        },
        "entries": entries,
    })
}

fn bad(what: &str) -> AppError {
    AppError::Format(format!("policy file: bad {what}"))
}

fn num(v: &Value, key: &str) -> Result<f64> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| bad(key))
}

fn feature_from(v: &Value) -> Result<Feature> {
    let obj = v.as_object().filter(|o| o.len() == 1).ok_or_else(|| bad("feature"))?;
    let (k, v) = obj.iter().next().unwrap();
    match k.as_str() {
        "sym" => v.as_str().map(Feature::sym),
        "int" => v.as_i64().map(Feature::Int),
        "flag" => v.as_bool().map(Feature::Flag),
        _ => None,
    }
    .ok_or_else(|| bad("feature"))
}

pub fn policy_from_json(v: &Value) -> Result<QPolicy> {
    if v.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(bad("format tag"));
    }
    match v.get("version").and_then(Value::as_u64) {
        Some(VERSION) => {}
        Some(other) => return Err(AppError::Format(format!("policy file: unsupported version {other}"))),
        None => return Err(bad("version")),
    }
    let seed = v.get("seed").and_then(Value::as_u64).ok_or_else(|| bad("seed"))?;
    let c = v.get("config").ok_or_else(|| bad("config"))?;
    let config = QConfig {
        alpha: num(c, "alpha")?,
        gamma: num(c, "gamma")?,
        epsilon_explore: num(c, "epsilon_explore")?,
        epsilon_exploit: num(c, "epsilon_exploit")?,
        margin: num(c, "margin")?,
    };
    let mut p = QPolicy::new(config, seed);
    match v.get("mode").and_then(Value::as_str) {
        Some("explore") => p.set_mode(PolicyMode::Explore),
        Some("exploit") => p.set_mode(PolicyMode::Exploit),
        _ => return Err(bad("mode")),
    }
    for e in v.get("entries").and_then(Value::as_array).ok_or_else(|| bad("entries"))? {
        let mut state = FeatureState::new();
        for pair in e.get("state").and_then(Value::as_array).ok_or_else(|| bad("state"))? {
            let name = pair.get(0).and_then(Value::as_str).ok_or_else(|| bad("state"))?;
            state.set(name, feature_from(pair.get(1).ok_or_else(|| bad("state"))?)?);
        }
        let a = e.get("action").ok_or_else(|| bad("action"))?;
        let kind = a
            .get("kind")
            .and_then(Value::as_str)
            .and_then(ActionKind::parse)
            .ok_or_else(|| bad("action kind"))?;
        let payload = a.get("payload").and_then(Value::as_str).ok_or_else(|| bad("action payload"))?;
        p.set_q(state, Action::new(kind, payload), num(e, "q")?);
    }
    Ok(p)
}

pub fn save_policy(p: &QPolicy, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&policy_to_json(p)).map_err(|e| AppError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<QPolicy> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| AppError::Format(format!("policy file: {e}")))?;
    policy_from_json(&v)
}
