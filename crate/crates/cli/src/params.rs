//! `key=value` parameters for the `update` command.

use std::collections::BTreeMap;

use serde_json::{Map, Number, Value};
use thiserror::Error;

use mulearn::semantics::Discretization;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter `{0}` is not of the form key=value")]
    Malformed(String),
    #[error("parameter `{0}` given twice")]
    Duplicate(String),
    #[error("parameter `{key}`: expected a number, found `{value}`")]
    NotANumber { key: String, value: String },
    #[error("missing parameter `{0}`")]
    Missing(String),
}

pub fn split(raw: &[String]) -> Result<BTreeMap<String, String>, ParamError> {
    let mut out = BTreeMap::new();
    for p in raw {
        let (k, v) = p
            .split_once('=')
            .filter(|(k, _)| !k.trim().is_empty())
            .ok_or_else(|| ParamError::Malformed(p.clone()))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(ParamError::Duplicate(k.trim().to_string()));
        }
    }
    Ok(out)
}

/// Integers, then floats, then bare strings.
pub fn scalar(v: &str) -> Value {
    if let Ok(i) = v.parse::<i64>() {
        return Value::Number(i.into());
    }
    if let Some(n) = v.parse::<f64>().ok().and_then(Number::from_f64) {
        return Value::Number(n);
    }
    match v {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => Value::String(v.to_string()),
    }
}

pub fn number(key: &str, v: &str) -> Result<f64, ParamError> {
    v.parse().map_err(|_| ParamError::NotANumber {
        key: key.into(),
        value: v.into(),
    })
}

pub fn to_object(params: &BTreeMap<String, String>) -> Map<String, Value> {
    params.iter().map(|(k, v)| (k.clone(), scalar(v))).collect()
}

/// `grid.u=-1,0,1` entries as a discretization; other keys are ignored.
pub fn grids(params: &BTreeMap<String, String>) -> Result<Discretization, ParamError> {
    let mut d = Discretization::new();
    for (k, v) in params {
        if let Some(var) = k.strip_prefix("grid.") {
            let values = v
                .split(',')
                .map(|x| number(k, x.trim()))
                .collect::<Result<Vec<f64>, _>>()?;
            d = d.with_grid(var, values);
        }
    }
    Ok(d)
}
