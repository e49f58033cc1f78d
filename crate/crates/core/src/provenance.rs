//! Canonical form and SHA-256 fingerprint of a run configuration.

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;

fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().map(|(k, v)| (k, canonical(v))).collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().collect::<Map<_, _>>())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        Value::Number(n) if n.is_f64() => {
            // −0 and 0 hash alike
            let f = n.as_f64().unwrap_or(f64::NAN);
            serde_json::Number::from_f64(if f == 0.0 { 0.0 } else { f }).map(Value::Number).unwrap_or(Value::Null)
        }
        other => other,
    }
}

/// Compact JSON with sorted keys and normalized floats.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&canonical(serde_json::to_value(value)?))?)
}

/// Hex SHA-256 of [`canonical_json`].
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_json(value)?.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_and_signed_zero_do_not_matter() {
        let a = json!({"b": 1, "a": {"y": [-0.0, 2.5], "x": true}});
        let b = json!({"a": {"x": true, "y": [0.0, 2.5]}, "b": 1});
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(canonical_json(&a).unwrap(), r#"{"a":{"x":true,"y":[0.0,2.5]},"b":1}"#);
        assert_ne!(config_hash(&a).unwrap(), config_hash(&json!({"b": 2})).unwrap());
    }
}
