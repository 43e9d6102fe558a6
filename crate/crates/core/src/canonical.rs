//! Canonical JSON codec shared by every interface (REST body, bus payload,
//! store log).
//!
//! Canonical form: object keys sorted lexicographically, no insignificant
//! whitespace, floating point numbers rounded to at most six decimal digits
//! and printed in plain (non-exponent) notation with trailing zeros removed.
//! Equal values always produce byte-identical output.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("invalid canonical JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("payload is not valid UTF-8")]
    Utf8,
}

/// Number of decimal digits kept for floating point values.
pub const FLOAT_DECIMALS: i32 = 6;

/// Encodes any serializable domain value into canonical JSON bytes.
pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    encode_string(value).into_bytes()
}

pub fn encode_string<T: Serialize + ?Sized>(value: &T) -> String {
    // Only fails for maps with non-string keys, which no domain type has.
    let tree = serde_json::to_value(value).expect("domain types serialize to JSON trees");
    value_to_string(&tree)
}

/// Size in bytes of the canonical encoding.
pub fn encoded_len<T: Serialize + ?Sized>(value: &T) -> usize {
    encode_string(value).len()
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    Ok(serde_json::from_slice(bytes)?)
}

pub fn decode_str<T: DeserializeOwned>(text: &str) -> Result<T, CodecError> {
    Ok(serde_json::from_str(text)?)
}

/// Renders an already-built JSON tree in canonical form.
pub fn value_to_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

/// Rounds to the canonical number of decimals. Domain code applies this to
/// derived floats so that decode(encode(x)) == x holds exactly.
pub fn round_decimals(x: f64) -> f64 {
    let scale = 10f64.powi(FLOAT_DECIMALS);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn write_value(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                write_float(out, n.as_f64().unwrap_or(0.0));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => write_string(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            // serde_json's default map is ordered by key; sort anyway so the
            // output does not depend on that feature flag.
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, k);
                out.push(':');
                write_value(out, v);
            }
            out.push('}');
        }
    }
}

fn write_float(out: &mut String, x: f64) {
    if !x.is_finite() {
        out.push_str("null");
        return;
    }
    let r = round_decimals(x);
    // f64 Display never switches to exponent notation and prints the
    // shortest representation that round-trips.
    let _ = write!(out, "{r}");
}

fn write_string(out: &mut String, s: &str) {
    // serde_json's string escaping is already minimal and deterministic.
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_compact() {
        let v = json!({"b": 1, "a": {"z": true, "y": null}, "c": [1, 2]});
        assert_eq!(value_to_string(&v), r#"{"a":{"y":null,"z":true},"b":1,"c":[1,2]}"#);
    }

    #[test]
    fn floats_rounded_to_six_decimals() {
        assert_eq!(value_to_string(&json!(0.1234567)), "0.123457");
        assert_eq!(value_to_string(&json!(30.0)), "30");
        assert_eq!(value_to_string(&json!(-0.0000001)), "0");
        assert_eq!(value_to_string(&json!(1e-6)), "0.000001");
        assert_eq!(value_to_string(&json!(123456.5)), "123456.5");
    }

    #[test]
    fn string_escaping() {
        assert_eq!(value_to_string(&json!("a\"b\n")), r#""a\"b\n""#);
    }
}
