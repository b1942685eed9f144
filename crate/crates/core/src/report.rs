//! Number formatting shared by JSON and CSV artifacts.

use serde_json::Value;

/// Rounds to 9 significant digits so serialized reals are stable across
/// platforms and languages.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

/// Formats a real for CSV output (9 significant digits, shortest form).
pub fn fmt_real(v: f64) -> String {
    let r = round_sig(v);
    if r.is_finite() {
        serde_json::to_string(&r).expect("finite float serializes")
    } else {
        r.to_string()
    }
}

/// Recursively rounds every float in a JSON document to 9 significant digits.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(f) = n.as_f64() {
                    if let Some(r) = serde_json::Number::from_f64(round_sig(f)) {
                        *n = r;
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Serializes with keys sorted and floats rounded.
pub fn to_stable_json<T: serde::Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("value serializes");
    round_json(&mut v);
    // serde_json's default map is a BTreeMap, so keys come out sorted.
    serde_json::to_string(&v).expect("json serializes")
}

pub fn to_stable_json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("value serializes");
    round_json(&mut v);
    serde_json::to_string_pretty(&v).expect("json serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_nine_digits() {
        assert_eq!(round_sig(0.123456789123), 0.123456789);
        assert_eq!(round_sig(123456789.6), 123456790.0);
        assert_eq!(fmt_real(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_real(0.2), "0.2");
    }

    #[test]
    fn stable_json_sorts_keys() {
        let v = serde_json::json!({"b": 1.0 / 3.0, "a": [2.0f64.sqrt()]});
        assert_eq!(to_stable_json(&v), r#"{"a":[1.41421356],"b":0.333333333}"#);
    }
}
