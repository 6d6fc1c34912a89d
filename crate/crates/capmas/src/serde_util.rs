//! JSON helpers for scores that may be the `+inf` sentinel, which plain
//! JSON numbers cannot carry. Finite values serialize as numbers,
//! infinity as the string `"inf"`.

use serde_json::Value;

pub mod inf_f64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            serializer.serialize_f64(*value)
        } else {
            serializer.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        struct ScoreVisitor;
        impl Visitor<'_> for ScoreVisitor {
            type Value = f64;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    other => Err(de::Error::custom(format!("unexpected score {other:?}"))),
                }
            }
        }
        deserializer.deserialize_any(ScoreVisitor)
    }
}

pub fn score_to_json(value: f64) -> Value {
    if value.is_finite() {
        serde_json::json!(value)
    } else {
        Value::String("inf".into())
    }
}

pub fn score_from_json(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) if s == "inf" => Some(f64::INFINITY),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Wrapper {
        #[serde(with = "inf_f64")]
        score: f64,
    }

    #[test]
    fn infinity_round_trips_as_string() {
        let json = serde_json::to_string(&Wrapper {
            score: f64::INFINITY,
        })
        .unwrap();
        assert_eq!(json, r#"{"score":"inf"}"#);
        let back: Wrapper = serde_json::from_str(&json).unwrap();
        assert!(back.score.is_infinite());
    }

    #[test]
    fn finite_scores_stay_numeric() {
        let json = serde_json::to_string(&Wrapper { score: 1.5 }).unwrap();
        assert_eq!(json, r#"{"score":1.5}"#);
        assert_eq!(score_from_json(&serde_json::json!(1.5)), Some(1.5));
        assert_eq!(
            score_from_json(&serde_json::json!("inf")),
            Some(f64::INFINITY)
        );
    }
}
