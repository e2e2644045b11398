use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

/// Spreadsheet error values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    Div0,
    Ref,
    Value,
    Cycle,
    Name,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] = [
        ErrorKind::Div0,
        ErrorKind::Ref,
        ErrorKind::Value,
        ErrorKind::Cycle,
        ErrorKind::Name,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Div0 => "#DIV/0!",
            ErrorKind::Ref => "#REF!",
            ErrorKind::Value => "#VALUE!",
            ErrorKind::Cycle => "#CYCLE!",
            ErrorKind::Name => "#NAME?",
        }
    }

    pub fn from_code(code: &str) -> Option<ErrorKind> {
        ErrorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(code))
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A cell value. Numbers are always finite.
#[derive(Debug, Clone)]
pub enum Value {
    Number(f64),
    Text(String),
    Bool(bool),
    Error(ErrorKind),
}

impl Value {
    /// Wraps a float, mapping NaN and infinities to `#VALUE!`.
    pub fn number(n: f64) -> Value {
        if n.is_finite() {
            Value::Number(n)
        } else {
            Value::Error(ErrorKind::Value)
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Value::Error(_))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn dtype(&self) -> Option<DType> {
        match self {
            Value::Number(_) => Some(DType::Number),
            Value::Text(_) => Some(DType::Text),
            Value::Bool(_) => Some(DType::Boolean),
            Value::Error(_) => None,
        }
    }

    /// Text rendering used by `&`: integral numbers print without a fraction.
    pub fn display_text(&self) -> String {
        match self {
            Value::Number(n) => format_number(*n),
            Value::Text(s) => s.clone(),
            Value::Bool(true) => "TRUE".to_string(),
            Value::Bool(false) => "FALSE".to_string(),
            Value::Error(e) => e.as_str().to_string(),
        }
    }
}

pub(crate) fn format_number(n: f64) -> String {
    if n == 0.0 {
        // covers -0.0
        "0".to_string()
    } else if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

/// Bitwise equality: numbers compare by bit pattern, so `0.0 != -0.0`.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => a.to_bits() == b.to_bits(),
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Error(a), Value::Error(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::number(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<ErrorKind> for Value {
    fn from(e: ErrorKind) -> Self {
        Value::Error(e)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => write!(f, "{s:?}"),
            other => f.write_str(&other.display_text()),
        }
    }
}

/// Declared type of a schema field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    Number,
    Text,
    Boolean,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::Number => "Number",
            DType::Text => "Text",
            DType::Boolean => "Boolean",
        })
    }
}

/// Comparison order across types: numbers < text < booleans. Text compares
/// ASCII case-insensitively.
pub(crate) fn compare_scalars(a: &Value, b: &Value) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Number(_) => 0,
            Value::Text(_) => 1,
            Value::Bool(_) => 2,
            Value::Error(_) => 3,
        }
    }
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (Value::Text(x), Value::Text(y)) => {
            let xs = x.bytes().map(|c| c.to_ascii_lowercase());
            let ys = y.bytes().map(|c| c.to_ascii_lowercase());
            xs.cmp(ys)
        }
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

// JSON form: numbers, strings and booleans map to their JSON counterparts;
// errors are `{"error": "#DIV/0!"}`.
impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(n) => serializer.serialize_f64(*n),
            Value::Text(s) => serializer.serialize_str(s),
            Value::Bool(b) => serializer.serialize_bool(*b),
            Value::Error(e) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("error", e.as_str())?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl<'de> Visitor<'de> for ValueVisitor {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, string, boolean or {\"error\": code}")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Value, E> {
                Ok(Value::Bool(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
                Ok(Value::Number(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
                Ok(Value::Number(v as f64))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
                if v.is_finite() {
                    Ok(Value::Number(v))
                } else {
                    Err(E::custom("non-finite number"))
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                Ok(Value::Text(v.to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
                let key: Option<String> = map.next_key()?;
                match key.as_deref() {
                    Some("error") => {
                        let code: String = map.next_value()?;
                        if map.next_key::<String>()?.is_some() {
                            return Err(de::Error::custom("unexpected extra key in error value"));
                        }
                        ErrorKind::from_code(&code)
                            .map(Value::Error)
                            .ok_or_else(|| de::Error::custom(format!("unknown error code {code}")))
                    }
                    _ => Err(de::Error::custom("expected {\"error\": code}")),
                }
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_become_value_errors() {
        assert_eq!(Value::number(f64::NAN), Value::Error(ErrorKind::Value));
        assert_eq!(Value::number(f64::INFINITY), Value::Error(ErrorKind::Value));
        assert_eq!(Value::number(1.5), Value::Number(1.5));
    }

    #[test]
    fn json_forms() {
        let vals = vec![
            Value::Number(2.5),
            Value::Text("x".into()),
            Value::Bool(true),
            Value::Error(ErrorKind::Div0),
        ];
        let s = serde_json::to_string(&vals).unwrap();
        assert_eq!(s, r##"[2.5,"x",true,{"error":"#DIV/0!"}]"##);
        let back: Vec<Value> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vals);
        assert!(serde_json::from_str::<Value>(r##"{"error":"#NOPE"}"##).is_err());
        assert!(serde_json::from_str::<Value>("null").is_err());
    }

    #[test]
    fn number_text_rendering() {
        assert_eq!(Value::Number(3.0).display_text(), "3");
        assert_eq!(Value::Number(-0.0).display_text(), "0");
        assert_eq!(Value::Number(0.25).display_text(), "0.25");
        assert_eq!(Value::Bool(false).display_text(), "FALSE");
    }

    #[test]
    fn cross_type_ordering() {
        let n = Value::Number(1e9);
        let t = Value::Text("a".into());
        let b = Value::Bool(false);
        assert_eq!(compare_scalars(&n, &t), Ordering::Less);
        assert_eq!(compare_scalars(&t, &b), Ordering::Less);
        assert_eq!(
            compare_scalars(&Value::Text("ABC".into()), &Value::Text("abc".into())),
            Ordering::Equal
        );
    }
}
