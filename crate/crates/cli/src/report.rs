//! Ordered key/value reports rendered as text or JSON.

use serde_json::{Map, Number, Value};

/// Rounds to 10 significant digits.
pub fn sig10(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.9e}").parse().unwrap_or(x)
}

/// Shortest decimal form of `x` after rounding to 10 significant digits.
pub fn fmt10(x: f64) -> String {
    format!("{}", sig10(x))
}

pub fn fmt4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone)]
pub enum Field {
    Num(f64),
    Int(usize),
    Bool(bool),
    Text(String),
    Nums(Vec<f64>),
    /// Numbers that may be undefined, shown as `undefined` or `null`.
    MaybeNums(Vec<Option<f64>>),
    Texts(Vec<String>),
    Missing,
    /// A nested report emitted in JSON only.
    JsonOnly(Report),
}

impl From<f64> for Field {
    fn from(x: f64) -> Field {
        Field::Num(x)
    }
}

impl From<usize> for Field {
    fn from(x: usize) -> Field {
        Field::Int(x)
    }
}

impl From<bool> for Field {
    fn from(x: bool) -> Field {
        Field::Bool(x)
    }
}

impl From<&str> for Field {
    fn from(x: &str) -> Field {
        Field::Text(x.to_string())
    }
}

impl From<String> for Field {
    fn from(x: String) -> Field {
        Field::Text(x)
    }
}

impl From<Vec<f64>> for Field {
    fn from(x: Vec<f64>) -> Field {
        Field::Nums(x)
    }
}

impl From<Option<f64>> for Field {
    fn from(x: Option<f64>) -> Field {
        x.map_or(Field::Missing, Field::Num)
    }
}

/// Fields carry two names: a short symbol for text and a key for JSON.
#[derive(Debug, Clone, Default)]
pub struct Report {
    fields: Vec<(&'static str, &'static str, Field)>,
}

impl Report {
    pub fn new() -> Report {
        Report::default()
    }

    pub fn add(&mut self, label: &'static str, key: &'static str, value: impl Into<Field>) -> &mut Report {
        self.fields.push((label, key, value.into()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, _, value) in &self.fields {
            let shown = match value {
                Field::Num(x) => fmt4(*x),
                Field::Int(k) => k.to_string(),
                Field::Bool(b) => b.to_string(),
                Field::Text(s) => s.clone(),
                Field::Nums(v) => format!("({})", v.iter().map(|x| fmt4(*x)).collect::<Vec<_>>().join(", ")),
                Field::MaybeNums(v) => format!(
                    "({})",
                    v.iter().map(|x| x.map_or_else(|| "undefined".to_string(), fmt4)).collect::<Vec<_>>().join(", ")
                ),
                Field::Texts(v) => format!("({})", v.join(", ")),
                Field::Missing => "-".to_string(),
                Field::JsonOnly(_) => continue,
            };
            out.push_str(&format!("{label}: {shown}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (_, key, value) in &self.fields {
            map.insert((*key).to_string(), field_json(value));
        }
        Value::Object(map)
    }
}

fn num(x: f64) -> Value {
    Number::from_f64(sig10(x)).map_or(Value::Null, Value::Number)
}

fn field_json(f: &Field) -> Value {
    match f {
        Field::Num(x) => num(*x),
        Field::Int(k) => Value::from(*k),
        Field::Bool(b) => Value::Bool(*b),
        Field::Text(s) => Value::String(s.clone()),
        Field::Nums(v) => Value::Array(v.iter().map(|x| num(*x)).collect()),
        Field::MaybeNums(v) => Value::Array(v.iter().map(|x| x.map_or(Value::Null, num)).collect()),
        Field::Texts(v) => Value::Array(v.iter().cloned().map(Value::String).collect()),
        Field::Missing => Value::Null,
        Field::JsonOnly(r) => r.to_json(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(fmt10(0.9394389830665675), "0.9394389831");
        assert_eq!(fmt10(1.0), "1");
        assert_eq!(fmt10(-1.23456789012345e-7), "-0.000000123456789");
        assert_eq!(fmt10(0.0), "0");
        assert_eq!(fmt10(-0.0), "0");
    }

    #[test]
    fn text_uses_four_decimals() {
        let mut r = Report::new();
        r.add("c*", "cash", 0.93943898).add("x*", "stakes", vec![0.0606, -0.0]);
        assert_eq!(r.to_text(), "c*: 0.9394\nx*: (0.0606, 0.0000)\n");
    }

    #[test]
    fn json_keeps_field_order() {
        let mut r = Report::new();
        r.add("b", "b", 2.0).add("a", "a", Field::Missing);
        assert_eq!(r.to_json().to_string(), r#"{"b":2.0,"a":null}"#);
    }
}
