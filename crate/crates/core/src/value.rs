//! Runtime values shared by the reference interpreter, the actors, and the wire codec.

use std::collections::BTreeMap;
use std::fmt;

/// A choreography value.
///
/// The universe is closed: no floats and no maps, so structural equality and
/// the canonical byte encoding are both trivial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Nil,
    Bool(bool),
    Int(i64),
    Str(String),
    Atom(String),
    Tuple(Vec<Value>),
    List(Vec<Value>),
    FuncRef { name: String, arity: u8 },
}

/// Variable environment of one role.
pub type Vars = BTreeMap<String, Value>;

impl Value {
    pub fn atom(s: impl Into<String>) -> Value {
        Value::Atom(s.into())
    }

    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    /// The placeholder passed for argument positions located at other roles.
    pub fn unit() -> Value {
        Value::Atom("unit".into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Nil => "nil",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Str(_) => "string",
            Value::Atom(_) => "atom",
            Value::Tuple(_) => "tuple",
            Value::List(_) => "list",
            Value::FuncRef { .. } => "function",
        }
    }

    /// Elixir-style truthiness: only `nil` and `false` are falsy.
    pub fn truthy(&self) -> bool {
        !matches!(self, Value::Nil | Value::Bool(false))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Value::Atom(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Value]> {
        match self {
            Value::Tuple(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

fn write_seq(f: &mut fmt::Formatter<'_>, items: &[Value]) -> fmt::Result {
    for (i, v) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{v}")?;
    }
    Ok(())
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nil => f.write_str("nil"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Atom(a) => write!(f, ":{a}"),
            Value::Tuple(t) => {
                f.write_str("{")?;
                write_seq(f, t)?;
                f.write_str("}")
            }
            Value::List(l) => {
                f.write_str("[")?;
                write_seq(f, l)?;
                f.write_str("]")
            }
            Value::FuncRef { name, arity } => write!(f, "@{name}/{arity}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_matches_source_syntax() {
        let v =
            Value::Tuple(vec![Value::atom("answer"), Value::Int(42), Value::List(vec![Value::Nil, Value::str("hi")])]);
        assert_eq!(v.to_string(), r#"{:answer, 42, [nil, "hi"]}"#);
        let f = Value::FuncRef { name: "one_party".into(), arity: 1 };
        assert_eq!(f.to_string(), "@one_party/1");
    }

    #[test]
    fn truthiness() {
        assert!(!Value::Nil.truthy());
        assert!(!Value::Bool(false).truthy());
        assert!(Value::Int(0).truthy());
    }
}
