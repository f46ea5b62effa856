use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    String,
    Number,
    Boolean,
    Null,
}

/// Structural type of a JSON value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ResponseShape {
    Object { fields: BTreeMap<String, Field> },
    Array { items: Box<ResponseShape> },
    String,
    Number,
    Boolean,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    #[serde(flatten)]
    pub shape: ResponseShape,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
}

impl Field {
    pub fn required(shape: ResponseShape) -> Self {
        Self { shape, optional: false }
    }
}

impl ResponseShape {
    pub fn empty_object() -> Self {
        ResponseShape::Object { fields: BTreeMap::new() }
    }

    pub fn scalar(kind: ScalarKind) -> Self {
        match kind {
            ScalarKind::String => ResponseShape::String,
            ScalarKind::Number => ResponseShape::Number,
            ScalarKind::Boolean => ResponseShape::Boolean,
            ScalarKind::Null => ResponseShape::Null,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ResponseShape::Object { .. } => "object",
            ResponseShape::Array { .. } => "array",
            ResponseShape::String => "string",
            ResponseShape::Number => "number",
            ResponseShape::Boolean => "boolean",
            ResponseShape::Null => "null",
        }
    }

    // Precedence used when two non-null kinds conflict.
    fn rank(&self) -> u8 {
        match self {
            ResponseShape::Object { .. } => 5,
            ResponseShape::Array { .. } => 4,
            ResponseShape::String => 3,
            ResponseShape::Number => 2,
            ResponseShape::Boolean => 1,
            ResponseShape::Null => 0,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, ResponseShape::Null)
    }

    pub fn depth(&self) -> usize {
        match self {
            ResponseShape::Object { fields } => {
                1 + fields.values().map(|f| f.shape.depth()).max().unwrap_or(0)
            }
            ResponseShape::Array { items } => 1 + items.depth(),
            _ => 0,
        }
    }

    /// Unifies two observed shapes.
    ///
    /// Object fields missing on either side become optional; a null unified
    /// with another kind yields that kind (the enclosing field is marked
    /// optional by [`unify_fields`]). Conflicting non-null kinds resolve by a
    /// fixed precedence so the result is order-independent.
    pub fn unify(self, other: ResponseShape) -> ResponseShape {
        use ResponseShape::*;
        match (self, other) {
            (Null, x) | (x, Null) => x,
            (Object { fields: a }, Object { fields: b }) => Object { fields: unify_fields(a, b) },
            (Array { items: a }, Array { items: b }) => Array { items: Box::new(a.unify(*b)) },
            (a, b) if a.rank() >= b.rank() => a,
            (_, b) => b,
        }
    }

    /// One line per node, `path: kind`, in deterministic order. Optional
    /// fields carry a trailing `?`.
    pub fn lines(&self, root: &str) -> Vec<String> {
        let mut out = Vec::new();
        self.push_lines(root, false, &mut out);
        out
    }

    fn push_lines(&self, path: &str, optional: bool, out: &mut Vec<String>) {
        let q = if optional { "?" } else { "" };
        out.push(format!("{path}: {}{q}", self.kind_name()));
        match self {
            ResponseShape::Object { fields } => {
                for (name, f) in fields {
                    f.shape.push_lines(&format!("{path}.{name}"), f.optional, out);
                }
            }
            ResponseShape::Array { items } => items.push_lines(&format!("{path}[]"), false, out),
            _ => {}
        }
    }

    /// Top-level field names; for an array of objects, the element's fields.
    pub fn field_names(&self) -> Vec<String> {
        match self {
            ResponseShape::Object { fields } => fields.keys().cloned().collect(),
            ResponseShape::Array { items } => items.field_names(),
            _ => Vec::new(),
        }
    }

    /// Adds every field present in `incoming` but absent here, marked
    /// optional. Existing fields keep their shape.
    pub fn union_additive(&self, incoming: &ResponseShape) -> ResponseShape {
        match (self, incoming) {
            (ResponseShape::Object { fields: a }, ResponseShape::Object { fields: b }) => {
                let mut merged = a.clone();
                for (name, fb) in b {
                    match merged.get_mut(name) {
                        Some(fa) => fa.shape = fa.shape.union_additive(&fb.shape),
                        None => {
                            merged.insert(name.clone(), Field { shape: fb.shape.clone(), optional: true });
                        }
                    }
                }
                ResponseShape::Object { fields: merged }
            }
            (ResponseShape::Array { items: a }, ResponseShape::Array { items: b }) => {
                ResponseShape::Array { items: Box::new(a.union_additive(b)) }
            }
            (ResponseShape::Null, x) => x.clone(),
            (a, _) => a.clone(),
        }
    }

    /// Whether `value` conforms to this shape.
    pub fn accepts(&self, value: &Value) -> bool {
        match (self, value) {
            (_, Value::Null) => true,
            (ResponseShape::Null, _) => true,
            (ResponseShape::String, Value::String(_))
            | (ResponseShape::Number, Value::Number(_))
            | (ResponseShape::Boolean, Value::Bool(_)) => true,
            (ResponseShape::Array { items }, Value::Array(xs)) => xs.iter().all(|x| items.accepts(x)),
            (ResponseShape::Object { fields }, Value::Object(map)) => {
                fields.iter().all(|(k, f)| match map.get(k) {
                    Some(v) => f.shape.accepts(v),
                    None => f.optional,
                })
            }
            _ => false,
        }
    }
}

fn unify_fields(
    mut a: BTreeMap<String, Field>,
    mut b: BTreeMap<String, Field>,
) -> BTreeMap<String, Field> {
    let mut out = BTreeMap::new();
    let names: Vec<String> = a.keys().chain(b.keys()).cloned().collect();
    for name in names {
        if out.contains_key(&name) {
            continue;
        }
        let merged = match (a.remove(&name), b.remove(&name)) {
            (Some(fa), Some(fb)) => {
                let null_mix = fa.shape.is_null() != fb.shape.is_null();
                Field {
                    optional: fa.optional || fb.optional || null_mix,
                    shape: fa.shape.unify(fb.shape),
                }
            }
            (Some(f), None) | (None, Some(f)) => Field { optional: true, ..f },
            (None, None) => unreachable!(),
        };
        out.insert(name, merged);
    }
    out
}

impl fmt::Display for ResponseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.lines("$").join("\n"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("body is not structured JSON: {0}")]
pub struct NotStructured(pub String);

pub fn infer_shape(body: &[u8]) -> Result<ResponseShape, NotStructured> {
    let v: Value = serde_json::from_slice(body).map_err(|e| NotStructured(e.to_string()))?;
    Ok(infer_value(&v))
}

pub fn infer_value(v: &Value) -> ResponseShape {
    match v {
        Value::Null => ResponseShape::Null,
        Value::Bool(_) => ResponseShape::Boolean,
        Value::Number(_) => ResponseShape::Number,
        Value::String(_) => ResponseShape::String,
        Value::Array(xs) => {
            let items = xs.iter().map(infer_value).reduce(ResponseShape::unify);
            ResponseShape::Array { items: Box::new(items.unwrap_or(ResponseShape::Null)) }
        }
        Value::Object(map) => ResponseShape::Object {
            fields: map.iter().map(|(k, v)| (k.clone(), Field::required(infer_value(v)))).collect(),
        },
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn obj(fields: &[(&str, ResponseShape, bool)]) -> ResponseShape {
        ResponseShape::Object {
            fields: fields
                .iter()
                .map(|(k, s, o)| (k.to_string(), Field { shape: s.clone(), optional: *o }))
                .collect(),
        }
    }

    #[test]
    fn empty_object() {
        assert_eq!(infer_shape(b"{}").unwrap(), ResponseShape::empty_object());
    }

    #[test]
    fn stars_and_forks() {
        let s = infer_shape(br#"{"stars": 5, "forks": 2}"#).unwrap();
        assert_eq!(
            s,
            obj(&[("stars", ResponseShape::Number, false), ("forks", ResponseShape::Number, false)])
        );
    }

    #[test]
    fn array_elements_union_with_optional_fields() {
        let s = infer_shape(br#"[{"a":1},{"a":2,"b":"x"}]"#).unwrap();
        assert_eq!(
            s,
            ResponseShape::Array {
                items: Box::new(obj(&[
                    ("a", ResponseShape::Number, false),
                    ("b", ResponseShape::String, true)
                ]))
            }
        );
    }

    #[test]
    fn null_unified_with_kind_marks_optional() {
        let s = infer_value(&json!([{"by": "ana"}, {"by": null}]));
        assert_eq!(
            s,
            ResponseShape::Array { items: Box::new(obj(&[("by", ResponseShape::String, true)])) }
        );
        assert_eq!(infer_value(&json!({"x": null})), obj(&[("x", ResponseShape::Null, false)]));
    }

    #[test]
    fn not_json_is_rejected() {
        assert!(infer_shape(b"<html>").is_err());
    }

    #[test]
    fn lines_are_canonical() {
        let s = infer_value(&json!({"items": [{"p": 1}], "n": "x"}));
        assert_eq!(
            s.lines("response"),
            ["response: object", "response.items: array", "response.items[]: object",
             "response.items[].p: number", "response.n: string"]
        );
    }

    #[test]
    fn serde_shape_round_trip() {
        let s = infer_value(&json!([{"a": 1, "b": [true]}, {"a": 2}]));
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ResponseShape>(&text).unwrap(), s);
    }

    pub(crate) fn arb_shape() -> impl Strategy<Value = ResponseShape> {
        let leaf = prop_oneof![
            Just(ResponseShape::String),
            Just(ResponseShape::Number),
            Just(ResponseShape::Boolean),
        ];
        leaf.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(|s| ResponseShape::Array { items: Box::new(s) }),
                prop::collection::btree_map("[a-z]{1,6}", inner, 0..4).prop_map(|m| {
                    ResponseShape::Object {
                        fields: m.into_iter().map(|(k, s)| (k, Field::required(s))).collect(),
                    }
                }),
            ]
        })
    }

    /// Renders a value conforming to `shape`; arrays get two elements so the
    /// element shape is observable.
    fn render(shape: &ResponseShape) -> Value {
        match shape {
            ResponseShape::String => json!("s"),
            ResponseShape::Number => json!(1.5),
            ResponseShape::Boolean => json!(true),
            ResponseShape::Null => Value::Null,
            ResponseShape::Array { items } => Value::Array(vec![render(items), render(items)]),
            ResponseShape::Object { fields } => {
                Value::Object(fields.iter().map(|(k, f)| (k.clone(), render(&f.shape))).collect())
            }
        }
    }

    proptest! {
        #[test]
        fn infer_of_render_is_identity(shape in arb_shape()) {
            let v = render(&shape);
            prop_assert_eq!(infer_value(&v), shape.clone());
            prop_assert!(shape.accepts(&v));
        }

        #[test]
        fn unify_is_commutative(a in arb_shape(), b in arb_shape()) {
            prop_assert_eq!(a.clone().unify(b.clone()), b.unify(a));
        }

        #[test]
        fn union_additive_is_idempotent(a in arb_shape()) {
            prop_assert_eq!(a.union_additive(&a), a);
        }
    }
}
