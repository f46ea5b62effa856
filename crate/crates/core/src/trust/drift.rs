use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distill::{Field, ResponseShape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeChange {
    pub path: String,
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftReport {
    pub removed_fields: Vec<String>,
    pub type_changes: Vec<TypeChange>,
    pub added_fields: Vec<String>,
    pub critical: bool,
}

impl DriftReport {
    pub fn is_empty(&self) -> bool {
        self.removed_fields.is_empty() && self.type_changes.is_empty() && self.added_fields.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.is_empty() {
            return "no drift".into();
        }
        let mut parts = Vec::new();
        if !self.removed_fields.is_empty() {
            parts.push(format!("removed {}", self.removed_fields.join(",")));
        }
        for t in &self.type_changes {
            parts.push(format!("{} {}->{}", t.path, t.old, t.new));
        }
        if !self.added_fields.is_empty() {
            parts.push(format!("added {}", self.added_fields.join(",")));
        }
        parts.join("; ")
    }
}

/// Structural diff of a documented schema against a live one. Removed
/// required fields and kind changes are critical; additions are not. Nulls
/// on either side never count as a kind change.
pub fn detect_drift(documented: &ResponseShape, live: &ResponseShape) -> DriftReport {
    let mut r = DriftReport::default();
    walk(documented, live, "$", &mut r);
    r.critical = !r.removed_fields.is_empty() || !r.type_changes.is_empty();
    r
}

fn child(path: &str, name: &str) -> String {
    if path == "$" {
        name.to_owned()
    } else {
        format!("{path}.{name}")
    }
}

fn walk(doc: &ResponseShape, live: &ResponseShape, path: &str, r: &mut DriftReport) {
    use ResponseShape::*;
    match (doc, live) {
        (Null, _) | (_, Null) => {}
        (Object { fields: d }, Object { fields: l }) => fields(d, l, path, r),
        (Array { items: d }, Array { items: l }) => {
            let p = if path == "$" { "[]".to_owned() } else { format!("{path}[]") };
            walk(d, l, &p, r)
        }
        (d, l) if d.kind_name() == l.kind_name() => {}
        (d, l) => r.type_changes.push(TypeChange {
            path: path.to_owned(),
            old: d.kind_name().to_owned(),
            new: l.kind_name().to_owned(),
        }),
    }
}

fn fields(d: &BTreeMap<String, Field>, l: &BTreeMap<String, Field>, path: &str, r: &mut DriftReport) {
    for (name, df) in d {
        match l.get(name) {
            Some(lf) => walk(&df.shape, &lf.shape, &child(path, name), r),
            None if !df.optional => r.removed_fields.push(child(path, name)),
            None => {}
        }
    }
    for name in l.keys().filter(|n| !d.contains_key(*n)) {
        r.added_fields.push(child(path, name));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::infer_value;
    use serde_json::json;

    #[test]
    fn drift_examples() {
        let doc = infer_value(&json!({"id": 1, "price": 9.5, "name": "lamp"}));
        assert_eq!(detect_drift(&doc, &doc), DriftReport::default());

        let missing = infer_value(&json!({"id": 1, "name": "lamp"}));
        let r = detect_drift(&doc, &missing);
        assert_eq!(r.removed_fields, vec!["price"]);
        assert!(r.critical);

        let extra = infer_value(&json!({"id": 1, "price": 9.5, "name": "lamp", "etag": "x"}));
        let r = detect_drift(&doc, &extra);
        assert_eq!(r.added_fields, vec!["etag"]);
        assert!(!r.critical);

        let retyped = infer_value(&json!({"id": "1", "price": 9.5, "name": "lamp"}));
        let r = detect_drift(&doc, &retyped);
        assert_eq!(r.type_changes, vec![TypeChange { path: "id".into(), old: "number".into(), new: "string".into() }]);
    }

    #[test]
    fn nested_paths() {
        let doc = infer_value(&json!({"items": [{"price": 1}]}));
        let live = infer_value(&json!({"items": [{"cost": 1}]}));
        let r = detect_drift(&doc, &live);
        assert_eq!(r.removed_fields, vec!["items[].price"]);
        assert_eq!(r.added_fields, vec!["items[].cost"]);
    }

    mod props {
        use super::super::*;
        use crate::distill::shape::tests::arb_shape;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn self_diff_is_empty(a in arb_shape()) {
                prop_assert!(detect_drift(&a, &a).is_empty());
            }

            #[test]
            fn removed_mirrors_added(a in arb_shape(), b in arb_shape()) {
                let fwd = detect_drift(&a, &b);
                let back = detect_drift(&b, &a);
                for f in &fwd.removed_fields {
                    prop_assert!(back.added_fields.contains(f), "{} missing from {:?}", f, back.added_fields);
                }
            }
        }
    }
}
