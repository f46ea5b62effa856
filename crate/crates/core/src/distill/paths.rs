use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Integer,
    Uuid,
    Opaque,
}

impl ParamKind {
    pub fn matches(self, segment: &str) -> bool {
        match self {
            ParamKind::Integer => is_integer(segment),
            ParamKind::Uuid => is_uuid(segment),
            ParamKind::Opaque => is_opaque_id(segment),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Segment {
    Literal(String),
    Param(ParamKind),
}

impl Segment {
    fn matches(&self, s: &str) -> bool {
        match self {
            Segment::Literal(l) => l == s,
            Segment::Param(k) => k.matches(s),
        }
    }
}

pub fn is_integer(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// 8-4-4-4-12 hex.
pub fn is_uuid(s: &str) -> bool {
    let groups: Vec<&str> = s.split('-').collect();
    groups.len() == 5
        && groups.iter().zip([8, 4, 4, 4, 12]).all(|(g, n)| {
            g.len() == n && g.bytes().all(|b| b.is_ascii_hexdigit())
        })
}

/// Identifier-looking segment that is neither an integer nor a UUID: contains
/// a digit, or is a long token.
pub fn is_opaque_id(s: &str) -> bool {
    if s.is_empty() || is_integer(s) || is_uuid(s) {
        return false;
    }
    let token = s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.');
    token && (s.bytes().any(|b| b.is_ascii_digit()) || s.len() >= 16)
}

fn split(path: &str) -> Vec<&str> {
    path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect()
}

fn classify(seg: &str) -> Segment {
    if is_integer(seg) {
        Segment::Param(ParamKind::Integer)
    } else if is_uuid(seg) {
        Segment::Param(ParamKind::Uuid)
    } else {
        Segment::Literal(seg.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathParam {
    pub name: String,
    pub kind: ParamKind,
}

/// A templated path such as `/api/users/{id}` with its parameter kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathTemplate {
    pub template: String,
    pub params: Vec<PathParam>,
    /// Input samples assigned to this template, in input order.
    pub samples: Vec<String>,
}

fn render(segs: &[Segment]) -> (String, Vec<PathParam>) {
    let mut ids = 0;
    let mut opaque = 0;
    let mut params = Vec::new();
    let mut out = String::new();
    for s in segs {
        out.push('/');
        match s {
            Segment::Literal(l) => out.push_str(l),
            Segment::Param(kind) => {
                let (base, n) = match kind {
                    ParamKind::Opaque => ("param", {
                        opaque += 1;
                        opaque
                    }),
                    _ => ("id", {
                        ids += 1;
                        ids
                    }),
                };
                let name = if n == 1 { base.to_owned() } else { format!("{base}{n}") };
                out.push('{');
                out.push_str(&name);
                out.push('}');
                params.push(PathParam { name, kind: *kind });
            }
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    (out, params)
}

/// Parses a rendered template back into matchable segments.
pub fn template_matches(template: &str, params: &[PathParam], path: &str) -> bool {
    let tsegs = split(template);
    let psegs = split(path);
    if tsegs.len() != psegs.len() {
        return false;
    }
    tsegs.iter().zip(&psegs).all(|(t, p)| {
        if let Some(name) = t.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            params.iter().find(|pp| pp.name == name).is_some_and(|pp| pp.kind.matches(p))
        } else {
            t == p
        }
    })
}

/// Extracts `{param}` values from a concrete path.
pub fn extract_params(template: &str, path: &str) -> BTreeMap<String, String> {
    split(template)
        .iter()
        .zip(split(path))
        .filter_map(|(t, p)| {
            t.strip_prefix('{')
                .and_then(|r| r.strip_suffix('}'))
                .map(|name| (name.to_owned(), p.to_owned()))
        })
        .collect()
}

/// Collapses sample paths from one host into templates.
///
/// All-digit segments become integer params and 8-4-4-4-12 hex segments UUID
/// params. Remaining literal segments that vary across samples at the same
/// position, with everything else equal, collapse into an opaque param when
/// every variant looks like an identifier. Each sample is assigned to exactly
/// one template.
pub fn normalize_paths<S: AsRef<str>>(samples: &[S]) -> Vec<PathTemplate> {
    let classified: Vec<Vec<Segment>> =
        samples.iter().map(|s| split(s.as_ref()).into_iter().map(classify).collect()).collect();
    let mut shapes: Vec<Vec<Segment>> = classified.clone();

    // Collapse varying id-like literals until nothing changes.
    loop {
        let mut changed = false;
        let max_len = shapes.iter().map(Vec::len).max().unwrap_or(0);
        for pos in 0..max_len {
            let mut buckets: BTreeMap<(usize, Vec<Segment>), BTreeSet<String>> = BTreeMap::new();
            for segs in &shapes {
                if let Some(Segment::Literal(l)) = segs.get(pos) {
                    let mut key = segs.clone();
                    key[pos] = Segment::Param(ParamKind::Opaque);
                    buckets.entry((segs.len(), key)).or_default().insert(l.clone());
                }
            }
            for ((_, key), values) in buckets {
                if values.len() >= 2 && values.iter().all(|v| is_opaque_id(v)) {
                    for segs in shapes.iter_mut() {
                        if segs.len() == key.len()
                            && segs.iter().zip(&key).enumerate().all(|(i, (a, b))| i == pos || a == b)
                        {
                            if let Segment::Literal(l) = &segs[pos] {
                                if values.contains(l) {
                                    segs[pos] = Segment::Param(ParamKind::Opaque);
                                    changed = true;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    // A literal template shadowed by an opaque sibling folds into it.
    let mut templates: BTreeSet<Vec<Segment>> = shapes.iter().cloned().collect();
    loop {
        let list: Vec<Vec<Segment>> = templates.iter().cloned().collect();
        let shadowed = list.iter().find(|t| {
            list.iter().any(|o| {
                o != *t
                    && o.len() == t.len()
                    && o.iter().zip(t.iter()).all(|(a, b)| match (a, b) {
                        (Segment::Param(ParamKind::Opaque), Segment::Literal(l)) => is_opaque_id(l),
                        _ => a == b,
                    })
            })
        });
        match shadowed {
            Some(t) => {
                templates.remove(t);
            }
            None => break,
        }
    }

    let mut out: Vec<(Vec<Segment>, PathTemplate)> = templates
        .into_iter()
        .map(|segs| {
            let (template, params) = render(&segs);
            (segs, PathTemplate { template, params, samples: Vec::new() })
        })
        .collect();
    for s in samples {
        let parts = split(s.as_ref());
        // most specific match: fewest params, then template order
        let best = out
            .iter_mut()
            .filter(|(segs, _)| segs.len() == parts.len() && segs.iter().zip(&parts).all(|(g, p)| g.matches(p)))
            .min_by_key(|(segs, _)| segs.iter().filter(|g| matches!(g, Segment::Param(_))).count());
        if let Some((_, t)) = best {
            t.samples.push(s.as_ref().to_owned());
        }
    }
    out.into_iter().map(|(_, t)| t).filter(|t| !t.samples.is_empty()).collect()
}
