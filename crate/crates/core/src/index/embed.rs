//! Deterministic hashed bag-of-tokens embedder.

pub const DIM: usize = 256;

const SEED: u64 = 0x5eed_2026_0a11_ce55;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

// Generic function words plus the boilerplate that every rendered manifest
// shares, which would otherwise pull all records toward each other.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "how", "i", "in", "is", "it",
    "me", "my", "of", "on", "or", "the", "to", "what", "with", "yes", "no", "api", "auth", "body",
    "boolean", "com", "content", "delete", "document", "endpoint", "endpoints", "get", "id",
    "integer", "kind", "list", "none", "null", "number", "object", "opaque", "param", "patch",
    "path", "post", "put", "query", "request", "required", "response", "returns", "safe", "string",
    "uuid", "www", "example", "v1", "v2", "v3", "json",
];

fn fnv1a(token: &str) -> u64 {
    let mut h = FNV_OFFSET ^ SEED;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
}

/// Unit vector of length [`DIM`]. Text with no content tokens maps to the
/// first basis vector.
pub fn embed_text(text: &str) -> Vec<f32> {
    let mut v = vec![0f64; DIM];
    for t in tokenize(text) {
        v[(fnv1a(&t) % DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e = vec![0f32; DIM];
        e[0] = 1.0;
        return e;
    }
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    crate::econ::cosine(a, b)
}
