//! Frozen sentence embeddings: signed feature hashing over unigrams and
//! bigrams, with an optional exact-match table of external vectors.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seed folded into every feature hash. Changing it changes every vector.
pub const HASH_SEED: u64 = 0x7465_6163_6861_626c;
pub const DEFAULT_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("reading embedding table {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("embedding table line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    HashedFeatures,
    TableLookup,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    text: String,
    vector: Vec<f64>,
}

/// Text-to-vector map shared by data loading, training and evaluation.
#[derive(Clone, Debug)]
pub struct Embedder {
    dim: usize,
    table: Option<HashMap<String, Vec<f64>>>,
}

impl Default for Embedder {
    fn default() -> Self {
        Embedder::hashed(DEFAULT_DIM)
    }
}

impl Embedder {
    pub fn hashed(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Embedder { dim, table: None }
    }

    /// Loads `{text, vector}` lines. Vectors must all have length `dim`.
    pub fn with_table(dim: usize, path: &Path) -> Result<Self, EmbedError> {
        let io = |source| EmbedError::Io { path: path.display().to_string(), source };
        let file = fs::File::open(path).map_err(io)?;
        let mut table = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TableRecord =
                serde_json::from_str(&line).map_err(|e| EmbedError::Format { line: i + 1, reason: e.to_string() })?;
            if rec.vector.len() != dim {
                return Err(EmbedError::Format {
                    line: i + 1,
                    reason: format!("vector has {} entries, expected {dim}", rec.vector.len()),
                });
            }
            table.insert(rec.text, rec.vector);
        }
        Ok(Embedder { dim, table: Some(table) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbedKind {
        if self.table.is_some() {
            EmbedKind::TableLookup
        } else {
            EmbedKind::HashedFeatures
        }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        if let Some(table) = &self.table {
            if let Some(v) = table.get(text) {
                return v.clone();
            }
            if !text.is_empty() {
                log::warn!("no table embedding for {text:?}; using hashed features");
            }
        }
        hashed_features(text, self.dim)
    }
}

/// Lowercases, drops ASCII punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// 64-bit FNV-1a over the seed bytes followed by the feature bytes.
fn feature_hash(feature: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in HASH_SEED.to_le_bytes().iter().chain(feature.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hashed_features(text: &str, dim: usize) -> Vec<f64> {
    let tokens = tokenize(text);
    let mut v = vec![0.0; dim];
    let mut add = |feature: String| {
        let h = feature_hash(&feature);
        let idx = (h % dim as u64) as usize;
        // Sign comes from the high bit of a remixed hash so it is independent of the bucket.
        let sign = if crate::util::mix64(h) >> 63 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    };
    for t in &tokens {
        add(format!("u:{t}"));
    }
    for pair in tokens.windows(2) {
        add(format!("b:{} {}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_zero() {
        assert!(Embedder::default().embed("").iter().all(|&x| x == 0.0));
        assert!(Embedder::default().embed("?!").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tokenizer_strips_punctuation_and_case() {
        assert_eq!(tokenize("Turn back. You're DOING well!"), ["turn", "back", "youre", "doing", "well"]);
    }

    /// Independent reimplementation: explicit feature list, counts via a map,
    /// then normalization.
    fn oracle(text: &str, dim: usize) -> Vec<f64> {
        let words: Vec<String> = text
            .to_lowercase()
            .replace(|c: char| c.is_ascii_punctuation(), "")
            .split_whitespace()
            .map(String::from)
            .collect();
        let mut feats: Vec<String> = words.iter().map(|w| format!("u:{w}")).collect();
        for i in 1..words.len() {
            feats.push(format!("b:{} {}", words[i - 1], words[i]));
        }
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for f in feats {
            let mut bytes = HASH_SEED.to_le_bytes().to_vec();
            bytes.extend_from_slice(f.as_bytes());
            let h = bytes.iter().fold(14695981039346656037u64, |h, &b| (h ^ b as u64).wrapping_mul(1099511628211));
            let s = if crate::util::mix64(h) & (1 << 63) != 0 { -1.0 } else { 1.0 };
            *counts.entry((h % dim as u64) as usize).or_default() += s;
        }
        let norm = counts.values().map(|x| x * x).sum::<f64>().sqrt();
        let mut v = vec![0.0; dim];
        for (i, c) in counts {
            v[i] = if norm > 0.0 { c / norm } else { 0.0 };
        }
        v
    }

    #[test]
    fn matches_independent_oracle() {
        for s in ["Turn back.", "Pedal to open the recycling bin.", "a a a b", "You are doing well so far."] {
            let got = hashed_features(s, 128);
            let want = oracle(s, 128);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-15, "{s}");
            }
        }
    }

    #[test]
    fn near_paraphrase_is_closer_than_opposite_direction() {
        let e = Embedder::default();
        let left = e.embed("turn left");
        let right = cosine(&left, &e.embed("turn right"));
        let now = cosine(&left, &e.embed("turn left now"));
        assert!(right < now);
        // Frozen under HASH_SEED: "turn left" and "turn right" share only the
        // unigram "turn" (1 of 3 features each), "turn left now" shares all
        // three features of "turn left" (3 of 5), barring collisions.
        assert!((right - 1.0 / 3.0).abs() < 1e-12, "{right}");
        assert!((now - 3.0 / (3.0f64.sqrt() * 5.0f64.sqrt())).abs() < 1e-12, "{now}");
    }

    #[test]
    fn table_lookup_hits_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.jsonl");
        std::fs::write(&path, "{\"text\":\"hello\",\"vector\":[1.0,0.0,0.0,0.0]}\n").unwrap();
        let e = Embedder::with_table(4, &path).unwrap();
        assert_eq!(e.kind(), EmbedKind::TableLookup);
        assert_eq!(e.embed("hello"), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.embed("turn back"), hashed_features("turn back", 4));
        std::fs::write(&path, "{\"text\":\"hello\",\"vector\":[1.0]}\n").unwrap();
        assert!(matches!(Embedder::with_table(4, &path), Err(EmbedError::Format { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn nonempty_text_has_unit_norm(words in proptest::collection::vec("[a-z]{1,8}", 1..12)) {
            let v = hashed_features(&words.join(" "), 128);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            // n tokens give 2n - 1 features, an odd count, so some bucket is nonzero.
            prop_assert!((n - 1.0).abs() < 1e-6);
        }

        #[test]
        fn deterministic(s in ".{0,40}") {
            prop_assert_eq!(hashed_features(&s, 64), hashed_features(&s, 64));
        }
    }
}
