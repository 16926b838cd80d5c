//! Template families and the pool files that hold their paraphrases.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Diversity, FeedbackError};
use crate::env::EnvKind;

pub const TEMPLATES: &str = include_str!("../../data/templates.jsonl");
pub const GRIDHOME_POOL: &str = include_str!("../../data/pool_gridhome.jsonl");
pub const COURIER_POOL: &str = include_str!("../../data/pool_courier.jsonl");

/// Slot names allowed inside templates.
pub const SLOTS: [&str; 7] = ["action", "direction", "target", "enemy", "bin", "object", "avoid_action"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateFamily {
    pub family_id: String,
    pub meaning_key: String,
    pub env: EnvKind,
    pub base: String,
    /// Paraphrases including the base itself as the first entry.
    #[serde(default)]
    pub variants: Vec<String>,
}

impl TemplateFamily {
    pub fn is_praise(&self) -> bool {
        self.meaning_key.starts_with("praise")
    }
}

/// Slot names appearing in a template, e.g. `{"bin"}` for "Pedal to open the {bin} bin.".
pub fn slot_set(template: &str) -> Result<BTreeSet<String>, String> {
    let mut out = BTreeSet::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| format!("unclosed slot in {template:?}"))?;
        let name = &after[..close];
        if !SLOTS.contains(&name) {
            return Err(format!("unknown slot {{{name}}} in {template:?}"));
        }
        out.insert(name.to_string());
        rest = &after[close + 1..];
    }
    if rest.contains('}') {
        return Err(format!("stray closing brace in {template:?}"));
    }
    Ok(out)
}

/// Replaces every `{slot}` with its value.
pub fn fill(template: &str, slots: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Immutable collection of families, looked up by id.
#[derive(Clone, Debug, PartialEq)]
pub struct Pool {
    families: Vec<TemplateFamily>,
    index: HashMap<String, usize>,
}

impl Pool {
    pub fn new(families: Vec<TemplateFamily>) -> Result<Self, FeedbackError> {
        let mut index = HashMap::new();
        for (i, f) in families.iter().enumerate() {
            if index.insert(f.family_id.clone(), i).is_some() {
                return Err(FeedbackError::Data(format!("duplicate family {}", f.family_id)));
            }
            let base_slots = slot_set(&f.base).map_err(FeedbackError::Data)?;
            if f.variants.is_empty() {
                return Err(FeedbackError::Data(format!("family {} has no variants", f.family_id)));
            }
            for v in &f.variants {
                let slots = slot_set(v).map_err(FeedbackError::Data)?;
                if slots != base_slots {
                    return Err(FeedbackError::Data(format!(
                        "variant {v:?} of {} has slots {slots:?}, base has {base_slots:?}",
                        f.family_id
                    )));
                }
            }
        }
        Ok(Pool { families, index })
    }

    /// Parses line-delimited family records. Records without variants get
    /// the base as their only variant.
    pub fn parse_jsonl(text: &str) -> Result<Vec<TemplateFamily>, FeedbackError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut f: TemplateFamily = serde_json::from_str(line)
                .map_err(|e| FeedbackError::Data(format!("line {}: {e}", i + 1)))?;
            if f.variants.is_empty() {
                f.variants.push(f.base.clone());
            }
            out.push(f);
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, FeedbackError> {
        Pool::new(Pool::parse_jsonl(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, FeedbackError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FeedbackError::Io(format!("reading pool {}: {e}", path.display())))?;
        Pool::from_jsonl(&text)
    }

    /// Base templates only.
    pub fn templates() -> Self {
        Pool::from_jsonl(TEMPLATES).expect("built-in templates are valid")
    }

    /// The checked-in augmented pools for both environments.
    pub fn builtin() -> Self {
        let mut families = Pool::parse_jsonl(GRIDHOME_POOL).expect("built-in pool parses");
        families.extend(Pool::parse_jsonl(COURIER_POOL).expect("built-in pool parses"));
        Pool::new(families).expect("built-in pool is valid")
    }

    pub fn families(&self) -> &[TemplateFamily] {
        &self.families
    }

    pub fn family(&self, id: &str) -> Result<&TemplateFamily, FeedbackError> {
        self.index.get(id).map(|&i| &self.families[i]).ok_or_else(|| FeedbackError::UnknownFamily(id.to_string()))
    }

    /// Picks the phrasing for one utterance: the base in template mode, a
    /// uniform draw over the variants in pool mode.
    pub fn diversify(&self, id: &str, diversity: Diversity, rng: &mut ChaCha8Rng) -> Result<&str, FeedbackError> {
        let f = self.family(id)?;
        Ok(match diversity {
            Diversity::Template => &f.base,
            Diversity::Pool => &f.variants[rng.gen_range(0..f.variants.len())],
        })
    }

    pub fn to_jsonl(&self, env: Option<EnvKind>) -> String {
        let mut out = String::new();
        for f in self.families.iter().filter(|f| env.is_none_or(|e| f.env == e)) {
            out.push_str(&serde_json::to_string(f).expect("family serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        crate::util::sha256_hex(self.to_jsonl(None).as_bytes())
    }
}
