//! Growing base templates into phrasing pools, either with the built-in
//! paraphraser or an external text-completion service. Every variant is
//! linted for slot preservation before it enters a pool.

use serde::{Deserialize, Serialize};

use super::paraphrase::paraphrase;
use super::pool::{slot_set, Pool, TemplateFamily};
use super::FeedbackError;

/// Source of candidate rewrites for one family.
pub trait Augmenter {
    /// Up to `n` candidates; may include duplicates or broken slots, which
    /// the lint step removes.
    fn candidates(&mut self, family: &TemplateFamily, n: usize) -> Result<Vec<String>, FeedbackError>;
}

/// Deterministic rule-based rewrites.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleAugmenter;

impl Augmenter for RuleAugmenter {
    fn candidates(&mut self, family: &TemplateFamily, n: usize) -> Result<Vec<String>, FeedbackError> {
        Ok(paraphrase(&family.meaning_key, &family.base, n))
    }
}

/// Prompt sent to the completion service. `{n}` and `{base}` are replaced.
pub const PROMPT_TEMPLATE: &str = "Rewrite the following instruction for a household robot in {n} different natural ways. \
Keep every placeholder in curly braces exactly as written and keep the meaning unchanged. \
Return one rewrite per line with no numbering.\n\nInstruction: {base}\n";

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

/// Client for a plain-HTTP completion endpoint accepting
/// `{prompt, max_tokens, temperature}` and answering `{choices: [{text}]}`.
/// Meant for offline pool building only; results are checked in.
#[derive(Clone, Debug)]
pub struct HttpAugmenter {
    pub endpoint: String,
    pub temperature: f64,
}

impl HttpAugmenter {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpAugmenter { endpoint: endpoint.into(), temperature: 0.9 }
    }
}

impl Augmenter for HttpAugmenter {
    fn candidates(&mut self, family: &TemplateFamily, n: usize) -> Result<Vec<String>, FeedbackError> {
        let prompt = PROMPT_TEMPLATE.replace("{n}", &n.to_string()).replace("{base}", &family.base);
        let body = serde_json::to_string(&CompletionRequest { prompt: &prompt, max_tokens: 40 * n, temperature: self.temperature })
            .map_err(|e| FeedbackError::Service(e.to_string()))?;
        let mut resp = ureq::post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| FeedbackError::Service(format!("{}: {e}", self.endpoint)))?;
        let text = resp.body_mut().read_to_string().map_err(|e| FeedbackError::Service(e.to_string()))?;
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| FeedbackError::Service(format!("bad response: {e}")))?;
        let mut out = vec![family.base.clone()];
        for choice in parsed.choices {
            out.extend(choice.text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
        }
        Ok(out)
    }
}

/// Why a candidate was dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LintIssue {
    pub family_id: String,
    pub variant: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LintReport {
    pub accepted: usize,
    pub issues: Vec<LintIssue>,
}

impl LintReport {
    pub fn summary(&self) -> String {
        let mut s = format!("{} variants accepted, {} rejected", self.accepted, self.issues.len());
        for i in &self.issues {
            s.push_str(&format!("\n  {}: {:?} ({})", i.family_id, i.variant, i.reason));
        }
        s
    }
}

/// Builds a pool with exactly `n` variants per family (base first). Fails
/// if linting leaves any family short.
pub fn augment_pool(
    base: &[TemplateFamily],
    augmenter: &mut dyn Augmenter,
    n: usize,
) -> Result<(Pool, LintReport), FeedbackError> {
    let mut report = LintReport::default();
    let mut families = Vec::with_capacity(base.len());
    let mut short = Vec::new();
    for fam in base {
        let want = slot_set(&fam.base).map_err(FeedbackError::Data)?;
        let mut variants: Vec<String> = vec![fam.base.clone()];
        for cand in augmenter.candidates(fam, n)? {
            if variants.len() >= n {
                break;
            }
            if variants.contains(&cand) {
                continue;
            }
            match slot_set(&cand) {
                Ok(s) if s == want => variants.push(cand),
                Ok(s) => report.issues.push(LintIssue {
                    family_id: fam.family_id.clone(),
                    variant: cand,
                    reason: format!("slots {s:?}, expected {want:?}"),
                }),
                Err(e) => report.issues.push(LintIssue { family_id: fam.family_id.clone(), variant: cand, reason: e }),
            }
        }
        if variants.len() < n {
            short.push(format!("{} has {} of {n}", fam.family_id, variants.len()));
        }
        report.accepted += variants.len();
        families.push(TemplateFamily { variants, ..fam.clone() });
    }
    if !short.is_empty() {
        return Err(FeedbackError::Lint { rejected: report.issues.len(), reason: short.join(", ") });
    }
    Ok((Pool::new(families)?, report))
}
