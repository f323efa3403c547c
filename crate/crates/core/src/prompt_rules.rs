//! Prompt-based rules for sparse attributes: template filling over product
//! descriptions, mask prediction through a language-model client, and rule
//! embeddings.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::{Label, PairKey, Product};
use crate::error::{Error, Result};
use crate::rules::{CandidateKind, CandidateRule, Polarity, PromptRule, RuleId};

pub const MASK: &str = "[MASK]";

/// `POST /v1/fill_mask` request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskRequest {
    pub prompt: String,
}

/// `POST /v1/fill_mask` response body: the mask distribution over the
/// client's vocabulary, token id = position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskResponse {
    pub tokens: Vec<String>,
    pub probs: Vec<f64>,
}

/// `POST /v1/embed` request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

/// `POST /v1/embed` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

pub trait LmClient {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse>;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

impl<C: LmClient + ?Sized> LmClient for &C {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse> {
        (**self).fill_mask(prompt)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed(text)
    }
}

impl<C: LmClient + ?Sized> LmClient for Box<C> {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse> {
        (**self).fill_mask(prompt)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed(text)
    }
}

/// Fills the relation template for one pair. Descriptions longer than
/// `max_description_chars` are cut back to the last sentence end that fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBuilder {
    pub max_description_chars: usize,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        PromptBuilder {
            max_description_chars: 512,
        }
    }
}

impl PromptBuilder {
    pub fn build(&self, anchor: &Product, rec: &Product, attribute: &str, polarity: Polarity) -> Result<String> {
        for p in [anchor, rec] {
            if p.description.trim().is_empty() {
                return Err(Error::PromptUnavailable(format!("product {} has no description", p.id)));
            }
        }
        Ok(format!(
            "{}: {} {}: {} The {} is {} with the {} because their {} are {MASK}.",
            anchor.name,
            sentence(&truncate(&anchor.description, self.max_description_chars)),
            rec.name,
            sentence(&truncate(&rec.description, self.max_description_chars)),
            anchor.name.to_lowercase(),
            polarity.phrase(),
            rec.name.to_lowercase(),
            attribute_phrase(attribute),
        ))
    }
}

/// `brand_name` -> `brand names`.
pub fn attribute_phrase(attribute: &str) -> String {
    let words = attribute.replace('_', " ");
    if words.ends_with('s') {
        words
    } else {
        format!("{words}s")
    }
}

fn sentence(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_owned()
    } else {
        format!("{t}.")
    }
}

/// Cuts `text` to at most `limit` bytes, ending at the last sentence end
/// inside the limit, or at the last word break when there is none.
pub fn truncate(text: &str, limit: usize) -> String {
    let text = text.trim();
    if text.len() <= limit {
        return text.to_owned();
    }
    let mut cut = limit;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    let head = &text[..cut];
    if let Some(i) = head.rfind(['.', '!', '?']) {
        return head[..=i].to_owned();
    }
    match head.rfind(char::is_whitespace) {
        Some(i) => head[..i].trim_end().to_owned(),
        None => head.to_owned(),
    }
}

/// Argmax of the mask distribution, ties by lowest token id, after checking
/// that the distribution is well formed.
pub fn predict_mask(client: &impl LmClient, prompt: &str) -> Result<(String, f64)> {
    if prompt.matches(MASK).count() != 1 {
        return Err(Error::Validation("prompt must contain exactly one mask".into()));
    }
    let dist = client.fill_mask(prompt)?;
    check_distribution(&dist)?;
    let (best, p) = dist
        .probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    Ok((dist.tokens[best].clone(), p))
}

pub fn check_distribution(dist: &FillMaskResponse) -> Result<()> {
    if dist.tokens.is_empty() || dist.tokens.len() != dist.probs.len() {
        return Err(Error::Protocol(format!(
            "{} tokens but {} probabilities",
            dist.tokens.len(),
            dist.probs.len()
        )));
    }
    if dist.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Protocol("negative or non-finite probability".into()));
    }
    let sum: f64 = dist.probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Protocol(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

pub fn check_embedding(v: &[f64], dim: Option<usize>) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Protocol("empty or non-finite embedding".into()));
    }
    if let Some(d) = dim {
        if v.len() != d {
            return Err(Error::Protocol(format!("embedding has dimension {}, expected {d}", v.len())));
        }
    }
    Ok(())
}

/// The sentence that is embedded for a rule or an unlabeled pair.
pub fn relation_statement(attribute: &str, relation: &str) -> String {
    format!("their {} are {relation}", attribute_phrase(attribute))
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

/// Builds the prompt for a large-error pair with the polarity of its weak
/// label, asks the client for the mask and the statement embedding, and wraps
/// the result as a prompt candidate carrying the triggering feature's `mu`.
#[allow(clippy::too_many_arguments)]
pub fn propose_prompt_rule(
    client: &impl LmClient,
    builder: &PromptBuilder,
    anchor: &Product,
    rec: &Product,
    label: Label,
    attribute: &str,
    mu: f64,
    feature: usize,
    id: RuleId,
    iteration: usize,
) -> Result<CandidateRule> {
    let polarity = match label {
        Label::Positive => Polarity::Compatible,
        Label::Negative => Polarity::NotCompatible,
    };
    let prompt = builder.build(anchor, rec, attribute, polarity)?;
    let (relation, probability) = predict_mask(client, &prompt)?;
    let statement = relation_statement(attribute, &relation);
    let embedding = client.embed(&statement)?;
    check_embedding(&embedding, None)?;
    Ok(CandidateRule {
        id,
        kind: CandidateKind::Prompt(PromptRule {
            attribute: attribute.to_owned(),
            filled_text: prompt.replace(MASK, &relation),
            relation,
            probability,
            polarity,
            statement,
            embedding,
            source_pair: PairKey::new(&anchor.id, &rec.id),
        }),
        mu,
        feature,
        iteration,
    })
}

/// Retries transport failures with a fixed pause; after the last attempt the
/// error reports how many attempts were made.
pub struct RetryingClient<C> {
    pub inner: C,
    pub attempts: usize,
    pub pause: Duration,
}

impl<C: LmClient> RetryingClient<C> {
    pub fn new(inner: C, attempts: usize, pause: Duration) -> Self {
        RetryingClient {
            inner,
            attempts: attempts.max(1),
            pause,
        }
    }

    fn with_retry<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match call() {
                Err(e) if e.is_retryable() => {
                    log::warn!("language model call failed (attempt {attempt}/{}): {e}", self.attempts);
                    last = e.to_string();
                    if attempt < self.attempts {
                        thread::sleep(self.pause);
                    }
                }
                other => return other,
            }
        }
        Err(Error::Transport {
            attempts: self.attempts,
            message: last,
        })
    }
}

impl<C: LmClient> LmClient for RetryingClient<C> {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse> {
        self.with_retry(|| self.inner.fill_mask(prompt))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.with_retry(|| self.inner.embed(text))
    }
}

/// Deterministic offline stand-in for a masked language model.
///
/// `fill_mask` reads the template back out of the prompt: it finds the two
/// product names and the attribute phrase in the final sentence, takes from
/// each description the word that follows the attribute's first word (or the
/// first non-stopword when the attribute is not mentioned), and puts 0.9 of
/// the mass on `same` when the two words agree and on `different` otherwise.
/// The remaining mass is spread evenly over the rest of the vocabulary.
/// Prompts that do not follow the template get a uniform distribution.
///
/// `embed` is a signed hashed bag of lowercase words, L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StubLm {
    pub vocabulary: Vec<String>,
    pub dim: usize,
}

pub const STUB_VOCABULARY: [&str; 8] = [
    "same",
    "different",
    "compatible",
    "similar",
    "matching",
    "identical",
    "unknown",
    "other",
];

const STOPWORDS: [&str; 14] = [
    "a", "an", "the", "of", "for", "and", "with", "in", "to", "is", "it", "this", "by", "on",
];

impl Default for StubLm {
    fn default() -> Self {
        StubLm {
            vocabulary: STUB_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            dim: 64,
        }
    }
}

pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

struct ParsedPrompt {
    anchor_text: String,
    rec_text: String,
    attribute_words: Vec<String>,
}

fn parse_prompt(prompt: &str) -> Option<ParsedPrompt> {
    let lower = prompt.to_lowercase();
    let because = lower.rfind(" because their ")?;
    let tail_start = lower[..because].rfind(". the ")? + 1;
    let tail = &lower[tail_start + 5..];
    // "<n_a> is [not ]compatible with the <n_b> because their <f> are [mask]."
    let (n_a, rest) = tail.split_once(" is ")?;
    let rest = rest.strip_prefix("not ").unwrap_or(rest);
    let rest = rest.strip_prefix("compatible with the ")?;
    let (n_b, rest) = rest.split_once(" because their ")?;
    let (attr, _) = rest.split_once(" are [mask]")?;
    let head = &lower[..tail_start];
    let a_start = head.find(&format!("{n_a}:"))? + n_a.len() + 1;
    let b_marker = format!("{n_b}:");
    let b_rel = head[a_start..].find(&b_marker)?;
    let b_start = a_start + b_rel;
    Some(ParsedPrompt {
        anchor_text: head[a_start..b_start].to_owned(),
        rec_text: head[b_start + b_marker.len()..].to_owned(),
        attribute_words: words(attr),
    })
}

fn singular(w: &str) -> &str {
    w.strip_suffix('s').filter(|s| !s.is_empty()).unwrap_or(w)
}

fn value_after_attribute(text: &str, attribute_words: &[String]) -> Option<String> {
    let tokens = words(text);
    let first = attribute_words.first().map(|w| singular(w))?;
    let skip: Vec<&str> = attribute_words.iter().map(|w| singular(w)).collect();
    if let Some(pos) = tokens.iter().position(|t| singular(t) == first) {
        if let Some(v) = tokens[pos + 1..]
            .iter()
            .find(|t| !skip.contains(&singular(t)) && !STOPWORDS.contains(&t.as_str()))
        {
            return Some(v.clone());
        }
    }
    tokens.into_iter().find(|t| !STOPWORDS.contains(&t.as_str()))
}

impl StubLm {
    fn distribution(&self, hot: Option<usize>) -> Vec<f64> {
        let n = self.vocabulary.len();
        match hot {
            Some(h) if n > 1 => (0..n)
                .map(|i| if i == h { 0.9 } else { 0.1 / (n - 1) as f64 })
                .collect(),
            _ => vec![1.0 / n as f64; n],
        }
    }
}

impl LmClient for StubLm {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse> {
        if !prompt.contains(MASK) {
            return Err(Error::Protocol("prompt has no mask".into()));
        }
        let hot = parse_prompt(prompt).and_then(|p| {
            let a = value_after_attribute(&p.anchor_text, &p.attribute_words)?;
            let b = value_after_attribute(&p.rec_text, &p.attribute_words)?;
            let token = if a == b { "same" } else { "different" };
            self.vocabulary.iter().position(|v| v == token)
        });
        Ok(FillMaskResponse {
            tokens: self.vocabulary.clone(),
            probs: self.distribution(hot),
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for w in words(text) {
            let h = fnv1a(&w);
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}
