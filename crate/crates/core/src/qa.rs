//! Response generation over retrieved passages.
//!
//! [`QaEngine::answer`] runs retrieve, prompt, generate, moderate and ground,
//! in that order. A response reaches the caller only when moderation finds
//! nothing and the grounding score clears the threshold; otherwise the
//! answer is `Refused` and carries no generated text.
//!
//! Grounding is lexical: the share of the draft's content words found in the
//! retrieved contexts, forced to zero if the draft quotes any number the
//! contexts do not contain.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError};
use crate::library::{IndexedDocument, Library, LibraryError};
use crate::passages::{split_sentences, Passage, PassageKind};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_GROUNDING_THRESHOLD: f64 = 0.6;
pub const DEFAULT_TEMPLATE: &str = "context-qa-v1";
pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_CONCURRENT_REQUESTS: usize = 4;

const BUNDLED_STOPWORDS: &str = include_str!("../assets/stopwords.txt");
const BUNDLED_WORDLIST: &str = include_str!("../assets/wordlist.txt");

#[derive(Debug, Error)]
pub enum QaError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("question is empty")]
    EmptyText,
    #[error("no context passages")]
    NoContext,
    #[error("unknown prompt template {0}")]
    UnknownTemplate(String),
    #[error("remote generator unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote generator returned a malformed response: {0}")]
    RemoteMalformed(String),
    #[error("remote generator timed out")]
    Timeout,
    #[error("moderation wordlist missing: {0}")]
    WordlistMissing(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(LibraryError),
    #[error("encoder error: {0}")]
    Encoder(EncoderError),
}

impl From<LibraryError> for QaError {
    fn from(e: LibraryError) -> Self {
        match e {
            LibraryError::UnknownDocument(id) => Self::UnknownDocument(id),
            other => Self::Library(other),
        }
    }
}

impl From<EncoderError> for QaError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::EmptyText => Self::EmptyText,
            other => Self::Encoder(other),
        }
    }
}

/// Lowercased words with leading/trailing punctuation removed.
///
/// Interior punctuation survives, so `"2,491,543"` and `"0.0016"` stay whole.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn is_numeric(word: &str) -> bool {
    word.chars().any(|c| c.is_ascii_digit())
}

/// Comparison key: numbers ignore thousands separators.
fn word_key(word: &str) -> String {
    if is_numeric(word) {
        word.replace(',', "")
    } else {
        word.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn parse(list: &str) -> Self {
        Self(parse_list(list).map(|w| w.to_lowercase()).collect())
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn content_words(&self, text: &str) -> Vec<String> {
        words(text).into_iter().filter(|w| !self.contains(w)).collect()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }
}

fn parse_list(list: &str) -> impl Iterator<Item = &str> {
    list.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Whole-word, case-insensitive wordlist filter.
#[derive(Debug, Clone)]
pub struct Moderator {
    terms: Vec<(String, Vec<String>)>,
}

impl Moderator {
    pub fn parse(list: &str) -> Self {
        let mut terms: Vec<(String, Vec<String>)> = parse_list(list)
            .map(|t| (t.to_lowercase(), crate::encoder::tokenize(t)))
            .filter(|(_, tokens)| !tokens.is_empty())
            .collect();
        terms.sort();
        terms.dedup();
        Self { terms }
    }

    pub fn from_file(path: &Path) -> Result<Self, QaError> {
        std::fs::read_to_string(path)
            .map(|s| Self::parse(&s))
            .map_err(|e| QaError::WordlistMissing(format!("{}: {e}", path.display())))
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Matched terms, sorted and deduplicated.
    pub fn moderate(&self, text: &str) -> Vec<String> {
        let tokens = crate::encoder::tokenize(text);
        let mut hits: Vec<String> = self
            .terms
            .iter()
            .filter(|(_, seq)| tokens.windows(seq.len()).any(|w| w == seq.as_slice()))
            .map(|(term, _)| term.clone())
            .collect();
        hits.sort();
        hits.dedup();
        hits
    }
}

impl Default for Moderator {
    fn default() -> Self {
        Self::parse(BUNDLED_WORDLIST)
    }
}

/// Grounding score of `draft` against `contexts`, in `[0, 1]`.
pub fn ground(draft: &str, contexts: &[&str], stopwords: &Stopwords) -> f64 {
    let context_words: HashSet<String> =
        contexts.iter().flat_map(|c| words(c)).map(|w| word_key(&w)).collect();

    let draft_words = words(draft);
    let numbers_present = draft_words
        .iter()
        .filter(|w| is_numeric(w))
        .all(|w| context_words.contains(&word_key(w)));
    if !numbers_present {
        return 0.0;
    }

    let content: Vec<&String> = draft_words.iter().filter(|w| !stopwords.contains(w)).collect();
    if content.is_empty() {
        return 0.0;
    }
    let present = content.iter().filter(|w| context_words.contains(&word_key(w))).count();
    present as f64 / content.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub question: String,
    pub contexts: Vec<(String, String)>,
    pub template_id: String,
    pub rendered: String,
}

pub fn build_prompt(question: &str, contexts: &[(String, String)], template_id: &str) -> Result<Prompt, QaError> {
    if contexts.is_empty() {
        return Err(QaError::NoContext);
    }
    if template_id != DEFAULT_TEMPLATE {
        return Err(QaError::UnknownTemplate(template_id.to_string()));
    }
    let mut rendered = String::new();
    for (i, (_, text)) in contexts.iter().enumerate() {
        rendered.push_str(&format!("[{}] {}\n", i + 1, text));
    }
    rendered.push_str(&format!("\nQuestion: {question}\nAnswer:"));
    Ok(Prompt {
        question: question.to_string(),
        contexts: contexts.to_vec(),
        template_id: template_id.to_string(),
        rendered,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage: Passage,
    pub score: f32,
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &Prompt, contexts: &[ScoredPassage]) -> Result<String, QaError>;
}

/// Returns the context sentence that best overlaps the question.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator {
    stopwords: Stopwords,
}

impl ExtractiveGenerator {
    pub fn new(stopwords: Stopwords) -> Self {
        Self { stopwords }
    }

    /// Candidate sentences in rank order; table triplets stay whole.
    pub fn candidates(contexts: &[ScoredPassage]) -> Vec<&str> {
        contexts
            .iter()
            .flat_map(|c| match c.passage.kind {
                PassageKind::TableTriplet => vec![c.passage.text.as_str()],
                PassageKind::Text => split_sentences(&c.passage.text),
            })
            .collect()
    }

    /// Overlap score: one point per question content word found in the
    /// candidate, plus two more for each matched number or year.
    pub fn score(&self, question: &str, candidate: &str) -> usize {
        let mut question_words = self.stopwords.content_words(question);
        question_words.sort();
        question_words.dedup();
        let candidate_keys: HashSet<String> = words(candidate).iter().map(|w| word_key(w)).collect();
        question_words
            .iter()
            .filter(|q| matches_candidate(q, &candidate_keys))
            .map(|q| if is_numeric(q) { 3 } else { 1 })
            .sum()
    }

    pub fn pick<'a>(&self, question: &str, contexts: &'a [ScoredPassage]) -> Option<&'a str> {
        let mut best: Option<(&str, usize)> = None;
        for candidate in Self::candidates(contexts) {
            let score = self.score(question, candidate);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((candidate, score));
            }
        }
        best.map(|(c, _)| c)
    }
}

/// A question word matches a candidate verbatim; a four-digit year also
/// matches its fiscal-year spellings ("2021" ~ "fy21", "fy2021").
fn matches_candidate(question_word: &str, candidate_keys: &HashSet<String>) -> bool {
    let key = word_key(question_word);
    if candidate_keys.contains(&key) {
        return true;
    }
    match year(&key) {
        Some(y) => candidate_keys.contains(&format!("fy{}", &y[2..])) || candidate_keys.contains(&format!("fy{y}")),
        None => false,
    }
}

fn year(word: &str) -> Option<&str> {
    let is_year = word.len() == 4
        && word.chars().all(|c| c.is_ascii_digit())
        && (word.starts_with("19") || word.starts_with("20"));
    is_year.then_some(word)
}

impl Generator for ExtractiveGenerator {
    fn generate(&self, prompt: &Prompt, contexts: &[ScoredPassage]) -> Result<String, QaError> {
        self.pick(&prompt.question, contexts).map(str::to_string).ok_or(QaError::NoContext)
    }
}

/// Counting semaphore for the remote request cap.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock();
        while *n == 0 {
            self.freed.wait(&mut n);
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Client for an HTTP completion endpoint:
/// `POST {"model", "prompt", "max_tokens"}` answered by `{"text"}`.
pub struct RemoteGenerator {
    endpoint: String,
    model: String,
    max_tokens: u32,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, model: &str, max_tokens: u32, timeout: Duration, max_concurrent: usize) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            max_tokens,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            slots: Semaphore::new(max_concurrent),
        }
    }

    pub fn complete(&self, prompt: &str) -> Result<String, QaError> {
        let _slot = self.slots.acquire();
        let request = CompletionRequest { model: &self.model, prompt, max_tokens: self.max_tokens };
        let response = self.agent.post(&self.endpoint).send_json(&request).map_err(|e| match e {
            ureq::Error::Status(code, _) => QaError::RemoteUnavailable(format!("HTTP {code}")),
            ureq::Error::Transport(t) if is_timeout(&t) => QaError::Timeout,
            ureq::Error::Transport(t) => QaError::RemoteUnavailable(t.to_string()),
        })?;
        let body = response.into_string().map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
                QaError::Timeout
            } else {
                QaError::RemoteMalformed(e.to_string())
            }
        })?;
        serde_json::from_str::<CompletionResponse>(&body)
            .map(|r| r.text)
            .map_err(|e| QaError::RemoteMalformed(e.to_string()))
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    use std::error::Error as _;
    let mut source = t.source();
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().to_lowercase().contains("timed out")
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &Prompt, _contexts: &[ScoredPassage]) -> Result<String, QaError> {
        self.complete(&prompt.rendered)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeneratorKind {
    Extractive,
    Remote { endpoint: String, model: String },
}

#[derive(Debug, Clone)]
pub struct GenerationConfig {
    pub k: usize,
    pub grounding_threshold: f64,
    pub generator: GeneratorKind,
    pub max_tokens: u32,
    pub remote_timeout: Duration,
    pub max_concurrent_requests: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            grounding_threshold: DEFAULT_GROUNDING_THRESHOLD,
            generator: GeneratorKind::Extractive,
            max_tokens: DEFAULT_MAX_TOKENS,
            remote_timeout: DEFAULT_REMOTE_TIMEOUT,
            max_concurrent_requests: DEFAULT_MAX_CONCURRENT_REQUESTS,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), QaError> {
        if self.k == 0 {
            return Err(QaError::Config("k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.grounding_threshold) {
            return Err(QaError::Config(format!(
                "grounding threshold {} outside [0, 1]",
                self.grounding_threshold
            )));
        }
        if let GeneratorKind::Remote { endpoint, .. } = &self.generator {
            if endpoint.trim().is_empty() {
                return Err(QaError::Config("remote generator requires an endpoint".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Ok,
    Refused,
    NoContext,
}

/// A passage backing an answer, with what a viewer needs to locate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePassage {
    pub passage_id: String,
    pub block_id: String,
    pub kind: PassageKind,
    pub text: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub status: AnswerStatus,
    pub text: String,
    pub supporting: Vec<String>,
    pub sources: Vec<SourcePassage>,
    pub grounding_score: f64,
    pub moderation_flags: Vec<String>,
}

impl Answer {
    fn withheld(status: AnswerStatus, grounding_score: f64, moderation_flags: Vec<String>) -> Self {
        Self {
            status,
            text: String::new(),
            supporting: Vec::new(),
            sources: Vec::new(),
            grounding_score,
            moderation_flags,
        }
    }
}

pub struct QaEngine {
    encoder: Arc<dyn Encoder>,
    stopwords: Stopwords,
    moderator: Moderator,
    generator: Box<dyn Generator>,
    config: GenerationConfig,
}

impl QaEngine {
    /// Build an engine with the generator named in `config`.
    pub fn new(
        encoder: Arc<dyn Encoder>,
        stopwords: Stopwords,
        moderator: Moderator,
        config: GenerationConfig,
    ) -> Result<Self, QaError> {
        config.validate()?;
        let generator: Box<dyn Generator> = match &config.generator {
            GeneratorKind::Extractive => Box::new(ExtractiveGenerator::new(stopwords.clone())),
            GeneratorKind::Remote { endpoint, model } => Box::new(RemoteGenerator::new(
                endpoint,
                model,
                config.max_tokens,
                config.remote_timeout,
                config.max_concurrent_requests,
            )),
        };
        Ok(Self { encoder, stopwords, moderator, generator, config })
    }

    pub fn with_generator(mut self, generator: Box<dyn Generator>) -> Self {
        self.generator = generator;
        self
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn retrieve(&self, question: &str, doc: &IndexedDocument, k: usize) -> Result<Vec<ScoredPassage>, QaError> {
        if question.trim().is_empty() {
            return Err(QaError::EmptyText);
        }
        doc.index.ensure_spec(self.encoder.spec()).map_err(|e| QaError::Library(e.into()))?;
        let query = self.encoder.embed(question)?;
        let hits = doc.index.search(&query, k).map_err(|e| QaError::Library(e.into()))?;
        Ok(hits
            .into_iter()
            .filter_map(|hit| {
                doc.passage(&hit.passage_id).map(|p| ScoredPassage { passage: p.clone(), score: hit.score })
            })
            .collect())
    }

    pub fn answer_in(&self, library: &Library, doc_id: &str, question: &str, k: Option<usize>) -> Result<Answer, QaError> {
        let doc = library.get(doc_id)?;
        self.answer(question, &doc, k)
    }

    pub fn answer(&self, question: &str, doc: &IndexedDocument, k: Option<usize>) -> Result<Answer, QaError> {
        let k = k.unwrap_or(self.config.k);
        if k == 0 {
            return Err(QaError::Config("k must be positive".into()));
        }
        let contexts = self.retrieve(question, doc, k)?;
        let pairs: Vec<(String, String)> =
            contexts.iter().map(|c| (c.passage.passage_id.clone(), c.passage.text.clone())).collect();
        let prompt = match build_prompt(question, &pairs, DEFAULT_TEMPLATE) {
            Ok(p) => p,
            Err(QaError::NoContext) => return Ok(Answer::withheld(AnswerStatus::NoContext, 0.0, Vec::new())),
            Err(e) => return Err(e),
        };

        let draft = self.generator.generate(&prompt, &contexts)?;
        self.check(draft, &contexts)
    }

    /// Moderate and ground a draft; only a draft passing both is exposed.
    pub fn check(&self, draft: String, contexts: &[ScoredPassage]) -> Result<Answer, QaError> {
        let flags = self.moderator.moderate(&draft);
        let texts: Vec<&str> = contexts.iter().map(|c| c.passage.text.as_str()).collect();
        let grounding_score = ground(&draft, &texts, &self.stopwords);
        if !flags.is_empty() || grounding_score < self.config.grounding_threshold || draft.trim().is_empty() {
            return Ok(Answer::withheld(AnswerStatus::Refused, grounding_score, flags));
        }

        let draft_keys: HashSet<String> =
            self.stopwords.content_words(&draft).iter().map(|w| word_key(w)).collect();
        let mut support: Vec<&ScoredPassage> = contexts
            .iter()
            .filter(|c| words(&c.passage.text).iter().any(|w| draft_keys.contains(&word_key(w))))
            .collect();
        if support.is_empty() {
            support.extend(contexts.first());
        }
        Ok(Answer {
            status: AnswerStatus::Ok,
            text: draft,
            supporting: support.iter().map(|c| c.passage.passage_id.clone()).collect(),
            sources: support
                .iter()
                .map(|c| SourcePassage {
                    passage_id: c.passage.passage_id.clone(),
                    block_id: c.passage.block_id.clone(),
                    kind: c.passage.kind,
                    text: c.passage.text.clone(),
                    score: c.score,
                })
                .collect(),
            grounding_score,
            moderation_flags: Vec::new(),
        })
    }
}
