//! Request screening and retrieval: a secure agent validates the request,
//! the knowledge base supplies fragments, a condensate agent compresses
//! them and an inference agent turns them into domain knowledge.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::glob::Glob;
use crate::knowledge::{Chunk, KnowledgeBase, KnowledgeError, DEFAULT_K, DEFAULT_LAMBDA};
use crate::provider::{ask, AgentProfile, Provider, ProviderError};
use crate::transcript::Transcript;

pub const DEFAULT_DENY_LIST: &str = include_str!("../assets/deny_list.txt");

#[derive(Debug, Error)]
pub enum MdrError {
    #[error("request rejected: {}", .0.reason)]
    RequestRejected(ValidationVerdict),
    #[error("no chunks to condense")]
    EmptyCandidates,
    #[error("condensed text is empty")]
    EmptyCondensed,
    #[error("deny list: {0}")]
    DenyList(#[from] std::io::Error),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRequest {
    pub raw: String,
    /// Seconds since the Unix epoch. Not part of the digest.
    pub received_at: u64,
}

impl UserRequest {
    pub fn new(raw: impl Into<String>) -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self::at(raw, now)
    }

    pub fn at(raw: impl Into<String>, received_at: u64) -> Self {
        Self { raw: raw.into(), received_at }
    }

    /// sha256 of the trimmed request text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.raw.trim().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub accepted: bool,
    pub reason: String,
    pub matched_rule: Option<String>,
}

impl ValidationVerdict {
    fn accept() -> Self {
        Self { accepted: true, reason: "accepted".into(), matched_rule: None }
    }

    fn reject(reason: impl Into<String>, matched_rule: Option<String>) -> Self {
        Self { accepted: false, reason: reason.into(), matched_rule }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DomainKnowledge {
    pub summary: String,
    pub citations: Vec<(String, usize)>,
    pub request_digest: String,
}

/// Case-insensitive glob rules; the rule id is the pattern text.
#[derive(Debug, Clone)]
pub struct DenyList {
    rules: Vec<Glob>,
}

impl Default for DenyList {
    fn default() -> Self {
        Self::parse(DEFAULT_DENY_LIST)
    }
}

impl DenyList {
    pub fn parse(text: &str) -> Self {
        let rules = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(Glob::new)
            .collect();
        Self { rules }
    }

    pub fn load(path: &Path) -> Result<Self, MdrError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn first_match(&self, text: &str) -> Option<&str> {
        self.rules.iter().find(|g| g.matches(text)).map(Glob::as_str)
    }
}

/// Parse a secure-agent reply: `ACCEPT` or `REJECT:<reason>`. Anything
/// else is a malformed judgment and counts as a rejection.
pub fn parse_judgment(reply: &str) -> ValidationVerdict {
    let reply = reply.trim();
    if reply == "ACCEPT" {
        return ValidationVerdict::accept();
    }
    if let Some(reason) = reply.strip_prefix("REJECT:") {
        let reason = reason.trim();
        let reason = if reason.is_empty() { "rejected by secure agent" } else { reason };
        return ValidationVerdict::reject(reason, None);
    }
    ValidationVerdict::reject(format!("judge reply malformed: {reply:?}"), None)
}

/// Deny list first, then the secure agent; both must accept.
pub fn validate_request(
    req: &UserRequest,
    rules: &DenyList,
    judge: &AgentProfile,
    provider: &dyn Provider,
) -> Result<ValidationVerdict, ProviderError> {
    if req.raw.trim().is_empty() {
        return Ok(ValidationVerdict::reject("empty request", None));
    }
    if let Some(rule) = rules.first_match(&req.raw) {
        return Ok(ValidationVerdict::reject(
            format!("matched deny rule {rule:?}"),
            Some(rule.to_string()),
        ));
    }
    let sections = [("Request".to_string(), req.raw.clone())];
    let reply = ask(judge, &sections, "Judge the request above. Answer exactly ACCEPT or REJECT:<reason>.", provider)?;
    Ok(parse_judgment(&reply))
}

fn chunk_label(i: usize, c: &Chunk) -> String {
    format!("Fragment {} ({}#{})", i + 1, c.doc_id, c.seq)
}

/// One condensate-agent call over all chunks, in retrieval order.
pub fn condense(
    chunks: &[Chunk],
    query: &str,
    profile: &AgentProfile,
    provider: &dyn Provider,
) -> Result<String, MdrError> {
    if chunks.is_empty() {
        return Err(MdrError::EmptyCandidates);
    }
    let sections: Vec<(String, String)> =
        chunks.iter().enumerate().map(|(i, c)| (chunk_label(i, c), c.text.clone())).collect();
    let message = format!("Condense the fragments above for this query: {query}");
    Ok(ask(profile, &sections, &message, provider)?)
}

pub fn infer_knowledge(
    condensed: &str,
    req: &UserRequest,
    citations: Vec<(String, usize)>,
    profile: &AgentProfile,
    provider: &dyn Provider,
) -> Result<DomainKnowledge, MdrError> {
    if condensed.trim().is_empty() {
        return Err(MdrError::EmptyCondensed);
    }
    let sections = [("Condensed knowledge".to_string(), condensed.to_string())];
    let message = format!("Infer the domain knowledge this requirement needs: {}", req.raw.trim());
    let summary = ask(profile, &sections, &message, provider)?;
    Ok(DomainKnowledge { summary, citations, request_digest: req.digest() })
}

#[derive(Debug, Clone)]
pub struct MdrConfig {
    pub k: usize,
    pub lambda: f64,
    pub deny_list: DenyList,
    pub secure: AgentProfile,
    pub condensate: AgentProfile,
    pub inference: AgentProfile,
}

impl Default for MdrConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            lambda: DEFAULT_LAMBDA,
            deny_list: DenyList::default(),
            secure: AgentProfile::secure(),
            condensate: AgentProfile::condensate(),
            inference: AgentProfile::inference(),
        }
    }
}

/// validate → retrieve → condense → infer. A rejection aborts before any
/// retrieval. Every stage is recorded in `transcript` at iteration 0.
pub fn mdr_run(
    req: &UserRequest,
    kb: &KnowledgeBase,
    cfg: &MdrConfig,
    provider: &dyn Provider,
    transcript: &mut Transcript,
) -> Result<DomainKnowledge, MdrError> {
    if kb.is_empty() {
        return Err(KnowledgeError::EmptyKnowledgeBase.into());
    }
    let verdict = validate_request(req, &cfg.deny_list, &cfg.secure, provider)?;
    let verdict_json = serde_json::to_value(&verdict).expect("verdict serializes");
    if !verdict.accepted {
        transcript.record(0, None, "rejected", verdict_json, None);
        return Err(MdrError::RequestRejected(verdict));
    }
    transcript.record(0, None, "validated", verdict_json, None);

    let scored = kb.query_scored(&req.raw, cfg.k, cfg.lambda)?;
    let citations: Vec<(String, usize)> = scored.iter().map(|s| (s.chunk.doc_id.clone(), s.chunk.seq)).collect();
    transcript.record(
        0,
        None,
        "retrieved",
        json!({
            "k": cfg.k,
            "lambda": cfg.lambda,
            "chunks": scored.iter().map(|s| json!({"doc_id": s.chunk.doc_id, "seq": s.chunk.seq, "similarity": s.similarity})).collect::<Vec<_>>(),
        }),
        None,
    );

    let chunks: Vec<Chunk> = scored.into_iter().map(|s| s.chunk).collect();
    let condensed = condense(&chunks, &req.raw, &cfg.condensate, provider)?;
    let input_chars: usize = chunks.iter().map(|c| c.text.chars().count()).sum();
    transcript.record(
        0,
        None,
        "condensed",
        json!({"input_chars": input_chars, "output_chars": condensed.chars().count()}),
        None,
    );

    let knowledge = infer_knowledge(&condensed, req, citations, &cfg.inference, provider)?;
    transcript.record(
        0,
        None,
        "inferred",
        json!({
            "summary_chars": knowledge.summary.chars().count(),
            "citations": knowledge.citations,
            "request_digest": knowledge.request_digest,
        }),
        None,
    );
    Ok(knowledge)
}
