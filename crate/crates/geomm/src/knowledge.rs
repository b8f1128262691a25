//! Knowledge toolkit: web search and encyclopedia lookup over a local
//! corpus, and multimodal retrieval by cosine ranking in an embedding space.
//!
//! Live services are reached by binding the same tool names to a remote
//! endpoint; the corpus backend here is deterministic for a given corpus.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use geomm_core::rank::{rank_candidates, EmbeddingVector, RankError, Ranked};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts;
use crate::protocol::{
    Arguments, Binding, Capability, ContentBlock, OutputKind, Registry, RegistryError, RemoteEndpoint,
    SemanticType as T, ToolDescriptor, ToolOutput,
};
use crate::tools::{opt_text, opt_u32, text};

pub const GOOGLE_API: &str = "google_api";
pub const WIKIMEDIA_API: &str = "wikimedia_api";
pub const GME_RETRIEVAL: &str = "gme_retrieval";

pub const SNIPPET_MAX_CHARS: usize = 1000;
pub const DEFAULT_LIMIT: u32 = 5;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSnippet {
    pub text: String,
    pub source: String,
    pub score: Option<f64>,
    /// Unix seconds.
    pub retrieved_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MultimodalQuery {
    pub text: Option<String>,
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KnowledgeError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend quota exceeded")]
    QuotaExceeded,
    #[error("no article matches `{0}`")]
    NotFound(String),
    #[error("embedding has {found} values, backend declares {declared}")]
    DimensionMismatch { declared: usize, found: usize },
    #[error("cannot read image `{0}`")]
    UnresolvableImage(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Rank(#[from] RankError),
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Lower-cased alphanumeric runs.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Cuts `text` to at most `max` characters, ending at the last sentence
/// boundary inside the limit when there is one.
pub fn truncate_snippet(text: &str, max: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max {
        return text.to_string();
    }
    let cut: String = text.chars().take(max).collect();
    let boundary = cut
        .char_indices()
        .filter(|&(i, c)| matches!(c, '.' | '!' | '?') && cut[i + 1..].starts_with(char::is_whitespace))
        .map(|(i, _)| i + 1)
        .next_back()
        .or_else(|| cut.ends_with(['.', '!', '?']).then_some(cut.len()));
    match boundary {
        Some(end) => cut[..end].to_string(),
        None => cut,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub title: Option<String>,
    pub text: String,
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    source: String,
    #[serde(default)]
    title: Option<String>,
}

/// Immutable document collection: `<id>.txt` files plus `manifest.jsonl`
/// lines `{"id", "source", "title"?}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, mut docs: Vec<Document>) -> Result<Self, KnowledgeError> {
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(KnowledgeError::Corpus(format!("duplicate document id `{}`", w[0].id)));
        }
        if let Some(d) = docs.iter().find(|d| d.source.trim().is_empty()) {
            return Err(KnowledgeError::Corpus(format!("document `{}` has no source", d.id)));
        }
        Ok(Self { name: name.into(), docs })
    }

    pub fn load(dir: &Path) -> Result<Self, KnowledgeError> {
        let err = |m: String| KnowledgeError::Corpus(m);
        let manifest = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&manifest).map_err(|e| err(format!("{}: {e}", manifest.display())))?;
        let mut docs = Vec::new();
        for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let m: ManifestLine =
                serde_json::from_str(line).map_err(|e| err(format!("{} line {}: {e}", manifest.display(), i + 1)))?;
            let path = dir.join(format!("{}.txt", m.id));
            let text = fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
            docs.push(Document { id: m.id, source: m.source, title: m.title, text });
        }
        let name = dir.file_name().map_or_else(|| "corpus".into(), |n| n.to_string_lossy().into_owned());
        Self::new(name, docs)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    fn snippet(&self, d: &Document, score: Option<f64>) -> EvidenceSnippet {
        EvidenceSnippet {
            text: truncate_snippet(&d.text, SNIPPET_MAX_CHARS),
            source: d.source.clone(),
            score,
            retrieved_at: now(),
        }
    }

    /// Documents scored by the fraction of distinct query tokens they
    /// contain; zero scores are dropped; ties go to the smaller id.
    pub fn search_web(&self, query: &str, limit: usize) -> Result<Vec<EvidenceSnippet>, KnowledgeError> {
        let q: BTreeSet<String> = tokens(query).into_iter().collect();
        if q.is_empty() {
            return Err(KnowledgeError::EmptyQuery);
        }
        let mut hits: Vec<(f64, &Document)> = self
            .docs
            .iter()
            .filter_map(|d| {
                let dt: BTreeSet<String> =
                    tokens(&d.text).into_iter().chain(d.title.iter().flat_map(|t| tokens(t))).collect();
                let matched = q.iter().filter(|t| dt.contains(*t)).count();
                (matched > 0).then(|| (matched as f64 / q.len() as f64, d))
            })
            .collect();
        hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        Ok(hits.into_iter().take(limit).map(|(s, d)| self.snippet(d, Some(s))).collect())
    }

    /// Exact case-insensitive title match first, then title containment
    /// either way. Returns the article's first paragraph.
    pub fn search_encyclopedia(&self, title: &str) -> Result<EvidenceSnippet, KnowledgeError> {
        let want = title.trim().to_lowercase();
        if want.is_empty() {
            return Err(KnowledgeError::EmptyQuery);
        }
        let titled = || self.docs.iter().filter_map(|d| d.title.as_ref().map(|t| (t.to_lowercase(), d)));
        let doc = titled()
            .find(|(t, _)| *t == want)
            .or_else(|| titled().find(|(t, _)| t.contains(&want) || want.contains(t.as_str())))
            .map(|(_, d)| d)
            .ok_or_else(|| KnowledgeError::NotFound(title.into()))?;
        let summary = doc.text.trim().split("\n\n").next().unwrap_or_default();
        let mut s = self.snippet(doc, None);
        s.text = truncate_snippet(summary, SNIPPET_MAX_CHARS);
        Ok(s)
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, item: &MultimodalQuery) -> Result<EmbeddingVector, KnowledgeError>;
}

/// Deterministic feature-hashing embedder for tests and offline runs: each
/// text token and a few digests of the image bytes add ±1 to a hashed slot.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn bump(&self, v: &mut [f64], digest: &[u8]) {
        let idx = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[(idx % self.dim as u64) as usize] += sign;
    }
}

const IMAGE_FEATURES: u8 = 8;

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: &MultimodalQuery) -> Result<EmbeddingVector, KnowledgeError> {
        if item.text.as_deref().is_none_or(|t| t.trim().is_empty()) && item.image_ref.is_none() {
            return Err(KnowledgeError::EmptyQuery);
        }
        let mut v = vec![0.0; self.dim];
        for t in item.text.as_deref().map(tokens).unwrap_or_default() {
            self.bump(&mut v, &Sha256::digest(format!("t:{t}").as_bytes()));
        }
        if let Some(r) = &item.image_ref {
            let bytes = fs::read(r).map_err(|_| KnowledgeError::UnresolvableImage(r.clone()))?;
            let content = Sha256::digest(&bytes);
            for k in 0..IMAGE_FEATURES {
                let mut h = Sha256::new();
                h.update(content);
                h.update([k]);
                self.bump(&mut v, &h.finalize());
            }
        }
        Ok(EmbeddingVector::new(v)?)
    }
}

/// Embedder served by a remote tool that answers `{"text"?, "image_ref"?}`
/// with a JSON object `{"values": [...]}` as text or payload.
pub struct RemoteEmbedder {
    endpoint: Arc<RemoteEndpoint>,
    tool: String,
    dim: usize,
    deadline: Duration,
}

impl RemoteEmbedder {
    pub fn new(endpoint: Arc<RemoteEndpoint>, tool: impl Into<String>, dim: usize, deadline: Duration) -> Self {
        Self { endpoint, tool: tool.into(), dim, deadline }
    }
}

/// Checks a backend's vector against its declared dimension.
pub fn checked_vector(values: Vec<f64>, declared: usize) -> Result<EmbeddingVector, KnowledgeError> {
    if values.len() != declared {
        return Err(KnowledgeError::DimensionMismatch { declared, found: values.len() });
    }
    Ok(EmbeddingVector::new(values)?)
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: &MultimodalQuery) -> Result<EmbeddingVector, KnowledgeError> {
        let args = serde_json::to_value(item).expect("query serializes");
        let args: Arguments =
            args.as_object().cloned().unwrap_or_default().into_iter().filter(|(_, v)| !v.is_null()).collect();
        let r = self
            .endpoint
            .call(&self.tool, &args, self.deadline)
            .map_err(|e| KnowledgeError::BackendUnavailable(e.to_string()))?;
        if !r.is_ok() {
            return Err(KnowledgeError::BackendUnavailable(format!("{:?}", r.status)));
        }
        let body = r
            .content
            .iter()
            .find_map(|b| match b {
                ContentBlock::Payload { data, .. } => Some(data.clone()),
                ContentBlock::Text { text } => serde_json::from_str::<Value>(text).ok(),
            })
            .ok_or_else(|| KnowledgeError::BackendUnavailable("response carries no vector".into()))?;
        let values: Vec<f64> = serde_json::from_value(body.get("values").cloned().unwrap_or(Value::Null))
            .map_err(|e| KnowledgeError::BackendUnavailable(format!("bad vector: {e}")))?;
        checked_vector(values, self.dim)
    }
}

/// A retrieval candidate for multimodal ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    #[serde(flatten)]
    pub item: MultimodalQuery,
    #[serde(default)]
    pub source: Option<String>,
}

/// Embeds query and candidates with one backend and ranks by cosine.
pub fn retrieve(
    embedder: &dyn Embedder,
    query: &MultimodalQuery,
    candidates: &[Candidate],
    k: usize,
) -> Result<Vec<Ranked>, KnowledgeError> {
    let q = embedder.embed(query)?;
    let pool = candidates
        .iter()
        .map(|c| Ok((c.id.clone(), embedder.embed(&c.item)?)))
        .collect::<Result<Vec<_>, KnowledgeError>>()?;
    Ok(rank_candidates(&q, &pool, k)?)
}

fn evidence_output(snippets: &[EvidenceSnippet], fallback_provenance: String, query: &str) -> ToolOutput {
    let body = if snippets.is_empty() {
        format!("no results for `{query}`")
    } else {
        snippets.iter().map(|s| format!("[{}] {}", s.source, s.text)).collect::<Vec<_>>().join("\n")
    };
    let provenance = if snippets.is_empty() {
        fallback_provenance
    } else {
        snippets.iter().map(|s| s.source.as_str()).collect::<Vec<_>>().join("; ")
    };
    ToolOutput::text(body)
        .block(ContentBlock::payload(OutputKind::Evidence, json!({"query": query, "snippets": snippets})))
        .provenance(provenance)
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    let k = |name, desc| ToolDescriptor::new(name, desc, Capability::Knowledge, OutputKind::Evidence);
    vec![
        k(GOOGLE_API, prompts::GOOGLE_API).field("query", T::Text, true).field("limit", T::Integer, false),
        k(WIKIMEDIA_API, prompts::WIKIMEDIA_API).field("title", T::Text, true),
        k(GME_RETRIEVAL, prompts::GME)
            .field("text", T::Text, false)
            .field("image_ref", T::ImageRef, false)
            .field("candidates", T::Json, false)
            .field("k", T::Integer, false),
    ]
}

/// Registers the three knowledge tools backed by `corpus` and `embedder`.
/// When `candidates` is omitted, retrieval ranks the corpus documents.
pub fn register(reg: Registry, corpus: Arc<Corpus>, embedder: Arc<dyn Embedder>) -> Result<Registry, RegistryError> {
    let [web, wiki, gme]: [ToolDescriptor; 3] = descriptors().try_into().expect("three knowledge tools");
    let provenance = format!("corpus:{}", corpus.name());

    let c = corpus.clone();
    let p = provenance.clone();
    let web_h = move |a: &Arguments| {
        let q = text(a, "query")?;
        let limit = opt_u32(a, "limit")?.unwrap_or(DEFAULT_LIMIT) as usize;
        let hits = c.search_web(q, limit).map_err(|e| e.to_string())?;
        Ok(evidence_output(&hits, p.clone(), q))
    };

    let c = corpus.clone();
    let wiki_h = move |a: &Arguments| {
        let t = text(a, "title")?;
        let s = c.search_encyclopedia(t).map_err(|e| e.to_string())?;
        Ok(evidence_output(std::slice::from_ref(&s), String::new(), t))
    };

    let c = corpus;
    let gme_h = move |a: &Arguments| {
        let query = MultimodalQuery {
            text: opt_text(a, "text").map(str::to_string),
            image_ref: opt_text(a, "image_ref").map(str::to_string),
        };
        let k = opt_u32(a, "k")?.unwrap_or(DEFAULT_LIMIT) as usize;
        let pool: Vec<Candidate> = match a.get("candidates") {
            None | Some(Value::Null) => c
                .documents()
                .iter()
                .map(|d| Candidate {
                    id: d.id.clone(),
                    item: MultimodalQuery { text: Some(d.text.clone()), image_ref: None },
                    source: Some(d.source.clone()),
                })
                .collect(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("`candidates`: {e}"))?,
        };
        let ranked = retrieve(embedder.as_ref(), &query, &pool, k).map_err(|e| e.to_string())?;
        let t = now();
        let snippets: Vec<EvidenceSnippet> = ranked
            .iter()
            .map(|r| {
                let cand = pool.iter().find(|c| c.id == r.id).expect("ranked ids come from the pool");
                EvidenceSnippet {
                    text: truncate_snippet(cand.item.text.as_deref().unwrap_or(&cand.id), SNIPPET_MAX_CHARS),
                    source: cand.source.clone().unwrap_or_else(|| cand.id.clone()),
                    score: Some(r.score),
                    retrieved_at: t,
                }
            })
            .collect();
        let label = query.text.clone().or(query.image_ref.clone()).unwrap_or_default();
        Ok(evidence_output(&snippets, provenance.clone(), &label))
    };

    reg.register_tool(web, Binding::handler(web_h))?
        .register_tool(wiki, Binding::handler(wiki_h))?
        .register_tool(gme, Binding::handler(gme_h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: Option<&str>, text: &str) -> Document {
        Document {
            id: id.into(),
            source: format!("https://example.org/{id}"),
            title: title.map(Into::into),
            text: text.into(),
        }
    }

    fn corpus() -> Corpus {
        Corpus::new(
            "test",
            vec![
                doc(
                    "sar",
                    Some("Synthetic-aperture radar"),
                    "Synthetic-aperture radar forms images from microwave echoes.\n\nIt works day and night.",
                ),
                doc("microwave", None, "Microwave bands can penetrate vegetation and detect subsurface features."),
                doc("optical", Some("Optical imagery"), "Optical sensors record reflected sunlight in visible bands."),
            ],
        )
        .unwrap()
    }

    #[test]
    fn web_search_ranks_by_token_coverage() {
        let hits = corpus().search_web("microwave band penetration vegetation subsurface", 5).unwrap();
        assert_eq!(hits[0].source, "https://example.org/microwave");
        assert!(hits.iter().all(|h| !h.source.is_empty()));
        assert!(corpus().search_web("glacier", 5).unwrap().is_empty());
        assert!(corpus().search_web("microwave", 0).unwrap().is_empty());
        assert_eq!(corpus().search_web(" ,; ", 3), Err(KnowledgeError::EmptyQuery));
    }

    #[test]
    fn encyclopedia_lookup() {
        let c = corpus();
        let exact = c.search_encyclopedia("Synthetic-aperture radar").unwrap();
        assert_eq!(exact.text, "Synthetic-aperture radar forms images from microwave echoes.");
        assert_eq!(c.search_encyclopedia("SYNTHETIC-APERTURE RADAR").unwrap().text, exact.text);
        assert_eq!(c.search_encyclopedia("Lidar"), Err(KnowledgeError::NotFound("Lidar".into())));
    }

    #[test]
    fn truncation_prefers_sentences() {
        let long = "One sentence here. ".repeat(80);
        let t = truncate_snippet(&long, 100);
        assert!(t.ends_with('.') && t.chars().count() <= 100);
        let words = "x".repeat(2000);
        assert_eq!(truncate_snippet(&words, 1000).len(), 1000);
        assert_eq!(truncate_snippet("short", 1000), "short");
    }

    #[test]
    fn hash_embedder() {
        let e = HashEmbedder::new(64);
        let q = MultimodalQuery { text: Some("microwave penetration".into()), image_ref: None };
        assert_eq!(e.embed(&q).unwrap(), e.embed(&q).unwrap());
        assert_eq!(e.embed(&q).unwrap().dim(), 64);
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.bin");
        fs::write(&img, b"pixels").unwrap();
        let only_image = MultimodalQuery { text: None, image_ref: Some(img.display().to_string()) };
        assert_eq!(e.embed(&only_image).unwrap().dim(), 64);
        assert_eq!(e.embed(&MultimodalQuery::default()), Err(KnowledgeError::EmptyQuery));
    }

    #[test]
    fn declared_dimension_is_enforced() {
        assert_eq!(
            checked_vector(vec![0.5; 512], 768),
            Err(KnowledgeError::DimensionMismatch { declared: 768, found: 512 })
        );
        assert!(checked_vector(vec![0.5; 768], 768).is_ok());
    }

    #[test]
    fn tools_carry_provenance() {
        let reg = register(Registry::new(), Arc::new(corpus()), Arc::new(HashEmbedder::new(32))).unwrap();
        let args = |v: Value| v.as_object().unwrap().clone();
        let r = reg.call(GOOGLE_API, &args(json!({"query": "microwave vegetation"}))).unwrap();
        assert!(r.is_ok());
        assert!(r.provenance.unwrap().contains("microwave"));
        let r = reg.call(GOOGLE_API, &args(json!({"query": "glacier"}))).unwrap();
        assert_eq!(r.provenance.as_deref(), Some("corpus:test"));
        let r = reg.call(WIKIMEDIA_API, &args(json!({"title": "optical imagery"}))).unwrap();
        assert_eq!(r.provenance.as_deref(), Some("https://example.org/optical"));
        let r = reg.call(GME_RETRIEVAL, &args(json!({"text": "microwave vegetation subsurface", "k": 1}))).unwrap();
        assert!(r.is_ok(), "{r:?}");
        assert_eq!(r.provenance.as_deref(), Some("https://example.org/microwave"));
    }
}
