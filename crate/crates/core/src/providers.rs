//! Text encoders and description generators.
//!
//! An [`Encoder`] maps text to an embedding vector; a [`Describer`] produces
//! free-text scent descriptions from a prompt. Each comes in a live HTTP
//! flavour and an offline flavour (seeded hash mock, fixture replay) so the
//! rest of the crate can run without network access.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vecmath::{normalize, EmbeddingVector, ScentId, VecError};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const EMBEDDINGS_API_KEY_VAR: &str = "EMBEDDINGS_API_KEY";
pub const GENAI_API_KEY_VAR: &str = "GENAI_API_KEY";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("encoder {model_id} returned {got} dims, expected {expected}")]
    DimensionMismatch {
        model_id: String,
        expected: usize,
        got: usize,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("request rejected with HTTP {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no fixture description for key (model {model_id}, scent {scent_id})")]
    FixtureMiss { model_id: String, scent_id: ScentId },
    #[error("invalid vector: {0}")]
    Vector(#[from] VecError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
    #[error("fixture parse: {0}")]
    Fixture(#[from] serde_json::Error),
    #[error("batch element {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<ProviderError>,
    },
}

/// A text → vector function with a fixed output dimensionality.
pub trait Encoder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dims(&self) -> usize;
    /// Encodes already-trimmed, non-empty text.
    fn encode_raw(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Encodes `text` verbatim apart from trimming surrounding whitespace.
pub fn encode_text(encoder: &dyn Encoder, text: &str) -> Result<EmbeddingVector, ProviderError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let v = encoder.encode_raw(text)?;
    if v.dims() != encoder.dims() {
        return Err(ProviderError::DimensionMismatch {
            model_id: encoder.model_id().to_string(),
            expected: encoder.dims(),
            got: v.dims(),
        });
    }
    Ok(v)
}

/// Encodes every text with at most `max_in_flight` concurrent calls.
/// Output order matches input order; the first failing index is reported.
pub fn encode_batch(
    encoder: &dyn Encoder,
    texts: &[String],
    max_in_flight: usize,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    let workers = max_in_flight.max(1).min(texts.len());
    if workers <= 1 {
        return texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                encode_text(encoder, t).map_err(|e| ProviderError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<EmbeddingVector, ProviderError>>> =
        (0..texts.len()).map(|_| None).collect();
    let results = Mutex::new(&mut slots);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= texts.len() {
                    break;
                }
                let r = encode_text(encoder, &texts[i]);
                results.lock().expect("batch result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.expect("every index visited").map_err(|e| ProviderError::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Deterministic offline encoder: a SHA-256 of `(seed, model_id, text)` seeds
/// a ChaCha8 stream of standard-normal coordinates, which are then normalized.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    model_id: String,
    dims: usize,
    seed: u64,
}

impl MockEncoder {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims > 0, "mock encoder needs at least one dimension");
        MockEncoder {
            model_id: format!("mock-{dims}"),
            dims,
            seed,
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Encoder for MockEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn encode_raw(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.model_id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(key);
        let raw: Vec<f64> = (0..self.dims).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(normalize(&EmbeddingVector::new(raw)?)?)
    }
}

/// Retry schedule for transport failures and 5xx responses.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: usize) -> Self {
        RetryPolicy {
            attempts,
            backoff: vec![Duration::ZERO],
        }
    }

    fn delay(&self, failed_attempt: usize) -> Duration {
        self.backoff
            .get(failed_attempt)
            .or(self.backoff.last())
            .copied()
            .unwrap_or(Duration::ZERO)
    }
}

/// Connection settings shared by the remote encoder and describer.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub url: String,
    /// Header carrying the credential, e.g. `Authorization`.
    pub auth_header: String,
    /// Sent as `Bearer <key>` when the header is `Authorization`, verbatim otherwise.
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint {
            url: url.into(),
            auth_header: "Authorization".into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_api_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }

    fn post_json<T: for<'de> Deserialize<'de>>(
        &self,
        body: &serde_json::Value,
        calls: &AtomicUsize,
    ) -> Result<T, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            calls.fetch_add(1, Ordering::SeqCst);
            let mut req = agent.post(&self.url);
            if let Some(key) = &self.api_key {
                let value = if self.auth_header.eq_ignore_ascii_case("authorization") {
                    format!("Bearer {key}")
                } else {
                    key.clone()
                };
                req = req.header(self.auth_header.as_str(), value.as_str());
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<T>()
                        .map_err(|e| ProviderError::MalformedResponse(e.to_string()));
                }
                Err(ureq::Error::StatusCode(status)) if (400..500).contains(&status) => {
                    return Err(ProviderError::Rejected {
                        status,
                        message: format!("POST {}", self.url),
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(ProviderError::Transport {
            attempts,
            message: last,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CachedEmbedding {
    model_id: String,
    text: String,
    vector: EmbeddingVector,
}

/// Content-addressed on-disk store of encoder responses.
#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(EmbeddingCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn key(model_id: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(model_id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, model_id: &str, text: &str) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(model_id, text)))
    }

    pub fn get(&self, model_id: &str, text: &str) -> Option<EmbeddingVector> {
        let raw = fs::read(self.path(model_id, text)).ok()?;
        let entry: CachedEmbedding = serde_json::from_slice(&raw).ok()?;
        // Guard against hash collisions and foreign files.
        (entry.model_id == model_id && entry.text == text).then_some(entry.vector)
    }

    pub fn put(&self, model_id: &str, text: &str, vector: &EmbeddingVector) -> Result<(), ProviderError> {
        let _guard = self.write_lock.lock().expect("cache write lock");
        let path = self.path(model_id, text);
        let tmp = path.with_extension("json.tmp");
        let entry = CachedEmbedding {
            model_id: model_id.to_string(),
            text: text.to_string(),
            vector: vector.clone(),
        };
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(&entry)?)?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// HTTP embedding client speaking the `{"model", "input": [...]}` →
/// `{"data": [{"embedding": [...]}]}` protocol, with memory and disk caches.
pub struct RemoteEncoder {
    endpoint: HttpEndpoint,
    model_id: String,
    dims: usize,
    memory: Mutex<HashMap<String, EmbeddingVector>>,
    disk: Option<EmbeddingCache>,
    calls: AtomicUsize,
}

impl RemoteEncoder {
    pub fn new(endpoint: HttpEndpoint, model_id: impl Into<String>, dims: usize) -> Self {
        RemoteEncoder {
            endpoint,
            model_id: model_id.into(),
            dims,
            memory: Mutex::new(HashMap::new()),
            disk: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.disk = Some(cache);
        self
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Encoder for RemoteEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn encode_raw(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if let Some(v) = self.memory.lock().expect("memory cache").get(text) {
            return Ok(v.clone());
        }
        if let Some(v) = self.disk.as_ref().and_then(|c| c.get(&self.model_id, text)) {
            self.memory
                .lock()
                .expect("memory cache")
                .insert(text.to_string(), v.clone());
            return Ok(v);
        }
        let body = serde_json::json!({ "model": self.model_id, "input": [text] });
        let resp: EmbeddingResponse = self.endpoint.post_json(&body, &self.calls)?;
        let datum = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::MalformedResponse("empty data array".into()))?;
        if datum.embedding.len() != self.dims {
            return Err(ProviderError::DimensionMismatch {
                model_id: self.model_id.clone(),
                expected: self.dims,
                got: datum.embedding.len(),
            });
        }
        let v = EmbeddingVector::new(datum.embedding)?;
        if let Some(cache) = &self.disk {
            cache.put(&self.model_id, text, &v)?;
        }
        self.memory
            .lock()
            .expect("memory cache")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// What a describer is asked for. `scent_id` lets replay backends look up
/// stored output; live backends only read the prompt.
#[derive(Debug, Clone)]
pub struct DescriptionRequest<'a> {
    pub scent_id: ScentId,
    pub prompt: &'a str,
}

pub trait Describer: Send + Sync {
    fn model_id(&self) -> &str;
    fn temperature(&self) -> f64;
    fn describe(&self, request: &DescriptionRequest<'_>) -> Result<String, ProviderError>;
}

pub fn generate_description(
    describer: &dyn Describer,
    request: &DescriptionRequest<'_>,
) -> Result<String, ProviderError> {
    if request.prompt.trim().is_empty() {
        return Err(ProviderError::EmptyPrompt);
    }
    let text = describer.describe(request)?;
    if text.trim().is_empty() {
        return Err(ProviderError::MalformedResponse("empty description".into()));
    }
    Ok(text)
}

/// One stored description in a fixture corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureDescription {
    pub model_id: String,
    pub scent_id: ScentId,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureCorpus {
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default)]
    pub note: Option<String>,
    pub descriptions: Vec<FixtureDescription>,
}

impl FixtureCorpus {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// The synthetic model-description corpus shipped with the crate.
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../data/fixture_descriptions.json"))
            .expect("bundled fixture corpus parses")
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.descriptions.iter().map(|d| d.model_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Replays stored descriptions keyed by `(model_id, scent_id)`.
#[derive(Debug, Clone)]
pub struct FixtureDescriber {
    model_id: String,
    temperature: f64,
    entries: HashMap<ScentId, String>,
}

impl FixtureDescriber {
    pub fn from_corpus(corpus: &FixtureCorpus, model_id: &str) -> Self {
        let entries = corpus
            .descriptions
            .iter()
            .filter(|d| d.model_id == model_id)
            .map(|d| (d.scent_id, d.text.clone()))
            .collect();
        FixtureDescriber {
            model_id: model_id.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            entries,
        }
    }
}

impl Describer for FixtureDescriber {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn describe(&self, request: &DescriptionRequest<'_>) -> Result<String, ProviderError> {
        self.entries
            .get(&request.scent_id)
            .cloned()
            .ok_or_else(|| ProviderError::FixtureMiss {
                model_id: self.model_id.clone(),
                scent_id: request.scent_id,
            })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Chat-completions style generator: `{"model", "temperature", "messages"}`
/// → `{"choices": [{"message": {"content"}}]}`.
pub struct RemoteDescriber {
    endpoint: HttpEndpoint,
    model_id: String,
    temperature: f64,
    calls: AtomicUsize,
}

impl RemoteDescriber {
    pub fn new(endpoint: HttpEndpoint, model_id: impl Into<String>) -> Self {
        RemoteDescriber {
            endpoint,
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.max(0.0);
        self
    }
}

impl Describer for RemoteDescriber {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn describe(&self, request: &DescriptionRequest<'_>) -> Result<String, ProviderError> {
        let body = serde_json::json!({
            "model": self.model_id,
            "temperature": self.temperature,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let resp: ChatResponse = self.endpoint.post_json(&body, &self.calls)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content.trim().to_string())
            .ok_or_else(|| ProviderError::MalformedResponse("no choices".into()))
    }
}

/// Speech-to-text slot. Only the pass-through for already-textual input exists.
pub trait Transcriber: Send + Sync {
    fn provider_id(&self) -> &str;
    fn transcribe(&self, input: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Default, Clone)]
pub struct IdentityTranscriber;

impl Transcriber for IdentityTranscriber {
    fn provider_id(&self) -> &str {
        "identity"
    }

    fn transcribe(&self, input: &str) -> Result<String, ProviderError> {
        Ok(input.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;

    #[test]
    fn mock_is_deterministic_and_unit() {
        let enc = MockEncoder::new(8, 7);
        let a = encode_text(&enc, "lemon").unwrap();
        let b = encode_text(&enc, "lemon").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        let c = encode_text(&enc, "  lemon \n").unwrap();
        assert_eq!(a, c, "surrounding whitespace is trimmed");
    }

    #[test]
    fn mock_matches_independent_hash_expansion() {
        let enc = MockEncoder::new(8, 0);
        for text in ["a", "b"] {
            let mut h = Sha256::new();
            h.update(0u64.to_le_bytes());
            h.update(b"mock-8");
            h.update([0u8]);
            h.update(text.as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let raw: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let want: Vec<f64> = raw.iter().map(|x| x / n).collect();
            assert_eq!(encode_text(&enc, text).unwrap().as_slice(), want.as_slice());
        }
        assert_ne!(encode_text(&enc, "a").unwrap(), encode_text(&enc, "b").unwrap());
    }

    #[test]
    fn mock_depends_on_seed_and_model() {
        let a = encode_text(&MockEncoder::new(8, 1), "x").unwrap();
        let b = encode_text(&MockEncoder::new(8, 2), "x").unwrap();
        let c = encode_text(&MockEncoder::new(8, 1).with_model_id("other"), "x").unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_text_rejected() {
        let enc = MockEncoder::new(4, 0);
        assert!(matches!(encode_text(&enc, "   "), Err(ProviderError::EmptyText)));
    }

    #[test]
    fn batch_matches_sequential() {
        let enc = MockEncoder::new(16, 3);
        assert!(encode_batch(&enc, &[], 4).unwrap().is_empty());
        let same = encode_batch(&enc, &["x".into(), "x".into()], 4).unwrap();
        assert_eq!(same[0], same[1]);
        let texts: Vec<String> = (0..20).map(|i| format!("text number {i}")).collect();
        let batch = encode_batch(&enc, &texts, 4).unwrap();
        let seq: Vec<_> = texts.iter().map(|t| encode_text(&enc, t).unwrap()).collect();
        assert_eq!(batch, seq);
    }

    #[test]
    fn batch_failure_names_index() {
        let enc = MockEncoder::new(4, 0);
        let texts = vec!["ok".to_string(), "fine".into(), " ".into(), "also".into()];
        match encode_batch(&enc, &texts, 2) {
            Err(ProviderError::Batch { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixture_describer_replays() {
        let corpus = FixtureCorpus {
            synthetic: true,
            note: None,
            descriptions: vec![FixtureDescription {
                model_id: "fixture-model".into(),
                scent_id: ScentId::new(4).unwrap(),
                text: "bright and sour".into(),
            }],
        };
        let d = FixtureDescriber::from_corpus(&corpus, "fixture-model");
        let req = DescriptionRequest {
            scent_id: ScentId::new(4).unwrap(),
            prompt: "describe",
        };
        let a = generate_description(&d, &req).unwrap();
        assert_eq!(a, "bright and sour");
        assert_eq!(a, generate_description(&d, &req).unwrap());
        let miss = DescriptionRequest {
            scent_id: ScentId::new(5).unwrap(),
            prompt: "describe",
        };
        let err = generate_description(&d, &miss).unwrap_err();
        assert!(err.to_string().contains("fixture-model") && err.to_string().contains("scent 5"));
        let empty = DescriptionRequest {
            scent_id: ScentId::new(4).unwrap(),
            prompt: " ",
        };
        assert!(matches!(generate_description(&d, &empty), Err(ProviderError::EmptyPrompt)));
        assert_eq!(d.temperature(), 0.7);
    }

    #[test]
    fn bundled_fixture_covers_all_scents() {
        let corpus = FixtureCorpus::bundled();
        assert!(corpus.synthetic);
        for model in corpus.model_ids() {
            let d = FixtureDescriber::from_corpus(&corpus, &model);
            for id in ScentId::all() {
                let req = DescriptionRequest { scent_id: id, prompt: "p" };
                assert!(d.describe(&req).is_ok(), "{model} missing scent {id}");
            }
        }
    }

    #[test]
    fn identity_transcriber_passes_through() {
        assert_eq!(IdentityTranscriber.transcribe("sweet, fresh").unwrap(), "sweet, fresh");
    }

    /// Serves canned HTTP responses in order, one per connection, and
    /// records request bodies.
    fn canned_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn ok_body(v: &[f64]) -> (u16, String) {
        (200, serde_json::json!({ "data": [{ "embedding": v }] }).to_string())
    }

    fn endpoint(url: String) -> HttpEndpoint {
        let mut e = HttpEndpoint::new(url);
        e.retry = RetryPolicy::immediate(3);
        e.api_key = Some("secret".into());
        e
    }

    #[test]
    fn remote_encodes_and_caches() {
        let (url, server) = canned_server(vec![ok_body(&[0.6, 0.8, 0.0])]);
        let dir = tempfile::tempdir().unwrap();
        let enc = RemoteEncoder::new(endpoint(url.clone()), "text-embedding-3-large", 3)
            .with_cache(EmbeddingCache::open(dir.path()).unwrap());
        let v = encode_text(&enc, "fresh and green").unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.8, 0.0]);
        assert_eq!(enc.network_calls(), 1);
        let again = encode_text(&enc, "fresh and green").unwrap();
        assert_eq!(again, v);
        assert_eq!(enc.network_calls(), 1, "second encode served from cache");
        let bodies = server.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "text-embedding-3-large");
        assert_eq!(sent["input"][0], "fresh and green");

        // A fresh client over the same directory needs no network at all.
        let offline = RemoteEncoder::new(endpoint(url), "text-embedding-3-large", 3)
            .with_cache(EmbeddingCache::open(dir.path()).unwrap());
        assert_eq!(encode_text(&offline, "fresh and green").unwrap(), v);
        assert_eq!(offline.network_calls(), 0);
    }

    #[test]
    fn remote_retries_server_errors() {
        let (url, server) = canned_server(vec![
            (500, "{}".into()),
            (503, "{}".into()),
            ok_body(&[1.0, 0.0]),
        ]);
        let enc = RemoteEncoder::new(endpoint(url), "m", 2);
        assert!(encode_text(&enc, "x").is_ok());
        assert_eq!(enc.network_calls(), 3);
        server.join().unwrap();
    }

    #[test]
    fn remote_gives_up_after_three_attempts() {
        let (url, server) = canned_server(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let enc = RemoteEncoder::new(endpoint(url), "m", 2);
        assert!(matches!(
            encode_text(&enc, "x"),
            Err(ProviderError::Transport { attempts: 3, .. })
        ));
        server.join().unwrap();
    }

    #[test]
    fn remote_client_errors_are_not_retried() {
        let (url, server) = canned_server(vec![(401, "{}".into())]);
        let enc = RemoteEncoder::new(endpoint(url), "m", 2);
        assert!(matches!(
            encode_text(&enc, "x"),
            Err(ProviderError::Rejected { status: 401, .. })
        ));
        assert_eq!(enc.network_calls(), 1);
        server.join().unwrap();
    }

    #[test]
    fn remote_dimension_mismatch() {
        let (url, server) = canned_server(vec![ok_body(&[1.0, 0.0, 0.0, 0.0])]);
        let enc = RemoteEncoder::new(endpoint(url), "m", 3);
        assert!(matches!(
            encode_text(&enc, "x"),
            Err(ProviderError::DimensionMismatch { expected: 3, got: 4, .. })
        ));
        server.join().unwrap();
    }

    #[test]
    fn remote_describer_parses_chat_reply() {
        let body = serde_json::json!({"choices":[{"message":{"role":"assistant","content":" Zesty and bright. "}}]});
        let (url, server) = canned_server(vec![(200, body.to_string())]);
        let d = RemoteDescriber::new(endpoint(url), "some-chat-model");
        let req = DescriptionRequest {
            scent_id: ScentId::new(4).unwrap(),
            prompt: "describe it",
        };
        assert_eq!(generate_description(&d, &req).unwrap(), "Zesty and bright.");
        let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(sent["temperature"], 0.7);
        assert_eq!(sent["messages"][0]["content"], "describe it");
    }
}
