//! Encoder and describer construction from CLI flags and configuration.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use sniff_core::catalogue::EmbeddingStore;
use sniff_core::providers::{
    Describer, EmbeddingCache, Encoder, FixtureCorpus, FixtureDescriber, HttpEndpoint, MockEncoder, RemoteDescriber,
    RemoteEncoder, EMBEDDINGS_API_KEY_VAR, GENAI_API_KEY_VAR,
};

use crate::config::ProviderConfig;

pub const MOCK: &str = "mock";
pub const FIXTURE: &str = "fixture";
pub const DEFAULT_MOCK_DIMS: usize = 64;

fn is_mock_model(model_id: &str, dims: usize) -> bool {
    model_id == format!("mock-{dims}")
}

pub fn remote_encoder(model: &str, dims: usize, cfg: &ProviderConfig) -> Result<Arc<dyn Encoder>> {
    let url = cfg
        .endpoint_url
        .as_deref()
        .ok_or_else(|| anyhow!("encoder {model} needs provider.endpoint_url in the config"))?;
    let mut endpoint = HttpEndpoint::new(url).with_api_key_from_env(EMBEDDINGS_API_KEY_VAR);
    endpoint.auth_header = cfg.auth_header.clone();
    let mut enc = RemoteEncoder::new(endpoint, model, dims);
    if let Some(dir) = &cfg.cache_dir {
        enc = enc.with_cache(EmbeddingCache::open(dir).context("opening embedding cache")?);
    }
    Ok(Arc::new(enc))
}

/// `mock` or a remote model id. Remote models need `dims`.
pub fn encoder_from_flag(name: &str, dims: Option<usize>, cfg: &ProviderConfig) -> Result<Arc<dyn Encoder>> {
    if name == MOCK {
        let dims = dims.unwrap_or(DEFAULT_MOCK_DIMS);
        if dims == 0 {
            bail!("mock encoder needs at least one dimension");
        }
        return Ok(Arc::new(MockEncoder::new(dims, cfg.mock_seed)));
    }
    let dims = dims.ok_or_else(|| anyhow!("remote encoder {name} needs --dims"))?;
    remote_encoder(name, dims, cfg)
}

/// The encoder a store was built with: the mock for `mock-<dims>` stores,
/// the configured remote endpoint otherwise.
pub fn encoder_for_store(store: &EmbeddingStore, cfg: &ProviderConfig) -> Result<Arc<dyn Encoder>> {
    if is_mock_model(store.model_id(), store.dims()) {
        Ok(Arc::new(MockEncoder::new(store.dims(), cfg.mock_seed)))
    } else {
        remote_encoder(store.model_id(), store.dims(), cfg)
    }
}

/// `fixture` (first model in the corpus), `fixture:<model_id>`, or a remote
/// model id.
pub fn describer_from_flag(name: &str, fixtures: Option<&Path>, cfg: &ProviderConfig) -> Result<Arc<dyn Describer>> {
    if name == FIXTURE || name.starts_with("fixture:") {
        let corpus = match fixtures {
            Some(p) => FixtureCorpus::load(p).with_context(|| format!("loading fixtures {}", p.display()))?,
            None => FixtureCorpus::bundled(),
        };
        let models = corpus.model_ids();
        let model = match name.strip_prefix("fixture:") {
            Some(m) if models.iter().any(|x| x == m) => m.to_string(),
            Some(m) => bail!("fixture corpus has no model {m}; available: {}", models.join(", ")),
            None => models.first().cloned().ok_or_else(|| anyhow!("fixture corpus is empty"))?,
        };
        return Ok(Arc::new(FixtureDescriber::from_corpus(&corpus, &model)));
    }
    let url = cfg
        .genai_endpoint_url
        .as_deref()
        .ok_or_else(|| anyhow!("describer {name} needs provider.genai_endpoint_url in the config"))?;
    let mut endpoint = HttpEndpoint::new(url).with_api_key_from_env(GENAI_API_KEY_VAR);
    endpoint.auth_header = cfg.auth_header.clone();
    Ok(Arc::new(RemoteDescriber::new(endpoint, name).with_temperature(cfg.temperature)))
}
