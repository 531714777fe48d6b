//! The 20-scent catalogue and its pre-encoded embedding store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::providers::{encode_batch, Encoder, ProviderError, DEFAULT_MAX_IN_FLIGHT};
use crate::vecmath::{
    normalize, retrieve_best, retrieve_top_k, EmbeddingVector, ScentId, ScoredMatch, VecError,
    UNIT_NORM_TOLERANCE,
};

pub const CATALOGUE_SIZE: usize = 20;
pub const PER_FAMILY: usize = 5;
pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CatalogueError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid catalogue: {0}")]
    Invalid(String),
    #[error("encoding scent {scent_id} failed: {source}")]
    Encode {
        scent_id: ScentId,
        #[source]
        source: ProviderError,
    },
    #[error("unsupported store format version {0}")]
    Version(u32),
    #[error("store integrity check failed: {0}")]
    Integrity(String),
    #[error("invalid store: {0}")]
    InvalidStore(String),
    #[error(transparent)]
    Vector(#[from] VecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Fresh,
    Floral,
    Oriental,
    Woody,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Fresh, Family::Floral, Family::Oriental, Family::Woody];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScentEntry {
    pub id: ScentId,
    pub name: String,
    pub family: Family,
    pub subfamily: String,
    pub cas: String,
    pub catalogue_description: String,
    /// Supplier, concentration and similar bookkeeping. Not read by any logic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

/// A validated 20-entry catalogue, ordered by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Catalogue {
    entries: Vec<ScentEntry>,
}

impl Catalogue {
    pub fn new(mut entries: Vec<ScentEntry>) -> Result<Self, CatalogueError> {
        if entries.len() != CATALOGUE_SIZE {
            return Err(CatalogueError::Invalid(format!(
                "expected {CATALOGUE_SIZE} entries, found {}",
                entries.len()
            )));
        }
        entries.sort_by_key(|e| e.id);
        let ids: BTreeSet<ScentId> = entries.iter().map(|e| e.id).collect();
        if ids.len() != CATALOGUE_SIZE {
            return Err(CatalogueError::Invalid("duplicate scent id".into()));
        }
        for family in Family::ALL {
            let n = entries.iter().filter(|e| e.family == family).count();
            if n != PER_FAMILY {
                return Err(CatalogueError::Invalid(format!(
                    "family {family} has {n} entries, expected {PER_FAMILY}"
                )));
            }
        }
        for e in &entries {
            let desc = e.catalogue_description.to_lowercase();
            let prefix = format!("the scent of {} ", e.name.to_lowercase());
            if !desc.starts_with(&prefix) || !desc.contains("comes from its essential oil") {
                return Err(CatalogueError::Invalid(format!(
                    "description of scent {} ({}) does not follow the catalogue template",
                    e.id, e.name
                )));
            }
        }
        Ok(Catalogue { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogueError> {
        let entries: Vec<ScentEntry> = serde_json::from_slice(&fs::read(path)?)?;
        Catalogue::new(entries)
    }

    /// The catalogue shipped with the crate.
    pub fn bundled() -> Self {
        let entries: Vec<ScentEntry> =
            serde_json::from_str(include_str!("../data/catalogue.json")).expect("bundled catalogue parses");
        Catalogue::new(entries).expect("bundled catalogue is valid")
    }

    pub fn entries(&self) -> &[ScentEntry] {
        &self.entries
    }

    pub fn get(&self, id: ScentId) -> &ScentEntry {
        &self.entries[id.index()]
    }

    pub fn name(&self, id: ScentId) -> &str {
        &self.get(id).name
    }

    pub fn family(&self, id: ScentId) -> Family {
        self.get(id).family
    }

    pub fn by_name(&self, name: &str) -> Option<&ScentEntry> {
        self.entries.iter().find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn family_members(&self, family: Family) -> Vec<ScentId> {
        self.entries.iter().filter(|e| e.family == family).map(|e| e.id).collect()
    }

    pub fn family_histogram(&self) -> BTreeMap<Family, usize> {
        let mut h = BTreeMap::new();
        for e in &self.entries {
            *h.entry(e.family).or_insert(0) += 1;
        }
        h
    }
}

/// The pre-encoded catalogue: one unit vector per scent id `1..=20`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    model_id: String,
    dims: usize,
    entries: BTreeMap<ScentId, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(
        model_id: impl Into<String>,
        entries: BTreeMap<ScentId, EmbeddingVector>,
    ) -> Result<Self, CatalogueError> {
        if entries.len() != CATALOGUE_SIZE || !ScentId::all().all(|id| entries.contains_key(&id)) {
            return Err(CatalogueError::InvalidStore(format!(
                "store must hold exactly ids 1..={CATALOGUE_SIZE}, found {}",
                entries.len()
            )));
        }
        let dims = entries.values().next().map(|v| v.dims()).unwrap_or(0);
        for (id, v) in &entries {
            if v.dims() != dims {
                return Err(CatalogueError::InvalidStore(format!(
                    "scent {id} has {} dims, expected {dims}",
                    v.dims()
                )));
            }
            if !v.is_unit(UNIT_NORM_TOLERANCE) {
                return Err(CatalogueError::InvalidStore(format!(
                    "scent {id} is not unit-norm (norm {})",
                    v.norm()
                )));
            }
        }
        Ok(EmbeddingStore {
            model_id: model_id.into(),
            dims,
            entries,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, id: ScentId) -> &EmbeddingVector {
        &self.entries[&id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ScentId, &EmbeddingVector)> {
        self.entries.iter().map(|(id, v)| (*id, v))
    }

    pub fn retrieve_best(
        &self,
        query: &EmbeddingVector,
        exclude: &BTreeSet<ScentId>,
    ) -> Result<ScoredMatch, VecError> {
        retrieve_best(query, self.iter(), exclude)
    }

    pub fn retrieve_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: &BTreeSet<ScentId>,
    ) -> Result<Vec<ScoredMatch>, VecError> {
        retrieve_top_k(query, self.iter(), k, exclude)
    }

    fn body(&self) -> StoreBody {
        StoreBody {
            format_version: STORE_FORMAT_VERSION,
            model_id: self.model_id.clone(),
            dims: self.dims,
            entries: self
                .entries
                .iter()
                .map(|(id, v)| StoreEntry {
                    scent_id: *id,
                    vector: v.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    /// SHA-256 over the canonical serialization of the store body.
    pub fn content_hash(&self) -> String {
        self.body().digest()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CatalogueError> {
        let body = self.body();
        let file = StoreFile {
            sha256: body.digest(),
            body,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogueError> {
        let raw = fs::read(path)?;
        let file: StoreFile = serde_json::from_slice(&raw).map_err(|e| {
            if e.is_eof() {
                CatalogueError::Integrity(format!("store file is truncated ({e})"))
            } else {
                CatalogueError::Parse(e)
            }
        })?;
        if file.body.format_version != STORE_FORMAT_VERSION {
            return Err(CatalogueError::Version(file.body.format_version));
        }
        let digest = file.body.digest();
        if digest != file.sha256 {
            return Err(CatalogueError::Integrity(format!(
                "checksum mismatch: recorded {}, computed {digest}",
                file.sha256
            )));
        }
        let mut entries = BTreeMap::new();
        for e in file.body.entries {
            if e.vector.len() != file.body.dims {
                return Err(CatalogueError::InvalidStore(format!(
                    "scent {} has {} dims, header says {}",
                    e.scent_id,
                    e.vector.len(),
                    file.body.dims
                )));
            }
            if entries.insert(e.scent_id, EmbeddingVector::new(e.vector)?).is_some() {
                return Err(CatalogueError::InvalidStore(format!("duplicate scent {}", e.scent_id)));
            }
        }
        EmbeddingStore::new(file.body.model_id, entries)
    }
}

#[derive(Serialize, Deserialize)]
struct StoreEntry {
    scent_id: ScentId,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoreBody {
    format_version: u32,
    model_id: String,
    dims: usize,
    entries: Vec<StoreEntry>,
}

impl StoreBody {
    fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("store body serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    sha256: String,
    #[serde(flatten)]
    body: StoreBody,
}

/// Encodes every catalogue description and normalizes the result.
pub fn build_embedding_store(
    catalogue: &Catalogue,
    encoder: &dyn Encoder,
) -> Result<EmbeddingStore, CatalogueError> {
    let texts: Vec<String> = catalogue
        .entries()
        .iter()
        .map(|e| e.catalogue_description.clone())
        .collect();
    let vectors = encode_batch(encoder, &texts, DEFAULT_MAX_IN_FLIGHT).map_err(|e| match e {
        ProviderError::Batch { index, source } => CatalogueError::Encode {
            scent_id: catalogue.entries()[index].id,
            source: *source,
        },
        other => CatalogueError::Encode {
            scent_id: catalogue.entries()[0].id,
            source: other,
        },
    })?;
    let mut entries = BTreeMap::new();
    for (entry, v) in catalogue.entries().iter().zip(vectors) {
        entries.insert(entry.id, normalize(&v)?);
    }
    EmbeddingStore::new(encoder.model_id(), entries)
}
