//! Language models as stand-in participants for the description task.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{LabelledVector, HUMAN_CENTROID};
use crate::catalogue::{Catalogue, EmbeddingStore, ScentEntry};
use crate::providers::{encode_text, generate_description, Describer, DescriptionRequest, Encoder, ProviderError};
use crate::vecmath::{cosine_similarity, EmbeddingVector, ScentId, VecError};

pub const DEFAULT_IN_FLIGHT: usize = 4;

const PROMPT_HEAD: &str = "\
You are an average person without prior specialized training in scent description. Based on the given information, describe how the scent smells without mentioning its name.

Instructions:
    - Read the provided information about the scent carefully.
    - Use common terms in daily language to describe the scent.
    - Avoid technical jargon or overly scientific terms.
    - Avoid using the name of the scent or relevant object that produces that scent in your description.
    - Your description should be relatable, allowing an average person to imagine the scent.
    - Do not mention the name of the scent in your description.
    - Your description should be 1-3 sentences long.

    Example
";

const PROMPT_TAIL: &str = "    Description: \"The scent is .....\"\n";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("generating a description for scent {scent_id}: {source}")]
    Generation { scent_id: ScentId, source: ProviderError },
    #[error("encoding the description of scent {scent_id}: {source}")]
    Encoding { scent_id: ScentId, source: ProviderError },
    #[error("retrieval for scent {scent_id}: {source}")]
    Retrieval { scent_id: ScentId, source: VecError },
    #[error("store was built with {store} but the encoder is {encoder}")]
    EncoderMismatch { store: String, encoder: String },
    #[error("guesses_allowed must be at least 1")]
    NoGuesses,
}

/// The instruction block with the scent's catalogue description in the
/// Information slot.
pub fn build_prompt(entry: &ScentEntry) -> String {
    format!(
        "{PROMPT_HEAD}    Information: \"{}\"\n{PROMPT_TAIL}",
        entry.catalogue_description
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// A scent counts as solved if it is among this many top matches.
    pub guesses_allowed: usize,
    pub max_in_flight: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            guesses_allowed: 1,
            max_in_flight: DEFAULT_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEntry {
    pub scent_id: ScentId,
    pub scent_name: String,
    pub description: String,
    pub guessed_id: ScentId,
    pub guessed_name: String,
    pub score: f64,
    /// Top matches in rank order; length `guesses_allowed`.
    pub ranked: Vec<ScentId>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub model_id: String,
    pub encoder_model_id: String,
    pub temperature: f64,
    pub guesses_allowed: usize,
    pub entries: Vec<SimEntry>,
    pub success_rate: f64,
    pub vectors: BTreeMap<ScentId, EmbeddingVector>,
}

fn describe_all(
    catalogue: &Catalogue,
    describer: &dyn Describer,
    max_in_flight: usize,
) -> Result<Vec<String>, SimError> {
    let entries = catalogue.entries();
    let prompts: Vec<String> = entries.iter().map(build_prompt).collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, ProviderError>>>> =
        Mutex::new((0..entries.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..max_in_flight.max(1).min(entries.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= entries.len() {
                    break;
                }
                let req = DescriptionRequest {
                    scent_id: entries[i].id,
                    prompt: &prompts[i],
                };
                let r = generate_description(describer, &req);
                slots.lock().expect("description slot lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("description slot lock")
        .into_iter()
        .zip(entries)
        .map(|(r, e)| {
            r.expect("every scent visited")
                .map_err(|source| SimError::Generation { scent_id: e.id, source })
        })
        .collect()
}

/// Runs the description task with a model describing every catalogue
/// scent once. Results are ordered by scent id.
pub fn run_sim_task1(
    catalogue: &Catalogue,
    store: &EmbeddingStore,
    describer: &dyn Describer,
    encoder: &dyn Encoder,
    config: &SimConfig,
) -> Result<SimReport, SimError> {
    if config.guesses_allowed == 0 {
        return Err(SimError::NoGuesses);
    }
    if store.model_id() != encoder.model_id() {
        return Err(SimError::EncoderMismatch {
            store: store.model_id().to_string(),
            encoder: encoder.model_id().to_string(),
        });
    }
    let descriptions = describe_all(catalogue, describer, config.max_in_flight)?;
    let mut entries = Vec::with_capacity(descriptions.len());
    let mut vectors = BTreeMap::new();
    for (entry, description) in catalogue.entries().iter().zip(descriptions) {
        let scent_id = entry.id;
        let v = encode_text(encoder, &description).map_err(|source| SimError::Encoding { scent_id, source })?;
        let top = store
            .retrieve_top_k(&v, config.guesses_allowed, &BTreeSet::new())
            .map_err(|source| SimError::Retrieval { scent_id, source })?;
        let best = top[0];
        let ranked: Vec<ScentId> = top.iter().map(|m| m.scent_id).collect();
        entries.push(SimEntry {
            scent_id,
            scent_name: entry.name.clone(),
            description,
            guessed_id: best.scent_id,
            guessed_name: catalogue.name(best.scent_id).to_string(),
            score: best.score,
            correct: ranked.contains(&scent_id),
            ranked,
        });
        vectors.insert(scent_id, v);
    }
    let solved = entries.iter().filter(|e| e.correct).count();
    Ok(SimReport {
        model_id: describer.model_id().to_string(),
        encoder_model_id: encoder.model_id().to_string(),
        temperature: describer.temperature(),
        guesses_allowed: config.guesses_allowed,
        success_rate: solved as f64 / entries.len() as f64,
        entries,
        vectors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub scent_id: ScentId,
    pub scent_name: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub model_id: String,
    /// Scents present in both the report and the centroid map.
    pub rows: Vec<AlignmentRow>,
    /// Human centroids then model vectors, ready for projection.
    pub points: Vec<LabelledVector>,
}

pub fn alignment_report(
    sim: &SimReport,
    human_centroids: &BTreeMap<ScentId, EmbeddingVector>,
    catalogue: &Catalogue,
) -> Result<AlignmentReport, VecError> {
    let mut rows = Vec::new();
    for (id, v) in &sim.vectors {
        if let Some(c) = human_centroids.get(id) {
            rows.push(AlignmentRow {
                scent_id: *id,
                scent_name: catalogue.name(*id).to_string(),
                cosine: cosine_similarity(v, c)?,
            });
        }
    }
    let tagged = |id: &ScentId, v: &EmbeddingVector, source: &str| LabelledVector {
        label: format!("{} ({source})", catalogue.name(*id)),
        source: source.to_string(),
        group: *id,
        vector: v.clone(),
    };
    let points = human_centroids
        .iter()
        .map(|(id, v)| tagged(id, v, HUMAN_CENTROID))
        .chain(sim.vectors.iter().map(|(id, v)| tagged(id, v, &sim.model_id)))
        .collect();
    Ok(AlignmentReport {
        model_id: sim.model_id.clone(),
        rows,
        points,
    })
}
