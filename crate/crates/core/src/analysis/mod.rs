//! Embedding-space and linguistic analyses of description corpora.

pub mod export;
pub mod terms;
pub mod tsne;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalogue::{Catalogue, Family};
use crate::providers::{encode_batch, Encoder, ProviderError};
use crate::vecmath::{centroid, EmbeddingVector, ScentId, VecError};

pub use export::{export_frequencies, export_scatter};
pub use terms::{term_frequencies, tokenize, Stoplist, TermFrequencyTable};
pub use tsne::{tsne_2d, TsneConfig, TsneResult};

/// Source tag for per-scent human centroids.
pub const HUMAN_CENTROID: &str = "human-centroid";
/// Source tag for human descriptions in a corpus.
pub const HUMAN: &str = "human";

const ENCODE_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("scent {0} has no descriptions")]
    EmptyGroup(ScentId),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Vector(#[from] VecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One description. `source` is `"human"` or a model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub source: String,
    pub scent_id: ScentId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionCorpus {
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default)]
    pub note: Option<String>,
    pub entries: Vec<CorpusEntry>,
}

impl DescriptionCorpus {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Small synthetic corpus shipped for demos and tests.
    pub fn bundled_example() -> Self {
        serde_json::from_str(include_str!("../../data/example_corpus.json")).expect("bundled corpus parses")
    }

    pub fn texts(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.text.as_str()).collect()
    }

    /// Texts from one source grouped by scent.
    pub fn groups(&self, source: &str) -> BTreeMap<ScentId, Vec<String>> {
        let mut out: BTreeMap<ScentId, Vec<String>> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.source == source) {
            out.entry(e.scent_id).or_default().push(e.text.clone());
        }
        out
    }

    pub fn human_groups(&self) -> BTreeMap<ScentId, Vec<String>> {
        self.groups(HUMAN)
    }

    /// Non-human sources, sorted.
    pub fn model_sources(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.source != HUMAN)
            .map(|e| e.source.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Per-scent centroid of the encoded descriptions. Centroids are not
/// re-normalized.
pub fn human_centroids(
    groups: &BTreeMap<ScentId, Vec<String>>,
    encoder: &dyn Encoder,
) -> Result<BTreeMap<ScentId, EmbeddingVector>, AnalysisError> {
    let mut out = BTreeMap::new();
    for (id, texts) in groups {
        if texts.is_empty() {
            return Err(AnalysisError::EmptyGroup(*id));
        }
        let vectors = encode_batch(encoder, texts, ENCODE_IN_FLIGHT)?;
        out.insert(*id, centroid(&vectors)?);
    }
    Ok(out)
}

/// How model descriptions enter the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelGrouping {
    /// One point per description.
    #[default]
    PerDescription,
    /// One centroid per (model, scent).
    PerModelScent,
}

/// A point headed for the projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledVector {
    pub label: String,
    pub source: String,
    pub group: ScentId,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub label: String,
    pub source: String,
    pub group: ScentId,
    pub family: Family,
    pub x: f64,
    pub y: f64,
}

fn label(catalogue: &Catalogue, id: ScentId, source: &str) -> String {
    format!("{} ({source})", catalogue.name(id))
}

/// Human centroids followed by model points, in scent order.
pub fn corpus_points(
    corpus: &DescriptionCorpus,
    catalogue: &Catalogue,
    encoder: &dyn Encoder,
    grouping: ModelGrouping,
) -> Result<Vec<LabelledVector>, AnalysisError> {
    let mut points = Vec::new();
    for (id, v) in human_centroids(&corpus.human_groups(), encoder)? {
        points.push(LabelledVector {
            label: label(catalogue, id, HUMAN_CENTROID),
            source: HUMAN_CENTROID.to_string(),
            group: id,
            vector: v,
        });
    }
    for model in corpus.model_sources() {
        for (id, texts) in corpus.groups(&model) {
            let vectors = encode_batch(encoder, &texts, ENCODE_IN_FLIGHT)?;
            match grouping {
                ModelGrouping::PerDescription => {
                    points.extend(vectors.into_iter().map(|v| LabelledVector {
                        label: label(catalogue, id, &model),
                        source: model.clone(),
                        group: id,
                        vector: v,
                    }))
                }
                ModelGrouping::PerModelScent => points.push(LabelledVector {
                    label: label(catalogue, id, &model),
                    source: model.clone(),
                    group: id,
                    vector: centroid(&vectors)?,
                }),
            }
        }
    }
    Ok(points)
}

pub fn project(
    points: &[LabelledVector],
    catalogue: &Catalogue,
    config: &TsneConfig,
) -> Result<(Vec<ProjectedPoint>, TsneResult), AnalysisError> {
    let raw: Vec<Vec<f64>> = points.iter().map(|p| p.vector.as_slice().to_vec()).collect();
    let result = tsne_2d(&raw, config)?;
    let projected = points
        .iter()
        .zip(&result.coords)
        .map(|(p, [x, y])| ProjectedPoint {
            label: p.label.clone(),
            source: p.source.clone(),
            group: p.group,
            family: catalogue.family(p.group),
            x: *x,
            y: *y,
        })
        .collect();
    Ok((projected, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{encode_text, MockEncoder};

    fn id(n: u32) -> ScentId {
        ScentId::new(n).unwrap()
    }

    #[test]
    fn singleton_and_identical_groups() {
        let enc = MockEncoder::new(16, 7);
        let mut groups = BTreeMap::new();
        groups.insert(id(1), vec!["green and herbal".to_string()]);
        groups.insert(id(2), vec!["sharp mint".to_string(), "sharp mint".to_string()]);
        let c = human_centroids(&groups, &enc).unwrap();
        assert_eq!(c[&id(1)], encode_text(&enc, "green and herbal").unwrap());
        let shared = encode_text(&enc, "sharp mint").unwrap();
        for (a, b) in c[&id(2)].as_slice().iter().zip(shared.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn centroid_is_direct_average() {
        let enc = MockEncoder::new(32, 11);
        let texts = ["sweet vanilla", "warm and creamy", "like a cake"].map(String::from).to_vec();
        let mut groups = BTreeMap::new();
        groups.insert(id(9), texts.clone());
        let c = human_centroids(&groups, &enc).unwrap();
        let vs: Vec<Vec<f64>> = texts.iter().map(|t| encode_text(&enc, t).unwrap().into_inner()).collect();
        for (k, got) in c[&id(9)].as_slice().iter().enumerate() {
            let want = (vs[0][k] + vs[1][k] + vs[2][k]) / 3.0;
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_group_rejected() {
        let mut groups = BTreeMap::new();
        groups.insert(id(3), Vec::new());
        let err = human_centroids(&groups, &MockEncoder::new(8, 1)).unwrap_err();
        assert!(matches!(err, AnalysisError::EmptyGroup(s) if s == id(3)));
    }

    #[test]
    fn bundled_corpus_groupings() {
        let corpus = DescriptionCorpus::bundled_example();
        assert!(corpus.synthetic);
        let cat = Catalogue::bundled();
        let enc = MockEncoder::new(24, 3);
        let humans = corpus.human_groups().len();
        let models = corpus.model_sources();
        assert!(!models.is_empty());
        let per_desc = corpus_points(&corpus, &cat, &enc, ModelGrouping::PerDescription).unwrap();
        let model_entries = corpus.entries.iter().filter(|e| e.source != HUMAN).count();
        assert_eq!(per_desc.len(), humans + model_entries);
        let per_scent = corpus_points(&corpus, &cat, &enc, ModelGrouping::PerModelScent).unwrap();
        let pairs: usize = models.iter().map(|m| corpus.groups(m).len()).sum();
        assert_eq!(per_scent.len(), humans + pairs);
        assert!(per_scent.iter().take(humans).all(|p| p.source == HUMAN_CENTROID));
    }

    #[test]
    fn projection_keeps_labels() {
        let corpus = DescriptionCorpus::bundled_example();
        let cat = Catalogue::bundled();
        let enc = MockEncoder::new(24, 3);
        let pts = corpus_points(&corpus, &cat, &enc, ModelGrouping::PerModelScent).unwrap();
        let cfg = TsneConfig {
            iterations: 300,
            ..TsneConfig::default()
        };
        let (proj, res) = project(&pts, &cat, &cfg).unwrap();
        assert_eq!(proj.len(), pts.len());
        assert_eq!(res.coords.len(), pts.len());
        for (p, l) in proj.iter().zip(&pts) {
            assert_eq!(p.label, l.label);
            assert_eq!(p.family, cat.family(l.group));
            assert!(p.x.is_finite() && p.y.is_finite());
        }
    }
}
