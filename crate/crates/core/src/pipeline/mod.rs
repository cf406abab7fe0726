//! Run-time orchestration of the six discourse stages and the staged
//! bootstrap that trains them.

pub mod stages;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Instance;
use crate::frames::{DocumentInput, ExtractedObject};
use crate::id3::{Confidence, DecisionTree, Grid, Label};
use crate::real::Real;
use crate::schema::{OutputSchema, TreeSpec};

pub use stages::{GraphState, TreeSource};
pub use train::{train, train_with_dump, TrainOutcome, TreeReport};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no usable training documents")]
    NoDocuments,
    #[error("model format version {found} unsupported (expected {MODEL_FORMAT_VERSION})")]
    BadFormatVersion { found: u32 },
    #[error("model was trained against a different schema (digest {model} vs {schema})")]
    DigestMismatch { model: String, schema: String },
    #[error("model file error: {0}")]
    BadModel(#[from] serde_json::Error),
}

/// Run configuration: one seed drives every random choice through named
/// sub-streams, so a fixed seed makes the full run deterministic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig<R> {
    pub seed: u64,
    pub folds: usize,
    pub grid: Grid,
    pub default_beta: R,
    /// Per-tree β overrides keyed by tree key; a trailing `*` matches a
    /// prefix (e.g. `filter:*`).
    pub beta_overrides: BTreeMap<String, R>,
}

impl<R: Real> Default for TrainConfig<R> {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            folds: 10,
            grid: Grid::default(),
            default_beta: R::one(),
            beta_overrides: BTreeMap::new(),
        }
    }
}

impl<R: Real> TrainConfig<R> {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn beta_for(&self, key: &str) -> R {
        if let Some(b) = self.beta_overrides.get(key) {
            return *b;
        }
        // Longest matching glob prefix wins.
        let mut best: Option<(usize, R)> = None;
        for (pat, b) in &self.beta_overrides {
            if let Some(prefix) = pat.strip_suffix('*') {
                if key.starts_with(prefix) && best.map_or(true, |(l, _)| prefix.len() > l) {
                    best = Some((prefix.len(), *b));
                }
            }
        }
        best.map(|(_, b)| b).unwrap_or(self.default_beta)
    }
}

/// A tree slot in the model: either trained or an explicit marker that no
/// instances were seen, which classifies to the stage's no-action default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum TrainedTree<R> {
    Untrained,
    Trained { tree: DecisionTree<R> },
}

/// Trained model: one entry per enumerated tree spec.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model<R> {
    pub format_version: u32,
    pub schema_digest: String,
    pub config: TrainConfig<R>,
    pub trees: BTreeMap<String, TrainedTree<R>>,
}

impl<R: Real> Model<R> {
    pub fn tree(&self, key: &str) -> Option<&DecisionTree<R>> {
        match self.trees.get(key) {
            Some(TrainedTree::Trained { tree }) => Some(tree),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Model<R>, PipelineError> {
        let model: Model<R> = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(PipelineError::BadFormatVersion {
                found: model.format_version,
            });
        }
        Ok(model)
    }

    /// Applying a model to a different schema than it was trained on is a
    /// fatal error.
    pub fn check_schema(&self, schema: &OutputSchema) -> Result<(), PipelineError> {
        let digest = schema.digest();
        if digest != self.schema_digest {
            return Err(PipelineError::DigestMismatch {
                model: self.schema_digest.clone(),
                schema: digest,
            });
        }
        Ok(())
    }
}

impl<R: Real> TreeSource for Model<R> {
    fn classify(&self, spec: &TreeSpec, instance: &Instance) -> Option<(Label, Confidence)> {
        self.tree(&spec.key()).map(|t| t.classify(instance))
    }
}

/// Post-discourse output: the surviving objects with pointer fills, plus
/// the root object when the schema declares one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputGraph {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    pub objects: Vec<ExtractedObject>,
}

impl OutputGraph {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn from_line(line: &str) -> Result<OutputGraph, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Per-stage snapshot emitted under `--trace`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub doc_id: String,
    pub stage: u8,
    pub name: String,
    pub objects: Vec<ExtractedObject>,
}

/// Result of running the pipeline over one document.
#[derive(Clone, Debug)]
pub struct Applied {
    pub graph: OutputGraph,
    pub snapshots: Vec<StageSnapshot>,
    pub warnings: Vec<String>,
}

/// Run all six stages over one document. Deterministic: the same model and
/// document always produce the identical graph.
pub fn apply<R: Real>(
    schema: &OutputSchema,
    model: &Model<R>,
    doc: &DocumentInput,
    trace: bool,
) -> Applied {
    let mut state = GraphState::new(&doc.doc_id, doc.objects.clone());
    let mut snapshots = Vec::new();
    let snap = |state: &GraphState, stage: u8, name: &str, out: &mut Vec<StageSnapshot>| {
        if trace {
            out.push(StageSnapshot {
                doc_id: state.doc_id.clone(),
                stage,
                name: name.to_string(),
                objects: state.objects.clone(),
            });
        }
    };

    stages::run_filter(schema, &mut state, model);
    snap(&state, 1, "filter", &mut snapshots);
    let warnings = stages::run_merge(schema, &mut state, model);
    snap(&state, 2, "merge", &mut snapshots);
    stages::run_link(schema, &mut state, model);
    snap(&state, 3, "link", &mut snapshots);
    stages::run_split(schema, &mut state, model);
    snap(&state, 4, "split", &mut snapshots);
    stages::run_infer_objects(schema, &mut state, model);
    snap(&state, 5, "infer-objects", &mut snapshots);
    stages::run_infer_slots(schema, &mut state, model);
    snap(&state, 6, "infer-slots", &mut snapshots);

    let root = schema
        .root
        .as_ref()
        .and_then(|r| state.objects.iter().find(|o| &o.type_name == r))
        .map(|o| o.id.clone());
    Applied {
        graph: OutputGraph {
            doc_id: state.doc_id,
            root,
            objects: state.objects,
        },
        snapshots,
        warnings,
    }
}
