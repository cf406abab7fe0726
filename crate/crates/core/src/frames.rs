//! Sentence-analyzer output: extracted case frames with references and
//! extraction patterns, plus hand-coded answer keys.
//!
//! Corpus files are JSON Lines, one document per line; keys files likewise.
//! Coreference merging happens upstream: a frame arrives with every
//! reference to its object already attached.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{OutputSchema, SlotKind};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("document {doc}: {msg}")]
    BadDocument { doc: String, msg: String },
}

/// Syntactic position of an extraction pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    SubjActive,
    SubjPassive,
    Obj,
    Pp,
    Keyword,
}

impl PatternKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::SubjActive => "subj-active",
            PatternKind::SubjPassive => "subj-passive",
            PatternKind::Obj => "obj",
            PatternKind::Pp => "pp",
            PatternKind::Keyword => "keyword",
        }
    }
}

/// Trigger word(s) plus a syntactic pattern relative to them.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtractionPattern {
    pub kind: PatternKind,
    pub triggers: Vec<String>,
}

impl ExtractionPattern {
    pub fn new(kind: PatternKind, triggers: &[&str]) -> Self {
        ExtractionPattern {
            kind,
            triggers: triggers.iter().map(|t| t.to_lowercase()).collect(),
        }
    }
}

/// One mention of an object in the text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub sentence: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    pub pattern: ExtractionPattern,
    /// Token span; accepted in the file format but unused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl Reference {
    pub fn new(sentence: usize, pattern: ExtractionPattern) -> Self {
        Reference {
            sentence,
            phrase: None,
            pattern,
            span: None,
        }
    }

    pub fn with_phrase(mut self, phrase: &str) -> Self {
        self.phrase = Some(phrase.to_string());
        self
    }
}

/// A case frame: typed slots plus the references that extracted it.
///
/// Pointer slots are empty at ingestion; discourse processing fills them.
/// Synthesized and inferred objects created during processing may carry no
/// references of their own.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedObject {
    pub id: String,
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub closed: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub open: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pointers: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<Reference>,
}

impl ExtractedObject {
    pub fn new(id: &str, type_name: &str) -> Self {
        ExtractedObject {
            id: id.to_string(),
            type_name: type_name.to_string(),
            closed: BTreeMap::new(),
            open: BTreeMap::new(),
            pointers: BTreeMap::new(),
            references: Vec::new(),
        }
    }

    /// Value of a non-pointer slot, if filled.
    pub fn data_value(&self, slot: &str) -> Option<&str> {
        self.closed
            .get(slot)
            .or_else(|| self.open.get(slot))
            .map(String::as_str)
    }

    pub fn pointer_fill(&self, slot: &str) -> &[String] {
        self.pointers.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_data(&self) -> bool {
        !self.closed.is_empty() || !self.open.is_empty()
    }
}

/// All objects extracted from one text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentInput {
    pub doc_id: String,
    pub objects: Vec<ExtractedObject>,
}

/// Target object in an answer key: an extracted object minus references,
/// with pointer slots filled by key-object ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyObject {
    pub id: String,
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub closed: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub open: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pointers: BTreeMap<String, Vec<String>>,
}

impl KeyObject {
    pub fn new(id: &str, type_name: &str) -> Self {
        KeyObject {
            id: id.to_string(),
            type_name: type_name.to_string(),
            closed: BTreeMap::new(),
            open: BTreeMap::new(),
            pointers: BTreeMap::new(),
        }
    }

    pub fn data_value(&self, slot: &str) -> Option<&str> {
        self.closed
            .get(slot)
            .or_else(|| self.open.get(slot))
            .map(String::as_str)
    }

    pub fn pointer_fill(&self, slot: &str) -> &[String] {
        self.pointers.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Hand-coded target output for one document. The pointer graph may
/// contain cycles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub doc_id: String,
    pub objects: Vec<KeyObject>,
}

/// Result of corpus ingestion: bad documents are skipped with a warning,
/// not fatal.
#[derive(Debug)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Parsed {
            items: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Normalization applied to every open-slot string comparison: case-folded,
/// whitespace-trimmed exact match.
pub fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Parse a JSON Lines corpus of document inputs, validating each against
/// the schema.
pub fn parse_documents(text: &str, schema: &OutputSchema) -> Parsed<DocumentInput> {
    let mut out = Parsed::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: DocumentInput = match serde_json::from_str(line) {
            Ok(d) => d,
            Err(e) => {
                out.warnings
                    .push(format!("line {}: skipped, bad JSON: {e}", lineno + 1));
                continue;
            }
        };
        match validate_document(&mut doc, schema) {
            Ok(()) => out.items.push(doc),
            Err(e) => out.warnings.push(format!("line {}: skipped: {e}", lineno + 1)),
        }
    }
    out
}

fn validate_document(doc: &mut DocumentInput, schema: &OutputSchema) -> Result<(), FrameError> {
    let bad = |msg: String| FrameError::BadDocument {
        doc: doc.doc_id.clone(),
        msg,
    };
    let mut ids = BTreeSet::new();
    for obj in &mut doc.objects {
        if !ids.insert(obj.id.clone()) {
            return Err(bad(format!("duplicate object id {}", obj.id)));
        }
        let ty = schema
            .type_def(&obj.type_name)
            .ok_or_else(|| bad(format!("object {}: bad type name {}", obj.id, obj.type_name)))?;
        if ty.synthesized {
            return Err(bad(format!(
                "object {}: synthesized type {} cannot be extracted",
                obj.id, obj.type_name
            )));
        }
        if obj.references.is_empty() {
            return Err(bad(format!("object {}: empty references", obj.id)));
        }
        if !obj.pointers.values().all(|v| v.is_empty()) {
            return Err(bad(format!(
                "object {}: pointer slots must be empty at ingestion",
                obj.id
            )));
        }
        obj.pointers.clear();
        validate_data_slots(&obj.id, &obj.closed, &obj.open, ty, &bad)?;
        for r in &mut obj.references {
            for t in &mut r.pattern.triggers {
                *t = t.to_lowercase();
            }
            if r.pattern.triggers.is_empty() {
                return Err(bad(format!("object {}: pattern without triggers", obj.id)));
            }
            if r.pattern.kind == PatternKind::Keyword && r.pattern.triggers.len() != 1 {
                return Err(bad(format!(
                    "object {}: keyword pattern must have exactly one trigger",
                    obj.id
                )));
            }
        }
    }
    Ok(())
}

fn validate_data_slots(
    id: &str,
    closed: &BTreeMap<String, String>,
    open: &BTreeMap<String, String>,
    ty: &crate::schema::ObjectTypeDef,
    bad: &dyn Fn(String) -> FrameError,
) -> Result<(), FrameError> {
    for (slot, value) in closed {
        let def = ty
            .slot(slot)
            .ok_or_else(|| bad(format!("object {id}: unknown slot {slot}")))?;
        match &def.kind {
            SlotKind::Closed { .. } => {
                if !def.accepts(value) {
                    return Err(bad(format!(
                        "object {id}: slot {slot}: value {value:?} outside valueSet"
                    )));
                }
            }
            _ => return Err(bad(format!("object {id}: slot {slot} is not closed"))),
        }
    }
    for slot in open.keys() {
        let def = ty
            .slot(slot)
            .ok_or_else(|| bad(format!("object {id}: unknown slot {slot}")))?;
        if !matches!(def.kind, SlotKind::Open) {
            return Err(bad(format!("object {id}: slot {slot} is not open")));
        }
    }
    Ok(())
}

/// Parse a JSON Lines file of answer keys. A dangling pointer id is fatal
/// for that key: the key is dropped and reported.
pub fn parse_keys(text: &str, schema: &OutputSchema) -> Parsed<AnswerKey> {
    let mut out = Parsed::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let key: AnswerKey = match serde_json::from_str(line) {
            Ok(k) => k,
            Err(e) => {
                out.warnings
                    .push(format!("line {}: skipped, bad JSON: {e}", lineno + 1));
                continue;
            }
        };
        match validate_key(&key, schema) {
            Ok(()) => out.items.push(key),
            Err(e) => out.warnings.push(format!("line {}: fatal: {e}", lineno + 1)),
        }
    }
    out
}

fn validate_key(key: &AnswerKey, schema: &OutputSchema) -> Result<(), FrameError> {
    let bad = |msg: String| FrameError::BadDocument {
        doc: key.doc_id.clone(),
        msg,
    };
    let mut ids = BTreeSet::new();
    for obj in &key.objects {
        if !ids.insert(obj.id.as_str()) {
            return Err(bad(format!("duplicate key object id {}", obj.id)));
        }
    }
    for obj in &key.objects {
        let ty = schema
            .type_def(&obj.type_name)
            .ok_or_else(|| bad(format!("object {}: bad type name {}", obj.id, obj.type_name)))?;
        validate_data_slots(&obj.id, &obj.closed, &obj.open, ty, &bad)?;
        for (slot, fills) in &obj.pointers {
            let def = ty
                .slot(slot)
                .ok_or_else(|| bad(format!("object {}: unknown slot {slot}", obj.id)))?;
            if !def.kind.is_pointer() {
                return Err(bad(format!("object {}: slot {slot} is not a pointer", obj.id)));
            }
            for f in fills {
                if !ids.contains(f.as_str()) {
                    return Err(bad(format!(
                        "object {}: slot {slot}: undefined object id {f}",
                        obj.id
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Canonical one-line serialization (inverse of corpus parsing).
pub fn document_to_line(doc: &DocumentInput) -> String {
    serde_json::to_string(doc).expect("document serializes")
}

pub fn key_to_line(key: &AnswerKey) -> String {
    serde_json::to_string(key).expect("key serializes")
}
