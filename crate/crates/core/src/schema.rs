//! Output-structure definitions: parsing, validation, and the enumeration
//! of the decision trees a domain requires.
//!
//! The schema file is UTF-8 JSON:
//!
//! ```json
//! {"root": "template", "types": [
//!   {"name": "process", "slots": [
//!     {"name": "ptype", "kind": "closed", "values": ["TSOP", "SOJ"], "key": true},
//!     {"name": "device", "kind": "pointer", "targets": ["device"]}]}]}
//! ```
//!
//! Absent fields mean false/empty. Each object type declares exactly one
//! `key` slot, used to match extracted objects against answer keys.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sentinel value accepted in any closed slot (inferred parents use it).
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("type {ty}: no key slot")]
    NoKeySlot { ty: String },
    #[error("type {ty}: multiple key slots ({a}, {b})")]
    MultipleKeySlots { ty: String, a: String, b: String },
    #[error("type {ty}: duplicate slot name {slot}")]
    DuplicateSlot { ty: String, slot: String },
    #[error("duplicate type name {ty}")]
    DuplicateType { ty: String },
    #[error("type {ty} slot {slot}: dangling target {target}")]
    DanglingTarget { ty: String, slot: String, target: String },
    #[error("type {ty} slot {slot}: empty valueSet")]
    EmptyValueSet { ty: String, slot: String },
    #[error("type {ty} slot {slot}: only closed slots may be inferable")]
    BadInferable { ty: String, slot: String },
    #[error("type {ty} slot {slot}: back_pointer requires a pointer slot")]
    BadBackPointer { ty: String, slot: String },
    #[error("type {ty} slot {slot}: single_role requires a pointer slot")]
    BadSingleRole { ty: String, slot: String },
    #[error("type {ty}: synthesized type requires an anchor pointer slot")]
    MissingAnchor { ty: String },
    #[error("type {ty}: anchor {slot} is not a pointer slot of this type")]
    BadAnchor { ty: String, slot: String },
    #[error("root type {ty} does not exist")]
    DanglingRoot { ty: String },
    #[error("root type {ty} has no pointer slot")]
    PointerlessRoot { ty: String },
}

/// What a slot holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotKind {
    /// Symbol from a fixed value set.
    Closed { values: Vec<String> },
    /// Free-form extracted string.
    Open,
    /// References to other objects.
    Pointer { targets: Vec<String>, multi: bool },
}

impl SlotKind {
    pub fn is_pointer(&self) -> bool {
        matches!(self, SlotKind::Pointer { .. })
    }
}

#[derive(Clone, Debug)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    pub key: bool,
    pub back_pointer: bool,
    pub single_role: Option<String>,
    pub inferable: bool,
}

impl SlotDef {
    pub fn targets(&self) -> &[String] {
        match &self.kind {
            SlotKind::Pointer { targets, .. } => targets,
            _ => &[],
        }
    }

    pub fn is_multi(&self) -> bool {
        matches!(self.kind, SlotKind::Pointer { multi: true, .. })
    }

    pub fn closed_values(&self) -> &[String] {
        match &self.kind {
            SlotKind::Closed { values } => values,
            _ => &[],
        }
    }

    /// True when `value` is legal for this closed slot.
    pub fn accepts(&self, value: &str) -> bool {
        value == UNKNOWN || self.closed_values().iter().any(|v| v == value)
    }
}

#[derive(Clone, Debug)]
pub struct ObjectTypeDef {
    pub name: String,
    pub synthesized: bool,
    pub anchor: Option<String>,
    pub slots: Vec<SlotDef>,
}

impl ObjectTypeDef {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn key_slot(&self) -> &SlotDef {
        self.slots
            .iter()
            .find(|s| s.key)
            .expect("validated schema has a key slot per type")
    }

    /// Forward pointer slots in declaration order.
    pub fn pointer_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots
            .iter()
            .filter(|s| s.kind.is_pointer() && !s.back_pointer)
    }

    pub fn data_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| !s.kind.is_pointer())
    }
}

/// Validated domain output structure.
#[derive(Clone, Debug)]
pub struct OutputSchema {
    pub root: Option<String>,
    pub types: Vec<ObjectTypeDef>,
}

impl OutputSchema {
    pub fn type_def(&self, name: &str) -> Option<&ObjectTypeDef> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn is_root(&self, name: &str) -> bool {
        self.root.as_deref() == Some(name)
    }

    /// Type names reachable as the target of some forward pointer slot.
    pub fn pointer_targets(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for ty in &self.types {
            for slot in ty.pointer_slots() {
                for t in slot.targets() {
                    out.insert(t.as_str());
                }
            }
        }
        out
    }

    /// Content hash of the canonical schema document.
    pub fn digest(&self) -> String {
        let file = SchemaFile::from_schema(self);
        let canon = serde_json::to_string(&file).expect("schema serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SchemaFile::from_schema(self)).expect("schema serializes")
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<String>,
    types: Vec<TypeFile>,
}

#[derive(Serialize, Deserialize)]
struct TypeFile {
    name: String,
    #[serde(default, skip_serializing_if = "is_false")]
    synthesized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<String>,
    slots: Vec<SlotFile>,
}

#[derive(Serialize, Deserialize)]
struct SlotFile {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    values: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    targets: Vec<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    multi: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    key: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    back_pointer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    single_role: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    inferable: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl SchemaFile {
    fn from_schema(schema: &OutputSchema) -> SchemaFile {
        SchemaFile {
            root: schema.root.clone(),
            types: schema
                .types
                .iter()
                .map(|t| TypeFile {
                    name: t.name.clone(),
                    synthesized: t.synthesized,
                    anchor: t.anchor.clone(),
                    slots: t
                        .slots
                        .iter()
                        .map(|s| {
                            let (kind, values, targets, multi) = match &s.kind {
                                SlotKind::Closed { values } => {
                                    ("closed", values.clone(), vec![], false)
                                }
                                SlotKind::Open => ("open", vec![], vec![], false),
                                SlotKind::Pointer { targets, multi } => {
                                    ("pointer", vec![], targets.clone(), *multi)
                                }
                            };
                            SlotFile {
                                name: s.name.clone(),
                                kind: kind.to_string(),
                                values,
                                targets,
                                multi,
                                key: s.key,
                                back_pointer: s.back_pointer,
                                single_role: s.single_role.clone(),
                                inferable: s.inferable,
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl Serialize for OutputSchema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SchemaFile::from_schema(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for OutputSchema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = SchemaFile::deserialize(deserializer)?;
        from_file(file).map_err(serde::de::Error::custom)
    }
}

/// Parse and validate a schema document.
pub fn parse_schema(text: &str) -> Result<OutputSchema, SchemaError> {
    let file: SchemaFile = serde_json::from_str(text)?;
    from_file(file)
}

fn from_file(file: SchemaFile) -> Result<OutputSchema, SchemaError> {
    let mut types = Vec::with_capacity(file.types.len());
    for ty in file.types {
        let mut slots = Vec::with_capacity(ty.slots.len());
        for s in ty.slots {
            let kind = match s.kind.as_str() {
                "closed" => SlotKind::Closed { values: s.values },
                "open" => SlotKind::Open,
                "pointer" => SlotKind::Pointer {
                    targets: s.targets,
                    multi: s.multi,
                },
                other => {
                    return Err(SchemaError::Syntax(serde_json::Error::io(
                        std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("type {} slot {}: unknown kind {other:?}", ty.name, s.name),
                        ),
                    )))
                }
            };
            slots.push(SlotDef {
                name: s.name,
                kind,
                key: s.key,
                back_pointer: s.back_pointer,
                single_role: s.single_role,
                inferable: s.inferable,
            });
        }
        types.push(ObjectTypeDef {
            name: ty.name,
            synthesized: ty.synthesized,
            anchor: ty.anchor,
            slots,
        });
    }
    let schema = OutputSchema {
        root: file.root,
        types,
    };
    validate(&schema)?;
    Ok(schema)
}

fn validate(schema: &OutputSchema) -> Result<(), SchemaError> {
    let mut names = BTreeSet::new();
    for ty in &schema.types {
        if !names.insert(ty.name.as_str()) {
            return Err(SchemaError::DuplicateType { ty: ty.name.clone() });
        }
    }

    for ty in &schema.types {
        let mut slot_names = BTreeSet::new();
        let mut key: Option<&str> = None;
        for slot in &ty.slots {
            if !slot_names.insert(slot.name.as_str()) {
                return Err(SchemaError::DuplicateSlot {
                    ty: ty.name.clone(),
                    slot: slot.name.clone(),
                });
            }
            if slot.key {
                if let Some(prev) = key {
                    return Err(SchemaError::MultipleKeySlots {
                        ty: ty.name.clone(),
                        a: prev.to_string(),
                        b: slot.name.clone(),
                    });
                }
                key = Some(&slot.name);
            }
            match &slot.kind {
                SlotKind::Closed { values } => {
                    if values.is_empty() {
                        return Err(SchemaError::EmptyValueSet {
                            ty: ty.name.clone(),
                            slot: slot.name.clone(),
                        });
                    }
                }
                SlotKind::Open => {}
                SlotKind::Pointer { targets, .. } => {
                    for t in targets {
                        if schema.type_def(t).is_none() {
                            return Err(SchemaError::DanglingTarget {
                                ty: ty.name.clone(),
                                slot: slot.name.clone(),
                                target: t.clone(),
                            });
                        }
                    }
                }
            }
            if slot.inferable && !matches!(slot.kind, SlotKind::Closed { .. }) {
                return Err(SchemaError::BadInferable {
                    ty: ty.name.clone(),
                    slot: slot.name.clone(),
                });
            }
            if slot.back_pointer && !slot.kind.is_pointer() {
                return Err(SchemaError::BadBackPointer {
                    ty: ty.name.clone(),
                    slot: slot.name.clone(),
                });
            }
            if slot.single_role.is_some() && !slot.kind.is_pointer() {
                return Err(SchemaError::BadSingleRole {
                    ty: ty.name.clone(),
                    slot: slot.name.clone(),
                });
            }
        }
        if key.is_none() {
            return Err(SchemaError::NoKeySlot { ty: ty.name.clone() });
        }
        if ty.synthesized {
            let anchor = ty.anchor.as_deref().ok_or(SchemaError::MissingAnchor {
                ty: ty.name.clone(),
            })?;
            match ty.slot(anchor) {
                Some(s) if s.kind.is_pointer() && !s.back_pointer => {}
                _ => {
                    return Err(SchemaError::BadAnchor {
                        ty: ty.name.clone(),
                        slot: anchor.to_string(),
                    })
                }
            }
        }
    }

    if let Some(root) = &schema.root {
        let ty = schema
            .type_def(root)
            .ok_or(SchemaError::DanglingRoot { ty: root.clone() })?;
        if ty.pointer_slots().next().is_none() {
            return Err(SchemaError::PointerlessRoot { ty: root.clone() });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tree enumeration
// ---------------------------------------------------------------------------

/// Identity of one discourse decision tree.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TreeSpec {
    Filter { owner: String, slot: String },
    Merge { owner: String },
    Link { owner: String, slot: String, target: String },
    Split { owner: String, slot: String },
    InferParent { orphan: String },
    DefaultSlot { owner: String, slot: String },
}

/// How a tree's classifications are interpreted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelPolicy {
    /// positive/negative, thresholded on the positive proportion.
    Binary,
    /// Fixed label set; argmax thresholded, falling back to `default`.
    Multi { labels: Vec<String>, default: String },
}

impl TreeSpec {
    pub fn stage(&self) -> u8 {
        match self {
            TreeSpec::Filter { .. } => 1,
            TreeSpec::Merge { .. } => 2,
            TreeSpec::Link { .. } => 3,
            TreeSpec::Split { .. } => 4,
            TreeSpec::InferParent { .. } => 5,
            TreeSpec::DefaultSlot { .. } => 6,
        }
    }

    /// Canonical key used in model files and on the command line.
    pub fn key(&self) -> String {
        match self {
            TreeSpec::Filter { owner, slot } => format!("filter:{owner}.{slot}"),
            TreeSpec::Merge { owner } => format!("merge:{owner}"),
            TreeSpec::Link { owner, slot, target } => format!("link:{owner}.{slot}->{target}"),
            TreeSpec::Split { owner, slot } => format!("split:{owner}.{slot}"),
            TreeSpec::InferParent { orphan } => format!("infer-parent:{orphan}"),
            TreeSpec::DefaultSlot { owner, slot } => format!("default:{owner}.{slot}"),
        }
    }

    pub fn parse(key: &str) -> Option<TreeSpec> {
        let (head, rest) = key.split_once(':')?;
        let dotted = |s: &str| -> Option<(String, String)> {
            let (a, b) = s.split_once('.')?;
            Some((a.to_string(), b.to_string()))
        };
        match head {
            "filter" => {
                let (owner, slot) = dotted(rest)?;
                Some(TreeSpec::Filter { owner, slot })
            }
            "merge" => Some(TreeSpec::Merge { owner: rest.to_string() }),
            "link" => {
                let (head, target) = rest.split_once("->")?;
                let (owner, slot) = dotted(head)?;
                Some(TreeSpec::Link { owner, slot, target: target.to_string() })
            }
            "split" => {
                let (owner, slot) = dotted(rest)?;
                Some(TreeSpec::Split { owner, slot })
            }
            "infer-parent" => Some(TreeSpec::InferParent { orphan: rest.to_string() }),
            "default" => {
                let (owner, slot) = dotted(rest)?;
                Some(TreeSpec::DefaultSlot { owner, slot })
            }
            _ => None,
        }
    }

    /// Classification scheme for this tree under `schema`.
    pub fn label_policy(&self, schema: &OutputSchema) -> LabelPolicy {
        match self {
            TreeSpec::InferParent { orphan } => {
                let mut labels = Vec::new();
                for ty in &schema.types {
                    for slot in ty.pointer_slots() {
                        if slot.targets().iter().any(|t| t == orphan) {
                            labels.push(parent_label(&ty.name, &slot.name));
                        }
                    }
                }
                labels.push(crate::id3::NONE.to_string());
                LabelPolicy::Multi {
                    labels,
                    default: crate::id3::NONE.to_string(),
                }
            }
            TreeSpec::DefaultSlot { owner, slot } => {
                let mut labels: Vec<String> = schema
                    .type_def(owner)
                    .and_then(|t| t.slot(slot))
                    .map(|s| s.closed_values().to_vec())
                    .unwrap_or_default();
                labels.push(crate::id3::NEGATIVE.to_string());
                LabelPolicy::Multi {
                    labels,
                    default: crate::id3::NEGATIVE.to_string(),
                }
            }
            _ => LabelPolicy::Binary,
        }
    }
}

impl fmt::Display for TreeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Label used by parent-inference trees: `<parentType>.<slot>`.
pub fn parent_label(parent: &str, slot: &str) -> String {
    format!("{parent}.{slot}")
}

/// Every decision tree the domain requires, ordered by (stage, declaration
/// order). A pure function of the schema.
pub fn enumerate_trees(schema: &OutputSchema) -> Vec<TreeSpec> {
    let mut out = Vec::new();

    // Stage 1: one filter per non-pointer slot.
    for ty in &schema.types {
        for slot in ty.data_slots() {
            out.push(TreeSpec::Filter {
                owner: ty.name.clone(),
                slot: slot.name.clone(),
            });
        }
    }
    // Stage 2: one merge tree per non-synthesized type.
    for ty in &schema.types {
        if !ty.synthesized {
            out.push(TreeSpec::Merge { owner: ty.name.clone() });
        }
    }
    // Stage 3: one link tree per (forward pointer slot, allowed target).
    for ty in &schema.types {
        for slot in ty.pointer_slots() {
            for target in slot.targets() {
                out.push(TreeSpec::Link {
                    owner: ty.name.clone(),
                    slot: slot.name.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    // Stage 4: one split tree per multi-valued forward pointer slot.
    for ty in &schema.types {
        for slot in ty.pointer_slots() {
            if slot.is_multi() {
                out.push(TreeSpec::Split {
                    owner: ty.name.clone(),
                    slot: slot.name.clone(),
                });
            }
        }
    }
    // Stage 5: one parent-inference tree per non-root type reachable as a
    // pointer target.
    let targets = schema.pointer_targets();
    for ty in &schema.types {
        if targets.contains(ty.name.as_str()) && !schema.is_root(&ty.name) {
            out.push(TreeSpec::InferParent { orphan: ty.name.clone() });
        }
    }
    // Stage 6: one default-value tree per inferable closed slot.
    for ty in &schema.types {
        for slot in &ty.slots {
            if slot.inferable {
                out.push(TreeSpec::DefaultSlot {
                    owner: ty.name.clone(),
                    slot: slot.name.clone(),
                });
            }
        }
    }
    out
}

/// Order forward pointer slots so that slots whose target types have no
/// unprocessed outgoing pointer slots come first (reverse-topological over
/// the type graph). Cycles are broken by declaration order.
pub fn link_order(schema: &OutputSchema) -> Vec<(String, String)> {
    let mut remaining: Vec<(usize, String)> = Vec::new();
    let mut out_count: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, ty) in schema.types.iter().enumerate() {
        let n = ty.pointer_slots().count();
        out_count.insert(ty.name.as_str(), n);
        for slot in ty.pointer_slots() {
            remaining.push((i, slot.name.clone()));
        }
    }

    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let ready = remaining.iter().position(|(ti, slot)| {
            let ty = &schema.types[*ti];
            let s = ty.slot(slot).expect("slot exists");
            s.targets().iter().all(|t| out_count[t.as_str()] == 0)
        });
        // No ready slot means a cycle; take the first declared.
        let idx = ready.unwrap_or(0);
        let (ti, slot) = remaining.remove(idx);
        let ty_name = schema.types[ti].name.as_str();
        *out_count.get_mut(ty_name).expect("counted") -= 1;
        order.push((ty_name.to_string(), slot));
    }
    order
}
