//! Slot-level scoring of output graphs against answer keys.
//!
//! Recall is the percentage of possible information that was reported;
//! precision is the percent correct of the reported information. Counting
//! is per fill with exact match only: no partial credit. Pointer fills are
//! correct when the aligned target equals the key's target; back-pointer
//! slots are mechanical mirrors and are not counted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{normalize, AnswerKey, ExtractedObject, KeyObject};
use crate::id3::{f_measure, Metrics};
use crate::pipeline::OutputGraph;
use crate::real::Real;
use crate::schema::{link_order, OutputSchema, SlotKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("outputs and keys disagree on documents: only in outputs {only_outputs:?}, only in keys {only_keys:?}")]
    DocMismatch {
        only_outputs: Vec<String>,
        only_keys: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub correct: usize,
    pub missing: usize,
    pub spurious: usize,
}

impl SlotCounts {
    fn add(&mut self, other: &SlotCounts) {
        self.correct += other.correct;
        self.missing += other.missing;
        self.spurious += other.spurious;
    }

    pub fn metrics<R: Real>(&self, beta: R) -> Metrics<R> {
        let recall = pct::<R>(self.correct, self.correct + self.missing);
        let precision = pct::<R>(self.correct, self.correct + self.spurious);
        Metrics {
            recall,
            precision,
            f: f_measure(precision, recall, beta),
        }
    }
}

fn pct<R: Real>(num: usize, den: usize) -> R {
    if den == 0 {
        R::zero()
    } else {
        R::frac(num, den) * R::of_usize(100)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DocScore<R> {
    pub counts: SlotCounts,
    pub metrics: Metrics<R>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreReport<R> {
    pub per_slot: BTreeMap<String, SlotCounts>,
    pub per_doc: BTreeMap<String, DocScore<R>>,
    pub totals: SlotCounts,
    pub overall: Metrics<R>,
    /// Degenerate cases (nothing reported, empty keys) are flagged here.
    pub notes: Vec<String>,
}

impl<R: Real> ScoreReport<R> {
    /// Plain-text table with one Rec/Prec/F row per slot plus the totals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<32} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}\n",
            "slot", "correct", "missing", "spurious", "Rec", "Prec", "F"
        ));
        for (slot, counts) in &self.per_slot {
            let m = counts.metrics::<R>(R::one());
            out.push_str(&format!(
                "{:<32} {:>8} {:>8} {:>8} {:>7.1} {:>7.1} {:>7.1}\n",
                slot,
                counts.correct,
                counts.missing,
                counts.spurious,
                m.recall.to_f64().unwrap_or(0.0),
                m.precision.to_f64().unwrap_or(0.0),
                m.f.to_f64().unwrap_or(0.0),
            ));
        }
        out.push_str(&format!(
            "{:<32} {:>8} {:>8} {:>8} {:>7.1} {:>7.1} {:>7.1}\n",
            "TOTAL",
            self.totals.correct,
            self.totals.missing,
            self.totals.spurious,
            self.overall.recall.to_f64().unwrap_or(0.0),
            self.overall.precision.to_f64().unwrap_or(0.0),
            self.overall.f.to_f64().unwrap_or(0.0),
        ));
        out
    }
}

/// Types ordered so pointer targets align before pointer owners.
fn alignment_type_order(schema: &OutputSchema) -> Vec<String> {
    let order = link_order(schema);
    let mut last: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, (ty, _)) in order.iter().enumerate() {
        last.insert(ty.as_str(), i + 1);
    }
    let mut types: Vec<(usize, usize, String)> = schema
        .types
        .iter()
        .enumerate()
        .map(|(di, t)| {
            (
                last.get(t.name.as_str()).copied().unwrap_or(0),
                di,
                t.name.clone(),
            )
        })
        .collect();
    types.sort();
    types.into_iter().map(|(_, _, name)| name).collect()
}

fn values_equal(kind: &SlotKind, a: &str, b: &str) -> bool {
    match kind {
        SlotKind::Open => normalize(a) == normalize(b),
        _ => a == b,
    }
}

/// Greedy injective alignment of output objects to key objects: within
/// each type, candidate pairs are ranked by key-slot equality, then by the
/// number of agreeing filled slots; ties break by object order.
pub fn align(
    schema: &OutputSchema,
    objects: &[ExtractedObject],
    key: &AnswerKey,
) -> BTreeMap<String, String> {
    let mut aligned: BTreeMap<String, String> = BTreeMap::new();
    for ty_name in alignment_type_order(schema) {
        let Some(ty) = schema.type_def(&ty_name) else { continue };
        let outs: Vec<(usize, &ExtractedObject)> = objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.type_name == ty_name)
            .collect();
        let keys: Vec<(usize, &KeyObject)> = key
            .objects
            .iter()
            .enumerate()
            .filter(|(_, k)| k.type_name == ty_name)
            .collect();
        if outs.is_empty() || keys.is_empty() {
            continue;
        }
        let key_slot = ty.key_slot();
        let mut pairs: Vec<(bool, usize, usize, usize, &str, &str)> = Vec::new();
        for (oi, o) in &outs {
            for (ki, k) in &keys {
                let mut agree = 0usize;
                let mut key_eq = false;
                for slot in &ty.slots {
                    match &slot.kind {
                        SlotKind::Pointer { .. } => {
                            if slot.back_pointer {
                                continue;
                            }
                            let k_fill: BTreeSet<&str> =
                                k.pointer_fill(&slot.name).iter().map(String::as_str).collect();
                            let hits = o
                                .pointer_fill(&slot.name)
                                .iter()
                                .filter_map(|t| aligned.get(t))
                                .filter(|mapped| k_fill.contains(mapped.as_str()))
                                .count();
                            agree += hits;
                            if slot.key && hits > 0 {
                                key_eq = true;
                            }
                        }
                        kind => {
                            if let (Some(a), Some(b)) =
                                (o.data_value(&slot.name), k.data_value(&slot.name))
                            {
                                if values_equal(kind, a, b) {
                                    agree += 1;
                                    if slot.name == key_slot.name {
                                        key_eq = true;
                                    }
                                }
                            }
                        }
                    }
                }
                pairs.push((key_eq, agree, *oi, *ki, o.id.as_str(), k.id.as_str()));
            }
        }
        pairs.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut used_out: BTreeSet<&str> = BTreeSet::new();
        let mut used_key: BTreeSet<&str> = BTreeSet::new();
        for (_, _, _, _, o_id, k_id) in pairs {
            if used_out.contains(o_id) || used_key.contains(k_id) {
                continue;
            }
            used_out.insert(o_id);
            used_key.insert(k_id);
            aligned.insert(o_id.to_string(), k_id.to_string());
        }
    }
    aligned
}

fn score_doc(
    schema: &OutputSchema,
    graph: &OutputGraph,
    key: &AnswerKey,
    per_slot: &mut BTreeMap<String, SlotCounts>,
) -> SlotCounts {
    let aligned = align(schema, &graph.objects, key);
    let matched_keys: BTreeSet<&str> = aligned.values().map(String::as_str).collect();
    let key_by_id: BTreeMap<&str, &KeyObject> =
        key.objects.iter().map(|k| (k.id.as_str(), k)).collect();

    let mut doc_counts = SlotCounts::default();
    let mut bump = |ty: &str, slot: &str, d: SlotCounts| {
        per_slot.entry(format!("{ty}.{slot}")).or_default().add(&d);
        doc_counts.add(&d);
    };

    for o in &graph.objects {
        let Some(ty) = schema.type_def(&o.type_name) else { continue };
        let k = aligned.get(&o.id).and_then(|kid| key_by_id.get(kid.as_str()));
        for slot in &ty.slots {
            if slot.back_pointer {
                continue;
            }
            match &slot.kind {
                SlotKind::Pointer { .. } => {
                    let o_fill = o.pointer_fill(&slot.name);
                    if o_fill.is_empty() && k.map_or(true, |k| k.pointer_fill(&slot.name).is_empty())
                    {
                        continue;
                    }
                    let k_fill: BTreeSet<&str> = k
                        .map(|k| k.pointer_fill(&slot.name).iter().map(String::as_str).collect())
                        .unwrap_or_default();
                    let mapped: Vec<Option<&String>> =
                        o_fill.iter().map(|t| aligned.get(t)).collect();
                    let hits = mapped
                        .iter()
                        .filter(|m| m.map_or(false, |m| k_fill.contains(m.as_str())))
                        .count();
                    bump(
                        &o.type_name,
                        &slot.name,
                        SlotCounts {
                            correct: hits,
                            spurious: o_fill.len() - hits,
                            missing: k_fill.len() - hits,
                        },
                    );
                }
                kind => {
                    let o_val = o.data_value(&slot.name);
                    let k_val = k.and_then(|k| k.data_value(&slot.name));
                    let d = match (o_val, k_val) {
                        (None, None) => continue,
                        (Some(a), Some(b)) if values_equal(kind, a, b) => SlotCounts {
                            correct: 1,
                            ..Default::default()
                        },
                        (Some(_), Some(_)) => SlotCounts {
                            spurious: 1,
                            missing: 1,
                            ..Default::default()
                        },
                        (Some(_), None) => SlotCounts {
                            spurious: 1,
                            ..Default::default()
                        },
                        (None, Some(_)) => SlotCounts {
                            missing: 1,
                            ..Default::default()
                        },
                    };
                    bump(&o.type_name, &slot.name, d);
                }
            }
        }
    }

    // Key objects nothing aligned to: everything they hold is missing.
    for k in &key.objects {
        if matched_keys.contains(k.id.as_str()) {
            continue;
        }
        let Some(ty) = schema.type_def(&k.type_name) else { continue };
        for slot in &ty.slots {
            if slot.back_pointer {
                continue;
            }
            let n = match &slot.kind {
                SlotKind::Pointer { .. } => k.pointer_fill(&slot.name).len(),
                _ => usize::from(k.data_value(&slot.name).is_some()),
            };
            if n > 0 {
                bump(
                    &k.type_name,
                    &slot.name,
                    SlotCounts {
                        missing: n,
                        ..Default::default()
                    },
                );
            }
        }
    }
    doc_counts
}

/// Score a set of output graphs against their keys (matched by document
/// id; a mismatch in the id sets is an error).
pub fn score<R: Real>(
    schema: &OutputSchema,
    graphs: &[OutputGraph],
    keys: &[AnswerKey],
) -> Result<ScoreReport<R>, EvalError> {
    let out_ids: BTreeSet<&str> = graphs.iter().map(|g| g.doc_id.as_str()).collect();
    let key_ids: BTreeSet<&str> = keys.iter().map(|k| k.doc_id.as_str()).collect();
    if out_ids != key_ids {
        return Err(EvalError::DocMismatch {
            only_outputs: out_ids.difference(&key_ids).map(|s| s.to_string()).collect(),
            only_keys: key_ids.difference(&out_ids).map(|s| s.to_string()).collect(),
        });
    }

    let key_by_id: BTreeMap<&str, &AnswerKey> =
        keys.iter().map(|k| (k.doc_id.as_str(), k)).collect();
    let mut per_slot: BTreeMap<String, SlotCounts> = BTreeMap::new();
    let mut per_doc: BTreeMap<String, DocScore<R>> = BTreeMap::new();
    let mut totals = SlotCounts::default();
    let mut notes = Vec::new();

    for graph in graphs {
        let key = key_by_id[graph.doc_id.as_str()];
        let counts = score_doc(schema, graph, key, &mut per_slot);
        if counts.correct + counts.spurious == 0 && counts.missing > 0 {
            notes.push(format!(
                "{}: nothing reported, precision undefined (reported as 0)",
                graph.doc_id
            ));
        }
        totals.add(&counts);
        per_doc.insert(
            graph.doc_id.clone(),
            DocScore {
                counts,
                metrics: counts.metrics(R::one()),
            },
        );
    }

    Ok(ScoreReport {
        per_slot,
        per_doc,
        overall: totals.metrics(R::one()),
        totals,
        notes,
    })
}

/// Treat answer keys as if they were pipeline output (for baseline and
/// self-consistency checks).
pub fn keys_as_outputs(keys: &[AnswerKey]) -> Vec<OutputGraph> {
    keys.iter()
        .map(|k| OutputGraph {
            doc_id: k.doc_id.clone(),
            root: None,
            objects: k
                .objects
                .iter()
                .map(|ko| ExtractedObject {
                    id: ko.id.clone(),
                    type_name: ko.type_name.clone(),
                    closed: ko.closed.clone(),
                    open: ko.open.clone(),
                    pointers: ko.pointers.clone(),
                    references: Vec::new(),
                })
                .collect(),
        })
        .collect()
}
