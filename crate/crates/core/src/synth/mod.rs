//! Synthetic micro-domains with known ground truth.
//!
//! A [`GenRules`] value fixes a stochastic model of a domain: how many
//! objects a document holds, how their slots are filled, which extraction
//! patterns report them, where spurious frames come from, and a relation
//! table giving link probabilities conditioned on the two objects' key
//! values and their sentence-distance bucket. Corpora sampled from the
//! model come with exact answer keys, and a Bayes oracle (see
//! [`oracle::bayes_oracle`]) computes the decision-theoretic optimal graph
//! from the same probabilities, giving an achievable ceiling for the
//! trained pipeline.

pub mod oracle;
pub mod presets;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::distance_bucket;
use crate::frames::{
    AnswerKey, DocumentInput, ExtractedObject, ExtractionPattern, KeyObject, PatternKind,
    Reference,
};
use crate::real::Real;
use crate::rng::Rng;
use crate::schema::{link_order, OutputSchema, SlotKind, UNKNOWN};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("rules error: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Weighted<R> {
    pub value: String,
    pub weight: R,
}

impl<R> Weighted<R> {
    pub fn new(value: &str, weight: R) -> Self {
        Weighted {
            value: value.to_string(),
            weight,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DocShape {
    pub min_sentences: usize,
    pub max_sentences: usize,
}

/// Generation recipe for one non-key data slot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlotGen<R> {
    /// P(slot filled in the key).
    pub fill: R,
    pub values: Vec<Weighted<R>>,
    /// P(a filled key slot shows up in the extraction).
    pub extract: R,
    /// P(slot filled on a spurious frame).
    pub spurious_fill: R,
    #[serde(default = "Vec::new")]
    pub spurious_values: Vec<Weighted<R>>,
}

/// Extraction pattern template; the trigger token `{value}` is replaced by
/// the object's lowercased key value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatternGen<R> {
    pub kind: PatternKind,
    pub triggers: Vec<String>,
    /// Reliability in [0, 1]: true frames sample patterns proportionally
    /// to it, spurious frames inversely.
    pub reliability: R,
}

/// Attribute-only second frame emitted alongside a true object.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FragmentGen<R> {
    /// P(fragment emitted | the named slots are filled in the key).
    pub rate: R,
    pub slots: Vec<String>,
    /// Fragment reference lands in the source's sentence; otherwise it is
    /// displaced by up to two sentences.
    pub same_sentence: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypeGen<R> {
    pub count_min: usize,
    pub count_max: usize,
    pub key_values: Vec<Weighted<R>>,
    /// Sample key values without replacement within a document.
    #[serde(default)]
    pub distinct_key_values: bool,
    #[serde(default = "BTreeMap::new")]
    pub slots: BTreeMap<String, SlotGen<R>>,
    pub refs_true: Vec<(usize, R)>,
    pub refs_spurious: Vec<(usize, R)>,
    #[serde(default = "Vec::new")]
    pub spurious_values: Vec<Weighted<R>>,
    /// P(key slot filled on a spurious frame).
    pub spurious_key_fill: R,
    pub patterns: Vec<PatternGen<R>>,
    pub fragment: Option<FragmentGen<R>>,
    /// P(a true object's extraction is omitted entirely; its key object
    /// keeps an `unknown` key value).
    pub omit_rate: R,
}

/// One row of the relation table. `*` matches anything; the first matching
/// row wins.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelationRule<R> {
    pub owner_type: String,
    pub slot: String,
    pub owner_value: String,
    pub target_value: String,
    pub bucket: String,
    pub prob: R,
}

impl<R: Real> RelationRule<R> {
    pub fn any(owner_type: &str, slot: &str, bucket: &str, prob: R) -> Self {
        RelationRule {
            owner_type: owner_type.to_string(),
            slot: slot.to_string(),
            owner_value: "*".to_string(),
            target_value: "*".to_string(),
            bucket: bucket.to_string(),
            prob,
        }
    }
}

/// Full stochastic model of a micro-domain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenRules<R> {
    pub schema: OutputSchema,
    pub doc: DocShape,
    pub types: BTreeMap<String, TypeGen<R>>,
    pub relations: Vec<RelationRule<R>>,
    pub spurious_rate: R,
    pub slot_noise_rate: R,
    pub seed: u64,
}

impl<R: Real> GenRules<R> {
    pub fn validate(&self) -> Result<(), SynthError> {
        let unit = |p: R, what: &str| {
            if p < R::zero() || p > R::one() {
                Err(SynthError::Invalid(format!("{what} must be in [0,1]")))
            } else {
                Ok(())
            }
        };
        let pool = |weights: &[Weighted<R>], what: &str| {
            let mut total = R::zero();
            for w in weights {
                if w.weight < R::zero() {
                    return Err(SynthError::Invalid(format!("{what}: negative weight")));
                }
                total = total + w.weight;
            }
            if !weights.is_empty() && total <= R::zero() {
                return Err(SynthError::Invalid(format!("{what}: zero total weight")));
            }
            Ok(())
        };
        unit(self.spurious_rate, "spuriousRate")?;
        unit(self.slot_noise_rate, "slotNoiseRate")?;
        for (name, ty) in &self.types {
            if self.schema.type_def(name).is_none() {
                return Err(SynthError::Invalid(format!("unknown type {name}")));
            }
            if ty.count_min > ty.count_max {
                return Err(SynthError::Invalid(format!("{name}: bad count range")));
            }
            if ty.key_values.is_empty() {
                return Err(SynthError::Invalid(format!("{name}: empty key value pool")));
            }
            if ty.patterns.is_empty() {
                return Err(SynthError::Invalid(format!("{name}: empty pattern lexicon")));
            }
            pool(&ty.key_values, &format!("{name}: key values"))?;
            pool(&ty.spurious_values, &format!("{name}: spurious values"))?;
            for p in &ty.patterns {
                unit(p.reliability, "pattern reliability")?;
            }
            unit(ty.omit_rate, "omitRate")?;
            unit(ty.spurious_key_fill, "spuriousKeyFill")?;
            let ty_def = self.schema.type_def(name).expect("checked above");
            for (slot, s) in &ty.slots {
                if ty_def.slot(slot).is_none() {
                    return Err(SynthError::Invalid(format!("{name}: unknown slot {slot}")));
                }
                unit(s.fill, "slot fill")?;
                unit(s.extract, "slot extract")?;
                unit(s.spurious_fill, "slot spuriousFill")?;
                pool(&s.values, &format!("{name}.{slot}: values"))?;
                pool(&s.spurious_values, &format!("{name}.{slot}: spurious values"))?;
            }
        }
        for r in &self.relations {
            unit(r.prob, "relation probability")?;
            let ty = self.schema.type_def(&r.owner_type).ok_or_else(|| {
                SynthError::Invalid(format!("relation rule: unknown type {}", r.owner_type))
            })?;
            match ty.slot(&r.slot) {
                Some(s) if s.kind.is_pointer() => {}
                _ => {
                    return Err(SynthError::Invalid(format!(
                        "relation rule: {}.{} is not a pointer slot",
                        r.owner_type, r.slot
                    )))
                }
            }
        }
        Ok(())
    }

    /// First matching relation row, else probability zero.
    pub fn relation_prob(
        &self,
        owner_type: &str,
        slot: &str,
        owner_value: &str,
        target_value: &str,
        bucket: Option<&str>,
    ) -> R {
        for r in &self.relations {
            if r.owner_type != owner_type || r.slot != slot {
                continue;
            }
            if r.owner_value != "*" && r.owner_value != owner_value {
                continue;
            }
            if r.target_value != "*" && r.target_value != target_value {
                continue;
            }
            match (r.bucket.as_str(), bucket) {
                ("*", _) => return r.prob,
                (b, Some(observed)) if b == observed => return r.prob,
                _ => continue,
            }
        }
        R::zero()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }

    pub fn from_json(text: &str) -> Result<GenRules<R>, SynthError> {
        let rules: GenRules<R> =
            serde_json::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Identification token used in the relation table: a closed key value, or
/// the type name when the key slot is open or a pointer.
pub fn type_value<'a>(schema: &OutputSchema, type_name: &'a str, key_value: Option<&'a str>) -> &'a str {
    let closed_key = schema
        .type_def(type_name)
        .map(|t| matches!(t.key_slot().kind, SlotKind::Closed { .. }))
        .unwrap_or(false);
    match key_value {
        Some(v) if closed_key => v,
        _ => type_name,
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// A sampled true object (one key object, at most one typed frame).
struct TrueObj {
    type_name: String,
    key_id: String,
    key_value: String,
    home: usize,
    slots: BTreeMap<String, String>,
    omitted: bool,
}

fn pick<'a, R: Real>(rng: &mut Rng, pool: &'a [Weighted<R>]) -> &'a str {
    let weights: Vec<f64> = pool.iter().map(|w| w.weight.to_f64().unwrap_or(0.0)).collect();
    &pool[rng.pick_weighted(&weights)].value
}

fn pick_count<R: Real>(rng: &mut Rng, pool: &[(usize, R)]) -> usize {
    let weights: Vec<f64> = pool.iter().map(|(_, w)| w.to_f64().unwrap_or(0.0)).collect();
    pool[rng.pick_weighted(&weights)].0
}

fn chance<R: Real>(rng: &mut Rng, p: R) -> bool {
    rng.chance(p.to_f64().unwrap_or(0.0))
}

fn sample_references<R: Real>(
    rng: &mut Rng,
    ty: &TypeGen<R>,
    key_value: &str,
    home: usize,
    spurious: bool,
) -> Vec<Reference> {
    let n = pick_count(rng, if spurious { &ty.refs_spurious } else { &ty.refs_true });
    let weights: Vec<f64> = ty
        .patterns
        .iter()
        .map(|p| {
            let r = p.reliability.to_f64().unwrap_or(0.0);
            if spurious {
                1.05 - r
            } else {
                r.max(1e-6)
            }
        })
        .collect();
    (0..n.max(1))
        .map(|_| {
            let pat = &ty.patterns[rng.pick_weighted(&weights)];
            let triggers: Vec<String> = pat
                .triggers
                .iter()
                .map(|t| t.replace("{value}", &key_value.to_lowercase()))
                .collect();
            let refs: Vec<&str> = triggers.iter().map(String::as_str).collect();
            Reference::new(home, ExtractionPattern::new(pat.kind, &refs))
        })
        .collect()
}

/// Sample one document and its answer key.
fn gen_document<R: Real>(rules: &GenRules<R>, doc_index: usize, seed: u64) -> (DocumentInput, AnswerKey) {
    let mut rng = Rng::new(seed).derive("doc").derive_n(doc_index as u64);
    let sentences = rng.range(rules.doc.min_sentences, rules.doc.max_sentences);
    let schema = &rules.schema;

    // True objects, in type declaration order.
    let mut truths: Vec<TrueObj> = Vec::new();
    let mut key_seq = 0usize;
    for ty_def in &schema.types {
        if ty_def.synthesized || schema.is_root(&ty_def.name) {
            continue;
        }
        let Some(gen) = rules.types.get(&ty_def.name) else { continue };
        let n = rng.range(gen.count_min, gen.count_max);
        let mut taken: Vec<&str> = Vec::new();
        for _ in 0..n {
            let key_value = if gen.distinct_key_values {
                let mut v = pick(&mut rng, &gen.key_values);
                let mut guard = 0;
                while taken.contains(&v) && guard < 64 {
                    v = pick(&mut rng, &gen.key_values);
                    guard += 1;
                }
                taken.push(v);
                v.to_string()
            } else {
                pick(&mut rng, &gen.key_values).to_string()
            };
            let mut slots = BTreeMap::new();
            for (slot, sg) in &gen.slots {
                if chance(&mut rng, sg.fill) && !sg.values.is_empty() {
                    slots.insert(slot.clone(), pick(&mut rng, &sg.values).to_string());
                }
            }
            let omitted = chance(&mut rng, gen.omit_rate);
            truths.push(TrueObj {
                type_name: ty_def.name.clone(),
                key_id: format!("t{key_seq}"),
                key_value,
                home: rng.below(sentences),
                slots,
                omitted,
            });
            key_seq += 1;
        }
    }

    // Key structure: plain objects first.
    let mut key_objects: Vec<KeyObject> = Vec::new();
    for t in &truths {
        let ty_def = schema.type_def(&t.type_name).expect("known type");
        let mut k = KeyObject::new(&t.key_id, &t.type_name);
        let key_slot = ty_def.key_slot();
        let shown = if t.omitted { UNKNOWN } else { t.key_value.as_str() };
        match key_slot.kind {
            SlotKind::Closed { .. } => {
                k.closed.insert(key_slot.name.clone(), shown.to_string());
            }
            SlotKind::Open => {
                k.open.insert(key_slot.name.clone(), shown.to_string());
            }
            SlotKind::Pointer { .. } => {}
        }
        for (slot, value) in &t.slots {
            match ty_def.slot(slot).map(|s| &s.kind) {
                Some(SlotKind::Closed { .. }) => {
                    k.closed.insert(slot.clone(), value.clone());
                }
                Some(SlotKind::Open) => {
                    k.open.insert(slot.clone(), value.clone());
                }
                _ => {}
            }
        }
        key_objects.push(k);
    }

    // Key links over true objects, in link order.
    let index_of = |id: &str, objs: &[KeyObject]| objs.iter().position(|k| k.id == id);
    for (owner_ty, slot_name) in link_order(schema) {
        let ty_def = schema.type_def(&owner_ty).expect("known type");
        if ty_def.synthesized || schema.is_root(&owner_ty) {
            continue;
        }
        let Some(slot) = ty_def.slot(&slot_name) else { continue };
        let owners: Vec<usize> = truths
            .iter()
            .enumerate()
            .filter(|(_, t)| t.type_name == owner_ty)
            .map(|(i, _)| i)
            .collect();
        for oi in owners {
            let owner_val = type_value(schema, &owner_ty, Some(&truths[oi].key_value)).to_string();
            let mut fills: Vec<String> = Vec::new();
            for (ti, t) in truths.iter().enumerate() {
                if ti == oi || !slot.targets().iter().any(|x| *x == t.type_name) {
                    continue;
                }
                let bucket = distance_bucket(t.home as i64 - truths[oi].home as i64);
                let target_val = type_value(schema, &t.type_name, Some(&t.key_value));
                let p = rules.relation_prob(&owner_ty, &slot_name, &owner_val, target_val, Some(bucket));
                if chance(&mut rng, p) {
                    fills.push(t.key_id.clone());
                    if !slot.is_multi() {
                        break;
                    }
                }
            }
            if !fills.is_empty() {
                let pos = index_of(&truths[oi].key_id, &key_objects).expect("key exists");
                key_objects[pos].pointers.insert(slot_name.clone(), fills);
            }
        }
    }

    // Synthesized relation objects: one candidate per anchor, kept when at
    // least one role fires.
    for ty_def in &schema.types {
        if !ty_def.synthesized {
            continue;
        }
        let anchor_slot = ty_def.anchor.as_deref().expect("validated");
        let anchor_targets: Vec<String> = ty_def
            .slot(anchor_slot)
            .map(|s| s.targets().to_vec())
            .unwrap_or_default();
        let anchors: Vec<usize> = truths
            .iter()
            .enumerate()
            .filter(|(_, t)| anchor_targets.iter().any(|x| *x == t.type_name))
            .map(|(i, _)| i)
            .collect();
        for ai in anchors {
            let owner_val =
                type_value(schema, &truths[ai].type_name, Some(&truths[ai].key_value)).to_string();
            let mut roles: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for slot in ty_def.pointer_slots() {
                if slot.name == anchor_slot {
                    continue;
                }
                let mut fills = Vec::new();
                for t in truths.iter() {
                    if !slot.targets().iter().any(|x| *x == t.type_name) {
                        continue;
                    }
                    let bucket = distance_bucket(t.home as i64 - truths[ai].home as i64);
                    let target_val = type_value(schema, &t.type_name, Some(&t.key_value));
                    let p = rules.relation_prob(&ty_def.name, &slot.name, &owner_val, target_val, Some(bucket));
                    if chance(&mut rng, p) {
                        fills.push(t.key_id.clone());
                        if !slot.is_multi() {
                            break;
                        }
                    }
                }
                if !fills.is_empty() {
                    roles.insert(slot.name.clone(), fills);
                }
            }
            if !roles.is_empty() {
                let mut k = KeyObject::new(&format!("t{key_seq}"), &ty_def.name);
                key_seq += 1;
                k.pointers.insert(anchor_slot.to_string(), vec![truths[ai].key_id.clone()]);
                for (slot, fills) in roles {
                    k.pointers.insert(slot, fills);
                }
                key_objects.push(k);
            }
        }
    }

    // Dummy root object pointing at whatever the relation table admits.
    if let Some(root) = schema.root.clone() {
        let ty_def = schema.type_def(&root).expect("validated root");
        if !ty_def.synthesized {
            let mut pointers: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for slot in ty_def.pointer_slots() {
                let mut fills = Vec::new();
                for k in &key_objects {
                    if !slot.targets().iter().any(|x| *x == k.type_name) {
                        continue;
                    }
                    let target_val = type_value(schema, &k.type_name, k.data_value(
                        &schema.type_def(&k.type_name).expect("known").key_slot().name,
                    ));
                    let p = rules.relation_prob(&root, &slot.name, &root, target_val, None);
                    if chance(&mut rng, p) {
                        fills.push(k.id.clone());
                        if !slot.is_multi() {
                            break;
                        }
                    }
                }
                if !fills.is_empty() {
                    pointers.insert(slot.name.clone(), fills);
                }
            }
            if !pointers.is_empty() {
                let mut k = KeyObject::new(&format!("t{key_seq}"), &root);
                k.pointers = pointers;
                key_objects.push(k);
            }
        }
    }

    // Extraction side: frames for non-omitted truths, fragments, spurious
    // frames.
    let mut frames: Vec<ExtractedObject> = Vec::new();
    let mut frame_seq = 0usize;
    let next_id = |frame_seq: &mut usize| {
        let id = format!("o{frame_seq}");
        *frame_seq += 1;
        id
    };

    for t in &truths {
        let ty_def = schema.type_def(&t.type_name).expect("known type");
        let gen = rules.types.get(&t.type_name).expect("configured type");
        let spurious = chance(&mut rng, rules.spurious_rate);
        if spurious {
            // A spurious frame of this type, not represented in the key.
            let mut obj = ExtractedObject::new(&next_id(&mut frame_seq), &t.type_name);
            let pool = if gen.spurious_values.is_empty() {
                &gen.key_values
            } else {
                &gen.spurious_values
            };
            let value = pick(&mut rng, pool).to_string();
            if chance(&mut rng, gen.spurious_key_fill) {
                set_slot(&mut obj, ty_def, &ty_def.key_slot().name.clone(), &value);
            }
            for (slot, sg) in &gen.slots {
                if chance(&mut rng, sg.spurious_fill) {
                    let pool = if sg.spurious_values.is_empty() {
                        &sg.values
                    } else {
                        &sg.spurious_values
                    };
                    if !pool.is_empty() {
                        let v = pick(&mut rng, pool).to_string();
                        set_slot(&mut obj, ty_def, slot, &v);
                    }
                }
            }
            let home = rng.below(sentences);
            obj.references = sample_references(&mut rng, gen, &value, home, true);
            if obj.has_data() {
                frames.push(obj);
            }
            continue;
        }
        if t.omitted {
            continue;
        }
        let mut obj = ExtractedObject::new(&next_id(&mut frame_seq), &t.type_name);
        set_slot(&mut obj, ty_def, &ty_def.key_slot().name.clone(), &t.key_value);
        for (slot, value) in &t.slots {
            let sg = &gen.slots[slot];
            if !chance(&mut rng, sg.extract) {
                continue;
            }
            let value = if chance(&mut rng, rules.slot_noise_rate) {
                corrupt(&mut rng, ty_def, slot, value)
            } else {
                value.clone()
            };
            set_slot(&mut obj, ty_def, slot, &value);
        }
        obj.references = sample_references(&mut rng, gen, &t.key_value, t.home, false);
        frames.push(obj);

        if let Some(frag) = &gen.fragment {
            let carried: Vec<(String, String)> = frag
                .slots
                .iter()
                .filter_map(|s| t.slots.get(s).map(|v| (s.clone(), v.clone())))
                .collect();
            if !carried.is_empty() && chance(&mut rng, frag.rate) {
                let mut fobj = ExtractedObject::new(&next_id(&mut frame_seq), &t.type_name);
                for (slot, value) in &carried {
                    set_slot(&mut fobj, ty_def, slot, value);
                }
                let home = if frag.same_sentence {
                    t.home
                } else {
                    let shift = rng.range(0, 4) as i64 - 2;
                    (t.home as i64 + shift).clamp(0, sentences as i64 - 1) as usize
                };
                // An attribute-only frame comes from a single mention of
                // the attribute itself.
                let mut refs = sample_references(&mut rng, gen, &carried[0].1, home, false);
                refs.truncate(1);
                fobj.references = refs;
                frames.push(fobj);
            }
        }
    }

    let doc_id = format!("doc-{doc_index:05}");
    (
        DocumentInput {
            doc_id: doc_id.clone(),
            objects: frames,
        },
        AnswerKey {
            doc_id,
            objects: key_objects,
        },
    )
}

fn set_slot(
    obj: &mut ExtractedObject,
    ty_def: &crate::schema::ObjectTypeDef,
    slot: &str,
    value: &str,
) {
    match ty_def.slot(slot).map(|s| &s.kind) {
        Some(SlotKind::Closed { .. }) => {
            obj.closed.insert(slot.to_string(), value.to_string());
        }
        Some(SlotKind::Open) => {
            obj.open.insert(slot.to_string(), value.to_string());
        }
        _ => {}
    }
}

/// Resample a closed slot uniformly among the other legal values; mangle
/// an open slot.
fn corrupt(rng: &mut Rng, ty_def: &crate::schema::ObjectTypeDef, slot: &str, value: &str) -> String {
    match ty_def.slot(slot).map(|s| &s.kind) {
        Some(SlotKind::Closed { values }) => {
            let others: Vec<&String> = values.iter().filter(|v| *v != value).collect();
            if others.is_empty() {
                value.to_string()
            } else {
                others[rng.below(others.len())].clone()
            }
        }
        _ => format!("{value}-garbled-{}", rng.below(1000)),
    }
}

/// Sample a corpus with its answer keys; a pure function of (rules, nDocs,
/// seed).
pub fn gen_corpus<R: Real>(
    rules: &GenRules<R>,
    n_docs: usize,
    seed: u64,
) -> Result<(Vec<DocumentInput>, Vec<AnswerKey>), SynthError> {
    rules.validate()?;
    let mut docs = Vec::with_capacity(n_docs);
    let mut keys = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let (d, k) = gen_document(rules, i, seed);
        docs.push(d);
        keys.push(k);
    }
    Ok((docs, keys))
}
