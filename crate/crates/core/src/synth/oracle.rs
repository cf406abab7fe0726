//! Decision-theoretic reference output computed from the true generative
//! probabilities.
//!
//! The oracle reconstructs the latent true structure of a document by
//! brute force over the generator's own distributions, deciding each
//! question at posterior 0.5: keep a fill iff it is more likely valid than
//! not, link iff the key holds the edge with probability at least one
//! half, and so on. It is exact for rule sets whose decisions factorize
//! per object and per pair (no attribute fragments, and hidden-parent
//! counts only when the type count is fixed); the built-in `default`,
//! `identity`, `rule-recovery`, and `orphan` rules qualify. Its score on a
//! held-out corpus is the ceiling a trained pipeline is measured against.

use std::collections::BTreeMap;

use crate::features::distance_bucket;
use crate::frames::{DocumentInput, ExtractedObject, Reference};
use crate::pipeline::stages::{fill_back_pointers, GraphState};
use crate::pipeline::OutputGraph;
use crate::real::Real;
use crate::schema::{link_order, OutputSchema, SlotKind};

use super::{type_value, GenRules, PatternGen, TypeGen, Weighted};

fn weight_of<R: Real>(pool: &[Weighted<R>], value: &str) -> R {
    let total: R = pool.iter().map(|w| w.weight).sum();
    if total <= R::zero() {
        return R::zero();
    }
    pool.iter()
        .filter(|w| w.value == value)
        .map(|w| w.weight)
        .sum::<R>()
        / total
}

fn pattern_probs<R: Real>(patterns: &[PatternGen<R>], spurious: bool) -> Vec<R> {
    let raw: Vec<R> = patterns
        .iter()
        .map(|p| {
            if spurious {
                R::from_f64(1.05).unwrap() - p.reliability
            } else {
                p.reliability.max(R::from_f64(1e-6).unwrap())
            }
        })
        .collect();
    let total: R = raw.iter().copied().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn pattern_index<R: Real>(gen: &TypeGen<R>, r: &Reference, key_value: &str) -> Option<usize> {
    gen.patterns.iter().position(|p| {
        if p.kind != r.pattern.kind || p.triggers.len() != r.pattern.triggers.len() {
            return false;
        }
        p.triggers.iter().zip(&r.pattern.triggers).all(|(t, seen)| {
            let expect = t.replace("{value}", &key_value.to_lowercase());
            expect == *seen
        })
    })
}

fn count_prob<R: Real>(pool: &[(usize, R)], n: usize) -> R {
    let total: R = pool.iter().map(|(_, w)| *w).sum();
    if total <= R::zero() {
        return R::zero();
    }
    pool.iter()
        .filter(|(c, _)| *c == n)
        .map(|(_, w)| *w)
        .sum::<R>()
        / total
}

/// Probability that a corrupted extraction shows value `v`: the truth is
/// resampled uniformly among the other legal values.
fn corrupt_prob<R: Real>(slot_values: &[Weighted<R>], value_set: &[String], v: &str) -> R {
    if value_set.len() < 2 {
        return R::zero();
    }
    let others = R::of_usize(value_set.len() - 1);
    slot_values
        .iter()
        .filter(|w| w.value != v)
        .map(|w| w.weight)
        .sum::<R>()
        / slot_values.iter().map(|w| w.weight).sum::<R>()
        / others
}

struct Posterior<R> {
    truth: R,
}

/// P(frame is a true extraction | everything observable about it).
fn frame_posterior<R: Real>(
    rules: &GenRules<R>,
    schema: &OutputSchema,
    obj: &ExtractedObject,
) -> Posterior<R> {
    let Some(gen) = rules.types.get(&obj.type_name) else {
        return Posterior { truth: R::one() };
    };
    let Some(ty) = schema.type_def(&obj.type_name) else {
        return Posterior { truth: R::zero() };
    };
    let key_slot = ty.key_slot();
    let key_value = obj.data_value(&key_slot.name);

    let q = rules.spurious_rate;
    // Condition on the frame existing at all: a true object may be omitted.
    let prior_true = (R::one() - q) * (R::one() - gen.omit_rate);
    let prior_spur = q;

    let mut l_true = R::one();
    let mut l_spur = R::one();

    // Key slot value.
    match key_value {
        Some(v) => {
            l_true = l_true * weight_of(&gen.key_values, v);
            let pool = if gen.spurious_values.is_empty() {
                &gen.key_values
            } else {
                &gen.spurious_values
            };
            l_spur = l_spur * gen.spurious_key_fill * weight_of(pool, v);
        }
        None => {
            l_true = R::zero();
            l_spur = l_spur * (R::one() - gen.spurious_key_fill);
        }
    }

    // Other configured data slots.
    for (slot_name, sg) in &gen.slots {
        let value_set = ty
            .slot(slot_name)
            .map(|s| s.closed_values().to_vec())
            .unwrap_or_default();
        match obj.data_value(slot_name) {
            Some(v) => {
                let clean = (R::one() - rules.slot_noise_rate) * weight_of(&sg.values, v);
                let noisy = rules.slot_noise_rate * corrupt_prob(&sg.values, &value_set, v);
                l_true = l_true * sg.fill * sg.extract * (clean + noisy);
                let pool = if sg.spurious_values.is_empty() {
                    &sg.values
                } else {
                    &sg.spurious_values
                };
                l_spur = l_spur * sg.spurious_fill * weight_of(pool, v);
            }
            None => {
                l_true = l_true
                    * ((R::one() - sg.fill) + sg.fill * (R::one() - sg.extract));
                l_spur = l_spur * (R::one() - sg.spurious_fill);
            }
        }
    }

    // References: count plus per-reference pattern choice.
    let n = obj.references.len();
    l_true = l_true * count_prob(&gen.refs_true, n);
    l_spur = l_spur * count_prob(&gen.refs_spurious, n);
    let p_true = pattern_probs(&gen.patterns, false);
    let p_spur = pattern_probs(&gen.patterns, true);
    for r in &obj.references {
        match pattern_index(gen, r, key_value.unwrap_or("")) {
            Some(i) => {
                l_true = l_true * p_true[i];
                l_spur = l_spur * p_spur[i];
            }
            None => {
                l_true = R::zero();
            }
        }
    }

    let num = prior_true * l_true;
    let den = num + prior_spur * l_spur;
    let truth = if den <= R::zero() { R::zero() } else { num / den };
    Posterior { truth }
}

fn half<R: Real>() -> R {
    R::from_f64(0.5).unwrap()
}

fn nearest_bucket(a: &ExtractedObject, b: &ExtractedObject) -> Option<&'static str> {
    let mut best: Option<i64> = None;
    for ra in &a.references {
        for rb in &b.references {
            let d = rb.sentence as i64 - ra.sentence as i64;
            best = Some(match best {
                None => d,
                Some(cur) => {
                    if (d.abs(), d > 0) < (cur.abs(), cur > 0) {
                        d
                    } else {
                        cur
                    }
                }
            });
        }
    }
    best.map(distance_bucket)
}

/// Optimal output graph for one document under the generator's own
/// probabilities: keep, link, infer, and default at posterior >= 0.5.
pub fn bayes_oracle<R: Real>(rules: &GenRules<R>, doc: &DocumentInput) -> OutputGraph {
    let schema = &rules.schema;
    let mut state = GraphState::new(&doc.doc_id, Vec::new());

    // Filtering: keep fills more likely valid than not.
    for obj in &doc.objects {
        let posterior = frame_posterior(rules, schema, obj);
        if posterior.truth < half() {
            continue;
        }
        let mut kept = obj.clone();
        if let (Some(gen), Some(ty)) = (rules.types.get(&obj.type_name), schema.type_def(&obj.type_name)) {
            for (slot_name, sg) in &gen.slots {
                let Some(v) = obj.data_value(slot_name) else { continue };
                let value_set = ty
                    .slot(slot_name)
                    .map(|s| s.closed_values().to_vec())
                    .unwrap_or_default();
                let clean = (R::one() - rules.slot_noise_rate) * weight_of(&sg.values, v);
                let noisy = rules.slot_noise_rate * corrupt_prob(&sg.values, &value_set, v);
                let not_corrupt = if clean + noisy <= R::zero() {
                    R::zero()
                } else {
                    clean / (clean + noisy)
                };
                if posterior.truth * not_corrupt < half() {
                    kept.closed.remove(slot_name);
                    kept.open.remove(slot_name);
                }
            }
        }
        if kept.has_data() {
            state.objects.push(kept);
        }
    }

    // Links between kept frames, slot by slot in link order.
    for (owner_ty, slot_name) in link_order(schema) {
        let ty = schema.type_def(&owner_ty).expect("known type");
        if ty.synthesized || schema.is_root(&owner_ty) {
            continue;
        }
        let slot = ty.slot(&slot_name).expect("known slot");
        let owners: Vec<String> = state
            .objects
            .iter()
            .filter(|o| o.type_name == owner_ty)
            .map(|o| o.id.clone())
            .collect();
        for owner_id in owners {
            let owner = state.get(&owner_id).expect("owner").clone();
            let owner_tok =
                type_value(schema, &owner_ty, owner.data_value(&ty.key_slot().name)).to_string();
            let candidates: Vec<(String, R)> = state
                .objects
                .iter()
                .filter(|t| {
                    t.id != owner.id && slot.targets().iter().any(|x| *x == t.type_name)
                })
                .map(|t| {
                    let t_ty = schema.type_def(&t.type_name).expect("known");
                    let tok = type_value(schema, &t.type_name, t.data_value(&t_ty.key_slot().name));
                    let p = rules.relation_prob(
                        &owner_ty,
                        &slot_name,
                        &owner_tok,
                        tok,
                        nearest_bucket(&owner, t),
                    );
                    (t.id.clone(), p)
                })
                .collect();
            if slot.is_multi() {
                for (target, p) in candidates {
                    if p >= half() {
                        push_pointer(&mut state, &owner_id, &slot_name, &target);
                    }
                }
            } else {
                // The generator claims a single-valued slot with the first
                // Bernoulli success over candidates in document order.
                let mut remaining = R::one();
                let mut best: Option<(String, R)> = None;
                for (target, p) in candidates {
                    let claim = remaining * p;
                    if best.as_ref().map_or(true, |(_, c)| claim > *c) {
                        best = Some((target, claim));
                    }
                    remaining = remaining * (R::one() - p);
                }
                if let Some((target, claim)) = best {
                    if claim >= half() {
                        push_pointer(&mut state, &owner_id, &slot_name, &target);
                    }
                }
            }
        }
    }

    // Synthesized relation objects per kept anchor, dropped when no role
    // fires.
    for ty in schema.types.iter().filter(|t| t.synthesized) {
        let anchor_slot = ty.anchor.as_deref().expect("validated");
        let anchor_targets: Vec<String> = ty
            .slot(anchor_slot)
            .map(|s| s.targets().to_vec())
            .unwrap_or_default();
        let anchors: Vec<String> = state
            .objects
            .iter()
            .filter(|o| anchor_targets.iter().any(|x| *x == o.type_name))
            .map(|o| o.id.clone())
            .collect();
        for anchor_id in anchors {
            let anchor = state.get(&anchor_id).expect("anchor").clone();
            let anchor_ty = schema.type_def(&anchor.type_name).expect("known");
            let anchor_tok = type_value(
                schema,
                &anchor.type_name,
                anchor.data_value(&anchor_ty.key_slot().name),
            )
            .to_string();
            let mut roles: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for slot in ty.pointer_slots() {
                if slot.name == anchor_slot {
                    continue;
                }
                for t in &state.objects {
                    if !slot.targets().iter().any(|x| *x == t.type_name) {
                        continue;
                    }
                    let t_ty = schema.type_def(&t.type_name).expect("known");
                    let tok = type_value(schema, &t.type_name, t.data_value(&t_ty.key_slot().name));
                    let p = rules.relation_prob(
                        &ty.name,
                        &slot.name,
                        &anchor_tok,
                        tok,
                        nearest_bucket(&anchor, t),
                    );
                    if p >= half() {
                        roles.entry(slot.name.clone()).or_default().push(t.id.clone());
                        if !slot.is_multi() {
                            break;
                        }
                    }
                }
            }
            if !roles.is_empty() {
                let mut cap = ExtractedObject::new(&format!("{}@{anchor_id}", ty.name), &ty.name);
                cap.pointers.insert(anchor_slot.to_string(), vec![anchor_id.clone()]);
                for (slot, fills) in roles {
                    cap.pointers.insert(slot, fills);
                }
                state.objects.push(cap);
            }
        }
    }

    // Root object.
    if let Some(root) = schema.root.clone() {
        let ty = schema.type_def(&root).expect("validated root");
        if !ty.synthesized {
            let mut pointers: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for slot in ty.pointer_slots() {
                for t in &state.objects {
                    if !slot.targets().iter().any(|x| *x == t.type_name) {
                        continue;
                    }
                    let t_ty = schema.type_def(&t.type_name).expect("known");
                    let tok = type_value(schema, &t.type_name, t.data_value(&t_ty.key_slot().name));
                    let p = rules.relation_prob(&root, &slot.name, &root, tok, None);
                    if p >= half() {
                        pointers.entry(slot.name.clone()).or_default().push(t.id.clone());
                        if !slot.is_multi() {
                            break;
                        }
                    }
                }
            }
            if !pointers.is_empty() {
                let mut obj = ExtractedObject::new(&format!("{root}@root"), &root);
                obj.pointers = pointers;
                state.objects.push(obj);
            }
        }
    }

    // Missing parents: an orphan gets an unknown-keyed parent when an
    // omitted parent points at it with probability at least one half.
    infer_missing_parents(rules, doc, &mut state);

    // Default slot values.
    for obj in &mut state.objects {
        let Some(gen) = rules.types.get(&obj.type_name) else { continue };
        let Some(ty) = schema.type_def(&obj.type_name) else { continue };
        for slot in &ty.slots {
            if !slot.inferable || obj.data_value(&slot.name).is_some() {
                continue;
            }
            let Some(sg) = gen.slots.get(&slot.name) else { continue };
            let best = sg
                .values
                .iter()
                .map(|wv| (wv.value.clone(), sg.fill * weight_of(&sg.values, &wv.value)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            if let Some((value, p)) = best {
                if p >= half() {
                    obj.closed.insert(slot.name.clone(), value);
                }
            }
        }
    }

    fill_back_pointers(schema, &mut state);
    let root = schema
        .root
        .as_ref()
        .and_then(|r| state.objects.iter().find(|o| &o.type_name == r))
        .map(|o| o.id.clone());
    OutputGraph {
        doc_id: state.doc_id,
        root,
        objects: state.objects,
    }
}

fn push_pointer(state: &mut GraphState, owner: &str, slot: &str, target: &str) {
    if let Some(obj) = state.get_mut(owner) {
        let fill = obj.pointers.entry(slot.to_string()).or_default();
        if !fill.iter().any(|t| t == target) {
            fill.push(target.to_string());
        }
    }
}

fn infer_missing_parents<R: Real>(
    rules: &GenRules<R>,
    doc: &DocumentInput,
    state: &mut GraphState,
) {
    let schema = &rules.schema;
    let mut pointed: Vec<String> = Vec::new();
    for obj in &state.objects {
        let Some(ty) = schema.type_def(&obj.type_name) else { continue };
        for slot in ty.pointer_slots() {
            pointed.extend(obj.pointer_fill(&slot.name).iter().cloned());
        }
    }
    let orphans: Vec<String> = state
        .objects
        .iter()
        .filter(|o| !pointed.contains(&o.id) && !schema.is_root(&o.type_name))
        .map(|o| o.id.clone())
        .collect();

    for orphan_id in orphans {
        let orphan = state.get(&orphan_id).expect("orphan").clone();
        let mut best: Option<(String, String, R)> = None;
        for ty in &schema.types {
            let Some(gen) = rules.types.get(&ty.name) else { continue };
            if gen.omit_rate <= R::zero() || gen.count_min != gen.count_max {
                continue;
            }
            let visible = doc
                .objects
                .iter()
                .filter(|o| o.type_name == ty.name)
                .count();
            let hidden = gen.count_min.saturating_sub(visible);
            if hidden == 0 {
                continue;
            }
            for slot in ty.pointer_slots() {
                if !slot.targets().iter().any(|t| *t == orphan.type_name) {
                    continue;
                }
                // Omitted parents have unknown homes; only bucket-free
                // rules give an exact edge probability.
                let p = rules.relation_prob(&ty.name, &slot.name, "*", "*", None);
                let p_edge = R::one() - (R::one() - p).powi(hidden as i32);
                if p_edge >= half() && best.as_ref().map_or(true, |(_, _, b)| p_edge > *b) {
                    best = Some((ty.name.clone(), slot.name.clone(), p_edge));
                }
            }
        }
        if let Some((parent_ty_name, slot_name, _)) = best {
            let parent_ty = schema.type_def(&parent_ty_name).expect("known");
            let mut parent = ExtractedObject::new(
                &format!("{parent_ty_name}@{orphan_id}"),
                &parent_ty_name,
            );
            let key_slot = parent_ty.key_slot();
            match key_slot.kind {
                SlotKind::Closed { .. } => {
                    parent
                        .closed
                        .insert(key_slot.name.clone(), crate::schema::UNKNOWN.to_string());
                }
                SlotKind::Open => {
                    parent
                        .open
                        .insert(key_slot.name.clone(), crate::schema::UNKNOWN.to_string());
                }
                SlotKind::Pointer { .. } => {}
            }
            parent.pointers.insert(slot_name, vec![orphan_id]);
            state.objects.push(parent);
        }
    }
}
