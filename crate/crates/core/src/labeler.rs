//! Supervised classification of training instances by matching extracted
//! objects against answer keys.
//!
//! An object matches a key object when the key slots agree (an empty
//! extracted key slot matches any key object of the type) and every filled
//! forward pointer of the object is mirrored by a pointer to a matching
//! key object. Matching is recursive; cycles are resolved coinductively by
//! treating in-progress pairs as provisional matches.

use std::collections::{BTreeMap, HashMap};

use crate::frames::{normalize, AnswerKey, ExtractedObject, KeyObject};
use crate::id3::{Label, NEGATIVE, NONE, POSITIVE};
use crate::schema::{OutputSchema, SlotKind};

#[derive(Clone, Copy, PartialEq)]
enum MatchState {
    InProgress,
    Match,
    NoMatch,
}

/// Per-document matching context: the live object graph, one answer key,
/// and a memo reset per top-level query.
pub struct Matcher<'a> {
    schema: &'a OutputSchema,
    objects: HashMap<&'a str, &'a ExtractedObject>,
    key_by_id: HashMap<&'a str, &'a KeyObject>,
    key_by_type: BTreeMap<&'a str, Vec<&'a KeyObject>>,
    memo: HashMap<(String, String), MatchState>,
}

impl<'a> Matcher<'a> {
    pub fn new(
        schema: &'a OutputSchema,
        objects: &'a [ExtractedObject],
        key: &'a AnswerKey,
    ) -> Self {
        let mut key_by_type: BTreeMap<&str, Vec<&KeyObject>> = BTreeMap::new();
        for k in &key.objects {
            key_by_type.entry(k.type_name.as_str()).or_default().push(k);
        }
        Matcher {
            schema,
            objects: objects.iter().map(|o| (o.id.as_str(), o)).collect(),
            key_by_id: key.objects.iter().map(|k| (k.id.as_str(), k)).collect(),
            key_by_type,
            memo: HashMap::new(),
        }
    }

    fn keys_of_type(&self, ty: &str) -> &[&'a KeyObject] {
        self.key_by_type.get(ty).map(Vec::as_slice).unwrap_or(&[])
    }

    /// True when `e` matches key object `k`.
    pub fn matches(&mut self, e: &ExtractedObject, k: &KeyObject) -> bool {
        self.memo.clear();
        self.match_rec(e, k, None)
    }

    /// As [`Matcher::matches`], ignoring `skip_slot` on the top object
    /// (used when labeling split decisions).
    pub fn matches_ignoring(&mut self, e: &ExtractedObject, k: &KeyObject, skip_slot: &str) -> bool {
        self.memo.clear();
        self.match_rec(e, k, Some(skip_slot))
    }

    fn match_rec(&mut self, e: &ExtractedObject, k: &KeyObject, skip: Option<&str>) -> bool {
        if e.type_name != k.type_name {
            return false;
        }
        let memo_key = (e.id.clone(), k.id.clone());
        if skip.is_none() {
            match self.memo.get(&memo_key) {
                Some(MatchState::Match) | Some(MatchState::InProgress) => return true,
                Some(MatchState::NoMatch) => return false,
                None => {}
            }
            self.memo.insert(memo_key.clone(), MatchState::InProgress);
        }
        let result = self.match_body(e, k, skip);
        if skip.is_none() {
            let state = if result { MatchState::Match } else { MatchState::NoMatch };
            self.memo.insert(memo_key, state);
        }
        result
    }

    fn match_body(&mut self, e: &ExtractedObject, k: &KeyObject, skip: Option<&str>) -> bool {
        let Some(ty) = self.schema.type_def(&e.type_name) else {
            return false;
        };
        let key_slot = ty.key_slot();
        if !key_slot.kind.is_pointer() {
            // An object with a missing key value still matches; a filled
            // one must agree.
            if let Some(v) = e.data_value(&key_slot.name) {
                match k.data_value(&key_slot.name) {
                    Some(kv) if values_equal(&key_slot.kind, v, kv) => {}
                    _ => return false,
                }
            }
        }
        // Every pointer of e must be mirrored by a pointer to a matching
        // key object in the same slot.
        let slots: Vec<String> = ty.pointer_slots().map(|s| s.name.clone()).collect();
        for slot in slots {
            if skip == Some(slot.as_str()) {
                continue;
            }
            let fills: Vec<String> = e.pointer_fill(&slot).to_vec();
            let k_fills: Vec<&'a KeyObject> = k
                .pointer_fill(&slot)
                .iter()
                .filter_map(|id| self.key_by_id.get(id.as_str()).copied())
                .collect();
            for b_id in fills {
                let Some(b) = self.objects.get(b_id.as_str()).copied() else {
                    continue;
                };
                let ok = k_fills.iter().any(|k2| {
                    let k2 = *k2;
                    k2.type_name == b.type_name && self.match_rec(b, k2, None)
                });
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    /// Key objects matching `e`, in key declaration order.
    fn matching_keys(&mut self, e: &ExtractedObject) -> Vec<&'a KeyObject> {
        let candidates = self.keys_of_type(&e.type_name).to_vec();
        candidates
            .into_iter()
            .filter(|k| {
                let k = *k;
                self.matches(e, k)
            })
            .collect()
    }

    /// Stage 1: positive iff some key object of the type carries the
    /// extracted value in that slot.
    pub fn label_filter(&mut self, obj: &ExtractedObject, slot: &str) -> Label {
        let Some(value) = obj.data_value(slot) else {
            return NEGATIVE.to_string();
        };
        let kind = self
            .schema
            .type_def(&obj.type_name)
            .and_then(|t| t.slot(slot))
            .map(|s| s.kind.clone())
            .unwrap_or(SlotKind::Open);
        let hit = self
            .keys_of_type(&obj.type_name)
            .iter()
            .any(|k| matches!(k.data_value(slot), Some(kv) if values_equal(&kind, value, kv)));
        binary(hit)
    }

    /// Stage 2: positive iff one key object is consistent with every
    /// filled data slot of both objects.
    pub fn label_merge(&mut self, a: &ExtractedObject, b: &ExtractedObject) -> Label {
        let hit = self
            .keys_of_type(&a.type_name)
            .iter()
            .any(|k| consistent(self.schema, k, a) && consistent(self.schema, k, b));
        binary(hit)
    }

    /// Stage 3: positive iff the key links a match of `owner` to a match
    /// of `target` in this slot.
    pub fn label_link(&mut self, owner: &ExtractedObject, target: &ExtractedObject, slot: &str) -> Label {
        let owners = self.keys_of_type(&owner.type_name).to_vec();
        for k_o in owners {
            if !self.matches(owner, k_o) {
                continue;
            }
            let targets: Vec<&KeyObject> = k_o
                .pointer_fill(slot)
                .iter()
                .filter_map(|id| self.key_by_id.get(id.as_str()).copied())
                .collect();
            for k_t in targets {
                if k_t.type_name == target.type_name && self.matches(target, k_t) {
                    return POSITIVE.to_string();
                }
            }
        }
        NEGATIVE.to_string()
    }

    /// Stage 4: positive iff the key holds two distinct owners (ignoring
    /// the split slot), one pointing only at a match of `b` and the other
    /// only at a match of `c`.
    pub fn label_split(
        &mut self,
        owner: &ExtractedObject,
        b: &ExtractedObject,
        c: &ExtractedObject,
        slot: &str,
    ) -> Label {
        let b_ids: Vec<&str> = self
            .matching_keys(b)
            .into_iter()
            .map(|k| k.id.as_str())
            .collect();
        let c_ids: Vec<&str> = self
            .matching_keys(c)
            .into_iter()
            .map(|k| k.id.as_str())
            .collect();
        if b_ids.is_empty() || c_ids.is_empty() {
            return NEGATIVE.to_string();
        }
        let candidates: Vec<&KeyObject> = self
            .keys_of_type(&owner.type_name)
            .to_vec()
            .into_iter()
            .filter(|k| {
                let k = *k;
                self.matches_ignoring(owner, k, slot)
            })
            .collect();
        let points_into = |k: &KeyObject, ids: &[&str]| {
            k.pointer_fill(slot).iter().any(|f| ids.contains(&f.as_str()))
        };
        for k1 in &candidates {
            for k2 in &candidates {
                if k1.id == k2.id {
                    continue;
                }
                if points_into(k1, &b_ids)
                    && !points_into(k1, &c_ids)
                    && points_into(k2, &c_ids)
                    && !points_into(k2, &b_ids)
                {
                    return POSITIVE.to_string();
                }
            }
        }
        NEGATIVE.to_string()
    }

    /// Stage 5: the (parent type, slot) that points at the orphan's match
    /// in the key, or `none`. Multiple parents resolve to the earliest in
    /// `link_order`.
    pub fn label_orphan(
        &mut self,
        obj: &ExtractedObject,
        link_order: &[(String, String)],
    ) -> Label {
        let matched = self.matching_keys(obj);
        let mut best: Option<usize> = None;
        for k in matched {
            for p in self.key_by_id.values() {
                let Some(pty) = self.schema.type_def(&p.type_name) else {
                    continue;
                };
                for slot in pty.pointer_slots() {
                    if !p.pointer_fill(&slot.name).iter().any(|id| id == &k.id) {
                        continue;
                    }
                    let pos = link_order
                        .iter()
                        .position(|(t, s)| t == &p.type_name && s == &slot.name);
                    if let Some(pos) = pos {
                        best = Some(match best {
                            None => pos,
                            Some(b) => b.min(pos),
                        });
                    }
                }
            }
        }
        match best {
            Some(pos) => {
                let (ty, slot) = &link_order[pos];
                crate::schema::parent_label(ty, slot)
            }
            None => NONE.to_string(),
        }
    }

    /// Stage 6: the matched key object's value for an empty closed slot,
    /// or negative.
    pub fn label_default_slot(&mut self, obj: &ExtractedObject, slot: &str) -> Label {
        let matched = self.matching_keys(obj);
        for k in matched {
            if let Some(v) = k.data_value(slot) {
                return v.to_string();
            }
        }
        NEGATIVE.to_string()
    }
}

fn binary(hit: bool) -> Label {
    if hit { POSITIVE } else { NEGATIVE }.to_string()
}

fn values_equal(kind: &SlotKind, a: &str, b: &str) -> bool {
    match kind {
        SlotKind::Open => normalize(a) == normalize(b),
        _ => a == b,
    }
}

/// True when `k` carries every filled data slot of `x` with an equal value.
fn consistent(schema: &OutputSchema, k: &KeyObject, x: &ExtractedObject) -> bool {
    let Some(ty) = schema.type_def(&x.type_name) else {
        return false;
    };
    for (slot, v) in x.closed.iter().chain(x.open.iter()) {
        let kind = ty
            .slot(slot)
            .map(|s| s.kind.clone())
            .unwrap_or(SlotKind::Open);
        match k.data_value(slot) {
            Some(kv) if values_equal(&kind, v, kv) => {}
            _ => return false,
        }
    }
    true
}
