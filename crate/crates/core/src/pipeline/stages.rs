//! The six discourse stages: decision enumeration and graph edits.
//!
//! Each stage first enumerates its decisions against a snapshot of the
//! graph, then applies the classified decisions. Training and run time
//! share the enumerators, so training instances reflect exactly the
//! decisions the pipeline will face.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;

use crate::features::{
    encode_pair, encode_single, encode_triple, FeatureContext, Instance,
};
use crate::frames::ExtractedObject;
use crate::id3::{Confidence, Label, NEGATIVE, NONE, POSITIVE};
use crate::schema::{OutputSchema, SlotKind, TreeSpec, UNKNOWN};

/// Mutable per-document object graph.
#[derive(Clone, Debug)]
pub struct GraphState {
    pub doc_id: String,
    pub objects: Vec<ExtractedObject>,
}

impl GraphState {
    pub fn new(doc_id: &str, objects: Vec<ExtractedObject>) -> Self {
        GraphState {
            doc_id: doc_id.to_string(),
            objects,
        }
    }

    pub fn get(&self, id: &str) -> Option<&ExtractedObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut ExtractedObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    fn unique_id(&self, base: &str) -> String {
        if self.get(base).is_none() {
            return base.to_string();
        }
        let mut n = 2;
        loop {
            let candidate = format!("{base}.{n}");
            if self.get(&candidate).is_none() {
                return candidate;
            }
            n += 1;
        }
    }
}

/// Resolves one discourse decision. `None` means no trained tree exists,
/// in which case every stage takes its no-action default.
pub trait TreeSource {
    fn classify(&self, spec: &TreeSpec, instance: &Instance) -> Option<(Label, Confidence)>;
}

// ---------------------------------------------------------------------------
// Stage 1: slot filtering
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct FilterDecision {
    pub obj: String,
    pub slot: String,
    pub spec: TreeSpec,
    pub instance: Instance,
}

/// One decision per filled non-pointer slot.
pub fn filter_decisions(schema: &OutputSchema, objects: &[ExtractedObject]) -> Vec<FilterDecision> {
    let ctx = FeatureContext::new(schema, objects);
    let mut out = Vec::new();
    for obj in objects {
        let Some(ty) = schema.type_def(&obj.type_name) else { continue };
        for slot in ty.data_slots() {
            if obj.data_value(&slot.name).is_none() {
                continue;
            }
            out.push(FilterDecision {
                obj: obj.id.clone(),
                slot: slot.name.clone(),
                spec: TreeSpec::Filter {
                    owner: obj.type_name.clone(),
                    slot: slot.name.clone(),
                },
                instance: encode_single(obj, &ctx),
            });
        }
    }
    out
}

/// Clear the named slots, then drop objects left with no data at all.
pub fn apply_filter(state: &mut GraphState, discard: &BTreeSet<(String, String)>) {
    for obj in &mut state.objects {
        let cleared: Vec<String> = discard
            .iter()
            .filter(|(id, _)| *id == obj.id)
            .map(|(_, slot)| slot.clone())
            .collect();
        for slot in cleared {
            obj.closed.remove(&slot);
            obj.open.remove(&slot);
        }
    }
    state.objects.retain(|o| o.has_data());
}

/// Discard a slot value when its tree returns negative; an untrained tree
/// keeps the value.
pub fn run_filter(schema: &OutputSchema, state: &mut GraphState, source: &dyn TreeSource) {
    let decisions = filter_decisions(schema, &state.objects);
    let mut discard = BTreeSet::new();
    for d in decisions {
        if let Some((label, _)) = source.classify(&d.spec, &d.instance) {
            if label == NEGATIVE {
                discard.insert((d.obj, d.slot));
            }
        }
    }
    apply_filter(state, &discard);
}

// ---------------------------------------------------------------------------
// Stage 2: slot merging
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct MergeDecision {
    pub a: String,
    pub b: String,
    pub spec: TreeSpec,
    pub instance: Instance,
}

/// One decision per unordered same-type pair (non-synthesized types).
pub fn merge_decisions(schema: &OutputSchema, objects: &[ExtractedObject]) -> Vec<MergeDecision> {
    let ctx = FeatureContext::new(schema, objects);
    let mut out = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        let Some(ty) = schema.type_def(&a.type_name) else { continue };
        if ty.synthesized {
            continue;
        }
        for b in objects.iter().skip(i + 1) {
            if b.type_name != a.type_name {
                continue;
            }
            out.push(MergeDecision {
                a: a.id.clone(),
                b: b.id.clone(),
                spec: TreeSpec::Merge { owner: a.type_name.clone() },
                instance: encode_pair(a, b, &ctx),
            });
        }
    }
    out
}

fn slot_conflict(schema: &OutputSchema, a: &ExtractedObject, b: &ExtractedObject) -> Option<String> {
    let ty = schema.type_def(&a.type_name)?;
    for slot in ty.data_slots() {
        if let (Some(va), Some(vb)) = (a.data_value(&slot.name), b.data_value(&slot.name)) {
            let equal = match slot.kind {
                SlotKind::Open => crate::frames::normalize(va) == crate::frames::normalize(vb),
                _ => va == vb,
            };
            if !equal {
                return Some(slot.name.clone());
            }
        }
    }
    None
}

/// Union positive pairs transitively; pairs with conflicting filled slot
/// values are skipped and reported.
pub fn apply_merge(
    schema: &OutputSchema,
    state: &mut GraphState,
    positives: &[(String, String)],
) -> Vec<String> {
    debug_assert!(
        state
            .objects
            .iter()
            .all(|o| o.pointers.values().all(Vec::is_empty)),
        "merging happens before any links exist"
    );
    let mut warnings = Vec::new();
    let n = state.objects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let root = find(parent, parent[x]);
            parent[x] = root;
        }
        parent[x]
    }
    for (a, b) in positives {
        let (Some(ia), Some(ib)) = (state.position(a), state.position(b)) else {
            continue;
        };
        if slot_conflict(schema, &state.objects[ia], &state.objects[ib]).is_some() {
            warnings.push(format!(
                "{}: merge of {a} and {b} skipped, conflicting slot values",
                state.doc_id
            ));
            continue;
        }
        let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
        if ra != rb {
            // Attach the later root under the earlier one.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    let mut merged: Vec<ExtractedObject> = Vec::with_capacity(groups.len());
    for (_, members) in groups {
        let mut it = members.iter();
        let first = *it.next().expect("non-empty group");
        let mut obj = state.objects[first].clone();
        for &m in it {
            let other = &state.objects[m];
            if let Some(slot) = slot_conflict(schema, &obj, other) {
                warnings.push(format!(
                    "{}: transitive merge of {} and {} keeps first value for slot {slot}",
                    state.doc_id, obj.id, other.id
                ));
            }
            for (k, v) in &other.closed {
                obj.closed.entry(k.clone()).or_insert_with(|| v.clone());
            }
            for (k, v) in &other.open {
                obj.open.entry(k.clone()).or_insert_with(|| v.clone());
            }
            obj.references.extend(other.references.iter().cloned());
        }
        merged.push(obj);
    }
    state.objects = merged;
    warnings
}

/// Merge same-type pairs whose tree returns positive.
pub fn run_merge(
    schema: &OutputSchema,
    state: &mut GraphState,
    source: &dyn TreeSource,
) -> Vec<String> {
    let decisions = merge_decisions(schema, &state.objects);
    let mut positives = Vec::new();
    for d in decisions {
        if let Some((label, _)) = source.classify(&d.spec, &d.instance) {
            if label == POSITIVE {
                positives.push((d.a, d.b));
            }
        }
    }
    apply_merge(schema, state, &positives)
}

// ---------------------------------------------------------------------------
// Stage 3: link creation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LinkDecision {
    pub owner: String,
    pub target: String,
    pub spec: TreeSpec,
    pub instance: Instance,
}

/// Slot traversal plan: the slot order plus, per position, the types whose
/// outgoing slots are all processed once that position is done.
pub struct LinkPlan {
    pub order: Vec<(String, String)>,
    pub completed_after: Vec<Vec<String>>,
}

pub fn link_plan(schema: &OutputSchema) -> LinkPlan {
    let order = crate::schema::link_order(schema);
    let mut last: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, (ty, _)) in order.iter().enumerate() {
        last.insert(ty.as_str(), i);
    }
    let mut completed_after = vec![Vec::new(); order.len()];
    for (ty, i) in last {
        completed_after[i].push(ty.to_string());
    }
    LinkPlan { order, completed_after }
}

/// True when this slot is filled mechanically rather than by a tree: the
/// anchor of a synthesized type.
pub fn is_anchor_slot(schema: &OutputSchema, ty: &str, slot: &str) -> bool {
    schema
        .type_def(ty)
        .map(|t| t.synthesized && t.anchor.as_deref() == Some(slot))
        .unwrap_or(false)
}

/// Candidate pairs for one slot of the plan, on the current graph.
pub fn link_slot_decisions(
    schema: &OutputSchema,
    objects: &[ExtractedObject],
    owner_ty: &str,
    slot_name: &str,
) -> Vec<LinkDecision> {
    let Some(ty) = schema.type_def(owner_ty) else { return Vec::new() };
    let Some(slot) = ty.slot(slot_name) else { return Vec::new() };
    let ctx = FeatureContext::new(schema, objects);
    let mut out = Vec::new();
    for owner in objects.iter().filter(|o| o.type_name == owner_ty) {
        let existing = owner.pointer_fill(slot_name);
        for target in objects {
            if target.id == owner.id
                || !slot.targets().iter().any(|t| *t == target.type_name)
                || existing.contains(&target.id)
            {
                continue;
            }
            out.push(LinkDecision {
                owner: owner.id.clone(),
                target: target.id.clone(),
                spec: TreeSpec::Link {
                    owner: owner_ty.to_string(),
                    slot: slot_name.to_string(),
                    target: target.type_name.clone(),
                },
                instance: encode_pair(owner, target, &ctx),
            });
        }
    }
    out
}

/// Reduce classified candidates to the pointers to add. Multi-valued slots
/// take every positive; single-valued slots take the highest-confidence
/// positive (first by decision order on ties) if the slot is still empty.
pub fn resolve_link_positives(
    schema: &OutputSchema,
    objects: &[ExtractedObject],
    owner_ty: &str,
    slot_name: &str,
    classified: &[(LinkDecision, Label, Confidence)],
) -> Vec<(String, String, Confidence)> {
    let multi = schema
        .type_def(owner_ty)
        .and_then(|t| t.slot(slot_name))
        .map(|s| s.is_multi())
        .unwrap_or(false);
    let mut out = Vec::new();
    if multi {
        for (d, label, conf) in classified {
            if label == POSITIVE {
                out.push((d.owner.clone(), d.target.clone(), *conf));
            }
        }
    } else {
        let mut best: BTreeMap<&str, (usize, Confidence)> = BTreeMap::new();
        for (pos, (d, label, conf)) in classified.iter().enumerate() {
            if label != POSITIVE {
                continue;
            }
            let entry = best.entry(d.owner.as_str());
            match entry {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert((pos, *conf));
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    if *conf > o.get().1 {
                        o.insert((pos, *conf));
                    }
                }
            }
        }
        for (owner, (pos, conf)) in best {
            let filled = objects
                .iter()
                .find(|o| o.id == owner)
                .map(|o| !o.pointer_fill(slot_name).is_empty())
                .unwrap_or(false);
            if !filled {
                out.push((owner.to_string(), classified[pos].0.target.clone(), conf));
            }
        }
    }
    out
}

pub fn add_pointer(state: &mut GraphState, owner: &str, slot: &str, target: &str) {
    if let Some(obj) = state.get_mut(owner) {
        let fill = obj.pointers.entry(slot.to_string()).or_default();
        if !fill.iter().any(|t| t == target) {
            fill.push(target.to_string());
        }
    }
}

/// Materialize one synthesized object per anchor candidate, inheriting the
/// anchor's context through the anchor pointer, and inject the dummy root
/// object when the schema declares a non-synthesized root type.
pub fn materialize_synthesized(schema: &OutputSchema, state: &mut GraphState) {
    for ty in &schema.types {
        if !ty.synthesized {
            continue;
        }
        let anchor = ty.anchor.as_deref().expect("validated synthesized type");
        let targets: Vec<String> = ty
            .slot(anchor)
            .map(|s| s.targets().to_vec())
            .unwrap_or_default();
        let anchors: Vec<String> = state
            .objects
            .iter()
            .filter(|o| targets.iter().any(|t| *t == o.type_name))
            .map(|o| o.id.clone())
            .collect();
        for anchor_id in anchors {
            let id = state.unique_id(&format!("{}@{anchor_id}", ty.name));
            let mut obj = ExtractedObject::new(&id, &ty.name);
            obj.pointers.insert(anchor.to_string(), vec![anchor_id]);
            state.objects.push(obj);
        }
    }
    // A declared, non-synthesized root type gets one dummy object.
    if let Some(root) = &schema.root {
        if !schema.type_def(root).map(|t| t.synthesized).unwrap_or(true) {
            let id = state.unique_id(&format!("{root}@root"));
            state.objects.push(ExtractedObject::new(&id, root));
        }
    }
}

/// Remove dummy root objects that never acquired a pointer (an input
/// object survives: by stage 3 it has carried data through filtering).
pub fn drop_pointerless_root(schema: &OutputSchema, state: &mut GraphState) {
    let Some(root) = &schema.root else { return };
    state.objects.retain(|o| {
        &o.type_name != root || o.has_data() || o.pointers.values().any(|f| !f.is_empty())
    });
}

/// Enforce single-role groups for owners of `ty`: a target claimed by
/// several slots of one group keeps only the highest-confidence link.
pub fn enforce_single_role(
    schema: &OutputSchema,
    state: &mut GraphState,
    ty_name: &str,
    confidence: &BTreeMap<(String, String, String), Confidence>,
) {
    let Some(ty) = schema.type_def(ty_name) else { return };
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for slot in ty.pointer_slots() {
        if let Some(g) = &slot.single_role {
            groups.entry(g.as_str()).or_default().push(slot.name.as_str());
        }
    }
    if groups.is_empty() {
        return;
    }
    let owner_ids: Vec<String> = state
        .objects
        .iter()
        .filter(|o| o.type_name == ty_name)
        .map(|o| o.id.clone())
        .collect();
    for owner in owner_ids {
        for slots in groups.values() {
            let mut claims: BTreeMap<String, Vec<(usize, &str)>> = BTreeMap::new();
            for (si, slot) in slots.iter().enumerate() {
                let fills = state
                    .get(&owner)
                    .map(|o| o.pointer_fill(slot).to_vec())
                    .unwrap_or_default();
                for target in fills {
                    claims.entry(target).or_default().push((si, slot));
                }
            }
            for (target, holders) in claims {
                if holders.len() < 2 {
                    continue;
                }
                // Highest confidence wins; declaration order breaks ties.
                let zero = Ratio::new(0, 1);
                let keep = holders
                    .iter()
                    .max_by(|a, b| {
                        let ca = confidence
                            .get(&(owner.clone(), a.1.to_string(), target.clone()))
                            .copied()
                            .unwrap_or(zero);
                        let cb = confidence
                            .get(&(owner.clone(), b.1.to_string(), target.clone()))
                            .copied()
                            .unwrap_or(zero);
                        ca.cmp(&cb).then(b.0.cmp(&a.0))
                    })
                    .expect("non-empty holders")
                    .0;
                for (si, slot) in &holders {
                    if *si == keep {
                        continue;
                    }
                    if let Some(obj) = state.get_mut(&owner) {
                        if let Some(fill) = obj.pointers.get_mut(*slot) {
                            fill.retain(|t| t != &target);
                        }
                    }
                }
            }
        }
    }
}

/// Drop synthesized objects of `ty` that carry nothing beyond their anchor
/// pointer, along with any pointers at them.
pub fn drop_roleless_synthesized(schema: &OutputSchema, state: &mut GraphState, ty_name: &str) {
    let Some(ty) = schema.type_def(ty_name) else { return };
    if !ty.synthesized {
        return;
    }
    let anchor = ty.anchor.as_deref().unwrap_or_default();
    let dropped: BTreeSet<String> = state
        .objects
        .iter()
        .filter(|o| {
            o.type_name == ty_name
                && o.pointers
                    .iter()
                    .all(|(slot, fill)| slot == anchor || fill.is_empty())
                && !o.has_data()
        })
        .map(|o| o.id.clone())
        .collect();
    if dropped.is_empty() {
        return;
    }
    state.objects.retain(|o| !dropped.contains(&o.id));
    for obj in &mut state.objects {
        for fill in obj.pointers.values_mut() {
            fill.retain(|t| !dropped.contains(t));
        }
    }
}

/// Refill every back-pointer slot from the forward pointers: for each
/// forward pointer A.s -> B, B's first declared back-pointer slot that
/// admits A's type receives A.
pub fn fill_back_pointers(schema: &OutputSchema, state: &mut GraphState) {
    for obj in &mut state.objects {
        if let Some(ty) = schema.type_def(&obj.type_name) {
            for slot in &ty.slots {
                if slot.back_pointer {
                    obj.pointers.remove(&slot.name);
                }
            }
        }
    }
    let mut additions: Vec<(String, String, String)> = Vec::new();
    for obj in &state.objects {
        let Some(ty) = schema.type_def(&obj.type_name) else { continue };
        for slot in ty.pointer_slots() {
            for target_id in obj.pointer_fill(&slot.name) {
                let Some(target) = state.get(target_id) else { continue };
                let Some(tty) = schema.type_def(&target.type_name) else { continue };
                let back = tty.slots.iter().find(|s| {
                    s.back_pointer && s.targets().iter().any(|t| *t == obj.type_name)
                });
                if let Some(back) = back {
                    additions.push((target_id.clone(), back.name.clone(), obj.id.clone()));
                }
            }
        }
    }
    for (owner, slot, target) in additions {
        add_pointer(state, &owner, &slot, &target);
    }
}

/// Full link stage: materialize synthesized objects, walk the slot plan,
/// enforce single-role groups, drop role-less synthesized objects and a
/// pointer-less injected root, then mirror back pointers.
pub fn run_link(schema: &OutputSchema, state: &mut GraphState, source: &dyn TreeSource) {
    let plan = link_plan(schema);
    materialize_synthesized(schema, state);
    let mut confidence: BTreeMap<(String, String, String), Confidence> = BTreeMap::new();

    for (i, (ty, slot)) in plan.order.iter().enumerate() {
        if !is_anchor_slot(schema, ty, slot) {
            let decisions = link_slot_decisions(schema, &state.objects, ty, slot);
            let classified: Vec<(LinkDecision, Label, Confidence)> = decisions
                .into_iter()
                .map(|d| {
                    let (label, conf) = source
                        .classify(&d.spec, &d.instance)
                        .unwrap_or_else(|| (NEGATIVE.to_string(), Ratio::new(0, 1)));
                    (d, label, conf)
                })
                .collect();
            let additions =
                resolve_link_positives(schema, &state.objects, ty, slot, &classified);
            for (owner, target, conf) in additions {
                confidence.insert((owner.clone(), slot.clone(), target.clone()), conf);
                add_pointer(state, &owner, slot, &target);
            }
        }
        for done in &plan.completed_after[i] {
            enforce_single_role(schema, state, done, &confidence);
            drop_roleless_synthesized(schema, state, done);
        }
    }

    drop_pointerless_root(schema, state);
    fill_back_pointers(schema, state);
}

// ---------------------------------------------------------------------------
// Stage 4: object splitting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SplitDecision {
    pub owner: String,
    pub slot: String,
    pub pair: (String, String),
    pub spec: TreeSpec,
    pub instance: Instance,
}

fn splittable_slots(schema: &OutputSchema, ty_name: &str) -> Vec<String> {
    schema
        .type_def(ty_name)
        .map(|t| {
            t.pointer_slots()
                .filter(|s| s.is_multi())
                .map(|s| s.name.clone())
                .collect()
        })
        .unwrap_or_default()
}

/// One decision per target pair of every multi-valued slot holding two or
/// more targets.
pub fn split_decisions(schema: &OutputSchema, objects: &[ExtractedObject]) -> Vec<SplitDecision> {
    let ctx = FeatureContext::new(schema, objects);
    let by_id: BTreeMap<&str, &ExtractedObject> =
        objects.iter().map(|o| (o.id.as_str(), o)).collect();
    let mut out = Vec::new();
    for owner in objects {
        for slot in splittable_slots(schema, &owner.type_name) {
            let fills = owner.pointer_fill(&slot);
            if fills.len() < 2 {
                continue;
            }
            for i in 0..fills.len() {
                for j in (i + 1)..fills.len() {
                    let (Some(b), Some(c)) = (by_id.get(fills[i].as_str()), by_id.get(fills[j].as_str()))
                    else {
                        continue;
                    };
                    let Ok(instance) = encode_triple(owner, b, c, &ctx) else {
                        continue;
                    };
                    out.push(SplitDecision {
                        owner: owner.id.clone(),
                        slot: slot.clone(),
                        pair: (fills[i].clone(), fills[j].clone()),
                        spec: TreeSpec::Split {
                            owner: owner.type_name.clone(),
                            slot: slot.clone(),
                        },
                        instance,
                    });
                }
            }
        }
    }
    out
}

/// Split targets into the connected components of the keep-together
/// relation (edges = negative pairs), cloning the owner once per component
/// beyond the first. Clones duplicate every other slot and share pointer
/// fills.
pub fn apply_split(
    schema: &OutputSchema,
    state: &mut GraphState,
    keep_together: &BTreeMap<(String, String), Vec<(String, String)>>,
) {
    let owner_ids: Vec<String> = state.objects.iter().map(|o| o.id.clone()).collect();
    for owner_id in owner_ids {
        let Some(owner) = state.get(&owner_id) else { continue };
        let ty_name = owner.type_name.clone();
        // Copies of this owner produced so far; splits on later slots apply
        // to each copy, which share identical fills.
        let mut copies = vec![owner_id.clone()];
        for slot in splittable_slots(schema, &ty_name) {
            let fills = state
                .get(&owner_id)
                .map(|o| o.pointer_fill(&slot).to_vec())
                .unwrap_or_default();
            if fills.len() < 2 {
                continue;
            }
            let components = components_of(
                &fills,
                keep_together
                    .get(&(owner_id.clone(), slot.clone()))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]),
            );
            if components.len() < 2 {
                continue;
            }
            let mut next_copies = Vec::new();
            for copy_id in &copies {
                let template = state.get(copy_id).expect("copy exists").clone();
                let pos = state.position(copy_id).expect("copy exists");
                for (ci, component) in components.iter().enumerate() {
                    if ci == 0 {
                        let obj = state.get_mut(copy_id).expect("copy exists");
                        obj.pointers.insert(slot.clone(), component.clone());
                        next_copies.push(copy_id.clone());
                    } else {
                        let id = state.unique_id(&format!("{copy_id}#{}", ci + 1));
                        let mut obj = template.clone();
                        obj.id = id.clone();
                        obj.pointers.insert(slot.clone(), component.clone());
                        state.objects.insert(pos + ci, obj);
                        next_copies.push(id);
                    }
                }
            }
            copies = next_copies;
        }
    }
    fill_back_pointers(schema, state);
}

fn components_of(fills: &[String], edges: &[(String, String)]) -> Vec<Vec<String>> {
    let n = fills.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let root = find(parent, parent[x]);
            parent[x] = root;
        }
        parent[x]
    }
    for (a, b) in edges {
        let (Some(ia), Some(ib)) = (
            fills.iter().position(|f| f == a),
            fills.iter().position(|f| f == b),
        ) else {
            continue;
        };
        let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }
    let mut comps: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(fills[i].clone());
    }
    comps.into_values().collect()
}

/// A positive pair splits apart; negative pairs stay together.
pub fn run_split(schema: &OutputSchema, state: &mut GraphState, source: &dyn TreeSource) {
    let decisions = split_decisions(schema, &state.objects);
    let mut keep: BTreeMap<(String, String), Vec<(String, String)>> = BTreeMap::new();
    for d in decisions {
        let positive = source
            .classify(&d.spec, &d.instance)
            .map(|(label, _)| label == POSITIVE)
            .unwrap_or(false);
        if !positive {
            keep.entry((d.owner.clone(), d.slot.clone()))
                .or_default()
                .push(d.pair.clone());
        } else {
            keep.entry((d.owner.clone(), d.slot.clone())).or_default();
        }
    }
    apply_split(schema, state, &keep);
}

// ---------------------------------------------------------------------------
// Stage 5: inferring missing objects
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct OrphanDecision {
    pub obj: String,
    pub spec: TreeSpec,
    pub instance: Instance,
}

/// Orphans: non-root objects of a pointer-target type with no incoming
/// forward pointer.
pub fn orphan_decisions(schema: &OutputSchema, objects: &[ExtractedObject]) -> Vec<OrphanDecision> {
    let targets = schema.pointer_targets();
    let mut pointed: BTreeSet<&str> = BTreeSet::new();
    for obj in objects {
        let Some(ty) = schema.type_def(&obj.type_name) else { continue };
        for slot in ty.pointer_slots() {
            for t in obj.pointer_fill(&slot.name) {
                pointed.insert(t.as_str());
            }
        }
    }
    let ctx = FeatureContext::new(schema, objects);
    objects
        .iter()
        .filter(|o| {
            targets.contains(o.type_name.as_str())
                && !schema.is_root(&o.type_name)
                && !pointed.contains(o.id.as_str())
        })
        .map(|o| OrphanDecision {
            obj: o.id.clone(),
            spec: TreeSpec::InferParent { orphan: o.type_name.clone() },
            instance: encode_single(o, &ctx),
        })
        .collect()
}

fn single_role_violation(
    schema: &OutputSchema,
    owner: &ExtractedObject,
    slot_name: &str,
    target: &str,
) -> bool {
    let Some(ty) = schema.type_def(&owner.type_name) else { return false };
    let Some(group) = ty.slot(slot_name).and_then(|s| s.single_role.clone()) else {
        return false;
    };
    ty.pointer_slots()
        .filter(|s| s.name != slot_name && s.single_role.as_deref() == Some(group.as_str()))
        .any(|s| owner.pointer_fill(&s.name).iter().any(|t| t == target))
}

/// Create a parent for each orphan whose tree names one, then tie the new
/// parent in with link and split trees restricted to instances involving
/// it. Exactly one inference pass; parents created here are not themselves
/// re-examined.
pub fn run_infer_objects(schema: &OutputSchema, state: &mut GraphState, source: &dyn TreeSource) {
    let decisions = orphan_decisions(schema, &state.objects);
    let plan = link_plan(schema);
    for d in decisions {
        let Some((label, _)) = source.classify(&d.spec, &d.instance) else {
            continue;
        };
        if label == NONE {
            continue;
        }
        let Some((parent_ty_name, slot_name)) = label.split_once('.') else {
            continue;
        };
        let Some(parent_ty) = schema.type_def(parent_ty_name) else { continue };
        let parent_id = state.unique_id(&format!("{parent_ty_name}@{}", d.obj));
        let mut parent = ExtractedObject::new(&parent_id, parent_ty_name);
        let key_slot = parent_ty.key_slot();
        match key_slot.kind {
            SlotKind::Closed { .. } => {
                parent.closed.insert(key_slot.name.clone(), UNKNOWN.to_string());
            }
            SlotKind::Open => {
                parent.open.insert(key_slot.name.clone(), UNKNOWN.to_string());
            }
            SlotKind::Pointer { .. } => {}
        }
        parent.pointers.insert(slot_name.to_string(), vec![d.obj.clone()]);
        state.objects.push(parent);
        tie_in(schema, state, source, &plan, &parent_id);
    }
    fill_back_pointers(schema, state);
}

/// Link and split re-runs restricted to pairs involving `new_id`.
fn tie_in(
    schema: &OutputSchema,
    state: &mut GraphState,
    source: &dyn TreeSource,
    plan: &LinkPlan,
    new_id: &str,
) {
    let new_ty = match state.get(new_id) {
        Some(o) => o.type_name.clone(),
        None => return,
    };
    let mut touched: BTreeSet<(String, String)> = BTreeSet::new();
    for (ty, slot) in &plan.order {
        if is_anchor_slot(schema, ty, slot) {
            continue;
        }
        let slot_def = schema.type_def(ty).and_then(|t| t.slot(slot));
        let Some(slot_def) = slot_def else { continue };
        let involves_as_owner = *ty == new_ty;
        let involves_as_target = slot_def.targets().iter().any(|t| *t == new_ty);
        if !involves_as_owner && !involves_as_target {
            continue;
        }
        let decisions: Vec<LinkDecision> = link_slot_decisions(schema, &state.objects, ty, slot)
            .into_iter()
            .filter(|d| d.owner == new_id || d.target == new_id)
            .collect();
        let classified: Vec<(LinkDecision, Label, Confidence)> = decisions
            .into_iter()
            .map(|d| {
                let (label, conf) = source
                    .classify(&d.spec, &d.instance)
                    .unwrap_or_else(|| (NEGATIVE.to_string(), Ratio::new(0, 1)));
                (d, label, conf)
            })
            .collect();
        let additions = resolve_link_positives(schema, &state.objects, ty, slot, &classified);
        for (owner, target, _) in additions {
            let violates = state
                .get(&owner)
                .map(|o| single_role_violation(schema, o, slot, &target))
                .unwrap_or(false);
            if !violates {
                add_pointer(state, &owner, slot, &target);
                touched.insert((owner, slot.clone()));
            }
        }
    }
    // Split re-run for slots that now hold several targets.
    let decisions: Vec<SplitDecision> = split_decisions(schema, &state.objects)
        .into_iter()
        .filter(|d| {
            touched.contains(&(d.owner.clone(), d.slot.clone())) || d.owner == new_id
        })
        .collect();
    if decisions.is_empty() {
        return;
    }
    let mut keep: BTreeMap<(String, String), Vec<(String, String)>> = BTreeMap::new();
    let mut affected: BTreeSet<String> = BTreeSet::new();
    for d in decisions {
        affected.insert(d.owner.clone());
        let positive = source
            .classify(&d.spec, &d.instance)
            .map(|(label, _)| label == POSITIVE)
            .unwrap_or(false);
        if !positive {
            keep.entry((d.owner.clone(), d.slot.clone()))
                .or_default()
                .push(d.pair.clone());
        } else {
            keep.entry((d.owner.clone(), d.slot.clone())).or_default();
        }
    }
    // Restrict the split pass to the affected owners.
    let mut scoped = GraphState::new(&state.doc_id, Vec::new());
    std::mem::swap(&mut scoped.objects, &mut state.objects);
    let keep_scoped: BTreeMap<(String, String), Vec<(String, String)>> = keep
        .into_iter()
        .filter(|((owner, _), _)| affected.contains(owner))
        .collect();
    apply_split_scoped(schema, &mut scoped, &keep_scoped, &affected);
    std::mem::swap(&mut scoped.objects, &mut state.objects);
}

fn apply_split_scoped(
    schema: &OutputSchema,
    state: &mut GraphState,
    keep_together: &BTreeMap<(String, String), Vec<(String, String)>>,
    owners: &BTreeSet<String>,
) {
    if keep_together.is_empty() && owners.is_empty() {
        return;
    }
    // Owners outside the scope keep all targets together.
    let mut keep = keep_together.clone();
    let all: Vec<(String, String, Vec<String>)> = state
        .objects
        .iter()
        .flat_map(|o| {
            splittable_slots(schema, &o.type_name)
                .into_iter()
                .map(move |s| (o.id.clone(), s.clone(), o.pointer_fill(&s).to_vec()))
        })
        .collect();
    for (owner, slot, fills) in all {
        if owners.contains(&owner) || fills.len() < 2 {
            continue;
        }
        let edges = keep.entry((owner, slot)).or_default();
        for w in fills.windows(2) {
            edges.push((w[0].clone(), w[1].clone()));
        }
    }
    apply_split(schema, state, &keep);
}

// ---------------------------------------------------------------------------
// Stage 6: inferring missing slot values
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DefaultDecision {
    pub obj: String,
    pub slot: String,
    pub spec: TreeSpec,
    pub instance: Instance,
}

/// One decision per empty inferable closed slot.
pub fn default_slot_decisions(
    schema: &OutputSchema,
    objects: &[ExtractedObject],
) -> Vec<DefaultDecision> {
    let ctx = FeatureContext::new(schema, objects);
    let mut out = Vec::new();
    for obj in objects {
        let Some(ty) = schema.type_def(&obj.type_name) else { continue };
        for slot in &ty.slots {
            if !slot.inferable || obj.data_value(&slot.name).is_some() {
                continue;
            }
            out.push(DefaultDecision {
                obj: obj.id.clone(),
                slot: slot.name.clone(),
                spec: TreeSpec::DefaultSlot {
                    owner: obj.type_name.clone(),
                    slot: slot.name.clone(),
                },
                instance: encode_single(obj, &ctx),
            });
        }
    }
    out
}

/// Fill a slot when its tree returns a value from the slot's value set.
pub fn run_infer_slots(schema: &OutputSchema, state: &mut GraphState, source: &dyn TreeSource) {
    let decisions = default_slot_decisions(schema, &state.objects);
    for d in decisions {
        let Some((label, _)) = source.classify(&d.spec, &d.instance) else {
            continue;
        };
        if label == NEGATIVE {
            continue;
        }
        let legal = schema
            .type_def(
                state
                    .get(&d.obj)
                    .map(|o| o.type_name.clone())
                    .unwrap_or_default()
                    .as_str(),
            )
            .and_then(|t| t.slot(&d.slot))
            .map(|s| s.accepts(&label))
            .unwrap_or(false);
        if !legal {
            continue;
        }
        if let Some(obj) = state.get_mut(&d.obj) {
            obj.closed.insert(d.slot.clone(), label.clone());
        }
    }
}
