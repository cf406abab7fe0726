//! Sparse instance encoding for discourse decisions.
//!
//! Feature names follow a fixed grammar:
//!   - slot features       `<slotName>` (object 1) / `<slotName>-<pos>`
//!   - pattern features    `<kind>-<trigger>-<pos>`, one per trigger
//!   - positional features `distance`, `dist-<i>-<j>`, `common-triggers`,
//!     `common-phrases`, `extraction-count-<pos>`
//!
//! Boolean features are stored only when true; feature absence means false.
//! Open-class values never become feature values, only presence flags.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::frames::{ExtractedObject, Reference};
use crate::schema::OutputSchema;

/// Value of a stored feature: a closed-class symbol, boolean true, or a
/// bucketed integer.
///
/// Serialized as a prefixed string (`s:UV`, `t`, `b:-1`) so it can key
/// JSON maps inside model files.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureValue {
    Sym(String),
    True,
    Bucket(String),
}

impl FeatureValue {
    pub fn sym(v: &str) -> Self {
        FeatureValue::Sym(v.to_string())
    }
}

impl Serialize for FeatureValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let text = match self {
            FeatureValue::Sym(s) => format!("s:{s}"),
            FeatureValue::True => "t".to_string(),
            FeatureValue::Bucket(b) => format!("b:{b}"),
        };
        serializer.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for FeatureValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        if text == "t" {
            Ok(FeatureValue::True)
        } else if let Some(s) = text.strip_prefix("s:") {
            Ok(FeatureValue::Sym(s.to_string()))
        } else if let Some(b) = text.strip_prefix("b:") {
            Ok(FeatureValue::Bucket(b.to_string()))
        } else {
            Err(serde::de::Error::custom(format!(
                "bad feature value encoding {text:?}"
            )))
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Sym(s) => f.write_str(s),
            FeatureValue::True => f.write_str("t"),
            FeatureValue::Bucket(b) => f.write_str(b),
        }
    }
}

pub type FeatureMap = BTreeMap<String, FeatureValue>;

/// Unit of learning and classification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub features: FeatureMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Instance {
    pub fn new(features: FeatureMap) -> Self {
        Instance { features, label: None }
    }

    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn value(&self, feature: &str) -> Option<&FeatureValue> {
        self.features.get(feature)
    }
}

/// Signed sentence-delta bucket.
pub fn distance_bucket(d: i64) -> &'static str {
    match d {
        i64::MIN..=-20 => "<=-20",
        -19..=-10 => "-19..-10",
        -9..=-3 => "-9..-3",
        -2 => "-2",
        -1 => "-1",
        0 => "0",
        1 => "1",
        2 => "2",
        3..=9 => "3..9",
        10..=19 => "10..19",
        _ => ">=20",
    }
}

/// Bucket for extraction counts (never zero: references are non-empty).
pub fn count_bucket(n: usize) -> &'static str {
    match n {
        0 | 1 => "1",
        2 => "2",
        3 => "3",
        4 => "4",
        5 => "5",
        _ => "6+",
    }
}

/// Bucket for shared-trigger / shared-phrase counts (zero is meaningful).
pub fn common_bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2 => "2",
        3 => "3",
        4 => "4",
        5 => "5",
        _ => "6+",
    }
}

/// Current object graph, used for context inheritance through pointers.
pub struct FeatureContext<'a> {
    pub schema: &'a OutputSchema,
    by_id: HashMap<&'a str, &'a ExtractedObject>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(schema: &'a OutputSchema, objects: &'a [ExtractedObject]) -> Self {
        let by_id = objects.iter().map(|o| (o.id.as_str(), o)).collect();
        FeatureContext { schema, by_id }
    }

    pub fn get(&self, id: &str) -> Option<&'a ExtractedObject> {
        self.by_id.get(id).copied()
    }
}

/// References of `obj` plus those of every object reachable over forward
/// pointers, transitively. Objects inherit the linguistic context and text
/// position of objects they point to; inherited references are
/// indistinguishable from direct ones. Own references come first, then
/// depth-first by pointer declaration order. Cycle-safe.
pub fn effective_references<'a>(
    obj: &'a ExtractedObject,
    ctx: &FeatureContext<'a>,
) -> Vec<&'a Reference> {
    let mut out = Vec::new();
    let mut visited = BTreeSet::new();
    collect_refs(obj, ctx, &mut visited, &mut out);
    out
}

fn collect_refs<'a>(
    obj: &'a ExtractedObject,
    ctx: &FeatureContext<'a>,
    visited: &mut BTreeSet<&'a str>,
    out: &mut Vec<&'a Reference>,
) {
    if !visited.insert(obj.id.as_str()) {
        return;
    }
    out.extend(obj.references.iter());
    let Some(ty) = ctx.schema.type_def(&obj.type_name) else {
        return;
    };
    for slot in ty.pointer_slots() {
        for target in obj.pointer_fill(&slot.name) {
            if let Some(t) = ctx.get(target) {
                collect_refs(t, ctx, visited, out);
            }
        }
    }
}

fn slot_feature(slot: &str, pos: u8) -> String {
    if pos == 1 {
        slot.to_string()
    } else {
        format!("{slot}-{pos}")
    }
}

/// Encode one object's attributes, patterns, and extraction count as the
/// position-`pos` fragment of an instance.
pub fn encode_object(obj: &ExtractedObject, ctx: &FeatureContext<'_>, pos: u8) -> FeatureMap {
    let mut map = FeatureMap::new();
    for (slot, value) in &obj.closed {
        map.insert(slot_feature(slot, pos), FeatureValue::sym(value));
    }
    for slot in obj.open.keys() {
        map.insert(slot_feature(slot, pos), FeatureValue::True);
    }
    let refs = effective_references(obj, ctx);
    for r in &refs {
        // Multi-trigger patterns split into one feature per trigger.
        for trigger in &r.pattern.triggers {
            map.insert(
                format!("{}-{}-{}", r.pattern.kind.as_str(), trigger, pos),
                FeatureValue::True,
            );
        }
    }
    if !refs.is_empty() {
        map.insert(
            format!("extraction-count-{pos}"),
            FeatureValue::Bucket(count_bucket(refs.len()).to_string()),
        );
    }
    map
}

/// Signed sentence delta `s(b) - s(a)` of the reference pair minimizing the
/// absolute delta; a tie between `+k` and `-k` resolves to `-k`.
fn nearest_delta(a: &[&Reference], b: &[&Reference]) -> Option<i64> {
    let mut best: Option<i64> = None;
    for ra in a {
        for rb in b {
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
    best
}

fn trigger_set<'a>(refs: &[&'a Reference]) -> BTreeSet<&'a str> {
    refs.iter()
        .flat_map(|r| r.pattern.triggers.iter().map(String::as_str))
        .collect()
}

fn phrase_set<'a>(refs: &[&'a Reference]) -> BTreeSet<&'a str> {
    refs.iter()
        .filter_map(|r| r.phrase.as_deref())
        .collect()
}

fn pair_features(map: &mut FeatureMap, name: &str, a: &[&Reference], b: &[&Reference]) {
    if let Some(d) = nearest_delta(a, b) {
        map.insert(
            name.to_string(),
            FeatureValue::Bucket(distance_bucket(d).to_string()),
        );
    }
}

/// Instance for a two-object decision: both fragments plus relative
/// position features.
pub fn encode_pair(
    obj1: &ExtractedObject,
    obj2: &ExtractedObject,
    ctx: &FeatureContext<'_>,
) -> Instance {
    let mut map = encode_object(obj1, ctx, 1);
    map.extend(encode_object(obj2, ctx, 2));
    let refs1 = effective_references(obj1, ctx);
    let refs2 = effective_references(obj2, ctx);
    if !refs1.is_empty() && !refs2.is_empty() {
        pair_features(&mut map, "distance", &refs1, &refs2);
        let common = trigger_set(&refs1).intersection(&trigger_set(&refs2)).count();
        map.insert(
            "common-triggers".to_string(),
            FeatureValue::Bucket(common_bucket(common).to_string()),
        );
        let shared = phrase_set(&refs1).intersection(&phrase_set(&refs2)).count();
        map.insert(
            "common-phrases".to_string(),
            FeatureValue::Bucket(common_bucket(shared).to_string()),
        );
    }
    Instance::new(map)
}

/// Instance for a single-object decision (filtering, parent inference,
/// default slot values).
pub fn encode_single(obj: &ExtractedObject, ctx: &FeatureContext<'_>) -> Instance {
    Instance::new(encode_object(obj, ctx, 1))
}

/// Instance for a split decision: owner at position 1, the two pointer
/// targets at positions 2 and 3, with pairwise distances.
pub fn encode_triple(
    owner: &ExtractedObject,
    b: &ExtractedObject,
    c: &ExtractedObject,
    ctx: &FeatureContext<'_>,
) -> Result<Instance, TripleError> {
    if b.id == c.id {
        return Err(TripleError::SameTarget { id: b.id.clone() });
    }
    let mut map = encode_object(owner, ctx, 1);
    map.extend(encode_object(b, ctx, 2));
    map.extend(encode_object(c, ctx, 3));
    let r1 = effective_references(owner, ctx);
    let r2 = effective_references(b, ctx);
    let r3 = effective_references(c, ctx);
    pair_features(&mut map, "dist-1-2", &r1, &r2);
    pair_features(&mut map, "dist-1-3", &r1, &r3);
    pair_features(&mut map, "dist-2-3", &r2, &r3);
    Ok(Instance::new(map))
}

#[derive(Debug, thiserror::Error)]
pub enum TripleError {
    #[error("split instance requires two distinct targets, got {id} twice")]
    SameTarget { id: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{ExtractionPattern, PatternKind};
    use crate::schema::parse_schema;

    fn fig5_schema() -> OutputSchema {
        parse_schema(
            r#"{"types": [
            {"name": "lithography", "slots": [
              {"name": "lithography-type", "kind": "closed", "values": ["UV","I-line","E-beam","optical"], "key": true},
              {"name": "equipment", "kind": "pointer", "targets": ["equipment"]}]},
            {"name": "equipment", "slots": [
              {"name": "equipment-type", "kind": "closed", "values": ["stepper","aligner"], "key": true},
              {"name": "equipment-name", "kind": "open"}]}
        ]}"#,
        )
        .unwrap()
    }

    fn keyword(t: &str) -> ExtractionPattern {
        ExtractionPattern::new(PatternKind::Keyword, &[t])
    }

    /// UV lithography in sentence 1, three references via pp-available-in
    /// and the keyword deep-ultraviolet.
    fn uv_litho() -> ExtractedObject {
        let mut o = ExtractedObject::new("uv", "lithography");
        o.closed.insert("lithography-type".into(), "UV".into());
        o.references = vec![
            Reference::new(1, ExtractionPattern::new(PatternKind::Pp, &["available", "in"])),
            Reference::new(1, keyword("deep-ultraviolet")),
            Reference::new(1, keyword("deep-ultraviolet")),
        ];
        o
    }

    /// XLS stepper in sentence 0, three references.
    fn xls_stepper() -> ExtractedObject {
        let mut o = ExtractedObject::new("xls", "equipment");
        o.closed.insert("equipment-type".into(), "stepper".into());
        o.open.insert("equipment-name".into(), "XLS".into());
        o.references = vec![
            Reference::new(0, ExtractionPattern::new(PatternKind::Obj, &["unveiled"])),
            Reference::new(0, ExtractionPattern::new(PatternKind::SubjPassive, &["developed"])),
            Reference::new(0, keyword("stepper")),
        ];
        o
    }

    #[test]
    fn encodes_uv_lithography_fragment() {
        let schema = fig5_schema();
        let objects = vec![uv_litho()];
        let ctx = FeatureContext::new(&schema, &objects);
        let map = encode_object(&objects[0], &ctx, 1);
        let expect: Vec<(&str, FeatureValue)> = vec![
            ("extraction-count-1", FeatureValue::Bucket("3".into())),
            ("keyword-deep-ultraviolet-1", FeatureValue::True),
            ("lithography-type", FeatureValue::sym("UV")),
            ("pp-available-1", FeatureValue::True),
            ("pp-in-1", FeatureValue::True),
        ];
        let got: Vec<(&str, FeatureValue)> =
            map.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn encodes_stepper_as_second_object() {
        let schema = fig5_schema();
        let objects = vec![xls_stepper()];
        let ctx = FeatureContext::new(&schema, &objects);
        let map = encode_object(&objects[0], &ctx, 2);
        let expect: Vec<(&str, FeatureValue)> = vec![
            ("equipment-name-2", FeatureValue::True),
            ("equipment-type-2", FeatureValue::sym("stepper")),
            ("extraction-count-2", FeatureValue::Bucket("3".into())),
            ("keyword-stepper-2", FeatureValue::True),
            ("obj-unveiled-2", FeatureValue::True),
            ("subj-passive-developed-2", FeatureValue::True),
        ];
        let got: Vec<(&str, FeatureValue)> =
            map.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn pair_instance_matches_expected_layout() {
        let schema = fig5_schema();
        let objects = vec![uv_litho(), xls_stepper()];
        let ctx = FeatureContext::new(&schema, &objects);
        let inst = encode_pair(&objects[0], &objects[1], &ctx);
        assert_eq!(inst.features.len(), 14);
        assert_eq!(
            inst.value("distance"),
            Some(&FeatureValue::Bucket("-1".into()))
        );
        assert_eq!(
            inst.value("common-triggers"),
            Some(&FeatureValue::Bucket("0".into()))
        );
        assert_eq!(
            inst.value("common-phrases"),
            Some(&FeatureValue::Bucket("0".into()))
        );
    }

    #[test]
    fn distance_is_minus_one_for_target_one_sentence_earlier() {
        // Packaging at sentence 5, device mentioned one sentence earlier.
        let schema = crate::synth::presets::micro_schema();
        let mut pack = ExtractedObject::new("p", "process");
        pack.closed.insert("ptype".into(), "PLCC".into());
        pack.references = vec![Reference::new(5, keyword("plcc"))];
        let mut dev = ExtractedObject::new("d", "device");
        dev.closed.insert("dtype".into(), "ROM".into());
        dev.references = vec![Reference::new(4, keyword("rom"))];
        let objects = vec![pack, dev];
        let ctx = FeatureContext::new(&schema, &objects);
        let inst = encode_pair(&objects[0], &objects[1], &ctx);
        assert_eq!(
            inst.value("distance"),
            Some(&FeatureValue::Bucket("-1".into()))
        );
    }

    #[test]
    fn shared_sentence_phrase_and_trigger_count() {
        let schema = fig5_schema();
        let mut a = ExtractedObject::new("a", "lithography");
        a.closed.insert("lithography-type".into(), "UV".into());
        a.references =
            vec![Reference::new(3, keyword("using")).with_phrase("np-7")];
        let mut b = ExtractedObject::new("b", "equipment");
        b.closed.insert("equipment-type".into(), "stepper".into());
        b.references =
            vec![Reference::new(3, keyword("using")).with_phrase("np-7")];
        let objects = vec![a, b];
        let ctx = FeatureContext::new(&schema, &objects);
        let inst = encode_pair(&objects[0], &objects[1], &ctx);
        assert_eq!(inst.value("distance"), Some(&FeatureValue::Bucket("0".into())));
        assert_eq!(
            inst.value("common-triggers"),
            Some(&FeatureValue::Bucket("1".into()))
        );
        assert_eq!(
            inst.value("common-phrases"),
            Some(&FeatureValue::Bucket("1".into()))
        );
    }

    #[test]
    fn single_instance_counts_and_sparsity() {
        let schema = fig5_schema();
        let mut o = ExtractedObject::new("e", "equipment");
        o.closed.insert("equipment-type".into(), "stepper".into());
        o.references = vec![Reference::new(0, keyword("stepper"))];
        let objects = vec![o];
        let ctx = FeatureContext::new(&schema, &objects);
        let inst = encode_single(&objects[0], &ctx);
        // Key slot symbol + one trigger + extraction count: exactly 3.
        assert_eq!(inst.features.len(), 3);
        // Empty open slot emits nothing.
        assert!(inst.value("equipment-name").is_none());
    }

    #[test]
    fn references_inherit_through_pointers() {
        let schema = fig5_schema();
        let mut litho = ExtractedObject::new("l", "lithography");
        litho.closed.insert("lithography-type".into(), "UV".into());
        litho.references = vec![Reference::new(4, keyword("uv"))];
        litho
            .pointers
            .insert("equipment".into(), vec!["e".to_string()]);
        let mut equip = ExtractedObject::new("e", "equipment");
        equip.closed.insert("equipment-type".into(), "stepper".into());
        equip.references = vec![Reference::new(2, keyword("stepper"))];
        let objects = vec![litho, equip];
        let ctx = FeatureContext::new(&schema, &objects);
        let refs = effective_references(&objects[0], &ctx);
        assert_eq!(
            refs.iter().map(|r| r.sentence).collect::<Vec<_>>(),
            vec![4, 2]
        );
        // Inherited references feed the count feature.
        let map = encode_object(&objects[0], &ctx, 1);
        assert_eq!(
            map.get("extraction-count-1"),
            Some(&FeatureValue::Bucket("2".into()))
        );
        assert_eq!(map.get("keyword-stepper-1"), Some(&FeatureValue::True));
    }

    #[test]
    fn pointer_cycle_terminates_with_union_of_references() {
        let schema = parse_schema(
            r#"{"types": [
            {"name": "a", "slots": [
              {"name": "k", "kind": "closed", "values": ["x"], "key": true},
              {"name": "toB", "kind": "pointer", "targets": ["b"]}]},
            {"name": "b", "slots": [
              {"name": "k", "kind": "closed", "values": ["x"], "key": true},
              {"name": "toA", "kind": "pointer", "targets": ["a"]}]}
        ]}"#,
        )
        .unwrap();
        let mut a = ExtractedObject::new("a1", "a");
        a.closed.insert("k".into(), "x".into());
        a.references = vec![Reference::new(0, keyword("a"))];
        a.pointers.insert("toB".into(), vec!["b1".into()]);
        let mut b = ExtractedObject::new("b1", "b");
        b.closed.insert("k".into(), "x".into());
        b.references = vec![Reference::new(7, keyword("b"))];
        b.pointers.insert("toA".into(), vec!["a1".into()]);
        let objects = vec![a, b];
        let ctx = FeatureContext::new(&schema, &objects);
        let refs = effective_references(&objects[0], &ctx);
        assert_eq!(refs.len(), 2);
    }

    #[test]
    fn triple_rejects_duplicate_target() {
        let schema = fig5_schema();
        let objects = vec![uv_litho(), xls_stepper()];
        let ctx = FeatureContext::new(&schema, &objects);
        assert!(encode_triple(&objects[0], &objects[1], &objects[1], &ctx).is_err());
    }

    #[test]
    fn triple_buckets_pairwise_distances() {
        let schema = fig5_schema();
        let mut owner = uv_litho();
        owner.references = vec![Reference::new(0, keyword("uv"))];
        let mut b = xls_stepper();
        b.id = "b".into();
        b.references = vec![Reference::new(0, keyword("stepper"))];
        let mut c = xls_stepper();
        c.id = "c".into();
        c.references = vec![Reference::new(5, keyword("stepper"))];
        let objects = vec![owner, b, c];
        let ctx = FeatureContext::new(&schema, &objects);
        let inst = encode_triple(&objects[0], &objects[1], &objects[2], &ctx).unwrap();
        assert_eq!(inst.value("dist-2-3"), Some(&FeatureValue::Bucket("3..9".into())));
        assert_eq!(inst.value("equipment-type-3"), Some(&FeatureValue::sym("stepper")));
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(distance_bucket(-25), "<=-20");
        assert_eq!(distance_bucket(-20), "<=-20");
        assert_eq!(distance_bucket(-19), "-19..-10");
        assert_eq!(distance_bucket(-3), "-9..-3");
        assert_eq!(distance_bucket(-2), "-2");
        assert_eq!(distance_bucket(2), "2");
        assert_eq!(distance_bucket(9), "3..9");
        assert_eq!(distance_bucket(19), "10..19");
        assert_eq!(distance_bucket(20), ">=20");
        assert_eq!(count_bucket(5), "5");
        assert_eq!(count_bucket(6), "6+");
        assert_eq!(count_bucket(60), "6+");
    }

    #[test]
    fn extraction_counts_separate_reliable_from_spurious_names() {
        // The full company name arrives through five extraction patterns,
        // the long-form division name through only two.
        let schema = crate::synth::presets::micro_schema();
        let doc = crate::synth::presets::walkthrough_input();
        let ctx = FeatureContext::new(&schema, &doc.objects);
        let company = doc.objects.iter().find(|o| o.id == "o_company").unwrap();
        let inst = encode_single(company, &ctx);
        assert_eq!(
            inst.value("extraction-count-1"),
            Some(&FeatureValue::Bucket("5".into()))
        );
        let division = doc.objects.iter().find(|o| o.id == "o_division").unwrap();
        let inst = encode_single(division, &ctx);
        assert_eq!(
            inst.value("extraction-count-1"),
            Some(&FeatureValue::Bucket("2".into()))
        );
    }

    #[test]
    fn tie_between_plus_and_minus_prefers_earlier_mention() {
        let a = [Reference::new(5, keyword("x"))];
        let b = [Reference::new(3, keyword("y")), Reference::new(7, keyword("y"))];
        let ar: Vec<&Reference> = a.iter().collect();
        let br: Vec<&Reference> = b.iter().collect();
        assert_eq!(nearest_delta(&ar, &br), Some(-2));
    }
}
