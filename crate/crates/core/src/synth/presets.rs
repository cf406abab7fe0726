//! Built-in micro-domains and rule sets.
//!
//! The default toy domain mirrors a chip-fabrication report structure: a
//! process-like type with a closed type slot, equipment/device and entity
//! types, a synthesized capability type with four company-role slots, and
//! a dummy template root, so walkthrough-shaped scenarios are expressible.

use std::collections::BTreeMap;

use crate::frames::{
    AnswerKey, DocumentInput, ExtractedObject, ExtractionPattern, KeyObject, PatternKind,
    Reference,
};
use crate::real::Real;
use crate::schema::{parse_schema, OutputSchema};

use super::{DocShape, FragmentGen, GenRules, PatternGen, RelationRule, SlotGen, TypeGen, Weighted};

/// Chip-report micro-domain shared by the built-in rule sets.
pub fn micro_schema() -> OutputSchema {
    parse_schema(
        r#"{
        "root": "template",
        "types": [
          {"name": "entity", "slots": [
            {"name": "name", "kind": "open", "key": true}
          ]},
          {"name": "device", "slots": [
            {"name": "dtype", "kind": "closed",
             "values": ["DRAM", "SRAM", "ROM", "MEMORY"], "key": true}
          ]},
          {"name": "process", "slots": [
            {"name": "ptype", "kind": "closed",
             "values": ["TSOP", "SOJ", "PLCC", "CERDIP"], "key": true},
            {"name": "material", "kind": "closed",
             "values": ["PLASTIC", "EPOXY", "CERAMIC"]},
            {"name": "status", "kind": "closed",
             "values": ["in-use", "in-development"], "inferable": true},
            {"name": "device", "kind": "pointer", "targets": ["device"]}
          ]},
          {"name": "capability", "synthesized": true, "anchor": "process", "slots": [
            {"name": "process", "kind": "pointer", "targets": ["process"], "key": true},
            {"name": "developer", "kind": "pointer", "targets": ["entity"], "multi": true},
            {"name": "manufacturer", "kind": "pointer", "targets": ["entity"], "multi": true},
            {"name": "distributor", "kind": "pointer", "targets": ["entity"], "multi": true},
            {"name": "user", "kind": "pointer", "targets": ["entity"], "multi": true}
          ]},
          {"name": "template", "slots": [
            {"name": "content", "kind": "pointer", "targets": ["capability"],
             "multi": true, "key": true}
          ]}
        ]
    }"#,
    )
    .expect("micro schema is valid")
}

fn w<R: Real>(pairs: &[(&str, f64)]) -> Vec<Weighted<R>> {
    pairs
        .iter()
        .map(|(v, p)| Weighted::new(v, R::from_f64(*p).unwrap()))
        .collect()
}

fn counts<R: Real>(pairs: &[(usize, f64)]) -> Vec<(usize, R)> {
    pairs
        .iter()
        .map(|(n, p)| (*n, R::from_f64(*p).unwrap()))
        .collect()
}

fn pat<R: Real>(kind: PatternKind, triggers: &[&str], reliability: f64) -> PatternGen<R> {
    PatternGen {
        kind,
        triggers: triggers.iter().map(|t| t.to_string()).collect(),
        reliability: R::from_f64(reliability).unwrap(),
    }
}

fn rel<R: Real>(owner: &str, slot: &str, bucket: &str, prob: f64) -> RelationRule<R> {
    RelationRule::any(owner, slot, bucket, R::from_f64(prob).unwrap())
}

fn r<R: Real>(p: f64) -> R {
    R::from_f64(p).unwrap()
}

fn entity_names<R: Real>(n: usize, prefix: &str) -> Vec<Weighted<R>> {
    (0..n)
        .map(|i| Weighted::new(&format!("{prefix}-{i}"), R::one()))
        .collect()
}

fn base_type<R: Real>(count: (usize, usize), key_values: Vec<Weighted<R>>) -> TypeGen<R> {
    TypeGen {
        count_min: count.0,
        count_max: count.1,
        key_values,
        distinct_key_values: true,
        slots: BTreeMap::new(),
        refs_true: counts(&[(1, 1.0)]),
        refs_spurious: counts(&[(1, 1.0)]),
        spurious_values: Vec::new(),
        spurious_key_fill: R::one(),
        patterns: Vec::new(),
        fragment: None,
        omit_rate: R::zero(),
    }
}

/// Noisy toy domain: spurious frames at rate 0.2, value noise at 0.1, a
/// probabilistic relation table concentrated near distance zero, and a
/// status slot for default-value inference.
pub fn default_rules<R: Real>() -> GenRules<R> {
    let schema = micro_schema();
    let mut types = BTreeMap::new();

    let mut entity = base_type((1, 2), entity_names(40, "co"));
    entity.refs_true = counts(&[(1, 0.10), (2, 0.20), (3, 0.30), (4, 0.25), (5, 0.15)]);
    entity.refs_spurious = counts(&[(1, 0.55), (2, 0.35), (3, 0.10)]);
    entity.spurious_values = entity_names(40, "junk");
    entity.patterns = vec![
        pat(PatternKind::SubjActive, &["announced"], 0.85),
        pat(PatternKind::Pp, &["from"], 0.35),
        pat(PatternKind::Keyword, &["company"], 0.60),
    ];
    types.insert("entity".to_string(), entity);

    let mut device = base_type((1, 2), w(&[("DRAM", 0.4), ("SRAM", 0.3), ("ROM", 0.3)]));
    device.refs_true = counts(&[(1, 0.25), (2, 0.40), (3, 0.35)]);
    device.refs_spurious = counts(&[(1, 0.65), (2, 0.35)]);
    device.spurious_values = w(&[("MEMORY", 0.6), ("DRAM", 0.15), ("SRAM", 0.15), ("ROM", 0.1)]);
    device.patterns = vec![
        pat(PatternKind::Obj, &["offers"], 0.8),
        pat(PatternKind::Keyword, &["{value}"], 0.9),
        pat(PatternKind::Pp, &["of"], 0.3),
    ];
    types.insert("device".to_string(), device);

    let mut process = base_type(
        (1, 2),
        w(&[("TSOP", 0.3), ("SOJ", 0.3), ("PLCC", 0.25), ("CERDIP", 0.15)]),
    );
    process.refs_true = counts(&[(1, 0.2), (2, 0.35), (3, 0.30), (4, 0.15)]);
    process.refs_spurious = counts(&[(1, 0.7), (2, 0.3)]);
    process.slots.insert(
        "material".to_string(),
        SlotGen {
            fill: r(0.5),
            values: w(&[("PLASTIC", 0.6), ("CERAMIC", 0.4)]),
            extract: r(0.85),
            spurious_fill: r(0.3),
            spurious_values: w(&[("EPOXY", 0.7), ("CERAMIC", 0.3)]),
        },
    );
    process.slots.insert(
        "status".to_string(),
        SlotGen {
            fill: r(1.0),
            values: w(&[("in-use", 0.75), ("in-development", 0.25)]),
            extract: r(0.6),
            spurious_fill: r(0.25),
            spurious_values: w(&[("in-use", 0.5), ("in-development", 0.5)]),
        },
    );
    process.patterns = vec![
        pat(PatternKind::Keyword, &["{value}"], 0.9),
        pat(PatternKind::Pp, &["in"], 0.5),
        pat(PatternKind::SubjPassive, &["packaged"], 0.7),
    ];
    types.insert("process".to_string(), process);

    GenRules {
        schema,
        doc: DocShape {
            min_sentences: 5,
            max_sentences: 9,
        },
        types,
        relations: vec![
            rel("process", "device", "0", 0.9),
            rel("process", "device", "-1", 0.6),
            rel("process", "device", "1", 0.25),
            rel("process", "device", "*", 0.02),
            rel("capability", "user", "0", 0.85),
            rel("capability", "user", "-1", 0.3),
            rel("capability", "user", "1", 0.3),
            rel("capability", "user", "*", 0.01),
            rel("capability", "developer", "*", 0.005),
            rel("capability", "manufacturer", "*", 0.005),
            rel("capability", "distributor", "*", 0.005),
            rel("template", "content", "*", 1.0),
        ],
        spurious_rate: r(0.2),
        slot_noise_rate: r(0.1),
        seed: 0,
    }
}

/// Noiseless rules whose inputs equal their keys: no spurious frames, no
/// noise, no relations, every slot extracted. Training on such a corpus
/// must reproduce the keys exactly.
pub fn identity_rules<R: Real>() -> GenRules<R> {
    let mut rules = default_rules::<R>();
    rules.spurious_rate = R::zero();
    rules.slot_noise_rate = R::zero();
    rules.relations.clear();
    for ty in rules.types.values_mut() {
        ty.omit_rate = R::zero();
        for slot in ty.slots.values_mut() {
            slot.extract = R::one();
        }
    }
    rules
}

/// Schema for the planted-rule recovery corpus: one process-like owner
/// with a multi-valued pointer at a device-like target.
pub fn rule_recovery_schema() -> OutputSchema {
    parse_schema(
        r#"{"types": [
        {"name": "proc", "slots": [
          {"name": "ptype", "kind": "closed", "values": ["A", "B"], "key": true},
          {"name": "dev", "kind": "pointer", "targets": ["device"], "multi": true}
        ]},
        {"name": "device", "slots": [
          {"name": "dtype", "kind": "closed", "values": ["X", "Y"], "key": true}
        ]}
    ]}"#,
    )
    .expect("rule recovery schema is valid")
}

/// Deterministic planted rule: link iff the distance bucket is -1 or 0.
pub fn rule_recovery_rules<R: Real>() -> GenRules<R> {
    let schema = rule_recovery_schema();
    let mut types = BTreeMap::new();
    let mut proc = base_type((1, 2), w(&[("A", 0.5), ("B", 0.5)]));
    proc.distinct_key_values = false;
    proc.refs_true = counts(&[(1, 0.6), (2, 0.4)]);
    proc.patterns = vec![pat(PatternKind::Keyword, &["{value}"], 0.9)];
    types.insert("proc".to_string(), proc);
    let mut device = base_type((1, 2), w(&[("X", 0.5), ("Y", 0.5)]));
    device.distinct_key_values = false;
    device.refs_true = counts(&[(1, 0.6), (2, 0.4)]);
    device.patterns = vec![pat(PatternKind::Keyword, &["{value}"], 0.9)];
    types.insert("device".to_string(), device);

    GenRules {
        schema,
        doc: DocShape {
            min_sentences: 3,
            max_sentences: 7,
        },
        types,
        relations: vec![
            rel("proc", "dev", "-1", 1.0),
            rel("proc", "dev", "0", 1.0),
            rel("proc", "dev", "*", 0.0),
        ],
        spurious_rate: R::zero(),
        slot_noise_rate: R::zero(),
        seed: 0,
    }
}

/// Stage-5 exercise: every document has one device and one process that
/// always links it, but half the processes are never extracted; their key
/// objects carry an `unknown` type.
pub fn orphan_rules<R: Real>() -> GenRules<R> {
    let schema = parse_schema(
        r#"{"types": [
        {"name": "proc", "slots": [
          {"name": "ptype", "kind": "closed", "values": ["LITHO", "ETCH"], "key": true},
          {"name": "dev", "kind": "pointer", "targets": ["device"]}
        ]},
        {"name": "device", "slots": [
          {"name": "dtype", "kind": "closed", "values": ["STEPPER", "OVEN"], "key": true}
        ]}
    ]}"#,
    )
    .expect("orphan schema is valid");
    let mut types = BTreeMap::new();
    let mut proc = base_type((1, 1), w(&[("LITHO", 0.6), ("ETCH", 0.4)]));
    proc.distinct_key_values = false;
    proc.patterns = vec![pat(PatternKind::Keyword, &["{value}"], 0.9)];
    proc.omit_rate = r(0.5);
    types.insert("proc".to_string(), proc);
    let mut device = base_type((1, 1), w(&[("STEPPER", 0.6), ("OVEN", 0.4)]));
    device.distinct_key_values = false;
    device.patterns = vec![pat(PatternKind::Keyword, &["{value}"], 0.9)];
    types.insert("device".to_string(), device);

    GenRules {
        schema,
        doc: DocShape {
            min_sentences: 3,
            max_sentences: 5,
        },
        types,
        relations: vec![rel("proc", "dev", "*", 1.0)],
        spurious_rate: R::zero(),
        slot_noise_rate: R::zero(),
        seed: 0,
    }
}

/// Single-type domain for checking that a configured spurious rate shows
/// up in filter labels: one device per document, disjoint value pools.
pub fn rate_check_rules<R: Real>(spurious_rate: f64) -> GenRules<R> {
    let schema = parse_schema(
        r#"{"types": [
        {"name": "device", "slots": [
          {"name": "dtype", "kind": "closed",
           "values": ["D0","D1","D2","D3","D4","S0","S1","S2","S3","S4"], "key": true}
        ]}
    ]}"#,
    )
    .expect("rate check schema is valid");
    let mut types = BTreeMap::new();
    let mut device = base_type(
        (1, 1),
        w(&[("D0", 1.0), ("D1", 1.0), ("D2", 1.0), ("D3", 1.0), ("D4", 1.0)]),
    );
    device.distinct_key_values = false;
    device.spurious_values =
        w(&[("S0", 1.0), ("S1", 1.0), ("S2", 1.0), ("S3", 1.0), ("S4", 1.0)]);
    device.patterns = vec![pat(PatternKind::Keyword, &["{value}"], 0.9)];
    types.insert("device".to_string(), device);
    GenRules {
        schema,
        doc: DocShape {
            min_sentences: 2,
            max_sentences: 4,
        },
        types,
        relations: Vec::new(),
        spurious_rate: r(spurious_rate),
        slot_noise_rate: R::zero(),
        seed: 0,
    }
}

/// Rules embedding the walkthrough regularities: reliable company names
/// are extracted often, material fragments land in the source sentence,
/// EPOXY materials and MEMORY devices are usually spurious, links
/// concentrate at distance zero, and companies relate to packaging
/// processes almost exclusively as purchaser/user.
pub fn walkthrough_rules<R: Real>() -> GenRules<R> {
    let schema = micro_schema();
    let mut types = BTreeMap::new();

    let mut entity = base_type((1, 2), entity_names(40, "co"));
    entity.refs_true = counts(&[(4, 0.3), (5, 0.4), (6, 0.3)]);
    entity.refs_spurious = counts(&[(1, 0.4), (2, 0.6)]);
    entity.spurious_values = entity_names(40, "division");
    entity.patterns = vec![
        pat(PatternKind::SubjActive, &["offers"], 0.85),
        pat(PatternKind::Pp, &["of"], 0.4),
        pat(PatternKind::SubjActive, &["provides"], 0.8),
        pat(PatternKind::Pp, &["by"], 0.5),
    ];
    types.insert("entity".to_string(), entity);

    let mut device = base_type((1, 2), w(&[("DRAM", 0.5), ("SRAM", 0.25), ("ROM", 0.25)]));
    device.refs_true = counts(&[(2, 0.3), (3, 0.4), (4, 0.3)]);
    device.refs_spurious = counts(&[(1, 0.7), (2, 0.3)]);
    device.spurious_values = w(&[("MEMORY", 0.8), ("ROM", 0.1), ("SRAM", 0.1)]);
    device.patterns = vec![
        pat(PatternKind::Obj, &["offers"], 0.8),
        pat(PatternKind::Keyword, &["{value}"], 0.9),
    ];
    types.insert("device".to_string(), device);

    let mut process = base_type(
        (1, 2),
        w(&[("TSOP", 0.35), ("SOJ", 0.35), ("PLCC", 0.2), ("CERDIP", 0.1)]),
    );
    process.refs_true = counts(&[(3, 0.4), (4, 0.3), (5, 0.3)]);
    process.refs_spurious = counts(&[(1, 0.6), (2, 0.4)]);
    process.spurious_values = w(&[("PLCC", 0.5), ("CERDIP", 0.5)]);
    process.spurious_key_fill = r(0.3);
    process.slots.insert(
        "material".to_string(),
        SlotGen {
            fill: r(0.45),
            values: w(&[("PLASTIC", 0.7), ("CERAMIC", 0.3)]),
            // The material never sits on the typed frame; it arrives as an
            // attribute-only fragment.
            extract: R::zero(),
            spurious_fill: r(0.7),
            spurious_values: w(&[("EPOXY", 0.85), ("CERAMIC", 0.15)]),
        },
    );
    process.fragment = Some(FragmentGen {
        rate: r(0.95),
        slots: vec!["material".to_string()],
        same_sentence: true,
    });
    process.patterns = vec![
        pat(PatternKind::Keyword, &["{value}"], 0.9),
        pat(PatternKind::Pp, &["in"], 0.5),
    ];
    types.insert("process".to_string(), process);

    GenRules {
        schema,
        doc: DocShape {
            min_sentences: 6,
            max_sentences: 8,
        },
        types,
        relations: vec![
            rel("process", "device", "0", 0.95),
            rel("process", "device", "-1", 0.3),
            rel("process", "device", "1", 0.3),
            rel("process", "device", "*", 0.03),
            rel("capability", "user", "0", 0.95),
            rel("capability", "user", "-1", 0.3),
            rel("capability", "user", "1", 0.3),
            rel("capability", "user", "*", 0.02),
            rel("capability", "developer", "*", 0.02),
            rel("capability", "manufacturer", "*", 0.02),
            rel("capability", "distributor", "*", 0.02),
            rel("template", "content", "*", 1.0),
        ],
        spurious_rate: r(0.2),
        slot_noise_rate: R::zero(),
        seed: 0,
    }
}

fn reference(sentence: usize, kind: PatternKind, triggers: &[&str]) -> Reference {
    Reference::new(sentence, ExtractionPattern::new(kind, triggers))
}

/// The eight frames handed to discourse processing in the walkthrough
/// text: two company names, two devices, two typed packaging frames, and
/// two material-only packaging frames. Three of the eight are spurious.
pub fn walkthrough_input() -> DocumentInput {
    let mut objects = Vec::new();

    let mut mitsubishi = ExtractedObject::new("o_company", "entity");
    mitsubishi
        .open
        .insert("name".into(), "Mitsubishi Electronics America, Inc.".into());
    mitsubishi.references = vec![
        reference(0, PatternKind::SubjActive, &["offers"]),
        reference(0, PatternKind::Pp, &["of"]),
        reference(1, PatternKind::Pp, &["by"]),
        reference(2, PatternKind::SubjActive, &["provides"]),
        reference(2, PatternKind::Pp, &["of"]),
    ];
    objects.push(mitsubishi);

    let mut division = ExtractedObject::new("o_division", "entity");
    division.open.insert(
        "name".into(),
        "The Semiconductor Division of Mitsubishi Electronics America, Inc.".into(),
    );
    division.references = vec![
        reference(0, PatternKind::SubjActive, &["offers"]),
        reference(0, PatternKind::Pp, &["of"]),
    ];
    objects.push(division);

    let mut dram = ExtractedObject::new("o_dram", "device");
    dram.closed.insert("dtype".into(), "DRAM".into());
    dram.references = vec![
        reference(0, PatternKind::Obj, &["offers"]),
        reference(2, PatternKind::Keyword, &["dram"]),
        reference(4, PatternKind::Keyword, &["dram"]),
    ];
    objects.push(dram);

    let mut memory = ExtractedObject::new("o_memory", "device");
    memory.closed.insert("dtype".into(), "MEMORY".into());
    memory.references = vec![reference(0, PatternKind::Keyword, &["memory"])];
    objects.push(memory);

    let mut tsop = ExtractedObject::new("o_tsop", "process");
    tsop.closed.insert("ptype".into(), "TSOP".into());
    tsop.references = vec![
        reference(0, PatternKind::Pp, &["in"]),
        reference(1, PatternKind::Keyword, &["tsop"]),
        reference(2, PatternKind::Keyword, &["tsop"]),
        reference(4, PatternKind::Keyword, &["tsop"]),
        reference(6, PatternKind::Keyword, &["tsop"]),
    ];
    objects.push(tsop);

    let mut epoxy = ExtractedObject::new("o_epoxy", "process");
    epoxy.closed.insert("material".into(), "EPOXY".into());
    epoxy.references = vec![reference(2, PatternKind::Keyword, &["epoxy"])];
    objects.push(epoxy);

    let mut plastic = ExtractedObject::new("o_plastic", "process");
    plastic.closed.insert("material".into(), "PLASTIC".into());
    plastic.references = vec![reference(2, PatternKind::Keyword, &["plastic"])];
    objects.push(plastic);

    let mut soj = ExtractedObject::new("o_soj", "process");
    soj.closed.insert("ptype".into(), "SOJ".into());
    soj.references = vec![
        reference(4, PatternKind::Keyword, &["soj"]),
        reference(5, PatternKind::Keyword, &["soj"]),
        reference(6, PatternKind::Keyword, &["soj"]),
    ];
    objects.push(soj);

    DocumentInput {
        doc_id: "walkthrough".into(),
        objects,
    }
}

/// Hand-coded target for [`walkthrough_input`]: the company as purchaser/user
/// of both packaging processes, each pointing at the DRAM device, plastic
/// attached to TSOP only, and a template holding both capabilities.
pub fn walkthrough_key() -> AnswerKey {
    let mut ent = KeyObject::new("t_company", "entity");
    ent.open
        .insert("name".into(), "Mitsubishi Electronics America, Inc.".into());
    let mut dram = KeyObject::new("t_dram", "device");
    dram.closed.insert("dtype".into(), "DRAM".into());
    let mut tsop = KeyObject::new("t_tsop", "process");
    tsop.closed.insert("ptype".into(), "TSOP".into());
    tsop.closed.insert("material".into(), "PLASTIC".into());
    tsop.pointers.insert("device".into(), vec!["t_dram".into()]);
    let mut soj = KeyObject::new("t_soj", "process");
    soj.closed.insert("ptype".into(), "SOJ".into());
    soj.pointers.insert("device".into(), vec!["t_dram".into()]);
    let mut cap1 = KeyObject::new("t_cap_tsop", "capability");
    cap1.pointers.insert("process".into(), vec!["t_tsop".into()]);
    cap1.pointers.insert("user".into(), vec!["t_company".into()]);
    let mut cap2 = KeyObject::new("t_cap_soj", "capability");
    cap2.pointers.insert("process".into(), vec!["t_soj".into()]);
    cap2.pointers.insert("user".into(), vec!["t_company".into()]);
    let mut template = KeyObject::new("t_template", "template");
    template
        .pointers
        .insert("content".into(), vec!["t_cap_tsop".into(), "t_cap_soj".into()]);
    AnswerKey {
        doc_id: "walkthrough".into(),
        objects: vec![ent, dram, tsop, soj, cap1, cap2, template],
    }
}

/// Built-in rule sets by name (the `synth --preset` surface).
pub fn preset(name: &str) -> Option<GenRules<f64>> {
    match name {
        "default" => Some(default_rules()),
        "identity" => Some(identity_rules()),
        "rule-recovery" => Some(rule_recovery_rules()),
        "orphan" => Some(orphan_rules()),
        "walkthrough" => Some(walkthrough_rules()),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["default", "identity", "rule-recovery", "orphan", "walkthrough"]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{enumerate_trees, link_order};

    #[test]
    fn micro_schema_link_order_starts_with_process_device() {
        let schema = micro_schema();
        let order = link_order(&schema);
        let pairs: Vec<(&str, &str)> = order
            .iter()
            .map(|(t, s)| (t.as_str(), s.as_str()))
            .collect();
        assert_eq!(
            pairs,
            vec![
                ("process", "device"),
                ("capability", "process"),
                ("capability", "developer"),
                ("capability", "manufacturer"),
                ("capability", "distributor"),
                ("capability", "user"),
                ("template", "content"),
            ]
        );
    }

    #[test]
    fn micro_schema_tree_inventory() {
        let schema = micro_schema();
        let trees = enumerate_trees(&schema);
        let by_stage = |n: u8| trees.iter().filter(|t| t.stage() == n).count();
        // Filtering: name, dtype, ptype, material, status.
        assert_eq!(by_stage(1), 5);
        // Merging: entity, device, process, template (capability is
        // synthesized).
        assert_eq!(by_stage(2), 4);
        // Links: process.device, capability anchor + four roles,
        // template.content.
        assert_eq!(by_stage(3), 7);
        // Splits: the four role slots and the template content slot.
        assert_eq!(by_stage(4), 5);
        // Parent inference: device, process, entity, capability.
        assert_eq!(by_stage(5), 4);
        // Defaults: process.status.
        assert_eq!(by_stage(6), 1);
    }

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            let rules = preset(name).unwrap();
            rules.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn walkthrough_fixture_matches_its_key_shape() {
        let schema = micro_schema();
        let input = walkthrough_input();
        assert_eq!(input.objects.len(), 8);
        let key = walkthrough_key();
        assert_eq!(key.objects.len(), 7);
        // Validate both through the ingestion path.
        let parsed = crate::frames::parse_documents(
            &crate::frames::document_to_line(&input),
            &schema,
        );
        assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
        let parsed = crate::frames::parse_keys(&crate::frames::key_to_line(&key), &schema);
        assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
    }
}
