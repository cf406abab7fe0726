//! Training-loop integration checks beyond the acceptance criteria.

use discourse::eval::score;
use discourse::frames::{AnswerKey, DocumentInput};
use discourse::pipeline::{apply, train, PipelineError};
use discourse::synth::{gen_corpus, presets};
use discourse::{ScoreReport, TrainConfig};

#[test]
fn empty_corpus_is_an_error() {
    let rules = presets::default_rules::<f64>();
    let err = train::<f64>(&rules.schema, &[], &[], &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::NoDocuments));
}

#[test]
fn documents_without_keys_are_excluded_with_a_warning() {
    let rules = presets::identity_rules::<f64>();
    let (docs, mut keys) = gen_corpus(&rules, 10, 3).unwrap();
    keys.truncate(8);
    let outcome = train(&rules.schema, &docs, &keys, &TrainConfig::default()).unwrap();
    assert_eq!(outcome.warnings.len(), 2);
    assert!(outcome.warnings.iter().all(|w| w.contains("no answer key")));
}

#[test]
fn empty_document_yields_an_empty_graph() {
    let rules = presets::identity_rules::<f64>();
    let (docs, keys) = gen_corpus(&rules, 20, 3).unwrap();
    let outcome = train(&rules.schema, &docs, &keys, &TrainConfig::default()).unwrap();
    let empty = DocumentInput {
        doc_id: "empty".into(),
        objects: Vec::new(),
    };
    let graph = apply(&rules.schema, &outcome.model, &empty, false).graph;
    assert!(graph.objects.is_empty());
    assert!(graph.root.is_none());
}

/// An orphaned device whose process was never extracted gets an
/// unknown-typed parent pointing at it, learned from keys where analysts
/// recorded exactly that.
#[test]
fn missing_parents_are_inferred_for_orphans() {
    let rules = presets::orphan_rules::<f64>();
    let (docs, keys) = gen_corpus(&rules, 250, 21).unwrap();
    let (train_docs, held_docs) = docs.split_at(200);
    let (train_keys, held_keys) = keys.split_at(200);
    let config = TrainConfig::default().with_seed(21);
    let outcome = train(&rules.schema, train_docs, train_keys, &config).unwrap();

    let outputs: Vec<_> = held_docs
        .iter()
        .map(|d| apply(&rules.schema, &outcome.model, d, false).graph)
        .collect();

    let mut inferred = 0;
    for (doc, out) in held_docs.iter().zip(outputs.iter()) {
        let visible_proc = doc.objects.iter().any(|o| o.type_name == "proc");
        let unknown_parent = out
            .objects
            .iter()
            .find(|o| o.type_name == "proc" && o.data_value("ptype") == Some("unknown"));
        if !visible_proc {
            let parent = unknown_parent.expect("orphan device gets a parent");
            let device = out.objects.iter().find(|o| o.type_name == "device").unwrap();
            assert_eq!(parent.pointer_fill("dev"), [device.id.clone()]);
            inferred += 1;
        } else {
            assert!(unknown_parent.is_none(), "{}: spurious inferred parent", doc.doc_id);
        }
    }
    assert!(inferred >= 10, "only {inferred} inferences happened");

    let report: ScoreReport = score(&rules.schema, &outputs, held_keys).unwrap();
    assert_eq!(report.overall.f, 100.0, "{}", report.table());
}

/// Empty inferable slots get the context-sensitive default the corpus
/// supports: in-use dominates, so missing status fills as in-use.
#[test]
fn missing_slot_values_are_inferred() {
    let rules = presets::default_rules::<f64>();
    let (docs, keys) = gen_corpus(&rules, 300, 8).unwrap();
    let config = TrainConfig::default().with_seed(8);
    let outcome = train(&rules.schema, &docs, &keys, &config).unwrap();

    // A bare reliable process with no status: stage 6 fills the majority
    // default.
    let mut doc = DocumentInput {
        doc_id: "probe".into(),
        objects: Vec::new(),
    };
    let mut obj = discourse::frames::ExtractedObject::new("p1", "process");
    obj.closed.insert("ptype".into(), "TSOP".into());
    obj.references = vec![
        discourse::frames::Reference::new(
            0,
            discourse::frames::ExtractionPattern::new(
                discourse::frames::PatternKind::Keyword,
                &["tsop"],
            ),
        );
        3
    ];
    doc.objects.push(obj);
    let graph = apply(&rules.schema, &outcome.model, &doc, false).graph;
    let process = graph.objects.iter().find(|o| o.type_name == "process").unwrap();
    assert_eq!(process.data_value("status"), Some("in-use"));
}

/// Training twice with the same inputs produces byte-identical models.
#[test]
fn training_is_deterministic() {
    let rules = presets::default_rules::<f64>();
    let (docs, keys) = gen_corpus(&rules, 80, 55).unwrap();
    let config = TrainConfig::default().with_seed(55);
    let a = train(&rules.schema, &docs, &keys, &config).unwrap();
    let b = train(&rules.schema, &docs, &keys, &config).unwrap();
    assert_eq!(a.model.to_json(), b.model.to_json());
}

/// A corpus and key set that disagree on document ids fails scoring with
/// the difference spelled out.
#[test]
fn score_reports_doc_set_differences() {
    let rules = presets::identity_rules::<f64>();
    let (docs, keys) = gen_corpus(&rules, 4, 9).unwrap();
    let outcome = train(&rules.schema, &docs, &keys, &TrainConfig::default()).unwrap();
    let outputs: Vec<_> = docs
        .iter()
        .take(3)
        .map(|d| apply(&rules.schema, &outcome.model, d, false).graph)
        .collect();
    let err = score::<f64>(&rules.schema, &outputs, &keys).unwrap_err();
    assert!(err.to_string().contains("doc-00003"));
}

/// Answer keys containing cycles (mutual company/tieup pointers) survive
/// the whole training loop.
#[test]
fn cyclic_keys_train_without_error() {
    let schema = discourse::schema::parse_schema(
        r#"{"types": [
        {"name": "company", "slots": [
          {"name": "name", "kind": "open", "key": true},
          {"name": "rel", "kind": "pointer", "targets": ["tieup"], "back_pointer": true, "multi": true}
        ]},
        {"name": "tieup", "slots": [
          {"name": "status", "kind": "closed", "values": ["active", "dissolved"], "key": true},
          {"name": "partner", "kind": "pointer", "targets": ["company"], "multi": true}
        ]}
    ]}"#,
    )
    .unwrap();

    let mut docs = Vec::new();
    let mut keys = Vec::new();
    for i in 0..30 {
        let mut company = discourse::frames::ExtractedObject::new("c1", "company");
        company.open.insert("name".into(), format!("co-{i}"));
        company.references = vec![discourse::frames::Reference::new(
            0,
            discourse::frames::ExtractionPattern::new(
                discourse::frames::PatternKind::Keyword,
                &["company"],
            ),
        )];
        let mut tieup = discourse::frames::ExtractedObject::new("t1", "tieup");
        tieup.closed.insert("status".into(), "active".into());
        tieup.references = vec![discourse::frames::Reference::new(
            0,
            discourse::frames::ExtractionPattern::new(
                discourse::frames::PatternKind::Keyword,
                &["tieup"],
            ),
        )];
        docs.push(DocumentInput {
            doc_id: format!("d{i}"),
            objects: vec![company, tieup],
        });

        let mut kc = discourse::frames::KeyObject::new("kc", "company");
        kc.open.insert("name".into(), format!("co-{i}"));
        kc.pointers.insert("rel".into(), vec!["kt".into()]);
        let mut kt = discourse::frames::KeyObject::new("kt", "tieup");
        kt.closed.insert("status".into(), "active".into());
        kt.pointers.insert("partner".into(), vec!["kc".into()]);
        keys.push(AnswerKey {
            doc_id: format!("d{i}"),
            objects: vec![kc, kt],
        });
    }
    let config = TrainConfig::default().with_seed(2);
    let outcome = train(&schema, &docs, &keys, &config).unwrap();
    let graph = apply(&schema, &outcome.model, &docs[0], false).graph;
    // The learned partner link plus its mechanical back pointer form the
    // cycle the keys describe.
    let tieup = graph.objects.iter().find(|o| o.type_name == "tieup").unwrap();
    assert_eq!(tieup.pointer_fill("partner"), ["c1"]);
    let company = graph.objects.iter().find(|o| o.type_name == "company").unwrap();
    assert_eq!(company.pointer_fill("rel"), ["t1"]);
    let report: ScoreReport = score(&schema, &[graph], &keys[..1]).unwrap();
    assert_eq!(report.overall.f, 100.0);
}
