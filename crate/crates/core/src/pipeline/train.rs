//! Staged bootstrap training.
//!
//! Trees are trained one stage at a time: stage k instances are generated
//! from training documents processed by the learned stages 1..k-1, with
//! their possibly erroneous behavior intact, so training reflects the
//! state of processing at run time. Within link creation the bootstrap is
//! per slot, in link order, because later slots see the pointers added by
//! earlier ones.

use std::collections::BTreeMap;

use num_rational::Ratio;

use crate::features::Instance;
use crate::frames::{AnswerKey, DocumentInput};
use crate::id3::{build_tree, tune, Confidence, DecisionTree, Label, NEGATIVE, NONE};
use crate::labeler::Matcher;
use crate::real::Real;
use crate::rng::Rng;
use crate::schema::{enumerate_trees, OutputSchema, TreeSpec};

use super::stages::{self, GraphState, TreeSource};
use super::{Model, PipelineError, TrainConfig, TrainedTree, MODEL_FORMAT_VERSION};

/// Per-tree training summary for reporting.
#[derive(Clone, Debug)]
pub struct TreeReport<R> {
    pub key: String,
    pub instances: usize,
    pub positive: usize,
    pub tuned: Option<crate::id3::Tuned<R>>,
}

#[derive(Debug)]
pub struct TrainOutcome<R> {
    pub model: Model<R>,
    pub reports: Vec<TreeReport<R>>,
    pub warnings: Vec<String>,
}

struct Trainer<'a, 'b, R: Real> {
    schema: &'a OutputSchema,
    config: &'a TrainConfig<R>,
    rng: Rng,
    model: Model<R>,
    reports: Vec<TreeReport<R>>,
    warnings: Vec<String>,
    dump: Option<&'b mut Vec<(String, Instance)>>,
}

impl<'a, 'b, R: Real> Trainer<'a, 'b, R> {
    fn fit(&mut self, spec: &TreeSpec, instances: Vec<Instance>) {
        let key = spec.key();
        if let Some(dump) = self.dump.as_deref_mut() {
            for inst in &instances {
                dump.push((key.clone(), inst.clone()));
            }
        }
        let positive = instances
            .iter()
            .filter(|i| i.label.as_deref() != Some(NEGATIVE) && i.label.as_deref() != Some(NONE))
            .count();
        if instances.is_empty() {
            self.model.trees.insert(key.clone(), TrainedTree::Untrained);
            self.reports.push(TreeReport {
                key,
                instances: 0,
                positive: 0,
                tuned: None,
            });
            return;
        }
        let policy = spec.label_policy(self.schema);
        let beta = self.config.beta_for(&key);
        let mut rng = self.rng.derive("cv").derive(&key);
        let tuned = tune(
            &instances,
            &policy,
            beta,
            &self.config.grid,
            self.config.folds,
            &mut rng,
        );
        let tree = DecisionTree {
            root: build_tree(&instances),
            policy,
            pruning_level: tuned.pruning,
            threshold: tuned.threshold,
            beta,
            cv_f: Some(tuned.cv_f),
        };
        self.model
            .trees
            .insert(key.clone(), TrainedTree::Trained { tree });
        self.reports.push(TreeReport {
            key,
            instances: instances.len(),
            positive,
            tuned: Some(tuned),
        });
    }
}

/// Train one tree per enumerated spec over a corpus paired with its answer
/// keys. Documents without a key are excluded with a warning.
pub fn train<R: Real>(
    schema: &OutputSchema,
    docs: &[DocumentInput],
    keys: &[AnswerKey],
    config: &TrainConfig<R>,
) -> Result<TrainOutcome<R>, PipelineError> {
    train_with_dump(schema, docs, keys, config, None)
}

/// As [`train`], optionally collecting every labeled instance for audit.
pub fn train_with_dump<R: Real>(
    schema: &OutputSchema,
    docs: &[DocumentInput],
    keys: &[AnswerKey],
    config: &TrainConfig<R>,
    dump: Option<&mut Vec<(String, Instance)>>,
) -> Result<TrainOutcome<R>, PipelineError> {
    let key_by_doc: BTreeMap<&str, &AnswerKey> =
        keys.iter().map(|k| (k.doc_id.as_str(), k)).collect();

    let mut warnings = Vec::new();
    let mut states: Vec<(GraphState, &AnswerKey)> = Vec::new();
    for doc in docs {
        match key_by_doc.get(doc.doc_id.as_str()) {
            Some(key) => states.push((GraphState::new(&doc.doc_id, doc.objects.clone()), key)),
            None => warnings.push(format!("document {}: no answer key, excluded", doc.doc_id)),
        }
    }
    if states.is_empty() {
        return Err(PipelineError::NoDocuments);
    }

    let specs = enumerate_trees(schema);
    let mut trainer = Trainer {
        schema,
        config,
        rng: Rng::new(config.seed),
        model: Model {
            format_version: MODEL_FORMAT_VERSION,
            schema_digest: schema.digest(),
            config: config.clone(),
            trees: BTreeMap::new(),
        },
        reports: Vec::new(),
        warnings,
        dump,
    };

    train_filter_stage(&mut trainer, &specs, &mut states);
    train_merge_stage(&mut trainer, &specs, &mut states);
    train_link_stage(&mut trainer, &specs, &mut states);
    train_split_stage(&mut trainer, &specs, &mut states);
    train_infer_objects_stage(&mut trainer, &specs, &mut states);
    train_infer_slots_stage(&mut trainer, &specs, &mut states);

    // Present specs in enumeration order in the report.
    let mut ordered = Vec::with_capacity(trainer.reports.len());
    for spec in &specs {
        let key = spec.key();
        if let Some(pos) = trainer.reports.iter().position(|r| r.key == key) {
            ordered.push(trainer.reports[pos].clone());
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        reports: ordered,
        warnings: trainer.warnings,
    })
}

fn collect(
    pool: &mut BTreeMap<TreeSpec, Vec<Instance>>,
    spec: &TreeSpec,
    instance: Instance,
    label: Label,
) {
    pool.entry(spec.clone()).or_default().push(instance.labeled(&label));
}

fn train_filter_stage<R: Real>(
    trainer: &mut Trainer<'_, '_, R>,
    specs: &[TreeSpec],
    states: &mut [(GraphState, &AnswerKey)],
) {
    let mut pool: BTreeMap<TreeSpec, Vec<Instance>> = BTreeMap::new();
    for (state, key) in states.iter() {
        let decisions = stages::filter_decisions(trainer.schema, &state.objects);
        let mut matcher = Matcher::new(trainer.schema, &state.objects, key);
        for d in decisions {
            let obj = state.get(&d.obj).expect("decision object");
            let label = matcher.label_filter(obj, &d.slot);
            collect(&mut pool, &d.spec, d.instance, label);
        }
    }
    for spec in specs.iter().filter(|s| s.stage() == 1) {
        trainer.fit(spec, pool.remove(spec).unwrap_or_default());
    }
    for (state, _) in states.iter_mut() {
        stages::run_filter(trainer.schema, state, &trainer.model);
    }
}

fn train_merge_stage<R: Real>(
    trainer: &mut Trainer<'_, '_, R>,
    specs: &[TreeSpec],
    states: &mut [(GraphState, &AnswerKey)],
) {
    let mut pool: BTreeMap<TreeSpec, Vec<Instance>> = BTreeMap::new();
    for (state, key) in states.iter() {
        let decisions = stages::merge_decisions(trainer.schema, &state.objects);
        let mut matcher = Matcher::new(trainer.schema, &state.objects, key);
        for d in decisions {
            let a = state.get(&d.a).expect("pair member");
            let b = state.get(&d.b).expect("pair member");
            let label = matcher.label_merge(a, b);
            collect(&mut pool, &d.spec, d.instance, label);
        }
    }
    for spec in specs.iter().filter(|s| s.stage() == 2) {
        trainer.fit(spec, pool.remove(spec).unwrap_or_default());
    }
    for (state, _) in states.iter_mut() {
        let warnings = stages::run_merge(trainer.schema, state, &trainer.model);
        trainer.warnings.extend(warnings);
    }
}

fn train_link_stage<R: Real>(
    trainer: &mut Trainer<'_, '_, R>,
    specs: &[TreeSpec],
    states: &mut [(GraphState, &AnswerKey)],
) {
    let plan = stages::link_plan(trainer.schema);
    for (state, _) in states.iter_mut() {
        stages::materialize_synthesized(trainer.schema, state);
    }
    let mut confidences: Vec<BTreeMap<(String, String, String), Confidence>> =
        vec![BTreeMap::new(); states.len()];

    for (i, (ty, slot)) in plan.order.iter().enumerate() {
        if stages::is_anchor_slot(trainer.schema, ty, slot) {
            // Anchors are filled mechanically at materialization; their
            // enumerated trees stay as explicit untrained markers.
            for spec in specs.iter().filter(|s| {
                matches!(s, TreeSpec::Link { owner, slot: sl, .. } if owner == ty && sl == slot)
            }) {
                trainer.fit(spec, Vec::new());
            }
        } else {
            // Instances for this slot's trees, against the current graphs.
            let mut pool: BTreeMap<TreeSpec, Vec<Instance>> = BTreeMap::new();
            let mut per_doc: Vec<Vec<stages::LinkDecision>> = Vec::with_capacity(states.len());
            for (state, key) in states.iter() {
                let decisions =
                    stages::link_slot_decisions(trainer.schema, &state.objects, ty, slot);
                let mut matcher = Matcher::new(trainer.schema, &state.objects, key);
                for d in &decisions {
                    let owner = state.get(&d.owner).expect("owner");
                    let target = state.get(&d.target).expect("target");
                    let label = matcher.label_link(owner, target, slot);
                    collect(&mut pool, &d.spec, d.instance.clone(), label);
                }
                per_doc.push(decisions);
            }
            for spec in specs.iter().filter(|s| {
                matches!(s, TreeSpec::Link { owner, slot: sl, .. } if owner == ty && sl == slot)
            }) {
                trainer.fit(spec, pool.remove(spec).unwrap_or_default());
            }
            // Apply this slot's freshly trained trees before moving on.
            for (di, (state, _)) in states.iter_mut().enumerate() {
                let decisions = std::mem::take(&mut per_doc[di]);
                let classified: Vec<(stages::LinkDecision, Label, Confidence)> = decisions
                    .into_iter()
                    .map(|d| {
                        let (label, conf) = trainer
                            .model
                            .classify(&d.spec, &d.instance)
                            .unwrap_or_else(|| (NEGATIVE.to_string(), Ratio::new(0, 1)));
                        (d, label, conf)
                    })
                    .collect();
                let additions = stages::resolve_link_positives(
                    trainer.schema,
                    &state.objects,
                    ty,
                    slot,
                    &classified,
                );
                for (owner, target, conf) in additions {
                    confidences[di].insert((owner.clone(), slot.clone(), target.clone()), conf);
                    stages::add_pointer(state, &owner, slot, &target);
                }
            }
        }
        for done in &plan.completed_after[i] {
            for (di, (state, _)) in states.iter_mut().enumerate() {
                stages::enforce_single_role(trainer.schema, state, done, &confidences[di]);
                stages::drop_roleless_synthesized(trainer.schema, state, done);
            }
        }
    }
    for (state, _) in states.iter_mut() {
        stages::drop_pointerless_root(trainer.schema, state);
        stages::fill_back_pointers(trainer.schema, state);
    }
}

fn train_split_stage<R: Real>(
    trainer: &mut Trainer<'_, '_, R>,
    specs: &[TreeSpec],
    states: &mut [(GraphState, &AnswerKey)],
) {
    let mut pool: BTreeMap<TreeSpec, Vec<Instance>> = BTreeMap::new();
    for (state, key) in states.iter() {
        let decisions = stages::split_decisions(trainer.schema, &state.objects);
        let mut matcher = Matcher::new(trainer.schema, &state.objects, key);
        for d in decisions {
            let owner = state.get(&d.owner).expect("owner");
            let b = state.get(&d.pair.0).expect("target");
            let c = state.get(&d.pair.1).expect("target");
            let label = matcher.label_split(owner, b, c, &d.slot);
            collect(&mut pool, &d.spec, d.instance, label);
        }
    }
    for spec in specs.iter().filter(|s| s.stage() == 4) {
        trainer.fit(spec, pool.remove(spec).unwrap_or_default());
    }
    for (state, _) in states.iter_mut() {
        stages::run_split(trainer.schema, state, &trainer.model);
    }
}

fn train_infer_objects_stage<R: Real>(
    trainer: &mut Trainer<'_, '_, R>,
    specs: &[TreeSpec],
    states: &mut [(GraphState, &AnswerKey)],
) {
    let order = crate::schema::link_order(trainer.schema);
    let mut pool: BTreeMap<TreeSpec, Vec<Instance>> = BTreeMap::new();
    for (state, key) in states.iter() {
        let decisions = stages::orphan_decisions(trainer.schema, &state.objects);
        let mut matcher = Matcher::new(trainer.schema, &state.objects, key);
        for d in decisions {
            let obj = state.get(&d.obj).expect("orphan");
            let label = matcher.label_orphan(obj, &order);
            collect(&mut pool, &d.spec, d.instance, label);
        }
    }
    for spec in specs.iter().filter(|s| s.stage() == 5) {
        trainer.fit(spec, pool.remove(spec).unwrap_or_default());
    }
    for (state, _) in states.iter_mut() {
        stages::run_infer_objects(trainer.schema, state, &trainer.model);
    }
}

fn train_infer_slots_stage<R: Real>(
    trainer: &mut Trainer<'_, '_, R>,
    specs: &[TreeSpec],
    states: &mut [(GraphState, &AnswerKey)],
) {
    let mut pool: BTreeMap<TreeSpec, Vec<Instance>> = BTreeMap::new();
    for (state, key) in states.iter() {
        let decisions = stages::default_slot_decisions(trainer.schema, &state.objects);
        let mut matcher = Matcher::new(trainer.schema, &state.objects, key);
        for d in decisions {
            let obj = state.get(&d.obj).expect("object");
            let label = matcher.label_default_slot(obj, &d.slot);
            collect(&mut pool, &d.spec, d.instance, label);
        }
    }
    for spec in specs.iter().filter(|s| s.stage() == 6) {
        trainer.fit(spec, pool.remove(spec).unwrap_or_default());
    }
    for (state, _) in states.iter_mut() {
        stages::run_infer_slots(trainer.schema, state, &trainer.model);
    }
}
