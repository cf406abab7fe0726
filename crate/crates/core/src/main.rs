use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;

use discourse::frames::{self, AnswerKey, DocumentInput};
use discourse::id3::Grid;
use discourse::pipeline;
use discourse::schema::{parse_schema, OutputSchema, TreeSpec};
use discourse::synth;
use discourse::{eval, Model, ScoreReport, TrainConfig};

/// Trainable discourse processing: learn per-decision trees from answer
/// keys, then filter, merge, link, split, and infer objects per document.
#[derive(Parser)]
#[command(name = "discourse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a corpus and its answer keys.
    Train(TrainArgs),
    /// Train and report the full per-tree tuning table.
    Tune(TrainArgs),
    /// Run a trained model over a corpus, writing output graphs.
    Apply(ApplyArgs),
    /// Score output graphs against answer keys.
    Score(ScoreArgs),
    /// Generate a synthetic corpus with keys from a rules file or preset.
    Synth(SynthArgs),
    /// Render a stored decision tree with per-node class counts.
    InspectTree(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    /// Model output path (optional for `tune`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-tree beta override, e.g. `filter:entity.name=0.5`; a trailing
    /// `*` matches a prefix. Repeatable.
    #[arg(long, value_name = "SPEC=VAL")]
    beta: Vec<String>,
    /// Comma-separated pruning levels for the CV grid.
    #[arg(long, value_name = "N,N,...")]
    grid_pruning: Option<String>,
    /// Comma-separated confidence thresholds for the CV grid.
    #[arg(long, value_name = "P,P,...")]
    grid_threshold: Option<String>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Write every labeled training instance as JSON Lines.
    #[arg(long)]
    dump_instances: Option<PathBuf>,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write per-stage snapshots (JSON Lines) to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Output graphs as written by `apply`.
    #[arg(long)]
    outputs: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Rules file (JSON). Mutually exclusive with --preset.
    #[arg(long, conflicts_with = "preset")]
    rules: Option<PathBuf>,
    /// Built-in rule set: default, identity, rule-recovery, orphan,
    /// walkthrough.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_corpus: PathBuf,
    #[arg(long)]
    out_keys: PathBuf,
    /// Also write the effective rules (with schema) to this path.
    #[arg(long)]
    write_rules: Option<PathBuf>,
    /// Also write the rules' schema to this path.
    #[arg(long)]
    write_schema: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tree key, e.g. `link:process.device->device`. Omit to list all.
    #[arg(long)]
    tree: Option<String>,
    #[arg(long, default_value_t = usize::MAX)]
    max_depth: usize,
}

enum CmdError {
    Usage(String),
    Run(String),
}

impl CmdError {
    fn code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 2,
            CmdError::Run(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CmdError::Usage(m) | CmdError::Run(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CmdError + '_ {
    move |e| CmdError::Usage(format!("{context}: {e}"))
}

fn read_file(path: &Path) -> Result<String, CmdError> {
    fs::read_to_string(path)
        .map_err(|e| CmdError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Atomic write: temp file in the same directory, then rename.
fn write_file(path: &Path, contents: &str) -> Result<(), CmdError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .and_then(|()| fs::rename(&tmp, path))
        .map_err(|e| CmdError::Run(format!("cannot write {}: {e}", path.display())))
}

fn load_schema(path: &Path) -> Result<OutputSchema, CmdError> {
    parse_schema(&read_file(path)?).map_err(usage("schema"))
}

fn load_corpus(path: &Path, schema: &OutputSchema) -> Result<Vec<DocumentInput>, CmdError> {
    let parsed = frames::parse_documents(&read_file(path)?, schema);
    for w in &parsed.warnings {
        eprintln!("warning: corpus: {w}");
    }
    Ok(parsed.items)
}

fn load_keys(path: &Path, schema: &OutputSchema) -> Result<Vec<AnswerKey>, CmdError> {
    let parsed = frames::parse_keys(&read_file(path)?, schema);
    for w in &parsed.warnings {
        eprintln!("warning: keys: {w}");
    }
    Ok(parsed.items)
}

fn parse_ratio(text: &str) -> Result<Ratio<u64>, CmdError> {
    let t = text.trim();
    let bad = || CmdError::Usage(format!("bad threshold {t:?}"));
    if let Some((int, frac)) = t.split_once('.') {
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let digits = frac.len() as u32;
        if digits == 0 || digits > 9 {
            return Err(bad());
        }
        let frac: u64 = frac.parse().map_err(|_| bad())?;
        let den = 10u64.pow(digits);
        Ok(Ratio::new(int * den + frac, den))
    } else {
        let int: u64 = t.parse().map_err(|_| bad())?;
        Ok(Ratio::new(int, 1))
    }
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig, CmdError> {
    let mut grid = Grid::default();
    if let Some(p) = &args.grid_pruning {
        grid.pruning = p
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(usage("--grid-pruning"))?;
    }
    if let Some(t) = &args.grid_threshold {
        grid.thresholds = t.split(',').map(parse_ratio).collect::<Result<_, _>>()?;
    }
    if grid.pruning.is_empty() || grid.thresholds.is_empty() {
        return Err(CmdError::Usage("empty tuning grid".to_string()));
    }
    let mut beta_overrides = BTreeMap::new();
    for spec in &args.beta {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CmdError::Usage(format!("bad --beta {spec:?}, expected SPEC=VAL")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| CmdError::Usage(format!("bad --beta value in {spec:?}")))?;
        beta_overrides.insert(key.to_string(), value);
    }
    Ok(TrainConfig {
        seed: args.seed,
        folds: args.folds,
        grid,
        default_beta: 1.0,
        beta_overrides,
    })
}

fn cmd_train(args: &TrainArgs, verbose_grid: bool) -> Result<(), CmdError> {
    // `tune` may run report-only; `train` must produce a model.
    if args.out.is_none() && !verbose_grid {
        return Err(CmdError::Usage("--out is required for train".to_string()));
    }
    let schema = load_schema(&args.schema)?;
    let docs = load_corpus(&args.corpus, &schema)?;
    let keys = load_keys(&args.keys, &schema)?;
    let config = build_config(args)?;
    let mut dump = args.dump_instances.as_ref().map(|_| Vec::new());
    let outcome = pipeline::train_with_dump(&schema, &docs, &keys, &config, dump.as_mut())
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    println!(
        "{:<36} {:>9} {:>9} {:>8} {:>10} {:>8}",
        "tree", "instances", "positive", "pruning", "threshold", "cv-f"
    );
    for r in &outcome.reports {
        match &r.tuned {
            Some(t) => println!(
                "{:<36} {:>9} {:>9} {:>8} {:>10} {:>8.1}",
                r.key,
                r.instances,
                r.positive,
                t.pruning,
                format!("{}/{}", t.threshold.numer(), t.threshold.denom()),
                t.cv_f * 100.0
            ),
            None => println!(
                "{:<36} {:>9} {:>9} {:>8} {:>10} {:>8}",
                r.key, 0, 0, "-", "untrained", "-"
            ),
        }
    }
    if verbose_grid {
        println!(
            "\ngrid: pruning {:?}, thresholds {}",
            config.grid.pruning,
            config
                .grid
                .thresholds
                .iter()
                .map(|t| format!("{}/{}", t.numer(), t.denom()))
                .collect::<Vec<_>>()
                .join(",")
        );
        println!("seed: {}", config.seed);
    }

    if let (Some(path), Some(rows)) = (&args.dump_instances, dump) {
        let mut out = String::new();
        for (tree, inst) in rows {
            let line = serde_json::json!({"tree": tree, "instance": inst});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        write_file(path, &out)?;
    }
    if let Some(out) = &args.out {
        write_file(out, &outcome.model.to_json())?;
        println!("model written to {}", out.display());
    }
    Ok(())
}

fn cmd_apply(args: &ApplyArgs) -> Result<(), CmdError> {
    let schema = load_schema(&args.schema)?;
    let model = Model::from_json(&read_file(&args.model)?).map_err(usage("model"))?;
    model.check_schema(&schema).map_err(usage("model"))?;
    let docs = load_corpus(&args.corpus, &schema)?;

    let mut out = String::new();
    let mut trace_out = String::new();
    for doc in &docs {
        let applied = pipeline::apply(&schema, &model, doc, args.trace.is_some());
        for w in &applied.warnings {
            eprintln!("warning: {w}");
        }
        out.push_str(&applied.graph.to_line());
        out.push('\n');
        for snap in applied.snapshots {
            trace_out.push_str(&serde_json::to_string(&snap).expect("snapshot serializes"));
            trace_out.push('\n');
        }
    }
    write_file(&args.out, &out)?;
    println!("{} graphs written to {}", docs.len(), args.out.display());
    if let Some(trace) = &args.trace {
        write_file(trace, &trace_out)?;
        println!("trace written to {}", trace.display());
    }
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<(), CmdError> {
    let schema = load_schema(&args.schema)?;
    let keys = load_keys(&args.keys, &schema)?;
    let mut graphs = Vec::new();
    for (lineno, line) in read_file(&args.outputs)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let graph = pipeline::OutputGraph::from_line(line)
            .map_err(|e| CmdError::Usage(format!("outputs line {}: {e}", lineno + 1)))?;
        graphs.push(graph);
    }
    let report: ScoreReport = eval::score(&schema, &graphs, &keys).map_err(usage("score"))?;
    print!("{}", report.table());
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    if let Some(out) = &args.out {
        write_file(out, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CmdError> {
    let mut rules = match (&args.rules, &args.preset) {
        (Some(path), None) => synth::GenRules::from_json(&read_file(path)?)
            .map_err(usage("rules"))?,
        (None, Some(name)) => synth::presets::preset(name).ok_or_else(|| {
            CmdError::Usage(format!(
                "unknown preset {name:?}; have {}",
                synth::presets::preset_names().join(", ")
            ))
        })?,
        _ => {
            return Err(CmdError::Usage(
                "exactly one of --rules or --preset is required".to_string(),
            ))
        }
    };
    rules.seed = args.seed;
    let (docs, keys) =
        synth::gen_corpus(&rules, args.docs, args.seed).map_err(usage("generation"))?;
    let corpus: String = docs
        .iter()
        .map(|d| frames::document_to_line(d) + "\n")
        .collect();
    let keys_text: String = keys.iter().map(|k| frames::key_to_line(k) + "\n").collect();
    write_file(&args.out_corpus, &corpus)?;
    write_file(&args.out_keys, &keys_text)?;
    if let Some(path) = &args.write_rules {
        write_file(path, &rules.to_json())?;
    }
    if let Some(path) = &args.write_schema {
        write_file(path, &rules.schema.to_json())?;
    }
    println!(
        "{} documents, {} keys written; rules digest {}",
        docs.len(),
        keys.len(),
        rules.digest()
    );
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<(), CmdError> {
    let model = Model::from_json(&read_file(&args.model)?).map_err(usage("model"))?;
    match &args.tree {
        None => {
            for (key, entry) in &model.trees {
                match entry {
                    pipeline::TrainedTree::Trained { tree } => println!(
                        "{key}  [pruning {}, threshold {}/{}, beta {}]",
                        tree.pruning_level,
                        tree.threshold.numer(),
                        tree.threshold.denom(),
                        tree.beta
                    ),
                    pipeline::TrainedTree::Untrained => println!("{key}  [untrained]"),
                }
            }
        }
        Some(key) => {
            if TreeSpec::parse(key).is_none() {
                return Err(CmdError::Usage(format!("bad tree key {key:?}")));
            }
            match model.trees.get(key) {
                Some(pipeline::TrainedTree::Trained { tree }) => {
                    println!(
                        "{key}  [pruning {}, threshold {}/{}, beta {}, cv-f {}]",
                        tree.pruning_level,
                        tree.threshold.numer(),
                        tree.threshold.denom(),
                        tree.beta,
                        tree.cv_f.map(|f| format!("{:.1}", f * 100.0)).unwrap_or_default()
                    );
                    let rendering = tree.render();
                    for line in rendering.lines() {
                        let depth = line.chars().take_while(|c| *c == ' ').count() / 2;
                        if depth <= args.max_depth {
                            println!("{line}");
                        }
                    }
                }
                Some(pipeline::TrainedTree::Untrained) => println!("{key}  [untrained]"),
                None => {
                    return Err(CmdError::Usage(format!("no such tree in model: {key}")));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args, false),
        Command::Tune(args) => cmd_train(args, true),
        Command::Apply(args) => cmd_apply(args),
        Command::Score(args) => cmd_score(args),
        Command::Synth(args) => cmd_synth(args),
        Command::InspectTree(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
