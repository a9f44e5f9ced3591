//! `turngraph` command-line entry point.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use turngraph::checkpoint::{Checkpoint, CheckpointError};
use turngraph::corpus::{class_counts, load_corpus, stratified_split, CorpusError, SplitAssignment};
use turngraph::embeddings::{hash_embed_corpus, read_store, validate_against_corpus, write_store, EmbeddingStore, StoreError, DEFAULT_DIM};
use turngraph::entities::{annotate_corpus, import_annotations, write_annotations, AnnotationMap, AnnotationSource, EntityError};
use turngraph::eval::{render_explanation, report_csv, AttentionExplanation, EvaluationReport, MetricsError, TurnWeight, DEFAULT_SNIPPET_WIDTH};
use turngraph::graph::{graph_stats, graph_to_json, GraphError};
use turngraph::model::{predict, ModelError};
use turngraph::train::{ablate, ablation_csv, history_csv, prepare_graphs, run_suite, train_on_graphs, LabeledGraph, SamplerMode, TrainError, TrainRunConfig};
use turngraph::{DialogueRecord, Variant};

use config::{Effective, IoConfig, Overrides};

const DEFAULT_TOP_K: usize = 3;

#[derive(Parser)]
#[command(name = "turngraph", version, about = "Dialogue-level hallucination detection with temporal turn graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dialogue corpus and print per-class counts; with --out-dir, also write split.json.
    Ingest,
    /// Hash-embed every turn into embeddings.tgne, or validate an existing store given by --embeddings.
    Embed,
    /// Extract heuristic entities into entities.jsonl, or validate an existing file given by --entities.
    Annotate,
    /// Build graphs for one variant and write graph_stats.csv (and graphs/*.json with --dump).
    BuildGraph {
        /// Also write one JSON dump per dialogue under graphs/.
        #[arg(long)]
        dump: bool,
    },
    /// Train one run and write model.tgnm, history.csv, split.json and validation reports.
    Train {
        /// Additionally run the multi-seed suite (--runs seeds) and write suite.csv / suite.json.
        #[arg(long)]
        suite: bool,
    },
    /// Run the multi-seed suite for all five variants and write ablation.csv / ablation.json.
    Ablate,
    /// Evaluate a checkpoint and write report.json, report.csv and confusion.csv.
    Eval,
    /// Write per-turn attention listings to explanations.jsonl and print them.
    Explain,
}

#[derive(Args)]
struct Flags {
    /// TOML config file; its keys mirror the long flags (snake_case) and training settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dialogue corpus in JSONL form.
    #[arg(long, global = true, value_name = "FILE")]
    dialogues: Option<PathBuf>,
    /// Entity annotations in JSONL form; dialogues without a line fall back to the heuristic extractor.
    #[arg(long, global = true, value_name = "FILE")]
    entities: Option<PathBuf>,
    /// Turn embedding store (.tgne); hash embeddings are computed when absent.
    #[arg(long, global = true, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Graph variant: T, E, ET, EzT or ETz (table labels such as "TGN[E'T]" are also accepted).
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Base seed; suites use seed, seed+1, ...
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of seeds in a suite.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Dialogues per optimizer step.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Fraction of each class assigned to training.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Training sampler: weighted (class-balanced) or uniform.
    #[arg(long, global = true, value_parser = parse_sampler)]
    sampler: Option<SamplerMode>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads for per-dialogue stages; 0 uses all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Hash embedding width when no store is given.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Model checkpoint (.tgnm) for eval and explain.
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// split.json restricting eval and explain to its validation ids.
    #[arg(long, global = true, value_name = "FILE")]
    split: Option<PathBuf>,
    /// Number of highlighted turns per explanation.
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Truncation width for turn text in printed explanations.
    #[arg(long, global = true)]
    width: Option<usize>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: GraphError| e.to_string())
}

fn parse_sampler(s: &str) -> Result<SamplerMode, String> {
    match s {
        "weighted" => Ok(SamplerMode::Weighted),
        "uniform" => Ok(SamplerMode::Uniform),
        _ => Err(format!("unknown sampler {s:?}; expected weighted or uniform")),
    }
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            io: IoConfig {
                dialogues: self.dialogues.clone(),
                entities: self.entities.clone(),
                embeddings: self.embeddings.clone(),
                out_dir: self.out_dir.clone(),
                checkpoint: self.checkpoint.clone(),
                split: self.split.clone(),
                dim: self.dim,
                jobs: self.jobs,
                top_k: self.top_k,
                width: self.width,
            },
            variant: self.variant,
            seed: self.seed,
            runs: self.runs,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            ratio: self.ratio,
            sampler: self.sampler,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Embed => "embed",
            Command::Annotate => "annotate",
            Command::BuildGraph { .. } => "build-graph",
            Command::Train { .. } => "train",
            Command::Ablate => "ablate",
            Command::Eval => "eval",
            Command::Explain => "explain",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": error_kind(&e),
                "message": format!("{e:#}"),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<CorpusError>() {
            return "corpus";
        }
        if cause.is::<EntityError>() {
            return "entities";
        }
        if cause.is::<StoreError>() {
            return "embeddings";
        }
        if cause.is::<GraphError>() {
            return "graph";
        }
        if cause.is::<ModelError>() {
            return "model";
        }
        if cause.is::<CheckpointError>() {
            return "checkpoint";
        }
        if cause.is::<MetricsError>() {
            return "metrics";
        }
        if cause.is::<TrainError>() {
            return "train";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "usage"
}

fn run(cli: Cli) -> Result<()> {
    let eff = config::resolve(cli.command.name(), cli.flags.config.as_deref(), cli.flags.overrides())?;
    println!("effective config: {}", serde_json::to_string(&eff)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eff.io.jobs.unwrap_or(0))
        .build()
        .context("cannot start worker pool")?;
    pool.install(|| match &cli.command {
        Command::Ingest => ingest(&eff),
        Command::Embed => embed(&eff),
        Command::Annotate => annotate(&eff),
        Command::BuildGraph { dump } => build_graphs(&eff, *dump),
        Command::Train { suite } => train(&eff, *suite),
        Command::Ablate => run_ablation(&eff),
        Command::Eval => evaluate(&eff),
        Command::Explain => explain(&eff),
    })
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("missing required --{flag}"))
}

fn out_dir(eff: &Effective) -> Result<PathBuf> {
    let dir = require(&eff.io.out_dir, "out-dir")?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn corpus(eff: &Effective) -> Result<Vec<DialogueRecord>> {
    let path = require(&eff.io.dialogues, "dialogues")?;
    load_corpus(path).with_context(|| format!("in {}", path.display()))
}

/// The given store, or hash embeddings of width `dim`.
fn store(eff: &Effective, corpus: &[DialogueRecord], dim: usize) -> Result<EmbeddingStore> {
    match &eff.io.embeddings {
        Some(p) => {
            let store = read_store(p).with_context(|| format!("in {}", p.display()))?;
            let report = validate_against_corpus(&store, corpus);
            if !report.is_ok() {
                bail!(TrainError::from(report));
            }
            Ok(store)
        }
        None => Ok(hash_embed_corpus(corpus, dim)?),
    }
}

fn annotations(eff: &Effective, corpus: &[DialogueRecord]) -> Result<AnnotationMap> {
    match &eff.io.entities {
        Some(p) => import_annotations(p, corpus).with_context(|| format!("in {}", p.display())),
        None => Ok(annotate_corpus(corpus)),
    }
}

fn ingest(eff: &Effective) -> Result<()> {
    let corpus = corpus(eff)?;
    println!("records {}", corpus.len());
    for (c, n) in class_counts(&corpus) {
        println!("{c} {n}");
    }
    if eff.io.out_dir.is_some() {
        let split = stratified_split(&corpus, eff.train.ratio, eff.train.seed)?;
        write_json(&out_dir(eff)?.join("split.json"), &split)?;
    }
    Ok(())
}

fn embed(eff: &Effective) -> Result<()> {
    let corpus = corpus(eff)?;
    if let Some(p) = &eff.io.embeddings {
        let store = store(eff, &corpus, 0)?;
        println!("{} ok: {} dialogues, dim {}", p.display(), store.len(), store.dim());
        return Ok(());
    }
    let store = hash_embed_corpus(&corpus, eff.io.dim.unwrap_or(DEFAULT_DIM))?;
    let path = out_dir(eff)?.join("embeddings.tgne");
    write_store(&path, &store)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn annotate(eff: &Effective) -> Result<()> {
    let corpus = corpus(eff)?;
    if let Some(p) = &eff.io.entities {
        let ann = annotations(eff, &corpus)?;
        let imported = ann.values().filter(|a| a.source == AnnotationSource::Imported).count();
        println!("{} ok: {imported} imported, {} heuristic fallback", p.display(), ann.len() - imported);
        return Ok(());
    }
    let ann = annotate_corpus(&corpus);
    let path = out_dir(eff)?.join("entities.jsonl");
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?);
    write_annotations(&mut out, corpus.iter().map(|d| &ann[&d.id].annotation))?;
    out.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn graphs_for(eff: &Effective, corpus: &[DialogueRecord], variant: Variant, dim: usize) -> Result<Vec<LabeledGraph>> {
    let store = store(eff, corpus, dim)?;
    let ann = annotations(eff, corpus)?;
    Ok(prepare_graphs(corpus, &store, &ann, variant)?)
}

fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn build_graphs(eff: &Effective, dump: bool) -> Result<()> {
    let corpus = corpus(eff)?;
    let graphs = graphs_for(eff, &corpus, eff.train.variant, eff.io.dim.unwrap_or(DEFAULT_DIM))?;
    let dir = out_dir(eff)?;
    let mut csv = String::from("id,n_nodes,n_temporal,n_entity,mean_degree\n");
    for g in &graphs {
        let s = graph_stats(&g.graph);
        csv.push_str(&format!(
            "{},{},{},{},{:.4}\n",
            g.graph.dialogue_id, s.n_nodes, s.n_temporal, s.n_entity, s.mean_degree
        ));
    }
    write_file(&dir.join("graph_stats.csv"), csv)?;
    if dump {
        let gdir = dir.join("graphs");
        fs::create_dir_all(&gdir)?;
        for g in &graphs {
            let path = gdir.join(format!("{}.json", safe_file_name(&g.graph.dialogue_id)));
            fs::write(&path, graph_to_json(&g.graph) + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        }
        println!("wrote {} graph dumps to {}", graphs.len(), gdir.display());
    }
    Ok(())
}

fn write_reports(dir: &Path, label: &str, report: &EvaluationReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    write_file(&dir.join("report.csv"), report_csv(label, report))?;
    write_file(&dir.join("confusion.csv"), report.confusion.to_csv())?;
    print!("{}", report.per_class_table());
    Ok(())
}

fn train(eff: &Effective, suite: bool) -> Result<()> {
    let corpus = corpus(eff)?;
    let cfg = &eff.train;
    let graphs = graphs_for(eff, &corpus, cfg.variant, eff.io.dim.unwrap_or(DEFAULT_DIM))?;
    let dir = out_dir(eff)?;
    let outcome = train_on_graphs(&graphs, cfg)?;
    Checkpoint::new(outcome.params, cfg.seed, serde_json::to_value(cfg)?).save(dir.join("model.tgnm"))?;
    println!("wrote {}", dir.join("model.tgnm").display());
    write_file(&dir.join("history.csv"), history_csv(&outcome.history))?;
    write_json(&dir.join("split.json"), &outcome.split)?;
    write_reports(&dir, cfg.variant.label(), &outcome.val_report)?;
    println!(
        "train acc {:.4}, val acc {:.4}, val binary acc {:.4}",
        outcome.train_report.multiclass_acc, outcome.val_report.multiclass_acc, outcome.val_report.binary_acc
    );
    if suite {
        let store = store(eff, &corpus, eff.io.dim.unwrap_or(DEFAULT_DIM))?;
        let ann = annotations(eff, &corpus)?;
        let report = run_suite(&corpus, &store, &ann, cfg)?;
        let csv = ablation_csv(std::slice::from_ref(&report));
        write_file(&dir.join("suite.csv"), &csv)?;
        write_json(&dir.join("suite.json"), &report)?;
        print!("{csv}");
    }
    Ok(())
}

fn run_ablation(eff: &Effective) -> Result<()> {
    let corpus = corpus(eff)?;
    let store = store(eff, &corpus, eff.io.dim.unwrap_or(DEFAULT_DIM))?;
    let ann = annotations(eff, &corpus)?;
    let dir = out_dir(eff)?;
    let rows = ablate(&corpus, &store, &ann, &eff.train)?;
    let csv = ablation_csv(&rows);
    write_file(&dir.join("ablation.csv"), &csv)?;
    write_json(&dir.join("ablation.json"), &rows)?;
    print!("{csv}");
    Ok(())
}

/// Checkpoint plus the graphs it should be applied to (all dialogues, or the
/// validation ids of `--split`).
fn load_for_inference(eff: &Effective) -> Result<(Checkpoint, Variant, Vec<DialogueRecord>, Vec<LabeledGraph>)> {
    let path = require(&eff.io.checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(path).with_context(|| format!("in {}", path.display()))?;
    let trained: Option<TrainRunConfig> = serde_json::from_value(ck.header.config.clone()).ok();
    let variant = match trained {
        Some(t) if !eff.variant_explicit => t.variant,
        _ => eff.train.variant,
    };
    println!("variant {variant}, input dim {}", ck.params.hp.input_dim);
    let mut corpus = corpus(eff)?;
    let mut graphs = graphs_for(eff, &corpus, variant, ck.params.hp.input_dim)?;
    if let Some(p) = &eff.io.split {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        let split: SplitAssignment = serde_json::from_str(&text).with_context(|| format!("in {}", p.display()))?;
        let val = split.val_set();
        if let Some(id) = val.iter().find(|id| !corpus.iter().any(|d| d.id == **id)) {
            bail!("split id {id:?} is not in the corpus");
        }
        corpus.retain(|d| val.contains(d.id.as_str()));
        graphs.retain(|g| val.contains(g.graph.dialogue_id.as_str()));
    }
    Ok((ck, variant, corpus, graphs))
}

fn evaluate(eff: &Effective) -> Result<()> {
    let (ck, variant, _, graphs) = load_for_inference(eff)?;
    let refs: Vec<&LabeledGraph> = graphs.iter().collect();
    let report = turngraph::train::evaluate(&ck.params, &refs)?;
    write_reports(&out_dir(eff)?, variant.label(), &report)
}

fn explain(eff: &Effective) -> Result<()> {
    let (ck, _, corpus, graphs) = load_for_inference(eff)?;
    let top_k = eff.io.top_k.unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        bail!("top_k must be >= 1");
    }
    let width = eff.io.width.unwrap_or(DEFAULT_SNIPPET_WIDTH);
    let path = out_dir(eff)?.join("explanations.jsonl");
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("cannot write {}", path.display()))?);
    for (d, g) in corpus.iter().zip(&graphs) {
        let pred = predict(&ck.params, &g.graph)?;
        let expl = AttentionExplanation {
            dialogue_id: d.id.clone(),
            turns: d
                .turns
                .iter()
                .zip(&pred.attention)
                .map(|(t, &weight)| TurnWeight {
                    index: t.index,
                    weight,
                    text: t.text.clone(),
                })
                .collect(),
            predicted: pred.category,
            gold: d.label,
        };
        serde_json::to_writer(&mut out, &expl)?;
        out.write_all(b"\n")?;
        println!("{}", render_explanation(&expl, top_k, width));
    }
    out.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}
