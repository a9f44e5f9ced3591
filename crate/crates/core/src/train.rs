//! Training: class-balanced sampling, mini-batch Adam, multi-seed suites and
//! the five-variant ablation.
//!
//! Every source of randomness is a [`Prng`] stream derived from the run seed,
//! and batch gradients are reduced in batch order, so a run is a pure
//! function of its inputs and config regardless of how many threads
//! evaluate it.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{class_counts, stratified_split, Category, CorpusError, DialogueRecord, SplitAssignment};
use crate::embeddings::{validate_against_corpus, EmbeddingStore, StoreValidation};
use crate::entities::{extract_heuristic, AnnotationMap};
use crate::eval::{aggregate_csv, AggregateReport, EvaluationReport, MetricsError};
use crate::graph::{build_graph, graph_stats, GraphError, TurnGraph, Variant};
use crate::model::{forward, init_params, loss_and_gradients, predict, Hyperparams, ModelError, ModelParameters};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Prng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("embeddings do not cover the corpus: missing {missing:?}, row mismatches {mismatched}")]
    Embeddings { missing: Vec<String>, mismatched: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("all class counts are zero")]
    NoSamples,
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch} on dialogue {dialogue_id:?} (seed {seed})")]
    NonFiniteLoss { seed: u64, epoch: usize, dialogue_id: String },
    #[error("run with seed {seed} failed: {source}")]
    Run {
        seed: u64,
        #[source]
        source: Box<TrainError>,
    },
}

impl From<StoreValidation> for TrainError {
    fn from(v: StoreValidation) -> Self {
        TrainError::Embeddings {
            missing: v.missing,
            mismatched: v.mismatched.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// With replacement, inverse class frequency weights.
    Weighted,
    /// With replacement, every training dialogue equally likely.
    Uniform,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub runs: usize,
    pub ratio: f64,
    pub sampler: SamplerMode,
    pub hidden_dim: usize,
    pub layers: usize,
    pub attn_dim: usize,
    pub head_dim: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            variant: Variant::ET,
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            runs: 25,
            ratio: 0.8,
            sampler: SamplerMode::Weighted,
            hidden_dim: hp.hidden_dim,
            layers: hp.layers,
            attn_dim: hp.attn_dim,
            head_dim: hp.head_dim,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad("ratio must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn hyperparams(&self, input_dim: usize) -> Hyperparams {
        Hyperparams {
            input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            attn_dim: self.attn_dim,
            head_dim: self.head_dim,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// `N / (K · n_c)` for each present category, 0 for absent ones, where `K`
/// counts the present categories. Each present category then has the same
/// expected share of draws.
pub fn compute_sample_weights(counts: &BTreeMap<Category, usize>) -> Result<BTreeMap<Category, f64>, TrainError> {
    let total: usize = counts.values().sum();
    let present = counts.values().filter(|&&n| n > 0).count();
    if total == 0 {
        return Err(TrainError::NoSamples);
    }
    Ok(Category::ALL
        .iter()
        .map(|&c| {
            let n = counts.get(&c).copied().unwrap_or(0);
            let w = if n == 0 {
                0.0
            } else {
                total as f64 / (present as f64 * n as f64)
            };
            (c, w)
        })
        .collect())
}

/// With-replacement sampler over item indices by cumulative weight.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    cumulative: Vec<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { cumulative }
    }

    /// Per-item weights under `mode` for items labeled `labels`.
    pub fn for_labels(labels: &[Category], mode: SamplerMode) -> Result<Self, TrainError> {
        match mode {
            SamplerMode::Uniform => Ok(Self::new(&vec![1.0; labels.len()])),
            SamplerMode::Weighted => {
                let mut counts = BTreeMap::new();
                for &c in labels {
                    *counts.entry(c).or_insert(0) += 1;
                }
                let w = compute_sample_weights(&counts)?;
                Ok(Self::new(&labels.iter().map(|c| w[c]).collect::<Vec<_>>()))
            }
        }
    }

    pub fn draw(&self, rng: &mut Prng) -> usize {
        let total = *self.cumulative.last().expect("sampler over no items");
        let x = rng.unit_f64() * total;
        // first index whose cumulative weight exceeds x
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

/// A graph with its gold label.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: TurnGraph,
    pub label: Category,
}

/// Builds graphs for the whole corpus in corpus order. Dialogues missing
/// from `annotations` get heuristic entities.
pub fn prepare_graphs(
    corpus: &[DialogueRecord],
    store: &EmbeddingStore,
    annotations: &AnnotationMap,
    variant: Variant,
) -> Result<Vec<LabeledGraph>, TrainError> {
    let report = validate_against_corpus(store, corpus);
    if !report.is_ok() {
        return Err(report.into());
    }
    corpus
        .par_iter()
        .map(|d| {
            let emb = store.get(&d.id).expect("validated");
            let fallback;
            let ann = match annotations.get(&d.id) {
                Some(r) => &r.annotation,
                None => {
                    fallback = extract_heuristic(d);
                    &fallback
                }
            };
            Ok(LabeledGraph {
                graph: build_graph(d, emb, ann, variant.config())?,
                label: d.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_multiclass_acc: f64,
}

/// `history.csv` content.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,val_multiclass_acc\n");
    for r in history {
        out.push_str(&format!("{},{:.6},{:.4}\n", r.epoch, r.mean_loss, r.val_multiclass_acc));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub history: Vec<EpochRecord>,
    pub split: SplitAssignment,
    pub train_report: EvaluationReport,
    pub val_report: EvaluationReport,
}

/// Predicted categories for `graphs`, in order.
pub fn predict_all(params: &ModelParameters, graphs: &[&LabeledGraph]) -> Result<Vec<Category>, TrainError> {
    graphs
        .par_iter()
        .map(|g| Ok(predict(params, &g.graph)?.category))
        .collect()
}

pub fn evaluate(params: &ModelParameters, graphs: &[&LabeledGraph]) -> Result<EvaluationReport, TrainError> {
    let pred = predict_all(params, graphs)?;
    let gold: Vec<Category> = graphs.iter().map(|g| g.label).collect();
    Ok(EvaluationReport::from_predictions(&gold, &pred)?)
}

/// Trains on prepared graphs (in corpus order).
///
/// Each epoch draws `|train|` dialogues with replacement, walks them in
/// batches of `batch_size`, and takes one Adam step per batch on the mean
/// loss. Returned parameters are rounded to `f32`, the checkpoint precision.
pub fn train_on_graphs(graphs: &[LabeledGraph], cfg: &TrainRunConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let Some(first) = graphs.first() else {
        return Err(TrainError::EmptySplit("train"));
    };
    let records: Vec<DialogueRecord> = graphs
        .iter()
        .map(|g| DialogueRecord {
            id: g.graph.dialogue_id.clone(),
            turns: Vec::new(),
            label: g.label,
        })
        .collect();
    let split = stratified_split(&records, cfg.ratio, cfg.seed)?;
    let by_id: HashMap<&str, &LabeledGraph> = graphs.iter().map(|g| (g.graph.dialogue_id.as_str(), g)).collect();
    let train: Vec<&LabeledGraph> = split.train.iter().map(|id| by_id[id.as_str()]).collect();
    let val: Vec<&LabeledGraph> = split.val.iter().map(|id| by_id[id.as_str()]).collect();
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }

    let hp = cfg.hyperparams(first.graph.feature_dim);
    hp.validate()?;
    let mut params = init_params(hp, cfg.seed);
    let mut adam = Adam::new(cfg.adam(), &params);
    let labels: Vec<Category> = train.iter().map(|g| g.label).collect();
    let sampler = WeightedSampler::for_labels(&labels, cfg.sampler)?;
    let mut rng = Prng::stream(cfg.seed, "sampler");

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let draws: Vec<usize> = (0..train.len()).map(|_| sampler.draw(&mut rng)).collect();
        let mut loss_sum = 0.0;
        for batch in draws.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| {
                    let g = train[i];
                    loss_and_gradients(&params, &g.graph, g.label.index())
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut total = ModelParameters::zeros(hp);
            let scale = 1.0 / batch.len() as f64;
            for (gr, &i) in grads.iter().zip(batch) {
                if !gr.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        seed: cfg.seed,
                        epoch,
                        dialogue_id: train[i].graph.dialogue_id.clone(),
                    });
                }
                loss_sum += gr.loss;
                total.add_scaled(&gr.params, scale);
            }
            adam.step(&mut params, &total);
        }
        let val_report = evaluate(&params, &val)?;
        history.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / draws.len() as f64,
            val_multiclass_acc: val_report.multiclass_acc,
        });
    }

    params.round_to_f32();
    let train_report = evaluate(&params, &train)?;
    let val_report = evaluate(&params, &val)?;
    Ok(TrainOutcome {
        params,
        history,
        split,
        train_report,
        val_report,
    })
}

pub fn train_one_run(
    corpus: &[DialogueRecord],
    store: &EmbeddingStore,
    annotations: &AnnotationMap,
    cfg: &TrainRunConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let graphs = prepare_graphs(corpus, store, annotations, cfg.variant)?;
    train_on_graphs(&graphs, cfg)
}

/// Mean loss of `params` over `graphs`; used to inspect a model without
/// training it.
pub fn mean_loss(params: &ModelParameters, graphs: &[LabeledGraph]) -> Result<f64, TrainError> {
    let losses = graphs
        .par_iter()
        .map(|g| Ok(forward(params, &g.graph)?.loss(g.label.index())))
        .collect::<Result<Vec<f64>, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Edge totals over a prepared corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeTotals {
    pub nodes: usize,
    pub temporal: usize,
    pub entity: usize,
}

pub fn edge_totals(graphs: &[LabeledGraph]) -> EdgeTotals {
    graphs.iter().fold(EdgeTotals::default(), |acc, g| {
        let s = graph_stats(&g.graph);
        EdgeTotals {
            nodes: acc.nodes + s.n_nodes,
            temporal: acc.temporal + s.n_temporal,
            entity: acc.entity + s.n_entity,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub variant: Variant,
    pub edges: EdgeTotals,
    pub aggregate: AggregateReport,
}

fn run_suite_on(graphs: &[LabeledGraph], cfg: &TrainRunConfig) -> Result<SuiteReport, TrainError> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let run_cfg = TrainRunConfig { seed, ..cfg.clone() };
        let outcome = train_on_graphs(graphs, &run_cfg).map_err(|e| TrainError::Run {
            seed,
            source: Box::new(e),
        })?;
        reports.push(outcome.val_report);
    }
    Ok(SuiteReport {
        variant: cfg.variant,
        edges: edge_totals(graphs),
        aggregate: AggregateReport::from_runs(cfg.variant.label(), seeds, reports),
    })
}

/// `cfg.runs` runs with seeds `seed, seed + 1, ...`, each on a fresh split;
/// validation metrics are aggregated as mean ± sample std.
pub fn run_suite(
    corpus: &[DialogueRecord],
    store: &EmbeddingStore,
    annotations: &AnnotationMap,
    cfg: &TrainRunConfig,
) -> Result<SuiteReport, TrainError> {
    cfg.validate()?;
    let graphs = prepare_graphs(corpus, store, annotations, cfg.variant)?;
    run_suite_on(&graphs, cfg)
}

/// One suite per variant, in the order T, E, ET, E'T, ET'.
pub fn ablate(
    corpus: &[DialogueRecord],
    store: &EmbeddingStore,
    annotations: &AnnotationMap,
    cfg: &TrainRunConfig,
) -> Result<Vec<SuiteReport>, TrainError> {
    Variant::ALL
        .iter()
        .map(|&variant| run_suite(corpus, store, annotations, &TrainRunConfig { variant, ..cfg.clone() }))
        .collect()
}

/// Five-row ablation table in CSV form.
pub fn ablation_csv(rows: &[SuiteReport]) -> String {
    let aggs: Vec<AggregateReport> = rows.iter().map(|r| r.aggregate.clone()).collect();
    aggregate_csv(&aggs)
}

/// Class counts of the training side of a split.
pub fn train_class_counts(corpus: &[DialogueRecord], split: &SplitAssignment) -> BTreeMap<Category, usize> {
    let train = split.train_set();
    let subset: Vec<DialogueRecord> = corpus.iter().filter(|d| train.contains(d.id.as_str())).cloned().collect();
    class_counts(&subset)
}
