//! Per-dialogue temporal graphs.
//!
//! Nodes are turns. Temporal edges run `t-1 -> t`; shared-entity edges join
//! every pair of turns whose entity sets intersect and are stored as a
//! mirrored pair of directed edges. Each edge carries a 3-vector
//! `[is_temporal, is_entity, aux]` where `aux` is the speaker-change flag for
//! temporal edges and `min(shared, 5) / 5` for entity edges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogueRecord, Speaker};
use crate::embeddings::EmbeddingMatrix;
use crate::entities::EntityAnnotation;

pub const EDGE_FEAT_DIM: usize = 3;
/// Shared-entity counts saturate here when encoded into `aux`.
pub const ENTITY_SATURATION: usize = 5;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("dialogue {id:?}: {turns} turns but {rows} embedding rows")]
    EmbeddingRows { id: String, turns: usize, rows: usize },
    #[error("dialogue {id:?}: {turns} turns but {lists} entity lists")]
    AnnotationLength { id: String, turns: usize, lists: usize },
    #[error("dialogue {id:?}: embeddings belong to {other:?}")]
    WrongDialogue { id: String, other: String },
    #[error("unknown variant {0:?} (expected T, E, ET, EzT or ETz)")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Temporal,
    Entity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub feature: [f32; EDGE_FEAT_DIM],
}

/// The five graph configurations compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Temporal edges only.
    T,
    /// Entity edges only.
    E,
    /// Both kinds.
    ET,
    /// Both kinds, entity edge features zeroed.
    EzT,
    /// Both kinds, temporal edge features zeroed.
    ETz,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::T, Variant::E, Variant::ET, Variant::EzT, Variant::ETz];

    pub fn config(self) -> VariantConfig {
        let (include_temporal, include_entity, zero_entity_features, zero_temporal_features) = match self {
            Variant::T => (true, false, false, false),
            Variant::E => (false, true, false, false),
            Variant::ET => (true, true, false, false),
            Variant::EzT => (true, true, true, false),
            Variant::ETz => (true, true, false, true),
        };
        VariantConfig {
            name: self,
            include_temporal,
            include_entity,
            zero_entity_features,
            zero_temporal_features,
        }
    }

    /// Row label used in ablation tables, e.g. `TGN[E'T]`.
    pub fn label(self) -> &'static str {
        match self {
            Variant::T => "TGN[T]",
            Variant::E => "TGN[E]",
            Variant::ET => "TGN[ET]",
            Variant::EzT => "TGN[E'T]",
            Variant::ETz => "TGN[ET']",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::T => "T",
            Variant::E => "E",
            Variant::ET => "ET",
            Variant::EzT => "EzT",
            Variant::ETz => "ETz",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, GraphError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.label() == s)
            .ok_or_else(|| GraphError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub name: Variant,
    pub include_temporal: bool,
    pub include_entity: bool,
    pub zero_entity_features: bool,
    pub zero_temporal_features: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnGraph {
    pub dialogue_id: String,
    pub n_nodes: usize,
    pub feature_dim: usize,
    /// Row-major `n_nodes * feature_dim`.
    pub node_features: Vec<f32>,
    pub speakers: Vec<Speaker>,
    pub edges: Vec<Edge>,
    pub variant: VariantConfig,
}

impl TurnGraph {
    pub fn node(&self, i: usize) -> &[f32] {
        &self.node_features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// `(src, dst, kind)` triples, ignoring features.
    pub fn connectivity(&self) -> Vec<(usize, usize, EdgeKind)> {
        self.edges.iter().map(|e| (e.src, e.dst, e.kind)).collect()
    }
}

/// Builds the turn graph for one dialogue under `variant`.
///
/// Edge order is deterministic: temporal edges by target turn, then entity
/// pairs `(i, j)` with `i < j` in lexicographic order, each emitted as
/// `i -> j` followed by `j -> i`.
pub fn build_graph(
    dialogue: &DialogueRecord,
    emb: &EmbeddingMatrix,
    ann: &EntityAnnotation,
    variant: VariantConfig,
) -> Result<TurnGraph, GraphError> {
    let n = dialogue.len();
    if emb.dialogue_id != dialogue.id {
        return Err(GraphError::WrongDialogue {
            id: dialogue.id.clone(),
            other: emb.dialogue_id.clone(),
        });
    }
    if emb.n_rows() != n {
        return Err(GraphError::EmbeddingRows {
            id: dialogue.id.clone(),
            turns: n,
            rows: emb.n_rows(),
        });
    }
    if ann.turn_entities.len() != n {
        return Err(GraphError::AnnotationLength {
            id: dialogue.id.clone(),
            turns: n,
            lists: ann.turn_entities.len(),
        });
    }

    let mut edges = Vec::new();
    if variant.include_temporal {
        for t in 1..n {
            let changed = dialogue.turns[t - 1].speaker != dialogue.turns[t].speaker;
            let feature = if variant.zero_temporal_features {
                [0.0; 3]
            } else {
                [1.0, 0.0, if changed { 1.0 } else { 0.0 }]
            };
            edges.push(Edge {
                src: t - 1,
                dst: t,
                kind: EdgeKind::Temporal,
                feature,
            });
        }
    }
    if variant.include_entity {
        for i in 0..n {
            for j in i + 1..n {
                let shared = ann.turn_entities[i].intersection(&ann.turn_entities[j]).count();
                if shared == 0 {
                    continue;
                }
                let feature = if variant.zero_entity_features {
                    [0.0; 3]
                } else {
                    let aux = shared.min(ENTITY_SATURATION) as f32 / ENTITY_SATURATION as f32;
                    [0.0, 1.0, aux]
                };
                for (src, dst) in [(i, j), (j, i)] {
                    edges.push(Edge {
                        src,
                        dst,
                        kind: EdgeKind::Entity,
                        feature,
                    });
                }
            }
        }
    }

    Ok(TurnGraph {
        dialogue_id: dialogue.id.clone(),
        n_nodes: n,
        feature_dim: emb.dim,
        node_features: emb.data.clone(),
        speakers: dialogue.turns.iter().map(|t| t.speaker).collect(),
        edges,
        variant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_temporal: usize,
    pub n_entity: usize,
    /// Directed edges per node (equivalently mean in-degree).
    pub mean_degree: f64,
}

pub fn graph_stats(g: &TurnGraph) -> GraphStats {
    let n_temporal = g.edges.iter().filter(|e| e.kind == EdgeKind::Temporal).count();
    let n_entity = g.edges.len() - n_temporal;
    GraphStats {
        n_nodes: g.n_nodes,
        n_temporal,
        n_entity,
        mean_degree: if g.n_nodes == 0 {
            0.0
        } else {
            g.edges.len() as f64 / g.n_nodes as f64
        },
    }
}

#[derive(Serialize)]
struct NodeDump {
    index: usize,
    speaker: Speaker,
}

#[derive(Serialize)]
struct GraphDump<'a> {
    dialogue_id: &'a str,
    variant: Variant,
    nodes: Vec<NodeDump>,
    edges: &'a [Edge],
}

/// Human-readable `graph.json` dump (nodes and edges, no features).
pub fn graph_to_json(g: &TurnGraph) -> String {
    let dump = GraphDump {
        dialogue_id: &g.dialogue_id,
        variant: g.variant.name,
        nodes: g
            .speakers
            .iter()
            .enumerate()
            .map(|(index, &speaker)| NodeDump { index, speaker })
            .collect(),
        edges: &g.edges,
    };
    serde_json::to_string_pretty(&dump).expect("graph dump serializes")
}
