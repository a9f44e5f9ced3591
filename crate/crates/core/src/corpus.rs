//! Dialogue data model, JSONL ingestion and stratified splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Prng, PRNG_NAME};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unknown speaker {speaker:?}")]
    UnknownSpeaker { line: usize, speaker: String },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: dialogue {id:?} has no turns")]
    EmptyTurns { line: usize, id: String },
    #[error("line {line}: dialogue {id:?} turn {turn} has empty text")]
    EmptyText { line: usize, id: String, turn: usize },
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl FromStr for Speaker {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "user" => Ok(Speaker::User),
            "assistant" => Ok(Speaker::Assistant),
            _ => Err(()),
        }
    }
}

/// The six hallucination categories, in their fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Factual,
    ReasoningError,
    NonFactual,
    Incoherence,
    Irrelevance,
    Overreliance,
}

impl Category {
    pub const COUNT: usize = 6;

    pub const ALL: [Category; 6] = [
        Category::Factual,
        Category::ReasoningError,
        Category::NonFactual,
        Category::Incoherence,
        Category::Irrelevance,
        Category::Overreliance,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    /// Canonical serialized name.
    pub fn name(self) -> &'static str {
        match self {
            Category::Factual => "Factual",
            Category::ReasoningError => "ReasoningError",
            Category::NonFactual => "NonFactual",
            Category::Incoherence => "Incoherence",
            Category::Irrelevance => "Irrelevance",
            Category::Overreliance => "Overreliance",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Category::ALL.iter().copied().find(|c| c.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueRecord {
    pub id: String,
    pub turns: Vec<Turn>,
    pub label: Category,
}

impl DialogueRecord {
    /// Builds a record from `(speaker, text)` pairs, assigning turn indices
    /// from position.
    pub fn new<S: Into<String>>(
        id: impl Into<String>,
        label: Category,
        turns: impl IntoIterator<Item = (Speaker, S)>,
    ) -> Self {
        Self {
            id: id.into(),
            label,
            turns: turns
                .into_iter()
                .enumerate()
                .map(|(index, (speaker, text))| Turn {
                    index,
                    speaker,
                    text: text.into(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    speaker: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    label: String,
    turns: Vec<RawTurn>,
}

/// Parses a `dialogues.jsonl` stream. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<DialogueRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = raw.label.parse().map_err(|_| CorpusError::UnknownLabel {
            line: line_no,
            label: raw.label.clone(),
        })?;
        if raw.turns.is_empty() {
            return Err(CorpusError::EmptyTurns {
                line: line_no,
                id: raw.id,
            });
        }
        let mut turns = Vec::with_capacity(raw.turns.len());
        for (index, t) in raw.turns.into_iter().enumerate() {
            let speaker = t.speaker.parse().map_err(|_| CorpusError::UnknownSpeaker {
                line: line_no,
                speaker: t.speaker.clone(),
            })?;
            if t.text.trim().is_empty() {
                return Err(CorpusError::EmptyText {
                    line: line_no,
                    id: raw.id,
                    turn: index,
                });
            }
            turns.push(Turn {
                index,
                speaker,
                text: t.text,
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        records.push(DialogueRecord {
            id: raw.id,
            turns,
            label,
        });
    }
    Ok(records)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogueRecord>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(mut out: W, corpus: &[DialogueRecord]) -> std::io::Result<()> {
    for rec in corpus {
        let raw = RawRecord {
            id: rec.id.clone(),
            label: rec.label.name().to_string(),
            turns: rec
                .turns
                .iter()
                .map(|t| RawTurn {
                    speaker: match t.speaker {
                        Speaker::User => "user".into(),
                        Speaker::Assistant => "assistant".into(),
                    },
                    text: t.text.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &[DialogueRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus(&mut out, corpus)
        .and_then(|_| out.flush())
        .map_err(|e| CorpusError::io(path, e))
}

/// Per-category record counts; every category is present in the map.
pub fn class_counts(corpus: &[DialogueRecord]) -> BTreeMap<Category, usize> {
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for rec in corpus {
        *counts.entry(rec.label).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratio: f64,
    pub prng: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl SplitAssignment {
    pub fn train_set(&self) -> BTreeSet<&str> {
        self.train.iter().map(String::as_str).collect()
    }

    pub fn val_set(&self) -> BTreeSet<&str> {
        self.val.iter().map(String::as_str).collect()
    }
}

// Products like 0.29 * 100 land a hair below the integer in binary floating
// point; nudge before flooring.
const RATIO_EPS: f64 = 1e-9;

/// Label-stratified train/validation split.
///
/// Within each category (in enum order) the ids are shuffled with one shared
/// seeded stream and the first `k_c` go to train. `k_c` starts at
/// `floor(ratio * n_c)`, clamped so that any category with at least two
/// records keeps one on each side. Remaining slots up to `round(ratio * N)`
/// go to the categories with the largest fractional parts (ties by enum
/// order); if clamping overshoots the target, slots are taken back from the
/// smallest fractional parts. The global target is met whenever the clamps
/// allow it.
///
/// Train and validation lists keep the shuffled order, category by category.
pub fn stratified_split(
    corpus: &[DialogueRecord],
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut rng = Prng::new(seed);
    let mut groups: Vec<Vec<&str>> = vec![Vec::new(); Category::COUNT];
    for rec in corpus {
        groups[rec.label.index()].push(&rec.id);
    }
    for g in groups.iter_mut() {
        rng.shuffle(g);
    }

    let n_total = corpus.len();
    let target = (ratio * n_total as f64 + RATIO_EPS).round() as usize;

    struct Quota {
        take: usize,
        lo: usize,
        hi: usize,
        frac: f64,
    }
    let mut quotas: Vec<Quota> = groups
        .iter()
        .map(|g| {
            let n = g.len();
            let exact = ratio * n as f64;
            let floor = (exact + RATIO_EPS).floor();
            let (lo, hi) = if n >= 2 { (1, n - 1) } else { (0, n) };
            Quota {
                take: (floor as usize).clamp(lo, hi),
                lo,
                hi,
                frac: (exact - floor).max(0.0),
            }
        })
        .collect();

    let mut assigned: usize = quotas.iter().map(|q| q.take).sum();
    // Largest fractional part first; stable sort keeps enum order on ties.
    let mut by_frac: Vec<usize> = (0..Category::COUNT).collect();
    by_frac.sort_by(|&a, &b| quotas[b].frac.total_cmp(&quotas[a].frac));
    while assigned < target {
        let Some(&c) = by_frac.iter().find(|&&c| quotas[c].take < quotas[c].hi) else {
            break;
        };
        // one extra slot per category per pass
        quotas[c].take += 1;
        quotas[c].hi = quotas[c].take;
        assigned += 1;
    }
    while assigned > target {
        let Some(&c) = by_frac.iter().rev().find(|&&c| quotas[c].take > quotas[c].lo) else {
            break;
        };
        quotas[c].take -= 1;
        quotas[c].lo = quotas[c].take;
        assigned -= 1;
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (g, q) in groups.iter().zip(&quotas) {
        train.extend(g[..q.take].iter().map(|s| s.to_string()));
        val.extend(g[q.take..].iter().map(|s| s.to_string()));
    }
    Ok(SplitAssignment {
        seed,
        ratio,
        prng: PRNG_NAME.to_string(),
        train,
        val,
    })
}
