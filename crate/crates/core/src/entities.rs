//! Per-turn entity sets that drive shared-entity edges.
//!
//! Two sources are supported: a deterministic capitalization heuristic that
//! needs nothing beyond the text, and externally produced annotations read
//! from `entities.jsonl`. Either way, entities are compared by exact equality
//! of their normalized form (lowercase, single spaces).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueRecord;

#[derive(Debug, Error)]
pub enum EntityError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: unknown dialogue id {id:?}")]
    UnknownId { line: usize, id: String },
    #[error("dialogue {id:?}: expected {expected} entity lists, got {actual}")]
    LengthMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: duplicate annotation for {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// Version tag of [`STOPWORDS`]. Any edit to the list changes which entity
/// edges get built and must bump this.
pub const STOPWORDS_VERSION: u32 = 1;

/// Capitalized tokens that are never entities on their own. Also trimmed from
/// the edges of a capitalized run ("The Roman Empire" yields "roman empire").
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "because",
    "before", "but", "by", "can", "could", "did", "do", "does", "dr", "each", "for", "from",
    "had", "has", "have", "he", "hello", "her", "here", "hers", "hi", "him", "his", "how",
    "however", "i", "if", "in", "is", "it", "its", "let", "many", "me", "mr", "mrs", "ms", "my",
    "no", "not", "of", "oh", "ok", "okay", "on", "or", "our", "please", "she", "should", "so",
    "some", "sure", "thank", "thanks", "that", "the", "their", "them", "then", "there", "these",
    "they", "this", "those", "to", "us", "was", "we", "well", "were", "what", "when", "where",
    "which", "who", "whom", "why", "will", "with", "would", "yes", "you", "your",
];

fn is_stopword(lower: &str) -> bool {
    STOPWORDS.binary_search(&lower).is_ok()
}

/// Lowercases and collapses whitespace runs to single spaces. Idempotent.
pub fn normalize_entity(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub dialogue_id: String,
    pub turn_entities: Vec<BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Imported,
    HeuristicFallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedAnnotation {
    pub annotation: EntityAnnotation,
    pub source: AnnotationSource,
}

/// Annotations keyed by dialogue id.
pub type AnnotationMap = BTreeMap<String, ResolvedAnnotation>;

struct Token<'a> {
    text: &'a str,
    capitalized: bool,
    sentence_start: bool,
    /// Whether this token continues the preceding one into a single name,
    /// i.e. only whitespace or a lone hyphen separates them.
    joined: bool,
}

fn push_token<'a>(tokens: &mut Vec<Token<'a>>, text: &'a str, s: usize, e: usize, sep: &str) {
    let tok = &text[s..e];
    let sentence_start = tokens.is_empty() || sep.contains(['.', '!', '?']);
    let sep_trim = sep.trim();
    let joined = !tokens.is_empty() && (sep_trim.is_empty() || sep_trim == "-");
    tokens.push(Token {
        text: tok,
        capitalized: tok.chars().next().is_some_and(char::is_uppercase),
        sentence_start,
        joined,
    });
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut sep_start = 0;
    let mut start = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            let end_here = chars.peek().is_none_or(|(_, n)| !n.is_alphanumeric());
            if end_here {
                let s = start.take().unwrap();
                let e = i + c.len_utf8();
                let sep = &text[sep_start..s];
                push_token(&mut tokens, text, s, e, sep);
                sep_start = e;
            }
        }
    }
    tokens
}

struct Candidate<'a> {
    words: Vec<&'a str>,
    sentence_initial_singleton: bool,
}

fn candidates(text: &str) -> Vec<Candidate<'_>> {
    let tokens = tokenize(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !tokens[i].capitalized {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < tokens.len() && tokens[j].capitalized && tokens[j].joined {
            j += 1;
        }
        out.push(Candidate {
            words: tokens[i..j].iter().map(|t| t.text).collect(),
            sentence_initial_singleton: j - i == 1 && tokens[i].sentence_start,
        });
        i = j;
    }
    out
}

/// Capitalized tokens seen at a non-sentence-initial position anywhere in
/// the dialogue.
fn mid_sentence_capitals(dialogue: &DialogueRecord) -> HashSet<&str> {
    let mut set = HashSet::new();
    for turn in &dialogue.turns {
        for t in tokenize(&turn.text) {
            if t.capitalized && !t.sentence_start {
                set.insert(t.text);
            }
        }
    }
    set
}

fn entities_of(text: &str, mid_caps: &HashSet<&str>) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for cand in candidates(text) {
        if cand.sentence_initial_singleton && !mid_caps.contains(cand.words[0]) {
            continue;
        }
        let lower: Vec<String> = cand.words.iter().map(|w| w.to_lowercase()).collect();
        let mut lo = 0;
        let mut hi = lower.len();
        while lo < hi && is_stopword(&lower[lo]) {
            lo += 1;
        }
        while hi > lo && is_stopword(&lower[hi - 1]) {
            hi -= 1;
        }
        if lo == hi {
            continue;
        }
        let ent = normalize_entity(&lower[lo..hi].join(" "));
        if !ent.is_empty() {
            set.insert(ent);
        }
    }
    set
}

/// Capitalization-run entity extractor.
///
/// Each turn is split into alphanumeric tokens. A candidate is a maximal run
/// of capitalized tokens separated only by whitespace or a hyphen; any other
/// punctuation ends the run. A one-token candidate opening a sentence is
/// discarded unless the same token also appears capitalized mid-sentence
/// somewhere in the dialogue. Stopwords are trimmed from both ends of a
/// candidate and an all-stopword candidate is dropped.
pub fn extract_heuristic(dialogue: &DialogueRecord) -> EntityAnnotation {
    let mid_caps = mid_sentence_capitals(dialogue);
    EntityAnnotation {
        dialogue_id: dialogue.id.clone(),
        turn_entities: dialogue
            .turns
            .iter()
            .map(|t| entities_of(&t.text, &mid_caps))
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: String,
    turn_entities: Vec<Vec<String>>,
}

/// Reads `entities.jsonl` content and resolves it against the corpus.
/// Dialogues without an annotation line fall back to [`extract_heuristic`].
pub fn parse_annotations<R: BufRead>(
    reader: R,
    corpus: &[DialogueRecord],
) -> Result<AnnotationMap, EntityError> {
    let by_id: HashMap<&str, &DialogueRecord> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut out = AnnotationMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EntityError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAnnotation = serde_json::from_str(&line).map_err(|e| EntityError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        let Some(dialogue) = by_id.get(raw.id.as_str()) else {
            return Err(EntityError::UnknownId {
                line: line_no,
                id: raw.id,
            });
        };
        if raw.turn_entities.len() != dialogue.len() {
            return Err(EntityError::LengthMismatch {
                id: raw.id,
                expected: dialogue.len(),
                actual: raw.turn_entities.len(),
            });
        }
        if out.contains_key(&raw.id) {
            return Err(EntityError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        let turn_entities = raw
            .turn_entities
            .iter()
            .map(|ents| {
                ents.iter()
                    .map(|e| normalize_entity(e))
                    .filter(|e| !e.is_empty())
                    .collect()
            })
            .collect();
        out.insert(
            raw.id.clone(),
            ResolvedAnnotation {
                annotation: EntityAnnotation {
                    dialogue_id: raw.id,
                    turn_entities,
                },
                source: AnnotationSource::Imported,
            },
        );
    }
    for d in corpus {
        out.entry(d.id.clone()).or_insert_with(|| ResolvedAnnotation {
            annotation: extract_heuristic(d),
            source: AnnotationSource::HeuristicFallback,
        });
    }
    Ok(out)
}

pub fn import_annotations(
    path: impl AsRef<Path>,
    corpus: &[DialogueRecord],
) -> Result<AnnotationMap, EntityError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EntityError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_annotations(BufReader::new(file), corpus)
}

/// Heuristic annotations for a whole corpus.
pub fn annotate_corpus(corpus: &[DialogueRecord]) -> AnnotationMap {
    corpus
        .iter()
        .map(|d| {
            (
                d.id.clone(),
                ResolvedAnnotation {
                    annotation: extract_heuristic(d),
                    source: AnnotationSource::HeuristicFallback,
                },
            )
        })
        .collect()
}

/// Writes annotations in `entities.jsonl` form, one line per annotation in
/// the given order.
pub fn write_annotations<'a, W: Write>(
    mut out: W,
    annotations: impl IntoIterator<Item = &'a EntityAnnotation>,
) -> std::io::Result<()> {
    for ann in annotations {
        let raw = RawAnnotation {
            id: ann.dialogue_id.clone(),
            turn_entities: ann
                .turn_entities
                .iter()
                .map(|s| s.iter().cloned().collect())
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
