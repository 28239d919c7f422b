//! Decoding semantic parses and scoring them against references.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{parse_with_backoff, test_constraints, AcceptAll, ConstraintError, LayeringOnly};
use crate::corpus::{AnnotatedSentence, Slot, Span, Tree, Vocabularies};
use crate::model::{split_label, SlmModel};
use crate::parser::{beam_parse, BeamConfig, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("root label '{0}' carries no frame tag")]
    NoFrame(String),
    #[error("{refs} references but {hyps} hypotheses")]
    Alignment { refs: usize, hyps: usize },
    #[error("frame '{0}' is not in the model vocabulary")]
    UnknownFrame(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// Two-level semantic parse: a frame over the sentence and its slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticParse {
    /// `None` when no frame could be recovered (only for best-effort
    /// projections of unconstrained parses).
    pub frame: Option<String>,
    /// Sorted by span.
    pub slots: Vec<Slot>,
}

impl SemanticParse {
    pub fn of_sentence(s: &AnnotatedSentence) -> Self {
        SemanticParse {
            frame: Some(s.frame.clone()),
            slots: s.slots.clone(),
        }
    }

    /// Depth of the semantic tree: 1 for a frame alone, 2 with slots.
    pub fn depth(&self) -> usize {
        usize::from(self.frame.is_some()) + usize::from(!self.slots.is_empty())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SemKind {
    Void,
    Frame,
    Slot,
}

fn sem_of<'a>(label: &'a str, vocabs: &Vocabularies) -> (SemKind, Option<&'a str>) {
    match split_label(label).1 {
        Some(s) if vocabs.frame.contains(s) => (SemKind::Frame, Some(s)),
        Some(s) if vocabs.slot.contains(s) => (SemKind::Slot, Some(s)),
        _ => (SemKind::Void, None),
    }
}

fn outermost_slots(tree: &Tree, start: usize, vocabs: &Vocabularies, out: &mut Vec<Slot>) -> usize {
    let width = tree.num_leaves();
    match sem_of(tree.label(), vocabs) {
        (SemKind::Slot, Some(tag)) => out.push(Slot {
            tag: tag.to_string(),
            span: Span::new(start, start + width - 1),
        }),
        _ => {
            if let Tree::Node { children, .. } = tree {
                let mut at = start;
                for c in children {
                    at += outermost_slots(c, at, vocabs, out);
                }
            }
        }
    }
    width
}

fn children_slots(tree: &Tree, vocabs: &Vocabularies) -> Vec<Slot> {
    let mut slots = Vec::new();
    if let Tree::Node { children, .. } = tree {
        let mut at = 0;
        for c in children {
            at += outermost_slots(c, at, vocabs, &mut slots);
        }
    }
    slots
}

/// SEM(tree): the root's frame tag and the outermost slot-tagged nodes below
/// it. Slot tags inside a slot region are not emitted separately.
pub fn sem_projection(tree: &Tree, vocabs: &Vocabularies) -> Result<SemanticParse, EvalError> {
    match sem_of(tree.label(), vocabs) {
        (SemKind::Frame, Some(f)) => Ok(SemanticParse {
            frame: Some(f.to_string()),
            slots: children_slots(tree, vocabs),
        }),
        _ => Err(EvalError::NoFrame(tree.label().to_string())),
    }
}

/// Projection that never fails: a missing root frame falls back to the
/// first frame-tagged node in pre-order (or none), and slots are the
/// outermost slot-tagged nodes anywhere.
pub fn best_effort_projection(tree: &Tree, vocabs: &Vocabularies) -> SemanticParse {
    if let Ok(p) = sem_projection(tree, vocabs) {
        return p;
    }
    let mut frame = None;
    tree.visit(&mut |n| {
        if frame.is_none() {
            if let (SemKind::Frame, Some(f)) = sem_of(n.label(), vocabs) {
                frame = Some(f.to_string());
            }
        }
    });
    let mut slots = Vec::new();
    outermost_slots(tree, 0, vocabs, &mut slots);
    // a slot-tagged root would cover the sentence; keep what was found
    SemanticParse { frame, slots }
}

/// Number of semantic levels along the deepest path of a tree: every
/// frame-tagged node, and every slot-tagged node whose parent does not carry
/// the same slot tag, opens a level.
pub fn tree_semantic_depth(tree: &Tree, vocabs: &Vocabularies) -> usize {
    fn go(t: &Tree, parent: Option<&str>, vocabs: &Vocabularies) -> usize {
        let (kind, sem) = sem_of(t.label(), vocabs);
        let own = match kind {
            SemKind::Void => 0,
            SemKind::Frame => 1,
            SemKind::Slot => usize::from(parent != sem),
        };
        let below = match t {
            Tree::Leaf { .. } => 0,
            Tree::Node { children, .. } => children.iter().map(|c| go(c, sem, vocabs)).max().unwrap_or(0),
        };
        own + below
    }
    go(tree, None, vocabs)
}

/// True when the tree's semantics form a frame over slots: the root is
/// frame-tagged, no other node is, and no slot region nests inside another.
pub fn is_two_level(tree: &Tree, vocabs: &Vocabularies) -> bool {
    let mut frames = 0;
    tree.visit(&mut |n| frames += usize::from(sem_of(n.label(), vocabs).0 == SemKind::Frame));
    frames == 1 && sem_of(tree.label(), vocabs).0 == SemKind::Frame && tree_semantic_depth(tree, vocabs) <= 2
}

/// Unit-cost set edit distance: `max(|R|, |H|) - |R ∩ H|`.
pub fn slot_errors(reference: &[Slot], hypothesis: &[Slot]) -> usize {
    let common = reference.iter().filter(|r| hypothesis.contains(r)).count();
    reference.len().max(hypothesis.len()) - common
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Root constrained to the set of all frames.
    FrameSet,
    /// Root constrained to the reference frame.
    L1,
    /// Only layering: no frame below the root, no nested slot regions.
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decoded {
    pub parse: SemanticParse,
    pub backed_off: bool,
    pub tree: String,
    pub log_prob: f64,
    /// Semantic depth of the decoded tree.
    pub tree_depth: usize,
}

/// Decodes one sentence. `frame` is required in [`DecodeMode::L1`].
pub fn decode(
    words: &[String],
    model: &SlmModel,
    config: &BeamConfig,
    mode: DecodeMode,
    frame: Option<&str>,
) -> Result<Decoded, EvalError> {
    let vocabs = model.vocabs();
    let ids: Vec<u32> = words.iter().map(|w| vocabs.word.id_or_unk(w)).collect();
    let (parses, backed_off) = match mode {
        DecodeMode::Unconstrained => match beam_parse(&ids, model, config, &LayeringOnly { len: ids.len() }) {
            Ok(p) => (p, false),
            Err(ParseError::NoParse) => (beam_parse(&ids, model, config, &AcceptAll)?, true),
            Err(e) => return Err(e.into()),
        },
        DecodeMode::FrameSet | DecodeMode::L1 => {
            let forced = match (mode, frame) {
                (DecodeMode::L1, Some(f)) => Some(
                    vocabs
                        .frame
                        .id(f)
                        .ok_or_else(|| EvalError::UnknownFrame(f.to_string()))?,
                ),
                (DecodeMode::L1, None) => return Err(EvalError::UnknownFrame(String::new())),
                _ => None,
            };
            let cs = test_constraints(ids.len(), &vocabs.frame, forced)?;
            parse_with_backoff(&ids, model, config, &cs)?
        }
    };
    let best = parses.first().ok_or(ParseError::NoParse)?;
    let mut tree = best.to_tree(vocabs);
    restore_words(&mut tree, words);
    let parse = if backed_off || mode == DecodeMode::Unconstrained {
        best_effort_projection(&tree, vocabs)
    } else {
        sem_projection(&tree, vocabs)?
    };
    Ok(Decoded {
        parse,
        backed_off,
        tree_depth: tree_semantic_depth(&tree, vocabs),
        tree: tree.to_bracketed(),
        log_prob: best.log_prob,
    })
}

/// Puts the surface words back in place of `<unk>`.
pub fn restore_words(tree: &mut Tree, words: &[String]) {
    fn go(t: &mut Tree, words: &[String], at: &mut usize) {
        match t {
            Tree::Leaf { word, .. } => {
                if let Some(w) = words.get(*at) {
                    *word = w.clone();
                }
                *at += 1;
            }
            Tree::Node { children, .. } => {
                for c in children {
                    go(c, words, at);
                }
            }
        }
    }
    go(tree, words, &mut 0);
}

/// Decodes every sentence in parallel, results in input order.
pub fn decode_corpus(
    corpus: &[AnnotatedSentence],
    model: &SlmModel,
    config: &BeamConfig,
    mode: DecodeMode,
) -> Result<Vec<Decoded>, EvalError> {
    corpus
        .par_iter()
        .map(|s| decode(&s.words, model, config, mode, Some(&s.frame)))
        .collect()
}

/// The most frequent training frame with no slots.
pub fn baseline_parse(train: &[AnnotatedSentence]) -> SemanticParse {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for s in train {
        *freq.entry(s.frame.as_str()).or_default() += 1;
    }
    // ties go to the lexicographically first frame
    let frame = freq
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(f, _)| f.to_string());
    SemanticParse {
        frame,
        slots: Vec::new(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub sentences: usize,
    pub frame_errors: usize,
    pub slot_errors: usize,
    pub reference_slots: usize,
}

impl BinStats {
    pub fn frame_error_rate(&self) -> f64 {
        ratio(self.frame_errors, self.sentences)
    }

    /// Slot errors per reference slot; `None` without reference slots.
    pub fn slot_error_rate(&self) -> Option<f64> {
        (self.reference_slots > 0).then(|| ratio(self.slot_errors, self.reference_slots))
    }

    fn add(&mut self, other: &BinStats) {
        self.sentences += other.sentences;
        self.frame_errors += other.frame_errors;
        self.slot_errors += other.slot_errors;
        self.reference_slots += other.reference_slots;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Error counts overall and binned by reference slot count (`0`..`4`,
/// `5+`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub total: BinStats,
    pub bins: BTreeMap<String, BinStats>,
    pub backoffs: usize,
}

pub fn bin_name(reference_slots: usize) -> String {
    if reference_slots >= 5 {
        "5+".to_string()
    } else {
        reference_slots.to_string()
    }
}

/// Scores aligned reference/hypothesis lists.
pub fn score_corpus(
    refs: &[SemanticParse],
    hyps: &[SemanticParse],
    backoffs: &[bool],
) -> Result<ScoreReport, EvalError> {
    if refs.len() != hyps.len() || refs.len() != backoffs.len() {
        return Err(EvalError::Alignment {
            refs: refs.len(),
            hyps: hyps.len().min(backoffs.len()),
        });
    }
    let mut report = ScoreReport::default();
    for ((r, h), b) in refs.iter().zip(hyps).zip(backoffs) {
        let one = BinStats {
            sentences: 1,
            frame_errors: usize::from(r.frame != h.frame),
            slot_errors: slot_errors(&r.slots, &h.slots),
            reference_slots: r.slots.len(),
        };
        report.bins.entry(bin_name(r.slots.len())).or_default().add(&one);
        report.total.add(&one);
        report.backoffs += usize::from(*b);
    }
    Ok(report)
}

impl ScoreReport {
    /// Aligned plain-text table: one row per bin and a total row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>10} {:>11} {:>10} {:>11}",
            "slots/sent", "sentences", "ref slots", "frame err%", "slot errs", "slot err%"
        );
        let row = |out: &mut String, name: &str, b: &BinStats| {
            let ser = b
                .slot_error_rate()
                .map_or("-".to_string(), |r| format!("{:.2}", 100.0 * r));
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>10} {:>11.2} {:>10} {:>11}",
                name,
                b.sentences,
                b.reference_slots,
                100.0 * b.frame_error_rate(),
                b.slot_errors,
                ser
            );
        };
        for (name, b) in &self.bins {
            row(&mut out, name, b);
        }
        row(&mut out, "total", &self.total);
        let _ = writeln!(out, "back-offs: {}", self.backoffs);
        out
    }
}
