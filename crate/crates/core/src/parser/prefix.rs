use std::sync::Arc;

use crate::constraints::{ChildInfo, LayeringBits};
use crate::model::{ActionKind, ExposedHead, ParserAction, Sem, SlmModel};

use super::tree::{HeadSide, ParseTree};
use super::ParseError;

/// A tree on the prefix stack together with its semantic bookkeeping.
#[derive(Clone, Debug)]
pub struct StackEntry {
    pub tree: Arc<ParseTree>,
    pub bits: LayeringBits,
    pub sem: Sem,
}

impl StackEntry {
    pub fn info(&self) -> ChildInfo {
        ChildInfo {
            sem: self.sem,
            bits: self.bits,
        }
    }
}

#[derive(Debug)]
struct StackNode {
    entry: StackEntry,
    below: Option<Arc<StackNode>>,
}

#[derive(Debug)]
struct History {
    code: u64,
    prev: Option<Arc<History>>,
}

const SHIFT_CODE: u64 = 1 << 40;

/// A word-parse prefix: the trees built over the words shifted so far, with
/// the accumulated log-probability of the derivation. The `<s>` marker is an
/// implicit tree at the bottom of the stack; it is exposed as a head but is
/// never adjoined.
///
/// Stacks are persistent lists, so extending a prefix is O(1) and prefixes in
/// the beam share structure.
#[derive(Clone, Debug)]
pub struct WordParsePrefix {
    top: Option<Arc<StackNode>>,
    depth: usize,
    position: usize,
    log_prob: f64,
    ops: usize,
    realized: u128,
    history: Option<Arc<History>>,
}

impl Default for WordParsePrefix {
    fn default() -> Self {
        Self::initial()
    }
}

impl WordParsePrefix {
    /// The prefix holding only `<s>`, with probability 1.
    pub fn initial() -> Self {
        WordParsePrefix {
            top: None,
            depth: 0,
            position: 0,
            log_prob: 0.0,
            ops: 0,
            realized: 0,
            history: None,
        }
    }

    /// Number of words shifted.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn log_prob(&self) -> f64 {
        self.log_prob
    }

    /// Number of word trees (excluding `<s>`).
    pub fn num_trees(&self) -> usize {
        self.depth
    }

    /// Parser actions taken since the last shift.
    pub fn ops_this_position(&self) -> usize {
        self.ops
    }

    /// Bit mask of constraints realized so far.
    pub fn realized(&self) -> u128 {
        self.realized
    }

    pub fn top(&self) -> Option<&StackEntry> {
        self.top.as_ref().map(|n| &n.entry)
    }

    pub fn second(&self) -> Option<&StackEntry> {
        self.top.as_ref().and_then(|n| n.below.as_ref()).map(|n| &n.entry)
    }

    /// Word trees, left to right.
    pub fn trees(&self) -> Vec<Arc<ParseTree>> {
        let mut out = Vec::with_capacity(self.depth);
        let mut cur = &self.top;
        while let Some(n) = cur {
            out.push(n.entry.tree.clone());
            cur = &n.below;
        }
        out.reverse();
        out
    }

    /// `(h0, h-1)`, padded with the `<s>` head.
    pub fn exposed_heads(&self) -> (ExposedHead, ExposedHead) {
        let h = |e: Option<&StackEntry>| e.map_or(ExposedHead::BOUNDARY, |e| e.tree.exposed_head());
        (h(self.top()), h(self.second()))
    }

    /// Step codes of the derivation so far, in order; used to break ties.
    pub fn derivation_codes(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut cur = &self.history;
        while let Some(h) = cur {
            out.push(h.code);
            cur = &h.prev;
        }
        out.reverse();
        out
    }

    fn record(&self, code: u64) -> Option<Arc<History>> {
        Some(Arc::new(History {
            code,
            prev: self.history.clone(),
        }))
    }

    /// Shifts `word` with `tag`, adding its word and tag log-probabilities.
    pub fn shift_word(&self, model: &SlmModel, word: u32, tag: u32) -> Self {
        let (h0, hm1) = self.exposed_heads();
        let dlp = model.predict_word(h0, hm1, word).ln() + model.predict_tag(word, h0, hm1, tag).ln();
        self.push_leaf(word, tag, model.sem().pos(tag), dlp, self.realized)
    }

    /// Applies a parser move, adding its log-probability.
    pub fn apply_action(&self, model: &SlmModel, action: ParserAction) -> Result<Self, ParseError> {
        let (h0, hm1) = self.exposed_heads();
        let dlp = model.predict_action(h0, hm1, action).ln();
        if action.is_null() {
            return Ok(self.close(dlp));
        }
        if self.depth < 2 {
            return Err(ParseError::IllegalAction(format!(
                "adjoin needs two trees, prefix has {}",
                self.depth
            )));
        }
        let label = action.label.expect("adjoin has a label");
        Ok(self.adjoin(action, model.sem().nt(label), dlp, self.realized))
    }

    pub(crate) fn push_leaf(&self, word: u32, tag: u32, sem: Sem, dlp: f64, realized: u128) -> Self {
        let entry = StackEntry {
            tree: Arc::new(ParseTree::leaf(word, tag, self.position)),
            bits: LayeringBits::of(sem),
            sem,
        };
        WordParsePrefix {
            top: Some(Arc::new(StackNode {
                entry,
                below: self.top.clone(),
            })),
            depth: self.depth + 1,
            position: self.position + 1,
            log_prob: self.log_prob + dlp,
            ops: 0,
            realized,
            history: self.record(SHIFT_CODE | tag as u64),
        }
    }

    /// Merges the top two trees. Caller guarantees `depth >= 2`.
    pub(crate) fn adjoin(&self, action: ParserAction, sem: Sem, dlp: f64, realized: u128) -> Self {
        let top = self.top.as_ref().expect("adjoin on empty stack");
        let second = top.below.as_ref().expect("adjoin needs two trees");
        let head = match action.kind {
            ActionKind::AdjoinLeft => HeadSide::Left,
            ActionKind::AdjoinRight => HeadSide::Right,
            ActionKind::Null => unreachable!("null is not an adjoin"),
        };
        let label = action.label.expect("adjoin has a label");
        let tree = ParseTree::join(label, head, second.entry.tree.clone(), top.entry.tree.clone());
        let entry = StackEntry {
            tree: Arc::new(tree),
            bits: LayeringBits::of(sem).union(top.entry.bits).union(second.entry.bits),
            sem,
        };
        WordParsePrefix {
            top: Some(Arc::new(StackNode {
                entry,
                below: second.below.clone(),
            })),
            depth: self.depth - 1,
            position: self.position,
            log_prob: self.log_prob + dlp,
            ops: self.ops + 1,
            realized,
            history: self.record(action.index() as u64),
        }
    }

    pub(crate) fn close(&self, dlp: f64) -> Self {
        WordParsePrefix {
            log_prob: self.log_prob + dlp,
            ops: self.ops + 1,
            history: self.record(0),
            ..self.clone()
        }
    }

    pub(crate) fn with_extra(&self, dlp: f64) -> Self {
        WordParsePrefix {
            log_prob: self.log_prob + dlp,
            ..self.clone()
        }
    }
}
