//! Span constraints derived from a semantic parse and the gates that keep
//! the parser's search consistent with them.
//!
//! A constraint `<l, r, Q>` asks for a constituent spanning exactly words
//! `l..=r`. In match mode only the span matters; in l-match mode the
//! constituent's semantic tag must also be one of `Q`. The gates are applied
//! incrementally: every adjoin (and every shift, for one-word spans) is
//! checked when it is proposed, and the null move closing position `k` is only
//! allowed once every constraint ending at `k` has been realized.

use std::collections::BTreeSet;

use crate::corpus::{AnnotatedSentence, Span, Vocabularies, Vocabulary};
use crate::model::{Sem, SlmModel};
use crate::parser::{beam_parse, BeamConfig, Parse, ParseError, ParseTree};

/// Realized-constraint bookkeeping is a bit mask.
pub const MAX_CONSTRAINTS: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum ConstraintError {
    #[error("constraint tag set is empty")]
    EmptyTagSet,
    #[error("unknown {kind} tag '{tag}'")]
    UnknownTag { kind: &'static str, tag: String },
    #[error("sentence has {0} constraints; at most {MAX_CONSTRAINTS} are supported")]
    TooMany(usize),
    #[error("invalid constraint set: {0}")]
    Invalid(String),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Frame,
    Slot,
}

/// `<l, r, Q>`: a span and the semantic tags allowed on it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub span: Span,
    pub level: Level,
    pub tags: BTreeSet<u32>,
}

impl Constraint {
    pub fn new(span: Span, level: Level, tags: BTreeSet<u32>) -> Result<Self, ConstraintError> {
        if tags.is_empty() {
            return Err(ConstraintError::EmptyTagSet);
        }
        Ok(Constraint { span, level, tags })
    }

    pub fn allows(&self, sem: Sem) -> bool {
        match (self.level, sem) {
            (Level::Frame, Sem::Frame(f)) => self.tags.contains(&f),
            (Level::Slot, Sem::Slot(s)) => self.tags.contains(&s),
            _ => false,
        }
    }
}

/// True iff the spans overlap without either containing the other.
pub fn crosses(span: Span, other: Span) -> bool {
    span.overlaps(other) && !span.contains(other) && !other.contains(span)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    Unconstrained,
    Match,
    LMatch,
}

/// Whether a tree contains frame-tagged and slot-tagged nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LayeringBits {
    pub frame: bool,
    pub slot: bool,
}

impl LayeringBits {
    pub fn of(sem: Sem) -> Self {
        LayeringBits {
            frame: matches!(sem, Sem::Frame(_)),
            slot: matches!(sem, Sem::Slot(_)),
        }
    }

    pub fn union(self, other: LayeringBits) -> Self {
        LayeringBits {
            frame: self.frame || other.frame,
            slot: self.slot || other.slot,
        }
    }
}

/// What a gate sees of one of the two trees an adjoin would merge.
#[derive(Clone, Copy, Debug)]
pub struct ChildInfo {
    pub sem: Sem,
    pub bits: LayeringBits,
}

/// Accept/reject decisions for the parser's moves. Each accepting call
/// returns the updated realized-constraint mask.
pub trait Gate: Sync {
    fn shift(&self, index: usize, sem: Sem, realized: u128) -> Option<u128>;
    fn adjoin(&self, span: Span, sem: Sem, left: ChildInfo, right: ChildInfo, realized: u128) -> Option<u128>;
    /// May the position whose last word is `index` be closed?
    fn null(&self, index: usize, realized: u128) -> bool;
}

/// The always-accept gate used for unconstrained parsing.
#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptAll;

impl Gate for AcceptAll {
    fn shift(&self, _: usize, _: Sem, realized: u128) -> Option<u128> {
        Some(realized)
    }

    fn adjoin(&self, _: Span, _: Sem, _: ChildInfo, _: ChildInfo, realized: u128) -> Option<u128> {
        Some(realized)
    }

    fn null(&self, _: usize, _: u128) -> bool {
        true
    }
}

/// Unconstrained parsing that keeps the semantic projection two-level:
/// frame-tagged nodes only over the whole sentence, and no slot-tagged node
/// above a frame-tagged node or a node of another slot.
#[derive(Clone, Copy, Debug)]
pub struct LayeringOnly {
    pub len: usize,
}

impl Gate for LayeringOnly {
    fn shift(&self, _: usize, sem: Sem, realized: u128) -> Option<u128> {
        match sem {
            Sem::Frame(_) if self.len > 1 => None,
            _ => Some(realized),
        }
    }

    fn adjoin(&self, span: Span, sem: Sem, left: ChildInfo, right: ChildInfo, realized: u128) -> Option<u128> {
        let ok = match sem {
            Sem::Void => true,
            Sem::Frame(_) => span == Span::new(0, self.len - 1) && !left.bits.frame && !right.bits.frame,
            Sem::Slot(_) => [left, right]
                .iter()
                .all(|c| !c.bits.frame && !(c.bits.slot && c.sem != sem)),
        };
        ok.then_some(realized)
    }

    fn null(&self, _: usize, _: u128) -> bool {
        true
    }
}

/// The constraints of one sentence: a root constraint over all words and
/// disjoint slot constraints strictly inside it.
///
/// With `closed_world` set (training), slot-tagged constituents are only
/// allowed inside a slot constraint carrying that tag. Without it (decoding
/// test sentences, where slots are unknown) they may appear anywhere that
/// does not violate layering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintSet {
    pub len: usize,
    pub root: Constraint,
    pub slots: Vec<Constraint>,
    pub mode: MatchMode,
    pub closed_world: bool,
}

impl ConstraintSet {
    pub fn new(
        len: usize,
        root: Constraint,
        slots: Vec<Constraint>,
        mode: MatchMode,
        closed_world: bool,
    ) -> Result<Self, ConstraintError> {
        if len == 0 {
            return Err(ConstraintError::Invalid("empty sentence".into()));
        }
        if root.span != Span::new(0, len - 1) {
            return Err(ConstraintError::Invalid(format!(
                "root span {} does not cover the sentence",
                root.span
            )));
        }
        if slots.len() + 1 > MAX_CONSTRAINTS {
            return Err(ConstraintError::TooMany(slots.len() + 1));
        }
        for (i, s) in slots.iter().enumerate() {
            if s.span.r >= len || s.span == root.span {
                return Err(ConstraintError::Invalid(format!(
                    "slot span {} not strictly inside sentence",
                    s.span
                )));
            }
            if slots[..i].iter().any(|o| o.span.overlaps(s.span)) {
                return Err(ConstraintError::Invalid(format!(
                    "slot span {} overlaps another slot",
                    s.span
                )));
            }
        }
        Ok(ConstraintSet {
            len,
            root,
            slots,
            mode,
            closed_world,
        })
    }

    /// Constraints from a training annotation.
    pub fn from_annotation(
        sentence: &AnnotatedSentence,
        vocabs: &Vocabularies,
        mode: MatchMode,
    ) -> Result<Self, ConstraintError> {
        let lookup = |v: &Vocabulary, kind, tag: &str| {
            v.id(tag).ok_or_else(|| ConstraintError::UnknownTag {
                kind,
                tag: tag.to_string(),
            })
        };
        let frame = lookup(&vocabs.frame, "frame", &sentence.frame)?;
        let root = Constraint::new(Span::new(0, sentence.len() - 1), Level::Frame, [frame].into())?;
        let slots = sentence
            .slots
            .iter()
            .map(|s| Constraint::new(s.span, Level::Slot, [lookup(&vocabs.slot, "slot", &s.tag)?].into()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(sentence.len(), root, slots, mode, true)
    }

    /// Iterates constraints with their bit index (root is bit 0).
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Constraint)> {
        std::iter::once(&self.root).chain(self.slots.iter()).enumerate()
    }

    pub fn all_realized_mask(&self) -> u128 {
        let n = self.slots.len() + 1;
        if n == 128 {
            u128::MAX
        } else {
            (1u128 << n) - 1
        }
    }

    fn check_node(&self, span: Span, sem: Sem, mut realized: u128) -> Option<u128> {
        match self.mode {
            MatchMode::Unconstrained => Some(realized),
            MatchMode::Match => {
                for (i, c) in self.iter() {
                    if c.span == span {
                        realized |= 1 << i;
                    }
                }
                Some(realized)
            }
            MatchMode::LMatch => {
                let mut on_constraint = false;
                for (i, c) in self.iter() {
                    if c.span == span {
                        // no other node can cover this span later, so a
                        // wrong tag here can never be repaired
                        if !c.allows(sem) {
                            return None;
                        }
                        realized |= 1 << i;
                        on_constraint = true;
                    }
                }
                if !on_constraint {
                    match sem {
                        Sem::Frame(_) => return None,
                        Sem::Slot(s)
                            if self.closed_world
                                && !self.slots.iter().any(|c| c.span.contains(span) && c.tags.contains(&s)) =>
                        {
                            return None;
                        }
                        _ => {}
                    }
                }
                Some(realized)
            }
        }
    }
}

impl Gate for ConstraintSet {
    fn shift(&self, index: usize, sem: Sem, realized: u128) -> Option<u128> {
        self.check_node(Span::new(index, index), sem, realized)
    }

    fn adjoin(&self, span: Span, sem: Sem, left: ChildInfo, right: ChildInfo, realized: u128) -> Option<u128> {
        if self.mode == MatchMode::Unconstrained {
            return Some(realized);
        }
        if self.slots.iter().any(|c| crosses(span, c.span)) {
            return None;
        }
        if self.mode == MatchMode::LMatch {
            if let Sem::Slot(_) = sem {
                for child in [left, right] {
                    if child.bits.frame || (child.bits.slot && child.sem != sem) {
                        return None;
                    }
                }
            }
        }
        self.check_node(span, sem, realized)
    }

    fn null(&self, index: usize, realized: u128) -> bool {
        self.mode == MatchMode::Unconstrained || self.iter().all(|(i, c)| c.span.r != index || realized & (1 << i) != 0)
    }
}

/// Decoding constraints for a test sentence: only a root constraint, with
/// either every frame allowed or the given frame forced.
pub fn test_constraints(len: usize, frames: &Vocabulary, frame: Option<u32>) -> Result<ConstraintSet, ConstraintError> {
    let tags: BTreeSet<u32> = match frame {
        Some(f) => [f].into(),
        None => (0..frames.len() as u32).collect(),
    };
    if tags.is_empty() {
        return Err(ConstraintError::Config("frame vocabulary is empty".into()));
    }
    let root = Constraint::new(Span::new(0, len.max(1) - 1), Level::Frame, tags)?;
    ConstraintSet::new(len, root, Vec::new(), MatchMode::LMatch, false)
}

/// Constrained parse, falling back to unconstrained parsing when the beam
/// loses every constraint-satisfying prefix. The flag reports the back-off.
pub fn parse_with_backoff(
    words: &[u32],
    model: &SlmModel,
    config: &BeamConfig,
    cs: &ConstraintSet,
) -> Result<(Vec<Parse>, bool), ParseError> {
    match beam_parse(words, model, config, cs) {
        Ok(p) => Ok((p, false)),
        Err(ParseError::NoParse) => {
            log::debug!("no constrained parse for {}-word sentence; backing off", words.len());
            beam_parse(words, model, config, &AcceptAll).map(|p| (p, true))
        }
        Err(e) => Err(e),
    }
}

/// Post-hoc check that a parse contains every constraint span as a
/// constituent, and in l-match mode carries an allowed tag on it.
pub fn satisfies(trees: &[std::sync::Arc<ParseTree>], cs: &ConstraintSet, sems: &crate::model::SemTable) -> bool {
    let mut nodes: Vec<(Span, Sem)> = Vec::new();
    for t in trees {
        t.visit(&mut |n: &ParseTree| nodes.push((n.span(), sems.head(n.head_label()))));
    }
    cs.iter().all(|(_, c)| {
        nodes
            .iter()
            .any(|(span, sem)| *span == c.span && (cs.mode != MatchMode::LMatch || c.allows(*sem)))
    })
}
