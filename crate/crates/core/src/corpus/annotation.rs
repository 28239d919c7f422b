use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_lines, CorpusError};

/// Inclusive word-index span `[l, r]` over the unmarked sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub l: usize,
    pub r: usize,
}

impl Span {
    pub fn new(l: usize, r: usize) -> Self {
        debug_assert!(l <= r);
        Span { l, r }
    }

    pub fn len(&self) -> usize {
        self.r - self.l + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: Span) -> bool {
        self.l <= other.l && other.r <= self.r
    }

    pub fn overlaps(&self, other: Span) -> bool {
        self.l <= other.r && other.l <= self.r
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.l, self.r)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub tag: String,
    pub span: Span,
}

/// A pre-tokenized sentence with its two-level semantic parse: a frame tag
/// over the whole sentence and disjoint labelled slot spans.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub words: Vec<String>,
    pub frame: String,
    pub slots: Vec<Slot>,
}

impl AnnotatedSentence {
    /// Builds a sentence, checking the span invariants. Slots are sorted by
    /// left boundary.
    pub fn new(words: Vec<String>, frame: impl Into<String>, mut slots: Vec<Slot>) -> Result<Self, CorpusError> {
        if words.is_empty() {
            return Err(CorpusError::Format("sentence has no words".into()));
        }
        slots.sort_by_key(|s| (s.span.l, s.span.r));
        for s in &slots {
            if s.span.l > s.span.r || s.span.r >= words.len() {
                return Err(CorpusError::SpanOutOfRange {
                    span: s.span,
                    len: words.len(),
                });
            }
            if s.span.l == 0 && s.span.r + 1 == words.len() {
                return Err(CorpusError::SlotCoversSentence(s.tag.clone()));
            }
        }
        for pair in slots.windows(2) {
            if pair[0].span.overlaps(pair[1].span) {
                return Err(CorpusError::SpanOverlap(pair[0].span, pair[1].span));
            }
        }
        Ok(AnnotatedSentence {
            words,
            frame: frame.into(),
            slots,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Writes the sentence back in the parenthesized annotation format.
    pub fn to_line(&self) -> String {
        let mut out = format!("({}", self.frame);
        let mut slots = self.slots.iter().peekable();
        let mut i = 0;
        while i < self.words.len() {
            match slots.peek() {
                Some(s) if s.span.l == i => {
                    out.push_str(&format!(" ({}", s.tag));
                    for w in &self.words[s.span.l..=s.span.r] {
                        out.push(' ');
                        out.push_str(w);
                    }
                    out.push(')');
                    i = s.span.r + 1;
                    slots.next();
                }
                _ => {
                    out.push(' ');
                    out.push_str(&self.words[i]);
                    i += 1;
                }
            }
        }
        out.push(')');
        out
    }
}

impl fmt::Display for AnnotatedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

pub(crate) fn tokenize(line: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(&line[s..i]);
            }
            if c == '(' || c == ')' {
                tokens.push(&line[i..i + 1]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(&line[s..]);
    }
    tokens
}

/// Parses one line of the annotation format:
/// `(FrameTag w ... (SlotTag w ...) ...)`.
pub fn parse_annotation_line(line: &str) -> Result<AnnotatedSentence, CorpusError> {
    let tokens = tokenize(line);
    let fmt_err = |msg: &str| CorpusError::Format(msg.to_string());
    let mut it = tokens.iter().copied();
    if it.next() != Some("(") {
        return Err(fmt_err("expected '(' opening the frame"));
    }
    let frame = match it.next() {
        Some(t) if t != "(" && t != ")" => t.to_string(),
        _ => return Err(fmt_err("missing frame tag")),
    };
    let mut words = Vec::new();
    let mut slots = Vec::new();
    let mut closed = false;
    while let Some(tok) = it.next() {
        match tok {
            ")" => {
                closed = true;
                break;
            }
            "(" => {
                let tag = match it.next() {
                    Some(t) if t != "(" && t != ")" => t.to_string(),
                    _ => return Err(fmt_err("missing slot tag")),
                };
                let l = words.len();
                loop {
                    match it.next() {
                        Some(")") => break,
                        Some("(") => return Err(fmt_err("slots cannot nest")),
                        Some(w) => words.push(w.to_string()),
                        None => return Err(fmt_err("unterminated slot")),
                    }
                }
                if words.len() == l {
                    return Err(fmt_err("empty slot"));
                }
                slots.push(Slot {
                    tag,
                    span: Span::new(l, words.len() - 1),
                });
            }
            w => words.push(w.to_string()),
        }
    }
    if !closed {
        return Err(fmt_err("unbalanced parentheses"));
    }
    if it.next().is_some() {
        return Err(fmt_err("trailing tokens after sentence"));
    }
    AnnotatedSentence::new(words, frame, slots)
}

/// Reads an annotation file, one sentence per line. Blank lines are skipped;
/// any malformed line aborts the load with its line number.
pub fn load_annotated_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, line) in read_lines(path.as_ref())? {
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_annotation_line(&line).map_err(|e| e.at_line(lineno))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_annotated_corpus(path: impl AsRef<Path>, corpus: &[AnnotatedSentence]) -> Result<(), CorpusError> {
    let mut text = String::new();
    for s in corpus {
        text.push_str(&s.to_line());
        text.push('\n');
    }
    super::write_file(path.as_ref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CALENDAR: &str = "(CalendarTask schedule meeting with (ByFullName*Person megan hokins) about \
                        (SubjectByWildCard*Subject internal lecture) at (PreciseTime*Time two thirty p.m.))";

    #[test]
    fn parses_calendar_example() {
        let s = parse_annotation_line(CALENDAR).unwrap();
        assert_eq!(s.frame, "CalendarTask");
        assert_eq!(s.words.len(), 12);
        let got: Vec<(&str, Span)> = s.slots.iter().map(|s| (s.tag.as_str(), s.span)).collect();
        assert_eq!(
            got,
            vec![
                ("ByFullName*Person", Span::new(3, 4)),
                ("SubjectByWildCard*Subject", Span::new(6, 7)),
                ("PreciseTime*Time", Span::new(9, 11)),
            ]
        );
        assert_eq!(s.to_line(), CALENDAR);
    }

    #[test]
    fn slot_free_sentence() {
        let s = parse_annotation_line("(F hello)").unwrap();
        assert_eq!(s.frame, "F");
        assert_eq!(s.words, vec!["hello"]);
        assert!(s.slots.is_empty());
    }

    #[test]
    fn adjacent_slots_are_valid() {
        let s = parse_annotation_line("(F (A*X a) (A*X a) b)").unwrap();
        assert_eq!(s.slots[0].span, Span::new(0, 0));
        assert_eq!(s.slots[1].span, Span::new(1, 1));
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            "",
            "F a",
            "(F a",
            "(F (S a)",
            "(F (S (T a)) b)",
            "(F a) b",
            "(F)",
            "(F () a)",
            "(F (S) a)",
        ] {
            assert!(
                matches!(parse_annotation_line(bad), Err(CorpusError::Format(_))),
                "{bad:?} should be a format error"
            );
        }
    }

    #[test]
    fn span_errors_from_constructor() {
        let words: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let slot = |l, r| Slot {
            tag: "S".into(),
            span: Span { l, r },
        };
        assert!(matches!(
            AnnotatedSentence::new(words.clone(), "F", vec![slot(0, 1), slot(1, 1)]),
            Err(CorpusError::SpanOverlap(..))
        ));
        assert!(matches!(
            AnnotatedSentence::new(words.clone(), "F", vec![slot(1, 3)]),
            Err(CorpusError::SpanOutOfRange { .. })
        ));
        assert!(matches!(
            AnnotatedSentence::new(words, "F", vec![slot(0, 2)]),
            Err(CorpusError::SlotCoversSentence(_))
        ));
    }

    #[test]
    fn load_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "(F a (S b))\n\n(F (S a)\n").unwrap();
        match load_annotated_corpus(&path) {
            Err(CorpusError::AtLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
