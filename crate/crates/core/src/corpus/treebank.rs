use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::annotation::tokenize;
use super::{read_lines, CorpusError};

/// Separator between the syntactic and semantic parts of an enriched label.
pub const SEM_SEPARATOR: char = '*';

/// Marks a child as its parent's head child in bracketed text (`(NP^ ...)`).
pub const HEAD_MARKER: char = '^';

/// A bracketed tree with string labels; n-ary before binarization.
///
/// Leaves are pre-terminals: a POS tag over a word. `head`, when set, is the
/// index of the head child.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tree {
    Leaf {
        tag: String,
        word: String,
    },
    Node {
        label: String,
        children: Vec<Tree>,
        head: Option<usize>,
    },
}

impl Tree {
    pub fn leaf(tag: impl Into<String>, word: impl Into<String>) -> Tree {
        Tree::Leaf {
            tag: tag.into(),
            word: word.into(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Tree {
        Tree::Node {
            label: label.into(),
            children,
            head: None,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Tree::Leaf { tag, .. } => tag,
            Tree::Node { label, .. } => label,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tree)) {
        f(self);
        if let Tree::Node { children, .. } = self {
            for c in children {
                c.visit(f);
            }
        }
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let Tree::Leaf { word, .. } = t {
                out.push(word.as_str());
            }
        });
        out
    }

    pub fn tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let Tree::Leaf { tag, .. } = t {
                out.push(tag.as_str());
            }
        });
        out
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::num_leaves).sum(),
        }
    }

    /// Headword following head-child indices down to a leaf. `None` if some
    /// node on the path has no head assigned.
    pub fn headword(&self) -> Option<&str> {
        match self {
            Tree::Leaf { word, .. } => Some(word),
            Tree::Node { children, head, .. } => children.get((*head)?)?.headword(),
        }
    }

    /// Canonical bracketed form without head markers.
    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, false, false);
        out
    }

    /// Bracketed form with head children marked by a trailing `^` on their
    /// label.
    pub fn to_bracketed_with_heads(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, true, false);
        out
    }

    fn write(&self, out: &mut String, heads: bool, is_head: bool) {
        let marker = if heads && is_head { "^" } else { "" };
        match self {
            Tree::Leaf { tag, word } => {
                out.push_str(&format!("({tag}{marker} {word})"));
            }
            Tree::Node { label, children, head } => {
                out.push('(');
                out.push_str(label);
                out.push_str(marker);
                for (i, c) in children.iter().enumerate() {
                    out.push(' ');
                    c.write(out, heads, *head == Some(i));
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    External,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreebankSentence {
    pub tree: Tree,
    pub provenance: Provenance,
}

struct TreeParser<'a> {
    tokens: Vec<&'a str>,
    pos: usize,
}

impl<'a> TreeParser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<&'a str> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: &str) -> Result<(), CorpusError> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            Some(t) => Err(CorpusError::Format(format!("expected '{tok}', found '{t}'"))),
            None => Err(CorpusError::Format("unbalanced parentheses".into())),
        }
    }

    /// Parses one bracketed element; returns the tree and whether its label
    /// carried the head marker.
    fn element(&mut self) -> Result<(Tree, bool), CorpusError> {
        self.expect("(")?;
        match self.peek() {
            Some("(") => {
                // unlabelled wrapper around a single tree
                let (inner, _) = self.element()?;
                self.expect(")")?;
                Ok((inner, false))
            }
            Some(")") | None => Err(CorpusError::Format("missing label".into())),
            Some(_) => {
                let raw = self.next().unwrap_or_default();
                let (label, marked) = match raw.strip_suffix(HEAD_MARKER) {
                    Some(l) => (l, true),
                    None => (raw, false),
                };
                if label.is_empty() {
                    return Err(CorpusError::Format("empty label".into()));
                }
                match self.peek() {
                    Some("(") => {
                        let mut children = Vec::new();
                        let mut head = None;
                        while self.peek() == Some("(") {
                            let (child, is_head) = self.element()?;
                            if is_head {
                                if head.is_some() {
                                    return Err(CorpusError::Format(format!("two head children under '{label}'")));
                                }
                                head = Some(children.len());
                            }
                            children.push(child);
                        }
                        self.expect(")")?;
                        Ok((
                            Tree::Node {
                                label: label.to_string(),
                                children,
                                head,
                            },
                            marked,
                        ))
                    }
                    Some(")") | None => Err(CorpusError::Format(format!("'{label}' has no children"))),
                    Some(word) => {
                        self.pos += 1;
                        if self.peek() != Some(")") {
                            return Err(CorpusError::Format(format!(
                                "pre-terminal '{label}' must dominate exactly one bare token"
                            )));
                        }
                        self.pos += 1;
                        Ok((Tree::leaf(label, word), marked))
                    }
                }
            }
        }
    }
}

/// Parses one Penn-style bracketed tree, e.g. `(S (NP (N dogs)) (VP (V bark)))`.
pub fn parse_tree_line(line: &str) -> Result<Tree, CorpusError> {
    let mut p = TreeParser {
        tokens: tokenize(line),
        pos: 0,
    };
    if p.tokens.is_empty() {
        return Err(CorpusError::Format("empty tree".into()));
    }
    let (tree, _) = p.element()?;
    if p.pos != p.tokens.len() {
        return Err(CorpusError::Format("trailing tokens after tree".into()));
    }
    Ok(tree)
}

fn check_syntactic_labels(tree: &Tree) -> Result<(), CorpusError> {
    let mut bad = None;
    tree.visit(&mut |t| {
        if bad.is_none() && t.label().contains(SEM_SEPARATOR) {
            bad = Some(t.label().to_string());
        }
    });
    match bad {
        Some(l) => Err(CorpusError::SemanticLabel(l)),
        None => Ok(()),
    }
}

/// Loads a syntactic treebank. Labels containing the semantic separator `*`
/// are rejected.
pub fn load_treebank(path: impl AsRef<Path>) -> Result<Vec<TreebankSentence>, CorpusError> {
    load_trees(path.as_ref(), true)
}

/// Loads a treebank whose labels may be semantically enriched (`NP*Slot`).
pub fn load_enriched_treebank(path: impl AsRef<Path>) -> Result<Vec<TreebankSentence>, CorpusError> {
    load_trees(path.as_ref(), false)
}

fn load_trees(path: &Path, syntactic_only: bool) -> Result<Vec<TreebankSentence>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, line) in read_lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_tree_line(&line).map_err(|e| e.at_line(lineno))?;
        if syntactic_only {
            check_syntactic_labels(&tree).map_err(|e| e.at_line(lineno))?;
        }
        out.push(TreebankSentence {
            tree,
            provenance: Provenance::External,
        });
    }
    Ok(out)
}

/// Writes one tree per line; head markers are included when `with_heads`.
pub fn write_treebank(path: impl AsRef<Path>, trees: &[Tree], with_heads: bool) -> Result<(), CorpusError> {
    let mut text = String::new();
    for t in trees {
        if with_heads {
            text.push_str(&t.to_bracketed_with_heads());
        } else {
            text.push_str(&t.to_bracketed());
        }
        text.push('\n');
    }
    super::write_file(path.as_ref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_simple_tree() {
        let t = parse_tree_line("(S (NP (N dogs)) (VP (V bark)))").unwrap();
        assert_eq!(t.label(), "S");
        assert_eq!(t.words(), vec!["dogs", "bark"]);
        assert_eq!(t.to_bracketed(), "(S (NP (N dogs)) (VP (V bark)))");
    }

    #[test]
    fn wrapper_around_single_leaf() {
        let t = parse_tree_line("((X a))").unwrap();
        assert_eq!(t, Tree::leaf("X", "a"));
        assert_eq!(t.to_bracketed(), "(X a)");
    }

    #[test]
    fn unbalanced_is_format_error() {
        for bad in ["(S (NP (N dogs))", "(S (N a)))", "(S a b)", "(S (N a) b)", "()", "(S)"] {
            assert!(matches!(parse_tree_line(bad), Err(CorpusError::Format(_))), "{bad}");
        }
    }

    #[test]
    fn head_markers_round_trip() {
        let line = "(S (NP^ (D the) (N^ dog)) (V bark))";
        let t = parse_tree_line(line).unwrap();
        assert_eq!(t.headword(), Some("dog"));
        assert_eq!(t.to_bracketed_with_heads(), line);
        assert_eq!(t.to_bracketed(), "(S (NP (D the) (N dog)) (V bark))");
    }

    #[test]
    fn rejects_semantic_labels_in_syntactic_treebank() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tb.txt");
        std::fs::write(&path, "(S (N a))\n(S*F (N a))\n").unwrap();
        assert!(matches!(load_treebank(&path), Err(CorpusError::AtLine { line: 2, .. })));
        assert_eq!(load_enriched_treebank(&path).unwrap().len(), 2);
    }

    fn arb_tree() -> impl Strategy<Value = Tree> {
        let label = prop::sample::select(vec!["S", "NP", "VP", "PP", "X'"]);
        let tag = prop::sample::select(vec!["N", "V", "D", "P"]);
        let word = prop::sample::select(vec!["a", "b", "dog", "p.m.", "x-y"]);
        let leaf = (tag, word).prop_map(|(t, w)| Tree::leaf(t, w));
        leaf.prop_recursive(4, 24, 4, move |inner| {
            (label.clone(), prop::collection::vec(inner, 1..4)).prop_map(|(l, c)| Tree::node(l, c))
        })
    }

    proptest! {
        #[test]
        fn writer_reader_round_trip(t in arb_tree()) {
            let text = t.to_bracketed();
            let back = parse_tree_line(&text).unwrap();
            prop_assert_eq!(&back, &t);
            // whitespace is not significant
            let spaced = text.replace('(', " ( ").replace(')', " ) ");
            prop_assert_eq!(parse_tree_line(&spaced).unwrap().to_bracketed(), text);
        }
    }
}
