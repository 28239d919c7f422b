use std::fmt::Write as _;
use std::sync::Arc;

use crate::corpus::{Span, Tree, Vocabularies};
use crate::model::{ExposedHead, HeadLabel, ParserAction};

use super::ParseError;

/// Label given to the nodes that join the trees of an unreduced final
/// prefix into one tree.
pub const COMPLETION_LABEL: &str = "TOP'";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadSide {
    Left,
    Right,
}

/// Binary parse tree over word and tag ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ParseTree {
    Leaf {
        word: u32,
        tag: u32,
        index: usize,
    },
    Node {
        label: u32,
        head: HeadSide,
        headword: u32,
        span: Span,
        left: Arc<ParseTree>,
        right: Arc<ParseTree>,
    },
}

impl ParseTree {
    pub fn leaf(word: u32, tag: u32, index: usize) -> Self {
        ParseTree::Leaf { word, tag, index }
    }

    /// Joins two adjacent trees; the headword comes from the `head` child.
    pub fn join(label: u32, head: HeadSide, left: Arc<ParseTree>, right: Arc<ParseTree>) -> Self {
        debug_assert_eq!(left.span().r + 1, right.span().l);
        let headword = match head {
            HeadSide::Left => left.headword(),
            HeadSide::Right => right.headword(),
        };
        ParseTree::Node {
            label,
            head,
            headword,
            span: Span::new(left.span().l, right.span().r),
            left,
            right,
        }
    }

    pub fn span(&self) -> Span {
        match self {
            ParseTree::Leaf { index, .. } => Span::new(*index, *index),
            ParseTree::Node { span, .. } => *span,
        }
    }

    pub fn headword(&self) -> u32 {
        match self {
            ParseTree::Leaf { word, .. } => *word,
            ParseTree::Node { headword, .. } => *headword,
        }
    }

    pub fn head_label(&self) -> HeadLabel {
        match self {
            ParseTree::Leaf { tag, .. } => HeadLabel::Pos(*tag),
            ParseTree::Node { label, .. } => HeadLabel::Nt(*label),
        }
    }

    pub fn exposed_head(&self) -> ExposedHead {
        ExposedHead::new(self.headword(), self.head_label())
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ParseTree::Leaf { .. })
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a ParseTree)) {
        f(self);
        if let ParseTree::Node { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    /// `(word, tag)` of every leaf, left to right.
    pub fn leaves(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let ParseTree::Leaf { word, tag, .. } = t {
                out.push((*word, *tag));
            }
        });
        out
    }

    pub fn label_name<'a>(&self, vocabs: &'a Vocabularies) -> &'a str {
        match self {
            ParseTree::Leaf { tag, .. } => vocabs.pos.name(*tag),
            ParseTree::Node { label, .. } => vocabs.nt.name(*label),
        }
    }

    /// String tree with head children marked.
    pub fn to_tree(&self, vocabs: &Vocabularies) -> Tree {
        match self {
            ParseTree::Leaf { word, tag, .. } => Tree::leaf(vocabs.pos.name(*tag), vocabs.word.name(*word)),
            ParseTree::Node {
                label,
                head,
                left,
                right,
                ..
            } => Tree::Node {
                label: vocabs.nt.name(*label).to_string(),
                children: vec![left.to_tree(vocabs), right.to_tree(vocabs)],
                head: Some(match head {
                    HeadSide::Left => 0,
                    HeadSide::Right => 1,
                }),
            },
        }
    }

    /// Converts a binarized string tree with heads, whose first leaf is word
    /// `start` of the sentence. Unknown words map to `<unk>`; unknown labels
    /// are an error.
    pub fn from_tree(tree: &Tree, vocabs: &Vocabularies, start: usize) -> Result<ParseTree, ParseError> {
        match tree {
            Tree::Leaf { tag, word } => {
                let tag = vocabs
                    .pos
                    .id(tag)
                    .ok_or_else(|| ParseError::UnknownLabel(tag.clone()))?;
                Ok(ParseTree::leaf(vocabs.word.id_or_unk(word), tag, start))
            }
            Tree::Node { label, children, head } => {
                if children.len() != 2 {
                    return Err(ParseError::NotBinarized(format!(
                        "'{label}' has {} children",
                        children.len()
                    )));
                }
                let head = match head {
                    Some(0) => HeadSide::Left,
                    Some(1) => HeadSide::Right,
                    _ => return Err(ParseError::NotBinarized(format!("'{label}' has no head child"))),
                };
                let id = vocabs
                    .nt
                    .id(label)
                    .ok_or_else(|| ParseError::UnknownLabel(label.clone()))?;
                let left = ParseTree::from_tree(&children[0], vocabs, start)?;
                let right = ParseTree::from_tree(&children[1], vocabs, left.span().r + 1)?;
                Ok(ParseTree::join(id, head, Arc::new(left), Arc::new(right)))
            }
        }
    }

    /// Debug rendering with `headword^label` on every node.
    pub fn to_debug_string(&self, vocabs: &Vocabularies) -> String {
        let mut out = String::new();
        self.write_debug(vocabs, &mut out);
        out
    }

    fn write_debug(&self, vocabs: &Vocabularies, out: &mut String) {
        match self {
            ParseTree::Leaf { word, tag, .. } => {
                let w = vocabs.word.name(*word);
                let _ = write!(out, "({w}^{} {w})", vocabs.pos.name(*tag));
            }
            ParseTree::Node {
                label,
                headword,
                left,
                right,
                ..
            } => {
                let _ = write!(out, "({}^{} ", vocabs.word.name(*headword), vocabs.nt.name(*label));
                left.write_debug(vocabs, out);
                out.push(' ');
                right.write_debug(vocabs, out);
                out.push(')');
            }
        }
    }
}

/// One step of a derivation: shifting a tagged word or a parser move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    Shift { word: u32, tag: u32 },
    Action(ParserAction),
}

/// The unique left-to-right derivation of a tree: after each shift, the
/// adjoins building every node whose last word it is (bottom-up), then null.
pub fn derivation_of(tree: &ParseTree) -> Vec<Step> {
    forest_derivation(std::slice::from_ref(&Arc::new(tree.clone())))
}

/// Derivation of a sequence of adjacent trees. The trees are never joined
/// with each other.
pub fn forest_derivation(trees: &[Arc<ParseTree>]) -> Vec<Step> {
    fn post(t: &ParseTree, out: &mut Vec<Step>) {
        match t {
            ParseTree::Leaf { word, tag, .. } => {
                if !out.is_empty() {
                    out.push(Step::Action(ParserAction::NULL));
                }
                out.push(Step::Shift { word: *word, tag: *tag });
            }
            ParseTree::Node {
                label,
                head,
                left,
                right,
                ..
            } => {
                post(left, out);
                post(right, out);
                out.push(Step::Action(match head {
                    HeadSide::Left => ParserAction::adjoin_left(*label),
                    HeadSide::Right => ParserAction::adjoin_right(*label),
                }));
            }
        }
    }
    let mut out = Vec::new();
    for t in trees {
        post(t, &mut out);
    }
    if !out.is_empty() {
        out.push(Step::Action(ParserAction::NULL));
    }
    out
}

/// Joins a forest right-branching under [`COMPLETION_LABEL`] nodes headed on
/// the right.
pub fn complete_forest(trees: &[Tree]) -> Option<Tree> {
    let mut it = trees.iter().rev();
    let mut acc = it.next()?.clone();
    for t in it {
        acc = Tree::Node {
            label: COMPLETION_LABEL.to_string(),
            children: vec![t.clone(), acc],
            head: Some(1),
        };
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(i: usize) -> Arc<ParseTree> {
        Arc::new(ParseTree::leaf(10 + i as u32, 0, i))
    }

    fn join(l: Arc<ParseTree>, r: Arc<ParseTree>) -> Arc<ParseTree> {
        Arc::new(ParseTree::join(0, HeadSide::Right, l, r))
    }

    #[test]
    fn adjoin_heads() {
        let r = ParseTree::join(3, HeadSide::Right, leaf(0), leaf(1));
        assert_eq!(r.headword(), 11);
        assert_eq!(r.span(), Span::new(0, 1));
        let l = ParseTree::join(3, HeadSide::Left, leaf(0), leaf(1));
        assert_eq!(l.headword(), 10);
    }

    #[test]
    fn single_leaf_derivation() {
        let d = derivation_of(&leaf(0));
        assert_eq!(
            d,
            vec![Step::Shift { word: 10, tag: 0 }, Step::Action(ParserAction::NULL)]
        );
    }

    #[test]
    fn three_leaf_shapes_have_distinct_derivations() {
        let left = join(join(leaf(0), leaf(1)), leaf(2));
        let right = join(leaf(0), join(leaf(1), leaf(2)));
        let dl = derivation_of(&left);
        let dr = derivation_of(&right);
        assert_ne!(dl, dr);
        // right-branching: all adjoins after the last shift
        let adj = ParserAction::adjoin_right(0);
        assert_eq!(
            &dr[dr.len() - 3..],
            &[Step::Action(adj), Step::Action(adj), Step::Action(ParserAction::NULL)]
        );
        assert_eq!(dl[3], Step::Action(adj));
    }

    #[test]
    fn completion_is_right_branching() {
        let ts = vec![Tree::leaf("A", "a"), Tree::leaf("B", "b"), Tree::leaf("C", "c")];
        let t = complete_forest(&ts).unwrap();
        assert_eq!(t.to_bracketed(), "(TOP' (A a) (TOP' (B b) (C c)))");
        assert_eq!(t.headword(), Some("c"));
    }
}
