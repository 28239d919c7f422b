//! Turning a bracketed treebank into model counts: unary collapse, head
//! percolation, head-outward binarization and derivation counting.

use std::path::Path;
use std::sync::Arc;

use crate::corpus::{CorpusError, Tree, Vocabularies, SEM_SEPARATOR};
use crate::model::{is_check_sentence, ModelError, SlmCounts, SlmModel};
use crate::parser::{accumulate_counts, ParseError, ParseTree};

#[derive(Debug, thiserror::Error)]
pub enum InitError {
    #[error("head rules line {line}: {msg}")]
    Rules { line: usize, msg: String },
    #[error("empty treebank")]
    EmptyTreebank,
    #[error("tree {index}: {source}")]
    Tree {
        index: usize,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Search children left to right.
    Left,
    /// Search children right to left.
    Right,
}

/// `PARENT direction child1 child2 ...`: the head of a `PARENT` node is the
/// first child, scanning in `direction`, whose label is `child1`; failing
/// that `child2`, and so on. With no match the rightmost child is the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadRule {
    pub parent: String,
    pub direction: Direction,
    pub priorities: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HeadRules {
    pub rules: Vec<HeadRule>,
}

impl HeadRules {
    /// One rule per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, InitError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| InitError::Rules {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut toks = line.split_whitespace();
            let parent = toks.next().ok_or_else(|| err("missing parent label"))?;
            let direction = match toks.next() {
                Some("left") | Some("leftmost") => Direction::Left,
                Some("right") | Some("rightmost") => Direction::Right,
                Some(d) => return Err(err(&format!("unknown direction '{d}'"))),
                None => return Err(err("missing direction")),
            };
            rules.push(HeadRule {
                parent: parent.to_string(),
                direction,
                priorities: toks.map(str::to_string).collect(),
            });
        }
        Ok(HeadRules { rules })
    }

    /// Rules for the built-in synthetic grammar.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/default_head_rules.txt")).expect("built-in head rules parse")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InitError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Index of the head child of a `label` node.
    pub fn head_child(&self, label: &str, children: &[Tree]) -> usize {
        let syn = syntactic(label);
        if let Some(rule) = self.rules.iter().find(|r| r.parent == syn) {
            let order: Vec<usize> = match rule.direction {
                Direction::Left => (0..children.len()).collect(),
                Direction::Right => (0..children.len()).rev().collect(),
            };
            for want in &rule.priorities {
                if let Some(&i) = order.iter().find(|&&i| syntactic(children[i].label()) == want) {
                    return i;
                }
            }
        }
        children.len() - 1
    }
}

fn syntactic(label: &str) -> &str {
    label.split(SEM_SEPARATOR).next().unwrap_or(label)
}

/// Removes unary nodes. A unary chain ending in a pre-terminal keeps the
/// pre-terminal; otherwise the upper label is kept.
pub fn collapse_unary(tree: &Tree) -> Tree {
    match tree {
        Tree::Leaf { .. } => tree.clone(),
        Tree::Node { label, children, head } => {
            if children.len() == 1 {
                let inner = collapse_unary(&children[0]);
                return match inner {
                    Tree::Leaf { .. } => inner,
                    Tree::Node { children, head, .. } => Tree::Node {
                        label: label.clone(),
                        children,
                        head,
                    },
                };
            }
            Tree::Node {
                label: label.clone(),
                children: children.iter().map(collapse_unary).collect(),
                head: *head,
            }
        }
    }
}

/// Assigns a head child to every node that lacks one. Heads already present
/// (e.g. from `^` markers) are kept, so the operation is idempotent.
pub fn percolate_heads(tree: &Tree, rules: &HeadRules) -> Tree {
    match tree {
        Tree::Leaf { .. } => tree.clone(),
        Tree::Node { label, children, head } => {
            let children: Vec<Tree> = children.iter().map(|c| percolate_heads(c, rules)).collect();
            let head = head.unwrap_or_else(|| rules.head_child(label, &children));
            Tree::Node {
                label: label.clone(),
                children,
                head: Some(head),
            }
        }
    }
}

/// Label of the intermediate nodes created when binarizing a `label` node:
/// the syntactic part primed, any semantic part kept.
pub fn intermediate_label(label: &str) -> String {
    match label.split_once(SEM_SEPARATOR) {
        Some((syn, sem)) => format!("{syn}'{SEM_SEPARATOR}{sem}"),
        None => format!("{label}'"),
    }
}

/// Binarizes a headed tree head-outward: the head child is joined first with
/// its left siblings (nearest first), then with its right siblings. The top
/// node keeps the original label, intermediate nodes get the primed label.
pub fn binarize(tree: &Tree) -> Tree {
    match tree {
        Tree::Leaf { .. } => tree.clone(),
        Tree::Node { label, children, head } => {
            let kids: Vec<Tree> = children.iter().map(binarize).collect();
            if kids.len() == 1 {
                return Tree::Node {
                    label: label.clone(),
                    children: kids,
                    head: Some(0),
                };
            }
            let h = head.unwrap_or(kids.len() - 1);
            let mut joins: Vec<(Tree, bool)> = Vec::new();
            for i in (0..h).rev() {
                joins.push((kids[i].clone(), true));
            }
            for k in kids.iter().skip(h + 1) {
                joins.push((k.clone(), false));
            }
            let mid = intermediate_label(label);
            let last = joins.len() - 1;
            let mut cur = kids[h].clone();
            for (i, (sib, on_left)) in joins.into_iter().enumerate() {
                let l = if i == last { label.clone() } else { mid.clone() };
                cur = if on_left {
                    Tree::Node {
                        label: l,
                        children: vec![sib, cur],
                        head: Some(1),
                    }
                } else {
                    Tree::Node {
                        label: l,
                        children: vec![cur, sib],
                        head: Some(0),
                    }
                };
            }
            cur
        }
    }
}

/// Unary collapse, head percolation and binarization.
pub fn prepare_tree(tree: &Tree, rules: &HeadRules) -> Tree {
    binarize(&percolate_heads(&collapse_unary(tree), rules))
}

/// Counts of every derivation event of the given trees.
pub fn gather_counts(trees: &[ParseTree]) -> SlmCounts {
    let mut counts = SlmCounts::new();
    for t in trees {
        accumulate_counts(&mut counts, &[Arc::new(t.clone())], 1.0);
    }
    counts
}

/// Counts split into main and held-out check portions by sentence index.
pub fn gather_split_counts(trees: &[ParseTree]) -> (SlmCounts, SlmCounts) {
    let indices: Vec<usize> = (0..trees.len()).collect();
    gather_split_counts_at(trees, &indices)
}

/// As [`gather_split_counts`], with the sentence index of each tree given
/// explicitly (for treebanks with gaps).
pub fn gather_split_counts_at(trees: &[ParseTree], indices: &[usize]) -> (SlmCounts, SlmCounts) {
    let mut main = SlmCounts::new();
    let mut check = SlmCounts::new();
    for (t, &i) in trees.iter().zip(indices) {
        let target = if is_check_sentence(i) { &mut check } else { &mut main };
        accumulate_counts(target, &[Arc::new(t.clone())], 1.0);
    }
    (main, check)
}

/// Converts prepared string trees to id trees over `vocabs`.
pub fn to_parse_trees(trees: &[Tree], vocabs: &Vocabularies) -> Result<Vec<ParseTree>, InitError> {
    trees
        .iter()
        .enumerate()
        .map(|(index, t)| ParseTree::from_tree(t, vocabs, 0).map_err(|source| InitError::Tree { index, source }))
        .collect()
}

/// Estimates a model from prepared trees.
pub fn initialize_model(trees: &[Tree], vocabs: Vocabularies) -> Result<SlmModel, InitError> {
    let indices: Vec<usize> = (0..trees.len()).collect();
    initialize_model_at(trees, &indices, vocabs)
}

/// As [`initialize_model`], with explicit sentence indices for the
/// main/check split.
pub fn initialize_model_at(trees: &[Tree], indices: &[usize], vocabs: Vocabularies) -> Result<SlmModel, InitError> {
    if trees.is_empty() {
        return Err(InitError::EmptyTreebank);
    }
    let parsed = to_parse_trees(trees, &vocabs)?;
    let (main, check) = gather_split_counts_at(&parsed, indices);
    Ok(SlmModel::estimate(vocabs, &main, &check)?)
}
