use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::constraints::{AcceptAll, Gate};
use crate::corpus::{Span, Tree, Vocabularies, EOS_ID};
use crate::model::{ExposedHead, ParserAction, RankedDistribution, SlmCounts, SlmModel};

use super::prefix::WordParsePrefix;
use super::tree::{complete_forest, forest_derivation, ParseTree, Step};
use super::ParseError;

/// Search limits.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    /// Maximum prefixes kept per stack.
    pub width: usize,
    /// Prefixes more than this many nats below the best are dropped.
    pub threshold: f64,
    /// Number of parses returned.
    pub nbest: usize,
    /// Cap on parser moves per position (the structural cap is the number
    /// of trees minus one).
    pub max_ops: Option<usize>,
    /// Only the null move is allowed, with probability 1: prefixes are flat
    /// sequences of tagged words.
    pub right_branching_only: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 128,
            threshold: 6.9,
            nbest: 10,
            max_ops: None,
            right_branching_only: false,
        }
    }
}

impl BeamConfig {
    /// No pruning at all; exponential, for tiny inputs.
    pub fn unbounded() -> Self {
        BeamConfig {
            width: usize::MAX,
            threshold: f64::INFINITY,
            nbest: usize::MAX,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.width == 0
            || self.nbest == 0
            || self.max_ops == Some(0)
            || self.threshold.is_nan()
            || self.threshold <= 0.0
        {
            return Err(ParseError::Config(
                "beam width, threshold, nbest and max ops must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A complete analysis: the final trees (one, when the prefix was fully
/// reduced) and `ln P(W, T)` including `</s>`.
#[derive(Clone, Debug)]
pub struct Parse {
    pub trees: Vec<Arc<ParseTree>>,
    pub log_prob: f64,
}

impl Parse {
    /// The spanning tree when the parse is fully reduced.
    pub fn tree(&self) -> Option<&ParseTree> {
        match self.trees.as_slice() {
            [t] => Some(t),
            _ => None,
        }
    }

    pub fn derivation(&self) -> Vec<Step> {
        forest_derivation(&self.trees)
    }

    /// String tree, joining an unreduced forest under completion nodes.
    pub fn to_tree(&self, vocabs: &Vocabularies) -> Tree {
        let ts: Vec<Tree> = self.trees.iter().map(|t| t.to_tree(vocabs)).collect();
        complete_forest(&ts).expect("parse has at least one tree")
    }

    /// Spans of every node.
    pub fn spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        for t in &self.trees {
            t.visit(&mut |n| out.push(n.span()));
        }
        out
    }

    /// N-best line: log-probability, then the decorated tree(s).
    pub fn to_debug_line(&self, vocabs: &Vocabularies) -> String {
        let trees: Vec<String> = self.trees.iter().map(|t| t.to_debug_string(vocabs)).collect();
        format!("{:.6}\t{}", self.log_prob, trees.join(" "))
    }
}

/// Result of one search: every surviving complete parse (sorted) and the
/// conditional log-probability of each word and of `</s>` given the stack
/// before it.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub parses: Vec<Parse>,
    pub word_log_probs: Vec<f64>,
}

impl SearchOutcome {
    /// `ln Σ_T P(W, T)` over the surviving parses.
    pub fn total_log_prob(&self) -> f64 {
        log_sum_exp(self.parses.iter().map(|p| p.log_prob))
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn compare(a: &WordParsePrefix, b: &WordParsePrefix) -> Ordering {
    b.log_prob()
        .total_cmp(&a.log_prob())
        .then_with(|| a.derivation_codes().cmp(&b.derivation_codes()))
}

/// A stack under construction: tracks the running best and, for finite
/// widths, the width-th best score so hopeless candidates are skipped.
struct Beam {
    width: usize,
    threshold: f64,
    best: f64,
    kth: BinaryHeap<Reverse<OrdF64>>,
    items: Vec<WordParsePrefix>,
}

#[derive(Clone, Copy)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Beam {
    fn new(config: &BeamConfig) -> Self {
        Beam {
            width: config.width,
            threshold: config.threshold,
            best: f64::NEG_INFINITY,
            kth: BinaryHeap::new(),
            items: Vec::new(),
        }
    }

    fn bounded(&self) -> bool {
        self.width != usize::MAX
    }

    fn admits(&self, lp: f64) -> bool {
        if lp < self.best - self.threshold {
            return false;
        }
        !(self.bounded() && self.kth.len() >= self.width && lp < self.kth.peek().map_or(f64::NEG_INFINITY, |r| r.0 .0))
    }

    fn push(&mut self, p: WordParsePrefix) {
        let lp = p.log_prob();
        self.best = self.best.max(lp);
        if self.bounded() {
            self.kth.push(Reverse(OrdF64(lp)));
            if self.kth.len() > self.width {
                self.kth.pop();
            }
        }
        self.items.push(p);
    }

    fn finish(mut self) -> Vec<WordParsePrefix> {
        let floor = self.best - self.threshold;
        self.items.retain(|p| p.log_prob() >= floor);
        self.items.sort_by(compare);
        self.items.truncate(self.width);
        self.items
    }
}

/// Per-sentence memo of ranked distributions.
#[derive(Default)]
struct Cache {
    tags: FxHashMap<(u32, ExposedHead, ExposedHead), Rc<RankedDistribution>>,
    actions: FxHashMap<(ExposedHead, ExposedHead), Rc<RankedDistribution>>,
}

impl Cache {
    fn tags(&mut self, model: &SlmModel, w: u32, h0: ExposedHead, hm1: ExposedHead) -> Rc<RankedDistribution> {
        self.tags
            .entry((w, h0, hm1))
            .or_insert_with(|| Rc::new(model.ranked_tags(w, h0, hm1)))
            .clone()
    }

    fn actions(&mut self, model: &SlmModel, h0: ExposedHead, hm1: ExposedHead) -> Rc<RankedDistribution> {
        self.actions
            .entry((h0, hm1))
            .or_insert_with(|| Rc::new(model.ranked_actions(h0, hm1)))
            .clone()
    }
}

/// `ln Σ_p ρ(p) P(w | p)` with `ρ` the normalized prefix probabilities.
fn mixed_word_log_prob(stack: &[WordParsePrefix], model: &SlmModel, word: u32) -> f64 {
    let lps = stack.iter().map(|p| p.log_prob());
    let norm = log_sum_exp(lps);
    let joint = stack.iter().map(|p| {
        let (h0, hm1) = p.exposed_heads();
        p.log_prob() + model.predict_word(h0, hm1, word).ln()
    });
    let v: Vec<f64> = joint.collect();
    log_sum_exp(v.iter().copied()) - norm
}

/// Synchronous multi-stack search over one sentence.
///
/// At each position every prefix in the stack predicts the word and a tag;
/// the shifted prefixes then take parser moves level by level (one level per
/// move) until they close with null. Closed prefixes form the next stack.
/// Each level and each stack is pruned to `width` entries and to `threshold`
/// nats of its best entry.
pub fn search(
    words: &[u32],
    model: &SlmModel,
    config: &BeamConfig,
    gate: &dyn Gate,
) -> Result<SearchOutcome, ParseError> {
    if words.is_empty() {
        return Err(ParseError::EmptySentence);
    }
    config.validate()?;
    let mut cache = Cache::default();
    let mut stack = vec![WordParsePrefix::initial()];
    let mut word_log_probs = Vec::with_capacity(words.len() + 1);

    for (k, &w) in words.iter().enumerate() {
        word_log_probs.push(mixed_word_log_prob(&stack, model, w));

        let mut shifted = Beam::new(config);
        for p in &stack {
            let (h0, hm1) = p.exposed_heads();
            let lw = model.predict_word(h0, hm1, w).ln();
            let base = p.log_prob() + lw;
            let tags = cache.tags(model, w, h0, hm1);
            for (t, lt) in tags.iter() {
                if !shifted.admits(base + lt) {
                    break;
                }
                let sem = model.sem().pos(t);
                if let Some(realized) = gate.shift(k, sem, p.realized()) {
                    shifted.push(p.push_leaf(w, t, sem, lw + lt, realized));
                }
            }
        }

        let mut level = shifted.finish();
        let mut closed = Beam::new(config);
        while !level.is_empty() {
            let mut next = Beam::new(config);
            for p in &level {
                if config.right_branching_only {
                    if gate.null(k, p.realized()) {
                        closed.push(p.close(0.0));
                    }
                    continue;
                }
                let (h0, hm1) = p.exposed_heads();
                let actions = cache.actions(model, h0, hm1);
                let l_null = actions.log_prob(0);
                if gate.null(k, p.realized()) && closed.admits(p.log_prob() + l_null) {
                    closed.push(p.close(l_null));
                }
                if p.num_trees() < 2 || config.max_ops.is_some_and(|m| p.ops_this_position() >= m) {
                    continue;
                }
                let (top, second) = (p.top().expect("two trees"), p.second().expect("two trees"));
                let span = Span::new(second.tree.span().l, top.tree.span().r);
                for (a, la) in actions.iter() {
                    if a == 0 {
                        continue;
                    }
                    if !next.admits(p.log_prob() + la) {
                        break;
                    }
                    let action = ParserAction::from_index(a);
                    let sem = model.sem().nt(action.label.expect("adjoin label"));
                    if let Some(realized) = gate.adjoin(span, sem, second.info(), top.info(), p.realized()) {
                        next.push(p.adjoin(action, sem, la, realized));
                    }
                }
            }
            level = next.finish();
        }
        stack = closed.finish();
        if stack.is_empty() {
            return Err(ParseError::NoParse);
        }
    }

    word_log_probs.push(mixed_word_log_prob(&stack, model, EOS_ID));
    let mut finals: Vec<WordParsePrefix> = stack
        .iter()
        .map(|p| {
            let (h0, hm1) = p.exposed_heads();
            p.with_extra(model.predict_word(h0, hm1, EOS_ID).ln())
        })
        .collect();
    finals.sort_by(compare);
    let parses = finals
        .into_iter()
        .map(|p| Parse {
            trees: p.trees(),
            log_prob: p.log_prob(),
        })
        .collect();
    Ok(SearchOutcome { parses, word_log_probs })
}

/// The `nbest` most probable parses allowed by `gate`, best first.
pub fn beam_parse(
    words: &[u32],
    model: &SlmModel,
    config: &BeamConfig,
    gate: &dyn Gate,
) -> Result<Vec<Parse>, ParseError> {
    let mut out = search(words, model, config, gate)?.parses;
    out.truncate(config.nbest);
    Ok(out)
}

/// Per-word conditional probabilities (words then `</s>`) and their total
/// negative log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct StringProbability {
    pub word_probs: Vec<f64>,
    pub neg_log_likelihood: f64,
}

impl StringProbability {
    fn from_log_probs(lps: &[f64]) -> Self {
        StringProbability {
            word_probs: lps.iter().map(|l| l.exp()).collect(),
            neg_log_likelihood: -lps.iter().sum::<f64>(),
        }
    }
}

pub fn string_probability(
    words: &[u32],
    model: &SlmModel,
    config: &BeamConfig,
) -> Result<StringProbability, ParseError> {
    string_probability_with(words, model, config, &AcceptAll)
}

/// As [`string_probability`], with the stacks restricted by `gate`.
pub fn string_probability_with(
    words: &[u32],
    model: &SlmModel,
    config: &BeamConfig,
    gate: &dyn Gate,
) -> Result<StringProbability, ParseError> {
    let out = search(words, model, config, gate)?;
    Ok(StringProbability::from_log_probs(&out.word_log_probs))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub neg_log_likelihood: f64,
    /// Predicted tokens, including one `</s>` per sentence.
    pub tokens: usize,
    /// Indices of sentences scored unconstrained because the gated search
    /// found no parse.
    pub backoffs: Vec<usize>,
}

/// Corpus perplexity, `exp(total NLL / tokens)`. Sentences whose gated
/// search fails are scored unconstrained and listed in `backoffs`.
pub fn perplexity<G, F>(
    sentences: &[Vec<u32>],
    model: &SlmModel,
    config: &BeamConfig,
    gate_for: F,
) -> Result<PerplexityReport, ParseError>
where
    G: Gate,
    F: Fn(usize) -> G + Sync,
{
    let results: Vec<Result<(StringProbability, bool), ParseError>> = sentences
        .par_iter()
        .enumerate()
        .map(
            |(i, words)| match string_probability_with(words, model, config, &gate_for(i)) {
                Ok(sp) => Ok((sp, false)),
                Err(ParseError::NoParse) => string_probability(words, model, config).map(|sp| (sp, true)),
                Err(e) => Err(e),
            },
        )
        .collect();
    let mut nll = 0.0;
    let mut tokens = 0;
    let mut backoffs = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (sp, backed_off) = r?;
        nll += sp.neg_log_likelihood;
        tokens += sp.word_probs.len();
        if backed_off {
            backoffs.push(i);
        }
    }
    Ok(PerplexityReport {
        perplexity: (nll / tokens.max(1) as f64).exp(),
        neg_log_likelihood: nll,
        tokens,
        backoffs,
    })
}

/// Replays a derivation from the initial prefix.
pub fn replay(steps: &[Step], model: &SlmModel) -> Result<WordParsePrefix, ParseError> {
    let mut p = WordParsePrefix::initial();
    for s in steps {
        p = match s {
            Step::Shift { word, tag } => p.shift_word(model, *word, *tag),
            Step::Action(a) => p.apply_action(model, *a)?,
        };
    }
    Ok(p)
}

/// `ln P(W, T)` of a forest, including `</s>`, without any gate.
pub fn score_forest(trees: &[Arc<ParseTree>], model: &SlmModel) -> Result<f64, ParseError> {
    let p = replay(&forest_derivation(trees), model)?;
    let (h0, hm1) = p.exposed_heads();
    Ok(p.log_prob() + model.predict_word(h0, hm1, EOS_ID).ln())
}

/// Adds every word, tag and parser event of a forest's derivation, plus the
/// final `</s>` prediction, with the given weight.
pub fn accumulate_counts(counts: &mut SlmCounts, trees: &[Arc<ParseTree>], weight: f64) {
    let mut p = WordParsePrefix::initial();
    for s in forest_derivation(trees) {
        let (h0, hm1) = p.exposed_heads();
        match s {
            Step::Shift { word, tag } => {
                counts.add_word(h0, hm1, word, weight);
                counts.add_tag(word, h0, hm1, tag, weight);
                p = p.push_leaf(word, tag, crate::model::Sem::Void, 0.0, 0);
            }
            Step::Action(a) => {
                counts.add_action(h0, hm1, a, weight);
                p = if a.is_null() {
                    p.close(0.0)
                } else {
                    p.adjoin(a, crate::model::Sem::Void, 0.0, 0)
                };
            }
        }
    }
    let (h0, hm1) = p.exposed_heads();
    counts.add_word(h0, hm1, EOS_ID, weight);
}
