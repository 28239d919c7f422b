//! The three component distributions of the structured language model
//! (word predictor, tagger, parser) and their deleted-interpolation
//! estimation from event counts.
//!
//! Every component predicts an event from a context of up to three back-off
//! orders. Estimates at all orders are mixed linearly together with a uniform
//! floor; the mixing weights are fitted by EM on held-out ("check") counts,
//! one weight vector per bucket. A bucket is keyed by the highest order whose
//! context was seen in the main counts and by the magnitude of that context's
//! count.
//!
//! Back-off chains:
//!
//! | component | order 0 | order 1 | order 2 |
//! |-----------|---------|---------|---------|
//! | word predictor | `(h0, h-1)` | `(h0)` | `()` |
//! | tagger | `(w, h0, h-1)` | `(w, h0)` | `(w)` |
//! | parser | `(h0, h-1)` | `(h0)` | `()` |

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabularies, BOS_ID, SEM_SEPARATOR};

/// Current model file format version.
pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "slm-ie-model";

const NONE: u32 = u32::MAX;
const NUM_ORDERS: usize = 3;
const WEIGHT_EM_MAX_ITERS: usize = 500;
const WEIGHT_EM_TOLERANCE: f64 = 1e-10;
const MIN_FLOOR_WEIGHT: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot estimate {0}: no main counts")]
    EmptyCounts(Component),
    #[error("model file version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The label half of an exposed head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadLabel {
    /// The sentence-start marker, which carries no tag.
    Boundary,
    Pos(u32),
    Nt(u32),
}

impl HeadLabel {
    fn code(self) -> u32 {
        match self {
            HeadLabel::Boundary => 0,
            HeadLabel::Pos(t) => 1 + 2 * t,
            HeadLabel::Nt(t) => 2 + 2 * t,
        }
    }
}

/// `(headword, label)` of one of the two rightmost trees in a prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ExposedHead {
    pub word: u32,
    pub label: HeadLabel,
}

impl ExposedHead {
    /// Head of the implicit `<s>` tree; also pads `h-1` when only one tree
    /// is exposed.
    pub const BOUNDARY: ExposedHead = ExposedHead {
        word: BOS_ID,
        label: HeadLabel::Boundary,
    };

    pub fn new(word: u32, label: HeadLabel) -> Self {
        ExposedHead { word, label }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Null,
    AdjoinLeft,
    AdjoinRight,
}

/// A parser move. Adjoins merge the two rightmost trees under `label`,
/// taking the headword from the left (`AdjoinLeft`) or right child.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParserAction {
    pub kind: ActionKind,
    pub label: Option<u32>,
}

impl ParserAction {
    pub const NULL: ParserAction = ParserAction {
        kind: ActionKind::Null,
        label: None,
    };

    pub fn adjoin_left(label: u32) -> Self {
        ParserAction {
            kind: ActionKind::AdjoinLeft,
            label: Some(label),
        }
    }

    pub fn adjoin_right(label: u32) -> Self {
        ParserAction {
            kind: ActionKind::AdjoinRight,
            label: Some(label),
        }
    }

    pub fn is_null(&self) -> bool {
        self.kind == ActionKind::Null
    }

    /// Dense index: null is 0, adjoin-left under `l` is `1 + 2l`, adjoin-right
    /// is `2 + 2l`.
    pub fn index(&self) -> u32 {
        match (self.kind, self.label) {
            (ActionKind::Null, _) => 0,
            (ActionKind::AdjoinLeft, Some(l)) => 1 + 2 * l,
            (ActionKind::AdjoinRight, Some(l)) => 2 + 2 * l,
            _ => unreachable!("adjoin without label"),
        }
    }

    pub fn from_index(i: u32) -> Self {
        match i {
            0 => ParserAction::NULL,
            i if i % 2 == 1 => ParserAction::adjoin_left((i - 1) / 2),
            i => ParserAction::adjoin_right((i - 2) / 2),
        }
    }

    pub fn alphabet_size(num_nt: usize) -> usize {
        2 * num_nt + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    WordPredictor,
    Tagger,
    Parser,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::WordPredictor, Component::Tagger, Component::Parser];

    /// Number of context fields used at each back-off order.
    fn context_lengths(self) -> [usize; NUM_ORDERS] {
        match self {
            Component::WordPredictor | Component::Parser => [4, 2, 0],
            Component::Tagger => [5, 3, 1],
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::WordPredictor => "WORD-PREDICTOR",
            Component::Tagger => "TAGGER",
            Component::Parser => "PARSER",
        })
    }
}

/// Full (order-0) conditioning context, padded with `u32::MAX`.
pub type Context = [u32; 5];

pub fn head_context(h0: ExposedHead, hm1: ExposedHead) -> Context {
    [h0.word, h0.label.code(), hm1.word, hm1.label.code(), NONE]
}

pub fn tagger_context(word: u32, h0: ExposedHead, hm1: ExposedHead) -> Context {
    [word, h0.word, h0.label.code(), hm1.word, hm1.label.code()]
}

fn truncate(ctx: &Context, len: usize) -> Context {
    let mut out = [NONE; 5];
    out[..len].copy_from_slice(&ctx[..len]);
    out
}

/// Event counts for one component, keyed by full context.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComponentCounts {
    events: FxHashMap<Context, FxHashMap<u32, f64>>,
}

impl ComponentCounts {
    pub fn add(&mut self, ctx: Context, event: u32, weight: f64) {
        *self.events.entry(ctx).or_default().entry(event).or_insert(0.0) += weight;
    }

    pub fn merge(&mut self, other: &ComponentCounts) {
        for (ctx, evs) in sorted_entries(&other.events) {
            let table = self.events.entry(*ctx).or_default();
            for (e, c) in sorted_entries(evs) {
                *table.entry(*e).or_insert(0.0) += c;
            }
        }
    }

    pub fn total(&self) -> f64 {
        sorted_entries(&self.events)
            .into_iter()
            .flat_map(|(_, evs)| sorted_entries(evs).into_iter().map(|(_, c)| *c))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, ctx: &Context, event: u32) -> f64 {
        self.events.get(ctx).and_then(|m| m.get(&event)).copied().unwrap_or(0.0)
    }

    /// All `(context, event, count)` triples in a fixed order.
    pub fn triples(&self) -> Vec<(Context, u32, f64)> {
        let mut out = Vec::new();
        for (ctx, evs) in sorted_entries(&self.events) {
            for (e, c) in sorted_entries(evs) {
                out.push((*ctx, *e, *c));
            }
        }
        out
    }
}

fn sorted_entries<K: Ord + Copy + std::hash::Hash + Eq, V>(m: &FxHashMap<K, V>) -> Vec<(&K, &V)> {
    let mut v: Vec<(&K, &V)> = m.iter().collect();
    v.sort_unstable_by(|a, b| a.0.cmp(b.0));
    v
}

/// Counts for all three components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlmCounts {
    pub word: ComponentCounts,
    pub tagger: ComponentCounts,
    pub parser: ComponentCounts,
}

impl SlmCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn component(&self, c: Component) -> &ComponentCounts {
        match c {
            Component::WordPredictor => &self.word,
            Component::Tagger => &self.tagger,
            Component::Parser => &self.parser,
        }
    }

    pub fn add_word(&mut self, h0: ExposedHead, hm1: ExposedHead, word: u32, weight: f64) {
        self.word.add(head_context(h0, hm1), word, weight);
    }

    pub fn add_tag(&mut self, word: u32, h0: ExposedHead, hm1: ExposedHead, tag: u32, weight: f64) {
        self.tagger.add(tagger_context(word, h0, hm1), tag, weight);
    }

    pub fn add_action(&mut self, h0: ExposedHead, hm1: ExposedHead, action: ParserAction, weight: f64) {
        self.parser.add(head_context(h0, hm1), action.index(), weight);
    }

    pub fn merge(&mut self, other: &SlmCounts) {
        self.word.merge(&other.word);
        self.tagger.merge(&other.tagger);
        self.parser.merge(&other.parser);
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty() && self.tagger.is_empty() && self.parser.is_empty()
    }
}

/// Deterministic main/check assignment of a training sentence by index:
/// roughly one sentence in ten is held out.
pub fn is_check_sentence(index: usize) -> bool {
    // splitmix64 finalizer
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z % 10 == 3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketKey {
    /// Highest back-off order (0 = full context) seen in main counts.
    pub order: u8,
    pub count_bucket: u8,
}

/// Bucket of a context count: `{0}, (0,3), [3,8), [8,32), [32,inf)`.
pub fn count_bucket(count: f64) -> u8 {
    if count <= 0.0 {
        0
    } else if count < 3.0 {
        1
    } else if count < 8.0 {
        2
    } else if count < 32.0 {
        3
    } else {
        4
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextTable {
    total: f64,
    events: FxHashMap<u32, f64>,
}

/// One interpolated conditional distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentDistribution {
    component: Component,
    num_events: u32,
    orders: [FxHashMap<Context, ContextTable>; NUM_ORDERS],
    weights: BTreeMap<BucketKey, Vec<f64>>,
}

/// Events with explicit (above-floor) probability, sorted by decreasing
/// probability, plus the floor shared by every other event.
#[derive(Clone, Debug)]
pub struct RankedDistribution {
    pub ranked: Vec<(u32, f64)>,
    pub floor_ln: f64,
    pub num_events: u32,
    explicit: Vec<u32>,
}

impl RankedDistribution {
    fn new(ranked: Vec<(u32, f64)>, floor_ln: f64, num_events: u32) -> Self {
        let mut explicit: Vec<u32> = ranked.iter().map(|(e, _)| *e).collect();
        explicit.sort_unstable();
        RankedDistribution {
            ranked,
            floor_ln,
            num_events,
            explicit,
        }
    }

    /// Iterates `(event, ln p)` in non-increasing probability order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        let floor = self.floor_ln;
        self.ranked.iter().copied().chain(
            (0..self.num_events)
                .filter(move |e| self.explicit.binary_search(e).is_err())
                .map(move |e| (e, floor)),
        )
    }

    /// `ln p` of one event.
    pub fn log_prob(&self, event: u32) -> f64 {
        match self.explicit.binary_search(&event) {
            Ok(_) => self
                .ranked
                .iter()
                .find(|(e, _)| *e == event)
                .map(|(_, lp)| *lp)
                .unwrap_or(self.floor_ln),
            Err(_) => self.floor_ln,
        }
    }
}

impl ComponentDistribution {
    fn empty(component: Component, num_events: usize) -> Self {
        ComponentDistribution {
            component,
            num_events: num_events as u32,
            orders: Default::default(),
            weights: BTreeMap::new(),
        }
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn num_events(&self) -> usize {
        self.num_events as usize
    }

    /// Weight vectors per bucket: one entry per available order (highest
    /// first) followed by the uniform floor's weight.
    pub fn weights(&self) -> &BTreeMap<BucketKey, Vec<f64>> {
        &self.weights
    }

    fn estimate(component: Component, num_events: usize, main: &ComponentCounts, check: &ComponentCounts) -> Self {
        let lens = component.context_lengths();
        let mut dist = Self::empty(component, num_events);
        for (ctx, evs) in sorted_entries(&main.events) {
            for (j, len) in lens.iter().enumerate() {
                let table = dist.orders[j].entry(truncate(ctx, *len)).or_default();
                for (e, c) in sorted_entries(evs) {
                    table.total += c;
                    *table.events.entry(*e).or_insert(0.0) += c;
                }
            }
        }

        let mut data: BTreeMap<BucketKey, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
        for (ctx, event, count) in check.triples() {
            let Some((key, tables)) = dist.lookup(&ctx) else {
                continue;
            };
            let mut probs: Vec<f64> = tables
                .iter()
                .map(|t| t.events.get(&event).copied().unwrap_or(0.0) / t.total)
                .collect();
            probs.push(1.0 / num_events as f64);
            data.entry(key).or_default().push((count, probs));
        }
        for (key, points) in data {
            let w = fit_weights(&points);
            dist.weights.insert(key, w);
        }
        dist
    }

    /// Tables of the available orders (highest first) and the bucket key.
    fn lookup(&self, ctx: &Context) -> Option<(BucketKey, Vec<&ContextTable>)> {
        let lens = self.component.context_lengths();
        let mut tables = Vec::with_capacity(NUM_ORDERS);
        let mut first = None;
        for (j, len) in lens.iter().enumerate() {
            if let Some(t) = self.orders[j].get(&truncate(ctx, *len)) {
                if first.is_none() {
                    first = Some(j);
                }
                tables.push(t);
            } else if first.is_some() {
                // lower orders aggregate higher ones, so a gap cannot occur
                // with counts built by `estimate`; treat as unavailable
                tables.push(&EMPTY_TABLE);
            }
        }
        let j = first?;
        let key = BucketKey {
            order: j as u8,
            count_bucket: count_bucket(tables[0].total),
        };
        Some((key, tables))
    }

    fn weights_for(&self, key: &BucketKey, n: usize) -> std::borrow::Cow<'_, [f64]> {
        match self.weights.get(key) {
            Some(w) => std::borrow::Cow::Borrowed(w.as_slice()),
            None => std::borrow::Cow::Owned(vec![1.0 / n as f64; n]),
        }
    }

    pub fn prob(&self, ctx: &Context, event: u32) -> f64 {
        let uniform = 1.0 / self.num_events as f64;
        let Some((key, tables)) = self.lookup(ctx) else {
            return uniform;
        };
        let w = self.weights_for(&key, tables.len() + 1);
        let mut p = w[tables.len()] * uniform;
        for (t, wj) in tables.iter().zip(w.iter()) {
            if t.total > 0.0 {
                if let Some(c) = t.events.get(&event) {
                    p += wj * c / t.total;
                }
            }
        }
        p
    }

    /// Dense distribution over all events.
    pub fn distribution(&self, ctx: &Context) -> Vec<f64> {
        let ranked = self.ranked(ctx);
        let mut out = vec![ranked.floor_ln.exp(); self.num_events as usize];
        for (e, lp) in ranked.ranked {
            out[e as usize] = lp.exp();
        }
        out
    }

    pub fn ranked(&self, ctx: &Context) -> RankedDistribution {
        let uniform = 1.0 / self.num_events as f64;
        let Some((key, tables)) = self.lookup(ctx) else {
            return RankedDistribution::new(Vec::new(), uniform.ln(), self.num_events);
        };
        let w = self.weights_for(&key, tables.len() + 1);
        let floor = w[tables.len()] * uniform;
        let mut acc: FxHashMap<u32, f64> = FxHashMap::default();
        for (t, wj) in tables.iter().zip(w.iter()) {
            if t.total > 0.0 {
                for (e, c) in &t.events {
                    *acc.entry(*e).or_insert(0.0) += wj * c / t.total;
                }
            }
        }
        // recompute each explicit probability in the same order as `prob`
        let mut ranked: Vec<(u32, f64)> = acc.keys().map(|&e| (e, self.prob(ctx, e).ln())).collect();
        ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        RankedDistribution::new(ranked, floor.ln(), self.num_events)
    }
}

static EMPTY_TABLE: std::sync::LazyLock<ContextTable> = std::sync::LazyLock::new(ContextTable::default);

/// EM for mixture weights given per-point component probabilities. Falls
/// back to uniform weights when the points carry no mass.
fn fit_weights(points: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let k = points.first().map(|p| p.1.len()).unwrap_or(1);
    let mut lambda = vec![1.0 / k as f64; k];
    let total: f64 = points.iter().map(|p| p.0).sum();
    if total <= 0.0 {
        return lambda;
    }
    let mut acc = vec![0.0; k];
    for _ in 0..WEIGHT_EM_MAX_ITERS {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (count, probs) in points {
            let mix: f64 = lambda.iter().zip(probs).map(|(l, p)| l * p).sum();
            if mix <= 0.0 {
                continue;
            }
            for i in 0..k {
                acc[i] += count * lambda[i] * probs[i] / mix;
            }
        }
        let mut delta: f64 = 0.0;
        for i in 0..k {
            let next = acc[i] / total;
            delta = delta.max((next - lambda[i]).abs());
            lambda[i] = next;
        }
        if delta < WEIGHT_EM_TOLERANCE {
            break;
        }
    }
    // keep the uniform floor strictly positive
    let last = k - 1;
    lambda[last] = lambda[last].max(MIN_FLOOR_WEIGHT);
    let s: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= s);
    lambda
}

/// Semantic projection of a tag label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sem {
    Void,
    Frame(u32),
    Slot(u32),
}

/// Splits `SYN*SEM` at the first separator. Labels without a separator have
/// no semantic part.
pub fn split_label(label: &str) -> (&str, Option<&str>) {
    match label.split_once(SEM_SEPARATOR) {
        Some((syn, sem)) => (syn, Some(sem)),
        None => (label, None),
    }
}

/// Semantic projections of every POS and NT label of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemTable {
    pos: Vec<Sem>,
    nt: Vec<Sem>,
}

impl SemTable {
    pub fn new(vocabs: &Vocabularies) -> Self {
        let sem_of = |label: &str| match split_label(label).1 {
            None => Sem::Void,
            Some(s) => {
                if let Some(f) = vocabs.frame.id(s) {
                    Sem::Frame(f)
                } else if let Some(sl) = vocabs.slot.id(s) {
                    Sem::Slot(sl)
                } else {
                    Sem::Void
                }
            }
        };
        SemTable {
            pos: vocabs.pos.entries().iter().map(|l| sem_of(l)).collect(),
            nt: vocabs.nt.entries().iter().map(|l| sem_of(l)).collect(),
        }
    }

    pub fn pos(&self, tag: u32) -> Sem {
        self.pos.get(tag as usize).copied().unwrap_or(Sem::Void)
    }

    pub fn nt(&self, label: u32) -> Sem {
        self.nt.get(label as usize).copied().unwrap_or(Sem::Void)
    }

    pub fn head(&self, label: HeadLabel) -> Sem {
        match label {
            HeadLabel::Boundary => Sem::Void,
            HeadLabel::Pos(t) => self.pos(t),
            HeadLabel::Nt(l) => self.nt(l),
        }
    }
}

/// The structured language model: three component distributions over
/// shared vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct SlmModel {
    vocabs: Vocabularies,
    word: ComponentDistribution,
    tagger: ComponentDistribution,
    parser: ComponentDistribution,
    sem: SemTable,
}

impl SlmModel {
    /// A model with no counts: every component is uniform.
    pub fn uniform(vocabs: Vocabularies) -> Self {
        let (nw, np, na) = Self::alphabet_sizes(&vocabs);
        SlmModel {
            word: ComponentDistribution::empty(Component::WordPredictor, nw),
            tagger: ComponentDistribution::empty(Component::Tagger, np),
            parser: ComponentDistribution::empty(Component::Parser, na),
            sem: SemTable::new(&vocabs),
            vocabs,
        }
    }

    fn alphabet_sizes(vocabs: &Vocabularies) -> (usize, usize, usize) {
        (
            vocabs.word.len(),
            vocabs.pos.len(),
            ParserAction::alphabet_size(vocabs.nt.len()),
        )
    }

    /// Relative frequencies from `main`, interpolation weights fitted on
    /// `check`.
    pub fn estimate(vocabs: Vocabularies, main: &SlmCounts, check: &SlmCounts) -> Result<Self, ModelError> {
        for c in Component::ALL {
            if main.component(c).is_empty() {
                return Err(ModelError::EmptyCounts(c));
            }
        }
        let (nw, np, na) = Self::alphabet_sizes(&vocabs);
        Ok(SlmModel {
            word: ComponentDistribution::estimate(Component::WordPredictor, nw, &main.word, &check.word),
            tagger: ComponentDistribution::estimate(Component::Tagger, np, &main.tagger, &check.tagger),
            parser: ComponentDistribution::estimate(Component::Parser, na, &main.parser, &check.parser),
            sem: SemTable::new(&vocabs),
            vocabs,
        })
    }

    pub fn vocabs(&self) -> &Vocabularies {
        &self.vocabs
    }

    pub fn sem(&self) -> &SemTable {
        &self.sem
    }

    pub fn component(&self, c: Component) -> &ComponentDistribution {
        match c {
            Component::WordPredictor => &self.word,
            Component::Tagger => &self.tagger,
            Component::Parser => &self.parser,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.parser.num_events()
    }

    pub fn predict_word(&self, h0: ExposedHead, hm1: ExposedHead, word: u32) -> f64 {
        self.word.prob(&head_context(h0, hm1), word)
    }

    pub fn predict_tag(&self, word: u32, h0: ExposedHead, hm1: ExposedHead, tag: u32) -> f64 {
        self.tagger.prob(&tagger_context(word, h0, hm1), tag)
    }

    pub fn predict_action(&self, h0: ExposedHead, hm1: ExposedHead, action: ParserAction) -> f64 {
        self.parser.prob(&head_context(h0, hm1), action.index())
    }

    pub fn word_distribution(&self, h0: ExposedHead, hm1: ExposedHead) -> Vec<f64> {
        self.word.distribution(&head_context(h0, hm1))
    }

    pub fn tag_distribution(&self, word: u32, h0: ExposedHead, hm1: ExposedHead) -> Vec<f64> {
        self.tagger.distribution(&tagger_context(word, h0, hm1))
    }

    pub fn action_distribution(&self, h0: ExposedHead, hm1: ExposedHead) -> Vec<f64> {
        self.parser.distribution(&head_context(h0, hm1))
    }

    pub fn ranked_tags(&self, word: u32, h0: ExposedHead, hm1: ExposedHead) -> RankedDistribution {
        self.tagger.ranked(&tagger_context(word, h0, hm1))
    }

    pub fn ranked_actions(&self, h0: ExposedHead, hm1: ExposedHead) -> RankedDistribution {
        self.parser.ranked(&head_context(h0, hm1))
    }
}

// ---------------------------------------------------------------------------
// Model file: JSON container, contexts stored at their truncated length.

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocabularies: Vocabularies,
    components: Vec<ComponentFile>,
}

#[derive(Serialize, Deserialize)]
struct ComponentFile {
    component: Component,
    num_events: u32,
    orders: Vec<Vec<ContextFile>>,
    weights: Vec<WeightsFile>,
}

#[derive(Serialize, Deserialize)]
struct ContextFile {
    context: Vec<u32>,
    total: f64,
    events: Vec<(u32, f64)>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    order: u8,
    bucket: u8,
    weights: Vec<f64>,
}

impl ComponentDistribution {
    fn to_file(&self) -> ComponentFile {
        let lens = self.component.context_lengths();
        let orders = self
            .orders
            .iter()
            .zip(lens)
            .map(|(tables, len)| {
                sorted_entries(tables)
                    .into_iter()
                    .map(|(ctx, t)| ContextFile {
                        context: ctx[..len].to_vec(),
                        total: t.total,
                        events: sorted_entries(&t.events).into_iter().map(|(e, c)| (*e, *c)).collect(),
                    })
                    .collect()
            })
            .collect();
        let weights = self
            .weights
            .iter()
            .map(|(k, w)| WeightsFile {
                order: k.order,
                bucket: k.count_bucket,
                weights: w.clone(),
            })
            .collect();
        ComponentFile {
            component: self.component,
            num_events: self.num_events,
            orders,
            weights,
        }
    }

    fn from_file(f: ComponentFile, expected: Component) -> Result<Self, ModelError> {
        if f.component != expected {
            return Err(ModelError::Format(format!(
                "expected {expected}, found {}",
                f.component
            )));
        }
        if f.orders.len() != NUM_ORDERS {
            return Err(ModelError::Format(format!("{expected}: wrong number of orders")));
        }
        let lens = expected.context_lengths();
        let mut dist = ComponentDistribution::empty(expected, f.num_events as usize);
        for (j, tables) in f.orders.into_iter().enumerate() {
            for t in tables {
                if t.context.len() != lens[j] {
                    return Err(ModelError::Format(format!(
                        "{expected}: bad context length at order {j}"
                    )));
                }
                let mut ctx = [NONE; 5];
                ctx[..lens[j]].copy_from_slice(&t.context);
                dist.orders[j].insert(
                    ctx,
                    ContextTable {
                        total: t.total,
                        events: t.events.into_iter().collect(),
                    },
                );
            }
        }
        for w in f.weights {
            dist.weights.insert(
                BucketKey {
                    order: w.order,
                    count_bucket: w.bucket,
                },
                w.weights,
            );
        }
        Ok(dist)
    }
}

impl SlmModel {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            vocabularies: self.vocabs.clone(),
            components: vec![self.word.to_file(), self.tagger.to_file(), self.parser.to_file()],
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        if text.trim().is_empty() {
            return Err(ModelError::Format("empty model file".into()));
        }
        let header: Header = serde_json::from_str(text)
            .or_else(|_| {
                // tolerate trailing garbage only to report the version first
                let mut de = serde_json::Deserializer::from_str(text);
                Header::deserialize(&mut de)
            })
            .map_err(|e| ModelError::Format(e.to_string()))?;
        if header.format != FORMAT_NAME {
            return Err(ModelError::Format(format!("not a model file: '{}'", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(ModelError::Version {
                found: header.version,
                expected: FORMAT_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        let mut comps = file.components.into_iter();
        let mut next = |c: Component| -> Result<ComponentDistribution, ModelError> {
            let f = comps
                .next()
                .ok_or_else(|| ModelError::Format(format!("missing component {c}")))?;
            ComponentDistribution::from_file(f, c)
        };
        let word = next(Component::WordPredictor)?;
        let tagger = next(Component::Tagger)?;
        let parser = next(Component::Parser)?;
        let vocabs = file.vocabularies;
        let (nw, np, na) = Self::alphabet_sizes(&vocabs);
        if word.num_events() != nw || tagger.num_events() != np || parser.num_events() != na {
            return Err(ModelError::Format("alphabet sizes do not match vocabularies".into()));
        }
        Ok(SlmModel {
            word,
            tagger,
            parser,
            sem: SemTable::new(&vocabs),
            vocabs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let io = |e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_json().as_bytes()).map_err(io)?;
        f.write_all(b"\n").map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}

pub fn save_model(model: &SlmModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SlmModel, ModelError> {
    SlmModel::load(path)
}
