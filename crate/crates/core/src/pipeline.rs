//! Four-stage training: syntactic initialization, span-matched EM, semantic
//! enrichment of the resulting parses, and label-matched EM on a model
//! re-initialized from the enriched trees.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{satisfies, AcceptAll, ConstraintError, ConstraintSet, MatchMode};
use crate::corpus::{AnnotatedSentence, CorpusError, Tree, Vocabularies, SEM_SEPARATOR};
use crate::eval::{is_two_level, restore_words, sem_projection, SemanticParse};
use crate::model::{is_check_sentence, split_label, ModelError, SlmCounts, SlmModel};
use crate::parser::{accumulate_counts, search, BeamConfig, Parse, ParseError};
use crate::treebank_init::{initialize_model, initialize_model_at, prepare_tree, HeadRules, InitError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("sentence {index}: {msg}")]
    Enrichment { index: usize, msg: String },
    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl PipelineError {
    fn in_stage(self, stage: u8) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

/// What backed-off sentences contribute to EM counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackoffPolicy {
    /// Their unconstrained N-best list.
    #[default]
    Unconstrained,
    /// Nothing.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beam: BeamConfig,
    pub stage2_iterations: usize,
    pub stage4_iterations: usize,
    pub backoff: BackoffPolicy,
    /// Check every kept parse against its constraints after each E-step.
    pub audit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beam: BeamConfig::default(),
            stage2_iterations: 2,
            stage4_iterations: 2,
            backoff: BackoffPolicy::default(),
            audit: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.beam.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

/// One record per (stage, iteration). Iteration `i` describes the model
/// after `i` EM updates; its perplexity is the constrained training
/// perplexity of that model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub stage: u8,
    pub iteration: usize,
    pub perplexity: f64,
    pub neg_log_likelihood: f64,
    pub tokens: usize,
    pub sentences: usize,
    pub backoffs: usize,
    /// Parses checked by the audit (all N-best entries of non-backed-off
    /// sentences).
    pub audited: usize,
    pub audit_failures: usize,
    pub wall_seconds: f64,
}

/// Search result of one training sentence.
#[derive(Clone, Debug)]
pub struct SentenceParses {
    /// Best first, at most `nbest`.
    pub parses: Vec<Parse>,
    /// Normalized within the list.
    pub posteriors: Vec<f64>,
    pub backed_off: bool,
    /// `ln P(w_k | W_{k-1})` for every word and `</s>`.
    pub word_log_probs: Vec<f64>,
}

/// `ρ(P) ∝ P(P, W)`, normalized over the list.
pub fn posteriors(log_probs: &[f64]) -> Vec<f64> {
    let m = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![1.0 / log_probs.len().max(1) as f64; log_probs.len()];
    }
    let ws: Vec<f64> = log_probs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = ws.iter().sum();
    ws.into_iter().map(|w| w / z).collect()
}

/// Word ids of a corpus under the model's vocabulary.
pub fn corpus_ids(corpus: &[AnnotatedSentence], vocabs: &Vocabularies) -> Vec<Vec<u32>> {
    corpus
        .iter()
        .map(|s| s.words.iter().map(|w| vocabs.word.id_or_unk(w)).collect())
        .collect()
}

pub fn corpus_constraints(
    corpus: &[AnnotatedSentence],
    vocabs: &Vocabularies,
    mode: MatchMode,
) -> Result<Vec<ConstraintSet>, PipelineError> {
    corpus
        .iter()
        .enumerate()
        .map(|(index, s)| {
            ConstraintSet::from_annotation(s, vocabs, mode).map_err(|e| PipelineError::Sentence {
                index,
                source: Box::new(e.into()),
            })
        })
        .collect()
}

/// E-step: the constrained N-best list of every sentence, falling back to an
/// unconstrained search when the constrained one finds nothing.
pub fn e_step(
    model: &SlmModel,
    sentences: &[Vec<u32>],
    constraints: &[ConstraintSet],
    beam: &BeamConfig,
) -> Result<Vec<SentenceParses>, PipelineError> {
    sentences
        .par_iter()
        .zip(constraints.par_iter())
        .enumerate()
        .map(|(index, (words, cs))| {
            let (outcome, backed_off) = match search(words, model, beam, cs) {
                Ok(o) => (o, false),
                Err(ParseError::NoParse) => {
                    log::debug!("sentence {index}: no constrained parse, backing off");
                    (search(words, model, beam, &AcceptAll)?, true)
                }
                Err(e) => return Err(e),
            };
            let mut parses = outcome.parses;
            parses.truncate(beam.nbest);
            let lps: Vec<f64> = parses.iter().map(|p| p.log_prob).collect();
            Ok(SentenceParses {
                posteriors: posteriors(&lps),
                parses,
                backed_off,
                word_log_probs: outcome.word_log_probs,
            })
        })
        .collect::<Result<Vec<_>, ParseError>>()
        .map_err(PipelineError::from)
}

/// M-step: posterior-weighted derivation counts, split into main and check
/// by sentence index, re-estimated over `vocabs`.
pub fn m_step(
    vocabs: &Vocabularies,
    results: &[SentenceParses],
    policy: BackoffPolicy,
) -> Result<SlmModel, PipelineError> {
    let per_sentence: Vec<Option<SlmCounts>> = results
        .par_iter()
        .map(|r| {
            if r.backed_off && policy == BackoffPolicy::Drop {
                return None;
            }
            let mut c = SlmCounts::new();
            for (p, &w) in r.parses.iter().zip(&r.posteriors) {
                accumulate_counts(&mut c, &p.trees, w);
            }
            Some(c)
        })
        .collect();
    let mut main = SlmCounts::new();
    let mut check = SlmCounts::new();
    // merged in sentence order so sums do not depend on the thread count
    for (i, c) in per_sentence.iter().enumerate() {
        if let Some(c) = c {
            if is_check_sentence(i) {
                check.merge(c);
            } else {
                main.merge(c);
            }
        }
    }
    Ok(SlmModel::estimate(vocabs.clone(), &main, &check)?)
}

/// One N-best EM update. Returns the re-estimated model and the E-step
/// results under the input model.
pub fn em_iteration(
    model: &SlmModel,
    sentences: &[Vec<u32>],
    constraints: &[ConstraintSet],
    config: &TrainConfig,
) -> Result<(SlmModel, Vec<SentenceParses>), PipelineError> {
    let results = e_step(model, sentences, constraints, &config.beam)?;
    let next = m_step(model.vocabs(), &results, config.backoff)?;
    Ok((next, results))
}

/// Sum over sentences of `ln Σ_{P in list} P(P, W)` for fixed lists, scored
/// under `model`.
pub fn frozen_list_log_likelihood(model: &SlmModel, results: &[SentenceParses]) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    for r in results {
        let lps = r
            .parses
            .iter()
            .map(|p| crate::parser::score_forest(&p.trees, model))
            .collect::<Result<Vec<_>, _>>()?;
        let m = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += m + lps.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    }
    Ok(total)
}

/// Outcome of one EM stage.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub model: SlmModel,
    pub metrics: Vec<IterationMetrics>,
    /// E-step results under the final model.
    pub parses: Vec<SentenceParses>,
}

fn audit(
    stage: u8,
    model: &SlmModel,
    corpus: &[AnnotatedSentence],
    constraints: &[ConstraintSet],
    results: &[SentenceParses],
) -> (usize, usize) {
    let vocabs = model.vocabs();
    let checks: Vec<(usize, usize)> = results
        .par_iter()
        .enumerate()
        .filter(|(_, r)| !r.backed_off)
        .map(|(i, r)| {
            let failures = r
                .parses
                .iter()
                .filter(|p| {
                    if stage == 2 {
                        return !satisfies(&p.trees, &constraints[i], model.sem());
                    }
                    let tree = p.to_tree(vocabs);
                    let reference = SemanticParse::of_sentence(&corpus[i]);
                    let ok = sem_projection(&tree, vocabs).is_ok_and(|s| s == reference) && is_two_level(&tree, vocabs);
                    !ok
                })
                .count();
            (r.parses.len(), failures)
        })
        .collect();
    checks.iter().fold((0, 0), |(a, f), (n, k)| (a + n, f + k))
}

fn run_em_stage(
    stage: u8,
    model: SlmModel,
    corpus: &[AnnotatedSentence],
    mode: MatchMode,
    iterations: usize,
    config: &TrainConfig,
) -> Result<StageOutcome, PipelineError> {
    let sentences = corpus_ids(corpus, model.vocabs());
    let constraints = corpus_constraints(corpus, model.vocabs(), mode)?;
    let mut model = model;
    let mut metrics = Vec::with_capacity(iterations + 1);
    let mut iteration = 0;
    loop {
        let start = Instant::now();
        let results = e_step(&model, &sentences, &constraints, &config.beam)?;
        let nll: f64 = -results.iter().flat_map(|r| &r.word_log_probs).sum::<f64>();
        let tokens: usize = results.iter().map(|r| r.word_log_probs.len()).sum();
        let backoffs = results.iter().filter(|r| r.backed_off).count();
        let (audited, audit_failures) = if config.audit {
            audit(stage, &model, corpus, &constraints, &results)
        } else {
            (0, 0)
        };
        if audit_failures > 0 {
            log::warn!("stage {stage} iteration {iteration}: {audit_failures} of {audited} parses failed the audit");
        }
        let m = IterationMetrics {
            stage,
            iteration,
            perplexity: (nll / tokens.max(1) as f64).exp(),
            neg_log_likelihood: nll,
            tokens,
            sentences: sentences.len(),
            backoffs,
            audited,
            audit_failures,
            wall_seconds: 0.0,
        };
        if iteration == iterations {
            metrics.push(IterationMetrics {
                wall_seconds: start.elapsed().as_secs_f64(),
                ..m
            });
            log_metrics(metrics.last().expect("just pushed"));
            return Ok(StageOutcome {
                model,
                metrics,
                parses: results,
            });
        }
        model = m_step(model.vocabs(), &results, config.backoff)?;
        metrics.push(IterationMetrics {
            wall_seconds: start.elapsed().as_secs_f64(),
            ..m
        });
        log_metrics(metrics.last().expect("just pushed"));
        iteration += 1;
    }
}

fn log_metrics(m: &IterationMetrics) {
    log::info!(
        "stage {} iteration {}: perplexity {:.4}, back-offs {}, audit failures {}/{}, {:.1}s",
        m.stage,
        m.iteration,
        m.perplexity,
        m.backoffs,
        m.audit_failures,
        m.audited,
        m.wall_seconds
    );
}

/// Stage 1: a syntactic model estimated from the treebank. Tag vocabularies
/// come from the prepared trees, word/frame/slot vocabularies also from the
/// annotated corpus.
pub fn stage1_initialize(
    treebank: &[Tree],
    corpus: &[AnnotatedSentence],
    rules: &HeadRules,
) -> Result<SlmModel, PipelineError> {
    if treebank.is_empty() {
        return Err(InitError::EmptyTreebank.into());
    }
    let prepared: Vec<Tree> = treebank.iter().map(|t| prepare_tree(t, rules)).collect();
    let refs: Vec<&Tree> = prepared.iter().collect();
    let vocabs = Vocabularies::from_parts(corpus, &refs, std::iter::empty::<&str>());
    Ok(initialize_model(&prepared, vocabs)?)
}

/// Stage 2: EM with span-matched constraints.
pub fn stage2_matched_training(
    model: SlmModel,
    corpus: &[AnnotatedSentence],
    config: &TrainConfig,
) -> Result<StageOutcome, PipelineError> {
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    run_em_stage(2, model, corpus, MatchMode::Match, config.stage2_iterations, config)
}

fn enriched_label(label: &str, tag: &str) -> String {
    format!("{}{SEM_SEPARATOR}{tag}", split_label(label).0)
}

/// Adds the sentence's semantic tags to a parse: the root gets the frame,
/// every node whose span lies within a slot span (the node covering it
/// exactly, the nodes below it and the pre-terminals) gets that slot's tag.
pub fn enrich_tree(tree: &Tree, sentence: &AnnotatedSentence, index: usize) -> Result<Tree, PipelineError> {
    fn go(t: &Tree, start: usize, sentence: &AnnotatedSentence, exact: &mut [bool]) -> Tree {
        let span = crate::corpus::Span::new(start, start + t.num_leaves() - 1);
        let slot = sentence.slots.iter().position(|s| s.span.contains(span));
        if let Some(k) = slot {
            if sentence.slots[k].span == span {
                exact[k] = true;
            }
        }
        let relabel = |label: &str| match slot {
            Some(k) => enriched_label(label, &sentence.slots[k].tag),
            None => label.to_string(),
        };
        match t {
            Tree::Leaf { tag, word } => Tree::leaf(relabel(tag), word.clone()),
            Tree::Node { label, children, head } => {
                let mut at = start;
                let kids = children
                    .iter()
                    .map(|c| {
                        let k = go(c, at, sentence, exact);
                        at += c.num_leaves();
                        k
                    })
                    .collect();
                Tree::Node {
                    label: relabel(label),
                    children: kids,
                    head: *head,
                }
            }
        }
    }
    if tree.num_leaves() != sentence.len() {
        return Err(PipelineError::Enrichment {
            index,
            msg: format!("tree has {} words, sentence {}", tree.num_leaves(), sentence.len()),
        });
    }
    let mut exact = vec![false; sentence.slots.len()];
    let mut out = go(tree, 0, sentence, &mut exact);
    if let Some(k) = exact.iter().position(|&e| !e) {
        return Err(PipelineError::Enrichment {
            index,
            msg: format!("no constituent covers slot {}", sentence.slots[k].span),
        });
    }
    let root = enriched_label(out.label(), &sentence.frame);
    match &mut out {
        Tree::Leaf { tag, .. } => *tag = root,
        Tree::Node { label, .. } => *label = root,
    }
    Ok(out)
}

/// Stage 3: enriched 1-best parses. Backed-off sentences have no
/// constraint-satisfying parse and yield `None`.
pub fn stage3_enrich(
    model: &SlmModel,
    parses: &[SentenceParses],
    corpus: &[AnnotatedSentence],
) -> Result<Vec<Option<Tree>>, PipelineError> {
    if parses.len() != corpus.len() {
        return Err(PipelineError::Config(format!(
            "{} parse lists for {} sentences",
            parses.len(),
            corpus.len()
        )));
    }
    parses
        .iter()
        .zip(corpus)
        .enumerate()
        .map(|(i, (r, s))| {
            if r.backed_off {
                return Ok(None);
            }
            let best = r.parses.first().ok_or(ParseError::NoParse)?;
            let mut tree = best.to_tree(model.vocabs());
            restore_words(&mut tree, &s.words);
            enrich_tree(&tree, s, i).map(Some)
        })
        .collect()
}

/// Model re-initialized from the enriched treebank through the full
/// treebank initialization path. Missing trees (back-offs) are skipped but
/// the main/check split still follows sentence indices. `extra_words` keeps
/// the earlier word vocabulary.
pub fn reinitialize(
    enriched: &[Option<Tree>],
    corpus: &[AnnotatedSentence],
    rules: &HeadRules,
    extra_words: &[String],
) -> Result<SlmModel, PipelineError> {
    let (indices, prepared): (Vec<usize>, Vec<Tree>) = enriched
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.as_ref().map(|t| (i, prepare_tree(t, rules))))
        .unzip();
    if prepared.is_empty() {
        return Err(InitError::EmptyTreebank.into());
    }
    let refs: Vec<&Tree> = prepared.iter().collect();
    let vocabs = Vocabularies::from_parts(corpus, &refs, extra_words.iter().map(String::as_str));
    Ok(initialize_model_at(&prepared, &indices, vocabs)?)
}

/// Stage 4: EM with label-matched constraints from a re-initialized model.
pub fn stage4_lmatched_training(
    model0: SlmModel,
    corpus: &[AnnotatedSentence],
    config: &TrainConfig,
) -> Result<StageOutcome, PipelineError> {
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    run_em_stage(4, model0, corpus, MatchMode::LMatch, config.stage4_iterations, config)
}

/// Models, enriched treebank and metrics of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub stage1: SlmModel,
    pub stage2: SlmModel,
    /// One entry per training sentence; `None` for back-offs.
    pub enriched: Vec<Option<Tree>>,
    pub stage4_init: SlmModel,
    pub stage4: SlmModel,
    pub metrics: Vec<IterationMetrics>,
    /// Back-off flags of the final stage-4 E-step.
    pub stage4_backoffs: Vec<bool>,
}

/// Stages 1 through 4.
pub fn train(
    corpus: &[AnnotatedSentence],
    treebank: &[Tree],
    rules: &HeadRules,
    config: &TrainConfig,
) -> Result<TrainOutput, PipelineError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let stage1 = stage1_initialize(treebank, corpus, rules).map_err(|e| e.in_stage(1))?;
    let s2 = stage2_matched_training(stage1.clone(), corpus, config).map_err(|e| e.in_stage(2))?;
    let enriched = stage3_enrich(&s2.model, &s2.parses, corpus).map_err(|e| e.in_stage(3))?;
    let rest = train_from_stage3(&enriched, corpus, rules, &s2.model, config)?;
    let mut metrics = s2.metrics;
    metrics.extend(rest.metrics);
    Ok(TrainOutput {
        stage1,
        stage2: s2.model,
        enriched,
        stage4_init: rest.stage4_init,
        stage4: rest.stage4,
        metrics,
        stage4_backoffs: rest.stage4_backoffs,
    })
}

/// Result of resuming at stage 4.
#[derive(Clone, Debug)]
pub struct Stage4Output {
    pub stage4_init: SlmModel,
    pub stage4: SlmModel,
    pub metrics: Vec<IterationMetrics>,
    pub stage4_backoffs: Vec<bool>,
}

/// Stage 4 from stage-3 artifacts: the enriched treebank and the stage-2
/// model (whose word vocabulary is kept).
pub fn train_from_stage3(
    enriched: &[Option<Tree>],
    corpus: &[AnnotatedSentence],
    rules: &HeadRules,
    stage2: &SlmModel,
    config: &TrainConfig,
) -> Result<Stage4Output, PipelineError> {
    let model0 = reinitialize(enriched, corpus, rules, stage2.vocabs().word.entries()).map_err(|e| e.in_stage(4))?;
    let s4 = stage4_lmatched_training(model0.clone(), corpus, config).map_err(|e| e.in_stage(4))?;
    Ok(Stage4Output {
        stage4_init: model0,
        stage4_backoffs: s4.parses.iter().map(|r| r.backed_off).collect(),
        stage4: s4.model,
        metrics: s4.metrics,
    })
}
