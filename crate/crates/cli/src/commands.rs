use std::io::Write as _;
use std::path::{Path, PathBuf};

use slm_ie::constraints::{test_constraints, AcceptAll, Gate};
use slm_ie::corpus::{
    generate_synthetic_corpus, load_annotated_corpus, load_enriched_treebank, load_treebank, write_annotated_corpus,
    write_treebank, AnnotatedSentence, GeneratorConfig, Tree,
};
use slm_ie::eval::{baseline_parse, decode_corpus, score_corpus, DecodeMode, SemanticParse};
use slm_ie::model::{load_model, save_model, SlmModel};
use slm_ie::parser::perplexity;
use slm_ie::pipeline::{corpus_ids, train, train_from_stage3, IterationMetrics};
use slm_ie::treebank_init::HeadRules;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::{Cli, Command, Common, Mode, Result};

pub const STAGE1_MODEL: &str = "stage1.model.json";
pub const STAGE2_MODEL: &str = "stage2.model.json";
pub const ENRICHED_TREEBANK: &str = "stage3.enriched.trees";
pub const ENRICHED_INDEX: &str = "stage3.index.json";
pub const STAGE4_INIT_MODEL: &str = "stage4.init.model.json";
pub const FINAL_MODEL: &str = "model.json";
pub const METRICS: &str = "metrics.jsonl";

struct Ctx {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    out_dir: PathBuf,
    mode: Option<Mode>,
}

fn context(common: &Common) -> Result<Ctx> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(w) = common.beam_width {
        cfg.training.beam.width = w;
    }
    if let Some(n) = common.nbest {
        cfg.training.beam.nbest = n;
    }
    cfg.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let out_dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    if cfg.workers > 0 {
        // fails only if a pool was already installed, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    Ok(Ctx {
        cfg,
        config_path: common.config.clone(),
        out_dir,
        mode: common.mode,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = context(&cli.common)?;
    match cli.command {
        Command::Generate {
            grammar,
            sentences,
            test_sentences,
        } => cmd_generate(&ctx, grammar.as_deref(), sentences, test_sentences),
        Command::Train { resume_from_stage3 } => cmd_train(&ctx, resume_from_stage3),
        Command::Eval {
            model,
            test,
            baseline_train,
        } => cmd_eval(&ctx, &model, test, baseline_train.as_deref()),
        Command::Perplexity { model, corpus } => cmd_perplexity(&ctx, &model, &corpus),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_generate(ctx: &Ctx, grammar: Option<&Path>, sentences: Option<usize>, test_sentences: usize) -> Result<()> {
    let mut manifest = RunManifest::start("generate", ctx.config_path.as_deref(), ctx.cfg.seed);
    let gcfg = match grammar {
        Some(p) if !p.is_file() => return Err(CliError::Usage(format!("grammar file {} not found", p.display()))),
        Some(p) => {
            manifest.input(p)?;
            GeneratorConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => GeneratorConfig::builtin(),
    };
    let n = sentences.or(gcfg.sentences).unwrap_or(2000);
    // one stream, split into train and test
    let (corpus, treebank) = generate_synthetic_corpus(&gcfg, n + test_sentences, ctx.cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let trees: Vec<Tree> = treebank.into_iter().map(|t| t.tree).collect();
    let files = [
        ("train.txt", None, Some(&corpus[..n])),
        ("train.trees", Some(&trees[..n]), None),
        ("test.txt", None, Some(&corpus[n..])),
        ("test.trees", Some(&trees[n..]), None),
    ];
    for (name, t, c) in files {
        let path = ctx.out_dir.join(name);
        if let Some(c) = c {
            write_annotated_corpus(&path, c)?;
        }
        if let Some(t) = t {
            write_treebank(&path, t, false)?;
        }
        manifest.output(&path)?;
    }
    log::info!(
        "wrote {n} training and {test_sentences} test sentences to {}",
        ctx.out_dir.display()
    );
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn required(p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| CliError::Config(format!("data.{key} is not set in the config file")))
}

fn load_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let c = load_annotated_corpus(path)?;
    if c.is_empty() {
        return Err(CliError::Data(format!("{}: no sentences", path.display())));
    }
    Ok(c)
}

fn write_metrics(path: &Path, metrics: &[IterationMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for m in metrics {
        let line = serde_json::to_string(m).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn save(model: &SlmModel, path: &Path, manifest: &mut RunManifest) -> Result<()> {
    save_model(model, path)?;
    manifest.output(path)
}

fn cmd_train(ctx: &Ctx, resume: bool) -> Result<()> {
    if ctx.config_path.is_none() {
        return Err(CliError::Usage("train needs --config".into()));
    }
    let mut manifest = RunManifest::start("train", ctx.config_path.as_deref(), ctx.cfg.seed);
    if let Some(p) = &ctx.config_path {
        manifest.input(p)?;
    }
    let train_path = required(&ctx.cfg.data.train, "train")?;
    manifest.input(&train_path)?;
    let corpus = load_corpus(&train_path)?;
    let rules = match &ctx.cfg.data.head_rules {
        Some(p) => {
            manifest.input(p)?;
            HeadRules::load(p)?
        }
        None => HeadRules::builtin(),
    };
    let dir = &ctx.out_dir;
    let config = &ctx.cfg.training;

    let (stage4_init, stage4, metrics) = if resume {
        let stage2_path = dir.join(STAGE2_MODEL);
        let trees_path = dir.join(ENRICHED_TREEBANK);
        let index_path = dir.join(ENRICHED_INDEX);
        for p in [&stage2_path, &trees_path, &index_path] {
            manifest.input(p)?;
        }
        let stage2 = load_model(&stage2_path)?;
        let enriched = read_enriched(&trees_path, &index_path, corpus.len())?;
        let out = train_from_stage3(&enriched, &corpus, &rules, &stage2, config)?;
        (out.stage4_init, out.stage4, out.metrics)
    } else {
        let treebank_path = required(&ctx.cfg.data.treebank, "treebank")?;
        manifest.input(&treebank_path)?;
        let treebank: Vec<Tree> = load_treebank(&treebank_path)?.into_iter().map(|t| t.tree).collect();
        let out = train(&corpus, &treebank, &rules, config)?;
        save(&out.stage1, &dir.join(STAGE1_MODEL), &mut manifest)?;
        save(&out.stage2, &dir.join(STAGE2_MODEL), &mut manifest)?;
        write_enriched(&out.enriched, &dir.join(ENRICHED_TREEBANK), &dir.join(ENRICHED_INDEX))?;
        manifest.output(&dir.join(ENRICHED_TREEBANK))?;
        manifest.output(&dir.join(ENRICHED_INDEX))?;
        (out.stage4_init, out.stage4, out.metrics)
    };
    save(&stage4_init, &dir.join(STAGE4_INIT_MODEL), &mut manifest)?;
    save(&stage4, &dir.join(FINAL_MODEL), &mut manifest)?;
    let metrics_path = dir.join(if resume { "metrics.stage4.jsonl" } else { METRICS });
    write_metrics(&metrics_path, &metrics)?;
    manifest.output(&metrics_path)?;
    for m in &metrics {
        if m.audit_failures > 0 {
            log::warn!(
                "stage {} iteration {}: {} audit failures",
                m.stage,
                m.iteration,
                m.audit_failures
            );
        }
    }
    manifest.finish(dir)?;
    Ok(())
}

fn write_enriched(enriched: &[Option<Tree>], trees_path: &Path, index_path: &Path) -> Result<()> {
    let (index, trees): (Vec<usize>, Vec<Tree>) = enriched
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.clone().map(|t| (i, t)))
        .unzip();
    write_treebank(trees_path, &trees, true)?;
    write_text(
        index_path,
        &(serde_json::to_string(&index).expect("index serializes") + "\n"),
    )
}

fn read_enriched(trees_path: &Path, index_path: &Path, n: usize) -> Result<Vec<Option<Tree>>> {
    let trees = load_enriched_treebank(trees_path)?;
    let text =
        std::fs::read_to_string(index_path).map_err(|e| CliError::Data(format!("{}: {e}", index_path.display())))?;
    let index: Vec<usize> =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", index_path.display())))?;
    if index.len() != trees.len() || index.iter().any(|&i| i >= n) {
        return Err(CliError::Data(format!(
            "{} does not match {} and the training corpus",
            index_path.display(),
            trees_path.display()
        )));
    }
    let mut out = vec![None; n];
    for (i, t) in index.into_iter().zip(trees) {
        out[i] = Some(t.tree);
    }
    Ok(out)
}

fn mode_name(mode: DecodeMode) -> &'static str {
    match mode {
        DecodeMode::FrameSet => "frame-set",
        DecodeMode::L1 => "l1",
        DecodeMode::Unconstrained => "unconstrained",
    }
}

fn cmd_eval(ctx: &Ctx, model_path: &Path, test: Option<PathBuf>, baseline_train: Option<&Path>) -> Result<()> {
    let mode: DecodeMode = ctx.mode.unwrap_or(Mode::FrameSet).into();
    let mut manifest = RunManifest::start("eval", ctx.config_path.as_deref(), ctx.cfg.seed);
    let test_path = match test {
        Some(p) => p,
        None => required(&ctx.cfg.data.test, "test")?,
    };
    manifest.input(model_path)?;
    manifest.input(&test_path)?;
    let model = load_model(model_path)?;
    let corpus = load_corpus(&test_path)?;
    if mode == DecodeMode::L1 {
        if let Some(s) = corpus.iter().find(|s| !model.vocabs().frame.contains(&s.frame)) {
            return Err(CliError::Data(format!(
                "vocabulary mismatch: frame '{}' unknown to the model",
                s.frame
            )));
        }
    }
    let decoded = decode_corpus(&corpus, &model, &ctx.cfg.training.beam, mode)?;
    let refs: Vec<SemanticParse> = corpus.iter().map(SemanticParse::of_sentence).collect();
    let hyps: Vec<SemanticParse> = decoded.iter().map(|d| d.parse.clone()).collect();
    let flags: Vec<bool> = decoded.iter().map(|d| d.backed_off).collect();
    let report = score_corpus(&refs, &hyps, &flags)?;
    let name = mode_name(mode);
    let dir = &ctx.out_dir;
    let outputs = [
        (format!("report-{name}.txt"), report.to_table()),
        (
            format!("report-{name}.json"),
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        ),
        (
            format!("decodes-{name}.jsonl"),
            decoded
                .iter()
                .map(|d| serde_json::to_string(d).expect("decode serializes") + "\n")
                .collect(),
        ),
    ];
    for (file, text) in &outputs {
        let p = dir.join(file);
        write_text(&p, text)?;
        manifest.output(&p)?;
    }
    print!("{}", report.to_table());
    if let Some(train_path) = baseline_train {
        manifest.input(train_path)?;
        let base = baseline_parse(&load_corpus(train_path)?);
        let hyps = vec![base; refs.len()];
        let rep = score_corpus(&refs, &hyps, &vec![false; refs.len()])?;
        for (file, text) in [
            ("report-baseline.txt", rep.to_table()),
            (
                "report-baseline.json",
                serde_json::to_string_pretty(&rep).expect("report serializes") + "\n",
            ),
        ] {
            let p = dir.join(file);
            write_text(&p, &text)?;
            manifest.output(&p)?;
        }
    }
    manifest.finish(dir)?;
    Ok(())
}

fn cmd_perplexity(ctx: &Ctx, model_path: &Path, corpus_path: &Path) -> Result<()> {
    let mode: DecodeMode = ctx.mode.unwrap_or(Mode::Unconstrained).into();
    let mut manifest = RunManifest::start("perplexity", ctx.config_path.as_deref(), ctx.cfg.seed);
    manifest.input(model_path)?;
    manifest.input(corpus_path)?;
    let model = load_model(model_path)?;
    let corpus = load_corpus(corpus_path)?;
    let ids = corpus_ids(&corpus, model.vocabs());
    let beam = &ctx.cfg.training.beam;
    let v = model.vocabs();
    let gates: Vec<Box<dyn Gate>> = corpus
        .iter()
        .map(|s| -> Result<Box<dyn Gate>> {
            Ok(match mode {
                DecodeMode::Unconstrained => Box::new(AcceptAll),
                DecodeMode::FrameSet => Box::new(test_constraints(s.len(), &v.frame, None).map_err(data)?),
                DecodeMode::L1 => {
                    let f = v
                        .frame
                        .id(&s.frame)
                        .ok_or_else(|| CliError::Data(format!("vocabulary mismatch: frame '{}'", s.frame)))?;
                    Box::new(test_constraints(s.len(), &v.frame, Some(f)).map_err(data)?)
                }
            })
        })
        .collect::<Result<_>>()?;
    let report = perplexity(&ids, &model, beam, |i| GateRef(gates[i].as_ref()))?;
    let text = serde_json::json!({
        "mode": mode_name(mode),
        "perplexity": report.perplexity,
        "neg_log_likelihood": report.neg_log_likelihood,
        "tokens": report.tokens,
        "backoffs": report.backoffs.len(),
    });
    let text = serde_json::to_string_pretty(&text).expect("json serializes") + "\n";
    print!("{text}");
    let p = ctx.out_dir.join(format!("perplexity-{}.json", mode_name(mode)));
    write_text(&p, &text)?;
    manifest.output(&p)?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Borrowed gate, so per-sentence gates can be built once and shared.
struct GateRef<'a>(&'a dyn Gate);

impl Gate for GateRef<'_> {
    fn shift(&self, index: usize, sem: slm_ie::model::Sem, realized: u128) -> Option<u128> {
        self.0.shift(index, sem, realized)
    }

    fn adjoin(
        &self,
        span: slm_ie::corpus::Span,
        sem: slm_ie::model::Sem,
        left: slm_ie::constraints::ChildInfo,
        right: slm_ie::constraints::ChildInfo,
        realized: u128,
    ) -> Option<u128> {
        self.0.adjoin(span, sem, left, right, realized)
    }

    fn null(&self, index: usize, realized: u128) -> bool {
        self.0.null(index, realized)
    }
}
