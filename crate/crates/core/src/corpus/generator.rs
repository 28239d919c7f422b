//! Template-based synthetic corpus generator.
//!
//! A frame is realized by one of its carrier templates: a bracketed tree in
//! which `[Grammar]` marks a slot position and `<lexicon>` draws a word from
//! a named word list. Each slot grammar has weighted alternatives, each
//! producing a bracketed filler subtree under one slot tag, so the
//! annotation spans and the syntactic tree come out of the same expansion.
//!
//! Config file syntax, one directive per line (`#` starts a comment):
//!
//! ```text
//! sentences 2000
//! frame CalendarTask 0.5
//! template CalendarTask 1.0 (S (VB schedule) (NP (NN meeting)) (PP (IN with) [Person]))
//! slot Person ByFullName*Person 1.0 (NP (NNP <first>) (NNP <last>))
//! lex first megan john
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::annotation::tokenize;
use super::{AnnotatedSentence, CorpusError, Provenance, Slot, Span, Tree, TreebankSentence};

#[derive(Clone, Debug, PartialEq)]
enum Word {
    Literal(String),
    Lexicon(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Pattern {
    Node { label: String, children: Vec<Pattern> },
    Leaf { tag: String, word: Word },
    SlotRef(String),
}

impl Pattern {
    fn visit(&self, f: &mut impl FnMut(&Pattern)) {
        f(self);
        if let Pattern::Node { children, .. } = self {
            for c in children {
                c.visit(f);
            }
        }
    }

    fn slot_refs(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if matches!(p, Pattern::SlotRef(_)) {
                n += 1
            }
        });
        n
    }

    fn literal_leaves(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if matches!(p, Pattern::Leaf { .. }) {
                n += 1
            }
        });
        n
    }
}

#[derive(Clone, Debug)]
struct Template {
    frame: String,
    weight: f64,
    pattern: Pattern,
}

#[derive(Clone, Debug)]
struct SlotAlternative {
    tag: String,
    weight: f64,
    pattern: Pattern,
}

#[derive(Clone, Debug, Default)]
pub struct GeneratorConfig {
    /// Default corpus size when the caller does not specify one.
    pub sentences: Option<usize>,
    frames: Vec<(String, f64)>,
    templates: Vec<Template>,
    slots: BTreeMap<String, Vec<SlotAlternative>>,
    lexicons: BTreeMap<String, Vec<String>>,
}

const DEFAULT_CONFIG: &str = include_str!("../../data/default_generator.cfg");

fn parse_pattern(text: &str) -> Result<Pattern, CorpusError> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let p = pattern_element(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(CorpusError::Config(format!("trailing tokens in pattern '{text}'")));
    }
    Ok(p)
}

fn pattern_element(tokens: &[&str], pos: &mut usize) -> Result<Pattern, CorpusError> {
    let err = |m: String| CorpusError::Config(m);
    match tokens.get(*pos) {
        Some(t) if t.starts_with('[') && t.ends_with(']') && t.len() > 2 => {
            *pos += 1;
            return Ok(Pattern::SlotRef(t[1..t.len() - 1].to_string()));
        }
        Some(&"(") => *pos += 1,
        other => return Err(err(format!("expected '(' or slot reference, found {other:?}"))),
    }
    let label = match tokens.get(*pos) {
        Some(t) if *t != "(" && *t != ")" => t.to_string(),
        _ => return Err(err("pattern node without label".into())),
    };
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match tokens.get(*pos) {
            Some(&")") => {
                *pos += 1;
                break;
            }
            Some(&"(") => children.push(pattern_element(tokens, pos)?),
            Some(t) if t.starts_with('[') => children.push(pattern_element(tokens, pos)?),
            Some(w) if children.is_empty() && tokens.get(*pos + 1) == Some(&")") => {
                *pos += 2;
                let word = match w.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
                    Some(lex) => Word::Lexicon(lex.to_string()),
                    None => Word::Literal(w.to_string()),
                };
                return Ok(Pattern::Leaf { tag: label, word });
            }
            Some(w) => return Err(err(format!("bare token '{w}' must sit alone under a tag"))),
            None => return Err(err("unbalanced parentheses in pattern".into())),
        }
    }
    if children.is_empty() {
        return Err(err(format!("pattern node '{label}' has no children")));
    }
    Ok(Pattern::Node { label, children })
}

fn parse_weight(tok: Option<&str>, what: &str) -> Result<f64, CorpusError> {
    let w: f64 = tok
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CorpusError::Config(format!("{what}: missing or invalid weight")))?;
    if !(w > 0.0 && w.is_finite()) {
        return Err(CorpusError::Config(format!("{what}: weight must be positive")));
    }
    Ok(w)
}

impl GeneratorConfig {
    /// The configuration shipped with the crate (a small personal
    /// information management domain with three frames).
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("built-in generator config is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| CorpusError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut cfg = GeneratorConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.directive(line).map_err(|e| e.at_line(i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn directive(&mut self, line: &str) -> Result<(), CorpusError> {
        let mut parts = line.splitn(2, char::is_whitespace);
        let key = parts.next().unwrap_or_default();
        let rest = parts.next().unwrap_or("").trim();
        let mut fields = rest.split_whitespace();
        match key {
            "sentences" => {
                let n = rest
                    .parse()
                    .map_err(|_| CorpusError::Config(format!("invalid sentence count '{rest}'")))?;
                self.sentences = Some(n);
            }
            "frame" => {
                let name = fields
                    .next()
                    .ok_or_else(|| CorpusError::Config("frame: missing name".into()))?;
                let w = parse_weight(fields.next(), "frame")?;
                self.frames.push((name.to_string(), w));
            }
            "template" => {
                let frame = fields
                    .next()
                    .ok_or_else(|| CorpusError::Config("template: missing frame".into()))?;
                let w = parse_weight(fields.next(), "template")?;
                let pat_text = rest.splitn(3, char::is_whitespace).nth(2).unwrap_or("");
                self.templates.push(Template {
                    frame: frame.to_string(),
                    weight: w,
                    pattern: parse_pattern(pat_text)?,
                });
            }
            "slot" => {
                let grammar = fields
                    .next()
                    .ok_or_else(|| CorpusError::Config("slot: missing grammar".into()))?;
                let tag = fields
                    .next()
                    .ok_or_else(|| CorpusError::Config("slot: missing tag".into()))?;
                let w = parse_weight(fields.next(), "slot")?;
                let pat_text = rest.splitn(4, char::is_whitespace).nth(3).unwrap_or("");
                self.slots
                    .entry(grammar.to_string())
                    .or_default()
                    .push(SlotAlternative {
                        tag: tag.to_string(),
                        weight: w,
                        pattern: parse_pattern(pat_text)?,
                    });
            }
            "lex" => {
                let name = fields
                    .next()
                    .ok_or_else(|| CorpusError::Config("lex: missing name".into()))?;
                let words: Vec<String> = fields.map(str::to_string).collect();
                if words.is_empty() {
                    return Err(CorpusError::Config(format!("lexicon '{name}' is empty")));
                }
                self.lexicons.entry(name.to_string()).or_default().extend(words);
            }
            other => return Err(CorpusError::Config(format!("unknown directive '{other}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.templates.is_empty() {
            return Err(CorpusError::Config("no templates defined".into()));
        }
        if self.frames.is_empty() {
            return Err(CorpusError::Config("no frames defined".into()));
        }
        for (f, _) in &self.frames {
            if !self.templates.iter().any(|t| &t.frame == f) {
                return Err(CorpusError::Config(format!("frame '{f}' has no templates")));
            }
        }
        let check_lex = |p: &Pattern| -> Result<(), CorpusError> {
            let mut missing = None;
            p.visit(&mut |n| {
                if let Pattern::Leaf {
                    word: Word::Lexicon(l), ..
                } = n
                {
                    if !self.lexicons.contains_key(l) {
                        missing = Some(l.clone());
                    }
                }
            });
            match missing {
                Some(l) => Err(CorpusError::Config(format!("unknown lexicon '<{l}>'"))),
                None => Ok(()),
            }
        };
        for t in &self.templates {
            if !self.frames.iter().any(|(f, _)| f == &t.frame) {
                return Err(CorpusError::Config(format!(
                    "template for undeclared frame '{}'",
                    t.frame
                )));
            }
            let mut unknown = None;
            t.pattern.visit(&mut |p| {
                if let Pattern::SlotRef(g) = p {
                    if !self.slots.contains_key(g) {
                        unknown = Some(g.clone());
                    }
                }
            });
            if let Some(g) = unknown {
                return Err(CorpusError::Config(format!("unknown slot grammar '[{g}]'")));
            }
            if matches!(t.pattern, Pattern::SlotRef(_)) || t.pattern.literal_leaves() == 0 {
                return Err(CorpusError::Config(format!(
                    "template for '{}' needs at least one carrier word",
                    t.frame
                )));
            }
            check_lex(&t.pattern)?;
        }
        for (g, alts) in &self.slots {
            for a in alts {
                if a.pattern.slot_refs() > 0 {
                    return Err(CorpusError::Config(format!("slot grammar '{g}' cannot contain slots")));
                }
                check_lex(&a.pattern)?;
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> impl Iterator<Item = &str> {
        self.frames.iter().map(|(f, _)| f.as_str())
    }

    /// Probability of each per-sentence slot count implied by the frame and
    /// template weights.
    pub fn expected_slot_count_distribution(&self) -> BTreeMap<usize, f64> {
        let frame_total: f64 = self.frames.iter().map(|(_, w)| w).sum();
        let mut dist = BTreeMap::new();
        for (f, fw) in &self.frames {
            let ts: Vec<&Template> = self.templates.iter().filter(|t| &t.frame == f).collect();
            let t_total: f64 = ts.iter().map(|t| t.weight).sum();
            for t in ts {
                *dist.entry(t.pattern.slot_refs()).or_insert(0.0) += fw / frame_total * t.weight / t_total;
            }
        }
        dist
    }
}

struct Expansion {
    words: Vec<String>,
    slots: Vec<Slot>,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T], weight: impl Fn(&T) -> f64) -> &'a T {
    let dist = WeightedIndex::new(items.iter().map(weight)).expect("positive weights");
    &items[dist.sample(rng)]
}

impl GeneratorConfig {
    fn expand(&self, p: &Pattern, rng: &mut ChaCha8Rng, out: &mut Expansion) -> Tree {
        match p {
            Pattern::Leaf { tag, word } => {
                let w = match word {
                    Word::Literal(w) => w.clone(),
                    Word::Lexicon(l) => self.lexicons[l].choose(rng).expect("nonempty lexicon").clone(),
                };
                out.words.push(w.clone());
                Tree::leaf(tag.clone(), w)
            }
            Pattern::Node { label, children } => {
                let cs = children.iter().map(|c| self.expand(c, rng, out)).collect();
                Tree::node(label.clone(), cs)
            }
            Pattern::SlotRef(g) => {
                let alt = pick(rng, &self.slots[g], |a| a.weight);
                let l = out.words.len();
                let tree = self.expand(&alt.pattern, rng, out);
                out.slots.push(Slot {
                    tag: alt.tag.clone(),
                    span: Span::new(l, out.words.len() - 1),
                });
                tree
            }
        }
    }
}

/// Generates `n` annotated sentences and their syntactic trees. The output is
/// a pure function of `(config, n, seed)`.
pub fn generate_synthetic_corpus(
    config: &GeneratorConfig,
    n: usize,
    seed: u64,
) -> Result<(Vec<AnnotatedSentence>, Vec<TreebankSentence>), CorpusError> {
    if config.templates.is_empty() || config.frames.is_empty() {
        return Err(CorpusError::Config("no templates defined".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n);
    let mut treebank = Vec::with_capacity(n);
    for _ in 0..n {
        let (frame, _) = pick(&mut rng, &config.frames, |(_, w)| *w);
        let templates: Vec<&Template> = config.templates.iter().filter(|t| &t.frame == frame).collect();
        let template = *pick(&mut rng, &templates, |t| t.weight);
        let mut ex = Expansion {
            words: Vec::new(),
            slots: Vec::new(),
        };
        let tree = config.expand(&template.pattern, &mut rng, &mut ex);
        corpus.push(AnnotatedSentence::new(ex.words, frame.clone(), ex.slots)?);
        treebank.push(TreebankSentence {
            tree,
            provenance: Provenance::Synthetic,
        });
    }
    Ok((corpus, treebank))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = "frame CalendarTask 1\n\
        template CalendarTask 1 (S (VB schedule) (NP (NN meeting)) (PP (IN with) [PERSON]))\n\
        slot PERSON ByFullName*Person 1 (NP (NNP <first>) (NNP <last>))\n\
        lex first megan john\nlex last hokins smith\n";

    #[test]
    fn single_template_yields_one_person_slot() {
        let cfg = GeneratorConfig::parse(ONE).unwrap();
        let (corpus, tb) = generate_synthetic_corpus(&cfg, 1, 0).unwrap();
        let s = &corpus[0];
        assert_eq!(s.frame, "CalendarTask");
        assert_eq!(s.slots.len(), 1);
        assert_eq!(s.slots[0].tag, "ByFullName*Person");
        assert_eq!(s.slots[0].span, Span::new(3, 4));
        assert_eq!(
            tb[0].tree.words(),
            s.words.iter().map(String::as_str).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_template_set_is_config_error() {
        assert!(matches!(
            GeneratorConfig::parse("frame F 1\n"),
            Err(CorpusError::Config(_))
        ));
        assert!(matches!(
            generate_synthetic_corpus(&GeneratorConfig::default(), 3, 0),
            Err(CorpusError::Config(_))
        ));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            "frame F 1\ntemplate F 1 (S [X])\nslot X A 1 (N a)\n",
            "frame F 1\ntemplate F 1 (S (V a) [Y])\n",
            "frame F 1\ntemplate F 0 (S (V a))\n",
            "frame F 1\ntemplate G 1 (S (V a))\n",
            "frame F 1\ntemplate F 1 (S (V <nope>))\n",
            "frame F 1\ntemplate F 1 (S (V a))\nbogus x\n",
        ];
        for b in bad {
            assert!(GeneratorConfig::parse(b).is_err(), "{b}");
        }
    }

    #[test]
    fn builtin_config_is_valid() {
        let cfg = GeneratorConfig::builtin();
        assert_eq!(cfg.frames().count(), 3);
        let dist = cfg.expected_slot_count_distribution();
        assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
