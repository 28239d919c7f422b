//! Shared fixtures and oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slm_ie::corpus::{Slot, Span, VocabKind, Vocabularies, Vocabulary, EOS_ID};
use slm_ie::model::{ExposedHead, HeadLabel, ParserAction, SlmCounts, SlmModel};

/// Vocabularies with the given plain words, POS tags and NT labels, and one
/// frame and slot.
pub fn toy_vocabs(words: &[&str], pos: &[&str], nt: &[&str]) -> Vocabularies {
    Vocabularies {
        word: Vocabulary::new(VocabKind::Word, words.iter().copied()),
        pos: Vocabulary::new(VocabKind::PosTag, pos.iter().copied()),
        nt: Vocabulary::new(VocabKind::NtTag, nt.iter().copied()),
        frame: Vocabulary::new(VocabKind::Frame, ["F"]),
        slot: Vocabulary::new(VocabKind::Slot, ["S"]),
    }
}

fn random_head(rng: &mut ChaCha8Rng, v: &Vocabularies) -> ExposedHead {
    match rng.gen_range(0..4) {
        0 => ExposedHead::BOUNDARY,
        1 | 2 => ExposedHead::new(
            rng.gen_range(3..v.word.len() as u32),
            HeadLabel::Pos(rng.gen_range(0..v.pos.len() as u32)),
        ),
        _ => ExposedHead::new(
            rng.gen_range(3..v.word.len() as u32),
            HeadLabel::Nt(rng.gen_range(0..v.nt.len() as u32)),
        ),
    }
}

fn random_counts(rng: &mut ChaCha8Rng, v: &Vocabularies, events: usize) -> SlmCounts {
    let mut c = SlmCounts::new();
    let na = ParserAction::alphabet_size(v.nt.len()) as u32;
    for _ in 0..events {
        let (h0, hm1) = (random_head(rng, v), random_head(rng, v));
        let w = rng.gen_range(1..v.word.len() as u32);
        c.add_word(h0, hm1, w, rng.gen_range(1..4) as f64);
        let w = rng.gen_range(3..v.word.len() as u32);
        c.add_tag(w, h0, hm1, rng.gen_range(0..v.pos.len() as u32), 1.0);
        let a = if rng.gen_bool(0.4) { 0 } else { rng.gen_range(0..na) };
        c.add_action(h0, hm1, ParserAction::from_index(a), rng.gen_range(1..3) as f64);
    }
    c
}

/// A model with random but non-uniform distributions.
pub fn random_model(v: Vocabularies, seed: u64) -> SlmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let main = random_counts(&mut rng, &v, 300);
    let check = random_counts(&mut rng, &v, 60);
    SlmModel::estimate(v, &main, &check).unwrap()
}

/// Independent tree representation for the brute-force oracle.
#[derive(Clone, Debug, PartialEq)]
pub enum OTree {
    Leaf {
        w: u32,
        t: u32,
    },
    Node {
        label: u32,
        head_left: bool,
        l: Box<OTree>,
        r: Box<OTree>,
    },
}

impl OTree {
    pub fn from_parse(t: &slm_ie::parser::ParseTree) -> OTree {
        use slm_ie::parser::{HeadSide, ParseTree};
        match t {
            ParseTree::Leaf { word, tag, .. } => OTree::Leaf { w: *word, t: *tag },
            ParseTree::Node {
                label,
                head,
                left,
                right,
                ..
            } => OTree::Node {
                label: *label,
                head_left: *head == HeadSide::Left,
                l: Box::new(OTree::from_parse(left)),
                r: Box::new(OTree::from_parse(right)),
            },
        }
    }
}

/// All trees over `words` with every shape, tag, label and head choice.
pub fn all_trees(words: &[u32], num_pos: u32, num_nt: u32) -> Vec<OTree> {
    if words.len() == 1 {
        return (0..num_pos).map(|t| OTree::Leaf { w: words[0], t }).collect();
    }
    let mut out = Vec::new();
    for split in 1..words.len() {
        let ls = all_trees(&words[..split], num_pos, num_nt);
        let rs = all_trees(&words[split..], num_pos, num_nt);
        for l in &ls {
            for r in &rs {
                for label in 0..num_nt {
                    for head_left in [true, false] {
                        out.push(OTree::Node {
                            label,
                            head_left,
                            l: Box::new(l.clone()),
                            r: Box::new(r.clone()),
                        });
                    }
                }
            }
        }
    }
    out
}

/// All sequences of adjacent trees covering `words`.
pub fn all_forests(words: &[u32], num_pos: u32, num_nt: u32) -> Vec<Vec<OTree>> {
    if words.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=words.len() {
        let heads = all_trees(&words[..first], num_pos, num_nt);
        let tails = all_forests(&words[first..], num_pos, num_nt);
        for h in &heads {
            for t in &tails {
                let mut f = vec![h.clone()];
                f.extend(t.iter().cloned());
                out.push(f);
            }
        }
    }
    out
}

/// `ln P(W, T)` computed directly from the generative story: for each word,
/// predict it and its tag from the two exposed heads, then take the adjoins
/// that complete nodes ending at it, then null; finally predict `</s>`.
pub fn oracle_log_prob(model: &SlmModel, forest: &[OTree]) -> f64 {
    struct St<'a> {
        model: &'a SlmModel,
        stack: Vec<ExposedHead>,
        lp: f64,
        started: bool,
    }
    impl St<'_> {
        fn heads(&self) -> (ExposedHead, ExposedHead) {
            let n = self.stack.len();
            let h0 = if n >= 1 {
                self.stack[n - 1]
            } else {
                ExposedHead::BOUNDARY
            };
            let hm1 = if n >= 2 {
                self.stack[n - 2]
            } else {
                ExposedHead::BOUNDARY
            };
            (h0, hm1)
        }
        fn gen(&mut self, t: &OTree) {
            match t {
                OTree::Leaf { w, t } => {
                    let (h0, hm1) = self.heads();
                    if self.started {
                        self.lp += self.model.predict_action(h0, hm1, ParserAction::NULL).ln();
                    }
                    self.started = true;
                    self.lp += self.model.predict_word(h0, hm1, *w).ln();
                    self.lp += self.model.predict_tag(*w, h0, hm1, *t).ln();
                    self.stack.push(ExposedHead::new(*w, HeadLabel::Pos(*t)));
                }
                OTree::Node { label, head_left, l, r } => {
                    self.gen(l);
                    self.gen(r);
                    let (h0, hm1) = self.heads();
                    let a = if *head_left {
                        ParserAction::adjoin_left(*label)
                    } else {
                        ParserAction::adjoin_right(*label)
                    };
                    self.lp += self.model.predict_action(h0, hm1, a).ln();
                    self.stack.pop();
                    self.stack.pop();
                    let hw = if *head_left { hm1.word } else { h0.word };
                    self.stack.push(ExposedHead::new(hw, HeadLabel::Nt(*label)));
                }
            }
        }
    }
    let mut st = St {
        model,
        stack: Vec::new(),
        lp: 0.0,
        started: false,
    };
    for t in forest {
        st.gen(t);
    }
    let (h0, hm1) = st.heads();
    st.lp += model.predict_action(h0, hm1, ParserAction::NULL).ln();
    st.lp + model.predict_word(h0, hm1, EOS_ID).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A model and sentence for which a width-1 beam loses every
/// constraint-satisfying prefix. The sentence `(F a (S a a a))` has slot
/// [1,3]; the model tags every word with the slot tag `q*S` and prefers
/// joining two trees under the void label `A` to closing the position. At
/// position 2 the single kept prefix holds a void node over the slot-tagged
/// words 1 and 2, and no slot-tagged node over [1,3] can contain it.
pub fn adversarial_backoff_fixture() -> (SlmModel, slm_ie::corpus::AnnotatedSentence) {
    let v = toy_vocabs(&["a"], &["p", "q*S"], &["A", "A*F", "B*S"]);
    let a = v.word.id("a").unwrap();
    let p = v.pos.id("p").unwrap();
    let q = v.pos.id("q*S").unwrap();
    let nt = |n: &str| v.nt.id(n).unwrap();
    let b = ExposedHead::BOUNDARY;
    let mut main = SlmCounts::new();
    main.add_word(b, b, a, 4.0);
    main.add_word(b, b, EOS_ID, 1.0);
    main.add_tag(a, b, b, q, 10.0);
    main.add_tag(a, b, b, p, 1.0);
    main.add_action(b, b, ParserAction::adjoin_left(nt("A")), 10.0);
    main.add_action(b, b, ParserAction::NULL, 3.0);
    main.add_action(b, b, ParserAction::adjoin_left(nt("B*S")), 1.0);
    main.add_action(b, b, ParserAction::adjoin_left(nt("A*F")), 1.0);
    let model = SlmModel::estimate(v, &main, &SlmCounts::new()).unwrap();
    let s = slm_ie::corpus::parse_annotation_line("(F a (S a a a))").unwrap();
    (model, s)
}

/// 3 tags x 4 spans.
pub fn slot_universe() -> Vec<Slot> {
    let spans = [Span::new(0, 0), Span::new(1, 2), Span::new(3, 3), Span::new(4, 6)];
    let mut u = Vec::new();
    for tag in ["A", "B", "C"] {
        for s in spans {
            u.push(Slot {
                tag: tag.into(),
                span: s,
            });
        }
    }
    u
}

pub fn to_slots(mask: u16, u: &[Slot]) -> Vec<Slot> {
    (0..u.len())
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| u[i].clone())
        .collect()
}

/// Shortest sequence of insertions, deletions and substitutions from every
/// subset to `target`, by breadth-first search over all 2^12 subsets.
pub fn edit_distances_to(target: u16, n: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; 1 << n];
    let mut queue = std::collections::VecDeque::new();
    dist[target as usize] = 0;
    queue.push_back(target);
    while let Some(s) = queue.pop_front() {
        let d = dist[s as usize];
        let mut relax = |t: u16, queue: &mut std::collections::VecDeque<u16>| {
            if dist[t as usize] == u32::MAX {
                dist[t as usize] = d + 1;
                queue.push_back(t);
            }
        };
        for i in 0..n {
            let bit = 1u16 << i;
            // insertion or deletion of element i
            relax(s ^ bit, &mut queue);
            if s & bit != 0 {
                for j in 0..n {
                    let other = 1u16 << j;
                    if s & other == 0 {
                        relax((s & !bit) | other, &mut queue);
                    }
                }
            }
        }
    }
    dist
}
