use std::collections::BTreeSet;
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AnnotatedSentence, Tree, TreebankSentence};

/// Sentence start marker.
pub const BOS: &str = "<s>";
/// Sentence end marker.
pub const EOS: &str = "</s>";
/// Stand-in for words not seen when the vocabulary was built.
pub const UNK: &str = "<unk>";

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Word,
    #[serde(rename = "postag")]
    PosTag,
    #[serde(rename = "nttag")]
    NtTag,
    Frame,
    Slot,
}

impl fmt::Display for VocabKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VocabKind::Word => "word",
            VocabKind::PosTag => "POStag",
            VocabKind::NtTag => "NTtag",
            VocabKind::Frame => "frame",
            VocabKind::Slot => "slot",
        };
        f.write_str(s)
    }
}

/// An ordered symbol table with dense ids.
///
/// Entries are sorted lexicographically. The word vocabulary additionally
/// reserves ids 0, 1 and 2 for [`BOS`], [`EOS`] and [`UNK`].
#[derive(Clone, Debug)]
pub struct Vocabulary {
    kind: VocabKind,
    entries: Vec<String>,
    index: FxHashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.entries == other.entries
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    pub fn new<I, S>(kind: VocabKind, symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let specials = [BOS, EOS, UNK];
        let sorted: BTreeSet<String> = symbols
            .into_iter()
            .map(|s| s.as_ref().to_owned())
            .filter(|s| kind != VocabKind::Word || !specials.contains(&s.as_str()))
            .collect();
        let mut entries = Vec::with_capacity(sorted.len() + 3);
        if kind == VocabKind::Word {
            entries.extend(specials.iter().map(|s| s.to_string()));
        }
        entries.extend(sorted);
        Self::from_entries(kind, entries)
    }

    fn from_entries(kind: VocabKind, entries: Vec<String>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
        Vocabulary { kind, entries, index }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    /// Like [`Vocabulary::id`], but maps unknown words to [`UNK_ID`].
    /// Only meaningful for the word vocabulary.
    pub fn id_or_unk(&self, name: &str) -> u32 {
        self.id(name).unwrap_or(UNK_ID)
    }

    pub fn name(&self, id: u32) -> &str {
        &self.entries[id as usize]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    kind: VocabKind,
    entries: Vec<String>,
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VocabRepr {
            kind: self.kind,
            entries: self.entries.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = VocabRepr::deserialize(deserializer)?;
        Ok(Vocabulary::from_entries(repr.kind, repr.entries))
    }
}

/// The five symbol tables shared by a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub word: Vocabulary,
    pub pos: Vocabulary,
    pub nt: Vocabulary,
    pub frame: Vocabulary,
    pub slot: Vocabulary,
}

impl Vocabularies {
    /// Word vocabulary closed over corpus and treebank words, tag
    /// vocabularies from treebank labels, frame and slot vocabularies from
    /// the annotations.
    pub fn build(corpus: &[AnnotatedSentence], treebank: &[TreebankSentence]) -> Self {
        let trees: Vec<&Tree> = treebank.iter().map(|t| &t.tree).collect();
        Self::from_parts(corpus, &trees, std::iter::empty::<&str>())
    }

    /// Same as [`Vocabularies::build`] but over bare trees, with extra words
    /// (e.g. from a treebank used only for initialization).
    pub fn from_parts<'a, W>(corpus: &[AnnotatedSentence], trees: &[&Tree], extra_words: W) -> Self
    where
        W: IntoIterator<Item = &'a str>,
    {
        let mut words: BTreeSet<&str> = extra_words.into_iter().collect();
        let mut pos = BTreeSet::new();
        let mut nt = BTreeSet::new();
        let mut frames = BTreeSet::new();
        let mut slots = BTreeSet::new();
        for s in corpus {
            words.extend(s.words.iter().map(String::as_str));
            frames.insert(s.frame.as_str());
            slots.extend(s.slots.iter().map(|sl| sl.tag.as_str()));
        }
        for t in trees {
            t.visit(&mut |node| match node {
                Tree::Leaf { tag, word } => {
                    words.insert(word);
                    pos.insert(tag.as_str());
                }
                Tree::Node { label, .. } => {
                    nt.insert(label.as_str());
                }
            });
        }
        Vocabularies {
            word: Vocabulary::new(VocabKind::Word, words),
            pos: Vocabulary::new(VocabKind::PosTag, pos),
            nt: Vocabulary::new(VocabKind::NtTag, nt),
            frame: Vocabulary::new(VocabKind::Frame, frames),
            slot: Vocabulary::new(VocabKind::Slot, slots),
        }
    }
}

/// Functional form of [`Vocabularies::build`].
pub fn build_vocabularies(corpus: &[AnnotatedSentence], treebank: &[TreebankSentence]) -> Vocabularies {
    Vocabularies::build(corpus, treebank)
}
