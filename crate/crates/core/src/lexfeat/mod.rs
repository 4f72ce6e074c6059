//! Explicit linguistic inputs: annotated tokens, closed tag sets, pretrained
//! word vectors and the alignment of LM subwords onto word tokens.

mod annotator;
mod embeddings;
mod subword;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

pub use annotator::{annotate, Annotator, CommandAnnotator, RuleAnnotator};
pub use embeddings::{lookup_embeddings, EmbeddingTable};
pub use subword::{align_subwords, Subword, SubwordAlignment, WordPiece};

/// One word token with its morphosyntactic annotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedToken {
    pub surface: String,
    pub pos: PosTag,
    /// Index of the syntactic head within the utterance, `None` for the root.
    pub dep_head: Option<usize>,
    pub dep_rel: DepRel,
    /// Range into the utterance's subword sequence, set by alignment.
    pub subword_span: Option<Range<usize>>,
}

impl AnnotatedToken {
    pub fn new(surface: impl Into<String>, pos: PosTag, dep_head: Option<usize>, dep_rel: DepRel) -> Self {
        AnnotatedToken {
            surface: surface.into(),
            pos,
            dep_head,
            dep_rel,
            subword_span: None,
        }
    }

    pub fn is_punct(&self) -> bool {
        self.pos.is_punct()
    }

    /// Bucketed signed distance from this token (at `index`) to its head.
    pub fn head_distance(&self, index: usize) -> HeadDistance {
        HeadDistance::between(index, self.dep_head)
    }
}

macro_rules! closed_tag_set {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Dense index, used as the embedding row.
            pub fn index(self) -> usize {
                self as usize
            }

            pub fn count() -> usize {
                Self::ALL.len()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} '{}'", stringify!($name), s)),
                }
            }
        }
    };
}

closed_tag_set! {
    /// Universal part-of-speech tags.
    PosTag {
        Adj => "ADJ",
        Adp => "ADP",
        Adv => "ADV",
        Aux => "AUX",
        Cconj => "CCONJ",
        Det => "DET",
        Intj => "INTJ",
        Noun => "NOUN",
        Num => "NUM",
        Part => "PART",
        Pron => "PRON",
        Propn => "PROPN",
        Punct => "PUNCT",
        Sconj => "SCONJ",
        Sym => "SYM",
        Verb => "VERB",
        X => "X",
    }
}

impl PosTag {
    pub fn is_punct(self) -> bool {
        self == PosTag::Punct
    }
}

closed_tag_set! {
    /// Universal dependency relations, without language-specific subtypes.
    DepRel {
        Acl => "acl",
        Advcl => "advcl",
        Advmod => "advmod",
        Amod => "amod",
        Appos => "appos",
        Aux => "aux",
        Case => "case",
        Cc => "cc",
        Ccomp => "ccomp",
        Clf => "clf",
        Compound => "compound",
        Conj => "conj",
        Cop => "cop",
        Csubj => "csubj",
        Dep => "dep",
        Det => "det",
        Discourse => "discourse",
        Dislocated => "dislocated",
        Expl => "expl",
        Fixed => "fixed",
        Flat => "flat",
        Goeswith => "goeswith",
        Iobj => "iobj",
        List => "list",
        Mark => "mark",
        Nmod => "nmod",
        Nsubj => "nsubj",
        Nummod => "nummod",
        Obj => "obj",
        Obl => "obl",
        Orphan => "orphan",
        Parataxis => "parataxis",
        Punct => "punct",
        Reparandum => "reparandum",
        Root => "root",
        Vocative => "vocative",
        Xcomp => "xcomp",
    }
}

impl DepRel {
    /// Parses a relation, dropping a `:subtype` suffix such as `nsubj:pass`.
    pub fn parse_lenient(s: &str) -> Result<Self, String> {
        let base = s.split(':').next().unwrap_or(s);
        base.parse()
    }
}

closed_tag_set! {
    /// Signed token distance from a dependent to its head, in six buckets.
    HeadDistance {
        LeftNear => "-8..-2",
        LeftAdjacent => "-1",
        Root => "root",
        RightAdjacent => "+1",
        RightNear => "+2..+8",
        Beyond => "beyond",
    }
}

impl HeadDistance {
    pub fn between(index: usize, head: Option<usize>) -> Self {
        let Some(head) = head else {
            return HeadDistance::Root;
        };
        let distance = head as i64 - index as i64;
        match distance {
            -8..=-2 => HeadDistance::LeftNear,
            -1 => HeadDistance::LeftAdjacent,
            0 => HeadDistance::Root,
            1 => HeadDistance::RightAdjacent,
            2..=8 => HeadDistance::RightNear,
            _ => HeadDistance::Beyond,
        }
    }
}

/// Checks that every head points inside the utterance.
pub fn validate_heads(tokens: &[AnnotatedToken]) -> Result<(), String> {
    for (i, token) in tokens.iter().enumerate() {
        if let Some(head) = token.dep_head {
            if head >= tokens.len() {
                return Err(format!(
                    "token {i} ('{}') has head {head} outside 0..{}",
                    token.surface,
                    tokens.len()
                ));
            }
        }
    }
    Ok(())
}
