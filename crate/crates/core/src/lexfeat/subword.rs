use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::AnnotatedToken;
use crate::error::{Error, Result};

const CONTINUATION: &str = "##";

/// One LM vocabulary unit together with the characters it stands for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subword {
    pub id: u32,
    /// Vocabulary entry, including any continuation marker.
    pub piece: String,
    /// Source characters covered by this unit (markers stripped; for the
    /// unknown unit, the whole word).
    pub text: String,
}

/// Greedy longest-match-first WordPiece over pre-tokenized words, using a
/// BERT-style `vocab.txt`.
#[derive(Clone, Debug)]
pub struct WordPiece {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
    cls: u32,
    sep: u32,
    pad: u32,
    max_chars_per_word: usize,
}

impl WordPiece {
    pub const PAD: &'static str = "[PAD]";
    pub const UNK: &'static str = "[UNK]";
    pub const CLS: &'static str = "[CLS]";
    pub const SEP: &'static str = "[SEP]";
    pub const MASK: &'static str = "[MASK]";

    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, piece) in pieces.iter().enumerate() {
            index.entry(piece.clone()).or_insert(i as u32);
        }
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("subword vocabulary lacks {name}")))
        };
        Ok(WordPiece {
            unk: special(Self::UNK)?,
            cls: special(Self::CLS)?,
            sep: special(Self::SEP)?,
            pad: special(Self::PAD)?,
            pieces,
            index,
            max_chars_per_word: 100,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_pieces(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    /// Character vocabulary covering every character of `texts`, each as a
    /// word-initial and as a continuation piece.
    pub fn char_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let chars: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        let mut pieces: Vec<String> = [Self::PAD, Self::UNK, Self::CLS, Self::SEP, Self::MASK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        pieces.extend(chars.iter().map(|c| c.to_string()));
        pieces.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));
        Self::from_pieces(pieces).expect("special pieces are present")
    }

    pub fn to_vocab_text(&self) -> String {
        let mut out = self.pieces.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for piece in &self.pieces {
            hasher.update(piece.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn tokenize_word(&self, word: &str) -> Vec<Subword> {
        let chars: Vec<char> = word.chars().collect();
        let unknown = || {
            vec![Subword {
                id: self.unk,
                piece: Self::UNK.to_string(),
                text: word.to_string(),
            }]
        };
        if chars.is_empty() {
            return Vec::new();
        }
        if chars.len() > self.max_chars_per_word {
            return unknown();
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let text: String = chars[start..end].iter().collect();
                let piece = if start > 0 {
                    format!("{CONTINUATION}{text}")
                } else {
                    text.clone()
                };
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(Subword { id, piece, text });
                    break;
                }
                end -= 1;
            }
            match found {
                Some(sub) => {
                    out.push(sub);
                    start = end;
                }
                None => return unknown(),
            }
        }
        out
    }

    /// Subwords for a token sequence, without boundary markers.
    pub fn tokenize(&self, tokens: &[AnnotatedToken]) -> Vec<Subword> {
        tokens.iter().flat_map(|t| self.tokenize_word(&t.surface)).collect()
    }
}

/// Spans of subword indices, one per word token, partitioning the subwords.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordAlignment {
    pub spans: Vec<Range<usize>>,
}

impl SubwordAlignment {
    pub fn subword_count(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn is_partition(&self) -> bool {
        let mut next = 0;
        for span in &self.spans {
            if span.start != next || span.end <= span.start {
                return false;
            }
            next = span.end;
        }
        true
    }

    pub fn apply(&self, tokens: &mut [AnnotatedToken]) {
        for (token, span) in tokens.iter_mut().zip(&self.spans) {
            token.subword_span = Some(span.clone());
        }
    }
}

/// Maps each token onto the run of subwords covering exactly its characters.
pub fn align_subwords(tokens: &[AnnotatedToken], subwords: &[Subword]) -> Result<SubwordAlignment> {
    let mismatch = || Error::Alignment {
        tokens: tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" "),
        subwords: subwords.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "),
    };
    let token_text: String = tokens.iter().map(|t| t.surface.as_str()).collect();
    let subword_text: String = subwords.iter().map(|s| s.text.as_str()).collect();
    if token_text != subword_text || subwords.iter().any(|s| s.text.is_empty()) {
        return Err(mismatch());
    }
    let mut spans = Vec::with_capacity(tokens.len());
    let mut next = 0;
    let mut covered = 0;
    let mut token_end = 0;
    for token in tokens {
        token_end += token.surface.chars().count();
        let start = next;
        while covered < token_end {
            covered += subwords[next].text.chars().count();
            next += 1;
        }
        if covered != token_end || next == start {
            return Err(mismatch());
        }
        spans.push(start..next);
    }
    Ok(SubwordAlignment { spans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexfeat::{DepRel, PosTag};
    use proptest::prelude::*;

    fn tokens(surfaces: &[&str]) -> Vec<AnnotatedToken> {
        surfaces
            .iter()
            .map(|s| AnnotatedToken::new(*s, PosTag::Noun, None, DepRel::Root))
            .collect()
    }

    fn subwords(texts: &[&str]) -> Vec<Subword> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Subword {
                id: i as u32,
                piece: t.to_string(),
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn merges_subwords_into_tokens() {
        let a = align_subwords(&tokens(&["AB", "C"]), &subwords(&["A", "B", "C"])).unwrap();
        assert_eq!(a.spans, vec![0..2, 2..3]);
    }

    #[test]
    fn identity_alignment() {
        let a = align_subwords(&tokens(&["x", "yy", "z"]), &subwords(&["x", "yy", "z"])).unwrap();
        assert_eq!(a.spans, vec![0..1, 1..2, 2..3]);
    }

    #[test]
    fn single_token_two_subwords() {
        let a = align_subwords(&tokens(&["ABC"]), &subwords(&["A", "BC"])).unwrap();
        assert_eq!(a.spans, vec![0..2]);
    }

    #[test]
    fn mismatches_are_errors() {
        assert!(align_subwords(&tokens(&["AB"]), &subwords(&["A", "C"])).is_err());
        // straddling subword
        assert!(align_subwords(&tokens(&["AB", "C"]), &subwords(&["A", "BC"])).is_err());
        let err = align_subwords(&tokens(&["AB"]), &subwords(&["AB", "D"])).unwrap_err();
        assert!(err.to_string().contains("AB D"));
    }

    #[test]
    fn wordpiece_longest_match() {
        let vocab = WordPiece::from_pieces(
            [
                "[PAD]",
                "[UNK]",
                "[CLS]",
                "[SEP]",
                "東京",
                "東",
                "##京",
                "##タワー",
                "タ",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
        .unwrap();
        let subs = vocab.tokenize_word("東京タワー");
        assert_eq!(
            subs.iter().map(|s| s.piece.as_str()).collect::<Vec<_>>(),
            ["東京", "##タワー"]
        );
        assert_eq!(subs[1].text, "タワー");
        let unk = vocab.tokenize_word("大阪");
        assert_eq!(unk.len(), 1);
        assert_eq!(unk[0].id, 1);
        assert_eq!(unk[0].text, "大阪");
    }

    #[test]
    fn missing_special_pieces() {
        assert!(WordPiece::from_pieces(vec!["a".into()]).is_err());
    }

    #[test]
    fn char_vocab_covers_text() {
        let vocab = WordPiece::char_vocab(["今日は", "晴れ"]);
        let toks = tokens(&["今日", "は", "晴れ", "雨"]);
        let subs = vocab.tokenize(&toks);
        let alignment = align_subwords(&toks, &subs).unwrap();
        assert_eq!(alignment.spans, vec![0..2, 2..3, 3..5, 5..6]);
        assert_eq!(subs[5].piece, "[UNK]");
    }

    proptest! {
        #[test]
        fn spans_partition_the_subwords(words in prop::collection::vec("[a-e]{1,6}", 1..12), cuts in prop::collection::vec(any::<bool>(), 80)) {
            // Split every word at random character boundaries.
            let toks = tokens(&words.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let mut pieces = Vec::new();
            let mut k = 0;
            for w in &words {
                let mut current = String::new();
                for c in w.chars() {
                    if !current.is_empty() && cuts[k % cuts.len()] {
                        pieces.push(std::mem::take(&mut current));
                    }
                    k += 1;
                    current.push(c);
                }
                pieces.push(current);
            }
            let subs = subwords(&pieces.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let alignment = align_subwords(&toks, &subs).unwrap();
            prop_assert!(alignment.is_partition());
            prop_assert_eq!(alignment.subword_count(), subs.len());
            prop_assert_eq!(alignment.spans.len(), toks.len());
            for (tok, span) in toks.iter().zip(&alignment.spans) {
                let covered: String = subs[span.clone()].iter().map(|s| s.text.as_str()).collect();
                prop_assert_eq!(&covered, &tok.surface);
            }
        }
    }
}
