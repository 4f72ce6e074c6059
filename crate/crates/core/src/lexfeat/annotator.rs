use std::io::Write;
use std::process::{Command, Stdio};

use super::{validate_heads, AnnotatedToken, DepRel, PosTag};
use crate::error::{Error, Result};

/// Tokenizer, POS tagger and dependency parser behind one interface.
///
/// Implementations must be usable from several threads at once.
pub trait Annotator: Send + Sync {
    /// Identifies the adapter and its version; stored in checkpoints.
    fn fingerprint(&self) -> String;

    fn annotate_text(&self, text: &str) -> Result<Vec<AnnotatedToken>, String>;

    /// Annotates an already tokenized sentence. The default runs the full
    /// pipeline on the concatenation and insists on identical tokenization.
    fn annotate_words(&self, words: &[&str]) -> Result<Vec<AnnotatedToken>, String> {
        let tokens = self.annotate_text(&words.concat())?;
        let surfaces: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
        if surfaces != words {
            return Err(format!("annotator tokenized as {surfaces:?}, expected {words:?}"));
        }
        Ok(tokens)
    }
}

/// Annotates one normalized sentence and checks the result.
pub fn annotate(id: &str, text: &str, annotator: &dyn Annotator) -> Result<Vec<AnnotatedToken>> {
    let fail = |message: String| Error::Annotation {
        id: id.to_string(),
        message,
    };
    if text.trim().is_empty() {
        return Err(fail("empty sentence".into()));
    }
    let tokens = annotator.annotate_text(text).map_err(fail)?;
    if tokens.is_empty() {
        return Err(fail("annotator produced no tokens".into()));
    }
    validate_heads(&tokens).map_err(fail)?;
    Ok(tokens)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CharClass {
    Kanji,
    Hiragana,
    Katakana,
    Latin,
    Digit,
    Punct,
    Space,
    Symbol,
}

fn classify(c: char) -> CharClass {
    let u = c as u32;
    match c {
        '々' | '〆' => CharClass::Kanji,
        '・' => CharClass::Punct,
        _ if c.is_whitespace() => CharClass::Space,
        _ if c.is_ascii_digit() || (0xFF10..=0xFF19).contains(&u) => CharClass::Digit,
        _ if c.is_ascii_alphabetic() || (0xFF21..=0xFF3A).contains(&u) || (0xFF41..=0xFF5A).contains(&u) => {
            CharClass::Latin
        }
        _ if (0x4E00..=0x9FFF).contains(&u) || (0x3400..=0x4DBF).contains(&u) => CharClass::Kanji,
        _ if (0x3041..=0x309F).contains(&u) => CharClass::Hiragana,
        _ if (0x30A0..=0x30FF).contains(&u) || (0x31F0..=0x31FF).contains(&u) || (0xFF66..=0xFF9F).contains(&u) => {
            CharClass::Katakana
        }
        _ if c.is_ascii_punctuation()
            || (0x3001..=0x303F).contains(&u)
            || (0xFF01..=0xFF0F).contains(&u)
            || (0xFF1A..=0xFF20).contains(&u)
            || (0xFF3B..=0xFF40).contains(&u)
            || (0xFF5B..=0xFF65).contains(&u)
            || c == '…' =>
        {
            CharClass::Punct
        }
        _ => CharClass::Symbol,
    }
}

/// Hiragana function words, matched longest first.
const FUNCTION_WORDS: &[(&str, PosTag)] = &[
    ("けれども", PosTag::Sconj),
    ("けれど", PosTag::Sconj),
    ("ながら", PosTag::Sconj),
    ("ました", PosTag::Aux),
    ("ません", PosTag::Aux),
    ("でした", PosTag::Aux),
    ("から", PosTag::Adp),
    ("まで", PosTag::Adp),
    ("より", PosTag::Adp),
    ("ので", PosTag::Sconj),
    ("のに", PosTag::Sconj),
    ("けど", PosTag::Sconj),
    ("たり", PosTag::Sconj),
    ("ます", PosTag::Aux),
    ("です", PosTag::Aux),
    ("ない", PosTag::Aux),
    ("たい", PosTag::Aux),
    ("は", PosTag::Adp),
    ("が", PosTag::Adp),
    ("を", PosTag::Adp),
    ("に", PosTag::Adp),
    ("で", PosTag::Adp),
    ("と", PosTag::Adp),
    ("へ", PosTag::Adp),
    ("の", PosTag::Adp),
    ("も", PosTag::Adp),
    ("や", PosTag::Adp),
    ("ば", PosTag::Sconj),
    ("て", PosTag::Sconj),
    ("だ", PosTag::Aux),
    ("た", PosTag::Aux),
    ("か", PosTag::Part),
    ("よ", PosTag::Part),
    ("ね", PosTag::Part),
];

fn function_word_at(chars: &[char]) -> Option<(usize, PosTag)> {
    FUNCTION_WORDS
        .iter()
        .filter_map(|(word, pos)| {
            let len = word.chars().count();
            (chars.len() >= len && word.chars().zip(chars).all(|(a, b)| a == *b)).then_some((len, *pos))
        })
        .max_by_key(|(len, _)| *len)
}

fn lookup_function_word(word: &str) -> Option<PosTag> {
    FUNCTION_WORDS.iter().find(|(w, _)| *w == word).map(|(_, pos)| *pos)
}

#[derive(Clone, Debug)]
struct Draft {
    surface: String,
    pos: PosTag,
    function: bool,
}

fn content_pos(surface: &str) -> PosTag {
    let classes: Vec<CharClass> = surface.chars().map(classify).collect();
    let has = |c: CharClass| classes.contains(&c);
    if has(CharClass::Digit) && classes.iter().all(|c| *c == CharClass::Digit) {
        PosTag::Num
    } else if has(CharClass::Latin) {
        PosTag::Propn
    } else if has(CharClass::Symbol) {
        PosTag::Sym
    } else if has(CharClass::Kanji) && has(CharClass::Hiragana) {
        PosTag::Verb
    } else if classes.iter().all(|c| *c == CharClass::Hiragana) {
        let last = surface.chars().last().unwrap_or(' ');
        if "うくすつぬふむゆるぐぶ".contains(last) {
            PosTag::Verb
        } else {
            PosTag::Adv
        }
    } else {
        PosTag::Noun
    }
}

fn draft_word(word: &str) -> Draft {
    if let Some(pos) = lookup_function_word(word) {
        return Draft {
            surface: word.to_string(),
            pos,
            function: true,
        };
    }
    let all_punct = word.chars().all(|c| classify(c) == CharClass::Punct);
    let pos = if all_punct { PosTag::Punct } else { content_pos(word) };
    Draft {
        surface: word.to_string(),
        pos,
        function: false,
    }
}

fn segment(text: &str) -> Vec<Draft> {
    let chars: Vec<char> = text.chars().collect();
    let mut drafts: Vec<Draft> = Vec::new();
    // Whether the last draft is a content word that okurigana may extend.
    let mut extendable = false;
    let mut i = 0;
    while i < chars.len() {
        let class = classify(chars[i]);
        match class {
            CharClass::Space => {
                extendable = false;
                i += 1;
            }
            CharClass::Punct => {
                drafts.push(Draft {
                    surface: chars[i].to_string(),
                    pos: PosTag::Punct,
                    function: false,
                });
                extendable = false;
                i += 1;
            }
            CharClass::Hiragana => {
                let start = i;
                while i < chars.len() && classify(chars[i]) == CharClass::Hiragana {
                    i += 1;
                }
                let run = &chars[start..i];
                let mut pending = String::new();
                let mut j = 0;
                while j < run.len() {
                    if let Some((len, pos)) = function_word_at(&run[j..]) {
                        flush_pending(&mut drafts, &mut pending, extendable);
                        drafts.push(Draft {
                            surface: run[j..j + len].iter().collect(),
                            pos,
                            function: true,
                        });
                        extendable = false;
                        j += len;
                    } else {
                        pending.push(run[j]);
                        j += 1;
                    }
                }
                if !pending.is_empty() {
                    flush_pending(&mut drafts, &mut pending, extendable);
                    extendable = false;
                }
            }
            _ => {
                let start = i;
                while i < chars.len() && classify(chars[i]) == class {
                    i += 1;
                }
                let surface: String = chars[start..i].iter().collect();
                drafts.push(Draft {
                    pos: content_pos(&surface),
                    surface,
                    function: false,
                });
                extendable = matches!(class, CharClass::Kanji | CharClass::Katakana);
            }
        }
    }
    drafts
}

fn flush_pending(drafts: &mut Vec<Draft>, pending: &mut String, extendable: bool) {
    if pending.is_empty() {
        return;
    }
    match drafts.last_mut() {
        Some(last) if extendable => {
            last.surface.push_str(pending);
            last.pos = content_pos(&last.surface);
        }
        _ => drafts.push(Draft {
            pos: content_pos(pending),
            surface: pending.clone(),
            function: false,
        }),
    }
    pending.clear();
}

/// Head-final attachment: content words head the next content word, the
/// last content word is the root, function words and punctuation attach to
/// the closest preceding content word.
fn attach(drafts: Vec<Draft>) -> Vec<AnnotatedToken> {
    let is_content = |d: &Draft| !d.function && d.pos != PosTag::Punct;
    let content: Vec<usize> = (0..drafts.len()).filter(|&i| is_content(&drafts[i])).collect();
    let mut tokens = Vec::with_capacity(drafts.len());
    for (i, draft) in drafts.iter().enumerate() {
        let (head, rel) = if is_content(draft) {
            match content.iter().find(|&&c| c > i) {
                None => (None, DepRel::Root),
                Some(&next) => {
                    let rel = match drafts.get(i + 1) {
                        Some(d) if d.function => match (d.pos, d.surface.as_str()) {
                            (PosTag::Adp, "は" | "が" | "も") => DepRel::Nsubj,
                            (PosTag::Adp, "を") => DepRel::Obj,
                            (PosTag::Adp, "の") => DepRel::Nmod,
                            (PosTag::Adp, _) => DepRel::Obl,
                            (PosTag::Sconj, _) => DepRel::Advcl,
                            _ => DepRel::Dep,
                        },
                        Some(d) if is_content(d) && draft.pos == PosTag::Noun && d.pos == PosTag::Noun => {
                            DepRel::Compound
                        }
                        _ => DepRel::Dep,
                    };
                    (Some(next), rel)
                }
            }
        } else {
            let rel = match draft.pos {
                PosTag::Punct => DepRel::Punct,
                PosTag::Adp => DepRel::Case,
                PosTag::Aux => DepRel::Aux,
                _ => DepRel::Mark,
            };
            let previous = content.iter().rev().find(|&&c| c < i);
            let next = content.iter().find(|&&c| c > i);
            match previous.or(next) {
                Some(&h) => (Some(h), rel),
                // No content word at all: chain everything to the first token.
                None if i == 0 => (None, DepRel::Root),
                None => (Some(0), rel),
            }
        };
        tokens.push(AnnotatedToken::new(draft.surface.clone(), draft.pos, head, rel));
    }
    tokens
}

/// Self-contained Japanese annotator: script-class segmentation with a
/// function-word lexicon, lexicon/script POS tags, head-final dependencies.
///
/// It needs no external dictionary. Its output is coarser than a
/// dictionary-based analyzer such as Sudachi/GiNZA, which can be plugged in
/// through [`CommandAnnotator`].
#[derive(Clone, Debug, Default)]
pub struct RuleAnnotator;

impl RuleAnnotator {
    pub const FINGERPRINT: &'static str = "rule-ja/1";
}

impl Annotator for RuleAnnotator {
    fn fingerprint(&self) -> String {
        Self::FINGERPRINT.to_string()
    }

    fn annotate_text(&self, text: &str) -> Result<Vec<AnnotatedToken>, String> {
        Ok(attach(segment(text)))
    }

    fn annotate_words(&self, words: &[&str]) -> Result<Vec<AnnotatedToken>, String> {
        if let Some(w) = words.iter().find(|w| w.is_empty()) {
            return Err(format!("empty word in {words:?} ({w:?})"));
        }
        Ok(attach(words.iter().map(|w| draft_word(w)).collect()))
    }
}

/// Runs an external analyzer that reads a sentence on stdin and writes
/// CoNLL-U on stdout (for example `ginza`).
#[derive(Clone, Debug)]
pub struct CommandAnnotator {
    program: String,
    args: Vec<String>,
}

impl CommandAnnotator {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandAnnotator {
            program: program.into(),
            args,
        }
    }

    /// Splits a command line on whitespace.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

impl Annotator for CommandAnnotator {
    fn fingerprint(&self) -> String {
        let mut fp = format!("cmd:{}", self.program);
        for arg in &self.args {
            fp.push(' ');
            fp.push_str(arg);
        }
        fp
    }

    fn annotate_text(&self, text: &str) -> Result<Vec<AnnotatedToken>, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start {}: {e}", self.program))?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin
                .write_all(text.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| format!("cannot write to {}: {e}", self.program))?;
        }
        let output = child
            .wait_with_output()
            .map_err(|e| format!("{} failed: {e}", self.program))?;
        if !output.status.success() {
            return Err(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ));
        }
        let stdout = String::from_utf8(output.stdout).map_err(|e| format!("non UTF-8 output: {e}"))?;
        parse_conllu(&stdout)
    }
}

/// Reads CoNLL-U into one token list; several sentences are concatenated
/// with their heads shifted accordingly.
pub fn parse_conllu(text: &str) -> Result<Vec<AnnotatedToken>, String> {
    let mut tokens = Vec::new();
    let mut offset = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            offset = tokens.len();
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(format!("line {}: expected 10 columns, got {}", lineno + 1, cols.len()));
        }
        // Multiword ranges (1-2) and empty nodes (1.1) carry no token.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let pos: PosTag = cols[3].parse().map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let head: usize = cols[6]
            .parse()
            .map_err(|_| format!("line {}: bad head '{}'", lineno + 1, cols[6]))?;
        let rel = DepRel::parse_lenient(cols[7]).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        let head = (head > 0).then(|| offset + head - 1);
        tokens.push(AnnotatedToken::new(cols[1], pos, head, rel));
    }
    validate_heads(&tokens)?;
    Ok(tokens)
}
