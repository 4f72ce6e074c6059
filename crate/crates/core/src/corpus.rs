//! Labeled utterances, their TSV serialization, break labels derived from
//! word timings, and seeded train/validation/test splits.
//!
//! Corpus TSV: each utterance opens with `# id=<id>`, followed by one line
//! per token with tab-separated `surface POS head relation [label]`, where
//! `head` is 0-based and -1 marks the root. Utterances are separated by a
//! blank line.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lexfeat::{validate_heads, AnnotatedToken, Annotator, DepRel, PosTag};

pub const DEFAULT_THRESHOLD_MS: u64 = 200;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordTiming {
    pub surface: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl WordTiming {
    pub fn new(surface: impl Into<String>, start_ms: u64, end_ms: u64) -> Self {
        WordTiming {
            surface: surface.into(),
            start_ms,
            end_ms,
        }
    }
}

/// One sentence. `labels[i]` is true when a phrase break follows token `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<AnnotatedToken>,
    pub labels: Option<Vec<bool>>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, tokens: Vec<AnnotatedToken>, labels: Option<Vec<bool>>) -> Result<Self> {
        let utt = Utterance {
            id: id.into(),
            tokens,
            labels,
        };
        utt.validate()?;
        Ok(utt)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidUtterance {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() || self.id.contains(['\n', '\r']) {
            return Err(invalid("id must be non-empty and single-line".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.tokens.len() {
                return Err(invalid(format!(
                    "{} labels for {} tokens",
                    labels.len(),
                    self.tokens.len()
                )));
            }
        }
        validate_heads(&self.tokens).map_err(invalid)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn break_count(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().filter(|b| **b).count())
    }
}

fn check_timings(timings: &[WordTiming]) -> Result<()> {
    if timings.is_empty() {
        return Err(Error::Timing("no words".into()));
    }
    for (i, w) in timings.iter().enumerate() {
        if w.end_ms < w.start_ms {
            return Err(Error::Timing(format!(
                "word {i} ('{}') ends at {} before it starts at {}",
                w.surface, w.end_ms, w.start_ms
            )));
        }
    }
    for (i, pair) in timings.windows(2).enumerate() {
        if pair[1].start_ms < pair[0].end_ms {
            return Err(Error::Timing(format!(
                "word {} ('{}') starts at {} before word {i} ('{}') ends at {}",
                i + 1,
                pair[1].surface,
                pair[1].start_ms,
                pair[0].surface,
                pair[0].end_ms
            )));
        }
    }
    Ok(())
}

/// A word is followed by a break when the silence before the next word
/// lasts strictly longer than `threshold_ms`. The last word never is.
pub fn label_from_alignment(timings: &[WordTiming], threshold_ms: u64) -> Result<Vec<bool>> {
    if threshold_ms == 0 {
        return Err(Error::Timing("threshold must be positive".into()));
    }
    check_timings(timings)?;
    let mut labels: Vec<bool> = timings
        .windows(2)
        .map(|pair| pair[1].start_ms - pair[0].end_ms > threshold_ms)
        .collect();
    labels.push(false);
    Ok(labels)
}

fn parse_token_line(origin: &str, lineno: usize, line: &str) -> Result<(AnnotatedToken, Option<bool>)> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(4..=5).contains(&cols.len()) {
        return Err(Error::parse(
            origin,
            lineno,
            format!("expected 4 or 5 tab-separated columns, got {}", cols.len()),
        ));
    }
    if cols[0].is_empty() {
        return Err(Error::parse(origin, lineno, "empty surface"));
    }
    let pos: PosTag = cols[1].parse().map_err(|e: String| Error::parse(origin, lineno, e))?;
    let head: i64 = cols[2]
        .parse()
        .map_err(|_| Error::parse(origin, lineno, format!("bad head index '{}'", cols[2])))?;
    let head = match head {
        -1 => None,
        h if h >= 0 => Some(h as usize),
        h => return Err(Error::parse(origin, lineno, format!("bad head index {h}"))),
    };
    let rel: DepRel = cols[3].parse().map_err(|e: String| Error::parse(origin, lineno, e))?;
    let label = match cols.get(4) {
        None => None,
        Some(&"0") => Some(false),
        Some(&"1") => Some(true),
        Some(other) => {
            return Err(Error::parse(
                origin,
                lineno,
                format!("label must be 0 or 1, got '{other}'"),
            ))
        }
    };
    Ok((AnnotatedToken::new(cols[0], pos, head, rel), label))
}

struct Block {
    id: Option<String>,
    first_line: usize,
    tokens: Vec<AnnotatedToken>,
    labels: Vec<Option<bool>>,
}

fn finish_block(origin: &str, block: Block, seen: &mut HashSet<String>) -> Result<Utterance> {
    let id = block
        .id
        .ok_or_else(|| Error::parse(origin, block.first_line, "utterance block lacks '# id=' line"))?;
    let in_block = |message: String| Error::parse(origin, block.first_line, format!("utterance {id}: {message}"));
    if block.tokens.is_empty() {
        return Err(in_block("no tokens".into()));
    }
    let labeled = block.labels.iter().filter(|l| l.is_some()).count();
    let labels = if labeled == 0 {
        None
    } else if labeled == block.labels.len() {
        Some(block.labels.iter().map(|l| l.unwrap()).collect())
    } else {
        return Err(in_block(format!("{labeled} labels for {} tokens", block.tokens.len())));
    };
    if !seen.insert(id.clone()) {
        return Err(in_block("duplicate utterance id".into()));
    }
    let utt = Utterance {
        id: id.clone(),
        tokens: block.tokens,
        labels,
    };
    utt.validate().map_err(|e| in_block(e.to_string()))?;
    Ok(utt)
}

/// Parses corpus TSV text. `origin` names the source in error messages.
pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<Utterance>> {
    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    let mut block: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                utterances.push(finish_block(origin, b, &mut seen)?);
            }
            continue;
        }
        let current = block.get_or_insert_with(|| Block {
            id: None,
            first_line: lineno,
            tokens: Vec::new(),
            labels: Vec::new(),
        });
        // Comment lines never contain a tab; token lines always do.
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(id) = line.strip_prefix("# id=") {
                if current.id.is_some() || !current.tokens.is_empty() {
                    return Err(Error::parse(origin, lineno, "'# id=' inside an utterance block"));
                }
                if id.is_empty() {
                    return Err(Error::parse(origin, lineno, "empty utterance id"));
                }
                current.id = Some(id.to_string());
            }
            continue;
        }
        let (token, label) = parse_token_line(origin, lineno, line)?;
        current.tokens.push(token);
        current.labels.push(label);
    }
    if let Some(b) = block.take() {
        utterances.push(finish_block(origin, b, &mut seen)?);
    }
    Ok(utterances)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

fn check_writable(utt: &Utterance) -> Result<()> {
    utt.validate()?;
    if let Some(t) = utt
        .tokens
        .iter()
        .find(|t| t.surface.is_empty() || t.surface.contains(['\t', '\n', '\r']))
    {
        return Err(Error::InvalidUtterance {
            id: utt.id.clone(),
            message: format!("surface {:?} cannot be stored in TSV", t.surface),
        });
    }
    Ok(())
}

fn write_token_line(out: &mut String, token: &AnnotatedToken) {
    let head = token.dep_head.map_or(-1, |h| h as i64);
    write!(out, "{}\t{}\t{}\t{}", token.surface, token.pos, head, token.dep_rel).expect("writing to a string");
}

/// Serializes utterances, optionally appending an extra 0/1 column per token.
pub fn format_corpus(utterances: &[Utterance], extra: Option<&[Vec<bool>]>) -> Result<String> {
    let mut out = String::new();
    for (u, utt) in utterances.iter().enumerate() {
        check_writable(utt)?;
        if u > 0 {
            out.push('\n');
        }
        writeln!(out, "# id={}", utt.id).expect("writing to a string");
        let extra = extra.map(|e| &e[u]);
        for (i, token) in utt.tokens.iter().enumerate() {
            write_token_line(&mut out, token);
            if let Some(labels) = &utt.labels {
                out.push_str(if labels[i] { "\t1" } else { "\t0" });
            }
            if let Some(extra) = extra {
                out.push_str(if extra[i] { "\t1" } else { "\t0" });
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_corpus(utterances: &[Utterance], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_corpus(utterances, None)?.as_bytes())
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Word timings per utterance, as read from an alignment file: blocks
/// opened by `# id=`, one `surface start_ms end_ms` line per word, optionally
/// followed by `POS head relation` columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedUtterance {
    pub id: String,
    pub timings: Vec<WordTiming>,
    pub annotations: Option<Vec<AnnotatedToken>>,
}

pub fn parse_alignment(text: &str, origin: &str) -> Result<Vec<AlignedUtterance>> {
    let mut out: Vec<AlignedUtterance> = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<(AlignedUtterance, usize, Vec<Option<AnnotatedToken>>)> = None;
    let flush = |entry: Option<(AlignedUtterance, usize, Vec<Option<AnnotatedToken>>)>,
                 out: &mut Vec<AlignedUtterance>,
                 seen: &mut HashSet<String>|
     -> Result<()> {
        let Some((mut utt, line, annotations)) = entry else {
            return Ok(());
        };
        if utt.id.is_empty() {
            return Err(Error::parse(origin, line, "alignment block lacks '# id=' line"));
        }
        if utt.timings.is_empty() {
            return Err(Error::parse(origin, line, format!("utterance {} has no words", utt.id)));
        }
        if !seen.insert(utt.id.clone()) {
            return Err(Error::parse(origin, line, format!("duplicate utterance id {}", utt.id)));
        }
        let annotated = annotations.iter().filter(|a| a.is_some()).count();
        if annotated == annotations.len() {
            utt.annotations = Some(annotations.into_iter().map(Option::unwrap).collect());
        } else if annotated > 0 {
            return Err(Error::parse(
                origin,
                line,
                format!("utterance {}: mixed 3- and 6-column lines", utt.id),
            ));
        }
        out.push(utt);
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(current.take(), &mut out, &mut seen)?;
            continue;
        }
        let entry = current.get_or_insert_with(|| {
            (
                AlignedUtterance {
                    id: String::new(),
                    timings: Vec::new(),
                    annotations: None,
                },
                lineno,
                Vec::new(),
            )
        });
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(id) = line.strip_prefix("# id=") {
                entry.0.id = id.to_string();
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 && cols.len() != 6 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected 3 or 6 columns, got {}", cols.len()),
            ));
        }
        let ms = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad millisecond value '{s}'")))
        };
        entry
            .0
            .timings
            .push(WordTiming::new(cols[0], ms(cols[1])?, ms(cols[2])?));
        let annotation = if cols.len() == 6 {
            let fields = [cols[0], cols[3], cols[4], cols[5]].join("\t");
            Some(parse_token_line(origin, lineno, &fields)?.0)
        } else {
            None
        };
        entry.2.push(annotation);
    }
    flush(current.take(), &mut out, &mut seen)?;
    Ok(out)
}

/// Turns timed words into labeled utterances, tagging unannotated ones with
/// `annotator`.
pub fn label_alignments(
    aligned: &[AlignedUtterance],
    threshold_ms: u64,
    annotator: &dyn Annotator,
) -> Result<Vec<Utterance>> {
    aligned
        .iter()
        .map(|a| {
            let labels = label_from_alignment(&a.timings, threshold_ms).map_err(|e| Error::InvalidUtterance {
                id: a.id.clone(),
                message: e.to_string(),
            })?;
            let tokens = match &a.annotations {
                Some(tokens) => tokens.clone(),
                None => {
                    let words: Vec<&str> = a.timings.iter().map(|t| t.surface.as_str()).collect();
                    annotator.annotate_words(&words).map_err(|message| Error::Annotation {
                        id: a.id.clone(),
                        message,
                    })?
                }
            };
            Utterance::new(a.id.clone(), tokens, Some(labels))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<Utterance>,
    pub validation: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl CorpusSplit {
    /// `id<TAB>train|validation|test` lines, in corpus order of each part.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (name, part) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for utt in part {
                writeln!(out, "{}\t{name}", utt.id).expect("writing to a string");
            }
        }
        out
    }
}

/// Seeded random split. Each part keeps the original corpus order.
pub fn split_corpus(utterances: &[Utterance], sizes: (usize, usize, usize), seed: u64) -> Result<CorpusSplit> {
    let sum = sizes.0 + sizes.1 + sizes.2;
    if sum != utterances.len() {
        return Err(Error::SplitSize {
            sizes,
            sum,
            count: utterances.len(),
        });
    }
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| utterances[i].clone()).collect::<Vec<_>>()
    };
    Ok(CorpusSplit {
        train: pick(0..sizes.0),
        validation: pick(sizes.0..sizes.0 + sizes.1),
        test: pick(sizes.0 + sizes.1..sum),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexfeat::RuleAnnotator;
    use proptest::prelude::*;

    fn timings(spans: &[(u64, u64)]) -> Vec<WordTiming> {
        spans
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| WordTiming::new(format!("w{i}"), s, e))
            .collect()
    }

    #[test]
    fn labels_from_silences() {
        assert_eq!(
            label_from_alignment(&timings(&[(0, 100), (350, 500)]), 200).unwrap(),
            [true, false]
        );
        assert_eq!(
            label_from_alignment(&timings(&[(0, 100), (300, 500)]), 200).unwrap(),
            [false, false]
        );
        assert_eq!(
            label_from_alignment(&timings(&[(0, 100), (301, 500)]), 200).unwrap(),
            [true, false]
        );
        assert_eq!(label_from_alignment(&timings(&[(0, 400)]), 200).unwrap(), [false]);
    }

    #[test]
    fn bad_timings_are_rejected() {
        assert!(label_from_alignment(&[], 200).is_err());
        assert!(label_from_alignment(&timings(&[(0, 100), (50, 200)]), 200).is_err());
        assert!(label_from_alignment(&timings(&[(100, 50)]), 200).is_err());
        assert!(label_from_alignment(&timings(&[(0, 100)]), 0).is_err());
    }

    const THREE: &str = "# id=u1\n今日\tNOUN\t2\tnsubj\t0\nは\tADP\t0\tcase\t1\n晴れ\tVERB\t-1\troot\t0\n";

    #[test]
    fn reads_a_labeled_block() {
        let utts = parse_corpus(THREE, "mem").unwrap();
        assert_eq!(utts.len(), 1);
        assert_eq!(utts[0].tokens.len(), 3);
        assert_eq!(utts[0].labels.as_deref(), Some(&[false, true, false][..]));
        assert_eq!(utts[0].tokens[2].dep_head, None);
        assert_eq!(format_corpus(&utts, None).unwrap(), THREE);
    }

    #[test]
    fn empty_input_is_an_empty_corpus() {
        assert!(parse_corpus("", "mem").unwrap().is_empty());
        assert!(parse_corpus("\n\n", "mem").unwrap().is_empty());
        assert_eq!(format_corpus(&[], None).unwrap(), "");
    }

    #[test]
    fn unlabeled_blocks() {
        let text = "# id=x\n雨\tNOUN\t-1\troot\n";
        let utts = parse_corpus(text, "mem").unwrap();
        assert_eq!(utts[0].labels, None);
        assert_eq!(format_corpus(&utts, None).unwrap(), text);
    }

    #[test]
    fn parse_errors_name_the_utterance_and_line() {
        let missing = "# id=u7\na\tNOUN\t-1\troot\t0\nb\tNOUN\t0\tdep\t0\nc\tNOUN\t0\tdep\n";
        let err = parse_corpus(missing, "f.tsv").unwrap_err().to_string();
        assert!(err.contains("u7") && err.contains("f.tsv:1"), "{err}");

        let non_binary = "# id=u1\na\tNOUN\t-1\troot\t2\n";
        assert!(parse_corpus(non_binary, "f.tsv")
            .unwrap_err()
            .to_string()
            .contains("f.tsv:2"));

        let dup = "# id=u1\na\tNOUN\t-1\troot\t0\n\n# id=u1\nb\tNOUN\t-1\troot\t0\n";
        assert!(parse_corpus(dup, "f.tsv")
            .unwrap_err()
            .to_string()
            .contains("duplicate"));

        let bad_head = "# id=u1\na\tNOUN\t3\troot\t0\n";
        assert!(parse_corpus(bad_head, "f.tsv").is_err());

        let no_id = "a\tNOUN\t-1\troot\t0\n";
        assert!(parse_corpus(no_id, "f.tsv").is_err());

        let bad_pos = "# id=u1\na\tFOO\t-1\troot\t0\n";
        assert!(parse_corpus(bad_pos, "f.tsv").is_err());
    }

    #[test]
    fn hash_surfaces_are_tokens() {
        let text = "# id=h\n#\tSYM\t-1\troot\t0\n";
        let utts = parse_corpus(text, "mem").unwrap();
        assert_eq!(utts[0].tokens[0].surface, "#");
    }

    #[test]
    fn writing_rejects_unstorable_surfaces() {
        let mut utts = parse_corpus(THREE, "mem").unwrap();
        utts[0].tokens[0].surface = "a\tb".into();
        assert!(format_corpus(&utts, None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let utts = parse_corpus(THREE, "mem").unwrap();
        write_corpus(&utts, &path).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), utts);
        write_corpus(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        assert!(write_corpus(&utts, dir.path().join("missing/dir/c.tsv")).is_err());
    }

    #[test]
    fn alignment_file_to_corpus() {
        let text = "# id=a1\n今日\t0\t300\nは\t300\t400\n晴れ\t700\t900\n";
        let aligned = parse_alignment(text, "mem").unwrap();
        let utts = label_alignments(&aligned, 200, &RuleAnnotator).unwrap();
        assert_eq!(utts[0].labels.as_deref(), Some(&[false, true, false][..]));
        assert_eq!(utts[0].tokens[1].pos, PosTag::Adp);
        let lower = label_alignments(&aligned, 500, &RuleAnnotator).unwrap();
        assert_eq!(lower[0].labels.as_deref(), Some(&[false, false, false][..]));

        let annotated = "# id=a2\n雨\t0\t100\tNOUN\t-1\troot\n";
        let aligned = parse_alignment(annotated, "mem").unwrap();
        assert_eq!(aligned[0].annotations.as_ref().unwrap()[0].pos, PosTag::Noun);
        assert!(parse_alignment("# id=x\na\t1\n", "mem").is_err());
        assert!(parse_alignment("# id=x\na\t100\t50\n", "mem").is_ok());
        assert!(label_alignments(
            &parse_alignment("# id=x\na\t100\t50\n", "mem").unwrap(),
            200,
            &RuleAnnotator
        )
        .is_err());
    }

    fn corpus(n: usize) -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                Utterance::new(
                    format!("u{i}"),
                    vec![AnnotatedToken::new("雨", PosTag::Noun, None, DepRel::Root)],
                    Some(vec![false]),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn split_is_deterministic_and_covering() {
        let utts = corpus(10);
        let a = split_corpus(&utts, (8, 1, 1), 7).unwrap();
        let b = split_corpus(&utts, (8, 1, 1), 7).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<String> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.test)
            .map(|u| u.id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert_ne!(a, split_corpus(&utts, (8, 1, 1), 8).unwrap());
        assert_eq!(a.manifest().lines().count(), 10);
    }

    #[test]
    fn split_size_mismatch() {
        assert!(matches!(
            split_corpus(&corpus(10), (8, 1, 2), 7),
            Err(Error::SplitSize { .. })
        ));
    }

    #[test]
    fn full_corpus_split_sizes() {
        // The published subset sizes sum to 99,807 while the corpus size is
        // given as 99,907; the sizes must match the corpus exactly.
        let utts = corpus(99_907);
        assert!(matches!(
            split_corpus(&utts, (98_807, 500, 500), 1),
            Err(Error::SplitSize {
                sum: 99_807,
                count: 99_907,
                ..
            })
        ));
        let split = split_corpus(&utts, (98_907, 500, 500), 1).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (98_907, 500, 500)
        );
        let split = split_corpus(&utts[..99_807], (98_807, 500, 500), 1).unwrap();
        assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 99_807);
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(gaps in prop::collection::vec(0u64..600, 1..20), t1 in 1u64..500, dt in 0u64..300) {
            let mut spans = Vec::new();
            let mut t = 0;
            for g in &gaps {
                spans.push((t, t + 50));
                t += 50 + g;
            }
            let timings = timings(&spans);
            let low = label_from_alignment(&timings, t1).unwrap();
            let high = label_from_alignment(&timings, t1 + dt).unwrap();
            prop_assert_eq!(*low.last().unwrap(), false);
            for (l, h) in low.iter().zip(&high) {
                prop_assert!(!(*h && !*l));
            }
        }
    }
}
