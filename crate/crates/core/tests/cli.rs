mod common;

use std::fs;
use std::path::Path;

use phrase_break::cli::{self, EXIT_FAILURE, EXIT_USAGE};
use phrase_break::corpus::{read_corpus, write_corpus};
use phrase_break::synthetic::{alignment_text, generate, SyntheticConfig};

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn pbreak(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["pbreak"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn rule_based_markup() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "今日は、晴れ。\n").unwrap();
    let o = pbreak(&["predict", "--system", "rule-based", "--in", &s(&input)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout, "今日 は 、<pause/> 晴れ 。\n");
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "\n\n").unwrap();
    let o = pbreak(&["predict", "--system", "rule-based", "--in", &s(&input)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout, "");
}

#[test]
fn tsv_prediction_keeps_gold_and_adds_column() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.tsv");
    let utts = generate(&SyntheticConfig::new(5, 1)).unwrap();
    write_corpus(&utts, &gold).unwrap();
    let pred = dir.path().join("pred.tsv");
    let o = pbreak(&[
        "predict",
        "--system",
        "rule-based",
        "--in",
        &s(&gold),
        "--format",
        "tsv",
        "--out",
        &s(&pred),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let text = fs::read_to_string(&pred).unwrap();
    let gold_text = fs::read_to_string(&gold).unwrap();
    let rows = |t: &str| t.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count();
    assert_eq!(rows(&text), rows(&gold_text));
    let o = pbreak(&["eval", "--pred", &s(&pred), "--gold", &s(&gold)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(
        o.stdout.contains("[overall]") && o.stdout.contains("[by punctuation]"),
        "{}",
        o.stdout
    );
}

#[test]
fn exit_codes() {
    assert_eq!(pbreak(&[]).code, EXIT_USAGE);
    assert_eq!(pbreak(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(pbreak(&["--help"]).code, 0);
    let o = pbreak(&["predict", "--system", "rule-based", "--in", "/nonexistent/input.txt"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(!o.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "今日は晴れ。\n").unwrap();
    let o = pbreak(&["predict", "--system", "bilstm-sideways", "--in", &s(&input)]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(
        o.stderr.contains("rule-based") && o.stderr.contains("bilstm-features+lm"),
        "{}",
        o.stderr
    );

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "# id=a\nx\tNOUN\t-1\troot\tmaybe\n\n").unwrap();
    let o = pbreak(&["eval", "--system", "rule-based", "--gold", &s(&bad)]);
    assert_eq!(o.code, EXIT_FAILURE, "{}", o.stderr);
}

#[test]
fn rule_based_cannot_be_trained() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbreak(&[
        "train",
        "--system",
        "rule-based",
        "--corpus",
        &s(dir.path()),
        "--out",
        &s(&dir.path().join("c")),
    ]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("rule-based requires no training"), "{}", o.stderr);
}

#[test]
fn corpus_command_labels_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let utts = generate(&SyntheticConfig::new(30, 4)).unwrap();
    let alignment = dir.path().join("align.txt");
    fs::write(&alignment, alignment_text(&utts)).unwrap();
    let out = dir.path().join("corpus");
    let o = pbreak(&[
        "corpus",
        "--in",
        &s(&alignment),
        "--out",
        &s(&out),
        "--split",
        "20,5,5",
        "--seed",
        "2",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("utterances=30"), "{}", o.stdout);
    assert_eq!(read_corpus(out.join("corpus.tsv")).unwrap(), utts);
    let sizes: Vec<usize> = ["train", "validation", "test"]
        .iter()
        .map(|n| read_corpus(out.join(format!("{n}.tsv"))).unwrap().len())
        .collect();
    assert_eq!(sizes, [20, 5, 5]);

    let o = pbreak(&["corpus", "--in", &s(&alignment), "--out", &s(&out), "--split", "20,5,4"]);
    assert_ne!(o.code, 0);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let utts = generate(&SyntheticConfig::new(24, 5)).unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    write_corpus(&utts[..16], corpus.join("train.tsv")).unwrap();
    write_corpus(&utts[16..], corpus.join("validation.tsv")).unwrap();
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        "# desk run\ntrain.max-epochs=2\ntrain.patience=1\ntrain.bilstm-hidden=4\ntrain.token-embedding-dim=4\n\
         train.classifier-hidden=4\nseed=9\nlr=0.01\n",
    )
    .unwrap();
    let ckpt = dir.path().join("ckpt");
    let o = pbreak(&[
        "--config",
        &s(&config),
        "train",
        "--system",
        "bilstm-tokens",
        "--corpus",
        &s(&corpus),
        "--out",
        &s(&ckpt),
        "--max-epochs",
        "1",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(
        o.stdout.lines().filter(|l| l.starts_with("epoch=")).count(),
        1,
        "{}",
        o.stdout
    );
    let saved = fs::read_to_string(ckpt.join("config.txt")).unwrap();
    assert!(saved.contains("seed=9"), "{saved}");
    assert!(saved.contains("\nbilstm.hidden_per_direction=4\n"), "{saved}");
    assert!(saved.contains("\nclassifier_hidden=4\n"), "{saved}");
    assert!(ckpt.join("train_report.json").exists());

    let input = dir.path().join("in.txt");
    fs::write(&input, "学校に行きました。\n").unwrap();
    let o = pbreak(&["predict", "--checkpoint", &s(&ckpt), "--in", &s(&input)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout.lines().count(), 1);
}
