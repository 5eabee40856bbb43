use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use semparse::cli::{run, ModelArchive};
use semparse::corpus::ParallelCorpus;

fn cli(args: &[&str], stdin: &str) -> (i32, String, String) {
    let mut argv = vec!["semparse"];
    argv.extend_from_slice(args);
    let mut input = stdin.as_bytes();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(argv, &mut input, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy(dir: &Path) -> PathBuf {
    let path = dir.join("toy.tsv");
    let (code, _, err) = cli(
        &[
            "make-toy",
            "--entities",
            "5",
            "--relations",
            "4",
            "--seed",
            "2",
            "--out",
            s(&path),
        ],
        "",
    );
    assert_eq!(code, 0, "{err}");
    path
}

/// Small quick model; `epochs` sized for an overfit when large.
fn train(dir: &Path, corpus: &Path, name: &str, epochs: (usize, usize)) -> PathBuf {
    let model = dir.join(name);
    let report = dir.join(format!("{name}.report"));
    let (e1, e2) = (epochs.0.to_string(), epochs.1.to_string());
    let (code, _, err) = cli(
        &[
            "train",
            "--corpus",
            s(corpus),
            "--model",
            s(&model),
            "--report",
            s(&report),
            "--dim",
            "8",
            "--seed",
            "2",
            "--bicvm-epochs",
            &e1,
            "--cnlm-epochs",
            &e2,
        ],
        "",
    );
    assert_eq!(code, 0, "{err}");
    model
}

#[test]
fn train_writes_model_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy(dir.path());
    let model = train(dir.path(), &corpus, "m.model", (5, 5));
    assert!(model.exists());
    let report = fs::read_to_string(dir.path().join("m.model.report")).unwrap();
    let mut lines = report.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# semparse train report started_unix="));
    for key in [
        "final_hinge ",
        "final_nll ",
        "final_retrieval ",
        "bicvm_epoch 5 ",
        "cnlm_epoch 5 ",
    ] {
        assert!(
            report.lines().any(|l| l.starts_with(key)),
            "missing {key:?} in\n{report}"
        );
    }
    // only the declared outputs were written
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["m.model", "m.model.report", "toy.tsv"]);
}

#[test]
fn report_goes_to_stdout_without_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy(dir.path());
    let model = dir.path().join("m");
    let (code, out, _) = cli(
        &[
            "train",
            "--corpus",
            s(&corpus),
            "--model",
            s(&model),
            "--dim",
            "4",
            "--bicvm-epochs",
            "2",
            "--cnlm-epochs",
            "2",
        ],
        "",
    );
    assert_eq!(code, 0);
    assert!(out.contains("final_nll "));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "dim = 4\nlearnin_rate = 0.1\n").unwrap();
    let (code, _, err) = cli(&["train", "--config", s(&config)], "");
    assert_ne!(code, 0);
    assert!(err.contains("learnin_rate"), "{err}");
    let (code, _, err) = cli(&["train", "--set", "bogus=1"], "");
    assert_ne!(code, 0);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn missing_corpus_is_reported() {
    let (code, _, err) = cli(&["train", "--model", "/nonexistent/m"], "");
    assert_ne!(code, 0);
    assert!(err.contains("corpus"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy(dir.path());
    let model = dir.path().join("m");
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        format!(
            "# quick run\ncorpus = {}\nmodel = {}\ndim = 4\nbicvm_epochs = 2\ncnlm_epochs = 2\nbeam = 3\n",
            corpus.display(),
            model.display()
        ),
    )
    .unwrap();
    let (code, _, err) = cli(
        &[
            "train",
            "--config",
            s(&config),
            "--dim",
            "6",
            "--context-n",
            "2",
        ],
        "",
    );
    assert_eq!(code, 0, "{err}");
    let archive = ModelArchive::load(&model).unwrap();
    assert_eq!(archive.parser.dim(), 6);
    assert_eq!(archive.parser.cnlm.order(), 2);
    assert_eq!(archive.parser.decode.width, 3);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy(dir.path());
    let a = train(dir.path(), &corpus, "a", (10, 10));
    let b = train(dir.path(), &corpus, "b", (10, 10));
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn generate_contract() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy(dir.path());
    let model = train(dir.path(), &corpus, "m", (5, 5));

    let (code, out, _) = cli(&["generate", "--model", s(&model)], "");
    assert_eq!(code, 0);
    assert_eq!(out, "");

    let input = "who foo bar\nwho foo bar\n\nwhat is this\n";
    let (code, out, _) = cli(&["generate", "--model", s(&model)], input);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], lines[1]);
    assert_eq!(lines[2], "");
    let (query, lp) = lines[3].split_once('\t').unwrap();
    assert!(!query.contains('\t'));
    assert!(lp.parse::<f64>().unwrap() <= 0.0);

    let questions = dir.path().join("q.txt");
    fs::write(&questions, input).unwrap();
    let (_, from_file, _) = cli(
        &["generate", "--model", s(&model), "--input", s(&questions)],
        "",
    );
    assert_eq!(from_file, out);

    let (code, greedy, _) = cli(
        &["generate", "--model", s(&model), "--decode", "greedy"],
        "who foo bar\n",
    );
    assert_eq!(code, 0);
    assert_eq!(greedy.lines().count(), 1);
}

#[test]
fn generate_rejects_bad_models() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy(dir.path());
    let model = train(dir.path(), &corpus, "m", (2, 2));

    let (code, _, err) = cli(
        &["generate", "--model", s(&dir.path().join("absent"))],
        "x\n",
    );
    assert_ne!(code, 0);
    assert!(err.contains("absent"), "{err}");

    let text = fs::read_to_string(&model).unwrap();
    let truncated = dir.path().join("truncated");
    fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    let (code, out, _) = cli(&["generate", "--model", s(&truncated)], "who\n");
    assert_ne!(code, 0);
    assert_eq!(out, "");

    let (code, _, err) = cli(&["generate", "--model", s(&model), "--dim", "16"], "who\n");
    assert_ne!(code, 0);
    assert!(err.contains("dimension"), "{err}");
}

#[test]
fn overfit_model_regenerates_training_queries() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = toy(dir.path());
    let model = train(dir.path(), &corpus_path, "m", (100, 400));
    let (corpus, _) = ParallelCorpus::load(&corpus_path).unwrap();
    let input: String = corpus
        .pairs()
        .iter()
        .map(|p| p.question.join(" ") + "\n")
        .collect();
    let (code, out, _) = cli(&["generate", "--model", s(&model)], &input);
    assert_eq!(code, 0);
    let hits = out
        .lines()
        .zip(corpus.pairs())
        .filter(|(line, pair)| line.split('\t').next().unwrap() == pair.query.join(" "))
        .count();
    assert!(hits * 10 >= corpus.len() * 9, "{hits}/{}", corpus.len());

    let (code, report, _) = cli(
        &[
            "evaluate",
            "--model",
            s(&model),
            "--corpus",
            s(&corpus_path),
        ],
        "",
    );
    assert_eq!(code, 0);
    assert!(report.starts_with("exact_match_rate "));
    assert!(report.contains(&format!("matches {hits}/{}", corpus.len())));
    assert_eq!(
        report
            .lines()
            .filter(|l| l.starts_with("ok\t") || l.starts_with("diff\t"))
            .count(),
        corpus.len()
    );
    assert!(report.contains("retrieval_accuracy 1\n"), "{report}");
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let (code, out, _) = cli(&["gradcheck", "--instances", "5"], "");
    assert_eq!(code, 0, "{out}");
    let class_lines = out.lines().filter(|l| l.ends_with(" ok")).count();
    assert!(class_lines >= 6, "{out}");
    assert!(out.trim_end().ends_with("PASS"));

    let (code, out, err) = cli(
        &["gradcheck", "--instances", "2", "--corrupt", "cnlm/R"],
        "",
    );
    assert_ne!(code, 0);
    assert!(out.contains("FAIL"));
    assert!(err.contains("gradient check failed"));
}

#[test]
fn usage_errors() {
    let (code, _, err) = cli(&["frobnicate"], "");
    assert_eq!(code, 2);
    assert!(!err.is_empty());
    let (code, out, _) = cli(&["--help"], "");
    assert_eq!(code, 0);
    for cmd in ["train", "generate", "evaluate", "gradcheck", "make-toy"] {
        assert!(out.contains(cmd), "{out}");
    }
    assert!(!out.contains("corrupt"));
}

#[test]
fn binary_round_trip() {
    let bin = env!("CARGO_BIN_EXE_semparse");
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.tsv");
    let status = Command::new(bin)
        .args([
            "make-toy",
            "--entities",
            "3",
            "--relations",
            "2",
            "--out",
            s(&corpus),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let model = dir.path().join("m");
    let out = Command::new(bin)
        .args([
            "train",
            "--corpus",
            s(&corpus),
            "--model",
            s(&model),
            "--dim",
            "4",
            "--bicvm-epochs",
            "3",
            "--cnlm-epochs",
            "3",
            "--autoencoder",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ModelArchive::load(&model).unwrap().parser.autoencoder);
    let out = Command::new(bin)
        .args(["generate", "--model", "/definitely/missing"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
