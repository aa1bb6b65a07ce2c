//! End-to-end checks of the command-line front end, both through the library
//! entry point and the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use lighthcg::cli::{self, Cli, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use clap::Parser;

const TINY: &str = r#"
seed = 5

[generate]
n = 80

[generate.render]
size = 16

[vae]
height = 16
width = 16
encoder_convs = [{ filters = 4, kernel = 3, stride = 2 }, { filters = 4, kernel = 3, stride = 2 }]
encoder_dense = [8]
decoder_dense = [8]
decoder_convs = [{ filters = 4, kernel = 3, stride = 2 }, { filters = 3, kernel = 3, stride = 2 }]

[train]
epochs = 3

[evaluate]
traversal_images = 10
grid_points = 3

[evaluate.classifier]
epochs = 5
"#;

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("lighthcg").chain(args.iter().copied()))
}

fn execute(args: &[&str]) -> lighthcg::Result<()> {
    cli::execute(Cli::try_parse_from(std::iter::once("lighthcg").chain(args.iter().copied())).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_layout_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["generate", "--config", s(&cfg), "--out", s(&a)]), EXIT_OK);
    assert_eq!(run(&["generate", "--config", s(&cfg), "--out", s(&b)]), EXIT_OK);
    for split in ["train", "test"] {
        for f in ["labels.csv", "factors.csv", "dag.json"] {
            assert!(a.join(split).join(f).is_file(), "{split}/{f}");
        }
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 2 * 3 + 80);
    assert!(ta == tb, "same seed must give a byte-identical tree");

    let c = tmp.path().join("c");
    assert_eq!(run(&["generate", "--config", s(&cfg), "--seed", "6", "--out", s(&c)]), EXIT_OK);
    assert!(tree(&c) != ta);
}

#[test]
fn invalid_split_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let err = execute(&["generate", "--split-ratio", "1.5", "--out", s(&out)]).unwrap_err();
    assert!(err.to_string().contains("split_ratio out of range"), "{err}");
    assert_eq!(run(&["generate", "--split-ratio", "1.5", "--out", s(&out)]), EXIT_RUNTIME);
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["train", "--epochs", "many"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn unknown_config_key() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "[train]\nepoch = 3\n").unwrap();
    let err = execute(&["generate", "--config", s(&p), "--out", s(tmp.path())]).unwrap_err();
    assert!(err.to_string().contains("epoch"), "{err}");
}

#[test]
fn train_evaluate_traverse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    assert_eq!(run(&["generate", "--config", s(&cfg), "--out", s(&data)]), EXIT_OK);

    assert_eq!(run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run_dir), "--epochs", "1"]), EXIT_OK);
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "header plus one epoch");
    for f in ["params.bin", "adjacency.csv", "config.toml"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let saved = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(saved.contains("epochs = 1"));

    assert_eq!(run(&["evaluate", "--config", s(&cfg), "--run", s(&run_dir), "--data", s(&data)]), EXIT_OK);
    let eval_dir = run_dir.join("evaluation");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    for k in ["accuracy", "recall", "precision", "f1", "auc"] {
        assert!(report["metrics"][k].is_number(), "{k}");
    }
    let n_mi = report["mi_z1"].as_array().unwrap().len() + report["mi_z2"].as_array().unwrap().len();
    assert_eq!(n_mi, 7);
    assert!(report["shd"].is_u64());
    assert!(eval_dir.join("traversal.png").is_file());

    let first = tree(&eval_dir);
    assert_eq!(run(&["evaluate", "--config", s(&cfg), "--run", s(&run_dir), "--data", s(&data)]), EXIT_OK);
    assert!(tree(&eval_dir) == first, "re-evaluation must be idempotent");

    assert_eq!(run(&["traverse", "--config", s(&cfg), "--run", s(&run_dir), "--data", s(&data)]), EXIT_OK);
    assert!(run_dir.join("traversal/traversal.png").is_file());

    // single-class test split
    let labels = data.join("test/labels.csv");
    let text = fs::read_to_string(&labels).unwrap();
    let flat: String = text.lines().enumerate().map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("{},0\n", l.split(',').next().unwrap()) }).collect();
    fs::write(&labels, flat).unwrap();
    assert_eq!(run(&["evaluate", "--config", s(&cfg), "--run", s(&run_dir), "--data", s(&data)]), EXIT_RUNTIME);
}

#[test]
fn train_missing_data() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run(&["train", "--data", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn evaluate_missing_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    fs::create_dir_all(&run_dir).unwrap();
    fs::write(run_dir.join("config.toml"), "").unwrap();
    let err = execute(&["evaluate", "--run", s(&run_dir), "--data", s(tmp.path())]).unwrap_err();
    assert!(matches!(err, lighthcg::Error::MissingFile(ref p) if p.ends_with("params.bin")), "{err}");
}

#[test]
fn discover_linear_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("tab");
    assert_eq!(run(&["generate", "--tabular", "--n", "1000", "--seed", "1", "--out", s(&data)]), EXIT_OK);
    let out = tmp.path().join("disc");
    let csv = data.join("samples.csv");
    let truth = data.join("dag.json");
    assert_eq!(run(&["discover", "--seed", "1", "--data", s(&csv), "--truth", s(&truth), "--out", s(&out)]), EXIT_OK);
    let shd: usize = fs::read_to_string(out.join("shd.txt")).unwrap().trim().parse().unwrap();
    assert!(shd <= 1, "SHD {shd}");
    let binary = fs::read_to_string(out.join("adjacency_binary.csv")).unwrap();
    assert_eq!(binary.lines().count(), 4);
}

#[test]
fn discover_single_column() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("one.csv");
    fs::write(&csv, "x\n0.1\n-0.4\n1.3\n0.7\n2.2\n").unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run(&["discover", "--data", s(&csv), "--epochs", "5", "--out", s(&out)]), EXIT_OK);
    assert_eq!(fs::read_to_string(out.join("adjacency_binary.csv")).unwrap().trim(), "0");
}

#[test]
fn discover_rejects_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    fs::write(&csv, "a,b\n1,2\n3,oops\n").unwrap();
    let err = execute(&["discover", "--data", s(&csv), "--out", s(tmp.path())]).unwrap_err();
    match err {
        lighthcg::Error::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }

    let good = tmp.path().join("good.csv");
    fs::write(&good, "1,2\n3,4\n5,7\n").unwrap();
    let truth = tmp.path().join("dag.json");
    fs::write(&truth, serde_json::to_string(&lighthcg::scm_synth::GroundTruthDag::fundus()).unwrap()).unwrap();
    let code = run(&["discover", "--data", s(&good), "--truth", s(&truth), "--epochs", "2", "--out", s(tmp.path())]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_lighthcg");
    let help = Command::new(exe).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["generate", "train", "discover", "evaluate", "traverse"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let sub_help = String::from_utf8_lossy(&Command::new(exe).args(["discover", "--help"]).output().unwrap().stdout).to_string();
    for flag in ["--config", "--seed", "--data", "--out", "--epochs", "--keep-fraction", "--truth"] {
        assert!(sub_help.contains(flag), "{flag} missing from discover help");
    }
    assert_eq!(Command::new(exe).arg("bogus").output().unwrap().status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let missing = Command::new(exe)
        .args(["train", "--data", s(&tmp.path().join("none")), "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));
}
