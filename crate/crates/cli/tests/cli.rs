use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ntpcap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntpcap"))
        .current_dir(dir)
        .env_remove("NTPCAP_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.txt"), "a b d\na b e\na c d\n").unwrap();
    dir
}

#[test]
fn entropy_of_toy_corpus() {
    let dir = toy_dir();
    let o = ntpcap(dir.path(), &["entropy", "--corpus", "toy.txt"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("bound 3.29584"), "{s}");
    assert!(s.contains("n 4"), "{s}");
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ntpcap-out/entropy.run.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 0);
    assert_eq!(side["subcommand"], "entropy");
    assert!(side["version"].is_string());
    assert_eq!(side["config"]["truncate"], 10);
}

#[test]
fn bounds_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = ntpcap(dir.path(), &["bounds", "--k", "100", "--omega", "5", "--m", "10"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("general_upper 25\n"), "{s}");
    assert!(s.contains("lower 10\n"), "{s}");
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ntpcap(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(ntpcap(dir.path(), &["train", "--help"]).status.code(), Some(0));
    assert_eq!(ntpcap(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ntpcap(dir.path(), &["bounds", "--omega", "x", "--m", "1"]).status.code(), Some(2));
}

#[test]
fn operation_errors_are_json() {
    let dir = toy_dir();
    let o = ntpcap(dir.path(), &["entropy", "--corpus", "missing.txt"]);
    assert_eq!(o.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(line["error"], "io");

    let o = ntpcap(dir.path(), &["train", "--corpus", "toy.txt", "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(line["error"], "config");

    // Empirical rows with zero entries are boundary targets.
    let o = ntpcap(dir.path(), &["interpolate", "--corpus", "toy.txt"]);
    assert_eq!(o.status.code(), Some(1));
    let o = ntpcap(dir.path(), &["interpolate", "--corpus", "toy.txt", "--smoothing", "0.1"]);
    assert!(o.status.success());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = toy_dir();
    let runs = [
        vec!["sample", "--contexts", "40"],
        vec!["interpolate", "--omega", "4", "--n", "6"],
        vec!["ranklab", "--activation", "tanh", "--m", "3", "--n", "3", "--trials", "10"],
        vec!["train", "--corpus", "toy.txt", "--m", "4", "--iterations", "200"],
    ];
    let files = ["corpus.ids", "interpolation.json", "ranklab.csv", "checkpoints.csv"];
    for (args, file) in runs.iter().zip(files) {
        let mut outputs = Vec::new();
        for out in ["r1", "r2"] {
            let mut a: Vec<&str> = args.clone();
            a.extend(["--seed", "7", "--out", out]);
            let o = ntpcap(dir.path(), &a);
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            outputs.push(fs::read(dir.path().join(out).join(file)).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "{file}");
    }
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ntpcap"))
        .current_dir(dir.path())
        .env("NTPCAP_SEED", "42")
        .args(["bounds", "--omega", "182", "--m", "4"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("k 4978\n"));
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ntpcap-out/bounds.run.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 42);
}

#[test]
fn ingest_then_train_on_ids() {
    let dir = toy_dir();
    assert!(ntpcap(dir.path(), &["ingest", "--corpus", "toy.txt"]).status.success());
    assert_eq!(fs::read_to_string(dir.path().join("ntpcap-out/corpus.ids")).unwrap(), "1 2 3\n1 2 4\n1 5 3\n");
    let o = ntpcap(
        dir.path(),
        &["train", "--corpus", "ntpcap-out/corpus.ids", "--format", "ids", "--m", "8", "--set", "stepsize=0.01"],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("passed true"));
}
