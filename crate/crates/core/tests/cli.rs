use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dal_core::cli::{RunManifest, SummaryDocument, CSV_HEADER};
use dal_core::data::load_column_format;
use dal_core::plot::{legend_entries, parse_mean_polylines};

fn dal(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dal")).current_dir(cwd).args(args).output().expect("spawn dal")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const TAGGING_SPEC: &str = r#"
kind = "desk-tagging"
num_sentences = 250
seed = 3
"#;

const COLUMN_RUN: &str = r#"
[experiment]
name = "column"
seeds = [4, 5]
stop = 0.2

[data.source]
kind = "column"
path = "corpus/data.conll"

[model]
architecture = "window-tagger"
hidden = [12]

[train]
learning_rate = 0.03

[matrix]
acquisition = ["random", "mnlp"]
"#;

#[test]
fn generate_run_rerun_plot_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let project = root.join("project");
    fs::create_dir_all(&project).unwrap();
    fs::write(project.join("spec.toml"), TAGGING_SPEC).unwrap();
    ok(&dal(&project, &["gen-data", "spec.toml", "--out", "corpus"]));
    let corpus = load_column_format(project.join("corpus/data.conll")).unwrap();
    assert_eq!(corpus.examples.len(), 250);
    assert!(project.join("corpus/metadata.json").is_file());

    // Relative data paths resolve against the config file, not the working directory.
    fs::write(project.join("run.toml"), COLUMN_RUN).unwrap();
    ok(&dal(root, &["run", "project/run.toml", "--out", "first"]));
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(root.join("first/manifest.json")).unwrap()).unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.runs.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["random", "mnlp"]);

    let rounds = fs::read_to_string(root.join("first/mnlp/rounds.csv")).unwrap();
    let mut lines = rounds.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 10);
    assert!(rows.iter().all(|r| r.len() == 9 && r[5] == "span_f1" && r[8] == "0"));

    // A rerun from the manifest, from another working directory, matches byte for byte.
    let elsewhere = root.join("elsewhere");
    fs::create_dir_all(&elsewhere).unwrap();
    let manifest_path = root.join("first/manifest.json");
    ok(&dal(&elsewhere, &["run", manifest_path.to_str().unwrap(), "--out", "second", "--workers", "2"]));
    for cell in ["random", "mnlp"] {
        for file in ["rounds.csv", "acquired.csv", "summary.json"] {
            let a = fs::read(root.join("first").join(cell).join(file)).unwrap();
            let b = fs::read(elsewhere.join("second").join(cell).join(file)).unwrap();
            assert!(a == b, "{cell}/{file} differs");
        }
    }

    ok(&dal(root, &["plot", "first/summary.json", "--out", "plots/curves.svg"]));
    let svg = fs::read_to_string(root.join("plots/curves.svg")).unwrap();
    assert_eq!(legend_entries(&svg), ["random", "mnlp"]);
    let summary: SummaryDocument = serde_json::from_str(&fs::read_to_string(root.join("first/summary.json")).unwrap()).unwrap();
    let lines = parse_mean_polylines(&svg).unwrap();
    for ((name, pts), run) in lines.iter().zip(&summary.runs) {
        assert_eq!(name, &run.name);
        assert_eq!(pts.len(), run.points.len());
    }

    let report = dal(root, &["report", "first"]);
    ok(&report);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("experiment column"));
    for run in &summary.runs {
        let auc = format!("{:.4}", run.auc.unwrap());
        assert!(text.lines().any(|l| l.starts_with(&run.name) && l.contains(&auc)), "{text}");
    }
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nname = \"x\"\nwarmstrat = 0.1\n").unwrap();
    let out = dal(tmp.path(), &["run", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmstrat"));

    let incompatible = COLUMN_RUN.replace("[\"random\", \"mnlp\"]", "[\"lc\"]");
    fs::write(tmp.path().join("spec.toml"), TAGGING_SPEC).unwrap();
    ok(&dal(tmp.path(), &["gen-data", "spec.toml", "--out", "corpus"]));
    fs::write(tmp.path().join("lc.toml"), incompatible).unwrap();
    let out = dal(tmp.path(), &["run", "lc.toml", "--out", "never"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("never").exists());
}

#[test]
fn missing_input_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dal(tmp.path(), &["report", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}
