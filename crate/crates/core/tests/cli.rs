use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use driftlab::harness::{avg_incremental_accuracy, read_a_matrix, read_record};
use driftlab::report::{compare_dirs, format_cell, Summary};

const CONFIG: &str = r#"
[experiment]
output_dir = "results"
seeds = [0, 1]

[dataset]
source = "synthetic"
n_tasks = 2
classes = 4
train_per_class = 30
test_per_class = 15
dim = 6
spread = 0.2
data_seed = 3

[model]
hidden = [16]
embedding_dim = 2

[[method]]
method = "E-FT"
sdc = true
epochs = 3
lr = 0.01
batch_size = 16

[[method]]
method = "E-FT"
epochs = 3
lr = 0.01
batch_size = 16

[[method]]
method = "FT"
epochs = 3
lr = 0.01
batch_size = 16
"#;

fn driftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlab"))
        .args(args)
        .env_remove("DRIFTLAB_SEED_OVERRIDE")
        .output()
        .unwrap()
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_every_run_and_replays_identically() {
    let (dir, cfg) = setup(CONFIG);
    let out = driftlab(&["run", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("| E-FT+SDC | 2 |"), "{stdout}");

    let results = dir.path().join("results");
    for label in ["E-FT+SDC", "E-FT", "FT"] {
        for seed in ["0", "1"] {
            let run = results.join(label).join(seed);
            for f in ["a_matrix.csv", "record.json", "prototypes.json", "model.bin", "model.json"] {
                assert!(run.join(f).is_file(), "{}", run.join(f).display());
            }
        }
    }
    let first = fs::read(results.join("E-FT+SDC/1/a_matrix.csv")).unwrap();
    let again = driftlab(&["run", s(&cfg)]);
    assert!(again.status.success());
    assert_eq!(fs::read(results.join("E-FT+SDC/1/a_matrix.csv")).unwrap(), first);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let cases = [
        (CONFIG.replace("n_tasks = 2", "n_tasks = 2\ncolour = 3"), "dataset.colour"),
        (CONFIG.replace("spread = 0.2", "spread = \"wide\""), "dataset.spread"),
        (CONFIG.replace("seeds = [0, 1]", "seeds = []"), "experiment.seeds"),
        (CONFIG.replacen("sdc = true", "sdc = true\ngamma = -1.0", 1), "method[0].gamma"),
        (CONFIG.replacen("method = \"FT\"", "method = \"FT\"\nsdc = true", 1), "method[2].sdc"),
        (CONFIG.replace("n_tasks = 2", "n_tasks = 3"), "dataset"),
    ];
    for (text, key) in cases {
        let (_dir, cfg) = setup(&text);
        let out = driftlab(&["run", s(&cfg)]);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{key}: {err}");
        assert!(err.contains(&format!("`{key}`")), "{key}: {err}");
    }
    let out = driftlab(&["run", "/nonexistent/exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_override_replaces_the_seed_list() {
    let (dir, cfg) = setup(&CONFIG.replace("[[method]]\nmethod = \"FT\"", "[[unused]]\nmethod = \"FT\"").replace(
        "[[unused]]\nmethod = \"FT\"\nepochs = 3\nlr = 0.01\nbatch_size = 16\n",
        "",
    ));
    let out = Command::new(env!("CARGO_BIN_EXE_driftlab"))
        .args(["run", s(&cfg)])
        .env("DRIFTLAB_SEED_OVERRIDE", "7")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e_ft = dir.path().join("results/E-FT");
    assert!(e_ft.join("7").is_dir());
    assert!(!e_ft.join("0").exists());
}

#[test]
fn compare_recomputes_from_csv() {
    let (dir, cfg) = setup(CONFIG);
    assert!(driftlab(&["run", s(&cfg)]).status.success());
    let results = dir.path().join("results");
    let out = driftlab(&["compare", s(&results)]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();

    for label in ["E-FT+SDC", "E-FT", "FT"] {
        let mut cells = Vec::new();
        for k in 1..=2 {
            let vals: Vec<f64> = ["0", "1"]
                .iter()
                .map(|seed| {
                    let acc = read_a_matrix(&results.join(label).join(seed).join("a_matrix.csv")).unwrap();
                    avg_incremental_accuracy(&acc, k).unwrap()
                })
                .collect();
            let mean = (vals[0] + vals[1]) / 2.0;
            let std = ((vals[0] - mean).powi(2) + (vals[1] - mean).powi(2)).sqrt();
            cells.push(format_cell(Some(&Summary { mean, std, count: 2 })));
        }
        let row = format!("| {label} | 2 | {} | {} |", cells[0], cells[1]);
        assert!(table.contains(&row), "missing `{row}` in\n{table}");
    }

    let single = compare_dirs(&[results.join("FT/0")]).unwrap();
    let acc = read_a_matrix(&results.join("FT/0/a_matrix.csv")).unwrap();
    assert_eq!(single.rows[0].cells[1].unwrap().mean, avg_incremental_accuracy(&acc, 2).unwrap());
}

fn attr(node: roxmltree::Node<'_, '_>, name: &str) -> f64 {
    node.attribute(name).unwrap().parse().unwrap()
}

#[test]
fn plots_are_valid_and_match_the_saved_prototypes() {
    let (dir, cfg) = setup(CONFIG);
    assert!(driftlab(&["run", s(&cfg)]).status.success());
    let results = dir.path().join("results");
    let run = results.join("E-FT+SDC/0");

    let out = driftlab(&["plot", s(&run), "--kind", "embedding"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record = read_record(&run).unwrap();
    let svg_path = run.join("plots/embedding_task2.svg");
    let text = fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let protos: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("prototypes.json")).unwrap()).unwrap();
    let moves = protos["transitions"][0]["moves"].as_array().unwrap();
    let arrows: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("drift")).collect();
    assert_eq!(arrows.len(), moves.len());
    assert_eq!(arrows.len(), record.transitions[0].moves.len());
    for (a, m) in arrows.iter().zip(moves) {
        let before: Vec<f64> = m["before"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let drift: Vec<f64> = m["drift"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!((attr(*a, "x1") - before[0]).abs() < 1e-12);
        assert!((attr(*a, "y1") - before[1]).abs() < 1e-12);
        assert!((attr(*a, "x2") - (before[0] + drift[0])).abs() < 1e-12);
        assert!((attr(*a, "y2") - (before[1] + drift[1])).abs() < 1e-12);
    }
    for class in ["prototype", "compensated", "true-mean", "point"] {
        assert!(doc.descendants().any(|n| n.attribute("class") == Some(class)), "{class}");
    }
    let again = driftlab(&["plot", s(&run), "--kind", "embedding"]);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(&svg_path).unwrap(), text);

    let out = driftlab(&["plot", s(&results), "--kind", "curves"]);
    assert!(out.status.success());
    let text = fs::read_to_string(results.join("plots/curves.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let series: Vec<&str> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("series"))
        .map(|n| n.attribute("data-label").unwrap())
        .collect();
    assert_eq!(series, vec!["E-FT", "E-FT+SDC", "FT"]);

    let out = driftlab(&["plot", s(&run), "--kind", "confusion"]);
    assert!(out.status.success());
    for k in 1..=2 {
        let text = fs::read_to_string(run.join(format!("plots/confusion_task{k}.svg"))).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let total: u64 = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .map(|n| n.attribute("data-count").unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 15 * 2 * k as u64);
    }
}

#[test]
fn plot_errors_exit_1() {
    let (dir, cfg) = setup(&CONFIG.replace("embedding_dim = 2", "embedding_dim = 3"));
    assert!(driftlab(&["run", s(&cfg)]).status.success());
    let run = dir.path().join("results/E-FT+SDC/0");
    let out = driftlab(&["plot", s(&run), "--kind", "embedding"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2-D"));
    let out = driftlab(&["compare", s(dir.path().join("nothing").as_path())]);
    assert_eq!(out.status.code(), Some(1));
}
