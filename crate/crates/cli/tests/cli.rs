use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
master_seed = 9

[fv]
n_particles = 200
mc_steps = 200000

[tree]
horizon = 3
branching = 4

[evaluation]
n_realizations = 20
"#;

fn flaute(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flaute"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn small_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "");
    assert_eq!(code(&flaute(d, &["--config", &cfg, "estimate-tail"])), 0);
    assert_eq!(
        code(&flaute(d, &["--config", &cfg, "build-tree", "--mode", "biased"])),
        0
    );
    let tree = d.join("tree-biased.txt");
    let tree = tree.to_str().unwrap();
    assert_eq!(
        code(&flaute(d, &["--config", &cfg, "solve", "--tree", tree, "--export-lp"])),
        0
    );
    let solution = d.join("tree-biased.solution.csv");
    assert_eq!(
        code(&flaute(
            d,
            &[
                "--config",
                &cfg,
                "evaluate",
                "--tree",
                tree,
                "--solution",
                solution.to_str().unwrap()
            ]
        )),
        0
    );
    for name in [
        "tail.json",
        "tree-biased.txt",
        "tree-biased.lp",
        "tree-biased.solution.json",
        "tree-biased.report.json",
        "tree-biased.traces-q0.1.csv",
        "tree-biased.trajectories.csv",
    ] {
        assert!(d.join(name).is_file(), "missing {name}");
    }
    let lp = fs::read_to_string(d.join("tree-biased.lp")).unwrap();
    assert!(lp.contains("Binary") && lp.trim_end().ends_with("End"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("tree-biased.report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 3);

    let table = flaute(d, &["--config", &cfg, "reproduce-table"]);
    assert_eq!(code(&table), 0);
    assert!(String::from_utf8_lossy(&table.stdout).contains("Average observed cost"));
    assert!(d.join("table.json").is_file() && d.join("table.txt").is_file());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = write_config(d, "\n[cost]\np_max = -1.0\n");
    assert_eq!(code(&flaute(d, &["--config", &bad, "reproduce-table"])), 2);

    let unknown = d.join("unknown.toml");
    fs::write(&unknown, "[tree]\nbranches = 3\n").unwrap();
    assert_eq!(
        code(&flaute(d, &["--config", unknown.to_str().unwrap(), "estimate-tail"])),
        2
    );

    // Biased trees need a tail estimate.
    let cfg = write_config(d, "");
    assert_eq!(
        code(&flaute(d, &["--config", &cfg, "build-tree", "--mode", "biased"])),
        2
    );

    let garbage = d.join("garbage.txt");
    fs::write(&garbage, "not a tree\n").unwrap();
    assert_eq!(
        code(&flaute(
            d,
            &["--config", &cfg, "solve", "--tree", garbage.to_str().unwrap()]
        )),
        2
    );
}

#[test]
fn infeasible_instance_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // The root is short of wind but may only idle.
    let cfg = write_config(d, "\n[cost]\nroot_states = [\"idle\"]\n");
    let tree_cfg = d.join("low.toml");
    fs::write(
        &tree_cfg,
        fs::read_to_string(&cfg)
            .unwrap()
            .replace("branching = 4", "branching = 4\nw0 = 2.0"),
    )
    .unwrap();
    let tree_cfg = tree_cfg.to_str().unwrap();
    assert_eq!(
        code(&flaute(d, &["--config", tree_cfg, "build-tree", "--mode", "benchmark"])),
        0
    );
    let tree = d.join("tree-benchmark.txt");
    let out = flaute(d, &["--config", tree_cfg, "solve", "--tree", tree.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("tree-benchmark.solution.json")).unwrap()).unwrap();
    assert_eq!(summary["feasible"], false);
    assert_eq!(summary["witness"], 0);
}

#[test]
fn estimation_failure_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // A threshold the chain never crosses leaves no excursions to learn from.
    let cfg = write_config(d, "\n[tail]\na = 40.0\nc_threshold = 50.0\ninner_edge = 90.0\n");
    let out = flaute(d, &["--config", &cfg, "estimate-tail"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "");
    assert_eq!(
        code(&flaute(d, &["--config", &cfg, "build-tree", "--mode", "benchmark"])),
        0
    );
    let a = fs::read(d.join("tree-benchmark.txt")).unwrap();
    assert_eq!(
        code(&flaute(
            d,
            &["--config", &cfg, "--seed", "10", "build-tree", "--mode", "benchmark"]
        )),
        0
    );
    let b = fs::read(d.join("tree-benchmark.txt")).unwrap();
    assert_ne!(a, b);
}
