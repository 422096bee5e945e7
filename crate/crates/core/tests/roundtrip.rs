use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use proptest::prelude::*;

use flaute_core::fv::{FVConfig, TailRunConfig};
use flaute_core::lp::export_lp;
use flaute_core::solver::{read_solution, write_solution_csv, SolutionSummary};
use flaute_core::tree::{read_tree, write_tree};
use flaute_core::{
    build_tree, estimate_tail, solve_tree_dp, ARModel, CostParams, Error, PlantState, RunConfig, ScenarioTree,
    SolverOptions, TailEstimate, TailPartition, TreeMode,
};

fn full_size_tree() -> ScenarioTree {
    let config = RunConfig::default();
    let model = config.ar_model().unwrap();
    let run = TailRunConfig {
        fv: FVConfig {
            n_particles: 500,
            ..FVConfig::default()
        },
        mc_steps: 1_000_000,
        mc_seed: 3,
    };
    let sampler = estimate_tail(&model, &TailPartition::default(), &run)
        .unwrap()
        .sampler()
        .unwrap();
    build_tree(
        &config.tree_config(TreeMode::Biased, 77).unwrap(),
        &model,
        Some(&sampler),
    )
    .unwrap()
}

#[test]
fn full_size_tree_survives_a_file_round_trip() {
    let tree = full_size_tree();
    assert_eq!(tree.len(), 168_421);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tree.txt");
    let mut w = BufWriter::new(File::create(&path).unwrap());
    write_tree(&tree, &mut w).unwrap();
    w.flush().unwrap();
    drop(w);
    let back = read_tree(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(back, tree);

    let mut again = Vec::new();
    write_tree(&back, &mut again).unwrap();
    assert_eq!(again, std::fs::read(&path).unwrap());
}

#[test]
fn truncated_tree_file_reports_its_line() {
    let tree = ScenarioTree::from_winds(2, &[10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0]).unwrap();
    let mut text = Vec::new();
    write_tree(&tree, &mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
    match read_tree(cut.as_bytes()) {
        Err(Error::Format { line, .. }) => assert!(line >= 5, "line {line}"),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn solution_files_round_trip() {
    let tree = ScenarioTree::from_winds(2, &[10.0, 5.0, 9.0, 4.0, 8.0, 9.0, 9.0]).unwrap();
    let sol = solve_tree_dp(&tree, &CostParams::reference(3), &SolverOptions::default()).unwrap();
    assert!(sol.feasible);
    let mut csv = Vec::new();
    write_solution_csv(&sol, &mut csv).unwrap();
    let summary = SolutionSummary::from(&sol);
    let summary: SolutionSummary = serde_json::from_str(&serde_json::to_string(&summary).unwrap()).unwrap();
    assert_eq!(read_solution(csv.as_slice(), &summary).unwrap(), sol);
}

#[test]
fn tail_file_round_trips() {
    let run = TailRunConfig {
        fv: FVConfig {
            n_particles: 200,
            ..FVConfig::default()
        },
        mc_steps: 500_000,
        mc_seed: 1,
    };
    let est = estimate_tail(&ARModel::default(), &TailPartition::default(), &run).unwrap();
    let text = est.to_json().unwrap();
    let back = TailEstimate::from_json(&text).unwrap();
    assert_eq!(back, est);
    assert_eq!(back.to_json().unwrap(), text);
}

/// Objective coefficients and equality rows of an exported LP.
struct Lp {
    objective: HashMap<String, f64>,
    rows: Vec<(Vec<(f64, String)>, f64)>,
}

fn parse_terms(expr: &str) -> Vec<(f64, String)> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef = None;
    for tok in expr.split_whitespace() {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            t if t.starts_with("x_") => {
                terms.push((sign * coef.take().unwrap_or(1.0), t.to_string()));
                sign = 1.0;
            }
            t => coef = Some(t.parse::<f64>().unwrap()),
        }
    }
    terms
}

fn parse_lp(text: &str) -> Lp {
    let mut section = "";
    let mut objective = HashMap::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        match line {
            "Minimize" | "Subject To" | "Binary" | "End" => {
                section = line;
                continue;
            }
            _ if line.starts_with('\\') || line == "obj:" => continue,
            _ => {}
        }
        match section {
            "Minimize" => {
                for (c, v) in parse_terms(line) {
                    *objective.entry(v).or_insert(0.0) += c;
                }
            }
            "Subject To" => {
                let (_, body) = line.split_once(':').unwrap();
                let (lhs, rhs) = body.split_once('=').unwrap();
                rows.push((parse_terms(lhs), rhs.trim().parse().unwrap()));
            }
            _ => {}
        }
    }
    Lp { objective, rows }
}

/// Minimum of the LP objective over one-hot assignments satisfying every row.
fn lp_optimum(lp: &Lp, n_nodes: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut x: HashMap<String, f64> = HashMap::new();
    for code in 0..4usize.pow(n_nodes as u32) {
        let mut c = code;
        for n in 0..n_nodes {
            for j in 1..=4 {
                x.insert(format!("x_{n}_{j}"), f64::from(u8::from(c % 4 + 1 == j)));
            }
            c /= 4;
        }
        let ok = lp
            .rows
            .iter()
            .all(|(terms, rhs)| terms.iter().map(|(k, v)| k * x[v]).sum::<f64>() == *rhs);
        if ok {
            let value: f64 = lp.objective.iter().map(|(v, k)| k * x[v]).sum();
            if best.is_none_or(|b| value < b) {
                best = Some(value);
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn exported_lp_has_the_dp_optimum(
        winds in proptest::collection::vec(0.0..12.0f64, 7),
        roots in proptest::sample::subsequence(PlantState::ALL.to_vec(), 1..=4),
    ) {
        let tree = ScenarioTree::from_winds(2, &winds).unwrap();
        let params = CostParams::reference(3);
        let options = SolverOptions { allowed_root: roots, shortfall_tol: 0.0 };
        let mut text = Vec::new();
        export_lp(&tree, &params, &options, &mut text).unwrap();
        let lp = parse_lp(std::str::from_utf8(&text).unwrap());
        let dp = solve_tree_dp(&tree, &params, &options).unwrap();
        match lp_optimum(&lp, tree.len()) {
            Some(best) => {
                prop_assert!(dp.feasible);
                // Different summation order, so compare to rounding.
                prop_assert!((best - dp.objective).abs() <= 1e-9 * best.abs().max(1.0), "{best} vs {}", dp.objective);
            }
            None => prop_assert!(!dp.feasible),
        }
    }
}
