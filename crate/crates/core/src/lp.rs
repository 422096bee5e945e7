//! Export of the scenario-tree integer program in CPLEX LP format, for
//! cross-checking the tree solver with an external MILP code.
//!
//! Variables are `x_n_j` (node `n`, state `j` in 1..=4), all binary:
//!
//! * objective: `sum_n B^-stage(n) (c2 x_n_2 + (c3 + c p(n)) x_n_3 + c4 x_n_4)`
//! * `one_n`: `x_n_1 + x_n_2 + x_n_3 + x_n_4 = 1`
//! * `edge_m` for each non-root node `m` with parent `n`:
//!   `x_n_1 + x_n_4 - x_m_1 - x_m_2 = 0`. Given the single-state rows this is
//!   equivalent to the four pairwise implications of the state machine.
//! * `force_n`: `x_n_3 = 1` where the shortfall exceeds the tolerance
//! * `root`: disallowed root states sum to zero

use std::io::Write;

use crate::error::Result;
use crate::solver::{shortfall_power, CostParams, PlantState, SolverOptions};
use crate::tree::{stage_weight, ScenarioTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpStats {
    pub variables: usize,
    pub constraints: usize,
}

/// Number of variables and constraint rows [`export_lp`] would write.
pub fn lp_stats(tree: &ScenarioTree, params: &CostParams, options: &SolverOptions) -> LpStats {
    let forced = tree
        .nodes()
        .iter()
        .filter(|n| shortfall_power(params.demand_at(n.stage), n.w, params.p_max) > options.shortfall_tol)
        .count();
    let root_row = usize::from(PlantState::ALL.iter().any(|s| !options.allowed_root.contains(s)));
    LpStats {
        variables: 4 * tree.len(),
        constraints: tree.len() + (tree.len() - 1) + forced + root_row,
    }
}

pub fn export_lp<W: Write>(
    tree: &ScenarioTree,
    params: &CostParams,
    options: &SolverOptions,
    mut out: W,
) -> Result<LpStats> {
    params.validate()?;
    options.validate()?;
    let b = tree.branching();
    let mut stats = LpStats {
        variables: 0,
        constraints: 0,
    };

    writeln!(
        out,
        "\\ scenario-tree plant commitment: B = {b}, H = {}, {} nodes",
        tree.horizon(),
        tree.len()
    )?;
    writeln!(out, "Minimize")?;
    writeln!(out, " obj:")?;
    let mut first = true;
    for n in tree.nodes() {
        let weight = stage_weight(b, n.stage);
        let p = shortfall_power(params.demand_at(n.stage), n.w, params.p_max);
        let coefs = [
            (2, weight * params.c_start),
            (3, weight * (params.c_operate + params.c_per_gw * p)),
            (4, weight * params.c_stop),
        ];
        for (j, coef) in coefs {
            if coef == 0.0 {
                continue;
            }
            let sign = if first { " " } else { " + " };
            writeln!(out, "{sign}{coef} x_{}_{j}", n.id)?;
            first = false;
        }
    }
    if first {
        writeln!(out, " 0 x_0_1")?;
    }

    writeln!(out, "Subject To")?;
    for n in tree.nodes() {
        let id = n.id;
        writeln!(out, " one_{id}: x_{id}_1 + x_{id}_2 + x_{id}_3 + x_{id}_4 = 1")?;
        stats.constraints += 1;
    }
    for n in tree.nodes() {
        if let Some(p) = n.parent {
            let m = n.id;
            writeln!(out, " edge_{m}: x_{p}_1 + x_{p}_4 - x_{m}_1 - x_{m}_2 = 0")?;
            stats.constraints += 1;
        }
    }
    for n in tree.nodes() {
        let p = shortfall_power(params.demand_at(n.stage), n.w, params.p_max);
        if p > options.shortfall_tol {
            writeln!(out, " force_{}: x_{}_3 = 1", n.id, n.id)?;
            stats.constraints += 1;
        }
    }
    let banned: Vec<String> = PlantState::ALL
        .iter()
        .filter(|s| !options.allowed_root.contains(s))
        .map(|s| format!("x_0_{}", s.code()))
        .collect();
    if !banned.is_empty() {
        writeln!(out, " root: {} = 0", banned.join(" + "))?;
        stats.constraints += 1;
    }

    writeln!(out, "Binary")?;
    for n in tree.nodes() {
        for j in 1..=4 {
            writeln!(out, " x_{}_{j}", n.id)?;
            stats.variables += 1;
        }
    }
    writeln!(out, "End")?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_stage_path_text() {
        let tree = ScenarioTree::from_winds(1, &[10.0, 2.0]).unwrap();
        let params = CostParams::reference(2);
        let mut buf = Vec::new();
        let stats = export_lp(&tree, &params, &SolverOptions::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            stats,
            LpStats {
                variables: 8,
                constraints: 2 + 1 + 1 + 1
            }
        );
        assert_eq!(stats, lp_stats(&tree, &params, &SolverOptions::default()));
        assert!(text.contains(" 3 x_0_2\n + 5 x_0_3\n + 2 x_0_4\n + 3 x_1_2\n + 85 x_1_3\n + 2 x_1_4\n"));
        assert!(text.contains(" edge_1: x_0_1 + x_0_4 - x_1_1 - x_1_2 = 0\n"));
        assert!(text.contains(" force_1: x_1_3 = 1\n"));
        assert!(text.contains(" root: x_0_3 + x_0_4 = 0\n"));
        assert!(text.ends_with("Binary\n x_0_1\n x_0_2\n x_0_3\n x_0_4\n x_1_1\n x_1_2\n x_1_3\n x_1_4\nEnd\n"));
    }

    #[test]
    fn edge_row_matches_pairwise_implications() {
        // Enumerate one-hot parent/child pairs: the single equality row holds
        // exactly when the four pairwise implications do.
        for from in PlantState::ALL {
            for to in PlantState::ALL {
                let x = |s: PlantState, j: u8| i32::from(s.code() == j);
                let row = x(from, 1) + x(from, 4) - x(to, 1) - x(to, 2) == 0;
                let pairwise = x(from, 1) <= x(to, 1) + x(to, 2)
                    && x(from, 2) <= x(to, 3) + x(to, 4)
                    && x(from, 3) <= x(to, 3) + x(to, 4)
                    && x(from, 4) <= x(to, 1) + x(to, 2);
                assert_eq!(row, pairwise, "{from} -> {to}");
                assert_eq!(row, to.can_follow(from));
            }
        }
    }
}
