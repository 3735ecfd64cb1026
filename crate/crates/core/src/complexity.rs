//! Closed-form operation counts for centralized and distributed WPE.
//!
//! All counts are real floating-point operations per frequency bin.
//!
//! * Accumulating `Z` and `q` over `N` frames: each frame scales the
//!   `d`-dimensional regression vector by `1/sigma` (two real divisions per
//!   complex entry), then forms the upper triangle of `Z` (four real
//!   multiplications per off-diagonal entry, two per real diagonal entry)
//!   and `q` (four per entry). That is `2d` divisions and `2d^2 + 4d`
//!   multiplications per frame.
//! * Solving: complex Cholesky factorisation followed by forward and back
//!   substitution, counting a complex multiply-accumulate as 8 flops, a
//!   squared-magnitude accumulate as 4, a complex-by-real division as 2 and a
//!   square root as 1. The total is `(4d^3 + 21d^2 - 10d) / 3`.

use crate::error::{Error, Result};
use crate::netsim::Mode;

/// Dimension of the per-bin system a node solves.
pub fn filter_dimension(mode: Mode, n_nodes: usize, filter_order: usize) -> Result<usize> {
    if n_nodes < 1 || filter_order < 1 {
        return Err(Error::InvalidInput(format!(
            "need at least one node and one tap, got M={n_nodes}, L={filter_order}"
        )));
    }
    Ok(match mode {
        Mode::Single => filter_order,
        Mode::Centralized => n_nodes * filter_order,
        Mode::Distributed => filter_order + n_nodes - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCount {
    pub multiplications: u64,
    pub divisions: u64,
    pub solve_cost: u64,
    pub dimension: usize,
}

/// How the cost of one `d`-dimensional solve is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveCostModel {
    /// Real flops of Cholesky plus two triangular substitutions.
    #[default]
    RealFlops,
    /// Leading-order `d^3` only.
    Cubic,
}

impl SolveCostModel {
    pub fn cost(&self, d: usize) -> u64 {
        let d = d as u64;
        match self {
            SolveCostModel::RealFlops => (4 * d * d * d + 21 * d * d - 10 * d) / 3,
            SolveCostModel::Cubic => d * d * d,
        }
    }
}

fn check_frames(n_frames: usize) -> Result<()> {
    if n_frames < 1 {
        return Err(Error::InvalidInput("need at least one frame".into()));
    }
    Ok(())
}

/// Multiplications and divisions spent building `Z` and `q` for one bin.
pub fn count_accumulation_ops(
    mode: Mode,
    n_nodes: usize,
    filter_order: usize,
    n_frames: usize,
) -> Result<OpCount> {
    check_frames(n_frames)?;
    let d = filter_dimension(mode, n_nodes, filter_order)?;
    let (du, n) = (d as u64, n_frames as u64);
    Ok(OpCount {
        multiplications: n * (2 * du * du + 4 * du),
        divisions: n * 2 * du,
        solve_cost: 0,
        dimension: d,
    })
}

/// Cost of the per-bin linear solve under `model`.
pub fn count_solve_ops_with(
    model: SolveCostModel,
    mode: Mode,
    n_nodes: usize,
    filter_order: usize,
) -> Result<OpCount> {
    let d = filter_dimension(mode, n_nodes, filter_order)?;
    Ok(OpCount {
        multiplications: 0,
        divisions: 0,
        solve_cost: model.cost(d),
        dimension: d,
    })
}

pub fn count_solve_ops(mode: Mode, n_nodes: usize, filter_order: usize) -> Result<OpCount> {
    count_solve_ops_with(SolveCostModel::RealFlops, mode, n_nodes, filter_order)
}

/// Distributed over centralized operation ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Betas {
    pub mul: f64,
    pub div: f64,
    pub solve: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaReport {
    pub n_nodes: usize,
    pub filter_order: usize,
    /// One distributed node against the centralized fusion center.
    pub per_node: Betas,
    /// All distributed nodes together against the centralized fusion center.
    pub per_network: Betas,
}

pub fn beta_report(n_nodes: usize, filter_order: usize, n_frames: usize) -> Result<BetaReport> {
    beta_report_with(SolveCostModel::RealFlops, n_nodes, filter_order, n_frames)
}

pub fn beta_report_with(
    model: SolveCostModel,
    n_nodes: usize,
    filter_order: usize,
    n_frames: usize,
) -> Result<BetaReport> {
    if n_nodes < 2 {
        return Err(Error::InvalidInput(format!(
            "a reduction needs at least two nodes, got {n_nodes}"
        )));
    }
    if filter_order < 2 {
        return Err(Error::InvalidInput(format!(
            "a reduction needs at least two taps, got {filter_order}"
        )));
    }
    let acc_d = count_accumulation_ops(Mode::Distributed, n_nodes, filter_order, n_frames)?;
    let acc_c = count_accumulation_ops(Mode::Centralized, n_nodes, filter_order, n_frames)?;
    let sol_d = count_solve_ops_with(model, Mode::Distributed, n_nodes, filter_order)?;
    let sol_c = count_solve_ops_with(model, Mode::Centralized, n_nodes, filter_order)?;
    let per_node = Betas {
        mul: acc_d.multiplications as f64 / acc_c.multiplications as f64,
        div: acc_d.divisions as f64 / acc_c.divisions as f64,
        solve: sol_d.solve_cost as f64 / sol_c.solve_cost as f64,
    };
    let m = n_nodes as f64;
    Ok(BetaReport {
        n_nodes,
        filter_order,
        per_node,
        per_network: Betas {
            mul: m * per_node.mul,
            div: m * per_node.div,
            solve: m * per_node.solve,
        },
    })
}

pub const BETA_CSV_HEADER: &str = "scenario,M,L,normalization,beta_mul,beta_div,beta_solve";

impl BetaReport {
    /// Two CSV rows, per node and per network, without header.
    pub fn csv_rows(&self, scenario: &str) -> String {
        let row = |label: &str, b: &Betas| {
            format!(
                "{scenario},{},{},{label},{:.6},{:.6},{:.6}\n",
                self.n_nodes, self.filter_order, b.mul, b.div, b.solve
            )
        };
        row("per-node", &self.per_node) + &row("per-network", &self.per_network)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(filter_dimension(Mode::Distributed, 12, 26).unwrap(), 37);
        assert_eq!(filter_dimension(Mode::Centralized, 12, 26).unwrap(), 312);
        assert_eq!(filter_dimension(Mode::Single, 12, 26).unwrap(), 26);
        assert!(filter_dimension(Mode::Single, 0, 26).is_err());
    }

    #[test]
    fn one_node_has_no_reduction() {
        for l in 1..6 {
            let c = count_accumulation_ops(Mode::Centralized, 1, l, 7).unwrap();
            let d = count_accumulation_ops(Mode::Distributed, 1, l, 7).unwrap();
            assert_eq!(c, d);
            assert_eq!(
                count_solve_ops(Mode::Centralized, 1, l).unwrap(),
                count_solve_ops(Mode::Distributed, 1, l).unwrap()
            );
        }
        assert!(beta_report(1, 26, 100).is_err());
    }

    #[test]
    fn solve_cost_small_dimensions() {
        // d = 1: one sqrt, one division forward, one backward.
        assert_eq!(SolveCostModel::RealFlops.cost(1), 5);
        assert_eq!(SolveCostModel::RealFlops.cost(2), (32 + 84 - 20) / 3);
    }

    #[test]
    fn cubic_model_ratio_identity() {
        for (m, l) in [(6, 26), (9, 26), (12, 26), (4, 40), (8, 40)] {
            let r = beta_report_with(SolveCostModel::Cubic, m, l, 10).unwrap();
            let expected = ((l + m - 1) as f64 / (m * l) as f64).powi(3);
            assert!((r.per_node.solve - expected).abs() <= 1e-15 * expected);
        }
    }

    #[test]
    fn csv_has_both_normalizations() {
        let csv = beta_report(6, 26, 100).unwrap().csv_rows("sim");
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("sim,6,26,per-node,"));
    }
}
