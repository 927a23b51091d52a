//! LP/MILP solving: bounded-variable primal simplex with phase-1 artificials,
//! best-first branch and bound on the binaries, and a text-format bridge for
//! exporting models and importing solutions produced elsewhere.
//!
//! Everything here is serial and deterministic: identical inputs produce
//! bitwise-identical assignments, node orders, and iteration counts.

mod branch_bound;
mod lp_format;
mod simplex;

use std::time::Duration;

use crate::milp::{MilpModel, Sense, VarId};

pub use branch_bound::solve_milp;
pub use lp_format::{export_lp, export_solution, import_solution};

/// Termination state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration, node, or time budget exhausted before proving optimality.
    Limit,
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub nodes: u64,
    pub lp_iterations: u64,
    pub wall: Duration,
}

/// Outcome of [`solve_lp`] or [`solve_milp`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective of `assignment` when one exists.
    pub objective: Option<f64>,
    /// Best point found, indexed like `model.vars`.
    pub assignment: Option<Vec<f64>>,
    /// Proven lower bound on the optimum (minimization).
    pub bound: f64,
    pub stats: SolveStats,
}

/// Simplex tolerances and budget.
#[derive(Debug, Clone)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iters: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feas_tol: 1e-7,
            opt_tol: 1e-7,
            max_iters: 200_000,
        }
    }
}

/// Branch-and-bound budget; `abs_gap` is the absolute optimality gap at
/// which nodes are pruned.
#[derive(Debug, Clone)]
pub struct MilpLimits {
    pub abs_gap: f64,
    pub max_nodes: Option<u64>,
    pub time_limit: Option<Duration>,
    /// Stop as soon as an integral point at or below this objective is
    /// found; the result is then `Limit` with the point as incumbent.
    pub stop_at: Option<f64>,
}

impl Default for MilpLimits {
    fn default() -> Self {
        MilpLimits {
            abs_gap: 1e-6,
            max_nodes: None,
            time_limit: None,
            stop_at: None,
        }
    }
}

/// Integrality tolerance used when classifying relaxation values.
pub const INT_TOL: f64 = 1e-6;

/// Solves the continuous relaxation of `model` (binaries relaxed to their
/// bounds), with `overrides` replacing `(lower, upper)` per listed variable.
pub fn solve_lp(model: &MilpModel, overrides: &[(VarId, f64, f64)], opts: &LpOptions) -> SolveResult {
    let start = std::time::Instant::now();
    let lp = Lp::from_model(model, overrides);
    let out = simplex::solve(&lp, opts);
    let objective = out.x.as_ref().map(|x| model.objective_value(x));
    let status = out.status;
    let bound = match status {
        SolveStatus::Optimal => objective.unwrap(),
        SolveStatus::Infeasible => f64::INFINITY,
        _ => f64::NEG_INFINITY,
    };
    SolveResult {
        status,
        objective,
        assignment: out.x,
        bound,
        stats: SolveStats {
            nodes: 0,
            lp_iterations: out.iters as u64,
            wall: start.elapsed(),
        },
    }
}

/// Dense-bounds sparse-columns view of one LP instance.
pub(crate) struct Lp {
    pub m: usize,
    pub n: usize,
    /// Structural columns as `(row, coeff)` lists, rows ascending.
    pub cols: Vec<Vec<(u32, f64)>>,
    pub lo: Vec<f64>,
    pub up: Vec<f64>,
    pub cost: Vec<f64>,
    pub rhs: Vec<f64>,
    pub sense: Vec<Sense>,
}

impl Lp {
    pub(crate) fn from_model(model: &MilpModel, overrides: &[(VarId, f64, f64)]) -> Lp {
        let n = model.vars.len();
        let m = model.constraints.len();
        let mut cols = vec![Vec::new(); n];
        for (r, c) in model.constraints.iter().enumerate() {
            for &(coef, v) in &c.terms {
                cols[v].push((r as u32, coef));
            }
        }
        let mut lo: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
        let mut up: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
        for &(v, l, u) in overrides {
            assert!(v < n && l <= u, "bad bound override");
            lo[v] = l;
            up[v] = u;
        }
        let mut cost = vec![0.0; n];
        for &(c, v) in &model.objective {
            cost[v] += c;
        }
        Lp {
            m,
            n,
            cols,
            lo,
            up,
            cost,
            rhs: model.constraints.iter().map(|c| c.rhs).collect(),
            sense: model.constraints.iter().map(|c| c.sense).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{MilpModel, Sense};

    #[test]
    fn lp_corner_is_found() {
        // max x + y over x + y <= 1.5, x <= 1, y <= 1  (as minimization)
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", 0.0, 1.0);
        let y = m.add_continuous("y", 0.0, 1.0);
        m.add_row("cap", vec![(1.0, x), (1.0, y)], Sense::Le, 1.5);
        m.set_objective(vec![(-1.0, x), (-1.0, y)]);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() + 1.5).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows_hold() {
        // min 2a + b  s.t.  a + b = 2,  a - b >= -1  ->  a = 0.5, b = 1.5
        let mut m = MilpModel::new(100.0);
        let a = m.add_continuous("a", 0.0, 10.0);
        let b = m.add_continuous("b", 0.0, 10.0);
        m.add_row("sum", vec![(1.0, a), (1.0, b)], Sense::Eq, 2.0);
        m.add_row("diff", vec![(1.0, a), (-1.0, b)], Sense::Ge, -1.0);
        m.set_objective(vec![(2.0, a), (1.0, b)]);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let x = r.assignment.unwrap();
        assert!((x[a] - 0.5).abs() < 1e-8, "{x:?}");
        assert!((x[b] - 1.5).abs() < 1e-8);
        assert!((r.objective.unwrap() - 2.5).abs() < 1e-8);
    }

    #[test]
    fn infeasible_detected() {
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", 0.0, 1.0);
        m.add_row("low", vec![(1.0, x)], Sense::Ge, 2.0);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.bound.is_infinite());
    }

    #[test]
    fn unbounded_detected() {
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", 0.0, f64::INFINITY);
        m.set_objective(vec![(-1.0, x)]);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn overrides_pin_variables() {
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", 0.0, 1.0);
        let y = m.add_continuous("y", 0.0, 1.0);
        m.add_row("cap", vec![(1.0, x), (1.0, y)], Sense::Le, 1.5);
        m.set_objective(vec![(-1.0, x), (-1.0, y)]);
        let r = solve_lp(&m, &[(x, 0.25, 0.25)], &LpOptions::default());
        let a = r.assignment.unwrap();
        assert!((a[x] - 0.25).abs() < 1e-9);
        assert!((a[y] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_lower_bounds_work() {
        // min x over x in [-3, 5]
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", -3.0, 5.0);
        m.set_objective(vec![(1.0, x)]);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert!((r.objective.unwrap() + 3.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_row_is_infeasible_over_nonnegatives() {
        // 2x <= -1 with x >= 0 has no solution; the initial residual is
        // negative, which is the regime where a sign slip in the starting
        // basis once produced a bogus "optimal" origin.
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", 0.0, 10.0);
        m.add_row("neg", vec![(2.0, x)], Sense::Le, -1.0);
        m.set_objective(vec![(1.0, x)]);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn negative_rhs_row_solvable_away_from_origin() {
        // x - y <= -1 forces y >= x + 1; min x + y -> (0, 1).
        let mut m = MilpModel::new(100.0);
        let x = m.add_continuous("x", 0.0, 10.0);
        let y = m.add_continuous("y", 0.0, 10.0);
        m.add_row("gap", vec![(1.0, x), (-1.0, y)], Sense::Le, -1.0);
        m.set_objective(vec![(1.0, x), (1.0, y)]);
        let r = solve_lp(&m, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 1.0).abs() < 1e-9);
        let a = r.assignment.unwrap();
        assert!((a[y] - 1.0).abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn milp_knapsack_optimum() {
        // max 3a + 2b + 2c  s.t.  a + b + c <= 2, binaries -> 5
        let mut m = MilpModel::new(100.0);
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        let c = m.add_binary("c");
        m.add_row("cap", vec![(1.0, a), (1.0, b), (1.0, c)], Sense::Le, 2.0);
        m.set_objective(vec![(-3.0, a), (-2.0, b), (-2.0, c)]);
        let r = solve_milp(&m, &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() + 5.0).abs() < 1e-9);
        let x = r.assignment.unwrap();
        assert!((x[a] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn milp_is_deterministic() {
        let build = || {
            let mut m = MilpModel::new(50.0);
            let bs: Vec<_> = (0..8).map(|i| m.add_binary(format!("b{i}"))).collect();
            let x = m.add_continuous("x", 0.0, 4.0);
            for (i, &b) in bs.iter().enumerate() {
                m.add_row(
                    format!("r{i}"),
                    vec![(1.0 + i as f64 * 0.3, b), (0.1, x)],
                    Sense::Le,
                    1.4,
                );
            }
            m.add_row(
                "pick",
                bs.iter().map(|&b| (1.0, b)).collect(),
                Sense::Ge,
                2.0,
            );
            let mut obj: Vec<(f64, usize)> =
                bs.iter().enumerate().map(|(i, &b)| (0.7 - 0.13 * i as f64, b)).collect();
            obj.push((0.01, x));
            m.set_objective(obj);
            m
        };
        let r1 = solve_milp(&build(), &LpOptions::default(), &MilpLimits::default());
        let r2 = solve_milp(&build(), &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r1.status, r2.status);
        assert_eq!(r1.objective, r2.objective);
        assert_eq!(r1.assignment, r2.assignment);
        assert_eq!(r1.stats.nodes, r2.stats.nodes);
        assert_eq!(r1.stats.lp_iterations, r2.stats.lp_iterations);
    }

    #[test]
    fn milp_infeasible_when_binaries_conflict() {
        let mut m = MilpModel::new(10.0);
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        m.add_row("one", vec![(1.0, a), (1.0, b)], Sense::Ge, 2.0);
        m.add_row("two", vec![(1.0, a), (1.0, b)], Sense::Le, 1.0);
        let r = solve_milp(&m, &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
    }
}
