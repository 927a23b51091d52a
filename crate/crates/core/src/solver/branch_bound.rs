//! Best-first branch and bound over the binary variables.
//!
//! Nodes are ordered by their inherited lower bound, ties by creation order,
//! so the search is deterministic.  Branching picks the most fractional
//! binary (ties to the lowest variable id) and fixes it to 0 in the first
//! child and 1 in the second.  A node is pruned once its bound comes within
//! `abs_gap` of the incumbent; with best-first order that also terminates
//! the whole search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::{solve_lp, LpOptions, MilpLimits, SolveResult, SolveStats, SolveStatus, INT_TOL};
use crate::milp::{MilpModel, VarId};

struct Node {
    bound: f64,
    id: u64,
    fixes: Vec<(VarId, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap; invert so the lowest bound pops first,
    // then the oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Solves the model to proven optimality within `limits.abs_gap`.
pub fn solve_milp(model: &MilpModel, lp_opts: &LpOptions, limits: &MilpLimits) -> SolveResult {
    let start = Instant::now();
    let binaries = model.binary_ids();
    if binaries.is_empty() {
        let mut r = solve_lp(model, &[], lp_opts);
        r.stats.nodes = 1;
        r.stats.wall = start.elapsed();
        return r;
    }

    let mut stats = SolveStats::default();
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut next_id: u64 = 0;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: 0,
        fixes: Vec::new(),
    });
    next_id += 1;

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut rigorous = true;
    let mut limit_hit = false;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - limits.abs_gap {
                // Best-first: every remaining node is at least this bound.
                heap.clear();
                break;
            }
        }
        if let Some(max) = limits.max_nodes {
            if stats.nodes >= max {
                limit_hit = true;
                heap.push(node);
                break;
            }
        }
        if let Some(tl) = limits.time_limit {
            if start.elapsed() >= tl {
                limit_hit = true;
                heap.push(node);
                break;
            }
        }

        stats.nodes += 1;
        let overrides: Vec<(VarId, f64, f64)> =
            node.fixes.iter().map(|&(v, b)| (v, b, b)).collect();
        let lp = solve_lp(model, &overrides, lp_opts);
        stats.lp_iterations += lp.stats.lp_iterations;

        match lp.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                if node.fixes.is_empty() {
                    return SolveResult {
                        status: SolveStatus::Unbounded,
                        objective: None,
                        assignment: lp.assignment,
                        bound: f64::NEG_INFINITY,
                        stats,
                    };
                }
                continue;
            }
            SolveStatus::Limit => {
                // Cannot bound this subtree; optimality is no longer proven.
                rigorous = false;
                continue;
            }
            SolveStatus::Optimal => {}
        }
        let obj = lp.objective.unwrap();
        if let Some((best, _)) = &incumbent {
            if obj >= best - limits.abs_gap {
                continue;
            }
        }
        let x = lp.assignment.unwrap();

        // Most fractional binary, ties to the lowest id.
        let mut branch: Option<(VarId, f64)> = None;
        for &b in &binaries {
            let frac = (x[b] - x[b].round()).abs();
            if frac > INT_TOL {
                let score = x[b].fract().min(1.0 - x[b].fract());
                if branch.map_or(true, |(_, s)| score > s) {
                    branch = Some((b, score));
                }
            }
        }

        match branch {
            None => {
                let better = incumbent
                    .as_ref()
                    .map_or(true, |(best, _)| obj < best - 1e-12);
                if better {
                    incumbent = Some((obj, x));
                    if limits.stop_at.map_or(false, |target| obj <= target) {
                        // Good enough by the caller's own yardstick; the
                        // remaining nodes still carry the proven bound.
                        limit_hit = true;
                        break;
                    }
                }
            }
            Some((var, _)) => {
                for v in [0.0, 1.0] {
                    let mut fixes = node.fixes.clone();
                    fixes.push((var, v));
                    heap.push(Node {
                        bound: obj,
                        id: next_id,
                        fixes,
                    });
                    next_id += 1;
                }
            }
        }
    }

    stats.wall = start.elapsed();
    let open_bound = heap
        .iter()
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((obj, x)) => {
            let status = if limit_hit || !rigorous {
                SolveStatus::Limit
            } else {
                SolveStatus::Optimal
            };
            let bound = if status == SolveStatus::Optimal {
                obj
            } else {
                open_bound.min(obj)
            };
            SolveResult {
                status,
                objective: Some(obj),
                assignment: Some(x),
                bound,
                stats,
            }
        }
        None => SolveResult {
            status: if limit_hit || !rigorous {
                SolveStatus::Limit
            } else {
                SolveStatus::Infeasible
            },
            objective: None,
            assignment: None,
            bound: if limit_hit || !rigorous {
                open_bound
            } else {
                f64::INFINITY
            },
            stats,
        },
    }
}
