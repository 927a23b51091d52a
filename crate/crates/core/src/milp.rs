//! Mixed-integer linear model container and logic-encoding helpers.
//!
//! Models are built row by row against a single big-M constant chosen by the
//! caller; every time-valued variable must provably stay below it, otherwise
//! the indicator rows emitted here would cut off feasible points.  The
//! helpers encode, with binaries and big-M rows only: "nonzero above a
//! threshold" indicators, positive parts, pairwise max/min, and disjunction.

use crate::error::Error;

/// Index into [`MilpModel::vars`].
pub type VarId = usize;
/// Index into [`MilpModel::constraints`].
pub type RowId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// One row: `terms (sense) rhs`, duplicate variable ids merged on build.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(f64, VarId)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, v)| c * x[v]).sum()
    }

    /// Signed violation of the row at `x` (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

/// A point's failure against a model, worst first.
#[derive(Debug, Clone)]
pub struct Violation {
    pub what: String,
    pub amount: f64,
}

/// Minimization model over continuous and binary variables.
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    /// Objective terms to minimize, duplicate ids merged.
    pub objective: Vec<(f64, VarId)>,
    /// Big-M constant used by all indicator rows of this model.
    pub big_m: f64,
}

impl MilpModel {
    pub fn new(big_m: f64) -> Self {
        assert!(
            big_m > 0.0 && big_m.is_finite(),
            "big-M must be positive and finite, got {big_m}"
        );
        MilpModel {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            big_m,
        }
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        assert!(lower <= upper, "empty bound interval");
        self.vars.push(Variable {
            name: name.into(),
            kind: VarKind::Continuous,
            lower,
            upper,
        });
        self.vars.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
        });
        self.vars.len() - 1
    }

    /// Adds a row, merging duplicate variable ids and dropping zero terms.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(f64, VarId)>,
        sense: Sense,
        rhs: f64,
    ) -> RowId {
        let mut merged: Vec<(f64, VarId)> = Vec::with_capacity(terms.len());
        let mut sorted = terms;
        sorted.sort_by_key(|&(_, v)| v);
        for (c, v) in sorted {
            assert!(v < self.vars.len(), "row references unknown variable {v}");
            match merged.last_mut() {
                Some(last) if last.1 == v => last.0 += c,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|&(c, _)| c != 0.0);
        self.constraints.push(LinearConstraint {
            name: name.into(),
            terms: merged,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, terms: Vec<(f64, VarId)>) {
        let mut sorted = terms;
        sorted.sort_by_key(|&(_, v)| v);
        let mut merged: Vec<(f64, VarId)> = Vec::with_capacity(sorted.len());
        for (c, v) in sorted {
            assert!(v < self.vars.len(), "objective references unknown variable {v}");
            match merged.last_mut() {
                Some(last) if last.1 == v => last.0 += c,
                _ => merged.push((c, v)),
            }
        }
        self.objective = merged;
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(c, v)| c * x[v]).sum()
    }

    pub fn binary_ids(&self) -> Vec<VarId> {
        (0..self.vars.len())
            .filter(|&v| self.vars[v].kind == VarKind::Binary)
            .collect()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    /// All bound, integrality, and row violations of `x` beyond `tol`,
    /// sorted worst first.
    pub fn check_point(&self, x: &[f64], tol: f64) -> Vec<Violation> {
        assert_eq!(x.len(), self.vars.len(), "point dimension mismatch");
        let mut out = Vec::new();
        for (i, v) in self.vars.iter().enumerate() {
            let below = v.lower - x[i];
            let above = x[i] - v.upper;
            let worst = below.max(above);
            if worst > tol {
                out.push(Violation {
                    what: format!("bound on {}", v.name),
                    amount: worst,
                });
            }
            if v.kind == VarKind::Binary {
                let frac = (x[i] - x[i].round()).abs();
                if frac > tol {
                    out.push(Violation {
                        what: format!("integrality of {}", v.name),
                        amount: frac,
                    });
                }
            }
        }
        for c in &self.constraints {
            let viol = c.violation(x);
            if viol > tol {
                out.push(Violation {
                    what: format!("row {}", c.name),
                    amount: viol,
                });
            }
        }
        out.sort_by(|a, b| b.amount.total_cmp(&a.amount));
        out
    }

    // -- logic encodings ----------------------------------------------------

    /// Binary `b` with `x > 0  =>  b = 1` and `b = 1  =>  x >= threshold`.
    ///
    /// Values of `x` strictly inside `(0, threshold)` become infeasible; that
    /// is the point of the construction (minimum dwell).  Requires
    /// `0 < threshold <= big_m` and a non-negative `x`.
    pub fn add_indicator_nonzero(&mut self, x: VarId, threshold: f64) -> Result<VarId, Error> {
        if !(threshold > 0.0 && threshold <= self.big_m) {
            return Err(Error::InvalidArgument(format!(
                "indicator threshold must lie in (0, big_m], got {threshold}"
            )));
        }
        if self.vars[x].lower < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "indicator variable {} may go negative",
                self.vars[x].name
            )));
        }
        let m = self.big_m;
        let b = self.add_binary(format!("nz{}", self.vars.len()));
        let xn = self.vars[x].name.clone();
        self.add_row(
            format!("nz_up_{xn}"),
            vec![(1.0, x), (-m, b)],
            Sense::Le,
            0.0,
        );
        self.add_row(
            format!("nz_lo_{xn}"),
            vec![(1.0, x), (-threshold, b)],
            Sense::Ge,
            0.0,
        );
        Ok(b)
    }

    /// Binary `b` with `a > b_var  =>  b = 1` and `a < b_var  =>  b = 0`;
    /// ties leave `b` free.  Both operands must stay within `[0, big_m]`.
    pub fn add_ge_indicator(&mut self, a: VarId, b_var: VarId) -> VarId {
        let m = self.big_m;
        let b = self.add_binary(format!("ge{}", self.vars.len()));
        let name = format!("{}_{}", self.vars[a].name, self.vars[b_var].name);
        // a - b_var <= M b   and   b_var - a <= M (1 - b)
        self.add_row(
            format!("ge_up_{name}"),
            vec![(1.0, a), (-1.0, b_var), (-m, b)],
            Sense::Le,
            0.0,
        );
        self.add_row(
            format!("ge_lo_{name}"),
            vec![(-1.0, a), (1.0, b_var), (m, b)],
            Sense::Le,
            m,
        );
        b
    }

    /// `z = max(0, y - x)` with witness binary `b = [y >= x]`.
    pub fn add_positive_part(&mut self, y: VarId, x: VarId) -> PosPart {
        let m = self.big_m;
        let b = self.add_ge_indicator(y, x);
        let z = self.add_continuous(format!("pp{}", self.vars.len()), 0.0, m);
        let name = format!("{}_{}", self.vars[y].name, self.vars[x].name);
        // y - x <= z ; z <= M b ; z <= y - x + M (1 - b)
        self.add_row(
            format!("pp_lo_{name}"),
            vec![(1.0, y), (-1.0, x), (-1.0, z)],
            Sense::Le,
            0.0,
        );
        self.add_row(format!("pp_on_{name}"), vec![(1.0, z), (-m, b)], Sense::Le, 0.0);
        self.add_row(
            format!("pp_up_{name}"),
            vec![(1.0, z), (-1.0, y), (1.0, x), (m, b)],
            Sense::Le,
            m,
        );
        PosPart { z, bin: b }
    }

    /// `z = max(x, y)` as `x + max(0, y - x)`.
    pub fn add_max(&mut self, x: VarId, y: VarId) -> (VarId, PosPart) {
        let pp = self.add_positive_part(y, x);
        let m = self.big_m;
        let z = self.add_continuous(format!("mx{}", self.vars.len()), 0.0, m);
        self.add_row(
            format!("max_def_{}", self.vars[z].name),
            vec![(1.0, z), (-1.0, x), (-1.0, pp.z)],
            Sense::Eq,
            0.0,
        );
        (z, pp)
    }

    /// `z = min(x, y)` as `x - max(0, x - y)`.
    pub fn add_min(&mut self, x: VarId, y: VarId) -> (VarId, PosPart) {
        let pp = self.add_positive_part(x, y);
        let m = self.big_m;
        let z = self.add_continuous(format!("mn{}", self.vars.len()), 0.0, m);
        self.add_row(
            format!("min_def_{}", self.vars[z].name),
            vec![(1.0, z), (-1.0, x), (1.0, pp.z)],
            Sense::Eq,
            0.0,
        );
        (z, pp)
    }

    /// Binary `r = a OR b` for binary operands.
    pub fn add_or(&mut self, a: VarId, b: VarId) -> VarId {
        debug_assert_eq!(self.vars[a].kind, VarKind::Binary);
        debug_assert_eq!(self.vars[b].kind, VarKind::Binary);
        let r = self.add_binary(format!("or{}", self.vars.len()));
        let name = format!("{}_{}", self.vars[a].name, self.vars[b].name);
        self.add_row(format!("or_a_{name}"), vec![(1.0, a), (-1.0, r)], Sense::Le, 0.0);
        self.add_row(format!("or_b_{name}"), vec![(1.0, b), (-1.0, r)], Sense::Le, 0.0);
        self.add_row(
            format!("or_up_{name}"),
            vec![(1.0, r), (-1.0, a), (-1.0, b)],
            Sense::Le,
            0.0,
        );
        r
    }
}

/// Handle returned by [`MilpModel::add_positive_part`].
#[derive(Debug, Clone, Copy)]
pub struct PosPart {
    /// The `max(0, y - x)` value.
    pub z: VarId,
    /// Witness binary, 1 iff `y >= x` (free at ties).
    pub bin: VarId,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_hold(model: &MilpModel, x: &[f64]) -> bool {
        model
            .constraints
            .iter()
            .all(|c| c.violation(x) <= 1e-9)
    }

    #[test]
    fn rows_merge_duplicate_ids() {
        let mut m = MilpModel::new(10.0);
        let a = m.add_continuous("a", 0.0, 1.0);
        let b = m.add_continuous("b", 0.0, 1.0);
        let r = m.add_row("r", vec![(1.0, a), (2.0, b), (3.0, a)], Sense::Le, 1.0);
        assert_eq!(m.constraints[r].terms, vec![(4.0, a), (2.0, b)]);
    }

    #[test]
    fn positive_part_feasible_set_is_exact() {
        // Over a grid of fixed (x, y), the only feasible (z, b) pairs are
        // z = max(0, y-x) with b forced except at ties.
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 * 0.5).collect();
        for &vx in &grid {
            for &vy in &grid {
                let mut m = MilpModel::new(10.0);
                let x = m.add_continuous("x", vx, vx);
                let y = m.add_continuous("y", vy, vy);
                let pp = m.add_positive_part(y, x);
                let expect = (vy - vx).max(0.0);
                for &z in grid.iter().chain([expect].iter()) {
                    for b in [0.0, 1.0] {
                        let mut point = vec![0.0; m.vars.len()];
                        point[x] = vx;
                        point[y] = vy;
                        point[pp.z] = z;
                        point[pp.bin] = b;
                        let ok = rows_hold(&m, &point);
                        let b_allowed = if vy > vx {
                            b == 1.0
                        } else if vy < vx {
                            b == 0.0
                        } else {
                            true
                        };
                        let want = (z - expect).abs() < 1e-9 && b_allowed;
                        assert_eq!(ok, want, "x={vx} y={vy} z={z} b={b}");
                    }
                }
            }
        }
    }

    #[test]
    fn max_min_or_agree_with_definitions() {
        let vals = [0.0, 0.75, 1.5, 3.0];
        for &vx in &vals {
            for &vy in &vals {
                let mut m = MilpModel::new(10.0);
                let x = m.add_continuous("x", vx, vx);
                let y = m.add_continuous("y", vy, vy);
                let (zmax, ppa) = m.add_max(x, y);
                let (zmin, ppb) = m.add_min(x, y);
                let mut point = vec![0.0; m.vars.len()];
                point[x] = vx;
                point[y] = vy;
                point[ppa.z] = (vy - vx).max(0.0);
                point[ppa.bin] = if vy >= vx { 1.0 } else { 0.0 };
                point[zmax] = vx.max(vy);
                point[ppb.z] = (vx - vy).max(0.0);
                point[ppb.bin] = if vx >= vy { 1.0 } else { 0.0 };
                point[zmin] = vx.min(vy);
                assert!(rows_hold(&m, &point), "x={vx} y={vy}");
                // Wrong max value must break a row.
                point[zmax] = vx.max(vy) + 0.25;
                assert!(!rows_hold(&m, &point));
            }
        }
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                let mut m = MilpModel::new(10.0);
                let ba = m.add_binary("a");
                let bb = m.add_binary("b");
                let r = m.add_or(ba, bb);
                for rv in [0.0, 1.0] {
                    let point = {
                        let mut p = vec![0.0; m.vars.len()];
                        p[ba] = a;
                        p[bb] = b;
                        p[r] = rv;
                        p
                    };
                    let want = rv == if a + b > 0.0 { 1.0 } else { 0.0 };
                    assert_eq!(rows_hold(&m, &point), want, "a={a} b={b} r={rv}");
                }
            }
        }
    }

    #[test]
    fn indicator_nonzero_gates_threshold() {
        let mut m = MilpModel::new(10.0);
        let x = m.add_continuous("x", 0.0, 10.0);
        let b = m.add_indicator_nonzero(x, 0.5).unwrap();
        let feas_at = |vx: f64, vb: f64| {
            let mut p = vec![0.0; m.vars.len()];
            p[x] = vx;
            p[b] = vb;
            rows_hold(&m, &p)
        };
        assert!(feas_at(0.0, 0.0));
        assert!(feas_at(0.5, 1.0));
        assert!(feas_at(7.0, 1.0));
        assert!(!feas_at(0.25, 1.0), "below threshold with b=1");
        assert!(!feas_at(0.25, 0.0), "positive with b=0");
        assert!(!feas_at(7.0, 0.0));
        let mut m2 = MilpModel::new(10.0);
        let x2 = m2.add_continuous("x", 0.0, 1.0);
        assert!(matches!(
            m2.add_indicator_nonzero(x2, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn check_point_reports_worst_first() {
        let mut m = MilpModel::new(10.0);
        let x = m.add_continuous("x", 0.0, 1.0);
        let b = m.add_binary("b");
        m.add_row("cap", vec![(1.0, x), (1.0, b)], Sense::Le, 1.0);
        let v = m.check_point(&[1.6, 0.5], 1e-9);
        assert_eq!(v[0].what, "row cap");
        assert!((v[0].amount - 1.1).abs() < 1e-9);
        assert!(v.iter().any(|x| x.what.contains("bound")));
        assert!(v.iter().any(|x| x.what.contains("integrality")));
    }
}
