//! Bounded-variable primal simplex, two phases, explicit basis inverse.
//!
//! The inverse is maintained by elementary row updates after each pivot and
//! rebuilt from scratch periodically (and before extracting the final point)
//! to keep residuals small.  Pricing is Dantzig's rule, falling back to
//! Bland's rule permanently within a phase once the objective stalls, which
//! breaks degenerate cycles.  All loops are index-ordered, so runs are
//! bitwise reproducible.

use super::{Lp, LpOptions, SolveStatus};
use crate::milp::Sense;

pub(crate) struct SimplexOut {
    pub status: SolveStatus,
    pub x: Option<Vec<f64>>,
    pub iters: usize,
}

const PIVOT_TOL: f64 = 1e-9;
const RATIO_TIE: f64 = 1e-10;
const REFACTOR_EVERY: usize = 100;
const STALL_LIMIT: usize = 200;
const SINGULAR_TOL: f64 = 1e-11;

enum LoopEnd {
    Optimal,
    Unbounded,
    IterLimit,
    Singular,
}

struct Work<'a> {
    lp: &'a Lp,
    m: usize,
    ncols: usize,
    /// Columns for slacks and artificials, indexed by `j - lp.n`.
    extra: Vec<Vec<(u32, f64)>>,
    lo: Vec<f64>,
    up: Vec<f64>,
    basis: Vec<usize>,
    /// Row a column is basic in, or -1.
    pos: Vec<i32>,
    at_upper: Vec<bool>,
    /// Basis inverse, column-major `m x m`.
    binv: Vec<f64>,
    xb: Vec<f64>,
    art_start: usize,
    iters: usize,
    pivots_since_refactor: usize,
}

impl<'a> Work<'a> {
    fn col(&self, j: usize) -> &[(u32, f64)] {
        if j < self.lp.n {
            &self.lp.cols[j]
        } else {
            &self.extra[j - self.lp.n]
        }
    }

    fn value(&self, j: usize) -> f64 {
        let p = self.pos[j];
        if p >= 0 {
            self.xb[p as usize]
        } else if self.at_upper[j] {
            self.up[j]
        } else {
            self.lo[j]
        }
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        cost.iter()
            .enumerate()
            .filter(|&(_, &c)| c != 0.0)
            .map(|(j, &c)| c * self.value(j))
            .sum()
    }

    /// `w = B^{-1} a_j`.
    fn ftran(&self, j: usize, w: &mut [f64]) {
        w.fill(0.0);
        let m = self.m;
        for &(r, v) in self.col(j) {
            let colr = &self.binv[r as usize * m..r as usize * m + m];
            for i in 0..m {
                w[i] += v * colr[i];
            }
        }
    }

    /// `y^T = c_B^T B^{-1}`.
    fn btran(&self, cost: &[f64], y: &mut [f64]) {
        let m = self.m;
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
        for r in 0..m {
            let colr = &self.binv[r * m..r * m + m];
            let mut acc = 0.0;
            for i in 0..m {
                acc += cb[i] * colr[i];
            }
            y[r] = acc;
        }
    }

    /// Rebuilds `binv` from the basis columns; false when numerically singular.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        if m == 0 {
            return true;
        }
        let w = 2 * m;
        let mut a = vec![0.0f64; m * w];
        for (k, &j) in self.basis.iter().enumerate() {
            for &(r, v) in self.col(j) {
                a[r as usize * w + k] = v;
            }
        }
        for i in 0..m {
            a[i * w + m + i] = 1.0;
        }
        for k in 0..m {
            let mut p = k;
            let mut best = a[k * w + k].abs();
            for r in k + 1..m {
                let v = a[r * w + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < SINGULAR_TOL {
                return false;
            }
            if p != k {
                for c in 0..w {
                    a.swap(p * w + c, k * w + c);
                }
            }
            let piv = a[k * w + k];
            for c in 0..w {
                a[k * w + c] /= piv;
            }
            for r in 0..m {
                if r == k {
                    continue;
                }
                let f = a[r * w + k];
                if f != 0.0 {
                    for c in 0..w {
                        a[r * w + c] -= f * a[k * w + c];
                    }
                }
            }
        }
        for c in 0..m {
            for i in 0..m {
                self.binv[c * m + i] = a[i * w + m + c];
            }
        }
        self.pivots_since_refactor = 0;
        true
    }

    /// `x_B = B^{-1} (b - A_N x_N)`.
    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut r: Vec<f64> = self.lp.rhs.clone();
        for j in 0..self.ncols {
            if self.pos[j] >= 0 {
                continue;
            }
            let v = if self.at_upper[j] { self.up[j] } else { self.lo[j] };
            if v == 0.0 {
                continue;
            }
            for &(row, coef) in self.col(j) {
                r[row as usize] -= coef * v;
            }
        }
        self.xb.fill(0.0);
        for (row, &rv) in r.iter().enumerate() {
            if rv == 0.0 {
                continue;
            }
            let colr = &self.binv[row * m..row * m + m];
            for i in 0..m {
                self.xb[i] += rv * colr[i];
            }
        }
    }

    fn run(&mut self, cost: &[f64], opts: &LpOptions) -> LoopEnd {
        let m = self.m;
        let mut y = vec![0.0f64; m];
        let mut w = vec![0.0f64; m];
        let mut bland = false;
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;

        loop {
            if self.iters >= opts.max_iters {
                return LoopEnd::IterLimit;
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                if !self.refactor() {
                    return LoopEnd::Singular;
                }
                self.recompute_xb();
            }

            let obj = self.objective(cost);
            if obj < last_obj - 1e-12 {
                stall = 0;
            } else {
                stall += 1;
                if stall >= STALL_LIMIT {
                    bland = true;
                }
            }
            last_obj = obj;

            self.btran(cost, &mut y);

            // Entering column.
            let mut enter: Option<usize> = None;
            let mut best_score = opts.opt_tol;
            for j in 0..self.ncols {
                if self.pos[j] >= 0 || self.up[j] - self.lo[j] <= 1e-15 {
                    continue;
                }
                let mut d = cost[j];
                for &(r, v) in self.col(j) {
                    d -= y[r as usize] * v;
                }
                let improving = if self.at_upper[j] { d > opts.opt_tol } else { d < -opts.opt_tol };
                if !improving {
                    continue;
                }
                if bland {
                    enter = Some(j);
                    break;
                }
                if d.abs() > best_score {
                    best_score = d.abs();
                    enter = Some(j);
                }
            }
            let e = match enter {
                Some(e) => e,
                None => return LoopEnd::Optimal,
            };
            let dir: f64 = if self.at_upper[e] { -1.0 } else { 1.0 };

            self.ftran(e, &mut w);
            self.iters += 1;

            // Ratio test: the entering step is limited by its own span and by
            // each basic variable hitting a finite bound.
            let span = self.up[e] - self.lo[e];
            let mut t_best = if span.is_finite() { span } else { f64::INFINITY };
            // (row, to_upper, |pivot|)
            let mut leave: Option<(usize, bool, f64)> = None;
            for i in 0..m {
                let wi = w[i];
                if wi.abs() <= PIVOT_TOL {
                    continue;
                }
                let delta = -dir * wi;
                let bcol = self.basis[i];
                let (cap, to_upper) = if delta > 0.0 {
                    (self.up[bcol], true)
                } else {
                    (self.lo[bcol], false)
                };
                if !cap.is_finite() {
                    continue;
                }
                let mut t = if delta > 0.0 {
                    (cap - self.xb[i]) / delta
                } else {
                    (self.xb[i] - cap) / -delta
                };
                if t < 0.0 {
                    t = 0.0;
                }
                let take = if t < t_best - RATIO_TIE {
                    true
                } else if t <= t_best + RATIO_TIE {
                    match leave {
                        // A tying row exit beats a bound flip.
                        None => t_best.is_finite(),
                        Some((li, _, lw)) => {
                            if bland {
                                bcol < self.basis[li]
                            } else {
                                wi.abs() > lw
                            }
                        }
                    }
                } else {
                    false
                };
                if take {
                    t_best = t.min(t_best);
                    leave = Some((i, to_upper, wi.abs()));
                }
            }
            if !t_best.is_finite() {
                return LoopEnd::Unbounded;
            }
            let t = t_best.max(0.0);

            match leave {
                None => {
                    // Bound flip across the entering variable's span.
                    for i in 0..m {
                        self.xb[i] -= dir * t * w[i];
                    }
                    self.at_upper[e] = !self.at_upper[e];
                }
                Some((rr, to_upper, _)) => {
                    let enter_val = self.value(e) + dir * t;
                    for i in 0..m {
                        if i != rr {
                            self.xb[i] -= dir * t * w[i];
                        }
                    }
                    let leaving = self.basis[rr];
                    self.pos[leaving] = -1;
                    self.at_upper[leaving] = to_upper;
                    self.basis[rr] = e;
                    self.pos[e] = rr as i32;
                    self.xb[rr] = enter_val;

                    // binv := E binv with E the elementary pivot matrix.
                    let piv = w[rr];
                    let f: Vec<f64> = w.iter().map(|&wi| wi / piv).collect();
                    for c in 0..m {
                        let col = &mut self.binv[c * m..c * m + m];
                        let v = col[rr];
                        if v != 0.0 {
                            for i in 0..m {
                                col[i] -= f[i] * v;
                            }
                            col[rr] = v / piv;
                        }
                    }
                    self.pivots_since_refactor += 1;
                }
            }
        }
    }
}

pub(crate) fn solve(lp: &Lp, opts: &LpOptions) -> SimplexOut {
    let m = lp.m;
    let n = lp.n;

    // Slack bounds by sense; the slack coefficient is always +1.
    let mut lo = lp.lo.clone();
    let mut up = lp.up.clone();
    let mut extra: Vec<Vec<(u32, f64)>> = Vec::with_capacity(2 * m);
    for s in lp.sense.iter() {
        match s {
            Sense::Le => {
                lo.push(0.0);
                up.push(f64::INFINITY);
            }
            Sense::Ge => {
                lo.push(f64::NEG_INFINITY);
                up.push(0.0);
            }
            Sense::Eq => {
                lo.push(0.0);
                up.push(0.0);
            }
        }
    }
    for i in 0..m {
        extra.push(vec![(i as u32, 1.0)]);
    }

    let mut at_upper = vec![false; n + m];
    for j in 0..n {
        assert!(
            lo[j].is_finite() || up[j].is_finite(),
            "free column {j} is not supported"
        );
        if !lo[j].is_finite() {
            at_upper[j] = true;
        }
    }
    // Ge slacks live at their finite (upper) bound when nonbasic.
    for (i, s) in lp.sense.iter().enumerate() {
        if matches!(s, Sense::Ge) {
            at_upper[n + i] = true;
        }
    }

    // Initial residual with all structurals at their bounds.
    let mut resid = lp.rhs.clone();
    for j in 0..n {
        let v = if at_upper[j] { up[j] } else { lo[j] };
        if v == 0.0 {
            continue;
        }
        for &(r, c) in &lp.cols[j] {
            resid[r as usize] -= c * v;
        }
    }

    let mut basis = Vec::with_capacity(m);
    let mut xb = Vec::with_capacity(m);
    let mut art_cols = Vec::new();
    for i in 0..m {
        let slack = n + i;
        let (slo, sup) = (lo[slack], up[slack]);
        if resid[i] >= slo && resid[i] <= sup {
            basis.push(slack);
            xb.push(resid[i]);
        } else {
            // Park the slack at its nearest bound and let an artificial
            // column absorb the remaining residual.
            let clamped = resid[i].clamp(slo, sup);
            at_upper[slack] = clamped == sup && sup.is_finite();
            let left = resid[i] - clamped;
            art_cols.push((i, left));
            basis.push(usize::MAX); // patched below
            xb.push(left.abs());
        }
    }

    let ncols = n + m + art_cols.len();
    let mut work = Work {
        lp,
        m,
        ncols,
        extra,
        lo,
        up,
        basis,
        pos: Vec::new(),
        at_upper,
        binv: {
            let mut b = vec![0.0; m * m];
            for i in 0..m {
                b[i * m + i] = 1.0;
            }
            b
        },
        xb,
        art_start: n + m,
        iters: 0,
        pivots_since_refactor: 0,
    };
    for (k, &(row, left)) in art_cols.iter().enumerate() {
        let j = work.art_start + k;
        work.extra.push(vec![(row as u32, if left > 0.0 { 1.0 } else { -1.0 })]);
        work.lo.push(0.0);
        work.up.push(f64::INFINITY);
        work.at_upper.push(false);
        work.basis[row] = j;
        if left < 0.0 {
            // The basis column is -e_row, so the inverse starts with the
            // matching sign; a plain identity would corrupt every dual
            // priced through this row.
            work.binv[row * m + row] = -1.0;
        }
    }
    work.pos = vec![-1i32; ncols];
    for (i, &j) in work.basis.iter().enumerate() {
        work.pos[j] = i as i32;
    }

    let rhs_scale = 1.0 + lp.rhs.iter().map(|v| v.abs()).fold(0.0f64, f64::max);

    // Phase 1: drive artificial residuals to zero.
    if !art_cols.is_empty() {
        let mut cost1 = vec![0.0; ncols];
        for j in work.art_start..ncols {
            cost1[j] = 1.0;
        }
        match work.run(&cost1, opts) {
            LoopEnd::Optimal => {}
            LoopEnd::IterLimit | LoopEnd::Singular => {
                return SimplexOut {
                    status: SolveStatus::Limit,
                    x: None,
                    iters: work.iters,
                };
            }
            LoopEnd::Unbounded => unreachable!("phase-1 objective is bounded below"),
        }
        let p1: f64 = (work.art_start..ncols).map(|j| work.value(j)).sum();
        if p1 > opts.feas_tol * rhs_scale {
            return SimplexOut {
                status: SolveStatus::Infeasible,
                x: None,
                iters: work.iters,
            };
        }
        for j in work.art_start..ncols {
            work.lo[j] = 0.0;
            work.up[j] = 0.0;
            if work.pos[j] < 0 {
                work.at_upper[j] = false;
            }
        }
    }

    // Phase 2: the real objective.
    let mut cost2 = vec![0.0; ncols];
    cost2[..n].copy_from_slice(&lp.cost);
    let end = work.run(&cost2, opts);
    let status = match end {
        LoopEnd::Optimal => SolveStatus::Optimal,
        LoopEnd::Unbounded => SolveStatus::Unbounded,
        LoopEnd::IterLimit | LoopEnd::Singular => SolveStatus::Limit,
    };
    if matches!(status, SolveStatus::Optimal) {
        // Tighten the final point before extraction.
        if work.refactor() {
            work.recompute_xb();
        }
    }
    let x = match status {
        SolveStatus::Optimal | SolveStatus::Unbounded => {
            Some((0..n).map(|j| work.value(j)).collect())
        }
        _ => None,
    };
    SimplexOut {
        status,
        x,
        iters: work.iters,
    }
}
