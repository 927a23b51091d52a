//! Workload formulation.  A workload is a tuple of potentially parallel
//! tasks, one per core of a processor; while a workload runs, its whole
//! processor sits at one frequency mix.  Enumerating workloads turns the
//! shared-frequency requirement into linear rows: each task's time at a
//! frequency is the summed time of the workloads it belongs to, and a
//! workload's frequencies obey the switch threshold.

use crate::error::Error;
use crate::milp::{MilpModel, Sense, VarId};
use crate::shared::{emit_shared, TaskVars};
use crate::simulate::{accumulate_overlap, Schedule, Segment};
use crate::task_graph::{
    deadline, insert_slack_tasks, max_frequency_makespan, Closure, MachineModel, TaskGraph, TaskId,
};

/// Cap on total model variables before building is refused.
pub const DEFAULT_VAR_CAP: usize = 200_000;

/// One enumerated workload: a tuple of tasks that may run side by side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub processor: usize,
    /// One task per core of the processor, in the processor's core order.
    pub members: Vec<TaskId>,
}

/// Variable ids attached to one workload.
#[derive(Debug, Clone)]
pub struct WorkloadVars {
    pub begin: VarId,
    pub end: VarId,
    /// Seconds the workload spends at each frequency.
    pub time_at: Vec<VarId>,
    /// Dwell indicator per frequency: 1 iff the workload uses it.
    pub used: Vec<VarId>,
    /// 1 when the workload has positive duration.
    pub active: VarId,
}

/// A built model plus everything needed to decode its solutions.
#[derive(Debug, Clone)]
pub struct WorkloadModel {
    pub model: MilpModel,
    pub task_vars: TaskVars,
    pub workloads: Vec<Workload>,
    pub wvars: Vec<WorkloadVars>,
    /// Slack-bearing graph the model was built from.
    pub graph: TaskGraph,
    /// Makespan with everything at maximal frequency.
    pub exec_time: f64,
    /// Allowed slowdown percentage the deadline was derived from.
    pub x: f64,
}

/// Per-processor model size diagnostic.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WorkloadDiag {
    pub processor: usize,
    pub workloads: usize,
    pub binaries: usize,
}

/// Walks the cartesian product of the per-core sequences, pruning any
/// prefix whose newest member is ordered against an earlier one.  `visit`
/// returns false to stop the walk.
fn fill(
    seqs: &[&[TaskId]],
    closure: &Closure,
    members: &mut Vec<TaskId>,
    visit: &mut impl FnMut(&[TaskId]) -> bool,
) -> bool {
    if members.len() == seqs.len() {
        return visit(members);
    }
    for &t in seqs[members.len()] {
        if members.iter().all(|&m| !closure.ordered(m, t)) {
            members.push(t);
            let go = fill(seqs, closure, members, visit);
            members.pop();
            if !go {
                return false;
            }
        }
    }
    true
}

fn core_sequences<'g>(
    graph: &'g TaskGraph,
    machine: &MachineModel,
    processor: usize,
) -> Vec<&'g [TaskId]> {
    machine.processors[processor]
        .cores
        .iter()
        .map(|&c| {
            graph
                .core_order
                .iter()
                .find(|(core, _)| *core == c)
                .map(|(_, s)| s.as_slice())
                .unwrap_or(&[])
        })
        .collect()
}

/// All workloads of `processor`, in lexicographic order of member positions.
pub fn enumerate_workloads(
    graph: &TaskGraph,
    machine: &MachineModel,
    closure: &Closure,
    processor: usize,
) -> Vec<Workload> {
    let seqs = core_sequences(graph, machine, processor);
    let mut out = Vec::new();
    let mut members = Vec::with_capacity(seqs.len());
    fill(&seqs, closure, &mut members, &mut |m| {
        out.push(Workload {
            processor,
            members: m.to_vec(),
        });
        true
    });
    out
}

/// Number of workloads per processor, counted by the same pruned walk
/// `enumerate_workloads` runs but without materializing tuples.  Counting a
/// processor stops once its count passes `cap`; a returned value above
/// `cap` is therefore a lower bound, not an exact count.
pub fn count_workloads(graph: &TaskGraph, machine: &MachineModel, cap: u128) -> Vec<u128> {
    let closure = Closure::build(graph);
    (0..machine.processors.len())
        .map(|p| {
            let seqs = core_sequences(graph, machine, p);
            let mut count: u128 = 0;
            let mut members = Vec::with_capacity(seqs.len());
            fill(&seqs, &closure, &mut members, &mut |_| {
                count += 1;
                count <= cap
            });
            count
        })
        .collect()
}

/// Builds the workload MILP for `graph` with slowdown allowance `x` (percent
/// over the all-max makespan).  The graph may be given with or without its
/// slack layer; insertion runs first either way.  `var_cap` bounds the total
/// variable count (`DEFAULT_VAR_CAP` when `None`); exceeding it fails fast
/// with the counts instead of exhausting memory.
pub fn build_workload_milp(
    graph: &TaskGraph,
    machine: &MachineModel,
    x: f64,
    var_cap: Option<usize>,
) -> Result<WorkloadModel, Error> {
    let graph = insert_slack_tasks(graph, machine)?;
    let exec_time = max_frequency_makespan(&graph, machine)?;
    let d = deadline(exec_time, x)?;
    let nf = machine.freq_count();
    let n = graph.tasks.len();
    let n_compute = graph.tasks.iter().filter(|t| !t.kind.is_slack()).count();
    let task_var_count = n * (2 + nf) + n_compute * nf + 1;
    let per_workload = 2 * nf + 3;

    let var_cap = var_cap.unwrap_or(DEFAULT_VAR_CAP);
    let workload_budget = (var_cap.saturating_sub(task_var_count) / per_workload) as u128;
    let counts = count_workloads(&graph, machine, workload_budget);
    let mut running: u128 = 0;
    for (p, &c) in counts.iter().enumerate() {
        running += c;
        if running > workload_budget {
            return Err(Error::WorkloadBlowUp {
                processor: p,
                workloads: running.min(u64::MAX as u128) as u64,
                variables: (task_var_count as u128 + running * per_workload as u128)
                    .min(u64::MAX as u128) as u64,
                cap: var_cap as u64,
            });
        }
    }

    let mut model = MilpModel::new(2.0 * d);
    let task_vars = emit_shared(&mut model, &graph, machine, d);
    let closure = Closure::build(&graph);
    // A threshold above big_M still means "either unused or at least the
    // threshold"; clamping keeps the indicator helper's contract while the
    // variable's own upper bound preserves the (infeasible) semantics.
    let th = machine.threshold_th.min(model.big_m);
    let big_m = model.big_m;

    let mut workloads = Vec::new();
    let mut wvars: Vec<WorkloadVars> = Vec::new();
    // per (task, frequency): workload times covering it
    let mut contrib: Vec<Vec<Vec<VarId>>> = vec![vec![Vec::new(); nf]; n];
    for p in 0..machine.processors.len() {
        for wl in enumerate_workloads(&graph, machine, &closure, p) {
            let gi = workloads.len();
            let b = model.add_continuous(format!("bW_w{gi}"), 0.0, d);
            let e = model.add_continuous(format!("eW_w{gi}"), 0.0, d);
            let time_at: Vec<VarId> = (0..nf)
                .map(|f| model.add_continuous(format!("tW_w{gi}_f{f}"), 0.0, d))
                .collect();
            let used: Vec<VarId> = time_at
                .iter()
                .map(|&tv| {
                    model
                        .add_indicator_nonzero(tv, th)
                        .expect("threshold clamped into range")
                })
                .collect();
            let active = model.add_binary(format!("on_w{gi}"));

            // duration = max(0, end - begin), with the duration substituted
            // by the frequency-time sum throughout
            let sum: Vec<(f64, VarId)> = time_at.iter().map(|&v| (1.0, v)).collect();
            model.add_row(
                format!("span_pos_w{gi}"),
                vec![(1.0, e), (-1.0, b), (-big_m, active)],
                Sense::Le,
                0.0,
            );
            model.add_row(
                format!("span_neg_w{gi}"),
                vec![(1.0, b), (-1.0, e), (big_m, active)],
                Sense::Le,
                big_m,
            );
            let mut lo = vec![(1.0, e), (-1.0, b)];
            lo.extend(sum.iter().map(|&(c, v)| (-c, v)));
            model.add_row(format!("span_lo_w{gi}"), lo, Sense::Le, 0.0);
            let mut on = sum.clone();
            on.push((-big_m, active));
            model.add_row(format!("span_on_w{gi}"), on, Sense::Le, 0.0);
            let mut up = sum.clone();
            up.push((-1.0, e));
            up.push((1.0, b));
            up.push((big_m, active));
            model.add_row(format!("span_up_w{gi}"), up, Sense::Le, big_m);

            // the workload window sits inside every member's window
            for &t in &wl.members {
                let name = &graph.tasks[t].name;
                model.add_row(
                    format!("win_lo_w{gi}_{name}"),
                    vec![(1.0, b), (-1.0, task_vars.begin[t])],
                    Sense::Ge,
                    0.0,
                );
                model.add_row(
                    format!("win_hi_w{gi}_{name}"),
                    vec![(1.0, e), (-1.0, task_vars.end[t])],
                    Sense::Le,
                    0.0,
                );
                for f in 0..nf {
                    contrib[t][f].push(time_at[f]);
                }
            }

            workloads.push(wl);
            wvars.push(WorkloadVars {
                begin: b,
                end: e,
                time_at,
                used,
                active,
            });
        }
    }

    // a task's time at a frequency is exactly what its workloads spend there
    for (t, task) in graph.tasks.iter().enumerate() {
        for f in 0..nf {
            let mut terms = vec![(1.0, task_vars.time_at[t][f])];
            for &v in &contrib[t][f] {
                terms.push((-1.0, v));
            }
            model.add_row(
                format!("cover_{}_f{f}", task.name),
                terms,
                Sense::Eq,
                0.0,
            );
        }
    }

    Ok(WorkloadModel {
        model,
        task_vars,
        workloads,
        wvars,
        graph,
        exec_time,
        x,
    })
}

impl WorkloadModel {
    /// Size diagnostics per processor.
    pub fn diagnostics(&self, machine: &MachineModel) -> Vec<WorkloadDiag> {
        let nf = machine.freq_count();
        (0..machine.processors.len())
            .map(|p| {
                let workloads = self.workloads.iter().filter(|w| w.processor == p).count();
                WorkloadDiag {
                    processor: p,
                    workloads,
                    binaries: workloads * (nf + 1),
                }
            })
            .collect()
    }

    /// Pairs of workload indices that can never both have positive duration:
    /// some member of one strictly precedes a member of the other on the
    /// same core, and vice versa at another core.
    pub fn incompatible_pairs(&self) -> Vec<(usize, usize)> {
        let closure = Closure::build(&self.graph);
        let mut out = Vec::new();
        for i in 0..self.workloads.len() {
            for j in i + 1..self.workloads.len() {
                let (a, b) = (&self.workloads[i], &self.workloads[j]);
                if a.processor != b.processor {
                    continue;
                }
                let fwd = a
                    .members
                    .iter()
                    .zip(&b.members)
                    .any(|(&ma, &mb)| closure.precedes(ma, mb));
                let bwd = a
                    .members
                    .iter()
                    .zip(&b.members)
                    .any(|(&ma, &mb)| closure.precedes(mb, ma));
                if fwd && bwd {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Lays a feasible point out as a per-processor frequency timeline.
///
/// Positive-duration workloads of one processor never overlap, so sorting
/// them by begin and emitting their per-frequency pieces (ascending
/// frequency inside a workload) tiles the horizon.  The point's task times
/// are then re-derived from the timeline as a consistency check.
pub fn decode_workload_solution(
    wm: &WorkloadModel,
    machine: &MachineModel,
    point: &[f64],
) -> Result<Schedule, Error> {
    let total = point[wm.task_vars.total_time];
    let tol = 1e-6 * (1.0 + total.abs());
    let span_cut = 1e-7 * (1.0 + total.abs());
    let mut processors = Vec::with_capacity(machine.processors.len());
    for p in 0..machine.processors.len() {
        let mut active: Vec<(f64, usize)> = (0..wm.workloads.len())
            .filter(|&k| wm.workloads[k].processor == p)
            .filter_map(|k| {
                let span: f64 = wm.wvars[k].time_at.iter().map(|&v| point[v]).sum();
                (span > span_cut).then_some((point[wm.wvars[k].begin], k))
            })
            .collect();
        active.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut segs: Vec<Segment> = Vec::new();
        let mut cursor = 0.0f64;
        for &(bw, k) in &active {
            if (bw - cursor).abs() > tol {
                return Err(Error::Decode(format!(
                    "workload {k} on processor {p} starts at {bw} but the timeline is at {cursor}"
                )));
            }
            for (f, &tv) in wm.wvars[k].time_at.iter().enumerate() {
                let t = point[tv];
                if t > span_cut {
                    match segs.last() {
                        Some(last) if last.f == f => {}
                        _ => segs.push(Segment { t: cursor, f }),
                    }
                    cursor += t;
                }
            }
        }
        if (cursor - total).abs() > tol {
            return Err(Error::Decode(format!(
                "processor {p} timeline ends at {cursor}, expected {total}"
            )));
        }
        if segs.is_empty() {
            segs.push(Segment { t: 0.0, f: 0 });
        }
        processors.push(segs);
    }
    let schedule = Schedule {
        processors,
        horizon: total,
    };

    // re-derive every task's frequency times from the laid-out timeline
    let check_tol = 1e-9 * (1.0 + total.abs());
    for (t, task) in wm.graph.tasks.iter().enumerate() {
        let p = machine
            .processor_of_core(task.core)
            .expect("validated core ownership");
        let nf = machine.freq_count();
        let mut derived = vec![0.0; nf];
        accumulate_overlap(
            p,
            point[wm.task_vars.begin[t]],
            point[wm.task_vars.end[t]],
            &schedule,
            &mut derived,
        );
        for f in 0..nf {
            let got = point[wm.task_vars.time_at[t][f]];
            if (derived[f] - got).abs() > check_tol.max(1e-6 * got.abs()) {
                return Err(Error::Decode(format!(
                    "task {} at f{f}: timeline yields {} s but the point says {} s",
                    task.name, derived[f], got
                )));
            }
        }
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::VarKind;
    use crate::solver::{solve_milp, LpOptions, MilpLimits, SolveStatus};
    use crate::task_graph::{validate_graph, MessageEdge, Task, TaskKind};
    use std::collections::BTreeMap;

    fn machine_2f(cores: &[&[usize]]) -> MachineModel {
        MachineModel::from_json(&format!(
            r#"{{"frequencies": [1e9, 2e9], "threshold_th": 0.1,
                 "processors": [{}], "idle_factor": 0.1}}"#,
            cores
                .iter()
                .map(|c| format!("{{\"cores\": {c:?}}}"))
                .collect::<Vec<_>>()
                .join(", ")
        ))
        .unwrap()
    }

    fn compute(name: &str, core: usize, exec: &[f64], power: &[f64]) -> Task {
        Task {
            name: name.into(),
            core,
            kind: TaskKind::Compute,
            exec: exec.iter().cloned().enumerate().collect::<BTreeMap<_, _>>(),
            power: power
                .iter()
                .cloned()
                .enumerate()
                .collect::<BTreeMap<_, _>>(),
        }
    }

    fn square_graph(edges: Vec<MessageEdge>) -> (TaskGraph, MachineModel) {
        let m = machine_2f(&[&[0, 1]]);
        let tasks = vec![
            compute("A", 0, &[2.0, 1.0], &[10.0, 30.0]),
            compute("B", 0, &[2.0, 1.0], &[10.0, 30.0]),
            compute("C", 1, &[2.0, 1.0], &[10.0, 30.0]),
            compute("D", 1, &[2.0, 1.0], &[10.0, 30.0]),
        ];
        let g = TaskGraph::new(tasks, edges);
        assert!(validate_graph(&g, &m).is_ok());
        (g, m)
    }

    #[test]
    fn no_cross_edges_yield_full_product() {
        let (g, m) = square_graph(vec![]);
        let closure = Closure::build(&g);
        let wls = enumerate_workloads(&g, &m, &closure, 0);
        assert_eq!(wls.len(), 4);
        let a = g.task_by_name("A").unwrap();
        let c = g.task_by_name("C").unwrap();
        assert_eq!(wls[0].members, vec![a, c]);
    }

    #[test]
    fn cross_edge_prunes_ordered_tuples() {
        let (g, m) = square_graph(vec![MessageEdge {
            from: 0,
            to: 3,
            m: 0.0,
        }]);
        let closure = Closure::build(&g);
        let wls = enumerate_workloads(&g, &m, &closure, 0);
        // A precedes D, so the (A, D) tuple disappears
        assert_eq!(wls.len(), 3);
        let a = g.task_by_name("A").unwrap();
        let d = g.task_by_name("D").unwrap();
        assert!(!wls.iter().any(|w| w.members == vec![a, d]));
    }

    #[test]
    fn counting_matches_enumeration_and_caps() {
        let (g, m) = square_graph(vec![MessageEdge {
            from: 0,
            to: 3,
            m: 0.0,
        }]);
        let g = insert_slack_tasks(&g, &m).unwrap();
        let closure = Closure::build(&g);
        let counts = count_workloads(&g, &m, 1 << 20);
        assert_eq!(
            counts[0],
            enumerate_workloads(&g, &m, &closure, 0).len() as u128
        );
        let capped = count_workloads(&g, &m, 3);
        assert_eq!(capped[0], 4); // cap + 1 signals "more than cap"
    }

    #[test]
    fn variable_cap_fails_fast() {
        let (g, m) = square_graph(vec![]);
        let err = build_workload_milp(&g, &m, 50.0, Some(40)).unwrap_err();
        match err {
            Error::WorkloadBlowUp { cap, workloads, .. } => {
                assert_eq!(cap, 40);
                assert!(workloads > 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn workload_variable_count_follows_formula() {
        let (g, m) = square_graph(vec![]);
        let wm = build_workload_milp(&g, &m, 50.0, None).unwrap();
        let nf = m.freq_count();
        // slack layer adds one barrier per core: 3 tasks per core, 9 tuples
        assert_eq!(wm.workloads.len(), 9);
        let n = wm.graph.tasks.len();
        let n_compute = 4;
        let expect = n * (2 + nf) + n_compute * nf + 1 + wm.workloads.len() * (2 * nf + 3);
        assert_eq!(wm.model.vars.len(), expect);
        let binaries = wm
            .model
            .vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count();
        assert_eq!(binaries, wm.workloads.len() * (nf + 1));
    }

    #[test]
    fn single_task_optima_match_closed_form() {
        let m = machine_2f(&[&[0]]);
        let g = TaskGraph::new(vec![compute("T1", 0, &[2.0, 1.0], &[10.0, 30.0])], vec![]);
        let wm = build_workload_milp(&g, &m, 100.0, None).unwrap();
        let r = solve_milp(&wm.model, &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 20.0).abs() < 1e-6, "{r:?}");

        let wm = build_workload_milp(&g, &m, 0.0, None).unwrap();
        let r = solve_milp(&wm.model, &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 30.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn oversized_threshold_is_infeasible() {
        let mut m = machine_2f(&[&[0]]);
        m.threshold_th = 10.0;
        let g = TaskGraph::new(vec![compute("T1", 0, &[2.0, 1.0], &[10.0, 30.0])], vec![]);
        let wm = build_workload_milp(&g, &m, 0.0, None).unwrap();
        let r = solve_milp(&wm.model, &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn decoded_solution_tiles_the_horizon() {
        let m = machine_2f(&[&[0, 1]]);
        let tasks = vec![
            compute("T1", 0, &[3.0, 1.5], &[10.0, 30.0]),
            compute("T2", 0, &[2.0, 1.0], &[8.0, 24.0]),
            compute("T3", 1, &[2.0, 1.0], &[9.0, 27.0]),
            compute("T4", 1, &[2.0, 1.0], &[9.0, 27.0]),
        ];
        let edges = vec![MessageEdge {
            from: 0,
            to: 3,
            m: 0.6,
        }];
        let g = TaskGraph::new(tasks, edges);
        let wm = build_workload_milp(&g, &m, 50.0, None).unwrap();
        let r = solve_milp(&wm.model, &LpOptions::default(), &MilpLimits::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let point = r.assignment.unwrap();
        let schedule = decode_workload_solution(&wm, &m, &point).unwrap();
        assert!((schedule.horizon - point[wm.task_vars.total_time]).abs() < 1e-9);
        for segs in &schedule.processors {
            assert_eq!(segs[0].t, 0.0);
            for w in segs.windows(2) {
                assert!(w[1].t > w[0].t);
                assert_ne!(w[0].f, w[1].f);
            }
        }
        // incompatible pairs exist here and at most one of each is active
        let pairs = wm.incompatible_pairs();
        assert!(!pairs.is_empty());
        for (i, j) in pairs {
            let si: f64 = wm.wvars[i].time_at.iter().map(|&v| point[v]).sum();
            let sj: f64 = wm.wvars[j].time_at.iter().map(|&v| point[v]).sum();
            assert!(si.min(sj) < 1e-6, "workloads {i} and {j} both active");
        }
    }
}
