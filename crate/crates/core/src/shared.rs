//! Constraint layer common to both formulations: task timing variables,
//! precedence, durations, the barrier/deadline block, and the energy
//! objective.  A formulation module adds its own rows on top and couples
//! them through the per-frequency task times created here.

use crate::milp::{MilpModel, RowId, Sense, VarId};
use crate::task_graph::{MachineModel, TaskGraph, TaskKind};

/// Variable ids for the task timing layer, indexed by task id.
#[derive(Debug, Clone)]
pub struct TaskVars {
    /// Start time of each task, seconds.
    pub begin: Vec<VarId>,
    /// End time of each task, seconds.
    pub end: Vec<VarId>,
    /// Seconds each task spends at each frequency.
    pub time_at: Vec<Vec<VarId>>,
    /// Fraction of each task executed at each frequency; `None` for slack,
    /// whose per-frequency split is decided by the formulation rows alone.
    pub fraction: Vec<Option<Vec<VarId>>>,
    /// Instant every core leaves the final barrier.
    pub total_time: VarId,
    /// Latest completion the schedule may have, seconds.
    pub deadline: f64,
}

impl TaskVars {
    /// Creates begin/end/per-frequency variables for every task plus the
    /// completion variable.  All times live in [0, deadline]; a compute
    /// task's per-frequency time is further capped by its execution time at
    /// that frequency.  The graph must carry its slack layer.
    pub fn create(
        model: &mut MilpModel,
        graph: &TaskGraph,
        machine: &MachineModel,
        deadline: f64,
    ) -> Self {
        assert!(
            deadline > 0.0 && deadline.is_finite(),
            "deadline must be positive, got {deadline}"
        );
        for (core, seq) in &graph.core_order {
            let last = *seq
                .last()
                .unwrap_or_else(|| panic!("core {core} has no tasks"));
            assert!(
                graph.tasks[last].kind == TaskKind::BarrierSlack,
                "task variables need the slack layer; core {core} does not end with a barrier"
            );
        }

        let nf = machine.freq_count();
        let n = graph.tasks.len();
        // Cores run from program start: the first task of each core begins
        // at 0.  Without this a core could push its whole chain toward the
        // barrier and the time before its first task would be charged to
        // nothing, under-counting energy the hardware really draws.
        let first: std::collections::HashSet<usize> = graph
            .core_order
            .iter()
            .filter_map(|(_, seq)| seq.first().copied())
            .collect();
        let mut begin = Vec::with_capacity(n);
        let mut end = Vec::with_capacity(n);
        let mut time_at = Vec::with_capacity(n);
        let mut fraction = Vec::with_capacity(n);
        for (t, task) in graph.tasks.iter().enumerate() {
            let start_cap = if first.contains(&t) { 0.0 } else { deadline };
            begin.push(model.add_continuous(format!("bT_{}", task.name), 0.0, start_cap));
            end.push(model.add_continuous(format!("eT_{}", task.name), 0.0, deadline));
            let mut times = Vec::with_capacity(nf);
            for f in 0..nf {
                let cap = match task.kind {
                    TaskKind::Compute => task.exec_s(f).min(deadline),
                    _ => deadline,
                };
                times.push(model.add_continuous(format!("tT_{}_f{f}", task.name), 0.0, cap));
            }
            time_at.push(times);
            fraction.push(match task.kind {
                TaskKind::Compute => Some(
                    (0..nf)
                        .map(|f| {
                            model.add_continuous(format!("frac_{}_f{f}", task.name), 0.0, 1.0)
                        })
                        .collect(),
                ),
                _ => None,
            });
        }
        let total_time = model.add_continuous("total_time", 0.0, deadline);
        TaskVars {
            begin,
            end,
            time_at,
            fraction,
            total_time,
            deadline,
        }
    }
}

/// Ordering rows: each task starts exactly when its core predecessor ends,
/// and a message slack ends no earlier than each awaited message's arrival
/// (sender end plus transmission time).
pub fn emit_precedence(model: &mut MilpModel, graph: &TaskGraph, vars: &TaskVars) -> Vec<RowId> {
    let mut rows = Vec::new();
    for (_, seq) in &graph.core_order {
        for w in seq.windows(2) {
            let (a, b) = (w[0], w[1]);
            rows.push(model.add_row(
                format!("seq_{}", graph.tasks[b].name),
                vec![(1.0, vars.begin[b]), (-1.0, vars.end[a])],
                Sense::Eq,
                0.0,
            ));
        }
    }
    for e in &graph.edges {
        // The wait for this message lives in the slack right before the
        // target; the chain equality then keeps the target from starting
        // before the arrival.
        let slack = graph
            .predecessor_on_core(e.to)
            .expect("validated edge target has a predecessor");
        assert!(
            graph.tasks[slack].kind == TaskKind::MessageSlack,
            "precedence rows need the slack layer"
        );
        rows.push(model.add_row(
            format!(
                "recv_{}_from_{}",
                graph.tasks[e.to].name, graph.tasks[e.from].name
            ),
            vec![(1.0, vars.end[slack]), (-1.0, vars.end[e.from])],
            Sense::Ge,
            e.m,
        ));
    }
    for (t, task) in graph.tasks.iter().enumerate() {
        if task.kind == TaskKind::MessageSlack {
            rows.push(model.add_row(
                format!("wait_{}", task.name),
                vec![(1.0, vars.end[t]), (-1.0, vars.begin[t])],
                Sense::Ge,
                0.0,
            ));
        }
    }
    rows
}

/// Duration rows (end = begin + per-frequency times) for every task, and
/// for compute tasks the completion split: fractions sum to one and the
/// time at each frequency is the fraction times the execution time there.
pub fn emit_duration_and_completion(
    model: &mut MilpModel,
    graph: &TaskGraph,
    vars: &TaskVars,
) -> Vec<RowId> {
    let mut rows = Vec::new();
    for (t, task) in graph.tasks.iter().enumerate() {
        let mut terms = vec![(1.0, vars.end[t]), (-1.0, vars.begin[t])];
        for &v in &vars.time_at[t] {
            terms.push((-1.0, v));
        }
        rows.push(model.add_row(format!("dur_{}", task.name), terms, Sense::Eq, 0.0));
        if let Some(frac) = &vars.fraction[t] {
            rows.push(model.add_row(
                format!("split_{}", task.name),
                frac.iter().map(|&v| (1.0, v)).collect(),
                Sense::Eq,
                1.0,
            ));
            for (f, &fv) in frac.iter().enumerate() {
                rows.push(model.add_row(
                    format!("speed_{}_f{f}", task.name),
                    vec![(1.0, vars.time_at[t][f]), (-task.exec_s(f), fv)],
                    Sense::Eq,
                    0.0,
                ));
            }
        }
    }
    rows
}

/// Barrier rows: all cores leave the final barrier together, `total_time`
/// names that instant, and it must meet the deadline.
pub fn emit_deadline(model: &mut MilpModel, graph: &TaskGraph, vars: &TaskVars) -> Vec<RowId> {
    let barrier_ends: Vec<(usize, VarId)> = graph
        .core_order
        .iter()
        .map(|(core, seq)| {
            let last = *seq.last().expect("validated core");
            assert!(
                graph.tasks[last].kind == TaskKind::BarrierSlack,
                "deadline rows need the slack layer"
            );
            (*core, vars.end[last])
        })
        .collect();
    let mut rows = Vec::new();
    for w in barrier_ends.windows(2) {
        rows.push(model.add_row(
            format!("barrier_c{}", w[1].0),
            vec![(1.0, w[0].1), (-1.0, w[1].1)],
            Sense::Eq,
            0.0,
        ));
    }
    rows.push(model.add_row(
        "completion",
        vec![(1.0, vars.total_time), (-1.0, barrier_ends[0].1)],
        Sense::Eq,
        0.0,
    ));
    rows.push(model.add_row(
        "deadline",
        vec![(1.0, vars.total_time)],
        Sense::Le,
        vars.deadline,
    ));
    rows
}

/// Energy objective: time at each frequency weighted by the task's power
/// draw there.  Slack tasks carry idle power, so waiting is charged too.
pub fn emit_objective(model: &mut MilpModel, graph: &TaskGraph, vars: &TaskVars) {
    let mut terms = Vec::new();
    for (t, task) in graph.tasks.iter().enumerate() {
        for (f, &v) in vars.time_at[t].iter().enumerate() {
            terms.push((task.power_w(f), v));
        }
    }
    model.set_objective(terms);
}

/// Creates the task variable layer and emits every shared row group.
pub fn emit_shared(
    model: &mut MilpModel,
    graph: &TaskGraph,
    machine: &MachineModel,
    deadline: f64,
) -> TaskVars {
    let vars = TaskVars::create(model, graph, machine, deadline);
    emit_precedence(model, graph, &vars);
    emit_duration_and_completion(model, graph, &vars);
    emit_deadline(model, graph, &vars);
    emit_objective(model, graph, &vars);
    vars
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_lp, LpOptions, SolveStatus};
    use crate::task_graph::{
        deadline, insert_slack_tasks, max_frequency_makespan, validate_graph, MachineModel,
        MessageEdge, Task, TaskGraph,
    };
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

    fn single_task_instance() -> (TaskGraph, MachineModel) {
        let m = machine_2f(&[&[0]]);
        let g = TaskGraph::new(vec![compute("T1", 0, &[2.0, 1.0], &[10.0, 30.0])], vec![]);
        let g = insert_slack_tasks(&g, &m).unwrap();
        (g, m)
    }

    fn shared_model(graph: &TaskGraph, machine: &MachineModel, x: f64) -> (MilpModel, TaskVars) {
        let exec_time = max_frequency_makespan(graph, machine).unwrap();
        let d = deadline(exec_time, x).unwrap();
        let mut model = MilpModel::new(2.0 * d);
        let vars = emit_shared(&mut model, graph, machine, d);
        (model, vars)
    }

    #[test]
    fn loose_deadline_runs_slow_throughout() {
        let (g, m) = single_task_instance();
        let (model, _) = shared_model(&g, &m, 100.0);
        let r = solve_lp(&model, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 20.0).abs() < 1e-7, "{r:?}");
    }

    #[test]
    fn tight_deadline_forces_fast_frequency() {
        let (g, m) = single_task_instance();
        let (model, vars) = shared_model(&g, &m, 0.0);
        let r = solve_lp(&model, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 30.0).abs() < 1e-7, "{r:?}");
        let x = r.assignment.unwrap();
        assert!((x[vars.total_time] - 1.0).abs() < 1e-9);
    }

    fn two_core_instance() -> (TaskGraph, MachineModel) {
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
        assert!(validate_graph(&g, &m).is_ok());
        (insert_slack_tasks(&g, &m).unwrap(), m)
    }

    #[test]
    fn zero_margin_pins_completion_to_makespan() {
        let (g, m) = two_core_instance();
        let exec_time = max_frequency_makespan(&g, &m).unwrap();
        let (model, vars) = shared_model(&g, &m, 0.0);
        let r = solve_lp(&model, &[], &LpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let x = r.assignment.unwrap();
        assert!(
            (x[vars.total_time] - exec_time).abs() < 1e-9,
            "completion {} vs makespan {exec_time}",
            x[vars.total_time]
        );
    }

    #[test]
    fn message_wait_is_respected_at_optimum() {
        let (g, m) = two_core_instance();
        let (model, vars) = shared_model(&g, &m, 50.0);
        let r = solve_lp(&model, &[], &LpOptions::default());
        let x = r.assignment.unwrap();
        let t1 = g.task_by_name("T1").unwrap();
        let t4 = g.task_by_name("T4").unwrap();
        assert!(x[vars.begin[t4]] >= x[vars.end[t1]] + 0.6 - 1e-9);
        // the slack preceding T4 stretches from T3's end to T4's start
        let ts = g.predecessor_on_core(t4).unwrap();
        let t3 = g.task_by_name("T3").unwrap();
        assert!((x[vars.begin[ts]] - x[vars.end[t3]]).abs() < 1e-9);
        assert!((x[vars.end[ts]] - x[vars.begin[t4]]).abs() < 1e-9);
    }

    #[test]
    fn hand_built_point_checks_out() {
        let (g, m) = single_task_instance();
        let (model, vars) = shared_model(&g, &m, 100.0);
        let t1 = g.task_by_name("T1").unwrap();
        let tb = g.task_by_name("Tb_c0").unwrap();
        let mut x = vec![0.0; model.vars.len()];
        // half the work at each frequency: 1.0 s slow + 0.5 s fast
        x[vars.begin[t1]] = 0.0;
        x[vars.end[t1]] = 1.5;
        x[vars.time_at[t1][0]] = 1.0;
        x[vars.time_at[t1][1]] = 0.5;
        let frac = vars.fraction[t1].as_ref().unwrap();
        x[frac[0]] = 0.5;
        x[frac[1]] = 0.5;
        x[vars.begin[tb]] = 1.5;
        x[vars.end[tb]] = 1.5;
        x[vars.total_time] = 1.5;
        assert!(model.check_point(&x, 1e-9).is_empty());
        assert!((model.objective_value(&x) - 25.0).abs() < 1e-12);
        // shrinking one fraction breaks the completion split
        x[frac[0]] = 0.4;
        let viol = model.check_point(&x, 1e-9);
        assert!(viol.iter().any(|v| v.what.contains("split_T1")), "{viol:?}");
    }
}
