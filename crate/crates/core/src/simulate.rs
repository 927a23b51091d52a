//! Discrete-event execution of a task graph under a per-processor frequency
//! timeline.  This is the ground truth the optimizer's decoded schedules are
//! judged against: tasks start as early as precedence allows, compute tasks
//! accumulate progress at a rate set by the active frequency, and energy is
//! integrated from realized times.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::task_graph::{
    deadline, FreqId, MachineModel, TaskGraph, TaskId, TaskKind, ValidationReport,
};

/// One piece of a piecewise-constant frequency timeline: frequency `f`
/// applies from instant `t` until the next segment starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t: f64,
    pub f: FreqId,
}

/// Frequency timeline per processor.  The last segment of each processor
/// extends past `horizon`; `horizon` records when the whole run completes.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub processors: Vec<Vec<Segment>>,
    pub horizon: f64,
}

impl Schedule {
    /// Single-frequency schedule on every processor.
    pub fn constant(machine: &MachineModel, f: FreqId, horizon: f64) -> Self {
        Schedule {
            processors: vec![vec![Segment { t: 0.0, f }]; machine.processors.len()],
            horizon,
        }
    }

    /// Frequency active on processor `p` at instant `t`.  Segments own the
    /// half-open interval [start, next start), so a switch takes effect at
    /// its exact instant.
    pub fn frequency_at(&self, p: usize, t: f64) -> FreqId {
        let segs = &self.processors[p];
        let mut f = segs[0].f;
        for s in segs {
            if s.t <= t {
                f = s.f;
            } else {
                break;
            }
        }
        f
    }

    /// Next switch instant on `p` strictly after `t`, if any.
    pub fn next_boundary(&self, p: usize, t: f64) -> Option<f64> {
        self.processors[p].iter().map(|s| s.t).find(|&b| b > t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentEntry {
    t: f64,
    f: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessorSegments {
    segments: Vec<SegmentEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    processors: Vec<ProcessorSegments>,
    horizon: f64,
}

impl Schedule {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: ScheduleFile =
            serde_json::from_str(text).map_err(|e| Error::parse("schedule file", e.to_string()))?;
        Ok(Schedule {
            processors: file
                .processors
                .into_iter()
                .map(|p| {
                    p.segments
                        .into_iter()
                        .map(|s| Segment { t: s.t, f: s.f })
                        .collect()
                })
                .collect(),
            horizon: file.horizon,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ScheduleFile {
            processors: self
                .processors
                .iter()
                .map(|p| ProcessorSegments {
                    segments: p.iter().map(|s| SegmentEntry { t: s.t, f: s.f }).collect(),
                })
                .collect(),
            horizon: self.horizon,
        };
        serde_json::to_string_pretty(&file).expect("schedule serializes")
    }
}

/// Realized execution of one run: observed begin/end per task, seconds each
/// task spent at each frequency, and the instant the final barrier released.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub begin: Vec<f64>,
    pub end: Vec<f64>,
    pub time_at: Vec<Vec<f64>>,
    pub total_time: f64,
}

/// Energy of a realized run, per task and in total.
#[derive(Debug, Clone)]
pub struct EnergyBreakdown {
    pub per_task: Vec<f64>,
    pub total: f64,
}

fn check_layout(graph: &TaskGraph, machine: &MachineModel, schedule: &Schedule) -> Result<(), Error> {
    if schedule.processors.len() != machine.processors.len() {
        return Err(Error::Simulation(format!(
            "schedule covers {} processors but the machine has {}",
            schedule.processors.len(),
            machine.processors.len()
        )));
    }
    for (p, segs) in schedule.processors.iter().enumerate() {
        if segs.is_empty() {
            return Err(Error::Simulation(format!(
                "processor {p} has no frequency segments"
            )));
        }
        if segs[0].t != 0.0 {
            return Err(Error::Simulation(format!(
                "processor {p} segments must start at 0, got {}",
                segs[0].t
            )));
        }
        for w in segs.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Simulation(format!(
                    "processor {p} segments out of order at t={}",
                    w[1].t
                )));
            }
        }
        for s in segs {
            if s.f >= machine.freq_count() {
                return Err(Error::Simulation(format!(
                    "processor {p} uses frequency id {} beyond the machine's {} levels",
                    s.f,
                    machine.freq_count()
                )));
            }
        }
    }
    for (core, seq) in &graph.core_order {
        let last = *seq
            .last()
            .ok_or_else(|| Error::Simulation(format!("core {core} has no tasks")))?;
        if graph.tasks[last].kind != TaskKind::BarrierSlack {
            return Err(Error::Simulation(
                "simulation needs the slack layer; run slack insertion first".into(),
            ));
        }
    }
    Ok(())
}

/// Runs `graph` under `schedule` and returns the realized timeline.
///
/// Tasks start the instant their core predecessor ends.  A compute task
/// accumulates progress dt / exec(f) under the frequency active on its
/// processor and ends when progress reaches one.  A message slack ends when
/// the last awaited message has arrived (sender end plus transmission time),
/// or immediately if all have.  Barrier slacks end together at the latest
/// core's arrival, which is the run's total time.
pub fn simulate(
    graph: &TaskGraph,
    machine: &MachineModel,
    schedule: &Schedule,
) -> Result<Timeline, Error> {
    check_layout(graph, machine, schedule)?;
    let n = graph.tasks.len();
    let nf = machine.freq_count();
    let mut begin = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut time_at = vec![vec![0.0; nf]; n];

    // Messages a slack task waits on: (sender, transmission time), gathered
    // from the edges into the slack's core successor.
    let mut waits: Vec<Vec<(TaskId, f64)>> = vec![Vec::new(); n];
    for e in &graph.edges {
        let slack = graph
            .predecessor_on_core(e.to)
            .expect("validated edge target has a predecessor");
        assert!(
            graph.tasks[slack].kind == TaskKind::MessageSlack,
            "simulation needs the slack layer"
        );
        waits[slack].push((e.from, e.m));
    }

    // Evaluation order: core order plus sender-before-slack, acyclic for
    // any validated graph.
    let order = dependency_order(graph, &waits)
        .ok_or_else(|| Error::Simulation("precedence relation contains a cycle".into()))?;

    for &t in &order {
        let task = &graph.tasks[t];
        let p = machine
            .processor_of_core(task.core)
            .expect("validated core ownership");
        let b = match graph.predecessor_on_core(t) {
            Some(prev) => end[prev],
            None => 0.0,
        };
        begin[t] = b;
        match task.kind {
            TaskKind::Compute => {
                end[t] = integrate_progress(task, p, b, schedule, &mut time_at[t]);
            }
            TaskKind::MessageSlack => {
                let mut e = b;
                for &(sender, m) in &waits[t] {
                    e = e.max(end[sender] + m);
                }
                end[t] = e;
            }
            TaskKind::BarrierSlack => {
                // span filled in below, once every core has arrived
                end[t] = f64::NAN;
            }
        }
    }

    let mut release = 0.0f64;
    for (_, seq) in &graph.core_order {
        let barrier = *seq.last().expect("checked layout");
        release = release.max(begin[barrier]);
    }
    for (_, seq) in &graph.core_order {
        let barrier = *seq.last().expect("checked layout");
        end[barrier] = release;
    }

    // Slack frequency times are the overlap with the schedule segments.
    for (t, task) in graph.tasks.iter().enumerate() {
        if task.kind.is_slack() {
            let p = machine.processor_of_core(task.core).expect("validated");
            accumulate_overlap(p, begin[t], end[t], schedule, &mut time_at[t]);
        }
    }

    let tol = 1e-9 * (1.0 + schedule.horizon.abs());
    let unfinished: Vec<&str> = graph
        .tasks
        .iter()
        .enumerate()
        .filter(|&(t, _)| end[t] > schedule.horizon + tol)
        .map(|(_, task)| task.name.as_str())
        .collect();
    if !unfinished.is_empty() {
        return Err(Error::Simulation(format!(
            "schedule horizon {} leaves {} tasks unfinished: {}",
            schedule.horizon,
            unfinished.len(),
            unfinished.join(", ")
        )));
    }

    Ok(Timeline {
        begin,
        end,
        time_at,
        total_time: release,
    })
}

/// Topological order over core sequences plus sender-before-slack edges.
fn dependency_order(graph: &TaskGraph, waits: &[Vec<(TaskId, f64)>]) -> Option<Vec<TaskId>> {
    let n = graph.tasks.len();
    let mut adj = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (_, seq) in &graph.core_order {
        for w in seq.windows(2) {
            adj[w[0]].push(w[1]);
            indeg[w[1]] += 1;
        }
    }
    for (slack, ws) in waits.iter().enumerate() {
        for &(sender, _) in ws {
            adj[sender].push(slack);
            indeg[slack] += 1;
        }
    }
    let mut queue: Vec<TaskId> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(t) = queue.pop() {
        order.push(t);
        for &s in &adj[t] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push(s);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Advances a compute task from `start` until its work completes, charging
/// each crossed segment, and returns the completion instant.  When a
/// completion lands exactly on a switch instant the task completes first.
fn integrate_progress(
    task: &crate::task_graph::Task,
    p: usize,
    start: f64,
    schedule: &Schedule,
    time_at: &mut [f64],
) -> f64 {
    let mut t = start;
    let mut rem = 1.0f64;
    loop {
        let f = schedule.frequency_at(p, t);
        let need = rem * task.exec_s(f);
        match schedule.next_boundary(p, t) {
            Some(b) if t + need > b => {
                let span = b - t;
                time_at[f] += span;
                rem -= span / task.exec_s(f);
                rem = rem.max(0.0);
                t = b;
            }
            _ => {
                time_at[f] += need;
                return t + need;
            }
        }
    }
}

/// Adds the overlap of [from, to] with each schedule segment of `p`.
pub(crate) fn accumulate_overlap(
    p: usize,
    from: f64,
    to: f64,
    schedule: &Schedule,
    time_at: &mut [f64],
) {
    if to <= from {
        return;
    }
    let segs = &schedule.processors[p];
    for (i, s) in segs.iter().enumerate() {
        let seg_end = segs.get(i + 1).map_or(f64::INFINITY, |n| n.t);
        let lo = s.t.max(from);
        let hi = seg_end.min(to);
        if hi > lo {
            time_at[s.f] += hi - lo;
        }
    }
}

/// Energy of a realized run: seconds at each frequency weighted by the
/// task's power draw there (idle power for slack).
pub fn energy(timeline: &Timeline, graph: &TaskGraph) -> EnergyBreakdown {
    let per_task: Vec<f64> = graph
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            timeline.time_at[t]
                .iter()
                .enumerate()
                .map(|(f, &s)| s * task.power_w(f))
                .sum()
        })
        .collect();
    let total = per_task.iter().sum();
    EnergyBreakdown { per_task, total }
}

/// Checks a schedule's own well-formedness: segments sorted from 0, every
/// positive segment at least the switch threshold long, and the horizon
/// within the deadline derived from `exec_time` and `x`.
pub fn check_schedule(
    schedule: &Schedule,
    machine: &MachineModel,
    x: f64,
    exec_time: f64,
) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let tol = 1e-9 * (1.0 + schedule.horizon.abs());
    if schedule.processors.len() != machine.processors.len() {
        rep.push(format!(
            "schedule covers {} processors but the machine has {}",
            schedule.processors.len(),
            machine.processors.len()
        ));
    }
    for (p, segs) in schedule.processors.iter().enumerate() {
        if segs.is_empty() {
            rep.push(format!("processor {p} has no frequency segments"));
            continue;
        }
        if segs[0].t != 0.0 {
            rep.push(format!(
                "processor {p} segments must start at 0, got {}",
                segs[0].t
            ));
        }
        for s in segs {
            if s.f >= machine.freq_count() {
                rep.push(format!(
                    "processor {p} uses frequency id {} beyond the machine's {} levels",
                    s.f,
                    machine.freq_count()
                ));
            }
        }
        for (i, s) in segs.iter().enumerate() {
            let seg_end = segs.get(i + 1).map_or(schedule.horizon, |n| n.t);
            let len = seg_end - s.t;
            if i + 1 < segs.len() && len <= 0.0 {
                rep.push(format!(
                    "processor {p} segments out of order at t={}",
                    segs[i + 1].t
                ));
            } else if len > tol && len < machine.threshold_th - tol {
                rep.push(format!(
                    "processor {p} holds frequency f{} for {len} s, below the {} s switch threshold",
                    s.f, machine.threshold_th
                ));
            }
        }
    }
    match deadline(exec_time, x) {
        Ok(d) => {
            if schedule.horizon > d + tol {
                rep.push(format!(
                    "horizon {} exceeds the deadline {d}",
                    schedule.horizon
                ));
            }
        }
        Err(e) => rep.push(format!("deadline undefined: {e}")),
    }
    rep
}

/// Gantt rows for external plotting: one CSV line per task with its realized
/// window and per-frequency breakdown.
pub fn export_gantt(graph: &TaskGraph, timeline: &Timeline) -> String {
    let mut out = String::from("task,core,start,end,segments\n");
    for (t, task) in graph.tasks.iter().enumerate() {
        let segs: Vec<String> = timeline.time_at[t]
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s > 0.0)
            .map(|(f, &s)| format!("f{f}:{s}"))
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            task.name,
            task.core,
            timeline.begin[t],
            timeline.end[t],
            segs.join(";")
        ));
    }
    out
}
