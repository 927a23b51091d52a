//! Task graphs, machine models, and their JSON schema.
//!
//! A program is a set of cores, each running a totally ordered sequence of
//! compute tasks.  Tasks exchange messages across cores; an edge `from -> to`
//! means the reception that creates `to` arrives `m` seconds after `from`
//! finishes.  The task preceding `to` on its core therefore ends with that
//! reception and is followed by a synthesized slack task absorbing the wait.
//! A final barrier synchronizes all cores, modelled as one barrier-slack task
//! per core ending at the common completion time.
//!
//! Frequency ids are ordinal: `0` is the slowest level and the highest id is
//! the fastest, so per-task execution times must be non-increasing in the id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Index into [`MachineModel::frequencies`].
pub type FreqId = usize;
/// Index into [`TaskGraph::tasks`].
pub type TaskId = usize;

/// One DVFS operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyLevel {
    pub id: FreqId,
    /// Nominal clock rate in Hz; informational, ordering is what matters.
    pub hz: f64,
}

/// A processor groups the cores that share one frequency domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Processor {
    pub cores: Vec<usize>,
}

/// Hardware description: frequency levels, switch threshold, core topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineModel {
    pub frequencies: Vec<FrequencyLevel>,
    /// Minimum dwell time of a frequency setting, seconds.
    pub threshold_th: f64,
    pub processors: Vec<Processor>,
    /// Explicit per-frequency idle power (W); defaults are derived from the
    /// graph's compute powers when absent.
    pub idle_power: Option<Vec<f64>>,
    /// Scale applied to the cheapest compute power when `idle_power` is absent.
    pub idle_factor: f64,
}

pub const DEFAULT_IDLE_FACTOR: f64 = 0.5;

impl MachineModel {
    pub fn freq_count(&self) -> usize {
        self.frequencies.len()
    }

    /// Highest (fastest) frequency id.
    pub fn fmax(&self) -> FreqId {
        self.frequencies.len() - 1
    }

    /// Index of the processor owning `core`, if any.
    pub fn processor_of_core(&self, core: usize) -> Option<usize> {
        self.processors
            .iter()
            .position(|p| p.cores.contains(&core))
    }

    /// Per-frequency idle power drawn by slack tasks.
    ///
    /// Falls back to `idle_factor` times the cheapest compute power at each
    /// frequency when the machine file does not list an explicit table.
    pub fn idle_power_table(&self, graph: &TaskGraph) -> Vec<f64> {
        if let Some(t) = &self.idle_power {
            return t.clone();
        }
        (0..self.freq_count())
            .map(|f| {
                let min = graph
                    .tasks
                    .iter()
                    .filter(|t| t.kind == TaskKind::Compute)
                    .filter_map(|t| t.power.get(&f))
                    .fold(f64::INFINITY, |a, &b| a.min(b));
                if min.is_finite() {
                    min * self.idle_factor
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Role a task plays in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// User computation with per-frequency execution time and power.
    Compute,
    /// Wait for a message reception, inserted after the receiving task.
    MessageSlack,
    /// Wait at the final barrier, one per core.
    BarrierSlack,
}

impl TaskKind {
    pub fn is_slack(self) -> bool {
        !matches!(self, TaskKind::Compute)
    }
}

/// One task. `exec` is empty for slack kinds (their duration is decided by
/// the optimizer); `power` holds idle power for slack kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub core: usize,
    pub kind: TaskKind,
    /// Seconds per frequency id; complete for compute tasks once validated.
    pub exec: BTreeMap<FreqId, f64>,
    /// Watts per frequency id.
    pub power: BTreeMap<FreqId, f64>,
}

impl Task {
    /// Execution time at `f`; panics if the entry is missing (callers run
    /// after validation).
    pub fn exec_s(&self, f: FreqId) -> f64 {
        self.exec[&f]
    }

    /// Power draw at `f`; panics if the entry is missing.
    pub fn power_w(&self, f: FreqId) -> f64 {
        self.power[&f]
    }
}

/// Message sent when `from` finishes, creating task `to` on another core.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEdge {
    pub from: TaskId,
    pub to: TaskId,
    /// Transmission time in seconds.
    pub m: f64,
}

/// Task graph plus the per-core execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    pub edges: Vec<MessageEdge>,
    /// `(core id, ordered task ids)`, sorted by core id.
    pub core_order: Vec<(usize, Vec<TaskId>)>,
}

impl TaskGraph {
    /// Builds a graph from parts, deriving `core_order` from task list order.
    pub fn new(tasks: Vec<Task>, edges: Vec<MessageEdge>) -> Self {
        let mut by_core: BTreeMap<usize, Vec<TaskId>> = BTreeMap::new();
        for (id, t) in tasks.iter().enumerate() {
            by_core.entry(t.core).or_default().push(id);
        }
        TaskGraph {
            tasks,
            edges,
            core_order: by_core.into_iter().collect(),
        }
    }

    pub fn task_by_name(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name)
    }

    /// `(position in core_order, sequence index)` for every task.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let mut pos = vec![(usize::MAX, usize::MAX); self.tasks.len()];
        for (ci, (_, seq)) in self.core_order.iter().enumerate() {
            for (si, &t) in seq.iter().enumerate() {
                pos[t] = (ci, si);
            }
        }
        pos
    }

    /// Task right before `t` on its core.
    pub fn predecessor_on_core(&self, t: TaskId) -> Option<TaskId> {
        let (ci, si) = self.positions()[t];
        if si == 0 {
            None
        } else {
            Some(self.core_order[ci].1[si - 1])
        }
    }

    /// Task right after `t` on its core.
    pub fn successor_on_core(&self, t: TaskId) -> Option<TaskId> {
        let (ci, si) = self.positions()[t];
        self.core_order[ci].1.get(si + 1).copied()
    }

    pub fn has_slack(&self) -> bool {
        self.tasks.iter().any(|t| t.kind.is_slack())
    }

    /// Ordered task ids living on processor `p`, core-major.
    pub fn processor_tasks(&self, machine: &MachineModel, p: usize) -> Vec<TaskId> {
        let mut out = Vec::new();
        for &core in &machine.processors[p].cores {
            if let Some((_, seq)) = self.core_order.iter().find(|(c, _)| *c == core) {
                out.extend_from_slice(seq);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// JSON schema

/// Machine file: `{"frequencies": [...], "threshold_th": ..., "processors":
/// [{"cores": [...]}], "idle_power": {...}?, "idle_factor": ...?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineFile {
    pub frequencies: Vec<f64>,
    pub threshold_th: f64,
    pub processors: Vec<ProcessorCores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_power: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorCores {
    pub cores: Vec<usize>,
}

/// Graph file: `{"tasks": [...], "edges": [...]}` with exec/power maps keyed
/// by decimal frequency id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub edges: Vec<EdgeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: String,
    pub core: usize,
    pub exec: BTreeMap<String, f64>,
    pub power: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: String,
    pub to: String,
    pub m: f64,
}

fn parse_freq_keys(
    map: &BTreeMap<String, f64>,
    what: &str,
    task: &str,
) -> Result<BTreeMap<FreqId, f64>, Error> {
    let mut out = BTreeMap::new();
    for (k, &v) in map {
        let f: FreqId = k.parse().map_err(|_| {
            Error::parse(
                format!("{what} map of task {task}"),
                format!("key {k:?} is not a frequency id"),
            )
        })?;
        out.insert(f, v);
    }
    Ok(out)
}

impl MachineModel {
    pub fn from_file(file: &MachineFile) -> Result<Self, Error> {
        let idle_power = match &file.idle_power {
            None => None,
            Some(map) => {
                let parsed = parse_freq_keys(map, "idle_power", "<machine>")?;
                let n = file.frequencies.len();
                let mut table = vec![0.0; n];
                for (f, v) in &parsed {
                    if *f >= n {
                        return Err(Error::parse(
                            "machine idle_power",
                            format!("frequency id {f} out of range"),
                        ));
                    }
                    table[*f] = *v;
                }
                if parsed.len() != n {
                    return Err(Error::parse(
                        "machine idle_power",
                        "table must cover every frequency",
                    ));
                }
                Some(table)
            }
        };
        Ok(MachineModel {
            frequencies: file
                .frequencies
                .iter()
                .enumerate()
                .map(|(id, &hz)| FrequencyLevel { id, hz })
                .collect(),
            threshold_th: file.threshold_th,
            processors: file
                .processors
                .iter()
                .map(|p| Processor {
                    cores: p.cores.clone(),
                })
                .collect(),
            idle_power,
            idle_factor: file.idle_factor.unwrap_or(DEFAULT_IDLE_FACTOR),
        })
    }

    pub fn to_file(&self) -> MachineFile {
        MachineFile {
            frequencies: self.frequencies.iter().map(|f| f.hz).collect(),
            threshold_th: self.threshold_th,
            processors: self
                .processors
                .iter()
                .map(|p| ProcessorCores {
                    cores: p.cores.clone(),
                })
                .collect(),
            idle_power: self.idle_power.as_ref().map(|t| {
                t.iter()
                    .enumerate()
                    .map(|(f, &v)| (f.to_string(), v))
                    .collect()
            }),
            idle_factor: if (self.idle_factor - DEFAULT_IDLE_FACTOR).abs() < 1e-12 {
                None
            } else {
                Some(self.idle_factor)
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: MachineFile =
            serde_json::from_str(text).map_err(|e| Error::parse("machine file", e))?;
        Self::from_file(&file)
    }
}

impl TaskGraph {
    /// Resolves a graph file against nothing but itself; id references and
    /// key syntax are structural, completeness is left to [`validate_graph`].
    pub fn from_file(file: &GraphFile) -> Result<Self, Error> {
        let mut names = HashMap::new();
        for (i, t) in file.tasks.iter().enumerate() {
            if names.insert(t.id.clone(), i).is_some() {
                return Err(Error::parse(
                    "graph file",
                    format!("duplicate task id {:?}", t.id),
                ));
            }
        }
        let tasks = file
            .tasks
            .iter()
            .map(|t| {
                Ok(Task {
                    name: t.id.clone(),
                    core: t.core,
                    kind: TaskKind::Compute,
                    exec: parse_freq_keys(&t.exec, "exec", &t.id)?,
                    power: parse_freq_keys(&t.power, "power", &t.id)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let edges = file
            .edges
            .iter()
            .map(|e| {
                let from = *names.get(&e.from).ok_or_else(|| {
                    Error::parse("graph file", format!("edge from unknown task {:?}", e.from))
                })?;
                let to = *names.get(&e.to).ok_or_else(|| {
                    Error::parse("graph file", format!("edge to unknown task {:?}", e.to))
                })?;
                Ok(MessageEdge { from, to, m: e.m })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(TaskGraph::new(tasks, edges))
    }

    /// Writes the graph back to file form.  Slack tasks are synthesized, not
    /// serialized; call this on pre-insertion graphs only.
    pub fn to_file(&self) -> Result<GraphFile, Error> {
        if self.has_slack() {
            return Err(Error::InvalidArgument(
                "cannot serialize a graph holding synthesized slack tasks".into(),
            ));
        }
        Ok(GraphFile {
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskEntry {
                    id: t.name.clone(),
                    core: t.core,
                    exec: t.exec.iter().map(|(f, &v)| (f.to_string(), v)).collect(),
                    power: t.power.iter().map(|(f, &v)| (f.to_string(), v)).collect(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    from: self.tasks[e.from].name.clone(),
                    to: self.tasks[e.to].name.clone(),
                    m: e.m,
                })
                .collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::parse("graph file", e))?;
        Self::from_file(&file)
    }
}

// ---------------------------------------------------------------------------
// Validation

/// Outcome of [`validate_graph`]: empty means the pair is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub(crate) fn push(&mut self, msg: impl Into<String>) {
        self.issues.push(msg.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "- {issue}")?;
        }
        Ok(())
    }
}

/// Checks a machine/graph pair and reports every violation found.
///
/// Covers machine consistency (frequency ordering, positive threshold,
/// disjoint core lists), per-task tables (complete, positive, execution time
/// non-increasing in frequency id), edge sanity (cross-core, non-negative
/// transmission, target not first on its core), slack placement when slack is
/// present, and acyclicity of the precedence relation.
pub fn validate_graph(graph: &TaskGraph, machine: &MachineModel) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let nf = machine.freq_count();

    if nf == 0 {
        rep.push("machine lists no frequencies");
    }
    for w in machine.frequencies.windows(2) {
        if w[1].hz <= w[0].hz {
            rep.push(format!(
                "frequencies must be strictly increasing: f{} ({} Hz) vs f{} ({} Hz)",
                w[0].id, w[0].hz, w[1].id, w[1].hz
            ));
        }
    }
    if !(machine.threshold_th > 0.0 && machine.threshold_th.is_finite()) {
        rep.push(format!(
            "threshold_th must be positive and finite, got {}",
            machine.threshold_th
        ));
    }
    if machine.processors.is_empty() {
        rep.push("machine lists no processors");
    }
    if !(machine.idle_factor > 0.0 && machine.idle_factor.is_finite()) {
        rep.push(format!(
            "idle_factor must be positive and finite, got {}",
            machine.idle_factor
        ));
    }
    if let Some(t) = &machine.idle_power {
        for (f, &v) in t.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                rep.push(format!("idle power at f{f} must be positive, got {v}"));
            }
        }
    }
    let mut seen_cores = HashSet::new();
    for (pi, p) in machine.processors.iter().enumerate() {
        if p.cores.is_empty() {
            rep.push(format!("processor {pi} lists no cores"));
        }
        for &c in &p.cores {
            if !seen_cores.insert(c) {
                rep.push(format!("core {c} appears in more than one processor"));
            }
        }
    }

    if graph.tasks.is_empty() {
        rep.push("graph lists no tasks");
    }
    let mut names = HashSet::new();
    for t in &graph.tasks {
        if !names.insert(t.name.as_str()) {
            rep.push(format!("duplicate task id {:?}", t.name));
        }
    }

    for t in &graph.tasks {
        if machine.processor_of_core(t.core).is_none() {
            rep.push(format!(
                "task {} runs on core {} which no processor owns",
                t.name, t.core
            ));
        }
        match t.kind {
            TaskKind::Compute => {
                for f in 0..nf {
                    match t.exec.get(&f) {
                        None => rep.push(format!(
                            "missing exec entry for frequency {f} on task {}",
                            t.name
                        )),
                        Some(&v) if !(v > 0.0 && v.is_finite()) => rep.push(format!(
                            "exec of task {} at f{f} must be positive, got {v}",
                            t.name
                        )),
                        _ => {}
                    }
                    match t.power.get(&f) {
                        None => rep.push(format!(
                            "missing power entry for frequency {f} on task {}",
                            t.name
                        )),
                        Some(&v) if !(v > 0.0 && v.is_finite()) => rep.push(format!(
                            "power of task {} at f{f} must be positive, got {v}",
                            t.name
                        )),
                        _ => {}
                    }
                }
                for f in t.exec.keys().chain(t.power.keys()) {
                    if *f >= nf {
                        rep.push(format!(
                            "task {} references frequency id {f} beyond the machine's {nf} levels",
                            t.name
                        ));
                    }
                }
                for f in 1..nf {
                    if let (Some(&slow), Some(&fast)) = (t.exec.get(&(f - 1)), t.exec.get(&f)) {
                        if fast > slow + 1e-12 {
                            rep.push(format!(
                                "exec of task {} increases from f{} ({slow}s) to f{} ({fast}s); \
                                 higher ids must not be slower",
                                t.name,
                                f - 1,
                                f
                            ));
                        }
                    }
                }
            }
            TaskKind::MessageSlack | TaskKind::BarrierSlack => {
                if !t.exec.is_empty() {
                    rep.push(format!("slack task {} must not carry exec times", t.name));
                }
                for f in 0..nf {
                    match t.power.get(&f) {
                        None => rep.push(format!(
                            "missing idle power entry for frequency {f} on slack task {}",
                            t.name
                        )),
                        Some(&v) if !(v > 0.0 && v.is_finite()) => rep.push(format!(
                            "idle power of slack task {} at f{f} must be positive, got {v}",
                            t.name
                        )),
                        _ => {}
                    }
                }
            }
        }
    }

    for (core, seq) in &graph.core_order {
        if seq.is_empty() {
            rep.push(format!("core {core} has no tasks"));
        }
    }
    for p in &machine.processors {
        for &c in &p.cores {
            if !graph.core_order.iter().any(|(core, _)| *core == c) {
                rep.push(format!("core {c} has no tasks"));
            }
        }
    }

    let pos = graph.positions();
    for (ei, e) in graph.edges.iter().enumerate() {
        if e.from >= graph.tasks.len() || e.to >= graph.tasks.len() {
            rep.push(format!("edge {ei} references an unknown task id"));
            continue;
        }
        let (from, to) = (&graph.tasks[e.from], &graph.tasks[e.to]);
        if from.core == to.core {
            rep.push(format!(
                "edge {} -> {} connects tasks on the same core {}",
                from.name, to.name, from.core
            ));
        }
        if !(e.m >= 0.0 && e.m.is_finite()) {
            rep.push(format!(
                "edge {} -> {} has invalid transmission time {}",
                from.name, to.name, e.m
            ));
        }
        if from.kind.is_slack() || to.kind.is_slack() {
            rep.push(format!(
                "edge {} -> {} touches a slack task",
                from.name, to.name
            ));
        }
        if pos[e.to].1 == 0 {
            rep.push(format!(
                "edge {} -> {} targets the first task of core {}; a reception needs a \
                 preceding task to wait in",
                from.name, to.name, to.core
            ));
        }
    }

    if let Some(rep_slack) = check_slack_placement(graph) {
        for issue in rep_slack {
            rep.push(issue);
        }
    }

    if has_cycle(graph) {
        rep.push("precedence relation contains a cycle");
    }

    rep
}

/// Slack placement issues, or `None` when the graph has no slack tasks.
fn check_slack_placement(graph: &TaskGraph) -> Option<Vec<String>> {
    if !graph.has_slack() {
        return None;
    }
    let mut issues = Vec::new();
    let receivers = receiving_tasks(graph);
    for (core, seq) in &graph.core_order {
        for (si, &t) in seq.iter().enumerate() {
            let task = &graph.tasks[t];
            let last = si + 1 == seq.len();
            match task.kind {
                TaskKind::BarrierSlack => {
                    if !last {
                        issues.push(format!(
                            "barrier slack {} is not last on core {core}",
                            task.name
                        ));
                    }
                }
                TaskKind::MessageSlack => {
                    let prev = si
                        .checked_sub(1)
                        .map(|i| seq[i])
                        .filter(|&p| receivers.contains(&p));
                    if prev.is_none() {
                        issues.push(format!(
                            "message slack {} does not follow a receiving task",
                            task.name
                        ));
                    }
                }
                TaskKind::Compute => {
                    if last {
                        issues.push(format!("core {core} does not end with a barrier slack"));
                    }
                    if receivers.contains(&t) {
                        let next = seq.get(si + 1).map(|&n| &graph.tasks[n]);
                        if !matches!(next.map(|n| n.kind), Some(TaskKind::MessageSlack)) {
                            issues.push(format!(
                                "receiving task {} is not followed by a message slack",
                                task.name
                            ));
                        }
                    }
                }
            }
        }
    }
    Some(issues)
}

/// Compute tasks that end with a reception: the nearest compute predecessor
/// of each edge target (slack already inserted in between is skipped).
fn receiving_tasks(graph: &TaskGraph) -> HashSet<TaskId> {
    let mut out = HashSet::new();
    for e in &graph.edges {
        let mut at = e.to;
        while let Some(p) = graph.predecessor_on_core(at) {
            if !graph.tasks[p].kind.is_slack() {
                out.insert(p);
                break;
            }
            at = p;
        }
    }
    out
}

/// Precedence edges used for ordering: consecutive tasks on a core, and the
/// sender before the task its message creates.  The sender is deliberately
/// unordered against the receiver's slack; the two may overlap in time.
fn precedence_edges(graph: &TaskGraph) -> Vec<(TaskId, TaskId)> {
    let mut out = Vec::new();
    for (_, seq) in &graph.core_order {
        for w in seq.windows(2) {
            out.push((w[0], w[1]));
        }
    }
    for e in &graph.edges {
        if e.from < graph.tasks.len() && e.to < graph.tasks.len() {
            out.push((e.from, e.to));
        }
    }
    out
}

fn has_cycle(graph: &TaskGraph) -> bool {
    let n = graph.tasks.len();
    let mut indeg = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for (a, b) in precedence_edges(graph) {
        adj[a].push(b);
        indeg[b] += 1;
    }
    let mut queue: Vec<TaskId> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(t) = queue.pop() {
        seen += 1;
        for &s in &adj[t] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push(s);
            }
        }
    }
    seen != n
}

// ---------------------------------------------------------------------------
// Slack insertion

/// Appends the synthesized wait tasks the formulations need: one message
/// slack after every task that ends with a reception, one barrier slack at
/// the end of every core.  Idempotent: a graph that already carries a
/// complete, well-placed slack layer is returned unchanged; a partial or
/// misplaced layer is rejected.
pub fn insert_slack_tasks(graph: &TaskGraph, machine: &MachineModel) -> Result<TaskGraph, Error> {
    let rep = validate_graph(graph, machine);
    if !rep.is_ok() {
        return Err(Error::InvalidGraph(rep));
    }
    if graph.has_slack() {
        // validate_graph has already checked placement; a clean report means
        // the layer is complete.
        return Ok(graph.clone());
    }

    let idle = machine.idle_power_table(graph);
    let idle_map: BTreeMap<FreqId, f64> =
        idle.iter().enumerate().map(|(f, &v)| (f, v)).collect();
    let receivers = receiving_tasks(graph);
    let mut used: HashSet<String> = graph.tasks.iter().map(|t| t.name.clone()).collect();
    let mut unique = |base: String| -> String {
        if used.insert(base.clone()) {
            return base;
        }
        for i in 2.. {
            let cand = format!("{base}_{i}");
            if used.insert(cand.clone()) {
                return cand;
            }
        }
        unreachable!()
    };

    let mut tasks = graph.tasks.clone();
    let mut core_order = Vec::with_capacity(graph.core_order.len());
    for (core, seq) in &graph.core_order {
        let mut new_seq = Vec::with_capacity(seq.len() + 2);
        for &t in seq {
            new_seq.push(t);
            if receivers.contains(&t) {
                let name = unique(format!("Ts_{}", graph.tasks[t].name));
                tasks.push(Task {
                    name,
                    core: *core,
                    kind: TaskKind::MessageSlack,
                    exec: BTreeMap::new(),
                    power: idle_map.clone(),
                });
                new_seq.push(tasks.len() - 1);
            }
        }
        let name = unique(format!("Tb_c{core}"));
        tasks.push(Task {
            name,
            core: *core,
            kind: TaskKind::BarrierSlack,
            exec: BTreeMap::new(),
            power: idle_map.clone(),
        });
        new_seq.push(tasks.len() - 1);
        core_order.push((*core, new_seq));
    }

    Ok(TaskGraph {
        tasks,
        edges: graph.edges.clone(),
        core_order,
    })
}

// ---------------------------------------------------------------------------
// Makespan and deadline

/// Makespan when every processor stays at the fastest frequency: sequential
/// per-core execution, receptions gating their created task at sender end
/// plus transmission time.  Slack tasks, when present, contribute nothing
/// beyond the waits already implied.  This is the reference execution time
/// the deadline is measured against.
pub fn max_frequency_makespan(graph: &TaskGraph, machine: &MachineModel) -> Result<f64, Error> {
    let rep = validate_graph(graph, machine);
    if !rep.is_ok() {
        return Err(Error::InvalidGraph(rep));
    }
    let fmax = machine.fmax();
    let n = graph.tasks.len();

    // Gate lists on compute tasks only; slack is a pass-through here.
    let mut arrivals: Vec<Vec<(TaskId, f64)>> = vec![Vec::new(); n];
    for e in &graph.edges {
        arrivals[e.to].push((e.from, e.m));
    }

    let mut end = vec![f64::NAN; n];
    let mut deps: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    let mut compute_ids = Vec::new();
    for (_, seq) in &graph.core_order {
        let mut prev: Option<TaskId> = None;
        for &t in seq {
            if graph.tasks[t].kind != TaskKind::Compute {
                continue;
            }
            compute_ids.push(t);
            if let Some(p) = prev {
                deps[p].push(t);
                indeg[t] += 1;
            }
            for &(src, _) in &arrivals[t] {
                deps[src].push(t);
                indeg[t] += 1;
            }
            prev = Some(t);
        }
    }

    let mut queue: Vec<TaskId> = compute_ids
        .iter()
        .copied()
        .filter(|&t| indeg[t] == 0)
        .collect();
    let mut begin = vec![0.0f64; n];
    let mut done = 0usize;
    while let Some(t) = queue.pop() {
        done += 1;
        let mut b: f64 = 0.0;
        if let Some(p) = graph
            .predecessor_on_core(t)
            .map(|p| prior_compute(graph, p))
        {
            if let Some(p) = p {
                b = b.max(end[p]);
            }
        }
        for &(src, m) in &arrivals[t] {
            b = b.max(end[src] + m);
        }
        begin[t] = b;
        end[t] = b + graph.tasks[t].exec_s(fmax);
        for &s in &deps[t] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                queue.push(s);
            }
        }
    }
    if done != compute_ids.len() {
        return Err(Error::InvalidGraph(ValidationReport {
            issues: vec!["precedence relation contains a cycle".into()],
        }));
    }
    Ok(compute_ids
        .iter()
        .map(|&t| end[t])
        .fold(0.0f64, f64::max))
}

/// Nearest compute task at or before `t` on its core.
fn prior_compute(graph: &TaskGraph, mut t: TaskId) -> Option<TaskId> {
    loop {
        if graph.tasks[t].kind == TaskKind::Compute {
            return Some(t);
        }
        t = graph.predecessor_on_core(t)?;
    }
}

/// Latest admissible completion time: `exec_time * (1 + x/100)` where `x` is
/// the tolerated slowdown in percent.
pub fn deadline(exec_time: f64, x: f64) -> Result<f64, Error> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "slowdown percentage must be non-negative and finite, got {x}"
        )));
    }
    if !(exec_time > 0.0 && exec_time.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reference execution time must be positive, got {exec_time}"
        )));
    }
    Ok(exec_time * (1.0 + x / 100.0))
}

// ---------------------------------------------------------------------------
// Transitive precedence closure

/// Bitset closure of the precedence relation over all tasks, slack included.
/// `precedes(a, b)` is strict: tasks unordered by it may overlap in time.
#[derive(Debug, Clone)]
pub struct Closure {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Closure {
    pub fn build(graph: &TaskGraph) -> Self {
        let n = graph.tasks.len();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];

        let mut adj: Vec<Vec<TaskId>> = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for (a, b) in precedence_edges(graph) {
            adj[a].push(b);
            indeg[b] += 1;
        }
        // Reverse topological order, then OR successor sets upward.
        let mut order = Vec::with_capacity(n);
        let mut queue: Vec<TaskId> = (0..n).filter(|&i| indeg[i] == 0).collect();
        while let Some(t) = queue.pop() {
            order.push(t);
            for &s in &adj[t] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    queue.push(s);
                }
            }
        }
        assert_eq!(order.len(), n, "closure over a cyclic graph");
        for &t in order.iter().rev() {
            for si in 0..adj[t].len() {
                let s = adj[t][si];
                bits[t * words + s / 64] |= 1u64 << (s % 64);
                let (head, tail) = bits.split_at_mut(t.max(s) * words);
                let (dst, src) = if t < s {
                    (&mut head[t * words..t * words + words], &tail[..words])
                } else {
                    (&mut tail[..words], &head[s * words..s * words + words])
                };
                for w in 0..words {
                    dst[w] |= src[w];
                }
            }
        }
        Closure { n, words, bits }
    }

    /// Strict precedence: `a` must finish before `b` starts.
    pub fn precedes(&self, a: TaskId, b: TaskId) -> bool {
        debug_assert!(a < self.n && b < self.n);
        self.bits[a * self.words + b / 64] >> (b % 64) & 1 == 1
    }

    /// Whether the pair is ordered either way.
    pub fn ordered(&self, a: TaskId, b: TaskId) -> bool {
        self.precedes(a, b) || self.precedes(b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq(v: &[f64]) -> BTreeMap<FreqId, f64> {
        v.iter().enumerate().map(|(i, &x)| (i, x)).collect()
    }

    pub(crate) fn machine_2f(cores: &[&[usize]]) -> MachineModel {
        MachineModel {
            frequencies: vec![
                FrequencyLevel { id: 0, hz: 1.0e9 },
                FrequencyLevel { id: 1, hz: 2.0e9 },
            ],
            threshold_th: 0.05,
            processors: cores
                .iter()
                .map(|c| Processor { cores: c.to_vec() })
                .collect(),
            idle_power: None,
            idle_factor: DEFAULT_IDLE_FACTOR,
        }
    }

    fn compute(name: &str, core: usize, exec: &[f64], power: &[f64]) -> Task {
        Task {
            name: name.into(),
            core,
            kind: TaskKind::Compute,
            exec: freq(exec),
            power: freq(power),
        }
    }

    /// Two cores of one processor, one cross message: T1,T2 on core 0 and
    /// T3,T4 on core 1, T1's end feeding T4.
    fn two_core_graph() -> (TaskGraph, MachineModel) {
        let tasks = vec![
            compute("T1", 0, &[3.0, 1.5], &[10.0, 25.0]),
            compute("T2", 0, &[2.0, 1.0], &[10.0, 25.0]),
            compute("T3", 1, &[2.0, 1.0], &[8.0, 20.0]),
            compute("T4", 1, &[1.6, 0.8], &[8.0, 20.0]),
        ];
        let edges = vec![MessageEdge {
            from: 0,
            to: 3,
            m: 0.1,
        }];
        (TaskGraph::new(tasks, edges), machine_2f(&[&[0, 1]]))
    }

    #[test]
    fn normative_json_round_trips() {
        let machine = r#"{
            "frequencies": [1.0e9, 2.0e9],
            "threshold_th": 0.05,
            "processors": [{"cores": [0, 1]}]
        }"#;
        let graph = r#"{
            "tasks": [
                {"id": "T1", "core": 0, "exec": {"0": 2.0, "1": 1.0},
                 "power": {"0": 10.0, "1": 30.0}},
                {"id": "T4", "core": 1, "exec": {"0": 2.0, "1": 1.0},
                 "power": {"0": 10.0, "1": 30.0}},
                {"id": "T5", "core": 1, "exec": {"0": 2.0, "1": 1.0},
                 "power": {"0": 10.0, "1": 30.0}}
            ],
            "edges": [{"from": "T1", "to": "T5", "m": 0.1}]
        }"#;
        let m = MachineModel::from_json(machine).unwrap();
        let g = TaskGraph::from_json(graph).unwrap();
        assert!(validate_graph(&g, &m).is_ok());

        let m2 = MachineModel::from_file(&m.to_file()).unwrap();
        assert_eq!(m, m2);
        let g2 = TaskGraph::from_file(&g.to_file().unwrap()).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = MachineModel::from_json(r#"{"frequencies": [1.0], "threshold_th": 0.1,
            "processors": [], "volts": 3}"#);
        assert!(matches!(err, Err(Error::Parse { .. })));
        let err = TaskGraph::from_json(r#"{"tasks": [], "edges": [], "comment": "x"}"#);
        assert!(matches!(err, Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_exec_entry_reported() {
        let g = TaskGraph::from_json(
            r#"{"tasks": [{"id": "T1", "core": 0, "exec": {"0": 2.0},
                           "power": {"0": 10.0, "1": 30.0}}]}"#,
        )
        .unwrap();
        let rep = validate_graph(&g, &machine_2f(&[&[0]]));
        assert!(
            rep.issues.iter().any(|i| i.contains("missing exec entry")),
            "{rep}"
        );
    }

    #[test]
    fn exec_must_not_increase_with_frequency() {
        let tasks = vec![compute("T1", 0, &[1.0, 2.0], &[10.0, 25.0])];
        let g = TaskGraph::new(tasks, vec![]);
        let rep = validate_graph(&g, &machine_2f(&[&[0]]));
        assert!(rep.issues.iter().any(|i| i.contains("increases")), "{rep}");
    }

    #[test]
    fn opposed_edges_form_cycle() {
        let tasks = vec![
            compute("A0", 0, &[1.0], &[5.0]),
            compute("A1", 0, &[1.0], &[5.0]),
            compute("B0", 1, &[1.0], &[5.0]),
            compute("B1", 1, &[1.0], &[5.0]),
        ];
        let edges = vec![
            MessageEdge { from: 1, to: 3, m: 0.0 },
            MessageEdge { from: 3, to: 1, m: 0.0 },
        ];
        let mut m = machine_2f(&[&[0, 1]]);
        m.frequencies.truncate(1);
        let g = TaskGraph::new(tasks, edges);
        let rep = validate_graph(&g, &m);
        assert!(rep.issues.iter().any(|i| i.contains("cycle")), "{rep}");
    }

    #[test]
    fn edge_into_first_task_rejected() {
        let (mut g, m) = two_core_graph();
        g.edges[0].to = 2; // T3 is first on core 1
        let rep = validate_graph(&g, &m);
        assert!(rep.issues.iter().any(|i| i.contains("first task")), "{rep}");
    }

    #[test]
    fn slack_insertion_matches_reception_layout() {
        let (g, m) = two_core_graph();
        let with = insert_slack_tasks(&g, &m).unwrap();
        // T3 precedes the created task T4, so the wait lands after T3.
        let names: Vec<Vec<&str>> = with
            .core_order
            .iter()
            .map(|(_, seq)| seq.iter().map(|&t| with.tasks[t].name.as_str()).collect())
            .collect();
        assert_eq!(names[0], vec!["T1", "T2", "Tb_c0"]);
        assert_eq!(names[1], vec!["T3", "Ts_T3", "T4", "Tb_c1"]);
        assert!(validate_graph(&with, &m).is_ok());

        let ts = with.task_by_name("Ts_T3").unwrap();
        assert_eq!(with.tasks[ts].kind, TaskKind::MessageSlack);
        // Idle power defaults to half the cheapest compute power at each f.
        assert_eq!(with.tasks[ts].power[&0], 4.0);
        assert_eq!(with.tasks[ts].power[&1], 10.0);

        let again = insert_slack_tasks(&with, &m).unwrap();
        assert_eq!(with, again);
    }

    #[test]
    fn misplaced_slack_rejected() {
        let (g, m) = two_core_graph();
        let mut bad = insert_slack_tasks(&g, &m).unwrap();
        // Move the message slack to the front of its core.
        let (_, seq) = &mut bad.core_order[1];
        let slack = seq.remove(1);
        seq.insert(0, slack);
        assert!(matches!(
            insert_slack_tasks(&bad, &m),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn makespan_accounts_for_transmission() {
        let (g, m) = two_core_graph();
        // fmax: T1 [0,1.5] T2 [1.5,2.5]; T3 [0,1.0], T4 waits for
        // max(1.0, 1.5+0.1) = 1.6, ends 2.4; makespan 2.5.
        let ms = max_frequency_makespan(&g, &m).unwrap();
        assert!((ms - 2.5).abs() < 1e-12, "{ms}");
        // Slack insertion must not change the reference time.
        let with = insert_slack_tasks(&g, &m).unwrap();
        let ms2 = max_frequency_makespan(&with, &m).unwrap();
        assert!((ms - ms2).abs() < 1e-12);
    }

    #[test]
    fn deadline_is_percent_slowdown() {
        assert!((deadline(2.0, 25.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((deadline(2.5, 0.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(deadline(2.0, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn closure_orders_chains_not_overlaps() {
        let (g, m) = two_core_graph();
        let with = insert_slack_tasks(&g, &m).unwrap();
        let c = Closure::build(&with);
        let id = |n: &str| with.task_by_name(n).unwrap();
        assert!(c.precedes(id("T1"), id("T2")));
        assert!(c.precedes(id("T1"), id("T4")));
        assert!(c.precedes(id("T1"), id("Tb_c1")));
        assert!(!c.ordered(id("T1"), id("T3")));
        // The sender may overlap the receiver-side slack.
        assert!(!c.ordered(id("T1"), id("Ts_T3")));
        assert!(!c.ordered(id("T2"), id("T4")));
        assert!(c.precedes(id("Ts_T3"), id("T4")));
    }

    #[test]
    fn processor_tasks_are_core_major() {
        let (g, m) = two_core_graph();
        let ids = g.processor_tasks(&m, 0);
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }
}
