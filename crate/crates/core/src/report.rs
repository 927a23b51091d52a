//! End-to-end solve pipeline: build a model, optimize it, pull the optimum
//! into earliest-start form, decode the frequency plan and replay it.

use serde::Serialize;

use crate::error::Error;
use crate::milp::{MilpModel, Sense, VarId, VarKind};
use crate::shared::TaskVars;
use crate::simulate::{check_schedule, energy, simulate, Schedule, Timeline};
use crate::solver::{solve_lp, solve_milp, LpOptions, MilpLimits, SolveStats, SolveStatus};
use crate::switch::{build_switch_milp, decode_switch_solution};
use crate::task_graph::{MachineModel, TaskGraph, TaskKind, ValidationReport};
use crate::workload::{build_workload_milp, decode_workload_solution};

/// Which model family to build and solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulationKind {
    Workload,
    Switch,
}

impl std::str::FromStr for FormulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "workload" => Ok(FormulationKind::Workload),
            "switch" => Ok(FormulationKind::Switch),
            other => Err(Error::InvalidArgument(format!(
                "unknown formulation {other:?}, expected \"workload\" or \"switch\""
            ))),
        }
    }
}

impl std::fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormulationKind::Workload => f.write_str("workload"),
            FormulationKind::Switch => f.write_str("switch"),
        }
    }
}

/// Everything [`solve_instance`] needs besides the instance itself.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub formulation: FormulationKind,
    /// Allowed slowdown percentage over the all-max-frequency makespan.
    pub x: f64,
    /// Switch slots per processor; `None` picks a count large enough to
    /// never cut off the optimum.
    pub slots: Option<usize>,
    /// Workload model variable budget; `None` uses the default cap.
    pub var_cap: Option<usize>,
    pub limits: MilpLimits,
}

impl SolveConfig {
    pub fn new(formulation: FormulationKind, x: f64) -> Self {
        SolveConfig {
            formulation,
            x,
            slots: None,
            var_cap: None,
            limits: MilpLimits::default(),
        }
    }
}

/// A solved instance: the frequency plan, its replay, and how they relate.
#[derive(Debug, Clone)]
pub struct Solved {
    /// Slack-bearing graph the model was built over.
    pub graph: TaskGraph,
    pub schedule: Schedule,
    /// Replay of `schedule` under earliest-start semantics.
    pub timeline: Timeline,
    /// Replayed per-task energy, indexed like `graph.tasks`.
    pub per_task_energy: Vec<f64>,
    pub simulated_energy: f64,
    /// MILP objective at the returned point.
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    /// False when a node or time limit stopped the search early; the
    /// schedule is then the best incumbent, not a proven optimum.
    pub proven: bool,
    pub exec_time: f64,
    pub deadline: f64,
    pub x: f64,
    /// Task times of the returned MILP point, indexed like `graph.tasks`.
    pub milp_begin: Vec<f64>,
    pub milp_end: Vec<f64>,
    pub milp_time_at: Vec<Vec<f64>>,
    pub validity: ValidationReport,
    pub stats: SolveStats,
    pub formulation: FormulationKind,
    pub model_variables: usize,
    pub model_binaries: usize,
    pub model_rows: usize,
    /// Number of workloads in the model (workload formulation only).
    pub workload_count: Option<usize>,
}

struct Optimized {
    assignment: Vec<f64>,
    objective: f64,
    bound: f64,
    proven: bool,
    stats: SolveStats,
}

fn optimize(model: &MilpModel, limits: &MilpLimits, lp_opts: &LpOptions) -> Result<Optimized, Error> {
    let res = solve_milp(model, lp_opts, limits);
    match res.status {
        SolveStatus::Infeasible => Err(Error::Infeasible(
            "the deadline and switch threshold admit no schedule".into(),
        )),
        SolveStatus::Unbounded => Err(Error::SolverLimit(
            "the relaxation is unbounded; the model is malformed".into(),
        )),
        SolveStatus::Limit if res.assignment.is_none() => Err(Error::SolverLimit(format!(
            "stopped after {} nodes without an integral point",
            res.stats.nodes
        ))),
        _ => Ok(Optimized {
            assignment: res.assignment.expect("status carries a point"),
            objective: res.objective.expect("a point carries its objective"),
            bound: res.bound,
            proven: matches!(res.status, SolveStatus::Optimal),
            stats: res.stats,
        }),
    }
}

/// Equal-energy points can trade wait time between a message wait and the
/// barrier wait behind it, which drifts task begins away from their
/// earliest-start form while the replay always starts tasks as early as
/// inputs allow. Re-solving with the binaries pinned and the energy held
/// at its optimum picks the earliest-start point among the equally good
/// ones. The energy row must be an equality at the re-optimized value: a
/// cap with any slack would let the time pull spend that slack on faster
/// frequencies and land the point's energy at the cap instead of the
/// optimum.
fn compact(model: &MilpModel, tv: &TaskVars, opt: &Optimized, lp_opts: &LpOptions) -> Vec<f64> {
    let overrides: Vec<(VarId, f64, f64)> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| {
            let val = opt.assignment[i].round();
            (i, val, val)
        })
        .collect();
    let energy = match solve_lp(model, &overrides, lp_opts) {
        res if res.status == SolveStatus::Optimal => res.objective.unwrap_or(opt.objective),
        _ => return opt.assignment.clone(),
    };
    let mut lp = model.clone();
    lp.add_row("energy_pin", model.objective.clone(), Sense::Eq, energy);
    let mut pull = vec![(1.0, tv.total_time)];
    for (&b, &e) in tv.begin.iter().zip(&tv.end) {
        pull.push((1.0, b));
        pull.push((1.0, e));
    }
    lp.set_objective(pull);
    let res = solve_lp(&lp, &overrides, lp_opts);
    match (res.status, res.assignment) {
        (SolveStatus::Optimal, Some(point)) => point,
        _ => opt.assignment.clone(),
    }
}

/// Builds the configured model, solves it to optimality, and returns the
/// decoded schedule together with its replay.
pub fn solve_instance(
    graph: &TaskGraph,
    machine: &MachineModel,
    config: &SolveConfig,
) -> Result<Solved, Error> {
    let lp_opts = LpOptions::default();
    match config.formulation {
        FormulationKind::Workload => {
            let wm = build_workload_milp(graph, machine, config.x, config.var_cap)?;
            let opt = optimize(&wm.model, &config.limits, &lp_opts)?;
            let point = compact(&wm.model, &wm.task_vars, &opt, &lp_opts);
            let schedule = decode_workload_solution(&wm, machine, &point)?;
            finish(
                config,
                machine,
                wm.graph,
                &wm.task_vars,
                wm.exec_time,
                &wm.model,
                Some(wm.workloads.len()),
                opt,
                point,
                schedule,
            )
        }
        FormulationKind::Switch => {
            let sm = build_switch_milp(graph, machine, config.x, config.slots)?;
            let opt = optimize(&sm.model, &config.limits, &lp_opts)?;
            let point = compact(&sm.model, &sm.task_vars, &opt, &lp_opts);
            let schedule = decode_switch_solution(&sm, machine, &point)?;
            finish(
                config,
                machine,
                sm.graph,
                &sm.task_vars,
                sm.exec_time,
                &sm.model,
                None,
                opt,
                point,
                schedule,
            )
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    config: &SolveConfig,
    machine: &MachineModel,
    graph: TaskGraph,
    tv: &TaskVars,
    exec_time: f64,
    model: &MilpModel,
    workload_count: Option<usize>,
    opt: Optimized,
    point: Vec<f64>,
    schedule: Schedule,
) -> Result<Solved, Error> {
    let timeline = simulate(&graph, machine, &schedule)?;
    let breakdown = energy(&timeline, &graph);
    let validity = check_schedule(&schedule, machine, config.x, exec_time);
    let milp_begin: Vec<f64> = tv.begin.iter().map(|&v| point[v]).collect();
    let milp_end: Vec<f64> = tv.end.iter().map(|&v| point[v]).collect();
    let milp_time_at: Vec<Vec<f64>> = tv
        .time_at
        .iter()
        .map(|vs| vs.iter().map(|&v| point[v]).collect())
        .collect();
    let binaries = model
        .vars
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .count();
    Ok(Solved {
        graph,
        schedule,
        timeline,
        per_task_energy: breakdown.per_task,
        simulated_energy: breakdown.total,
        objective: opt.objective,
        bound: opt.bound,
        proven: opt.proven,
        exec_time,
        deadline: tv.deadline,
        x: config.x,
        milp_begin,
        milp_end,
        milp_time_at,
        validity,
        stats: opt.stats,
        formulation: config.formulation,
        model_variables: model.vars.len(),
        model_binaries: binaries,
        model_rows: model.constraints.len(),
        workload_count,
    })
}

/// A schedule replayed against an instance, without any solving involved.
#[derive(Debug, Clone)]
pub struct Replayed {
    /// Slack-bearing graph the replay ran over.
    pub graph: TaskGraph,
    pub timeline: Timeline,
    pub per_task_energy: Vec<f64>,
    pub simulated_energy: f64,
    pub exec_time: f64,
    pub deadline: f64,
    pub x: f64,
    pub validity: ValidationReport,
}

/// Replays `schedule` on the instance under slowdown allowance `x`.
pub fn replay(
    graph: &TaskGraph,
    machine: &MachineModel,
    x: f64,
    schedule: &Schedule,
) -> Result<Replayed, Error> {
    let graph = crate::task_graph::insert_slack_tasks(graph, machine)?;
    let exec_time = crate::task_graph::max_frequency_makespan(&graph, machine)?;
    let deadline = crate::task_graph::deadline(exec_time, x)?;
    let timeline = simulate(&graph, machine, schedule)?;
    let breakdown = energy(&timeline, &graph);
    let validity = check_schedule(schedule, machine, x, exec_time);
    Ok(Replayed {
        graph,
        timeline,
        per_task_energy: breakdown.per_task,
        simulated_energy: breakdown.total,
        exec_time,
        deadline,
        x,
        validity,
    })
}

/// Per-task line of an [`EnergyReport`].
#[derive(Debug, Clone, Serialize)]
pub struct TaskReport {
    pub name: String,
    pub core: usize,
    pub kind: String,
    pub begin_s: f64,
    pub end_s: f64,
    pub energy_j: f64,
}

/// Solver-side block of an [`EnergyReport`]; absent for pure replays.
#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub objective_j: f64,
    pub bound_j: f64,
    pub proven_optimal: bool,
    pub nodes: u64,
    pub lp_iterations: u64,
    pub wall_ms: u64,
}

/// Machine-readable summary of a solved or replayed instance.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    #[serde(rename = "total_energy_J")]
    pub total_energy_j: f64,
    pub total_time_s: f64,
    pub exec_time_s: f64,
    pub deadline_s: f64,
    pub x_percent: f64,
    pub formulation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workload_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variable_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverReport>,
    pub per_task: Vec<TaskReport>,
}

fn task_lines(graph: &TaskGraph, timeline: &Timeline, per_task: &[f64]) -> Vec<TaskReport> {
    graph
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| TaskReport {
            name: t.name.clone(),
            core: t.core,
            kind: match t.kind {
                TaskKind::Compute => "compute",
                TaskKind::MessageSlack => "message_wait",
                TaskKind::BarrierSlack => "barrier_wait",
            }
            .into(),
            begin_s: timeline.begin[i],
            end_s: timeline.end[i],
            energy_j: per_task[i],
        })
        .collect()
}

impl Solved {
    pub fn report(&self) -> EnergyReport {
        EnergyReport {
            total_energy_j: self.simulated_energy,
            total_time_s: self.timeline.total_time,
            exec_time_s: self.exec_time,
            deadline_s: self.deadline,
            x_percent: self.x,
            formulation: self.formulation.to_string(),
            workload_count: self.workload_count,
            binary_count: Some(self.model_binaries),
            variable_count: Some(self.model_variables),
            row_count: Some(self.model_rows),
            solver: Some(SolverReport {
                objective_j: self.objective,
                bound_j: self.bound,
                proven_optimal: self.proven,
                nodes: self.stats.nodes,
                lp_iterations: self.stats.lp_iterations,
                wall_ms: self.stats.wall.as_millis() as u64,
            }),
            per_task: task_lines(&self.graph, &self.timeline, &self.per_task_energy),
        }
    }
}

impl Replayed {
    /// Report for a replayed schedule.  The model size block describes the
    /// formulation that would be built for this instance, so the counts are
    /// comparable with a solve-side report.
    pub fn report(
        &self,
        machine: &MachineModel,
        formulation: FormulationKind,
        slots: Option<usize>,
    ) -> Result<EnergyReport, Error> {
        let (workload_count, binary_count, variable_count, row_count) = match formulation {
            FormulationKind::Workload => {
                let counts = crate::workload::count_workloads(
                    &self.graph,
                    machine,
                    crate::workload::DEFAULT_VAR_CAP as u128,
                );
                let total: u128 = counts.iter().sum();
                let nf = machine.freq_count() as u128;
                (
                    Some(total.min(usize::MAX as u128) as usize),
                    Some((total * (nf + 1)).min(usize::MAX as u128) as usize),
                    None,
                    None,
                )
            }
            FormulationKind::Switch => {
                let m = match slots {
                    Some(m) => m,
                    None => crate::switch::default_slot_count(&self.graph, machine)?,
                };
                let size = crate::switch::estimate_switch_model_size(&self.graph, machine, m)?;
                (None, Some(size.binary), Some(size.continuous + size.binary), Some(size.rows))
            }
        };
        Ok(EnergyReport {
            total_energy_j: self.simulated_energy,
            total_time_s: self.timeline.total_time,
            exec_time_s: self.exec_time,
            deadline_s: self.deadline,
            x_percent: self.x,
            formulation: formulation.to_string(),
            workload_count,
            binary_count,
            variable_count,
            row_count,
            solver: None,
            per_task: task_lines(&self.graph, &self.timeline, &self.per_task_energy),
        })
    }
}
