//! Command line front end: load instances, build or solve models, replay
//! schedules, and emit reports for scripting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dvfs_sched::oracle::{random_instance, InstanceDims};
use dvfs_sched::report::{replay, solve_instance, FormulationKind, SolveConfig};
use dvfs_sched::simulate::{export_gantt, Schedule};
use dvfs_sched::solver::{export_lp, MilpLimits};
use dvfs_sched::switch::{build_switch_milp, estimate_switch_model_size};
use dvfs_sched::task_graph::{validate_graph, MachineModel, TaskGraph};
use dvfs_sched::workload::build_workload_milp;
use dvfs_sched::Error;

/// Appends one output line to the buffer `main` flushes in a single write.
macro_rules! wl {
    ($sink:expr, $($t:tt)*) => {{
        use std::fmt::Write;
        let _ = writeln!($sink, $($t)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "dvfs-sched",
    version,
    about = "Energy-minimal frequency schedules for message-passing task graphs",
    after_help = "Set DVFS_SCHED_THREADS to bound the worker threads the \
                  brute-force oracle uses; the solver itself is serial."
)]
struct Cli {
    /// Print a single machine-readable JSON object on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InstanceArgs {
    /// Task graph JSON file.
    #[arg(long)]
    graph: PathBuf,
    /// Machine description JSON file.
    #[arg(long)]
    machine: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Model family: "workload" or "switch".
    #[arg(long, default_value = "workload")]
    formulation: String,
    /// Allowed slowdown over the all-max-frequency makespan, in percent.
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    /// Switch instants per processor (switch formulation only); the default
    /// is generous enough to never cut off the optimum.
    #[arg(long)]
    slots: Option<usize>,
    /// Variable budget for the workload formulation before it refuses to
    /// enumerate further.
    #[arg(long)]
    var_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check an instance for structural problems.
    Validate {
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Build a model and write it in LP format.
    Build {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Output LP file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve an instance to an energy-minimal schedule.
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Wall-clock budget in seconds; the best incumbent is kept.
        #[arg(long)]
        time_limit: Option<f64>,
        /// Search node budget.
        #[arg(long)]
        max_nodes: Option<u64>,
        /// Output schedule file.
        #[arg(long, default_value = "schedule.json")]
        out: PathBuf,
    },
    /// Replay a schedule and report its timeline, energy, and validity.
    Simulate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Schedule JSON file to replay.
        #[arg(long)]
        schedule: PathBuf,
        /// Slowdown allowance the deadline check uses, in percent.
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        /// Also write one CSV row per task for external plotting.
        #[arg(long)]
        gantt: Option<PathBuf>,
    },
    /// Generate a random instance as a graph file and a machine file.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        processors: usize,
        #[arg(long, default_value_t = 1)]
        cores_per_processor: usize,
        #[arg(long, default_value_t = 3)]
        tasks_per_core: usize,
        #[arg(long, default_value_t = 2)]
        frequencies: usize,
        /// Probability that a non-first task receives a message.
        #[arg(long, default_value_t = 0.3)]
        edge_density: f64,
        /// Output prefix; writes <prefix>.graph.json and <prefix>.machine.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a schedule against its instance as JSON.
    Report {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Schedule JSON file to summarize.
        #[arg(long)]
        schedule: PathBuf,
        /// Slowdown allowance the deadline figure uses, in percent.
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        /// Formulation whose model size the summary quotes.
        #[arg(long, default_value = "workload")]
        formulation: String,
        #[arg(long)]
        slots: Option<usize>,
    },
}

/// Stable mapping from error kinds to exit codes; 0 is success and 2 is
/// clap's usage error, so module errors start at 10.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => 10,
        Error::InvalidGraph(_) => 11,
        Error::InvalidArgument(_) => 12,
        Error::WorkloadBlowUp { .. } => 13,
        Error::TooFewSlots { .. } => 14,
        Error::SolutionImport(_) => 15,
        Error::Decode(_) => 16,
        Error::Simulation(_) => 17,
        Error::Infeasible(_) => 18,
        Error::SolverLimit(_) => 19,
        Error::OracleTooLarge { .. } => 20,
        Error::OracleMismatch { .. } => 21,
        Error::Io(_) => 22,
    }
}

fn load_instance(args: &InstanceArgs) -> Result<(TaskGraph, MachineModel), Error> {
    let graph_text = std::fs::read_to_string(&args.graph)?;
    let machine_text = std::fs::read_to_string(&args.machine)?;
    let graph = TaskGraph::from_json(&graph_text)?;
    let machine = MachineModel::from_json(&machine_text)?;
    Ok((graph, machine))
}

fn parse_formulation(s: &str) -> Result<FormulationKind, Error> {
    s.parse()
}

fn run(command: Command, as_json: bool, sink: &mut String) -> Result<(), Error> {
    match command {
        Command::Validate { instance } => cmd_validate(&instance, as_json, sink),
        Command::Build {
            instance,
            model,
            out,
        } => cmd_build(&instance, &model, &out, as_json, sink),
        Command::Solve {
            instance,
            model,
            time_limit,
            max_nodes,
            out,
        } => cmd_solve(&instance, &model, time_limit, max_nodes, &out, as_json, sink),
        Command::Simulate {
            instance,
            schedule,
            x,
            gantt,
        } => cmd_simulate(&instance, &schedule, x, gantt.as_deref(), as_json, sink),
        Command::Gen {
            seed,
            processors,
            cores_per_processor,
            tasks_per_core,
            frequencies,
            edge_density,
            out,
        } => {
            let dims = InstanceDims {
                processors,
                cores_per_processor,
                tasks_per_core,
                frequencies,
                edge_density,
            };
            cmd_gen(seed, &dims, &out, as_json, sink)
        }
        Command::Report {
            instance,
            schedule,
            x,
            formulation,
            slots,
        } => cmd_report(&instance, &schedule, x, &formulation, slots, as_json, sink),
    }
}

fn cmd_validate(instance: &InstanceArgs, as_json: bool, sink: &mut String) -> Result<(), Error> {
    let (graph, machine) = load_instance(instance)?;
    let report = validate_graph(&graph, &machine);
    if as_json {
        wl!(sink, 
            "{}",
            serde_json::to_string_pretty(&json!({
                "ok": report.is_ok(),
                "tasks": graph.tasks.len(),
                "edges": graph.edges.len(),
                "issues": report.issues,
            }))
            .expect("report serializes")
        );
    } else if report.is_ok() {
        wl!(sink, 
            "instance is valid: {} tasks, {} edges, {} frequency levels",
            graph.tasks.len(),
            graph.edges.len(),
            machine.freq_count()
        );
    } else {
        for issue in &report.issues {
            wl!(sink, "issue: {issue}");
        }
    }
    if report.is_ok() {
        Ok(())
    } else {
        Err(Error::InvalidGraph(report))
    }
}

fn cmd_build(
    instance: &InstanceArgs,
    model: &ModelArgs,
    out: &Path,
    as_json: bool,
    sink: &mut String,
) -> Result<(), Error> {
    let (graph, machine) = load_instance(instance)?;
    let kind = parse_formulation(&model.formulation)?;
    match kind {
        FormulationKind::Workload => {
            let wm = build_workload_milp(&graph, &machine, model.x, model.var_cap)?;
            std::fs::write(out, export_lp(&wm.model))?;
            let diags = wm.diagnostics(&machine);
            let binaries = wm
                .model
                .vars
                .iter()
                .filter(|v| v.kind == dvfs_sched::milp::VarKind::Binary)
                .count();
            if as_json {
                wl!(sink, 
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "file": out,
                        "formulation": "workload",
                        "variables": wm.model.vars.len(),
                        "binaries": binaries,
                        "rows": wm.model.constraints.len(),
                        "workload_count": wm.workloads.len(),
                        "per_processor": diags,
                    }))
                    .expect("diagnostics serialize")
                );
            } else {
                wl!(sink, 
                    "wrote {}: {} variables ({} binary), {} rows",
                    out.display(),
                    wm.model.vars.len(),
                    binaries,
                    wm.model.constraints.len()
                );
                for d in &diags {
                    wl!(sink, 
                        "processor {}: {} workloads, {} binaries",
                        d.processor, d.workloads, d.binaries
                    );
                }
            }
        }
        FormulationKind::Switch => {
            let sm = build_switch_milp(&graph, &machine, model.x, model.slots)?;
            std::fs::write(out, export_lp(&sm.model))?;
            let size = estimate_switch_model_size(&graph, &machine, sm.slots_per_processor)?;
            if as_json {
                wl!(sink, 
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "file": out,
                        "formulation": "switch",
                        "variables": sm.model.vars.len(),
                        "binaries": size.binary,
                        "rows": sm.model.constraints.len(),
                        "slots_per_processor": sm.slots_per_processor,
                        "task_binaries": size.task_binaries,
                        "slot_binaries": size.slot_binaries,
                    }))
                    .expect("diagnostics serialize")
                );
            } else {
                wl!(sink, 
                    "wrote {}: {} variables ({} binary), {} rows",
                    out.display(),
                    sm.model.vars.len(),
                    size.binary,
                    sm.model.constraints.len()
                );
                wl!(sink, 
                    "{} slots per processor: {} task binaries, {} slot binaries",
                    sm.slots_per_processor, size.task_binaries, size.slot_binaries
                );
            }
        }
    }
    Ok(())
}

fn cmd_solve(
    instance: &InstanceArgs,
    model: &ModelArgs,
    time_limit: Option<f64>,
    max_nodes: Option<u64>,
    out: &Path,
    as_json: bool,
    sink: &mut String,
) -> Result<(), Error> {
    let (graph, machine) = load_instance(instance)?;
    let mut config = SolveConfig::new(parse_formulation(&model.formulation)?, model.x);
    config.slots = model.slots;
    config.var_cap = model.var_cap;
    config.limits = MilpLimits {
        max_nodes,
        time_limit: time_limit.map(Duration::from_secs_f64),
        ..MilpLimits::default()
    };
    let solved = solve_instance(&graph, &machine, &config)?;
    std::fs::write(out, solved.schedule.to_json())?;
    if !solved.validity.is_ok() {
        for issue in &solved.validity.issues {
            eprintln!("warning: {issue}");
        }
    }
    let report = solved.report();
    if as_json {
        let mut value = serde_json::to_value(&report).expect("report serializes");
        value["schedule_file"] = json!(out);
        wl!(sink, 
            "{}",
            serde_json::to_string_pretty(&value).expect("report serializes")
        );
    } else {
        let solver = report.solver.as_ref().expect("solve reports carry stats");
        if solver.proven_optimal {
            wl!(sink, "total energy {:.6} J (proven optimal)", report.total_energy_j);
        } else {
            wl!(sink, 
                "total energy {:.6} J (best found within limits; bound {:.6} J)",
                report.total_energy_j, solver.bound_j
            );
        }
        wl!(sink, 
            "total time {:.6} s, deadline {:.6} s (x = {}%)",
            report.total_time_s, report.deadline_s, report.x_percent
        );
        match report.workload_count {
            Some(w) => wl!(sink, 
                "model: {} variables ({} binary), {} rows, {} workloads",
                report.variable_count.unwrap_or(0),
                report.binary_count.unwrap_or(0),
                report.row_count.unwrap_or(0),
                w
            ),
            None => wl!(sink, 
                "model: {} variables ({} binary), {} rows",
                report.variable_count.unwrap_or(0),
                report.binary_count.unwrap_or(0),
                report.row_count.unwrap_or(0)
            ),
        }
        wl!(sink, 
            "solver: {} nodes, {} LP iterations, {} ms",
            solver.nodes, solver.lp_iterations, solver.wall_ms
        );
        wl!(sink, "wrote schedule to {}", out.display());
    }
    Ok(())
}

fn cmd_simulate(
    instance: &InstanceArgs,
    schedule_path: &Path,
    x: f64,
    gantt: Option<&Path>,
    as_json: bool,
    sink: &mut String,
) -> Result<(), Error> {
    let (graph, machine) = load_instance(instance)?;
    let schedule = Schedule::from_json(&std::fs::read_to_string(schedule_path)?)?;
    let replayed = replay(&graph, &machine, x, &schedule)?;
    if let Some(path) = gantt {
        std::fs::write(path, export_gantt(&replayed.graph, &replayed.timeline))?;
    }
    if as_json {
        wl!(sink, 
            "{}",
            serde_json::to_string_pretty(&json!({
                "total_energy_J": replayed.simulated_energy,
                "total_time_s": replayed.timeline.total_time,
                "horizon_s": schedule.horizon,
                "deadline_s": replayed.deadline,
                "x_percent": x,
                "valid": replayed.validity.is_ok(),
                "issues": replayed.validity.issues,
                "per_task": replayed
                    .graph
                    .tasks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| json!({
                        "name": t.name,
                        "begin_s": replayed.timeline.begin[i],
                        "end_s": replayed.timeline.end[i],
                        "energy_j": replayed.per_task_energy[i],
                    }))
                    .collect::<Vec<_>>(),
            }))
            .expect("summary serializes")
        );
    } else {
        wl!(sink, 
            "replayed {} tasks: total time {:.6} s, total energy {:.6} J",
            replayed.graph.tasks.len(),
            replayed.timeline.total_time,
            replayed.simulated_energy
        );
        if replayed.validity.is_ok() {
            wl!(sink, "schedule is valid for deadline {:.6} s", replayed.deadline);
        } else {
            for issue in &replayed.validity.issues {
                wl!(sink, "issue: {issue}");
            }
        }
        if let Some(path) = gantt {
            wl!(sink, "wrote Gantt rows to {}", path.display());
        }
    }
    Ok(())
}

fn cmd_gen(seed: u64, dims: &InstanceDims, out: &Path, as_json: bool, sink: &mut String) -> Result<(), Error> {
    let (graph, machine) = random_instance(seed, dims);
    let graph_path = out.with_extension("graph.json");
    let machine_path = out.with_extension("machine.json");
    let graph_file = graph.to_file()?;
    std::fs::write(
        &graph_path,
        serde_json::to_string_pretty(&graph_file).expect("graph serializes"),
    )?;
    std::fs::write(
        &machine_path,
        serde_json::to_string_pretty(&machine.to_file()).expect("machine serializes"),
    )?;
    if as_json {
        wl!(sink, 
            "{}",
            serde_json::to_string_pretty(&json!({
                "graph": graph_path,
                "machine": machine_path,
                "seed": seed,
                "tasks": graph.tasks.len(),
                "edges": graph.edges.len(),
            }))
            .expect("summary serializes")
        );
    } else {
        wl!(sink, 
            "seed {seed}: {} tasks, {} edges",
            graph.tasks.len(),
            graph.edges.len()
        );
        wl!(sink, "wrote {}", graph_path.display());
        wl!(sink, "wrote {}", machine_path.display());
    }
    Ok(())
}

fn cmd_report(
    instance: &InstanceArgs,
    schedule_path: &Path,
    x: f64,
    formulation: &str,
    slots: Option<usize>,
    as_json: bool,
    sink: &mut String,
) -> Result<(), Error> {
    let (graph, machine) = load_instance(instance)?;
    let schedule = Schedule::from_json(&std::fs::read_to_string(schedule_path)?)?;
    let replayed = replay(&graph, &machine, x, &schedule)?;
    let report = replayed.report(&machine, parse_formulation(formulation)?, slots)?;
    if as_json {
        wl!(sink, 
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        wl!(sink, "total energy {:.6} J", report.total_energy_j);
        wl!(sink, 
            "total time {:.6} s, deadline {:.6} s (x = {}%)",
            report.total_time_s, report.deadline_s, report.x_percent
        );
        match (report.workload_count, report.binary_count) {
            (Some(w), Some(b)) => wl!(sink, "workload model: {w} workloads, {b} binaries"),
            (None, Some(b)) => wl!(sink, "switch model: {b} binaries"),
            _ => {}
        }
        for line in &report.per_task {
            wl!(sink, 
                "{}: [{:.6}, {:.6}] s, {:.6} J ({})",
                line.name, line.begin_s, line.end_s, line.energy_j, line.kind
            );
        }
    }
    Ok(())
}

fn flush(sink: &str) -> ExitCode {
    use std::io::Write;
    match std::io::stdout().lock().write_all(sink.as_bytes()) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe means the reader has all it wanted.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&Error::Io(e)))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut sink = String::new();
    match run(cli.command, cli.json, &mut sink) {
        Ok(()) => flush(&sink),
        Err(e) => {
            let code = ExitCode::from(exit_code(&e));
            flush(&sink);
            eprintln!("error: {e}");
            code
        }
    }
}
