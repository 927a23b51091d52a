//! Exhaustive ground truth for tiny instances, plus a seeded instance
//! generator.  The oracle enumerates every assignment of a formulation's
//! binary variables and solves the remaining LP for each, so it shares no
//! search logic with branch and bound; agreement between the two is the
//! strongest correctness evidence this crate has.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::milp::{MilpModel, VarId};
use crate::solver::{solve_lp, LpOptions, SolveStatus};
use crate::task_graph::{
    validate_graph, FrequencyLevel, MachineModel, MessageEdge, Processor, Task, TaskGraph,
    TaskKind,
};
use crate::workload::build_workload_milp;
use crate::switch::build_switch_milp;

/// Hard cap on binaries the oracle will enumerate.
pub const ORACLE_BINARY_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Workload,
    Switch,
    /// Run both and require their optima to agree within 1e-6 relative;
    /// the returned witness is the workload one.
    Both,
}

/// An exhaustively proven optimum.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub energy: f64,
    /// Assignment of the winning LP, indexed like the formulation's model.
    pub witness: Vec<f64>,
    /// LPs actually solved (pruned patterns excluded).
    pub lps_solved: u64,
}

/// One independently enumerable block of binaries with its feasible value
/// patterns.  The cartesian product of all groups covers every binary
/// assignment that is not pruned away.
struct Group {
    vars: Vec<VarId>,
    patterns: Vec<Vec<f64>>,
}

fn thread_count() -> usize {
    std::env::var("DVFS_SCHED_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(64)
}

/// Enumerates the cartesian product of group patterns, solving the fixed LP
/// for each, in parallel chunks.  `forbidden` lists group pairs that cannot
/// both take a digit >= 2 (used for provably exclusive workloads).  The
/// reduction keys on (objective, pattern index), so the result does not
/// depend on the thread count.
fn enumerate(
    model: &MilpModel,
    groups: &[Group],
    forbidden: &[(usize, usize)],
) -> Result<Option<(f64, Vec<f64>, u64)>, Error> {
    let total: u128 = groups.iter().map(|g| g.patterns.len() as u128).product();
    let threads = thread_count().min(usize::MAX) as u128;
    let threads = threads.min(total.max(1));
    let opts = LpOptions::default();

    struct Local {
        best: Option<(f64, u128, Vec<f64>)>,
        lps: u64,
        failures: u64,
    }

    let run_chunk = |lo: u128, hi: u128| -> Local {
        let mut digits = vec![0usize; groups.len()];
        let mut local = Local {
            best: None,
            lps: 0,
            failures: 0,
        };
        'outer: for idx in lo..hi {
            let mut rest = idx;
            for (g, group) in groups.iter().enumerate() {
                let r = group.patterns.len() as u128;
                digits[g] = (rest % r) as usize;
                rest /= r;
            }
            for &(a, b) in forbidden {
                if digits[a] >= 2 && digits[b] >= 2 {
                    continue 'outer;
                }
            }
            let mut overrides = Vec::new();
            for (g, group) in groups.iter().enumerate() {
                let pat = &group.patterns[digits[g]];
                for (&v, &val) in group.vars.iter().zip(pat) {
                    overrides.push((v, val, val));
                }
            }
            let r = solve_lp(model, &overrides, &opts);
            local.lps += 1;
            match r.status {
                SolveStatus::Optimal => {
                    let obj = r.objective.unwrap();
                    let better = match &local.best {
                        None => true,
                        Some((b, bi, _)) => {
                            obj < *b || (obj == *b && idx < *bi)
                        }
                    };
                    if better {
                        local.best = Some((obj, idx, r.assignment.unwrap()));
                    }
                }
                SolveStatus::Infeasible => {}
                _ => local.failures += 1,
            }
        }
        local
    };

    let locals: Vec<Local> = if threads <= 1 {
        vec![run_chunk(0, total)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let lo = total * t / threads;
                    let hi = total * (t + 1) / threads;
                    s.spawn(move || run_chunk(lo, hi))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };

    let failures: u64 = locals.iter().map(|l| l.failures).sum();
    if failures > 0 {
        return Err(Error::Simulation(format!(
            "{failures} pattern LPs exhausted their iteration budget"
        )));
    }
    let lps: u64 = locals.iter().map(|l| l.lps).sum();
    let mut best: Option<(f64, u128, Vec<f64>)> = None;
    for l in locals {
        if let Some((obj, idx, x)) = l.best {
            let better = match &best {
                None => true,
                Some((b, bi, _)) => obj < *b || (obj == *b && idx < *bi),
            };
            if better {
                best = Some((obj, idx, x));
            }
        }
    }
    Ok(best.map(|(obj, _, x)| (obj, x, lps)))
}

fn workload_optimum(graph: &TaskGraph, machine: &MachineModel, x: f64) -> Result<Optimum, Error> {
    let wm = build_workload_milp(graph, machine, x, None)?;
    let binaries = wm.model.num_binaries();
    if binaries > ORACLE_BINARY_LIMIT {
        return Err(Error::OracleTooLarge {
            binaries,
            limit: ORACLE_BINARY_LIMIT,
        });
    }
    let nf = machine.freq_count();
    // An inactive workload forces all its frequency times (and so all its
    // dwell indicators) to zero, so only 1 + 2^nf of the 2^(nf+1) raw
    // assignments per workload can be feasible.
    let groups: Vec<Group> = wm
        .wvars
        .iter()
        .map(|wv| {
            let mut vars = wv.used.clone();
            vars.push(wv.active);
            let mut patterns = vec![vec![0.0; nf + 1]];
            for bits in 0..(1u32 << nf) {
                let mut p: Vec<f64> = (0..nf)
                    .map(|f| ((bits >> f) & 1) as f64)
                    .collect();
                p.push(1.0);
                patterns.push(p);
            }
            Group { vars, patterns }
        })
        .collect();
    // Workloads ordered against each other cannot both run for long enough
    // to trip a dwell indicator (digit >= 2), so those combinations are
    // skipped without solving.
    let forbidden = wm.incompatible_pairs();
    match enumerate(&wm.model, &groups, &forbidden)? {
        Some((energy, witness, lps_solved)) => Ok(Optimum {
            energy,
            witness,
            lps_solved,
        }),
        None => Err(Error::Infeasible(
            "every binary pattern of the workload model is infeasible".into(),
        )),
    }
}

fn switch_optimum(graph: &TaskGraph, machine: &MachineModel, x: f64) -> Result<Optimum, Error> {
    // One full cycle keeps the pair count inside the enumeration budget.
    // With a single frequency that is lossless (more slots never change a
    // constant timeline); larger machines exceed the binary cap regardless.
    let slots = machine.freq_count();
    let sm = build_switch_milp(graph, machine, x, Some(slots))?;
    let ids = sm.model.binary_ids();
    if ids.len() > ORACLE_BINARY_LIMIT {
        return Err(Error::OracleTooLarge {
            binaries: ids.len(),
            limit: ORACLE_BINARY_LIMIT,
        });
    }
    let groups: Vec<Group> = ids
        .iter()
        .map(|&v| Group {
            vars: vec![v],
            patterns: vec![vec![0.0], vec![1.0]],
        })
        .collect();
    match enumerate(&sm.model, &groups, &[])? {
        Some((energy, witness, lps_solved)) => Ok(Optimum {
            energy,
            witness,
            lps_solved,
        }),
        None => Err(Error::Infeasible(
            "every binary pattern of the switch model is infeasible".into(),
        )),
    }
}

/// Proves the optimum of `graph` under slowdown allowance `x` by exhausting
/// the chosen formulation's binaries.  Refuses instances whose binary count
/// exceeds [`ORACLE_BINARY_LIMIT`].
pub fn brute_force_optimum(
    graph: &TaskGraph,
    machine: &MachineModel,
    x: f64,
    formulation: Formulation,
) -> Result<Optimum, Error> {
    match formulation {
        Formulation::Workload => workload_optimum(graph, machine, x),
        Formulation::Switch => switch_optimum(graph, machine, x),
        Formulation::Both => {
            let w = workload_optimum(graph, machine, x)?;
            let s = switch_optimum(graph, machine, x)?;
            let scale = 1.0f64.max(w.energy.abs()).max(s.energy.abs());
            if (w.energy - s.energy).abs() > 1e-6 * scale {
                return Err(Error::OracleMismatch {
                    workload: w.energy,
                    switch: s.energy,
                });
            }
            Ok(Optimum {
                lps_solved: w.lps_solved + s.lps_solved,
                ..w
            })
        }
    }
}

/// Shape of a generated instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceDims {
    pub processors: usize,
    pub cores_per_processor: usize,
    pub tasks_per_core: usize,
    pub frequencies: usize,
    /// Probability that a non-first task receives a message.
    pub edge_density: f64,
}

/// Deterministically generates a valid instance from `seed`.  Execution
/// times fall and powers rise with frequency; edges only point forward in
/// sequence position across cores, so the graph is acyclic and no core's
/// first task ever waits for a message.
pub fn random_instance(seed: u64, dims: &InstanceDims) -> (TaskGraph, MachineModel) {
    assert!(dims.processors >= 1 && dims.cores_per_processor >= 1);
    assert!(dims.tasks_per_core >= 1 && dims.frequencies >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = dims.frequencies;
    let ncores = dims.processors * dims.cores_per_processor;

    let mut tasks = Vec::new();
    let mut min_exec = f64::INFINITY;
    for core in 0..ncores {
        for pos in 0..dims.tasks_per_core {
            let mut exec = std::collections::BTreeMap::new();
            let mut power = std::collections::BTreeMap::new();
            let mut t = rng.gen_range(1.0..3.0);
            let mut p = rng.gen_range(5.0..15.0);
            for f in 0..nf {
                exec.insert(f, t);
                power.insert(f, p);
                min_exec = min_exec.min(t);
                t *= rng.gen_range(0.5..0.9);
                p *= rng.gen_range(1.5..2.5);
            }
            tasks.push(Task {
                name: format!("T{core}_{pos}"),
                core,
                kind: TaskKind::Compute,
                exec,
                power,
            });
        }
    }

    let mut edges = Vec::new();
    if ncores >= 2 {
        for core in 0..ncores {
            for pos in 1..dims.tasks_per_core {
                if rng.gen_range(0.0..1.0) >= dims.edge_density {
                    continue;
                }
                let mut from_core = rng.gen_range(0..ncores - 1);
                if from_core >= core {
                    from_core += 1;
                }
                let from_pos = rng.gen_range(0..pos);
                edges.push(MessageEdge {
                    from: from_core * dims.tasks_per_core + from_pos,
                    to: core * dims.tasks_per_core + pos,
                    m: rng.gen_range(0.05..0.4),
                });
            }
        }
    }

    let machine = MachineModel {
        frequencies: (0..nf)
            .map(|id| FrequencyLevel {
                id,
                hz: 1.0e9 * (id as f64 + 1.0),
            })
            .collect(),
        threshold_th: 0.02 * min_exec,
        processors: (0..dims.processors)
            .map(|p| Processor {
                cores: (p * dims.cores_per_processor..(p + 1) * dims.cores_per_processor)
                    .collect(),
            })
            .collect(),
        idle_power: None,
        idle_factor: 0.1,
    };

    let graph = TaskGraph::new(tasks, edges);
    let report = validate_graph(&graph, &machine);
    assert!(report.is_ok(), "generated instance must validate:\n{report}");
    (graph, machine)
}
