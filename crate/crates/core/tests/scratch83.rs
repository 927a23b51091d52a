use std::time::Instant;

use dvfs_sched::milp::Sense;
use dvfs_sched::oracle::{random_instance, InstanceDims, ORACLE_BINARY_LIMIT};
use dvfs_sched::report::{solve_instance, FormulationKind, SolveConfig};
use dvfs_sched::simulate::Schedule;
use dvfs_sched::solver::{solve_milp, LpOptions, MilpLimits, SolveStatus};
use dvfs_sched::switch::build_switch_milp;
use dvfs_sched::workload::build_workload_milp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn slots_needed(schedule: &Schedule, nf: usize) -> usize {
    let mut worst = nf;
    for segs in &schedule.processors {
        let mut pos = 0usize;
        for s in segs {
            pos += (s.f + nf - pos % nf) % nf;
            pos += 1;
        }
        worst = worst.max(pos);
    }
    worst
}

#[test]
fn survey_agreement() {
    let mut divergent = 0usize;
    let mut seed = 0u64;
    let mut kept = 0usize;
    let t_all = Instant::now();
    while kept < 50 && seed < 4000 {
        let s = seed;
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED_5EED);
        let dims = InstanceDims {
            processors: rng.gen_range(1..=2),
            cores_per_processor: rng.gen_range(1..=2),
            tasks_per_core: rng.gen_range(1..=3),
            frequencies: 2,
            edge_density: [0.0, 0.3, 0.6][rng.gen_range(0..3)],
        };
        let x = [0.0f64, 10.0, 20.0, 50.0, 100.0][rng.gen_range(0..5)];
        let (graph, machine) = random_instance(s, &dims);
        let wm = match build_workload_milp(&graph, &machine, x, None) {
            Ok(wm) => wm,
            Err(_) => continue,
        };
        if wm.model.binary_ids().len() > ORACLE_BINARY_LIMIT {
            continue;
        }
        kept += 1;

        let config = SolveConfig::new(FormulationKind::Workload, x);
        let solved = solve_instance(&graph, &machine, &config).unwrap();
        let wstar = solved.objective;
        let nf = machine.freq_count();
        let m = slots_needed(&solved.schedule, nf);

        // upper: find a switch point at or below W*(1+5e-7)
        let t0 = Instant::now();
        let mut sm = build_switch_milp(&graph, &machine, x, Some(m)).unwrap();
        let terms = sm.model.objective.clone();
        sm.model.add_row("cap", terms, Sense::Le, wstar * (1.0 + 1e-6));
        let limits = MilpLimits {
            stop_at: Some(wstar * (1.0 + 5e-7)),
            time_limit: Some(std::time::Duration::from_secs(20)),
            ..MilpLimits::default()
        };
        let up = solve_milp(&sm.model, &LpOptions::default(), &limits);
        let t_up = t0.elapsed().as_secs_f64();

        // lower: prove nothing sits below W*(1-1e-6)
        let t1 = Instant::now();
        let mut lo = build_switch_milp(&graph, &machine, x, Some(m)).unwrap();
        let terms = lo.model.objective.clone();
        lo.model.add_row("cap", terms, Sense::Le, wstar * (1.0 - 1e-6));
        let lim2 = MilpLimits {
            time_limit: Some(std::time::Duration::from_secs(20)),
            ..MilpLimits::default()
        };
        let down = solve_milp(&lo.model, &LpOptions::default(), &lim2);
        let t_lo = t1.elapsed().as_secs_f64();

        let up_s = match (up.status, up.objective) {
            (SolveStatus::Optimal, Some(o)) | (SolveStatus::Limit, Some(o)) => {
                format!("point {:.6e} rel {:+.2e}", o, (o - wstar) / wstar)
            }
            (st, _) => format!("{st:?}"),
        };
        let lo_s = match down.status {
            SolveStatus::Infeasible => "proved".to_string(),
            st => format!("{st:?} obj {:?}", down.objective),
        };
        let diverged = matches!(down.status, SolveStatus::Optimal | SolveStatus::Limit)
            && down.objective.is_some();
        if diverged {
            divergent += 1;
        }
        println!(
            "seed {s:3} x {x:5} m {m} bins {:3}: up [{up_s}] {t_up:6.2}s  lo [{lo_s}] {t_lo:6.2}s{}",
            5 * sm.graph.tasks.len() * m,
            if diverged { "  DIVERGED" } else { "" }
        );
    }
    println!(
        "total {:.1
}s, {divergent} divergent of {kept}",
        t_all.elapsed().as_secs_f64()
    );
}
