//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
//! criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use obrbsde::game::{
    brute_force_values, exhaustive_saddle, verify_saddle, BruteForceCap, SaddleOptions,
    DEFAULT_ENUMERATION_CAP,
};
use obrbsde::lattice::{Filtration, PathTree, RecombiningLattice};
use obrbsde::oblique_rbsde::{check_minimality, solve_rbsde_with, RbsdeOptions, RbsdeSolution};
use obrbsde::penalize::{penalization_report, ConvergenceReport, PenaltyOptions};
use obrbsde::runner::{self, build_filtration, parse_scenario, Scenario, TaskStatus, EXIT_OK};
use obrbsde::spec_model::sampling::{random_admissible_spec, random_costs};
use obrbsde::spec_model::{
    check_loop_costs, enumerate_primary_loops, project_oblique_with, Clause, CostTables,
    GameSpec, GeneratorSpec, ModeMatrix, SweepOrder, TerminalSpec,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn fixture(name: &str) -> Result<Scenario> {
    parse_scenario(&scenarios_dir().join(name)).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Every valid fixture, sorted by file name.
fn fixtures() -> Result<Vec<Scenario>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| parse_scenario(p).map_err(|e| anyhow::anyhow!("{e}")))
        .collect()
}

fn direct(s: &Scenario, f: &dyn Filtration) -> Result<RbsdeSolution> {
    Ok(solve_rbsde_with(&s.spec, f, &s.tolerances.rbsde_options())?)
}

fn sweep(s: &Scenario, ns: &[f64], with_direct: bool) -> Result<ConvergenceReport> {
    let f = build_filtration(s)?;
    let d = if with_direct {
        Some(direct(s, f.as_ref())?)
    } else {
        None
    };
    let (report, _) = penalization_report(&s.spec, f.as_ref(), ns, d.as_ref(), &PenaltyOptions::default())?;
    Ok(report)
}

fn martingale() -> Result<Outcome> {
    let base = fixture("martingale_2x2.toml")?;
    let TerminalSpec::Constant { value } = base.spec.terminal().clone() else {
        anyhow::bail!("martingale fixture must have a constant terminal");
    };
    let spec = GameSpec::new(
        base.spec.costs().clone(),
        GeneratorSpec::Zero,
        TerminalSpec::Constant {
            value: value.clone(),
        },
        1.0,
        1,
    )?;
    let opts = RbsdeOptions::default();
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for steps in 1..=12 {
        let trees: [Box<dyn Filtration>; 2] = [
            Box::new(PathTree::with_cap(steps, 1, 1.0, 1 << 22)?),
            Box::new(RecombiningLattice::new(steps, 1, 1.0)?),
        ];
        for f in &trees {
            let sol = solve_rbsde_with(&spec, f.as_ref(), &opts)?;
            for node in 0..sol.y.nodes() {
                worst = worst.max(sol.y.matrix(node).max_abs_diff(&value));
            }
            worst = worst.max(sol.dk.max_abs()).max(sol.dl.max_abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 1.0,
        format!("max |Y - xi|, |dK|, |dL| = {worst:.2e} over N = 1..12 on both trees, {secs:.3} s"),
    )
}

const SWEEP: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

fn monotonicity() -> Result<Outcome> {
    let s = fixture("standard_2x2.toml")?;
    let t0 = Instant::now();
    let r = sweep(&s, &SWEEP, false)?;
    let secs = t0.elapsed().as_secs_f64();
    let worst_increase = r
        .rows
        .iter()
        .filter_map(|row| row.max_increase)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_decrease = r
        .rows
        .iter()
        .filter_map(|row| row.max_decrease)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        r.all_nonincreasing() && secs < 10.0,
        format!(
            "nonincreasing in n: largest increase {worst_increase:.3e} (largest decrease {worst_decrease:.3e}), {secs:.3} s"
        ),
    )
}

fn penalty_bound() -> Result<Outcome> {
    let s = fixture("standard_2x2.toml")?;
    let r = sweep(&s, &SWEEP, false)?;
    let worst = r.rows.iter().map(|row| row.penalty_statistic).fold(0.0, f64::max);
    outcome(
        r.all_penalty_ok(),
        format!("max penalty statistic {worst:.4} against bound {:.4}", r.penalty_bound),
    )
}

fn a_priori_bounds() -> Result<Outcome> {
    let s = fixture("standard_2x2.toml")?;
    let r = sweep(&s, &SWEEP, false)?;
    let lo = r.rows.iter().map(|row| row.min_y).fold(f64::INFINITY, f64::min);
    let hi = r.rows.iter().map(|row| row.max_y).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        r.all_bounds_ok(),
        format!(
            "Y^n in [{lo:.4}, {hi:.4}] within [{:.4}, {:.4}]",
            r.lower_bound, r.upper_bound
        ),
    )
}

fn penalization_limit() -> Result<Outcome> {
    let s = fixture("standard_2x2.toml")?;
    let ns = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let r = sweep(&s, &ns, true)?;
    let gaps = r.gaps();
    ensure!(gaps.len() == ns.len(), "missing gaps");
    let last = gaps[gaps.len() - 1];
    let extrapolated = r.extrapolated_last_gap().context("too few gaps")?;
    let decreasing = r.gaps_strictly_decreasing();
    // gaps[p] belongs to n = 2^p, so p >= 3 pairs gap(2n) with gap(n) for n >= 4
    let ratios: Vec<f64> = (3..gaps.len()).map(|p| gaps[p] / gaps[p - 1]).collect();
    let halving = ratios.iter().all(|&q| q <= 0.75);
    outcome(
        last < 10.0 * extrapolated && decreasing && halving,
        format!(
            "gap(32) = {last:.4}, extrapolation {extrapolated:.4}, strictly decreasing {decreasing}, ratios for n >= 4 {ratios:.3?}"
        ),
    )
}

fn minimality() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d696e);
    let t0 = Instant::now();
    let mut pushes = 0;
    let mut bad = Vec::new();
    for case in 0..100 {
        let (m1, m2) = if case % 2 == 0 { (2, 2) } else { (3, 2) };
        let steps = rng.gen_range(1..=6);
        let spec = random_admissible_spec(&mut rng, m1, m2, steps);
        let f = PathTree::with_cap(steps, 1, 1.0, 1 << 22)?;
        let sol = solve_rbsde_with(&spec, &f, &RbsdeOptions::default())?;
        let report = check_minimality(&sol, &spec, 1e-9, 1e-8);
        pushes += report.pushes_checked;
        if !report.is_ok() {
            bad.push(case);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && pushes > 0 && secs < 60.0,
        format!("{pushes} pushes checked on 100 games, failing cases {bad:?}, {secs:.2} s"),
    )
}

fn two_step_fixtures() -> Result<Vec<Scenario>> {
    Ok(fixtures()?.into_iter().filter(|s| s.tree.steps == 2).collect())
}

fn representation() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut ok = true;
    let all = two_step_fixtures()?;
    ensure!(!all.is_empty(), "no two-step fixtures");
    for s in &all {
        let f = build_filtration(s)?;
        let y = direct(s, f.as_ref())?.root();
        let bf = brute_force_values(&s.spec, f.as_ref(), &BruteForceCap::default(), &s.tolerances.rbsde_options().picard)?;
        let err = bf.max_abs_diff(&y);
        ok &= err <= 1e-9;
        lines.push(format!("{} {err:.1e}", s.name));
    }
    outcome(ok, format!("max |brute force - Y(root)|: {}", lines.join(", ")))
}

fn saddle() -> Result<Outcome> {
    let s = fixture("standard_2x2.toml")?;
    let t0 = Instant::now();
    let f = build_filtration(&s)?;
    let sol = direct(&s, f.as_ref())?;
    let opts = SaddleOptions {
        catalog_size: 200,
        seed: runner::task_seed(s.seed, "saddle"),
        tol: 1e-8,
        trigger_tol: s.tolerances.trigger,
        picard: s.tolerances.rbsde_options().picard,
    };
    let report = verify_saddle(&s.spec, f.as_ref(), &sol.y, &opts)?;
    let secs = t0.elapsed().as_secs_f64();
    let pairs: BTreeSet<(usize, usize)> = report
        .rows
        .iter()
        .filter(|r| r.deviator.is_none())
        .map(|r| (r.i, r.j))
        .collect();
    outcome(
        report.is_ok() && pairs.len() == 4 && secs < 30.0,
        format!(
            "{} inequalities ({} + {} strategies), worst slack {:.2e}, {secs:.2} s",
            report.rows.len(),
            report.catalog_one,
            report.catalog_two,
            report.worst_slack()
        ),
    )
}

fn exhaustive() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut ok = true;
    let all: Vec<Scenario> = two_step_fixtures()?
        .into_iter()
        .filter(|s| (s.spec.m1(), s.spec.m2()) == (2, 2))
        .collect();
    ensure!(!all.is_empty(), "no two-step 2x2 fixtures");
    for s in &all {
        let f = build_filtration(s)?;
        let sol = direct(s, f.as_ref())?;
        let ex = exhaustive_saddle(
            &s.spec,
            f.as_ref(),
            &sol.y,
            s.tolerances.trigger,
            DEFAULT_ENUMERATION_CAP,
            &s.tolerances.rbsde_options().picard,
        )?;
        let err = ex.max_error();
        ok &= err <= 1e-9;
        lines.push(format!("{} {err:.1e} ({} x {} tables)", s.name, ex.count_one, ex.count_two));
    }
    outcome(ok, format!("max error: {}", lines.join(", ")))
}

type Edge = ((usize, usize), (usize, usize));
type Criterion = (&'static str, fn() -> Result<Outcome>);

/// Simple cycles of the rook graph on the grid, found by extending walks from
/// every start and keeping each cycle as its set of undirected edges.
fn closed_walk_oracle(m1: usize, m2: usize) -> BTreeSet<BTreeSet<Edge>> {
    let states: Vec<(usize, usize)> = (0..m1).flat_map(|i| (0..m2).map(move |j| (i, j))).collect();
    let step = |a: (usize, usize), b: (usize, usize)| (a.0 == b.0) != (a.1 == b.1);
    let mut out = BTreeSet::new();
    fn grow(
        walk: &mut Vec<(usize, usize)>,
        states: &[(usize, usize)],
        step: &dyn Fn((usize, usize), (usize, usize)) -> bool,
        out: &mut BTreeSet<BTreeSet<Edge>>,
    ) {
        let (first, last) = (walk[0], *walk.last().unwrap());
        if walk.len() >= 2 && step(last, first) {
            let n = walk.len();
            let edges = (0..n)
                .map(|p| {
                    let (a, b) = (walk[p], walk[(p + 1) % n]);
                    (a.min(b), a.max(b))
                })
                .collect();
            out.insert(edges);
        }
        for &s in states {
            if step(last, s) && !walk.contains(&s) {
                walk.push(s);
                grow(walk, states, step, out);
                walk.pop();
            }
        }
    }
    for &s in &states {
        grow(&mut vec![s], &states, &step, &mut out);
    }
    out
}

fn validator() -> Result<Outcome> {
    let zero = check_loop_costs(&CostTables::uniform(2, 2, 1.0, 1.0))?;
    let fine = check_loop_costs(&CostTables::uniform(2, 2, 1.0, 0.8))?;
    let detects = zero.has(Clause::ZeroCostLoop);
    let passes = fine.is_ok();
    let mut mismatches = Vec::new();
    let mut counts = Vec::new();
    for m1 in 1..=3 {
        for m2 in 1..=3 {
            let oracle = closed_walk_oracle(m1, m2);
            let found: BTreeSet<_> = enumerate_primary_loops(m1, m2)?
                .iter()
                .map(|lp| {
                    let st = lp.states();
                    let n = st.len();
                    (0..n)
                        .map(|p| {
                            let (a, b) = (st[p], st[(p + 1) % n]);
                            (a.min(b), a.max(b))
                        })
                        .collect::<BTreeSet<_>>()
                })
                .collect();
            if found != oracle {
                mismatches.push((m1, m2));
            }
            counts.push(format!("{m1}x{m2}:{}", oracle.len()));
        }
    }
    outcome(
        detects && passes && mismatches.is_empty(),
        format!(
            "zero loop detected {detects}, (1, 0.8) passes {passes}, loop counts {} , mismatches {mismatches:?}",
            counts.join(" ")
        ),
    )
}

fn projection_order() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70726f6a);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let (m1, m2) = [(2, 2), (3, 2), (2, 3), (3, 3)][case % 4];
        let costs = random_costs(&mut rng, m1, m2);
        let y = ModeMatrix::from_fn(m1, m2, |_, _| rng.gen_range(-3.0..=3.0));
        let a = project_oblique_with(&y, &costs, 1e-14, SweepOrder::MinFirst, None)?;
        let b = project_oblique_with(&y, &costs, 1e-14, SweepOrder::MaxFirst, None)?;
        worst = worst.max(a.y.max_abs_diff(&b.y));
    }
    outcome(worst <= 1e-9, format!("max min-first vs max-first difference {worst:.2e} over 1000 instances"))
}

fn performance() -> Result<Outcome> {
    let out = tempfile::tempdir()?;
    let mut full = fixture("perf_3x3.toml")?;
    full.output_dir = out.path().to_path_buf();
    ensure!(full.tree.steps == 12 && (full.spec.m1(), full.spec.m2()) == (3, 3));
    let t0 = Instant::now();
    let run = runner::run(&full)?;
    let full_secs = t0.elapsed().as_secs_f64();
    let kinds: BTreeSet<&str> = run.tasks.iter().map(|t| t.kind.as_str()).collect();
    let all_passed = run.exit_code == EXIT_OK && run.tasks.iter().all(|t| t.status == TaskStatus::Passed);
    let pipeline = ["solve_direct", "penalize", "saddle"].iter().all(|k| kinds.contains(k));

    let fast = fixture("recombining_2x2_n20.toml")?;
    ensure!(fast.tree.steps == 20);
    let t1 = Instant::now();
    let f = build_filtration(&fast)?;
    direct(&fast, f.as_ref())?;
    let fast_secs = t1.elapsed().as_secs_f64();
    outcome(
        all_passed && pipeline && full_secs < 120.0 && fast_secs < 60.0,
        format!(
            "3x3 N=12 pipeline {full_secs:.2} s (all tasks passed {all_passed}), recombining 2x2 N=20 direct solve {fast_secs:.3} s"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("martingale sanity", martingale),
        ("penalization monotonicity", monotonicity),
        ("penalty bound", penalty_bound),
        ("a priori bounds", a_priori_bounds),
        ("penalization limit", penalization_limit),
        ("minimality", minimality),
        ("representation", representation),
        ("saddle point", saddle),
        ("exhaustive saddle", exhaustive),
        ("loop validator", validator),
        ("projection order independence", projection_order),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!passed);
        println!(
            "criterion {:>2} {} {name}: {detail}",
            k + 1,
            if passed { "PASS" } else { "FAIL" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
