//! Scenario execution: runs the planned tasks in order, writes one report
//! table per task into a fresh run directory, and a JSON manifest.

mod report;
mod scenario;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::game::{
    brute_force_values_with, exhaustive_saddle, verify_saddle, BruteForceCap, LowerPush,
    SaddleOptions, DEFAULT_ENUMERATION_CAP,
};
use crate::lattice::{Filtration, PathTree, RecombiningLattice};
use crate::oblique_rbsde::{
    check_minimality, checked_terminal, export_csv, max_complementarity, max_domain_violation,
    solve_rbsde_with, RbsdeSolution,
};
use crate::penalize::{double_penalization_report, penalization_report, PenaltyOptions};
use crate::spec_model::{enumerate_primary_loops, SweepOrder};

pub use report::{create_run_dir, write_table};
pub use scenario::{
    parse_scenario, parse_scenario_str, Diagnostic, Scenario, ScenarioError, Task, TaskKind,
    Tolerances, TreeConfig, TreeKind, SCHEMA_VERSION,
};

/// Command-line overrides of a scenario.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Task names or kinds to run, in scenario order; kinds missing from the
    /// scenario are added with default options.
    pub tasks: Option<Vec<String>>,
    /// Overrides the verification tolerance.
    pub tolerance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Passed,
    /// An asserted invariant failed.
    Failed,
    /// The task could not run to completion.
    Error,
    /// A task it depends on did not complete.
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskRecord {
    pub name: String,
    pub kind: String,
    pub status: TaskStatus,
    pub message: Option<String>,
    /// Whether an error is a configuration problem rather than a solver failure.
    #[serde(skip)]
    pub config_error: bool,
    pub seed: u64,
    pub wall_seconds: f64,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    /// Measurements reported but not asserted.
    pub findings: BTreeMap<String, Json>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub exit_code: i32,
    pub tasks: Vec<TaskRecord>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Per-task seed: the first eight bytes of `sha256(seed || name)`.
pub fn task_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Applies command-line overrides; fails on unknown task names.
pub fn apply_overrides(mut s: Scenario, opts: &RunOptions) -> Result<Scenario, Error> {
    if let Some(seed) = opts.seed {
        s.seed = seed;
    }
    if let Some(t) = opts.tolerance {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Usage(format!("tolerance must be positive, got {t}")));
        }
        s.tolerances.verify = t;
    }
    if let Some(dir) = &opts.out_dir {
        s.output_dir = dir.clone();
    }
    if let Some(list) = &opts.tasks {
        let mut chosen = Vec::new();
        for want in list {
            let hits: Vec<&Task> = s
                .tasks
                .iter()
                .filter(|t| &t.name == want || t.kind.name() == want)
                .collect();
            if hits.is_empty() {
                let kind = TaskKind::default_for(want).ok_or_else(|| {
                    Error::Usage(format!(
                        "unknown task `{want}` (expected a task name from the scenario or one of: {})",
                        TaskKind::NAMES.join(", ")
                    ))
                })?;
                chosen.push(Task {
                    name: want.clone(),
                    kind,
                });
            } else {
                chosen.extend(hits.into_iter().cloned());
            }
        }
        let order = |t: &Task| {
            s.tasks
                .iter()
                .position(|o| o.name == t.name)
                .unwrap_or_else(|| TaskKind::NAMES.iter().position(|n| *n == t.kind.name()).unwrap_or(0) * 1000)
        };
        chosen.sort_by_key(order);
        chosen.dedup_by(|a, b| a.name == b.name);
        s.tasks = chosen;
    }
    Ok(s)
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Shape(_)
            | Error::NodeCap { .. }
            | Error::EnumerationCap { .. }
            | Error::Contraction { .. }
            | Error::TerminalOutsideDomain { .. }
            | Error::InvalidSpec(_)
            | Error::Usage(_)
    )
}

pub fn build_filtration(s: &Scenario) -> Result<Box<dyn Filtration>, Error> {
    let (n, d, t, cap) = (
        s.tree.steps,
        s.spec.dimension(),
        s.spec.horizon(),
        s.tree.node_cap,
    );
    Ok(match s.tree.kind {
        TreeKind::Path => Box::new(PathTree::with_cap(n, d, t, cap)?),
        TreeKind::Recombining => Box::new(RecombiningLattice::with_cap(n, d, t, cap)?),
    })
}

struct Ctx<'a> {
    s: &'a Scenario,
    f: &'a dyn Filtration,
    dir: &'a Path,
    /// The direct solution, or its error message and whether it is a
    /// configuration problem.
    direct: Option<Result<RbsdeSolution, (String, bool)>>,
}

struct Output {
    files: Vec<String>,
    checks: Vec<Check>,
    findings: BTreeMap<String, Json>,
}

impl Output {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            checks: Vec::new(),
            findings: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn finding(&mut self, key: &str, value: impl Into<Json>) {
        self.findings.insert(key.into(), value.into());
    }
}

fn num(v: f64) -> Json {
    serde_json::Number::from_f64(v).map_or_else(|| Json::String(v.to_string()), Json::Number)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl Ctx<'_> {
    fn solve_direct(&mut self) -> Result<RbsdeSolution, Error> {
        let opts = self.s.tolerances.rbsde_options();
        let r = solve_rbsde_with(&self.s.spec, self.f, &opts);
        self.direct = Some(match &r {
            Ok(sol) => Ok(sol.clone()),
            Err(e) => Err((e.to_string(), is_config_error(e))),
        });
        r
    }

    fn direct(&mut self) -> Result<&RbsdeSolution, (String, bool)> {
        if self.direct.is_none() {
            let _ = self.solve_direct();
        }
        self.direct
            .as_ref()
            .expect("just set")
            .as_ref()
            .map_err(Clone::clone)
    }

    fn need_direct(&mut self) -> Result<RbsdeSolution, Error> {
        self.direct().cloned().map_err(|(m, _)| Error::Usage(m))
    }

    /// `|Y_N(root) - Y_2N(root)|` for `N` and `2N` on recombining lattices
    /// when the data are Markovian, or why the comparison was not made.
    fn refinement(&self) -> Result<Vec<(usize, f64)>, String> {
        let s = self.s;
        if !s.spec.is_markovian() {
            return Err("terminal values are path-dependent".into());
        }
        let (n, d, t) = (s.tree.steps, s.spec.dimension(), s.spec.horizon());
        let mut roots = Vec::new();
        for steps in [n, 2 * n, 4 * n] {
            let lattice = RecombiningLattice::with_cap(steps, d, t, s.tree.node_cap)
                .map_err(|e| format!("{steps} steps: {e}"))?;
            let sol = solve_rbsde_with(&s.spec, &lattice, &s.tolerances.rbsde_options())
                .map_err(|e| format!("{steps} steps: {e}"))?;
            roots.push(sol.root());
        }
        Ok(vec![
            (n, roots[0].max_abs_diff(&roots[1])),
            (2 * n, roots[1].max_abs_diff(&roots[2])),
        ])
    }

    fn table(&self, out: &mut Output, file: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Error> {
        write_table(&self.dir.join(file), header, rows)?;
        out.files.push(file.to_string());
        Ok(())
    }

    fn pair_rows(&self, cols: &[&dyn Fn(usize, usize) -> String]) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for i in 0..self.s.spec.m1() {
            for j in 0..self.s.spec.m2() {
                let mut r = vec![i.to_string(), j.to_string()];
                r.extend(cols.iter().map(|c| c(i, j)));
                rows.push(r);
            }
        }
        rows
    }

    fn run_task(&mut self, task: &Task, seed: u64, out: &mut Output) -> Result<(), Error> {
        let name = task.name.clone();
        let tol = self.s.tolerances;
        let spec = &self.s.spec;
        match &task.kind {
            TaskKind::Validate => {
                let mut rows = Vec::new();
                rows.push(vec!["hypotheses".into(), "ok".into(), "all clauses hold".into()]);
                for lp in enumerate_primary_loops(spec.m1(), spec.m2())? {
                    let fwd = lp.alternating_cost(spec.costs(), false);
                    let rev = lp.alternating_cost(spec.costs(), true);
                    rows.push(vec![
                        format!("loop {lp}"),
                        "ok".into(),
                        format!("cost {fwd} forward, {rev} reversed"),
                    ]);
                }
                let lip = spec.generator().lipschitz();
                let product = self.f.dt() * lip;
                let contraction = product < 1.0;
                rows.push(vec![
                    "contraction".into(),
                    if contraction { "ok" } else { "violated" }.into(),
                    format!("dt * L = {product}"),
                ]);
                out.check("contraction", contraction, format!("dt * L = {product}"));
                let terminal = checked_terminal(spec, self.f, tol.terminal);
                let detail = match &terminal {
                    Ok(_) => "every leaf lies in the domain".to_string(),
                    Err(e) => e.to_string(),
                };
                rows.push(vec![
                    "terminal_in_domain".into(),
                    if terminal.is_ok() { "ok" } else { "violated" }.into(),
                    detail.clone(),
                ]);
                out.check("terminal_in_domain", terminal.is_ok(), detail);
                out.finding("nodes", self.f.node_count() as u64);
                self.table(out, &format!("{name}.csv"), &["check", "status", "detail"], rows)?;
            }
            TaskKind::SolveDirect => {
                let sol = self.solve_direct()?;
                let mut alt_opts = tol.rbsde_options();
                alt_opts.order = SweepOrder::MaxFirst;
                let alt = solve_rbsde_with(spec, self.f, &alt_opts)?;
                let order_diff = sol.y.max_abs_diff(&alt.y);
                let dom = max_domain_violation(&sol, spec);
                let minimality = check_minimality(&sol, spec, tol.push, tol.verify);
                let root = sol.root();
                let alt_root = alt.root();
                let rows = self.pair_rows(&[
                    &|i, j| root[(i, j)].to_string(),
                    &|i, j| alt_root[(i, j)].to_string(),
                    &|i, j| (root[(i, j)] - alt_root[(i, j)]).abs().to_string(),
                ]);
                self.table(out, &format!("{name}.csv"), &["i", "j", "y_root", "y_root_max_first", "order_diff"], rows)?;
                let mrows = minimality
                    .violations
                    .iter()
                    .map(|v| {
                        vec![
                            v.node.to_string(),
                            v.i.to_string(),
                            v.j.to_string(),
                            format!("{:?}", v.barrier).to_lowercase(),
                            v.push.to_string(),
                            v.gap.to_string(),
                        ]
                    })
                    .collect();
                self.table(
                    out,
                    &format!("{name}_minimality.csv"),
                    &["node", "i", "j", "barrier", "push", "gap"],
                    mrows,
                )?;
                out.check("domain", dom <= tol.verify, format!("max violation {dom:e}"));
                out.check(
                    "minimality",
                    minimality.is_ok(),
                    format!(
                        "{} of {} pushes off their barrier",
                        minimality.violations.len(),
                        minimality.pushes_checked
                    ),
                );
                out.finding("order_max_diff", num(order_diff));
                out.finding("order_disagreement", order_diff > tol.exact);
                out.finding("max_complementarity", num(max_complementarity(&sol)));
                out.finding("max_picard_iterations", sol.max_picard_iterations as u64);
                out.finding("max_projection_sweeps", sol.max_projection_sweeps as u64);
                match self.refinement() {
                    Ok(diffs) => {
                        let decreasing = diffs.windows(2).all(|w| w[1].1 < w[0].1);
                        out.finding(
                            "refinement",
                            diffs
                                .iter()
                                .map(|(n, d)| json!({"steps": n, "root_diff_to_double": num(*d)}))
                                .collect::<Vec<_>>(),
                        );
                        out.finding("refinement_decreasing", decreasing);
                    }
                    Err(why) => out.finding("refinement_skipped", why),
                }
            }
            TaskKind::Penalize { n_list, scheme } => {
                let direct = self.need_direct()?;
                let popts = PenaltyOptions {
                    scheme: *scheme,
                    picard: tol.rbsde_options().picard,
                    terminal_tol: tol.terminal,
                    ..PenaltyOptions::default()
                };
                let (rep, _) = penalization_report(spec, self.f, n_list, Some(&direct), &popts)?;
                let (m1, m2) = (spec.m1(), spec.m2());
                let mut header: Vec<String> = [
                    "n", "max_increase", "max_decrease", "nondecreasing", "nonincreasing",
                    "penalty_statistic", "penalty_bound", "penalty_ok", "min_y", "max_y",
                    "lower_bound", "upper_bound", "bounds_ok", "gap", "gap_ratio", "max_inner",
                ]
                .map(String::from)
                .to_vec();
                for i in 0..m1 {
                    for j in 0..m2 {
                        header.push(format!("y_root_{i}_{j}"));
                    }
                }
                let rows = rep
                    .rows
                    .iter()
                    .map(|r| {
                        let mut v = vec![
                            r.n.to_string(),
                            opt(r.max_increase),
                            opt(r.max_decrease),
                            r.nondecreasing.map_or(String::new(), |b| b.to_string()),
                            r.nonincreasing.map_or(String::new(), |b| b.to_string()),
                            r.penalty_statistic.to_string(),
                            rep.penalty_bound.to_string(),
                            r.penalty_ok.to_string(),
                            r.min_y.to_string(),
                            r.max_y.to_string(),
                            rep.lower_bound.to_string(),
                            rep.upper_bound.to_string(),
                            r.bounds_ok.to_string(),
                            opt(r.gap),
                            opt(r.gap_ratio),
                            r.max_inner.to_string(),
                        ];
                        v.extend(r.root.as_slice().iter().map(|x| x.to_string()));
                        v
                    })
                    .collect();
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                self.table(out, &format!("{name}.csv"), &header, rows)?;
                out.check("nondecreasing_in_n", rep.all_nondecreasing(), "Y^n grows with n at every node");
                out.check("penalty_bound", rep.all_penalty_ok(), format!("statistic <= {}", rep.penalty_bound));
                out.check(
                    "a_priori_bounds",
                    rep.all_bounds_ok(),
                    format!("within [{}, {}]", rep.lower_bound, rep.upper_bound),
                );
                out.check(
                    "gaps_strictly_decreasing",
                    rep.gaps_strictly_decreasing(),
                    format!("{:?}", rep.gaps()),
                );
                out.finding("nonincreasing_in_n", rep.all_nonincreasing());
                if let Some(e) = rep.extrapolated_last_gap() {
                    out.finding("extrapolated_last_gap", num(e));
                }
                if let Some(g) = rep.gaps().last() {
                    out.finding("last_gap", num(*g));
                }
            }
            TaskKind::DoublePenalize { n, m_list } => {
                let popts = PenaltyOptions {
                    picard: tol.rbsde_options().picard,
                    terminal_tol: tol.terminal,
                    ..PenaltyOptions::default()
                };
                let rows = double_penalization_report(spec, self.f, *n, m_list, &popts)?;
                let (m1, m2) = (spec.m1(), spec.m2());
                let mut header: Vec<String> = ["n", "m", "gap", "max_alpha", "max_beta", "max_inner"]
                    .map(String::from)
                    .to_vec();
                for i in 0..m1 {
                    for j in 0..m2 {
                        header.push(format!("y_root_{i}_{j}"));
                    }
                }
                let table = rows
                    .iter()
                    .map(|r| {
                        let mut v = vec![
                            r.n.to_string(),
                            r.m.to_string(),
                            r.gap.to_string(),
                            r.max_alpha.to_string(),
                            r.max_beta.to_string(),
                            r.max_inner.to_string(),
                        ];
                        v.extend(r.root.as_slice().iter().map(|x| x.to_string()));
                        v
                    })
                    .collect();
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                self.table(out, &format!("{name}.csv"), &header, table)?;
                let finite = rows.iter().all(|r| r.gap.is_finite());
                out.check("finite", finite, "every double-penalized solve is finite");
                if let Some(last) = rows.last() {
                    out.finding("last_gap", num(last.gap));
                }
            }
            TaskKind::Saddle {
                catalog_size,
                seed: explicit,
                exhaustive,
                perturb_root,
            } => {
                let mut y = self.need_direct()?.y;
                if *perturb_root != 0.0 {
                    y.set(0, 0, 0, y.get(0, 0, 0) + perturb_root);
                    out.finding("perturb_root", num(*perturb_root));
                }
                let opts = SaddleOptions {
                    catalog_size: *catalog_size,
                    seed: explicit.unwrap_or(seed),
                    tol: tol.verify,
                    trigger_tol: tol.trigger,
                    picard: tol.rbsde_options().picard,
                };
                let rep = verify_saddle(spec, self.f, &y, &opts)?;
                let rows = rep
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.strategy_id.clone(),
                            r.deviator.map_or("none".into(), |p| p.to_string()),
                            r.i.to_string(),
                            r.j.to_string(),
                            r.value.to_string(),
                            r.y_root.to_string(),
                            r.slack.to_string(),
                            r.ok.to_string(),
                        ]
                    })
                    .collect();
                self.table(
                    out,
                    &format!("{name}.csv"),
                    &["strategy_id", "deviator", "i", "j", "value", "y_root", "slack", "ok"],
                    rows,
                )?;
                for (file, s) in [(format!("{name}_a_star.txt"), &rep.a_star), (format!("{name}_b_star.txt"), &rep.b_star)] {
                    let mut buf = Vec::new();
                    s.write_csv(&mut buf)?;
                    report::write_bytes(&self.dir.join(&file), &buf)?;
                    out.files.push(file);
                }
                if !rep.violations.is_empty() {
                    let sub = format!("{name}_violations");
                    std::fs::create_dir_all(self.dir.join(&sub))
                        .map_err(|e| Error::Usage(format!("cannot create {sub}: {e}")))?;
                    for (row, s) in &rep.violations {
                        let r = &rep.rows[*row];
                        let file = format!("{sub}/row-{row}-{}-{}-{}.txt", r.strategy_id, r.i, r.j);
                        let mut buf = Vec::new();
                        s.write_csv(&mut buf)?;
                        report::write_bytes(&self.dir.join(&file), &buf)?;
                        out.files.push(file);
                    }
                }
                out.check(
                    "saddle_inequalities",
                    rep.is_ok(),
                    format!(
                        "{} violations over {} rows; worst slack {:e}",
                        rep.violations.len(),
                        rep.rows.len(),
                        rep.worst_slack()
                    ),
                );
                out.finding("catalog_player_one", rep.catalog_one as u64);
                out.finding("catalog_player_two", rep.catalog_two as u64);
                if *exhaustive {
                    let ex = exhaustive_saddle(spec, self.f, &y, tol.trigger, DEFAULT_ENUMERATION_CAP, &opts.picard)?;
                    let rows = self.pair_rows(&[
                        &|i, j| ex.y_root[(i, j)].to_string(),
                        &|i, j| ex.max_over_two[(i, j)].to_string(),
                        &|i, j| ex.min_over_one[(i, j)].to_string(),
                    ]);
                    self.table(
                        out,
                        &format!("{name}_exhaustive.csv"),
                        &["i", "j", "y_root", "max_over_player_two", "min_over_player_one"],
                        rows,
                    )?;
                    let err = ex.max_error();
                    out.check("exhaustive_saddle", err <= tol.exact, format!("max error {err:e}"));
                }
            }
            TaskKind::BruteForce => {
                let direct = self.need_direct()?;
                let cap = BruteForceCap::default();
                let picard = tol.rbsde_options().picard;
                let bf = brute_force_values_with(spec, self.f, &cap, &picard, LowerPush::Minimal)?;
                let frozen = brute_force_values_with(spec, self.f, &cap, &picard, LowerPush::Frozen(&direct.dl))?;
                let root = direct.root();
                let rows = self.pair_rows(&[
                    &|i, j| root[(i, j)].to_string(),
                    &|i, j| bf[(i, j)].to_string(),
                    &|i, j| (bf[(i, j)] - root[(i, j)]).abs().to_string(),
                    &|i, j| frozen[(i, j)].to_string(),
                ]);
                self.table(
                    out,
                    &format!("{name}.csv"),
                    &["i", "j", "y_root", "brute_force", "diff", "brute_force_frozen_push"],
                    rows,
                )?;
                let err = bf.max_abs_diff(&root);
                out.check("representation", err <= tol.exact, format!("max diff {err:e}"));
                out.finding("frozen_push_max_diff", num(frozen.max_abs_diff(&root)));
            }
            TaskKind::Export => {
                let direct = self.need_direct()?;
                let file = format!("{name}.csv");
                let w = report::create_file(&self.dir.join(&file))?;
                export_csv(&direct, self.f, w)?;
                out.files.push(file);
            }
        }
        Ok(())
    }
}

/// Runs every task of `s` into a new run directory under `s.output_dir`.
pub fn run(s: &Scenario) -> Result<RunOutcome, Error> {
    let started = Instant::now();
    let dir = create_run_dir(&s.output_dir)?;
    let mut records = Vec::new();
    let filtration = build_filtration(s);
    match &filtration {
        Ok(f) => {
            let mut cx = Ctx {
                s,
                f: f.as_ref(),
                dir: &dir,
                direct: None,
            };
            for task in &s.tasks {
                let seed = task_seed(s.seed, &task.name);
                let t0 = Instant::now();
                let mut out = Output::new();
                let mut record = TaskRecord {
                    name: task.name.clone(),
                    kind: task.kind.name().to_string(),
                    status: TaskStatus::Passed,
                    message: None,
                    config_error: false,
                    seed,
                    wall_seconds: 0.0,
                    files: Vec::new(),
                    checks: Vec::new(),
                    findings: BTreeMap::new(),
                };
                let blocked = if task.kind.needs_direct() {
                    cx.direct().err()
                } else {
                    None
                };
                if let Some((why, config)) = blocked {
                    record.status = TaskStatus::Skipped;
                    record.message = Some(format!(
                        "skipped: `{}` needs the direct solution, and solve_direct failed: {why}",
                        task.name
                    ));
                    record.config_error = config;
                } else {
                    match cx.run_task(task, seed, &mut out) {
                        Ok(()) => {
                            if out.checks.iter().any(|c| !c.passed) {
                                record.status = TaskStatus::Failed;
                                let failed: Vec<&str> = out
                                    .checks
                                    .iter()
                                    .filter(|c| !c.passed)
                                    .map(|c| c.name.as_str())
                                    .collect();
                                record.message = Some(format!("failed checks: {}", failed.join(", ")));
                            }
                        }
                        Err(e) => {
                            record.status = TaskStatus::Error;
                            record.config_error = is_config_error(&e);
                            record.message = Some(e.to_string());
                        }
                    }
                }
                record.wall_seconds = t0.elapsed().as_secs_f64();
                record.files = out.files;
                record.checks = out.checks;
                record.findings = out.findings;
                log::info!("task {} -> {:?}", record.name, record.status);
                records.push(record);
            }
        }
        Err(e) => {
            for task in &s.tasks {
                records.push(TaskRecord {
                    name: task.name.clone(),
                    kind: task.kind.name().to_string(),
                    status: TaskStatus::Error,
                    message: Some(format!("tree construction failed: {e}")),
                    config_error: is_config_error(e),
                    seed: task_seed(s.seed, &task.name),
                    wall_seconds: 0.0,
                    files: Vec::new(),
                    checks: Vec::new(),
                    findings: BTreeMap::new(),
                });
            }
        }
    }
    let exit_code = exit_code(&records);
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "tool": "obrbsde",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "scenario": {
            "name": s.name,
            "path": s.path.as_ref().map(|p| p.display().to_string()),
            "sha256": s.sha256,
        },
        "spec_sha256": hex::encode(Sha256::digest(serde_json::to_vec(&s.spec).expect("spec serializes"))),
        "seed": s.seed,
        "workers": rayon::current_num_threads(),
        "tree": s.tree,
        "tolerances": s.tolerances,
        "tasks": records,
        "exit_code": exit_code,
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    report::write_bytes(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
    )?;
    Ok(RunOutcome {
        run_dir: dir,
        exit_code,
        tasks: records,
    })
}

fn exit_code(records: &[TaskRecord]) -> i32 {
    let config = records
        .iter()
        .any(|r| matches!(r.status, TaskStatus::Error | TaskStatus::Skipped) && r.config_error);
    let failed = records.iter().any(|r| r.status != TaskStatus::Passed);
    if config {
        EXIT_CONFIG
    } else if failed {
        EXIT_INVARIANT
    } else {
        EXIT_OK
    }
}
