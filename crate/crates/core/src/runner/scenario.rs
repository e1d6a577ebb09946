//! Scenario files: TOML documents describing a game, a tree and a run plan.
//!
//! Parsing collects every problem it finds, each with a line and column,
//! before giving up.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml_edit::{ImDocument, Item, TableLike, Value};

use crate::oblique_rbsde::RbsdeOptions;
use crate::penalize::PenaltyScheme;
use crate::spec_model::{Clause, CostTables, GameSpec, GeneratorSpec, ModeMatrix, TerminalSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Path,
    Recombining,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TreeConfig {
    pub steps: usize,
    pub kind: TreeKind,
    pub node_cap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Stopping threshold of the oblique projection.
    pub projection: f64,
    /// Stopping threshold of the implicit-step Picard iteration.
    pub picard: f64,
    /// Allowed domain violation of terminal values.
    pub terminal: f64,
    /// Saddle, value and minimality checks.
    pub verify: f64,
    /// Saddle triggers.
    pub trigger: f64,
    /// Pushes below this are not checked for minimality.
    pub push: f64,
    /// Agreement of brute force, exhaustive saddle and projection orders.
    pub exact: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            projection: 1e-13,
            picard: 1e-12,
            terminal: 1e-12,
            verify: 1e-8,
            trigger: 1e-9,
            push: 1e-9,
            exact: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn rbsde_options(&self) -> RbsdeOptions {
        let mut o = RbsdeOptions {
            projection_tol: self.projection,
            terminal_tol: self.terminal,
            ..RbsdeOptions::default()
        };
        o.picard.tol = self.picard;
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Validate,
    SolveDirect,
    Penalize {
        n_list: Vec<f64>,
        scheme: PenaltyScheme,
    },
    DoublePenalize {
        n: f64,
        m_list: Vec<f64>,
    },
    Saddle {
        catalog_size: usize,
        seed: Option<u64>,
        exhaustive: bool,
        /// Fault injection: added to `Y(root, 0, 0)` before verification.
        perturb_root: f64,
    },
    BruteForce,
    Export,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Validate => "validate",
            TaskKind::SolveDirect => "solve_direct",
            TaskKind::Penalize { .. } => "penalize",
            TaskKind::DoublePenalize { .. } => "double_penalize",
            TaskKind::Saddle { .. } => "saddle",
            TaskKind::BruteForce => "brute_force",
            TaskKind::Export => "export",
        }
    }

    pub const NAMES: [&'static str; 7] = [
        "validate",
        "solve_direct",
        "penalize",
        "double_penalize",
        "saddle",
        "brute_force",
        "export",
    ];

    /// The task with every option at its default.
    pub fn default_for(name: &str) -> Option<Self> {
        Some(match name {
            "validate" => TaskKind::Validate,
            "solve_direct" => TaskKind::SolveDirect,
            "penalize" => TaskKind::Penalize {
                n_list: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
                scheme: PenaltyScheme::Monotone,
            },
            "double_penalize" => TaskKind::DoublePenalize {
                n: 16.0,
                m_list: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            },
            "saddle" => TaskKind::Saddle {
                catalog_size: 200,
                seed: None,
                exhaustive: false,
                perturb_root: 0.0,
            },
            "brute_force" => TaskKind::BruteForce,
            "export" => TaskKind::Export,
            _ => return None,
        })
    }

    /// Whether the task needs the direct reflected solution.
    pub fn needs_direct(&self) -> bool {
        matches!(
            self,
            TaskKind::Penalize { .. }
                | TaskKind::Saddle { .. }
                | TaskKind::BruteForce
                | TaskKind::Export
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Task {
    /// Unique within the scenario; names the report files.
    pub name: String,
    #[serde(flatten)]
    pub kind: TaskKind,
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub name: String,
    #[serde(skip)]
    pub path: Option<PathBuf>,
    pub sha256: String,
    pub spec: GameSpec,
    pub tree: TreeConfig,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub output_dir: PathBuf,
    pub tasks: Vec<Task>,
}

/// One problem found in a scenario file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Every problem found in a scenario file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub source: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} problem(s) in scenario {}:",
            self.diagnostics.len(),
            self.source
        )?;
        for d in &self.diagnostics {
            writeln!(f, "  {}:{}:{}: {}", self.source, d.line, d.column, d.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        source: source.clone(),
        diagnostics: vec![Diagnostic {
            line: 0,
            column: 0,
            message: format!("cannot read file: {e}"),
        }],
    })?;
    let mut s = parse_scenario_str(&text, &source)?;
    s.path = Some(path.to_path_buf());
    Ok(s)
}

/// Parses scenario text; `source` names it in diagnostics.
pub fn parse_scenario_str(text: &str, source: &str) -> Result<Scenario, ScenarioError> {
    let doc = ImDocument::parse(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ScenarioError {
            source: source.to_string(),
            diagnostics: vec![Diagnostic {
                line,
                column,
                message: format!("malformed TOML: {}", e.message()),
            }],
        }
    })?;
    let mut cx = Cx {
        text,
        diags: Vec::new(),
    };
    let scenario = cx.scenario(doc.as_item());
    if !cx.diags.is_empty() {
        cx.diags.sort_by_key(|d| (d.line, d.column));
        return Err(ScenarioError {
            source: source.to_string(),
            diagnostics: cx.diags,
        });
    }
    let mut scenario = scenario.expect("no diagnostics means a complete scenario");
    scenario.sha256 = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(scenario)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

struct Cx<'a> {
    text: &'a str,
    diags: Vec<Diagnostic>,
}

type Span = Option<Range<usize>>;

impl Cx<'_> {
    fn err(&mut self, span: Span, message: impl Into<String>) {
        let (line, column) = span.map_or((1, 1), |s| line_col(self.text, s.start));
        self.diags.push(Diagnostic {
            line,
            column,
            message: message.into(),
        });
    }

    fn table<'t>(&mut self, item: &'t Item, path: &str, allowed: &[&str]) -> Option<&'t dyn TableLike> {
        let Some(t) = item.as_table_like() else {
            self.err(item.span(), format!("`{path}` must be a table, found {}", item.type_name()));
            return None;
        };
        for (k, _) in t.iter() {
            if !allowed.contains(&k) {
                let span = t.key(k).and_then(|key| key.span());
                let full = if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
                self.err(
                    span,
                    format!("unknown field `{full}` (expected one of: {})", allowed.join(", ")),
                );
            }
        }
        Some(t)
    }

    fn sub<'t>(&mut self, t: &'t dyn TableLike, span: Span, key: &str, path: &str) -> Option<&'t Item> {
        match t.get(key) {
            Some(i) if !i.is_none() => Some(i),
            _ => {
                let full = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
                self.err(span, format!("missing required field `{full}`"));
                None
            }
        }
    }

    fn num(&mut self, item: &Item, path: &str) -> Option<f64> {
        match item.as_value() {
            Some(Value::Float(f)) => Some(*f.value()),
            Some(Value::Integer(i)) => Some(*i.value() as f64),
            _ => {
                self.err(item.span(), format!("`{path}` must be a number, found {}", item.type_name()));
                None
            }
        }
    }

    fn value_num(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f.value()),
            Value::Integer(i) => Some(*i.value() as f64),
            _ => {
                self.err(v.span(), format!("`{path}` must be a number, found {}", v.type_name()));
                None
            }
        }
    }

    fn uint(&mut self, item: &Item, path: &str) -> Option<u64> {
        match item.as_value() {
            Some(Value::Integer(i)) if *i.value() >= 0 => Some(*i.value() as u64),
            _ => {
                self.err(
                    item.span(),
                    format!("`{path}` must be a non-negative integer, found {}", item.type_name()),
                );
                None
            }
        }
    }

    fn string<'t>(&mut self, item: &'t Item, path: &str) -> Option<&'t str> {
        let s = item.as_str();
        if s.is_none() {
            self.err(item.span(), format!("`{path}` must be a string, found {}", item.type_name()));
        }
        s
    }

    fn boolean(&mut self, item: &Item, path: &str) -> Option<bool> {
        let b = item.as_bool();
        if b.is_none() {
            self.err(item.span(), format!("`{path}` must be a boolean, found {}", item.type_name()));
        }
        b
    }

    fn num_list(&mut self, item: &Item, path: &str) -> Option<Vec<f64>> {
        let Some(arr) = item.as_array() else {
            self.err(item.span(), format!("`{path}` must be an array of numbers"));
            return None;
        };
        let mut out = Vec::new();
        let mut ok = true;
        for v in arr.iter() {
            match self.value_num(v, path) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    /// An `m1 x m2` matrix written as an array of rows.
    fn matrix(&mut self, item: &Item, path: &str, shape: Option<(usize, usize)>) -> Option<ModeMatrix> {
        let rows = match item.as_array() {
            Some(a) => a,
            None => {
                self.err(item.span(), format!("`{path}` must be an array of rows"));
                return None;
            }
        };
        self.matrix_value(rows, item.span(), path, shape)
    }

    fn matrix_value(
        &mut self,
        rows: &toml_edit::Array,
        span: Span,
        path: &str,
        shape: Option<(usize, usize)>,
    ) -> Option<ModeMatrix> {
        let mut data = Vec::new();
        let mut width = None;
        let mut ok = true;
        for row in rows.iter() {
            let Some(r) = row.as_array() else {
                self.err(row.span(), format!("`{path}` rows must be arrays of numbers"));
                ok = false;
                continue;
            };
            if let Some(w) = width {
                if w != r.len() {
                    self.err(row.span(), format!("`{path}` rows have different lengths"));
                    ok = false;
                }
            }
            width = Some(r.len());
            for v in r.iter() {
                match self.value_num(v, path) {
                    Some(x) => data.push(x),
                    None => ok = false,
                }
            }
        }
        if !ok {
            return None;
        }
        let m1 = rows.len();
        let m2 = width.unwrap_or(0);
        if let Some((e1, e2)) = shape {
            if (m1, m2) != (e1, e2) {
                self.err(span, format!("`{path}` is {m1}x{m2}, expected {e1}x{e2}"));
                return None;
            }
        }
        match ModeMatrix::from_row_major(m1, m2, data) {
            Ok(m) => Some(m),
            Err(e) => {
                self.err(span, format!("`{path}`: {e}"));
                None
            }
        }
    }

    fn scenario(&mut self, root: &Item) -> Option<Scenario> {
        let top = self.table(
            root,
            "",
            &["name", "seed", "output_dir", "game", "tree", "tolerances", "task"],
        )?;
        let top_span: Span = Some(0..0);
        let name = match top.get("name") {
            Some(i) => self.string(i, "name").map(str::to_string),
            None => Some("scenario".to_string()),
        };
        let seed = match top.get("seed") {
            Some(i) => self.uint(i, "seed"),
            None => Some(0),
        };
        let output_dir = match top.get("output_dir") {
            Some(i) => self.string(i, "output_dir").map(PathBuf::from),
            None => Some(PathBuf::from("runs")),
        };
        let spec = self
            .sub(top, top_span.clone(), "game", "")
            .and_then(|g| self.game(g));
        let tree = self
            .sub(top, top_span.clone(), "tree", "")
            .and_then(|t| self.tree(t, spec.as_ref()));
        let tolerances = match top.get("tolerances") {
            Some(t) => self.tolerances(t),
            None => Some(Tolerances::default()),
        };
        let tasks = match top.get("task") {
            Some(t) => self.tasks(t),
            None => {
                self.err(top_span, "missing the run plan: add at least one [[task]]");
                None
            }
        };
        Some(Scenario {
            name: name?,
            path: None,
            sha256: String::new(),
            spec: spec?,
            tree: tree?,
            seed: seed?,
            tolerances: tolerances?,
            output_dir: output_dir?,
            tasks: tasks?,
        })
    }

    fn game(&mut self, item: &Item) -> Option<GameSpec> {
        let t = self.table(
            item,
            "game",
            &["modes", "horizon", "dimension", "k", "l", "generator", "terminal"],
        )?;
        let span = item.span();
        let modes_item = self.sub(t, span.clone(), "modes", "game");
        let modes = modes_item.and_then(|i| {
            let v = self.num_list(i, "game.modes")?;
            match v[..] {
                [a, b] if a >= 1.0 && b >= 1.0 && a.fract() == 0.0 && b.fract() == 0.0 => {
                    Some((a as usize, b as usize))
                }
                _ => {
                    self.err(i.span(), "`game.modes` must be two positive integers [m1, m2]");
                    None
                }
            }
        });
        let horizon = match t.get("horizon") {
            Some(i) => self.num(i, "game.horizon"),
            None => Some(1.0),
        };
        let dimension = match t.get("dimension") {
            Some(i) => self.uint(i, "game.dimension").map(|d| d as usize),
            None => Some(1),
        };
        let k_item = self.sub(t, span.clone(), "k", "game");
        let l_item = self.sub(t, span.clone(), "l", "game");
        let k = k_item.and_then(|i| self.matrix(i, "game.k", modes.map(|(m1, _)| (m1, m1))));
        let l = l_item.and_then(|i| self.matrix(i, "game.l", modes.map(|(_, m2)| (m2, m2))));
        let generator = self
            .sub(t, span.clone(), "generator", "game")
            .and_then(|g| self.generator(g, modes, dimension));
        let terminal = self
            .sub(t, span.clone(), "terminal", "game")
            .and_then(|g| self.terminal(g, modes));
        let (m1, m2) = modes?;
        let costs = CostTables::new(m1, m2, k?.into_vec(), l?.into_vec()).ok()?;
        let (generator, terminal, horizon, dimension) = (generator?, terminal?, horizon?, dimension?);
        let report = match GameSpec::validate(&costs, &generator, &terminal, horizon, dimension) {
            Ok(r) => r,
            Err(e) => {
                self.err(k_item.and_then(Item::span), format!("cost validation failed: {e}"));
                return None;
            }
        };
        for v in &report.violations {
            let at = match v.clause {
                Clause::NonFinite
                | Clause::ZeroDiagonal
                | Clause::Positivity
                | Clause::StrictTriangle
                | Clause::ZeroCostLoop => {
                    if v.message.starts_with("l(") {
                        l_item.and_then(Item::span)
                    } else {
                        k_item.and_then(Item::span)
                    }
                }
                Clause::Generator => t.get("generator").and_then(Item::span),
                Clause::Terminal => t.get("terminal").and_then(Item::span),
                Clause::Horizon => t
                    .get("horizon")
                    .or_else(|| t.get("dimension"))
                    .and_then(Item::span)
                    .or(span.clone()),
            };
            self.err(at, format!("{} violated: {}", v.clause.name(), v.message));
        }
        if !report.is_ok() {
            return None;
        }
        GameSpec::new(costs, generator, terminal, horizon, dimension).ok()
    }

    fn generator(
        &mut self,
        item: &Item,
        modes: Option<(usize, usize)>,
        dimension: Option<usize>,
    ) -> Option<GeneratorSpec> {
        let Some(t) = item.as_table_like() else {
            self.err(item.span(), "`game.generator` must be a table");
            return None;
        };
        let family = self
            .sub(t, item.span(), "family", "game.generator")
            .and_then(|f| self.string(f, "game.generator.family"))?;
        match family {
            "zero" => {
                self.table(item, "game.generator", &["family"])?;
                Some(GeneratorSpec::Zero)
            }
            "mode_constant" => {
                self.table(item, "game.generator", &["family", "c"])?;
                let c = self
                    .sub(t, item.span(), "c", "game.generator")
                    .and_then(|c| self.matrix(c, "game.generator.c", modes))?;
                Some(GeneratorSpec::ModeConstant { c })
            }
            "saturated_affine" => {
                self.table(item, "game.generator", &["family", "a", "b", "c", "saturation"])?;
                let a = self
                    .sub(t, item.span(), "a", "game.generator")
                    .and_then(|a| self.num(a, "game.generator.a"));
                let b = self
                    .sub(t, item.span(), "b", "game.generator")
                    .and_then(|b| self.num_list(b, "game.generator.b"));
                let c = self
                    .sub(t, item.span(), "c", "game.generator")
                    .and_then(|c| self.matrix(c, "game.generator.c", modes));
                let saturation = self
                    .sub(t, item.span(), "saturation", "game.generator")
                    .and_then(|s| self.num(s, "game.generator.saturation"));
                if let (Some(b), Some(d)) = (&b, dimension) {
                    if b.len() != d {
                        self.err(
                            t.get("b").and_then(Item::span),
                            format!("`game.generator.b` has {} entries, expected dimension {d}", b.len()),
                        );
                        return None;
                    }
                }
                Some(GeneratorSpec::SaturatedAffine {
                    a: a?,
                    b: b?,
                    c: c?,
                    saturation: saturation?,
                })
            }
            other => {
                self.err(
                    t.get("family").and_then(Item::span),
                    format!("unknown generator family `{other}` (expected zero, mode_constant or saturated_affine)"),
                );
                None
            }
        }
    }

    fn terminal(&mut self, item: &Item, modes: Option<(usize, usize)>) -> Option<TerminalSpec> {
        let Some(t) = item.as_table_like() else {
            self.err(item.span(), "`game.terminal` must be a table");
            return None;
        };
        let family = self
            .sub(t, item.span(), "family", "game.terminal")
            .and_then(|f| self.string(f, "game.terminal.family"))?;
        match family {
            "constant" => {
                self.table(item, "game.terminal", &["family", "value"])?;
                let value = self
                    .sub(t, item.span(), "value", "game.terminal")
                    .and_then(|v| self.matrix(v, "game.terminal.value", modes))?;
                Some(TerminalSpec::Constant { value })
            }
            "affine" => {
                self.table(item, "game.terminal", &["family", "alpha", "beta"])?;
                let alpha = self
                    .sub(t, item.span(), "alpha", "game.terminal")
                    .and_then(|v| self.matrix(v, "game.terminal.alpha", modes));
                let beta = self
                    .sub(t, item.span(), "beta", "game.terminal")
                    .and_then(|v| self.matrix(v, "game.terminal.beta", modes));
                Some(TerminalSpec::Affine {
                    alpha: alpha?,
                    beta: beta?,
                })
            }
            "leaf_table" => {
                self.table(item, "game.terminal", &["family", "values"])?;
                let values_item = self.sub(t, item.span(), "values", "game.terminal")?;
                let Some(arr) = values_item.as_array() else {
                    self.err(values_item.span(), "`game.terminal.values` must be an array of matrices");
                    return None;
                };
                let mut values = Vec::new();
                let mut ok = true;
                for (n, v) in arr.iter().enumerate() {
                    let path = format!("game.terminal.values[{n}]");
                    match v.as_array() {
                        Some(rows) => match self.matrix_value(rows, v.span(), &path, modes) {
                            Some(m) => values.push(m),
                            None => ok = false,
                        },
                        None => {
                            self.err(v.span(), format!("`{path}` must be a matrix"));
                            ok = false;
                        }
                    }
                }
                ok.then_some(TerminalSpec::LeafTable { values })
            }
            other => {
                self.err(
                    t.get("family").and_then(Item::span),
                    format!("unknown terminal family `{other}` (expected constant, affine or leaf_table)"),
                );
                None
            }
        }
    }

    fn tree(&mut self, item: &Item, spec: Option<&GameSpec>) -> Option<TreeConfig> {
        let t = self.table(item, "tree", &["steps", "kind", "node_cap"])?;
        let steps = self
            .sub(t, item.span(), "steps", "tree")
            .and_then(|s| self.uint(s, "tree.steps"));
        if steps == Some(0) {
            self.err(t.get("steps").and_then(Item::span), "`tree.steps` must be at least 1");
        }
        let kind = match t.get("kind") {
            None => Some(TreeKind::Path),
            Some(k) => match self.string(k, "tree.kind") {
                Some("path") => Some(TreeKind::Path),
                Some("recombining") => Some(TreeKind::Recombining),
                Some(other) => {
                    self.err(k.span(), format!("unknown tree kind `{other}` (expected path or recombining)"));
                    None
                }
                None => None,
            },
        };
        if let (Some(TreeKind::Recombining), Some(s)) = (kind, spec) {
            if !s.is_markovian() {
                self.err(
                    t.get("kind").and_then(Item::span),
                    "a leaf-table terminal is path dependent and needs `tree.kind = \"path\"`",
                );
            }
        }
        let node_cap = match t.get("node_cap") {
            None => Some(crate::lattice::DEFAULT_NODE_CAP as u64),
            Some(c) => self.uint(c, "tree.node_cap"),
        };
        Some(TreeConfig {
            steps: steps.filter(|&s| s > 0)? as usize,
            kind: kind?,
            node_cap: node_cap? as usize,
        })
    }

    fn tolerances(&mut self, item: &Item) -> Option<Tolerances> {
        const KEYS: [&str; 7] = ["projection", "picard", "terminal", "verify", "trigger", "push", "exact"];
        let t = self.table(item, "tolerances", &KEYS)?;
        let mut tol = Tolerances::default();
        let mut ok = true;
        for key in KEYS {
            let Some(i) = t.get(key) else { continue };
            let path = format!("tolerances.{key}");
            match self.num(i, &path) {
                Some(v) if v > 0.0 && v.is_finite() => {
                    let slot = match key {
                        "projection" => &mut tol.projection,
                        "picard" => &mut tol.picard,
                        "terminal" => &mut tol.terminal,
                        "verify" => &mut tol.verify,
                        "trigger" => &mut tol.trigger,
                        "push" => &mut tol.push,
                        _ => &mut tol.exact,
                    };
                    *slot = v;
                }
                Some(_) => {
                    self.err(i.span(), format!("`{path}` must be positive and finite"));
                    ok = false;
                }
                None => ok = false,
            }
        }
        ok.then_some(tol)
    }

    fn tasks(&mut self, item: &Item) -> Option<Vec<Task>> {
        let Some(arr) = item.as_array_of_tables() else {
            self.err(item.span(), "`task` must be an array of tables ([[task]])");
            return None;
        };
        let mut out = Vec::new();
        let mut ok = true;
        for table in arr.iter() {
            let t: &dyn TableLike = table;
            let kind_name = match t.get("kind") {
                Some(k) => self.string(k, "task.kind"),
                None => {
                    self.err(table.span(), "missing required field `task.kind`");
                    None
                }
            };
            let Some(kind_name) = kind_name else {
                ok = false;
                continue;
            };
            let Some(default) = TaskKind::default_for(kind_name) else {
                self.err(
                    t.get("kind").and_then(Item::span),
                    format!("unknown task kind `{kind_name}` (expected one of: {})", TaskKind::NAMES.join(", ")),
                );
                ok = false;
                continue;
            };
            match self.task(t, default) {
                Some(task) => {
                    if out.iter().any(|o: &Task| o.name == task.name) {
                        self.err(
                            t.get("name").or_else(|| t.get("kind")).and_then(Item::span),
                            format!("duplicate task name `{}`; give one of them a `name`", task.name),
                        );
                        ok = false;
                    }
                    out.push(task);
                }
                None => ok = false,
            }
        }
        if out.is_empty() && ok {
            self.err(item.span(), "the run plan is empty");
            return None;
        }
        ok.then_some(out)
    }

    fn task(&mut self, t: &dyn TableLike, default: TaskKind) -> Option<Task> {
        let allowed: &[&str] = match default {
            TaskKind::Penalize { .. } => &["kind", "name", "n_list", "scheme"],
            TaskKind::DoublePenalize { .. } => &["kind", "name", "n", "m_list"],
            TaskKind::Saddle { .. } => &["kind", "name", "catalog_size", "seed", "exhaustive", "perturb_root"],
            _ => &["kind", "name"],
        };
        let path = format!("task.{}", default.name());
        for (k, _) in t.iter() {
            if !allowed.contains(&k) {
                self.err(
                    t.key(k).and_then(|key| key.span()),
                    format!("unknown field `{k}` in {path} (expected one of: {})", allowed.join(", ")),
                );
            }
        }
        let name = match t.get("name") {
            Some(n) => self.string(n, "task.name").map(str::to_string),
            None => Some(default.name().to_string()),
        };
        let pos_list = |cx: &mut Self, key: &str, dflt: Vec<f64>| -> Option<Vec<f64>> {
            let Some(i) = t.get(key) else { return Some(dflt) };
            let v = cx.num_list(i, &format!("{path}.{key}"))?;
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                cx.err(i.span(), format!("`{path}.{key}` must be a non-empty list of positive numbers"));
                return None;
            }
            Some(v)
        };
        let kind = match default {
            TaskKind::Penalize { n_list, scheme } => {
                let n_list = pos_list(self, "n_list", n_list);
                let scheme = match t.get("scheme") {
                    None => Some(scheme),
                    Some(s) => match self.string(s, "task.scheme") {
                        Some("monotone") => Some(PenaltyScheme::Monotone),
                        Some("picard") => Some(PenaltyScheme::Picard),
                        Some(other) => {
                            self.err(s.span(), format!("unknown penalty scheme `{other}` (expected monotone or picard)"));
                            None
                        }
                        None => None,
                    },
                };
                TaskKind::Penalize {
                    n_list: n_list?,
                    scheme: scheme?,
                }
            }
            TaskKind::DoublePenalize { n, m_list } => {
                let n = match t.get("n") {
                    None => Some(n),
                    Some(i) => match self.num(i, &format!("{path}.n")) {
                        Some(v) if v > 0.0 && v.is_finite() => Some(v),
                        Some(_) => {
                            self.err(i.span(), format!("`{path}.n` must be positive"));
                            None
                        }
                        None => None,
                    },
                };
                let m_list = pos_list(self, "m_list", m_list);
                TaskKind::DoublePenalize {
                    n: n?,
                    m_list: m_list?,
                }
            }
            TaskKind::Saddle {
                catalog_size,
                exhaustive,
                perturb_root,
                ..
            } => {
                let catalog_size = match t.get("catalog_size") {
                    None => Some(catalog_size),
                    Some(i) => self.uint(i, &format!("{path}.catalog_size")).map(|v| v as usize),
                };
                let seed = match t.get("seed") {
                    None => Some(None),
                    Some(i) => self.uint(i, &format!("{path}.seed")).map(Some),
                };
                let exhaustive = match t.get("exhaustive") {
                    None => Some(exhaustive),
                    Some(i) => self.boolean(i, &format!("{path}.exhaustive")),
                };
                let perturb_root = match t.get("perturb_root") {
                    None => Some(perturb_root),
                    Some(i) => self.num(i, &format!("{path}.perturb_root")),
                };
                TaskKind::Saddle {
                    catalog_size: catalog_size?,
                    seed: seed?,
                    exhaustive: exhaustive?,
                    perturb_root: perturb_root?,
                }
            }
            other => other,
        };
        Some(Task { name: name?, kind })
    }
}
