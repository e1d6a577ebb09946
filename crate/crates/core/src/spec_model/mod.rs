//! Game specification: mode grids, switching costs, generators, terminal
//! data, hypothesis validation and the geometry of the constraint domain.
//!
//! Mode indices are zero-based throughout: Player I owns modes `0..m1`,
//! Player II owns `0..m2`. The closed domain is the set of matrices `y` with
//! `y[i][j] <= y[i'][j] + k(i, i')` and `y[i][j] >= y[i][j'] - l(j, j')`.

mod loops;
mod projection;
pub mod sampling;

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::error::{Error, Result};

pub use loops::{
    check_loop_costs, check_loop_costs_with_cap, enumerate_primary_loops,
    enumerate_primary_loops_with_cap, PrimaryLoop, DEFAULT_LOOP_CAP, LOOP_ZERO_TOL,
};
pub use projection::{
    in_qbar, lower_barrier, project_oblique, project_oblique_with, project_upper, qbar_violation,
    upper_barrier, Projection, SweepOrder,
};

/// One scalar per mode pair, stored row-major (`i` major, `j` minor).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeMatrix {
    m1: usize,
    m2: usize,
    data: Vec<f64>,
}

impl ModeMatrix {
    pub fn zeros(m1: usize, m2: usize) -> Self {
        Self::filled(m1, m2, 0.0)
    }

    pub fn filled(m1: usize, m2: usize, value: f64) -> Self {
        Self {
            m1,
            m2,
            data: vec![value; m1 * m2],
        }
    }

    pub fn from_row_major(m1: usize, m2: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m1 * m2 {
            return Err(Error::Shape(format!(
                "expected {} entries for a {m1}x{m2} mode matrix, got {}",
                m1 * m2,
                data.len()
            )));
        }
        Ok(Self { m1, m2, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m1 = rows.len();
        let m2 = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m2) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_row_major(m1, m2, rows.concat())
    }

    pub fn from_fn(m1: usize, m2: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(m1 * m2);
        for i in 0..m1 {
            for j in 0..m2 {
                data.push(f(i, j));
            }
        }
        Self { m1, m2, data }
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Mode pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let m2 = self.m2;
        (0..self.m1 * m2).map(move |s| (s / m2, s % m2))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ModeMatrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ModeMatrix {
        ModeMatrix {
            m1: self.m1,
            m2: self.m2,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for ModeMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.m1 && j < self.m2);
        &self.data[i * self.m2 + j]
    }
}

impl IndexMut<(usize, usize)> for ModeMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.m1 && j < self.m2);
        &mut self.data[i * self.m2 + j]
    }
}

impl fmt::Display for ModeMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.m1 {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.m2 {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Player {
    /// Minimizer; pays `k` on each switch.
    One,
    /// Maximizer; pays `l` on each switch.
    Two,
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Player::One => write!(f, "I"),
            Player::Two => write!(f, "II"),
        }
    }
}

/// Switching cost tables: `k` is `m1 x m1`, `l` is `m2 x m2`, both row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostTables {
    m1: usize,
    m2: usize,
    k: Vec<f64>,
    l: Vec<f64>,
}

impl CostTables {
    /// Checks shapes only; hypothesis checks live in [`validate_cost_matrices`].
    pub fn new(m1: usize, m2: usize, k: Vec<f64>, l: Vec<f64>) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::Shape("mode counts must be at least 1".into()));
        }
        if k.len() != m1 * m1 {
            return Err(Error::Shape(format!(
                "k must have {} entries ({m1}x{m1}), got {}",
                m1 * m1,
                k.len()
            )));
        }
        if l.len() != m2 * m2 {
            return Err(Error::Shape(format!(
                "l must have {} entries ({m2}x{m2}), got {}",
                m2 * m2,
                l.len()
            )));
        }
        Ok(Self { m1, m2, k, l })
    }

    /// Constant off-diagonal costs.
    pub fn uniform(m1: usize, m2: usize, k_off: f64, l_off: f64) -> Self {
        let table = |m: usize, c: f64| {
            (0..m * m)
                .map(|s| if s / m == s % m { 0.0 } else { c })
                .collect::<Vec<_>>()
        };
        Self {
            m1,
            m2,
            k: table(m1, k_off),
            l: table(m2, l_off),
        }
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn k(&self, i: usize, i2: usize) -> f64 {
        self.k[i * self.m1 + i2]
    }

    pub fn l(&self, j: usize, j2: usize) -> f64 {
        self.l[j * self.m2 + j2]
    }

    pub fn k_table(&self) -> &[f64] {
        &self.k
    }

    pub fn l_table(&self) -> &[f64] {
        &self.l
    }

    pub fn cost(&self, player: Player, from: usize, to: usize) -> f64 {
        match player {
            Player::One => self.k(from, to),
            Player::Two => self.l(from, to),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Clause {
    NonFinite,
    ZeroDiagonal,
    Positivity,
    StrictTriangle,
    ZeroCostLoop,
    Generator,
    Terminal,
    Horizon,
}

impl Clause {
    pub fn name(&self) -> &'static str {
        match self {
            Clause::NonFinite => "finite costs",
            Clause::ZeroDiagonal => "zero diagonal",
            Clause::Positivity => "cost positivity",
            Clause::StrictTriangle => "strict triangle inequality",
            Clause::ZeroCostLoop => "no zero-cost loop",
            Clause::Generator => "generator parameters",
            Clause::Terminal => "terminal parameters",
            Clause::Horizon => "horizon and dimension",
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub clause: Clause,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, clause: Clause, message: impl Into<String>) {
        self.violations.push(Violation {
            clause,
            message: message.into(),
        });
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    pub fn has(&self, clause: Clause) -> bool {
        self.violations.iter().any(|v| v.clause == clause)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "  [{}] {}", v.clause, v.message)?;
        }
        Ok(())
    }
}

/// Checks zero diagonals, positivity and strict triangle inequalities of both tables.
pub fn validate_cost_matrices(costs: &CostTables) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (player, name, m) in [(Player::One, "k", costs.m1), (Player::Two, "l", costs.m2)] {
        let c = |a: usize, b: usize| costs.cost(player, a, b);
        for a in 0..m {
            for b in 0..m {
                if !c(a, b).is_finite() {
                    report.push(Clause::NonFinite, format!("{name}({a},{b}) = {}", c(a, b)));
                }
            }
        }
        if report.has(Clause::NonFinite) {
            continue;
        }
        for a in 0..m {
            if c(a, a) != 0.0 {
                report.push(Clause::ZeroDiagonal, format!("{name}({a},{a}) = {} != 0", c(a, a)));
            }
            for b in (0..m).filter(|&b| b != a) {
                if c(a, b) <= 0.0 {
                    report.push(Clause::Positivity, format!("{name}({a},{b}) = {} is not > 0", c(a, b)));
                }
            }
        }
        for a in 0..m {
            for b in (0..m).filter(|&b| b != a) {
                for e in (0..m).filter(|&e| e != b) {
                    if c(a, b) + c(b, e) <= c(a, e) {
                        report.push(
                            Clause::StrictTriangle,
                            format!(
                                "{name}({a},{b}) + {name}({b},{e}) = {} is not > {name}({a},{e}) = {}",
                                c(a, b) + c(b, e),
                                c(a, e)
                            ),
                        );
                    }
                }
            }
        }
    }
    report
}

fn sat(x: f64, m: f64) -> f64 {
    x.clamp(-m, m)
}

/// Generator families. All are Markovian in the sense that they depend only on
/// `(t, y, z, i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Zero,
    /// `psi = c[i][j]`.
    ModeConstant { c: ModeMatrix },
    /// `psi = a*sat(y) + sum_p b[p]*sat(z_p) + c[i][j]` with `sat` clamping to `[-saturation, saturation]`.
    SaturatedAffine {
        a: f64,
        b: Vec<f64>,
        c: ModeMatrix,
        saturation: f64,
    },
}

impl GeneratorSpec {
    pub fn eval(&self, _t: f64, y: f64, z: &[f64], i: usize, j: usize) -> f64 {
        match self {
            GeneratorSpec::Zero => 0.0,
            GeneratorSpec::ModeConstant { c } => c[(i, j)],
            GeneratorSpec::SaturatedAffine {
                a,
                b,
                c,
                saturation,
            } => {
                let zt: f64 = b
                    .iter()
                    .zip(z)
                    .map(|(bp, zp)| bp * sat(*zp, *saturation))
                    .sum();
                a * sat(y, *saturation) + zt + c[(i, j)]
            }
        }
    }

    /// Smallest `C` with `|psi(y,z) - psi(y',z')| <= C (|y-y'| + |z-z'|)`, Euclidean `|z|`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            GeneratorSpec::Zero | GeneratorSpec::ModeConstant { .. } => 0.0,
            GeneratorSpec::SaturatedAffine { a, b, .. } => {
                let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                a.abs().max(bn)
            }
        }
    }

    /// Lipschitz constant in `y` alone; this is what governs the implicit step.
    pub fn lipschitz_y(&self) -> f64 {
        match self {
            GeneratorSpec::SaturatedAffine { a, .. } => a.abs(),
            _ => 0.0,
        }
    }

    /// Exact supremum of `|psi|` over all arguments.
    pub fn sup_norm(&self) -> f64 {
        match self {
            GeneratorSpec::Zero => 0.0,
            GeneratorSpec::ModeConstant { c } => c.max_abs(),
            GeneratorSpec::SaturatedAffine {
                a,
                b,
                c,
                saturation,
            } => {
                let slope = a.abs() + b.iter().map(|v| v.abs()).sum::<f64>();
                c.as_slice()
                    .iter()
                    .fold(0.0_f64, |acc, cij| acc.max(cij.abs() + slope * saturation))
            }
        }
    }

    /// True when `psi` does not depend on `(y, z)`.
    pub fn is_state_independent(&self) -> bool {
        match self {
            GeneratorSpec::SaturatedAffine { a, b, .. } => {
                *a == 0.0 && b.iter().all(|v| *v == 0.0)
            }
            _ => true,
        }
    }

    fn validate(&self, m1: usize, m2: usize, d: usize, report: &mut ValidationReport) {
        let check_c = |c: &ModeMatrix, report: &mut ValidationReport| {
            if c.shape() != (m1, m2) {
                report.push(
                    Clause::Generator,
                    format!("c has shape {:?}, expected ({m1}, {m2})", c.shape()),
                );
            } else if !c.is_finite() {
                report.push(Clause::Generator, "c has non-finite entries");
            }
        };
        match self {
            GeneratorSpec::Zero => {}
            GeneratorSpec::ModeConstant { c } => check_c(c, report),
            GeneratorSpec::SaturatedAffine {
                a,
                b,
                c,
                saturation,
            } => {
                check_c(c, report);
                if b.len() != d {
                    report.push(
                        Clause::Generator,
                        format!("b has {} components, expected dimension {d}", b.len()),
                    );
                }
                if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
                    report.push(Clause::Generator, "a and b must be finite");
                }
                if !(saturation.is_finite() && *saturation > 0.0) {
                    report.push(
                        Clause::Generator,
                        format!("saturation must be finite and > 0, got {saturation}"),
                    );
                }
            }
        }
    }
}

/// Terminal condition families.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TerminalSpec {
    Constant { value: ModeMatrix },
    /// `xi = alpha + beta * W_T(1)`.
    Affine { alpha: ModeMatrix, beta: ModeMatrix },
    /// One matrix per leaf, in leaf order.
    LeafTable { values: Vec<ModeMatrix> },
}

impl TerminalSpec {
    pub fn is_markovian(&self) -> bool {
        !matches!(self, TerminalSpec::LeafTable { .. })
    }

    /// Evaluates at a leaf given its terminal W-state and its ordinal among leaves.
    pub fn evaluate(&self, w_state: &[f64], leaf_ordinal: usize) -> ModeMatrix {
        match self {
            TerminalSpec::Constant { value } => value.clone(),
            TerminalSpec::Affine { alpha, beta } => {
                let w = w_state[0];
                ModeMatrix::from_fn(alpha.m1(), alpha.m2(), |i, j| {
                    alpha[(i, j)] + beta[(i, j)] * w
                })
            }
            TerminalSpec::LeafTable { values } => values[leaf_ordinal].clone(),
        }
    }

    fn validate(&self, m1: usize, m2: usize, report: &mut ValidationReport) {
        let mut check = |name: &str, m: &ModeMatrix| {
            if m.shape() != (m1, m2) {
                report.push(
                    Clause::Terminal,
                    format!("{name} has shape {:?}, expected ({m1}, {m2})", m.shape()),
                );
            } else if !m.is_finite() {
                report.push(Clause::Terminal, format!("{name} has non-finite entries"));
            }
        };
        match self {
            TerminalSpec::Constant { value } => check("value", value),
            TerminalSpec::Affine { alpha, beta } => {
                check("alpha", alpha);
                check("beta", beta);
            }
            TerminalSpec::LeafTable { values } => {
                for (n, v) in values.iter().enumerate() {
                    check(&format!("leaf {n}"), v);
                }
            }
        }
    }
}

/// Fully validated game data.
#[derive(Clone, Debug, Serialize)]
pub struct GameSpec {
    costs: CostTables,
    generator: GeneratorSpec,
    terminal: TerminalSpec,
    horizon: f64,
    dimension: usize,
}

impl GameSpec {
    /// Validates every hypothesis and returns the full report on failure.
    pub fn new(
        costs: CostTables,
        generator: GeneratorSpec,
        terminal: TerminalSpec,
        horizon: f64,
        dimension: usize,
    ) -> Result<Self> {
        let report = Self::validate(&costs, &generator, &terminal, horizon, dimension)?;
        if !report.is_ok() {
            return Err(Error::InvalidSpec(report));
        }
        Ok(Self {
            costs,
            generator,
            terminal,
            horizon,
            dimension,
        })
    }

    /// Collects every violated clause. Fails only if loop enumeration exceeds its cap.
    pub fn validate(
        costs: &CostTables,
        generator: &GeneratorSpec,
        terminal: &TerminalSpec,
        horizon: f64,
        dimension: usize,
    ) -> Result<ValidationReport> {
        let mut report = validate_cost_matrices(costs);
        if !report.has(Clause::NonFinite) {
            report.extend(check_loop_costs(costs)?);
        }
        generator.validate(costs.m1, costs.m2, dimension, &mut report);
        terminal.validate(costs.m1, costs.m2, &mut report);
        if !(horizon.is_finite() && horizon > 0.0) {
            report.push(Clause::Horizon, format!("horizon must be > 0, got {horizon}"));
        }
        if dimension == 0 {
            report.push(Clause::Horizon, "dimension must be at least 1");
        }
        Ok(report)
    }

    pub fn costs(&self) -> &CostTables {
        &self.costs
    }

    pub fn generator(&self) -> &GeneratorSpec {
        &self.generator
    }

    pub fn terminal(&self) -> &TerminalSpec {
        &self.terminal
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn m1(&self) -> usize {
        self.costs.m1
    }

    pub fn m2(&self) -> usize {
        self.costs.m2
    }

    pub fn is_markovian(&self) -> bool {
        self.terminal.is_markovian()
    }

    pub fn with_terminal(&self, terminal: TerminalSpec) -> Result<Self> {
        Self::new(
            self.costs.clone(),
            self.generator.clone(),
            terminal,
            self.horizon,
            self.dimension,
        )
    }
}
