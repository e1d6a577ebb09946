//! Penalization schemes.
//!
//! The penalized system replaces the lower barriers by the driver term
//! `n * sum_{j'} (y[i][j] - y[i][j'] + l(j,j'))^-` and keeps the upper barriers
//! as reflection. The doubly penalized system also replaces the upper
//! barriers, by `-m * sum_{i'} (y[i][j] - y[i'][j] - k(i,i'))^+`.
//!
//! Two node solvers are available:
//!
//! * [`PenaltyScheme::Monotone`] (default) solves the coupled node system
//!   `y = min(U(y), x + dt*psi(y) + n*dt*P(y))` exactly, by nonlinear
//!   Gauss-Seidel with a scalar monotone root per coordinate. It has no step
//!   size restriction beyond `dt * C < 1` for the generator itself.
//! * [`PenaltyScheme::Picard`] runs a joint Picard loop on the penalized driver
//!   and clamps by the upper barriers afterwards. It needs
//!   `dt * (C + n*m2) < 1`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bsde_core::{
    check_contraction, context, min_steps_for, moments, picard, terminal_field, Driver,
    NodeContext, PicardOptions,
};
use crate::error::{Error, Result};
use crate::lattice::{map_level, Filtration, ModeField};
use crate::oblique_rbsde::{checked_terminal, cumulate, RbsdeSolution};
use crate::spec_model::{project_upper, CostTables, GameSpec, GeneratorSpec, ModeMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScheme {
    #[default]
    Monotone,
    Picard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyOptions {
    pub scheme: PenaltyScheme,
    pub picard: PicardOptions,
    /// Gauss-Seidel stopping threshold for the monotone scheme.
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub terminal_tol: f64,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        Self {
            scheme: PenaltyScheme::Monotone,
            picard: PicardOptions::default(),
            sweep_tol: 1e-13,
            max_sweeps: 100_000,
            terminal_tol: 1e-12,
        }
    }
}

/// `n * sum_{j'} (y[i][j] - y[i][j'] + l(j,j'))^-`; the `j' = j` term is zero.
pub fn lower_penalty(y: &[f64], costs: &CostTables, n: f64, i: usize, j: usize) -> f64 {
    let m2 = costs.m2();
    let v = y[i * m2 + j];
    n * (0..m2)
        .map(|j2| (y[i * m2 + j2] - v - costs.l(j, j2)).max(0.0))
        .sum::<f64>()
}

/// `m * sum_{i'} (y[i][j] - y[i'][j] - k(i,i'))^+`; the `i' = i` term is zero.
pub fn upper_penalty(y: &[f64], costs: &CostTables, m: f64, i: usize, j: usize) -> f64 {
    let m2 = costs.m2();
    let v = y[i * m2 + j];
    m * (0..costs.m1())
        .map(|i2| (v - y[i2 * m2 + j] - costs.k(i, i2)).max(0.0))
        .sum::<f64>()
}

/// Generator plus both penalty terms, for the Picard scheme.
#[derive(Clone, Copy, Debug)]
pub struct PenaltyDriver<'a> {
    pub generator: &'a GeneratorSpec,
    pub costs: &'a CostTables,
    pub d: usize,
    pub n: f64,
    pub m: f64,
}

impl Driver for PenaltyDriver<'_> {
    fn value(&self, ctx: &NodeContext, y: &[f64], z: &[f64], s: usize) -> f64 {
        let m2 = self.costs.m2();
        let (i, j) = (s / m2, s % m2);
        let mut v = self
            .generator
            .eval(ctx.t, y[s], &z[s * self.d..(s + 1) * self.d], i, j);
        if self.n > 0.0 {
            v += lower_penalty(y, self.costs, self.n, i, j);
        }
        if self.m > 0.0 {
            v -= upper_penalty(y, self.costs, self.m, i, j);
        }
        v
    }

    fn lipschitz(&self) -> f64 {
        self.generator.lipschitz()
            + self.n * self.costs.m2() as f64
            + self.m * self.costs.m1() as f64
    }

    fn sup_bound(&self) -> Option<f64> {
        (self.n == 0.0 && self.m == 0.0).then(|| self.generator.sup_norm())
    }
}

/// Largest `n` with `dt * (C + n * m2) < 1`.
pub fn max_usable_n(dt: f64, c: f64, m2: usize) -> u64 {
    let bound = (1.0 / dt - c) / m2 as f64;
    if bound <= 0.0 {
        return 0;
    }
    let n = bound.ceil() as u64;
    n.saturating_sub(1)
}

#[derive(Clone, Debug)]
pub struct PenalizedSolution {
    pub n: f64,
    pub y: ModeField,
    pub z: Vec<ModeField>,
    pub dk: ModeField,
    pub k_cum: Option<ModeField>,
    /// `beta = n * sum_{j'} (y[i][j] - y[i][j'] + l(j,j'))^-` at every node.
    pub beta: ModeField,
    /// Left-endpoint integral of `beta` along each path; path trees only.
    pub l_implied: Option<ModeField>,
    /// Largest inner iteration count (Picard iterations or Gauss-Seidel sweeps).
    pub max_inner: usize,
}

#[derive(Clone, Debug)]
pub struct DoublePenalizedSolution {
    pub n: f64,
    pub m: f64,
    pub y: ModeField,
    pub z: Vec<ModeField>,
    /// `alpha = m * sum_{i'} (y[i][j] - y[i'][j] - k(i,i'))^+` at every node.
    pub alpha: ModeField,
    pub beta: ModeField,
    pub max_inner: usize,
}

/// Root of a continuous strictly increasing `h` inside `[lo, hi]` with
/// `h(lo) <= 0 <= h(hi)` (Illinois variant of regula falsi).
fn increasing_root(mut h: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = h(lo);
    let mut fhi = h(hi);
    if flo >= 0.0 {
        return lo;
    }
    if fhi <= 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let x = if fhi - flo > 0.0 {
            (lo * fhi - hi * flo) / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        let x = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        let fx = h(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `h(v) = 0` for `h(v) = v - rhs(v)` with `h` increasing at slope at
/// least `c > 0`, starting from `v0`.
fn solve_scalar(mut h: impl FnMut(f64) -> f64, v0: f64, c: f64) -> f64 {
    let h0 = h(v0);
    if h0 == 0.0 {
        return v0;
    }
    let far = v0 - h0 / c;
    if h0 < 0.0 {
        increasing_root(h, v0, far)
    } else {
        increasing_root(h, far, v0)
    }
}

struct NodeProblem<'a> {
    gen: &'a GeneratorSpec,
    costs: &'a CostTables,
    ctx: NodeContext,
    dt: f64,
    d: usize,
    x: &'a [f64],
    z: &'a [f64],
    n: f64,
    m: f64,
    clamp: bool,
}

impl NodeProblem<'_> {
    /// `h_s(v) = v - x - dt*psi(v) - dt*n*P_lower(v) + dt*m*P_upper(v)` with the
    /// other coordinates fixed at `y`.
    fn h(&self, y: &mut [f64], s: usize, v: f64) -> f64 {
        let m2 = self.costs.m2();
        let (i, j) = (s / m2, s % m2);
        let saved = y[s];
        y[s] = v;
        let psi = self
            .gen
            .eval(self.ctx.t, v, &self.z[s * self.d..(s + 1) * self.d], i, j);
        let mut r = v - self.x[s] - self.dt * psi;
        if self.n > 0.0 {
            r -= self.dt * lower_penalty(y, self.costs, self.n, i, j);
        }
        if self.m > 0.0 {
            r += self.dt * upper_penalty(y, self.costs, self.m, i, j);
        }
        y[s] = saved;
        r
    }

    fn solve(&self, opts: &PenaltyOptions) -> Result<(Vec<f64>, usize)> {
        let mm = self.x.len();
        let m2 = self.costs.m2();
        let slope = 1.0 - self.dt * self.gen.lipschitz_y();
        let mut y = self.x.to_vec();
        let mut change = f64::INFINITY;
        for sweep in 1..=opts.max_sweeps {
            change = 0.0;
            for s in 0..mm {
                let v0 = y[s];
                let mut v = solve_scalar(|v| self.h(&mut y, s, v), v0, slope);
                if self.clamp {
                    let (i, j) = (s / m2, s % m2);
                    let up = (0..self.costs.m1())
                        .filter(|&i2| i2 != i)
                        .map(|i2| y[i2 * m2 + j] + self.costs.k(i, i2))
                        .fold(f64::INFINITY, f64::min);
                    v = v.min(up);
                }
                change = change.max((v - v0).abs());
                y[s] = v;
            }
            if change <= opts.sweep_tol {
                return Ok((y, sweep));
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_sweeps,
            last_change: change,
        })
    }
}

fn generator_contraction<F: Filtration + ?Sized>(spec: &GameSpec, f: &F) -> Result<()> {
    let c = spec.generator().lipschitz();
    check_contraction(f.dt(), c, || {
        format!("use at least N = {} steps", min_steps_for(f.horizon(), c))
    })
}

fn beta_field(y: &ModeField, costs: &CostTables, n: f64) -> ModeField {
    let mut beta = ModeField::zeros(y.nodes(), y.m1(), y.m2());
    for node in 0..y.nodes() {
        let yn = y.node_slice(node);
        for i in 0..y.m1() {
            for j in 0..y.m2() {
                beta.set(node, i, j, lower_penalty(yn, costs, n, i, j));
            }
        }
    }
    beta
}

fn alpha_field(y: &ModeField, costs: &CostTables, m: f64) -> ModeField {
    let mut alpha = ModeField::zeros(y.nodes(), y.m1(), y.m2());
    for node in 0..y.nodes() {
        let yn = y.node_slice(node);
        for i in 0..y.m1() {
            for j in 0..y.m2() {
                alpha.set(node, i, j, upper_penalty(yn, costs, m, i, j));
            }
        }
    }
    alpha
}

struct NodeResult {
    y: Vec<f64>,
    z: Vec<f64>,
    dk: Vec<f64>,
    inner: usize,
}

/// Shared backward loop for both penalized systems.
fn solve_generic<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n: f64,
    m: f64,
    clamp: bool,
    terminal: ModeField,
    opts: &PenaltyOptions,
) -> Result<(ModeField, Vec<ModeField>, ModeField, usize)> {
    let (m1, m2, d) = (spec.m1(), spec.m2(), f.dimension());
    let mm = m1 * m2;
    let costs = spec.costs();
    let gen = spec.generator();
    let nodes = f.node_count();
    let mut y = terminal;
    let mut z = vec![ModeField::zeros(nodes, m1, m2); d];
    let mut dk = ModeField::zeros(nodes, m1, m2);
    let mut max_inner = 0;
    let driver = PenaltyDriver {
        generator: gen,
        costs,
        d,
        n,
        m,
    };
    for t in (0..f.steps()).rev() {
        let results = map_level(f, t, |node| -> Result<NodeResult> {
            let mut x = vec![0.0; mm];
            let mut zn = vec![0.0; mm * d];
            moments(f, node, &y, &mut x, &mut zn);
            let ctx = context(f, node);
            let (yn, inner) = match opts.scheme {
                PenaltyScheme::Monotone => NodeProblem {
                    gen,
                    costs,
                    ctx,
                    dt: f.dt(),
                    d,
                    x: &x,
                    z: &zn,
                    n,
                    m,
                    clamp,
                }
                .solve(opts)?,
                PenaltyScheme::Picard => {
                    let mut yn = vec![0.0; mm];
                    let it = picard(&driver, &ctx, f.dt(), &x, &zn, &opts.picard, &mut yn)?;
                    if clamp {
                        let pre = ModeMatrix::from_row_major(m1, m2, yn)?;
                        (project_upper(&pre, costs).0.into_vec(), it)
                    } else {
                        (yn, it)
                    }
                }
            };
            // push = (x + dt * driver(y)) - y, nonzero only where the clamp acted
            let dkn = if clamp {
                (0..mm)
                    .map(|s| (x[s] + f.dt() * driver.value(&ctx, &yn, &zn, s) - yn[s]).max(0.0))
                    .collect()
            } else {
                vec![0.0; mm]
            };
            Ok(NodeResult {
                y: yn,
                z: zn,
                dk: dkn,
                inner,
            })
        });
        for (node, r) in f.level(t).zip(results) {
            let r = r?;
            y.node_slice_mut(node).copy_from_slice(&r.y);
            dk.node_slice_mut(node).copy_from_slice(&r.dk);
            for (p, zp) in z.iter_mut().enumerate() {
                let out = zp.node_slice_mut(node);
                for (s, o) in out.iter_mut().enumerate() {
                    *o = r.z[s * d + p];
                }
            }
            max_inner = max_inner.max(r.inner);
        }
    }
    Ok((y, z, dk, max_inner))
}

pub fn solve_penalized<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n: f64,
) -> Result<PenalizedSolution> {
    solve_penalized_with(spec, f, n, &PenaltyOptions::default())
}

pub fn solve_penalized_with<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n: f64,
    opts: &PenaltyOptions,
) -> Result<PenalizedSolution> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::Usage(format!("penalty level must be >= 0, got {n}")));
    }
    generator_contraction(spec, f)?;
    if opts.scheme == PenaltyScheme::Picard {
        let c = spec.generator().lipschitz();
        let m2 = spec.m2();
        check_contraction(f.dt(), c + n * m2 as f64, || {
            format!(
                "penalty level n = {n} is too large for this tree; max usable n is {}, or refine the tree",
                max_usable_n(f.dt(), c, m2)
            )
        })?;
    }
    let terminal = checked_terminal(spec, f, opts.terminal_tol)?;
    let (y, z, dk, max_inner) = solve_generic(spec, f, n, 0.0, true, terminal, opts)?;
    let beta = beta_field(&y, spec.costs(), n);
    let (k_cum, l_implied) = if f.is_path_tree() {
        let mut scaled = beta.clone();
        for node in 0..scaled.nodes() {
            scaled
                .node_slice_mut(node)
                .iter_mut()
                .for_each(|v| *v *= f.dt());
        }
        (Some(cumulate(f, &dk)), Some(cumulate(f, &scaled)))
    } else {
        (None, None)
    };
    Ok(PenalizedSolution {
        n,
        y,
        z,
        dk,
        k_cum,
        beta,
        l_implied,
        max_inner,
    })
}

pub fn solve_double_penalized<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n: f64,
    m: f64,
) -> Result<DoublePenalizedSolution> {
    solve_double_penalized_with(spec, f, n, m, &PenaltyOptions::default())
}

pub fn solve_double_penalized_with<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n: f64,
    m: f64,
    opts: &PenaltyOptions,
) -> Result<DoublePenalizedSolution> {
    if !(n >= 0.0 && m >= 0.0 && n.is_finite() && m.is_finite()) {
        return Err(Error::Usage(format!(
            "penalty levels must be >= 0, got n = {n}, m = {m}"
        )));
    }
    generator_contraction(spec, f)?;
    if opts.scheme == PenaltyScheme::Picard {
        let c = spec.generator().lipschitz();
        let l = c + n * spec.m2() as f64 + m * spec.m1() as f64;
        check_contraction(f.dt(), l, || {
            format!(
                "penalty levels (n = {n}, m = {m}) are too large for this tree; use at least N = {} steps",
                min_steps_for(f.horizon(), l)
            )
        })?;
    }
    // plain system: terminal values need not satisfy anything beyond shape
    let terminal = terminal_field(f, spec.terminal(), spec.m1(), spec.m2())?;
    let (y, z, _, max_inner) = solve_generic(spec, f, n, m, false, terminal, opts)?;
    let alpha = alpha_field(&y, spec.costs(), m);
    let beta = beta_field(&y, spec.costs(), n);
    Ok(DoublePenalizedSolution {
        n,
        m,
        y,
        z,
        alpha,
        beta,
        max_inner,
    })
}

/// Largest `n * (y[i][j] - y[i][j'] + l(j,j'))^-` over nodes and pairs.
pub fn penalty_statistic(y: &ModeField, costs: &CostTables, n: f64) -> f64 {
    let m2 = costs.m2();
    let mut best: f64 = 0.0;
    for node in 0..y.nodes() {
        let v = y.node_slice(node);
        for i in 0..costs.m1() {
            for j in 0..m2 {
                for j2 in 0..m2 {
                    let viol = (v[i * m2 + j2] - v[i * m2 + j] - costs.l(j, j2)).max(0.0);
                    best = best.max(n * viol);
                }
            }
        }
    }
    best
}

fn max_leaf_abs<F: Filtration + ?Sized>(f: &F, field: &ModeField) -> f64 {
    f.level(f.steps())
        .flat_map(|leaf| field.node_slice(leaf).iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct PenaltyRow {
    pub n: f64,
    pub root: ModeMatrix,
    /// Largest `Y^n - Y^{previous n}` over nodes (positive means an increase).
    pub max_increase: Option<f64>,
    /// Largest `Y^{previous n} - Y^n` over nodes.
    pub max_decrease: Option<f64>,
    /// `Y^{previous n} >= Y^n - 1e-10` everywhere.
    pub nonincreasing: Option<bool>,
    /// `Y^n >= Y^{previous n} - 1e-10` everywhere.
    pub nondecreasing: Option<bool>,
    pub penalty_statistic: f64,
    pub penalty_ok: bool,
    pub min_y: f64,
    pub max_y: f64,
    pub bounds_ok: bool,
    pub gap: Option<f64>,
    pub gap_ratio: Option<f64>,
    pub max_inner: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub psi_sup: f64,
    pub max_leaf_xi: f64,
    pub horizon: f64,
    pub penalty_bound: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub rows: Vec<PenaltyRow>,
}

pub const MONOTONE_SLACK: f64 = 1e-10;
pub const BOUND_SLACK: f64 = 1e-9;

impl ConvergenceReport {
    pub fn all_nonincreasing(&self) -> bool {
        self.rows.iter().all(|r| r.nonincreasing != Some(false))
    }

    pub fn all_nondecreasing(&self) -> bool {
        self.rows.iter().all(|r| r.nondecreasing != Some(false))
    }

    pub fn all_penalty_ok(&self) -> bool {
        self.rows.iter().all(|r| r.penalty_ok)
    }

    pub fn all_bounds_ok(&self) -> bool {
        self.rows.iter().all(|r| r.bounds_ok)
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.gap).collect()
    }

    pub fn gaps_strictly_decreasing(&self) -> bool {
        self.gaps().windows(2).all(|w| w[1] < w[0])
    }

    /// Geometric extrapolation of the last gap from the two before it:
    /// `gap[p-1]^2 / gap[p-2]`.
    pub fn extrapolated_last_gap(&self) -> Option<f64> {
        let g = self.gaps();
        let p = g.len();
        (p >= 3 && g[p - 3] > 0.0).then(|| g[p - 2] * g[p - 2] / g[p - 3])
    }
}

/// Solves the penalized system for every `n` (in parallel) and tabulates
/// monotonicity, the penalty statistic, the a priori bounds and the gaps to
/// `direct` when given.
pub fn penalization_report<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n_list: &[f64],
    direct: Option<&RbsdeSolution>,
    opts: &PenaltyOptions,
) -> Result<(ConvergenceReport, Vec<PenalizedSolution>)> {
    let mut ns = n_list.to_vec();
    ns.sort_by(|a, b| a.total_cmp(b));
    ns.dedup();
    let sols: Vec<PenalizedSolution> = ns
        .par_iter()
        .map(|&n| solve_penalized_with(spec, f, n, opts))
        .collect::<Result<_>>()?;
    let psi = spec.generator().sup_norm();
    let t = spec.horizon();
    let xi_max = max_leaf_abs(f, &sols.first().map_or_else(
        || terminal_field(f, spec.terminal(), spec.m1(), spec.m2()),
        |s| Ok(s.y.clone()),
    )?);
    let lower = -xi_max - psi * t - BOUND_SLACK;
    let upper = xi_max + 3.0 * psi * t + BOUND_SLACK;
    let bound = 2.0 * psi + BOUND_SLACK;
    let mut rows: Vec<PenaltyRow> = Vec::with_capacity(sols.len());
    for (p, sol) in sols.iter().enumerate() {
        let (max_increase, max_decrease) = match p {
            0 => (None, None),
            _ => {
                let prev = &sols[p - 1].y;
                let (mut inc, mut dec) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (a, b) in sol.y.as_slice().iter().zip(prev.as_slice()) {
                    inc = inc.max(a - b);
                    dec = dec.max(b - a);
                }
                (Some(inc), Some(dec))
            }
        };
        let stat = penalty_statistic(&sol.y, spec.costs(), sol.n);
        let (min_y, max_y) = sol
            .y
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let gap = direct.map(|d| d.y.max_abs_diff(&sol.y));
        let gap_ratio = match (gap, rows.last().and_then(|r| r.gap)) {
            (Some(g), Some(prev)) if prev > 0.0 => Some(g / prev),
            _ => None,
        };
        rows.push(PenaltyRow {
            n: sol.n,
            root: sol.y.matrix(0),
            max_increase,
            max_decrease,
            nonincreasing: max_increase.map(|v| v <= MONOTONE_SLACK),
            nondecreasing: max_decrease.map(|v| v <= MONOTONE_SLACK),
            penalty_statistic: stat,
            penalty_ok: stat <= bound,
            min_y,
            max_y,
            bounds_ok: min_y >= lower && max_y <= upper,
            gap,
            gap_ratio,
            max_inner: sol.max_inner,
        });
    }
    Ok((
        ConvergenceReport {
            psi_sup: psi,
            max_leaf_xi: xi_max,
            horizon: t,
            penalty_bound: bound,
            lower_bound: lower,
            upper_bound: upper,
            rows,
        },
        sols,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublePenaltyRow {
    pub n: f64,
    pub m: f64,
    pub root: ModeMatrix,
    /// Distance to the penalized solution with the same `n`.
    pub gap: f64,
    pub max_alpha: f64,
    pub max_beta: f64,
    pub max_inner: usize,
}

pub fn double_penalization_report<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    n: f64,
    m_list: &[f64],
    opts: &PenaltyOptions,
) -> Result<Vec<DoublePenaltyRow>> {
    let reference = solve_penalized_with(spec, f, n, opts)?;
    let mut ms = m_list.to_vec();
    ms.sort_by(|a, b| a.total_cmp(b));
    ms.dedup();
    ms.par_iter()
        .map(|&m| {
            let sol = solve_double_penalized_with(spec, f, n, m, opts)?;
            Ok(DoublePenaltyRow {
                n,
                m,
                root: sol.y.matrix(0),
                gap: sol.y.max_abs_diff(&reference.y),
                max_alpha: sol.alpha.max_abs(),
                max_beta: sol.beta.max_abs(),
                max_inner: sol.max_inner,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_tree;
    use crate::oblique_rbsde::solve_rbsde;
    use crate::spec_model::{ModeMatrix, TerminalSpec};

    fn two_by_two(c: ModeMatrix, xi: ModeMatrix) -> GameSpec {
        GameSpec::new(
            CostTables::uniform(2, 2, 1.0, 0.8),
            GeneratorSpec::ModeConstant { c },
            TerminalSpec::Constant { value: xi },
            1.0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn diagonal_terms_vanish() {
        let costs = CostTables::uniform(2, 3, 1.0, 0.8);
        let y = [0.3, -2.0, 5.0, 1.0, 1.0, 1.0];
        for i in 0..2 {
            for j in 0..3 {
                let mut only_self = y;
                for (s, v) in only_self.iter_mut().enumerate() {
                    if s != i * 3 + j {
                        *v = -1e9;
                    }
                }
                assert_eq!(lower_penalty(&only_self, &costs, 7.0, i, j), 0.0);
                let mut only_self_up = y;
                for (s, v) in only_self_up.iter_mut().enumerate() {
                    if s != i * 3 + j {
                        *v = 1e9;
                    }
                }
                assert_eq!(upper_penalty(&only_self_up, &costs, 7.0, i, j), 0.0);
            }
        }
    }

    #[test]
    fn inactive_penalty_reproduces_direct_solution() {
        // a driver that only pushes Player I's first mode up: lower barriers never bind
        let c = ModeMatrix::from_rows(&[&[3.0, 3.0], &[0.0, 0.0]]).unwrap();
        let spec = two_by_two(c, ModeMatrix::zeros(2, 2));
        let tree = build_tree(6, 1, 1.0).unwrap();
        let direct = solve_rbsde(&spec, &tree).unwrap();
        assert_eq!(direct.dl.max_abs(), 0.0);
        assert!(direct.dk.max_abs() > 0.0);
        for n in [1.0, 4.0, 64.0] {
            let pen = solve_penalized(&spec, &tree, n).unwrap();
            assert!(pen.y.max_abs_diff(&direct.y) < 1e-9);
            assert_eq!(pen.beta.max_abs(), 0.0);
        }
    }

    #[test]
    fn schemes_agree_where_both_apply() {
        let c = ModeMatrix::from_rows(&[&[2.0, -2.0], &[-2.0, 2.0]]).unwrap();
        let spec = two_by_two(c, ModeMatrix::zeros(2, 2));
        let tree = build_tree(8, 1, 1.0).unwrap();
        let picard = PenaltyOptions {
            scheme: PenaltyScheme::Picard,
            ..Default::default()
        };
        // splitting and joint schemes differ by O(dt), so compare on a small n
        // where the clamp is inactive
        let a = solve_penalized_with(&spec, &tree, 0.5, &picard).unwrap();
        let b = solve_penalized(&spec, &tree, 0.5).unwrap();
        if a.dk.max_abs() == 0.0 && b.dk.max_abs() == 0.0 {
            assert!(a.y.max_abs_diff(&b.y) < 1e-10);
        }
    }

    #[test]
    fn picard_contraction_reports_max_n() {
        let spec = two_by_two(ModeMatrix::zeros(2, 2), ModeMatrix::zeros(2, 2));
        let tree = build_tree(8, 1, 1.0).unwrap();
        let picard = PenaltyOptions {
            scheme: PenaltyScheme::Picard,
            ..Default::default()
        };
        assert_eq!(max_usable_n(1.0 / 8.0, 0.0, 2), 3);
        match solve_penalized_with(&spec, &tree, 4.0, &picard) {
            Err(Error::Contraction { advice, .. }) => assert!(advice.contains("max usable n is 3")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_penalized_with(&spec, &tree, 3.0, &picard).is_ok());
        // the monotone scheme has no such restriction
        assert!(solve_penalized(&spec, &tree, 1e6).is_ok());
    }

    #[test]
    fn scalar_root_is_accurate() {
        let h = |v: f64| v - 0.2 - 3.0 * (0.5 - v).max(0.0);
        let r = solve_scalar(h, 10.0, 1.0);
        assert!(h(r).abs() < 1e-14);
        let r = solve_scalar(h, -10.0, 1.0);
        assert!(h(r).abs() < 1e-14);
    }

    #[test]
    fn double_penalty_with_inactive_upper_has_zero_alpha() {
        let spec = GameSpec::new(
            CostTables::uniform(1, 2, 0.0, 0.8),
            GeneratorSpec::ModeConstant {
                c: ModeMatrix::from_rows(&[&[2.0, -2.0]]).unwrap(),
            },
            TerminalSpec::Constant {
                value: ModeMatrix::zeros(1, 2),
            },
            1.0,
            1,
        )
        .unwrap();
        let tree = build_tree(6, 1, 1.0).unwrap();
        let dp = solve_double_penalized(&spec, &tree, 4.0, 16.0).unwrap();
        let pen = solve_penalized(&spec, &tree, 4.0).unwrap();
        assert_eq!(dp.alpha.max_abs(), 0.0);
        assert!(dp.y.max_abs_diff(&pen.y) < 1e-12);
    }
}
