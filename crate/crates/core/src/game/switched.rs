//! Value of the switched game under a fixed pair of feedback strategies.
//!
//! At a node the modes settle by a walk: while Player I's table asks for a
//! move, Player I moves (paying `k`); otherwise, while Player II's table asks
//! for a move, Player II moves (receiving `l`); once neither moves, the
//! implicit BSDE step runs in the settled pair. A walk that revisits a pair
//! loops forever within the instant and is valued at `+inf` or `-inf` by the
//! sign of the loop's net cost.

use crate::bsde_core::{
    check_contraction, context, min_steps_for, moments, picard, terminal_field, GeneratorDriver,
    PicardOptions,
};
use crate::error::{Error, Result};
use crate::lattice::{map_level, Filtration, ModeField};
use crate::spec_model::{CostTables, GameSpec};

use super::FeedbackStrategy;

/// Outcome of the settling walk at one node from one entry pair.
#[derive(Clone, Debug, PartialEq)]
pub enum Walk {
    Settled {
        i: usize,
        j: usize,
        /// Total `k` paid by Player I.
        cost_one: f64,
        /// Total `l` paid by Player II.
        cost_two: f64,
        moves_one: u32,
        moves_two: u32,
    },
    /// The walk loops; `net` is the loop's `k - l` total.
    Cycle { net: f64 },
}

impl Walk {
    /// Net cost added to the settled value, or the infinite value of a loop.
    pub fn offset(&self) -> f64 {
        match self {
            Walk::Settled {
                cost_one, cost_two, ..
            } => cost_one - cost_two,
            Walk::Cycle { net } => {
                if *net > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Runs the settling walk at `node` from `(i, j)`.
pub fn settle_walk(
    node: usize,
    i: usize,
    j: usize,
    a: &FeedbackStrategy,
    b: &FeedbackStrategy,
    costs: &CostTables,
) -> Walk {
    let m2 = costs.m2();
    let mut seen: Vec<(usize, f64)> = Vec::new();
    let (mut i, mut j) = (i, j);
    let (mut cost_one, mut cost_two) = (0.0, 0.0);
    let (mut moves_one, mut moves_two) = (0u32, 0u32);
    loop {
        seen.push((i * m2 + j, cost_one - cost_two));
        let ai = a.action(node, i, j);
        if ai != i {
            cost_one += costs.k(i, ai);
            moves_one += 1;
            i = ai;
        } else {
            let bj = b.action(node, i, j);
            if bj == j {
                return Walk::Settled {
                    i,
                    j,
                    cost_one,
                    cost_two,
                    moves_one,
                    moves_two,
                };
            }
            cost_two += costs.l(j, bj);
            moves_two += 1;
            j = bj;
        }
        let key = i * m2 + j;
        if let Some(&(_, at)) = seen.iter().find(|(s, _)| *s == key) {
            return Walk::Cycle {
                net: cost_one - cost_two - at,
            };
        }
    }
}

/// Values of the switched game for a strategy pair.
#[derive(Clone, Debug)]
pub struct SwitchedValue {
    /// Value on arrival at a node with the given modes, before any switching.
    pub u: ModeField,
    /// Value of the implicit step once the modes are `(i, j)` (no switching
    /// at the node itself).
    pub settled: ModeField,
}

impl SwitchedValue {
    pub fn root(&self, i: usize, j: usize) -> f64 {
        self.u.get(0, i, j)
    }
}

/// Implicit step values at `node` from arrival values `next` at the children.
/// Coordinates with an infinite child take that infinity; mixed signs fail.
pub(crate) fn step_values<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    next: &ModeField,
    driver: &GeneratorDriver<'_>,
    opts: &PicardOptions,
) -> Result<Vec<f64>> {
    let mm = next.m1() * next.m2();
    let mut infinite = vec![0.0f64; mm];
    let mut any_inf = false;
    for br in 0..f.branches() {
        for (s, &v) in next.node_slice(f.child(node, br)).iter().enumerate() {
            if v.is_infinite() {
                if infinite[s] != 0.0 && infinite[s] != v {
                    return Err(Error::Indeterminate { node });
                }
                infinite[s] = v;
                any_inf = true;
            }
        }
    }
    let d = f.dimension();
    let mut x = vec![0.0; mm];
    let mut z = vec![0.0; mm * d];
    if any_inf {
        let mut clean = next.clone();
        for br in 0..f.branches() {
            let c = f.child(node, br);
            for (s, v) in clean.node_slice_mut(c).iter_mut().enumerate() {
                if infinite[s] != 0.0 {
                    *v = 0.0;
                }
            }
        }
        moments(f, node, &clean, &mut x, &mut z);
    } else {
        moments(f, node, next, &mut x, &mut z);
    }
    let mut y = vec![0.0; mm];
    picard(driver, &context(f, node), f.dt(), &x, &z, opts, &mut y)?;
    for s in 0..mm {
        if infinite[s] != 0.0 {
            y[s] = infinite[s];
        }
    }
    Ok(y)
}

/// Arrival values at `node` from its settled values.
fn arrival(
    node: usize,
    settled: &[f64],
    a: &FeedbackStrategy,
    b: &FeedbackStrategy,
    costs: &CostTables,
) -> Vec<f64> {
    let m2 = costs.m2();
    (0..settled.len())
        .map(|s| match settle_walk(node, s / m2, s % m2, a, b, costs) {
            w @ Walk::Settled { i, j, .. } => w.offset() + settled[i * m2 + j],
            w @ Walk::Cycle { .. } => w.offset(),
        })
        .collect()
}

/// Backward evaluation of both players' strategies from every start pair.
pub fn eval_switched<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    a: &FeedbackStrategy,
    b: &FeedbackStrategy,
    opts: &PicardOptions,
) -> Result<SwitchedValue> {
    let terminal = terminal_field(f, spec.terminal(), spec.m1(), spec.m2())?;
    eval_switched_from(spec, f, &terminal, a, b, opts)
}

/// As [`eval_switched`], with leaf values supplied.
pub fn eval_switched_from<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    terminal: &ModeField,
    a: &FeedbackStrategy,
    b: &FeedbackStrategy,
    opts: &PicardOptions,
) -> Result<SwitchedValue> {
    a.check(spec, f)?;
    b.check(spec, f)?;
    let driver = GeneratorDriver::new(spec.generator(), spec.m2(), f.dimension());
    let lip = spec.generator().lipschitz();
    check_contraction(f.dt(), lip, || {
        format!("use at least N = {} steps", min_steps_for(f.horizon(), lip))
    })?;
    let costs = spec.costs();
    let mut u = terminal.clone();
    let mut settled = terminal.clone();
    for t in (0..f.steps()).rev() {
        let rows = map_level(f, t, |node| -> Result<(Vec<f64>, Vec<f64>)> {
            let st = step_values(f, node, &u, &driver, opts)?;
            let ar = arrival(node, &st, a, b, costs);
            Ok((st, ar))
        });
        for (node, r) in f.level(t).zip(rows) {
            let (st, ar) = r?;
            settled.node_slice_mut(node).copy_from_slice(&st);
            u.node_slice_mut(node).copy_from_slice(&ar);
        }
    }
    Ok(SwitchedValue { u, settled })
}

/// Modes and accumulated costs along the play started at the root from a
/// given pair, recorded at every node of a path tree.
#[derive(Clone, Debug)]
pub struct RealizedPath {
    pub start: (usize, usize),
    /// Modes on arrival; `None` below a node whose walk loops.
    pub entry: Vec<Option<(usize, usize)>>,
    /// Modes after settling.
    pub settled: Vec<Option<(usize, usize)>>,
    /// Player I's costs paid at strict ancestors.
    pub a_cum: Vec<f64>,
    /// Player II's costs paid at strict ancestors.
    pub b_cum: Vec<f64>,
    /// Number of moves each player makes at the node.
    pub moves_one: Vec<u32>,
    pub moves_two: Vec<u32>,
}

/// Forward play of a strategy pair on a path tree.
pub fn realized_path<F: Filtration + ?Sized>(
    f: &F,
    a: &FeedbackStrategy,
    b: &FeedbackStrategy,
    costs: &CostTables,
    start: (usize, usize),
) -> Result<RealizedPath> {
    if !f.is_path_tree() {
        return Err(Error::Usage(
            "realized paths need a path tree, not a recombining lattice".into(),
        ));
    }
    let n = f.node_count();
    let mut p = RealizedPath {
        start,
        entry: vec![None; n],
        settled: vec![None; n],
        a_cum: vec![f64::NAN; n],
        b_cum: vec![f64::NAN; n],
        moves_one: vec![0; n],
        moves_two: vec![0; n],
    };
    p.entry[0] = Some(start);
    p.a_cum[0] = 0.0;
    p.b_cum[0] = 0.0;
    for node in 0..n {
        let Some((i, j)) = p.entry[node] else {
            continue;
        };
        if f.is_leaf(node) {
            p.settled[node] = Some((i, j));
            continue;
        }
        let (next, da, db) = match settle_walk(node, i, j, a, b, costs) {
            Walk::Settled {
                i,
                j,
                cost_one,
                cost_two,
                moves_one,
                moves_two,
            } => {
                p.moves_one[node] = moves_one;
                p.moves_two[node] = moves_two;
                (Some((i, j)), cost_one, cost_two)
            }
            Walk::Cycle { .. } => (None, f64::INFINITY, f64::INFINITY),
        };
        p.settled[node] = next;
        for br in 0..f.branches() {
            let c = f.child(node, br);
            p.entry[c] = next;
            p.a_cum[c] = p.a_cum[node] + da;
            p.b_cum[c] = p.b_cum[node] + db;
        }
    }
    Ok(p)
}
