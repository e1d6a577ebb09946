//! Primary loops on the mode grid: closed walks that move along one player's
//! axis per step and visit no mode pair twice.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::{Clause, CostTables, ValidationReport};
use crate::error::{Error, Result};

/// Largest grid (in mode pairs) enumerated by default.
pub const DEFAULT_LOOP_CAP: usize = 16;

/// Alternating loop costs at or below this magnitude count as zero.
pub const LOOP_ZERO_TOL: f64 = 1e-12;

/// A primary loop stored without its repeated endpoint, in canonical form: the
/// lexicographically smallest sequence among all rotations of both directions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PrimaryLoop {
    states: Vec<(usize, usize)>,
}

impl PrimaryLoop {
    /// Canonicalizes an arbitrary traversal of a cycle.
    pub fn canonical(states: &[(usize, usize)]) -> Self {
        let n = states.len();
        let mut best: Option<Vec<(usize, usize)>> = None;
        let mut consider = |seq: Vec<(usize, usize)>| {
            if best.as_ref().is_none_or(|b| seq < *b) {
                best = Some(seq);
            }
        };
        for r in 0..n {
            consider((0..n).map(|p| states[(r + p) % n]).collect());
            consider((0..n).map(|p| states[(r + n - p) % n]).collect());
        }
        Self {
            states: best.unwrap_or_default(),
        }
    }

    pub fn states(&self) -> &[(usize, usize)] {
        &self.states
    }

    /// Number of moves, which equals the number of distinct mode pairs.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn reversed(&self) -> Vec<(usize, usize)> {
        let n = self.states.len();
        (0..n).map(|p| self.states[(n - p) % n]).collect()
    }

    /// `sum k - sum l` along the closed walk in the stored direction, or the reverse one.
    pub fn alternating_cost(&self, costs: &CostTables, reverse: bool) -> f64 {
        let seq = if reverse {
            self.reversed()
        } else {
            self.states.clone()
        };
        walk_cost(&seq, costs)
    }
}

/// Alternating cost of a closed walk given without its repeated endpoint.
pub(crate) fn walk_cost(seq: &[(usize, usize)], costs: &CostTables) -> f64 {
    let n = seq.len();
    (0..n)
        .map(|p| {
            let (i, j) = seq[p];
            let (i2, j2) = seq[(p + 1) % n];
            if i != i2 {
                costs.k(i, i2)
            } else {
                -costs.l(j, j2)
            }
        })
        .sum()
}

impl fmt::Display for PrimaryLoop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .states
            .iter()
            .chain(self.states.first())
            .map(|(i, j)| format!("({i},{j})"))
            .collect();
        write!(f, "{}", parts.join("->"))
    }
}

pub fn enumerate_primary_loops(m1: usize, m2: usize) -> Result<Vec<PrimaryLoop>> {
    enumerate_primary_loops_with_cap(m1, m2, DEFAULT_LOOP_CAP)
}

/// All primary loops of the `m1 x m2` grid, sorted by canonical form.
pub fn enumerate_primary_loops_with_cap(
    m1: usize,
    m2: usize,
    cap: usize,
) -> Result<Vec<PrimaryLoop>> {
    let n = m1 * m2;
    if n > cap {
        return Err(Error::EnumerationCap {
            what: "mode pairs for loop enumeration",
            count: n as u128,
            cap: cap as u128,
        });
    }
    let state = |s: usize| (s / m2, s % m2);
    let adjacent = |a: usize, b: usize| {
        let (i, j) = state(a);
        let (i2, j2) = state(b);
        a != b && (i == i2 || j == j2)
    };
    let mut found = BTreeSet::new();
    let mut path = Vec::with_capacity(n);
    let mut on_path = vec![false; n];
    // depth-first search for simple cycles whose smallest state is `start`
    fn dfs(
        start: usize,
        n: usize,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        adjacent: &dyn Fn(usize, usize) -> bool,
        found: &mut BTreeSet<Vec<usize>>,
    ) {
        let last = *path.last().unwrap();
        if path.len() >= 2 && adjacent(last, start) {
            // keep one direction per cycle: second state below the last one
            if path.len() == 2 || path[1] < last {
                found.insert(path.clone());
            }
        }
        for next in start + 1..n {
            if !on_path[next] && adjacent(last, next) {
                on_path[next] = true;
                path.push(next);
                dfs(start, n, path, on_path, adjacent, found);
                path.pop();
                on_path[next] = false;
            }
        }
    }
    for start in 0..n {
        path.clear();
        path.push(start);
        on_path[start] = true;
        dfs(start, n, &mut path, &mut on_path, &adjacent, &mut found);
        on_path[start] = false;
    }
    let mut loops: Vec<PrimaryLoop> = found
        .into_iter()
        .map(|cycle| PrimaryLoop::canonical(&cycle.iter().map(|&s| state(s)).collect::<Vec<_>>()))
        .collect();
    loops.sort();
    loops.dedup();
    Ok(loops)
}

pub fn check_loop_costs(costs: &CostTables) -> Result<ValidationReport> {
    check_loop_costs_with_cap(costs, DEFAULT_LOOP_CAP)
}

/// Reports every primary loop whose alternating cost vanishes in either direction.
pub fn check_loop_costs_with_cap(costs: &CostTables, cap: usize) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    for lp in enumerate_primary_loops_with_cap(costs.m1(), costs.m2(), cap)? {
        for reverse in [false, true] {
            let cost = lp.alternating_cost(costs, reverse);
            if cost.abs() <= LOOP_ZERO_TOL {
                let shown = if reverse {
                    PrimaryLoop { states: lp.reversed() }
                } else {
                    lp.clone()
                };
                report.push(
                    Clause::ZeroCostLoop,
                    format!("loop {shown} has alternating cost {cost:e}"),
                );
            }
        }
    }
    Ok(report)
}

/// The primary loop (in some direction) with the smallest nonzero |alternating cost|.
pub(crate) fn weakest_loop(costs: &CostTables) -> Option<(String, f64)> {
    let loops = enumerate_primary_loops(costs.m1(), costs.m2()).ok()?;
    let mut best: Option<(String, f64)> = None;
    for lp in &loops {
        for reverse in [false, true] {
            let cost = lp.alternating_cost(costs, reverse);
            if best.as_ref().is_none_or(|(_, c)| cost.abs() < c.abs()) {
                let shown = if reverse {
                    PrimaryLoop { states: lp.reversed() }.to_string()
                } else {
                    lp.to_string()
                };
                best = Some((shown, cost));
            }
        }
    }
    best
}
