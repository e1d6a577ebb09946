//! Oblique projection onto the closed domain.
//!
//! Each coordinate is pushed along its own axis only. With the pre-projection
//! matrix `yt` held fixed, the projection is the fixed point of
//! `y[s] = max(min(yt[s], U_s(y)), L_s(y))`, where `U_s` is the upper barrier
//! `min_{i'}(y[i'][j] + k(i,i'))` and `L_s` the lower barrier
//! `max_{j'}(y[i][j'] - l(j,j'))`. This is the value of the instantaneous
//! switching game played at one node: Player I may move down to an upper
//! barrier, Player II up to a lower one. Under the no-zero-cost-loop condition
//! the fixed point is unique, so the sweep order does not matter.

use super::loops::weakest_loop;
use super::{CostTables, ModeMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SweepOrder {
    /// Clamp down by the upper barrier, then up by the lower one.
    #[default]
    MinFirst,
    /// Clamp up by the lower barrier, then down by the upper one.
    MaxFirst,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub y: ModeMatrix,
    pub dk: ModeMatrix,
    pub dl: ModeMatrix,
    pub sweeps: usize,
}

/// `min_{i' != i} (y[i'][j] + k(i, i'))`, or `+inf` when Player I has one mode.
pub fn upper_barrier(y: &ModeMatrix, costs: &CostTables, i: usize, j: usize) -> f64 {
    (0..costs.m1())
        .filter(|&i2| i2 != i)
        .map(|i2| y[(i2, j)] + costs.k(i, i2))
        .fold(f64::INFINITY, f64::min)
}

/// `max_{j' != j} (y[i][j'] - l(j, j'))`, or `-inf` when Player II has one mode.
pub fn lower_barrier(y: &ModeMatrix, costs: &CostTables, i: usize, j: usize) -> f64 {
    (0..costs.m2())
        .filter(|&j2| j2 != j)
        .map(|j2| y[(i, j2)] - costs.l(j, j2))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest amount by which `y` violates any constraint (0 inside the domain).
pub fn qbar_violation(y: &ModeMatrix, costs: &CostTables) -> f64 {
    y.pairs()
        .map(|(i, j)| {
            let v = y[(i, j)];
            let up = v - upper_barrier(y, costs, i, j);
            let low = lower_barrier(y, costs, i, j) - v;
            up.max(low).max(0.0)
        })
        .fold(0.0, f64::max)
}

pub fn in_qbar(y: &ModeMatrix, costs: &CostTables, tol: f64) -> bool {
    qbar_violation(y, costs) <= tol
}

/// Projection with the default row-major, min-first sweep.
pub fn project_oblique(y: &ModeMatrix, costs: &CostTables, tol: f64) -> Result<Projection> {
    project_oblique_with(y, costs, tol, SweepOrder::MinFirst, None)
}

/// Projection with an explicit sweep order and, optionally, a custom visiting
/// order of the row-major coordinate indices.
pub fn project_oblique_with(
    y: &ModeMatrix,
    costs: &CostTables,
    tol: f64,
    order: SweepOrder,
    visit: Option<&[usize]>,
) -> Result<Projection> {
    let (m1, m2) = y.shape();
    if (m1, m2) != (costs.m1(), costs.m2()) {
        return Err(Error::Shape(format!(
            "matrix is {m1}x{m2} but costs are for {}x{}",
            costs.m1(),
            costs.m2()
        )));
    }
    let default_visit: Vec<usize> = (0..m1 * m2).collect();
    let visit = visit.unwrap_or(&default_visit);
    let target = y;
    let mut cur = y.clone();
    let mut budget = 64 * m1 * m2 + 64;
    let mut budget_refined = false;
    let mut sweeps = 0;
    loop {
        let mut moved: f64 = 0.0;
        for &s in visit {
            let (i, j) = (s / m2, s % m2);
            let up = upper_barrier(&cur, costs, i, j);
            let low = lower_barrier(&cur, costs, i, j);
            let t = target[(i, j)];
            let v = match order {
                SweepOrder::MinFirst => t.min(up).max(low),
                SweepOrder::MaxFirst => t.max(low).min(up),
            };
            moved = moved.max((v - cur[(i, j)]).abs());
            cur[(i, j)] = v;
        }
        sweeps += 1;
        if moved <= tol {
            break;
        }
        if sweeps >= budget {
            let weakest = weakest_loop(costs);
            if !budget_refined {
                if let Some((_, cost)) = &weakest {
                    if cost.abs() > 0.0 {
                        let range = spread(target.as_slice())
                            + spread_max(costs.k_table()).max(spread_max(costs.l_table()));
                        let laps = (range / cost.abs()).ceil();
                        if laps.is_finite() && laps < 1e9 {
                            let refined = m1 * m2 * (laps as usize + 1) + m1 * m2 + 64;
                            budget_refined = true;
                            if refined > budget {
                                budget = refined;
                                continue;
                            }
                        }
                    }
                }
            }
            let (loop_desc, cost) = weakest.unwrap_or_else(|| ("<none>".into(), 0.0));
            return Err(Error::ProjectionStalled {
                sweeps,
                loop_desc,
                cost,
            });
        }
    }
    let dk = ModeMatrix::from_fn(m1, m2, |i, j| (target[(i, j)] - cur[(i, j)]).max(0.0));
    let dl = ModeMatrix::from_fn(m1, m2, |i, j| (cur[(i, j)] - target[(i, j)]).max(0.0));
    Ok(Projection {
        y: cur,
        dk,
        dl,
        sweeps,
    })
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn spread_max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Projection using the upper constraints only: the largest matrix below `y`
/// satisfying them. Returns the projected matrix and the downward pushes.
pub fn project_upper(y: &ModeMatrix, costs: &CostTables) -> (ModeMatrix, ModeMatrix) {
    let (m1, m2) = y.shape();
    let mut cur = y.clone();
    // each column is independent: a shortest-path closure over Player I's modes
    for j in 0..m2 {
        loop {
            let mut moved = false;
            for i in 0..m1 {
                let up = upper_barrier(&cur, costs, i, j);
                if up < cur[(i, j)] {
                    cur[(i, j)] = up;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }
    let dk = ModeMatrix::from_fn(m1, m2, |i, j| y[(i, j)] - cur[(i, j)]);
    (cur, dk)
}
