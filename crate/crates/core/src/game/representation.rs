//! Player II's best response to a fixed Player I table, as a lower-reflected
//! system, and the exhaustive minimum over Player I tables.

use crate::bsde_core::{check_contraction, min_steps_for, terminal_field, GeneratorDriver, PicardOptions};
use crate::error::{Error, Result};
use crate::lattice::{map_level, Filtration, ModeField};
use crate::spec_model::{CostTables, GameSpec, ModeMatrix, Player};

use super::saddle::{extreme_over, strategy_count, DEFAULT_ENUMERATION_CAP};
use super::switched::step_values;
use super::FeedbackStrategy;

/// Which upward push the lower-reflected system uses where Player I stays.
#[derive(Clone, Copy, Debug)]
pub enum LowerPush<'a> {
    /// The system's own minimal push: the largest of staying and any
    /// Player II move.
    Minimal,
    /// The push of a reflected solution, added to the step value as is.
    Frozen(&'a ModeField),
}

#[derive(Clone, Debug)]
pub struct LowerReflected {
    /// Value on arrival with the given modes.
    pub w: ModeField,
    /// Upward push where Player I stays (zero where Player I moves).
    pub push: ModeField,
}

impl LowerReflected {
    pub fn root(&self) -> ModeMatrix {
        self.w.matrix(0)
    }
}

fn improves(new: f64, old: f64) -> bool {
    if old == f64::NEG_INFINITY {
        new > old
    } else if old == f64::INFINITY {
        false
    } else {
        new > old + 1e-13 * (1.0 + old.abs())
    }
}

/// Longest-path fixed point at one node: where Player I's table moves,
/// `w = k + w(target)`; elsewhere `w = max(stay, max_j' w(i, j') - l)`, or
/// `stay + frozen push`. Values still growing after `m1 * m2` rounds sit on a
/// loop with positive net cost and become `+inf`.
fn node_fixed_point(
    node: usize,
    stay: &[f64],
    frozen: Option<&[f64]>,
    a: &FeedbackStrategy,
    costs: &CostTables,
) -> Vec<f64> {
    let (m1, m2) = (costs.m1(), costs.m2());
    let mm = m1 * m2;
    let mut w = vec![f64::NEG_INFINITY; mm];
    // Player I's own moves that never reach a staying pair loop forever.
    for (s, ws) in w.iter_mut().enumerate() {
        let (mut i, j) = (s / m2, s % m2);
        for _ in 0..=m1 {
            i = a.action(node, i, j);
        }
        if a.action(node, i, j) != i {
            *ws = f64::INFINITY;
        }
    }
    for round in 0..(3 * mm + 3) {
        let mut changed = false;
        for s in 0..mm {
            let (i, j) = (s / m2, s % m2);
            let ai = a.action(node, i, j);
            let new = if ai != i {
                costs.k(i, ai) + w[ai * m2 + j]
            } else if let Some(fr) = frozen {
                stay[s] + fr[s]
            } else {
                (0..m2)
                    .filter(|&j2| j2 != j)
                    .map(|j2| w[i * m2 + j2] - costs.l(j, j2))
                    .fold(stay[s], f64::max)
            };
            if improves(new, w[s]) {
                w[s] = if round > mm { f64::INFINITY } else { new };
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    w
}

/// Backward solve of Player II's best response to `a`.
pub fn solve_lower_reflected<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    a: &FeedbackStrategy,
    push: LowerPush<'_>,
    picard: &PicardOptions,
) -> Result<LowerReflected> {
    let terminal = terminal_field(f, spec.terminal(), spec.m1(), spec.m2())?;
    solve_lower_reflected_from(spec, f, &terminal, a, push, picard)
}

pub(crate) fn solve_lower_reflected_from<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    terminal: &ModeField,
    a: &FeedbackStrategy,
    push: LowerPush<'_>,
    picard: &PicardOptions,
) -> Result<LowerReflected> {
    a.check(spec, f)?;
    if a.player() != Player::One {
        return Err(Error::Usage("the fixed table must be Player I's".into()));
    }
    if let LowerPush::Frozen(dl) = push {
        if dl.nodes() != f.node_count() || (dl.m1(), dl.m2()) != (spec.m1(), spec.m2()) {
            return Err(Error::Shape("frozen push field does not match the game".into()));
        }
    }
    let lip = spec.generator().lipschitz();
    check_contraction(f.dt(), lip, || {
        format!("use at least N = {} steps", min_steps_for(f.horizon(), lip))
    })?;
    let driver = GeneratorDriver::new(spec.generator(), spec.m2(), f.dimension());
    let costs = spec.costs();
    let mut w = terminal.clone();
    let mut pushes = ModeField::zeros(f.node_count(), spec.m1(), spec.m2());
    for t in (0..f.steps()).rev() {
        let rows = map_level(f, t, |node| -> Result<(Vec<f64>, Vec<f64>)> {
            let stay = step_values(f, node, &w, &driver, picard)?;
            let frozen = match push {
                LowerPush::Minimal => None,
                LowerPush::Frozen(dl) => Some(dl.node_slice(node)),
            };
            let wn = node_fixed_point(node, &stay, frozen, a, costs);
            let m2 = costs.m2();
            let p = (0..stay.len())
                .map(|s| {
                    if a.switches(node, s / m2, s % m2) {
                        0.0
                    } else if wn[s].is_infinite() {
                        wn[s]
                    } else {
                        wn[s] - stay[s]
                    }
                })
                .collect();
            Ok((wn, p))
        });
        for (node, r) in f.level(t).zip(rows) {
            let (wn, p) = r?;
            w.node_slice_mut(node).copy_from_slice(&wn);
            pushes.node_slice_mut(node).copy_from_slice(&p);
        }
    }
    Ok(LowerReflected { w, push: pushes })
}

/// Limits on exhaustive enumeration of Player I tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BruteForceCap {
    pub max_steps: usize,
    pub max_pairs: usize,
    pub max_tables: u128,
}

impl Default for BruteForceCap {
    fn default() -> Self {
        Self {
            max_steps: 3,
            max_pairs: 4,
            max_tables: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// `min_a W^a(root)` over every Player I table, for every start pair.
pub fn brute_force_values<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    cap: &BruteForceCap,
    picard: &PicardOptions,
) -> Result<ModeMatrix> {
    brute_force_values_with(spec, f, cap, picard, LowerPush::Minimal)
}

/// [`brute_force_values`] with a choice of lower push.
pub fn brute_force_values_with<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    cap: &BruteForceCap,
    picard: &PicardOptions,
    push: LowerPush<'_>,
) -> Result<ModeMatrix> {
    let (m1, m2, n) = (spec.m1(), spec.m2(), f.interior_count());
    if f.steps() > cap.max_steps {
        return Err(Error::EnumerationCap {
            what: "time steps",
            count: f.steps() as u128,
            cap: cap.max_steps as u128,
        });
    }
    if m1 * m2 > cap.max_pairs {
        return Err(Error::EnumerationCap {
            what: "mode pairs",
            count: (m1 * m2) as u128,
            cap: cap.max_pairs as u128,
        });
    }
    let count = strategy_count(Player::One, m1, m2, n, cap.max_tables, "Player I strategy tables")?;
    let terminal = terminal_field(f, spec.terminal(), m1, m2)?;
    extreme_over(count, m1, m2, false, |k| {
        let a = FeedbackStrategy::from_index(Player::One, m1, m2, n, k);
        Ok(solve_lower_reflected_from(spec, f, &terminal, &a, push, picard)?.root())
    })
}

/// [`brute_force_values`] at one start pair.
pub fn brute_force_value<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    start: (usize, usize),
    cap: &BruteForceCap,
) -> Result<f64> {
    let v = brute_force_values(spec, f, cap, &PicardOptions::default())?;
    if start.0 >= spec.m1() || start.1 >= spec.m2() {
        return Err(Error::Usage(format!("start modes {start:?} out of range")));
    }
    Ok(v[start])
}
