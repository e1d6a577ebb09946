//! Saddle strategies read off a reflected solution, and their verification
//! against a catalog of deviations or against every feedback table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bsde_core::{terminal_field, PicardOptions};
use crate::error::{Error, Result};
use crate::lattice::{Filtration, ModeField};
use crate::spec_model::{CostTables, GameSpec, ModeMatrix, Player};

use super::{eval_switched_from, FeedbackStrategy};

/// Saddle tables from a value field `y`.
///
/// Player I switches to the argmin of `y(i', j) + k(i, i')` when `y(i, j)`
/// reaches it within `tol`; Player II switches to the argmax of
/// `y(i, j') - l(j, j')` when `y(i, j)` is within `tol` of it. Ties go to the
/// smallest index. Where both fire, the walk's ordering lets Player I move
/// first, which is the only place Player II's entry could matter.
pub fn extract_saddle(
    y: &ModeField,
    interior: usize,
    costs: &CostTables,
    tol: f64,
) -> (FeedbackStrategy, FeedbackStrategy) {
    let (m1, m2) = (costs.m1(), costs.m2());
    let a = FeedbackStrategy::from_fn(Player::One, m1, m2, interior, |node, i, j| {
        let mut best = (f64::INFINITY, i);
        for i2 in (0..m1).filter(|&i2| i2 != i) {
            let v = y.get(node, i2, j) + costs.k(i, i2);
            if v < best.0 {
                best = (v, i2);
            }
        }
        if y.get(node, i, j) >= best.0 - tol {
            best.1
        } else {
            i
        }
    });
    let b = FeedbackStrategy::from_fn(Player::Two, m1, m2, interior, |node, i, j| {
        let mut best = (f64::NEG_INFINITY, j);
        for j2 in (0..m2).filter(|&j2| j2 != j) {
            let v = y.get(node, i, j2) - costs.l(j, j2);
            if v > best.0 {
                best = (v, j2);
            }
        }
        if y.get(node, i, j) <= best.0 + tol {
            best.1
        } else {
            j
        }
    });
    (a, b)
}

/// A named catalog member.
#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub id: String,
    pub strategy: FeedbackStrategy,
}

/// Always-stay, every constant mode, the myopic greedy table, then
/// `random_count` seeded random tables without own-move cycles.
pub fn build_catalog<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    player: Player,
    random_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CatalogEntry> {
    let (m1, m2, n) = (spec.m1(), spec.m2(), f.interior_count());
    let own = match player {
        Player::One => m1,
        Player::Two => m2,
    };
    let mut out = vec![CatalogEntry {
        id: "stay".into(),
        strategy: FeedbackStrategy::stay(player, m1, m2, n),
    }];
    for m in 0..own {
        out.push(CatalogEntry {
            id: format!("constant-{m}"),
            strategy: FeedbackStrategy::constant(player, m1, m2, n, m),
        });
    }
    out.push(CatalogEntry {
        id: "greedy".into(),
        strategy: greedy(spec, f, player),
    });
    for r in 0..random_count {
        out.push(CatalogEntry {
            id: format!("random-{r}"),
            strategy: FeedbackStrategy::random_acyclic(player, m1, m2, n, 0.3, rng),
        });
    }
    out
}

/// Compares staying against each single switch by its cost plus one step of
/// the generator at `y = 0, z = 0`.
fn greedy<F: Filtration + ?Sized>(spec: &GameSpec, f: &F, player: Player) -> FeedbackStrategy {
    let (m1, m2) = (spec.m1(), spec.m2());
    let z0 = vec![0.0; f.dimension()];
    let dt = f.dt();
    let g = spec.generator();
    let c = spec.costs();
    FeedbackStrategy::from_fn(player, m1, m2, f.interior_count(), |node, i, j| {
        let t = f.time(node);
        match player {
            Player::One => (0..m1)
                .map(|i2| {
                    let sw = if i2 == i { 0.0 } else { c.k(i, i2) };
                    (sw + dt * g.eval(t, 0.0, &z0, i2, j), i2)
                })
                .fold((f64::INFINITY, i), |a, b| if b.0 < a.0 { b } else { a })
                .1,
            Player::Two => (0..m2)
                .map(|j2| {
                    let sw = if j2 == j { 0.0 } else { c.l(j, j2) };
                    (dt * g.eval(t, 0.0, &z0, i, j2) - sw, j2)
                })
                .fold((f64::NEG_INFINITY, j), |a, b| if b.0 > a.0 { b } else { a })
                .1,
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddleOptions {
    /// Random tables per player on top of the fixed members.
    pub catalog_size: usize,
    pub seed: u64,
    pub tol: f64,
    /// Tolerance of the saddle triggers.
    pub trigger_tol: f64,
    pub picard: PicardOptions,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            catalog_size: 200,
            seed: 0,
            tol: 1e-8,
            trigger_tol: 1e-9,
            picard: PicardOptions::default(),
        }
    }
}

/// One checked inequality.
#[derive(Clone, Debug, Serialize)]
pub struct SaddleRow {
    pub strategy_id: String,
    /// The player deviating from the saddle pair; `None` for the pair itself.
    pub deviator: Option<Player>,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub y_root: f64,
    /// Margin of the inequality; negative beyond `-tol` is a violation.
    pub slack: f64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct SaddleReport {
    pub a_star: FeedbackStrategy,
    pub b_star: FeedbackStrategy,
    pub rows: Vec<SaddleRow>,
    /// Offending strategies, by row index.
    pub violations: Vec<(usize, FeedbackStrategy)>,
    pub catalog_one: usize,
    pub catalog_two: usize,
}

impl SaddleReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
    }
}

/// Checks the saddle pair built from `y` against seeded catalogs of
/// deviations for both players, at every start pair.
pub fn verify_saddle<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    y: &ModeField,
    opts: &SaddleOptions,
) -> Result<SaddleReport> {
    let terminal = terminal_field(f, spec.terminal(), spec.m1(), spec.m2())?;
    let (a_star, b_star) = extract_saddle(y, f.interior_count(), spec.costs(), opts.trigger_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cat_two = build_catalog(spec, f, Player::Two, opts.catalog_size, &mut rng);
    let cat_one = build_catalog(spec, f, Player::One, opts.catalog_size, &mut rng);
    let y_root = y.matrix(0);

    let eval = |a: &FeedbackStrategy, b: &FeedbackStrategy| -> Result<ModeMatrix> {
        Ok(eval_switched_from(spec, f, &terminal, a, b, &opts.picard)?.u.matrix(0))
    };

    let mut jobs: Vec<(String, Option<Player>, &FeedbackStrategy)> =
        vec![("saddle".into(), None, &a_star)];
    jobs.extend(cat_two.iter().map(|e| (e.id.clone(), Some(Player::Two), &e.strategy)));
    jobs.extend(cat_one.iter().map(|e| (e.id.clone(), Some(Player::One), &e.strategy)));

    let values: Vec<Result<ModeMatrix>> = jobs
        .par_iter()
        .map(|(_, dev, s)| match dev {
            None => eval(&a_star, &b_star),
            Some(Player::Two) => eval(&a_star, s),
            Some(Player::One) => eval(s, &b_star),
        })
        .collect();

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for ((id, dev, s), v) in jobs.iter().zip(values) {
        let v = v?;
        for (i, j) in v.pairs() {
            let (u, yr) = (v[(i, j)], y_root[(i, j)]);
            let slack = match dev {
                None => -(u - yr).abs(),
                Some(Player::Two) => yr - u,
                Some(Player::One) => u - yr,
            };
            let ok = slack >= -opts.tol;
            if !ok {
                violations.push((rows.len(), (*s).clone()));
            }
            rows.push(SaddleRow {
                strategy_id: id.clone(),
                deviator: *dev,
                i,
                j,
                value: u,
                y_root: yr,
                slack,
                ok,
            });
        }
    }
    Ok(SaddleReport {
        a_star,
        b_star,
        rows,
        violations,
        catalog_one: cat_one.len(),
        catalog_two: cat_two.len(),
    })
}

/// Best responses found by enumerating every feedback table.
#[derive(Clone, Debug)]
pub struct ExhaustiveSaddle {
    pub y_root: ModeMatrix,
    /// `max_b U^{a*, b}` per start pair.
    pub max_over_two: ModeMatrix,
    /// `min_a U^{a, b*}` per start pair.
    pub min_over_one: ModeMatrix,
    pub count_one: u128,
    pub count_two: u128,
}

impl ExhaustiveSaddle {
    pub fn max_error(&self) -> f64 {
        self.max_over_two
            .max_abs_diff(&self.y_root)
            .max(self.min_over_one.max_abs_diff(&self.y_root))
    }
}

/// Default ceiling on the number of tables enumerated per player.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 22;

pub(crate) fn strategy_count(
    player: Player,
    m1: usize,
    m2: usize,
    interior: usize,
    cap: u128,
    what: &'static str,
) -> Result<u128> {
    match FeedbackStrategy::count(player, m1, m2, interior) {
        Some(c) if c <= cap => Ok(c),
        c => Err(Error::EnumerationCap {
            what,
            count: c.unwrap_or(u128::MAX),
            cap,
        }),
    }
}

/// Elementwise extreme of `eval(index)` over `0..count`, in parallel.
pub(crate) fn extreme_over<E>(count: u128, m1: usize, m2: usize, maximize: bool, eval: E) -> Result<ModeMatrix>
where
    E: Fn(u128) -> Result<ModeMatrix> + Sync,
{
    let init = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    let pick = move |x: f64, y: f64| if maximize { x.max(y) } else { x.min(y) };
    let count = u64::try_from(count).map_err(|_| Error::EnumerationCap {
        what: "strategy tables",
        count,
        cap: u64::MAX as u128,
    })?;
    (0..count)
        .into_par_iter()
        .map(|k| eval(k as u128))
        .try_fold(
            || ModeMatrix::filled(m1, m2, init),
            |acc, v| {
                let v = v?;
                Ok(ModeMatrix::from_fn(m1, m2, |i, j| pick(acc[(i, j)], v[(i, j)])))
            },
        )
        .try_reduce(
            || ModeMatrix::filled(m1, m2, init),
            |x, y| Ok(ModeMatrix::from_fn(m1, m2, |i, j| pick(x[(i, j)], y[(i, j)]))),
        )
}

/// Enumerates every table of each player against the other's saddle table.
pub fn exhaustive_saddle<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    y: &ModeField,
    trigger_tol: f64,
    cap: u128,
    picard: &PicardOptions,
) -> Result<ExhaustiveSaddle> {
    let (m1, m2, n) = (spec.m1(), spec.m2(), f.interior_count());
    let count_one = strategy_count(Player::One, m1, m2, n, cap, "Player I strategy tables")?;
    let count_two = strategy_count(Player::Two, m1, m2, n, cap, "Player II strategy tables")?;
    let terminal = terminal_field(f, spec.terminal(), m1, m2)?;
    let (a_star, b_star) = extract_saddle(y, n, spec.costs(), trigger_tol);
    let max_over_two = extreme_over(count_two, m1, m2, true, |k| {
        let b = FeedbackStrategy::from_index(Player::Two, m1, m2, n, k);
        Ok(eval_switched_from(spec, f, &terminal, &a_star, &b, picard)?.u.matrix(0))
    })?;
    let min_over_one = extreme_over(count_one, m1, m2, false, |k| {
        let a = FeedbackStrategy::from_index(Player::One, m1, m2, n, k);
        Ok(eval_switched_from(spec, f, &terminal, &a, &b_star, picard)?.u.matrix(0))
    })?;
    Ok(ExhaustiveSaddle {
        y_root: y.matrix(0),
        max_over_two,
        min_over_one,
        count_one,
        count_two,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_field_gives_stay_tables() {
        let costs = CostTables::uniform(2, 2, 1.0, 0.8);
        let mut y = ModeField::zeros(3, 2, 2);
        for n in 0..3 {
            y.set_matrix(n, &ModeMatrix::from_rows(&[&[0.0, 0.1], &[0.2, 0.3]]).unwrap());
        }
        let (a, b) = extract_saddle(&y, 1, &costs, 1e-9);
        assert_eq!(a, FeedbackStrategy::stay(Player::One, 2, 2, 1));
        assert_eq!(b, FeedbackStrategy::stay(Player::Two, 2, 2, 1));
    }

    #[test]
    fn binding_upper_barrier_triggers_player_one() {
        let costs = CostTables::uniform(2, 1, 1.0, 0.8);
        let mut y = ModeField::zeros(1, 2, 1);
        y.set(0, 0, 0, 2.5);
        y.set(0, 1, 0, 1.5);
        let (a, _) = extract_saddle(&y, 1, &costs, 1e-9);
        assert_eq!(a.action(0, 0, 0), 1);
        assert_eq!(a.action(0, 1, 0), 1);
    }

    #[test]
    fn simultaneous_triggers_resolve_to_player_one() {
        // At (0,0): upper barrier y(1,0)+1 = 1 binds and lower barrier y(0,1)-0.8 = 1 binds.
        let costs = CostTables::uniform(2, 2, 1.0, 0.8);
        let mut y = ModeField::zeros(1, 2, 2);
        y.set_matrix(0, &ModeMatrix::from_rows(&[&[1.0, 1.8], &[0.0, 0.5]]).unwrap());
        let (a, b) = extract_saddle(&y, 1, &costs, 1e-9);
        assert_eq!(a.action(0, 0, 0), 1);
        let w = super::super::settle_walk(0, 0, 0, &a, &b, &costs);
        match w {
            super::super::Walk::Settled { moves_one, moves_two, .. } => {
                assert_eq!(moves_one, 1);
                assert_eq!(moves_two, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
