//! Zero-cost loop detection against a closed-walk oracle.

use proptest::prelude::*;

use obrbsde::spec_model::{check_loop_costs, Clause, CostTables};

/// Smallest `|sum k - sum l|` over closed walks that change one player's mode
/// per move and repeat no mode pair, in both directions.
fn weakest_walk(costs: &CostTables) -> Option<f64> {
    let (m1, m2) = (costs.m1(), costs.m2());
    let states: Vec<(usize, usize)> = (0..m1).flat_map(|i| (0..m2).map(move |j| (i, j))).collect();
    let cost = |a: (usize, usize), b: (usize, usize)| {
        if a.0 != b.0 {
            costs.k(a.0, b.0)
        } else {
            -costs.l(a.1, b.1)
        }
    };
    let step = |a: (usize, usize), b: (usize, usize)| (a.0 == b.0) != (a.1 == b.1);
    let mut best: Option<f64> = None;
    let mut stack: Vec<(Vec<(usize, usize)>, f64)> = states.iter().map(|&s| (vec![s], 0.0)).collect();
    while let Some((walk, sum)) = stack.pop() {
        let (first, last) = (walk[0], *walk.last().unwrap());
        if walk.len() >= 2 && step(last, first) {
            let total = (sum + cost(last, first)).abs();
            best = Some(best.map_or(total, |b: f64| b.min(total)));
        }
        for &s in &states {
            if step(last, s) && !walk.contains(&s) {
                let mut next = walk.clone();
                next.push(s);
                stack.push((next, sum + cost(last, s)));
            }
        }
    }
    best
}

fn table(m: usize, values: &[u8], scale: f64) -> Vec<f64> {
    (0..m * m)
        .map(|s| if s / m == s % m { 0.0 } else { values[s] as f64 * scale })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn detection_matches_closed_walks(
        m1 in 1usize..=3,
        m2 in 1usize..=3,
        k in prop::collection::vec(1u8..=3, 9),
        l in prop::collection::vec(1u8..=3, 9),
    ) {
        let costs = CostTables::new(m1, m2, table(m1, &k, 1.0), table(m2, &l, 0.5)).unwrap();
        let report = check_loop_costs(&costs).unwrap();
        let zero = weakest_walk(&costs).is_some_and(|c| c <= 1e-12);
        prop_assert_eq!(report.has(Clause::ZeroCostLoop), zero);
    }
}

#[test]
fn symmetric_unit_costs_have_a_zero_loop() {
    assert_eq!(weakest_walk(&CostTables::uniform(2, 2, 1.0, 1.0)), Some(0.0));
    assert!(check_loop_costs(&CostTables::uniform(2, 2, 1.0, 1.0)).unwrap().has(Clause::ZeroCostLoop));
    assert!(check_loop_costs(&CostTables::uniform(2, 2, 1.0, 0.8)).unwrap().is_ok());
}
