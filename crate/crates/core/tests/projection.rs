//! Oblique projection against an independent Jacobi oracle.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use obrbsde::spec_model::sampling::random_costs;
use obrbsde::spec_model::{
    in_qbar, project_oblique, project_oblique_with, qbar_violation, CostTables, ModeMatrix,
    SweepOrder,
};

/// Jacobi iteration of `v <- max(min(y, U(v)), L(v))` from `v = y`, where
/// `U` is the cheapest Player I alternative and `L` the best Player II
/// alternative net of its cost. All coordinates update simultaneously.
fn jacobi_oracle(y: &ModeMatrix, costs: &CostTables) -> ModeMatrix {
    let (m1, m2) = y.shape();
    let mut v: Vec<Vec<f64>> = (0..m1).map(|i| (0..m2).map(|j| y[(i, j)]).collect()).collect();
    for _ in 0..1_000_000 {
        let next: Vec<Vec<f64>> = (0..m1)
            .map(|i| {
                (0..m2)
                    .map(|j| {
                        let up = (0..m1)
                            .filter(|&a| a != i)
                            .map(|a| v[a][j] + costs.k(i, a))
                            .fold(f64::INFINITY, f64::min);
                        let lo = (0..m2)
                            .filter(|&b| b != j)
                            .map(|b| v[i][b] - costs.l(j, b))
                            .fold(f64::NEG_INFINITY, f64::max);
                        y[(i, j)].min(up).max(lo)
                    })
                    .collect()
            })
            .collect();
        let moved = (0..m1)
            .flat_map(|i| (0..m2).map(move |j| (i, j)))
            .map(|(i, j)| (next[i][j] - v[i][j]).abs())
            .fold(0.0, f64::max);
        v = next;
        if moved == 0.0 {
            break;
        }
    }
    ModeMatrix::from_fn(m1, m2, |i, j| v[i][j])
}

fn shapes() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![Just((2, 1)), Just((1, 2)), Just((2, 2)), Just((3, 2)), Just((2, 3)), Just((3, 3))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_matches_jacobi_oracle(seed in any::<u64>(), (m1, m2) in shapes(), scale in 0.1f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = random_costs(&mut rng, m1, m2);
        let y = ModeMatrix::from_fn(m1, m2, |_, _| rng.gen_range(-scale..=scale));
        let p = project_oblique(&y, &costs, 1e-14).unwrap();
        let oracle = jacobi_oracle(&y, &costs);
        prop_assert!(p.y.max_abs_diff(&oracle) <= 1e-9, "{:?} vs {:?}", p.y, oracle);
    }

    #[test]
    fn projection_postconditions(seed in any::<u64>(), (m1, m2) in shapes()) {
        let tol = 1e-13;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = random_costs(&mut rng, m1, m2);
        let y = ModeMatrix::from_fn(m1, m2, |_, _| rng.gen_range(-4.0..=4.0));
        let p = project_oblique(&y, &costs, tol).unwrap();
        prop_assert!(in_qbar(&p.y, &costs, 2.0 * tol));
        for (i, j) in y.pairs() {
            let (dk, dl) = (p.dk[(i, j)], p.dl[(i, j)]);
            prop_assert!(dk >= 0.0 && dl >= 0.0 && dk * dl == 0.0);
            prop_assert!((y[(i, j)] - dk + dl - p.y[(i, j)]).abs() <= 1e-12);
        }
        let again = project_oblique(&p.y, &costs, tol).unwrap();
        prop_assert_eq!(again.dk.max_abs(), 0.0);
        prop_assert_eq!(again.dl.max_abs(), 0.0);
    }

    #[test]
    fn visiting_order_does_not_matter(seed in any::<u64>(), (m1, m2) in shapes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = random_costs(&mut rng, m1, m2);
        let y = ModeMatrix::from_fn(m1, m2, |_, _| rng.gen_range(-4.0..=4.0));
        let base = project_oblique(&y, &costs, 1e-14).unwrap().y;
        let mut visit: Vec<usize> = (0..m1 * m2).collect();
        for order in [SweepOrder::MinFirst, SweepOrder::MaxFirst] {
            visit.shuffle(&mut rng);
            let other = project_oblique_with(&y, &costs, 1e-14, order, Some(&visit)).unwrap().y;
            prop_assert!(base.max_abs_diff(&other) <= 1e-9);
        }
    }

    #[test]
    fn shifting_every_coordinate_keeps_membership(seed in any::<u64>(), (m1, m2) in shapes(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let costs = random_costs(&mut rng, m1, m2);
        let y = ModeMatrix::from_fn(m1, m2, |_, _| rng.gen_range(-4.0..=4.0));
        let inside = project_oblique(&y, &costs, 1e-14).unwrap().y;
        let moved = inside.map(|v| v + shift);
        prop_assert!(qbar_violation(&moved, &costs) <= 1e-12);
    }
}

#[test]
fn mixed_violation_instance_matches_oracle() {
    let costs = CostTables::uniform(2, 2, 1.0, 0.8);
    let y = ModeMatrix::from_rows(&[&[4.0, 0.0], &[0.0, 0.0]]).unwrap();
    let p = project_oblique(&y, &costs, 1e-14).unwrap();
    assert!(p.y.max_abs_diff(&jacobi_oracle(&y, &costs)) <= 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut visit = vec![0, 1, 2, 3];
    for order in [SweepOrder::MinFirst, SweepOrder::MaxFirst].repeat(10) {
        visit.shuffle(&mut rng);
        let other = project_oblique_with(&y, &costs, 1e-14, order, Some(&visit)).unwrap();
        assert!(p.y.max_abs_diff(&other.y) <= 1e-12);
    }
    assert!(in_qbar(&p.y, &costs, 1e-12));
}
