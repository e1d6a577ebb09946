//! Seeded random admissible games for property sweeps.

use rand::Rng;

use super::{
    check_loop_costs, project_oblique, validate_cost_matrices, CostTables, GameSpec,
    GeneratorSpec, ModeMatrix, TerminalSpec,
};

/// Off-diagonal costs drawn from `[lo, 2*lo)`, which makes every strict
/// triangle inequality hold. Redraws until no primary loop has zero cost.
pub fn random_costs<R: Rng + ?Sized>(rng: &mut R, m1: usize, m2: usize) -> CostTables {
    loop {
        let mut table = |m: usize, lo: f64| {
            (0..m * m)
                .map(|s| {
                    if s / m == s % m {
                        0.0
                    } else {
                        rng.gen_range(lo..2.0 * lo)
                    }
                })
                .collect::<Vec<_>>()
        };
        let k = table(m1, 0.5);
        let l = table(m2, 0.4);
        let costs = CostTables::new(m1, m2, k, l).expect("shapes are consistent");
        let loops_ok = check_loop_costs(&costs).is_ok_and(|r| r.is_ok());
        if validate_cost_matrices(&costs).is_ok() && loops_ok {
            return costs;
        }
    }
}

/// A uniform random matrix in `[-scale, scale]` projected onto the domain.
pub fn random_domain_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    costs: &CostTables,
    scale: f64,
) -> ModeMatrix {
    let raw = ModeMatrix::from_fn(costs.m1(), costs.m2(), |_, _| rng.gen_range(-scale..=scale));
    project_oblique(&raw, costs, 1e-14)
        .expect("admissible costs always project")
        .y
}

/// Random generator; Lipschitz constants stay below 1 so any step size works.
pub fn random_generator<R: Rng + ?Sized>(
    rng: &mut R,
    m1: usize,
    m2: usize,
    d: usize,
) -> GeneratorSpec {
    let c = ModeMatrix::from_fn(m1, m2, |_, _| rng.gen_range(-2.0..=2.0));
    if rng.gen_bool(0.5) {
        GeneratorSpec::ModeConstant { c }
    } else {
        GeneratorSpec::SaturatedAffine {
            a: rng.gen_range(-0.5..=0.5),
            b: (0..d).map(|_| rng.gen_range(-0.5..=0.5) / (d as f64).sqrt()).collect(),
            c,
            saturation: 2.0,
        }
    }
}

/// A path-dependent admissible game on a `steps`-step binary tree with `d = 1`
/// and horizon 1: random costs, random generator, and an independent random
/// domain matrix at every leaf.
pub fn random_admissible_spec<R: Rng + ?Sized>(
    rng: &mut R,
    m1: usize,
    m2: usize,
    steps: usize,
) -> GameSpec {
    let costs = random_costs(rng, m1, m2);
    let generator = random_generator(rng, m1, m2, 1);
    let leaves = 1usize << steps;
    let values = (0..leaves)
        .map(|_| random_domain_matrix(rng, &costs, 2.0))
        .collect();
    GameSpec::new(
        costs,
        generator,
        TerminalSpec::LeafTable { values },
        1.0,
        1,
    )
    .expect("sampled data satisfies every hypothesis")
}
