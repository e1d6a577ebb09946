//! Implicit backward induction for unreflected BSDE systems.
//!
//! At a node with children values `next`, the step solves
//! `y = E[next] + dt * psi(t, y, z)` by Picard iteration, where
//! `z_p = E[next * dW_p] / dt` is computed first and held fixed.

use crate::error::{Error, Result};
use crate::lattice::{coefficient_into, expectation_into, map_level, Filtration, ModeField};
use crate::spec_model::{GeneratorSpec, ModeMatrix, TerminalSpec};

/// Where a driver is being evaluated.
#[derive(Clone, Copy, Debug)]
pub struct NodeContext {
    pub node: usize,
    pub time_index: usize,
    pub t: f64,
}

/// A driver evaluated one coordinate at a time with the whole node state in view,
/// so penalty terms may couple coordinates.
///
/// `y` is the node's mode matrix (row-major, coordinate `s = i * m2 + j`);
/// `z` is coordinate-major, holding the `d` components of coordinate `s` at
/// `z[s * d .. (s + 1) * d]`.
pub trait Driver: Sync {
    fn value(&self, ctx: &NodeContext, y: &[f64], z: &[f64], s: usize) -> f64;
    /// Lipschitz constant used in the contraction check.
    fn lipschitz(&self) -> f64;
    /// Supremum of `|psi|` when bounded.
    fn sup_bound(&self) -> Option<f64>;
}

/// The raw generator of a game as a driver on an `m1 x m2` grid.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorDriver<'a> {
    pub generator: &'a GeneratorSpec,
    pub m2: usize,
    pub d: usize,
}

impl<'a> GeneratorDriver<'a> {
    pub fn new(generator: &'a GeneratorSpec, m2: usize, d: usize) -> Self {
        Self { generator, m2, d }
    }
}

impl Driver for GeneratorDriver<'_> {
    fn value(&self, ctx: &NodeContext, y: &[f64], z: &[f64], s: usize) -> f64 {
        self.generator.eval(
            ctx.t,
            y[s],
            &z[s * self.d..(s + 1) * self.d],
            s / self.m2,
            s % self.m2,
        )
    }

    fn lipschitz(&self) -> f64 {
        self.generator.lipschitz()
    }

    fn sup_bound(&self) -> Option<f64> {
        Some(self.generator.sup_norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Fails unless `dt * lipschitz < 1`.
pub fn check_contraction(dt: f64, lipschitz: f64, advice: impl FnOnce() -> String) -> Result<()> {
    let product = dt * lipschitz;
    if product >= 1.0 {
        return Err(Error::Contraction {
            dt,
            lipschitz,
            product,
            advice: advice(),
        });
    }
    Ok(())
}

/// Smallest step count making the implicit step a contraction.
pub fn min_steps_for(horizon: f64, lipschitz: f64) -> usize {
    (horizon * lipschitz).floor() as usize + 1
}

pub(crate) fn context<F: Filtration + ?Sized>(f: &F, node: usize) -> NodeContext {
    let time_index = f.time_index(node);
    NodeContext {
        node,
        time_index,
        t: time_index as f64 * f.dt(),
    }
}

/// Conditional expectation and packed martingale coefficients of `next` at `node`.
pub(crate) fn moments<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    next: &ModeField,
    x: &mut [f64],
    z: &mut [f64],
) {
    let mm = x.len();
    let d = f.dimension();
    expectation_into(f, node, next, x);
    let mut buf = vec![0.0; mm];
    for p in 0..d {
        coefficient_into(f, node, next, p, &mut buf);
        for s in 0..mm {
            z[s * d + p] = buf[s];
        }
    }
}

/// Picard iteration for `y = x + dt * driver(y, z)` from `y = x`. Returns the
/// number of iterations.
pub(crate) fn picard<D: Driver + ?Sized>(
    driver: &D,
    ctx: &NodeContext,
    dt: f64,
    x: &[f64],
    z: &[f64],
    opts: &PicardOptions,
    y: &mut [f64],
) -> Result<usize> {
    y.copy_from_slice(x);
    let mut next = vec![0.0; x.len()];
    let mut change = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        for s in 0..x.len() {
            next[s] = x[s] + dt * driver.value(ctx, y, z, s);
        }
        change = next
            .iter()
            .zip(y.iter())
            .fold(0.0, |a, (u, v)| a.max((u - v).abs()));
        y.copy_from_slice(&next);
        if change <= opts.tol {
            return Ok(iter);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_change: change,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub y: ModeMatrix,
    /// One matrix per Brownian component.
    pub z: Vec<ModeMatrix>,
    pub iterations: usize,
}

pub(crate) fn unpack_z(z: &[f64], m1: usize, m2: usize, d: usize) -> Vec<ModeMatrix> {
    (0..d)
        .map(|p| ModeMatrix::from_fn(m1, m2, |i, j| z[(i * m2 + j) * d + p]))
        .collect()
}

/// One implicit step at an interior node.
pub fn bsde_step<F: Filtration + ?Sized, D: Driver + ?Sized>(
    f: &F,
    node: usize,
    next: &ModeField,
    driver: &D,
    opts: &PicardOptions,
) -> Result<StepOutput> {
    if f.is_leaf(node) {
        return Err(Error::Usage(format!("node {node} is a leaf")));
    }
    check_contraction(f.dt(), driver.lipschitz(), || {
        format!(
            "use at least N = {} steps",
            min_steps_for(f.horizon(), driver.lipschitz())
        )
    })?;
    let (m1, m2, d) = (next.m1(), next.m2(), f.dimension());
    let mut x = vec![0.0; m1 * m2];
    let mut z = vec![0.0; m1 * m2 * d];
    moments(f, node, next, &mut x, &mut z);
    let mut y = vec![0.0; m1 * m2];
    let iterations = picard(driver, &context(f, node), f.dt(), &x, &z, opts, &mut y)?;
    Ok(StepOutput {
        y: ModeMatrix::from_row_major(m1, m2, y)?,
        z: unpack_z(&z, m1, m2, d),
        iterations,
    })
}

/// Terminal values at every leaf (other nodes zero).
pub fn terminal_field<F: Filtration + ?Sized>(
    f: &F,
    terminal: &TerminalSpec,
    m1: usize,
    m2: usize,
) -> Result<ModeField> {
    let leaves = f.level(f.steps());
    if let TerminalSpec::LeafTable { values } = terminal {
        if !f.is_path_tree() {
            return Err(Error::Usage(
                "leaf-table terminal values need a path tree, not a recombining lattice".into(),
            ));
        }
        if values.len() != leaves.len() {
            return Err(Error::Shape(format!(
                "leaf table has {} entries but the tree has {} leaves",
                values.len(),
                leaves.len()
            )));
        }
    }
    let mut field = ModeField::zeros(f.node_count(), m1, m2);
    for leaf in leaves {
        let xi = terminal.evaluate(&f.w_state(leaf), f.leaf_ordinal(leaf));
        if xi.shape() != (m1, m2) {
            return Err(Error::Shape(format!(
                "terminal matrix is {:?}, expected ({m1}, {m2})",
                xi.shape()
            )));
        }
        field.set_matrix(leaf, &xi);
    }
    Ok(field)
}

#[derive(Clone, Debug)]
pub struct BsdeSolution {
    pub y: ModeField,
    pub z: Vec<ModeField>,
    pub max_iterations: usize,
}

/// Full backward solve with leaf values taken from `terminal`.
pub fn solve_system<F: Filtration + ?Sized, D: Driver + ?Sized>(
    f: &F,
    driver: &D,
    terminal: &ModeField,
    opts: &PicardOptions,
) -> Result<BsdeSolution> {
    check_contraction(f.dt(), driver.lipschitz(), || {
        format!(
            "use at least N = {} steps",
            min_steps_for(f.horizon(), driver.lipschitz())
        )
    })?;
    let (m1, m2, d) = (terminal.m1(), terminal.m2(), f.dimension());
    let mm = m1 * m2;
    let mut y = terminal.clone();
    let mut z = vec![ModeField::zeros(f.node_count(), m1, m2); d];
    let mut max_iterations = 0;
    for t in (0..f.steps()).rev() {
        let results = map_level(f, t, |node| -> Result<(Vec<f64>, Vec<f64>, usize)> {
            let mut x = vec![0.0; mm];
            let mut zn = vec![0.0; mm * d];
            moments(f, node, &y, &mut x, &mut zn);
            let mut yn = vec![0.0; mm];
            let it = picard(driver, &context(f, node), f.dt(), &x, &zn, opts, &mut yn)?;
            Ok((yn, zn, it))
        });
        for (node, r) in f.level(t).zip(results) {
            let (yn, zn, it) = r?;
            y.node_slice_mut(node).copy_from_slice(&yn);
            for (p, zp) in z.iter_mut().enumerate() {
                let out = zp.node_slice_mut(node);
                for s in 0..mm {
                    out[s] = zn[s * d + p];
                }
            }
            max_iterations = max_iterations.max(it);
        }
    }
    Ok(BsdeSolution {
        y,
        z,
        max_iterations,
    })
}

/// Largest `|y - E[next] - dt * driver|` over interior nodes.
pub fn residual<F: Filtration + ?Sized, D: Driver + ?Sized>(
    f: &F,
    driver: &D,
    sol: &BsdeSolution,
) -> f64 {
    let (m1, m2, d) = (sol.y.m1(), sol.y.m2(), f.dimension());
    let mm = m1 * m2;
    (0..f.interior_count())
        .map(|node| {
            let mut x = vec![0.0; mm];
            let mut z = vec![0.0; mm * d];
            moments(f, node, &sol.y, &mut x, &mut z);
            let y = sol.y.node_slice(node);
            let ctx = context(f, node);
            (0..mm)
                .map(|s| (y[s] - x[s] - f.dt() * driver.value(&ctx, y, &z, s)).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_tree;

    fn one_step_field(up: f64, down: f64) -> ModeField {
        let mut f = ModeField::zeros(3, 1, 1);
        f.set(1, 0, 0, down);
        f.set(2, 0, 0, up);
        f
    }

    #[test]
    fn zero_driver_is_expectation() {
        let tree = build_tree(1, 1, 1.0).unwrap();
        let g = GeneratorSpec::Zero;
        let out = bsde_step(&tree, 0, &one_step_field(3.0, 1.0), &GeneratorDriver::new(&g, 1, 1), &PicardOptions::default()).unwrap();
        assert_eq!(out.y[(0, 0)], 2.0);
        assert_eq!(out.z[0][(0, 0)], 1.0);
    }

    #[test]
    fn constant_driver_adds_dt_c() {
        let tree = build_tree(2, 1, 1.0).unwrap();
        let g = GeneratorSpec::ModeConstant {
            c: ModeMatrix::filled(1, 1, 3.0),
        };
        let mut next = ModeField::zeros(7, 1, 1);
        for (n, v) in [(3, 1.0), (4, 2.0)] {
            next.set(n, 0, 0, v);
        }
        let out = bsde_step(&tree, 1, &next, &GeneratorDriver::new(&g, 1, 1), &PicardOptions::default()).unwrap();
        assert_eq!(out.y[(0, 0)], 1.5 + 0.5 * 3.0);
    }

    #[test]
    fn linear_driver_matches_closed_form() {
        let tree = build_tree(2, 1, 1.0).unwrap();
        let g = GeneratorSpec::SaturatedAffine {
            a: -1.0,
            b: vec![0.0],
            c: ModeMatrix::zeros(1, 1),
            saturation: 1e12,
        };
        let mut next = ModeField::zeros(7, 1, 1);
        next.set(3, 0, 0, 1.0);
        next.set(4, 0, 0, 2.0);
        let opts = PicardOptions { tol: 1e-14, max_iter: 200 };
        let out = bsde_step(&tree, 1, &next, &GeneratorDriver::new(&g, 1, 1), &opts).unwrap();
        assert!((out.y[(0, 0)] - 1.5 / 1.5).abs() < 1e-13);
    }

    #[test]
    fn contraction_and_leaf_errors() {
        let tree = build_tree(1, 1, 1.0).unwrap();
        let g = GeneratorSpec::SaturatedAffine {
            a: 2.0,
            b: vec![0.0],
            c: ModeMatrix::zeros(1, 1),
            saturation: 1.0,
        };
        let next = one_step_field(0.0, 0.0);
        let d = GeneratorDriver::new(&g, 1, 1);
        match bsde_step(&tree, 0, &next, &d, &PicardOptions::default()) {
            Err(Error::Contraction { advice, .. }) => assert!(advice.contains("N = 3")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(bsde_step(&tree, 1, &next, &GeneratorDriver::new(&GeneratorSpec::Zero, 1, 1), &PicardOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let tree = build_tree(2, 1, 1.0).unwrap();
        let g = GeneratorSpec::SaturatedAffine {
            a: -0.9,
            b: vec![0.0],
            c: ModeMatrix::zeros(1, 1),
            saturation: 1e9,
        };
        let mut next = ModeField::zeros(7, 1, 1);
        next.set(3, 0, 0, 1.0);
        let opts = PicardOptions { tol: 1e-15, max_iter: 3 };
        assert!(matches!(
            bsde_step(&tree, 1, &next, &GeneratorDriver::new(&g, 1, 1), &opts),
            Err(Error::NoConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn constant_terminal_is_a_martingale() {
        let tree = build_tree(4, 2, 1.0).unwrap();
        let c = ModeMatrix::from_rows(&[&[1.0, 2.0], &[0.5, -1.0]]).unwrap();
        let xi = terminal_field(&tree, &TerminalSpec::Constant { value: c.clone() }, 2, 2).unwrap();
        let g = GeneratorSpec::Zero;
        let sol = solve_system(&tree, &GeneratorDriver::new(&g, 2, 2), &xi, &PicardOptions::default()).unwrap();
        for node in 0..tree.node_count() {
            assert_eq!(sol.y.matrix(node), c);
        }
        assert_eq!(sol.z[1].max_abs(), 0.0);
    }

    #[test]
    fn brownian_terminal_recovers_w_state() {
        let tree = build_tree(5, 1, 2.0).unwrap();
        let term = TerminalSpec::Affine {
            alpha: ModeMatrix::zeros(1, 1),
            beta: ModeMatrix::filled(1, 1, 1.0),
        };
        let xi = terminal_field(&tree, &term, 1, 1).unwrap();
        let g = GeneratorSpec::Zero;
        let sol = solve_system(&tree, &GeneratorDriver::new(&g, 1, 1), &xi, &PicardOptions::default()).unwrap();
        for node in 0..tree.node_count() {
            assert!((sol.y.get(node, 0, 0) - tree.w_state(node)[0]).abs() < 1e-13);
        }
        for node in 0..tree.interior_count() {
            assert!((sol.z[0].get(node, 0, 0) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_driver_telescopes() {
        let tree = build_tree(6, 1, 1.5).unwrap();
        let c = ModeMatrix::from_rows(&[&[2.0, -2.0]]).unwrap();
        let g = GeneratorSpec::ModeConstant { c: c.clone() };
        let xi = ModeField::zeros(tree.node_count(), 1, 2);
        let sol = solve_system(&tree, &GeneratorDriver::new(&g, 2, 1), &xi, &PicardOptions::default()).unwrap();
        assert!((sol.y.get(0, 0, 0) - 3.0).abs() < 1e-12);
        assert!((sol.y.get(0, 0, 1) + 3.0).abs() < 1e-12);
    }
}
