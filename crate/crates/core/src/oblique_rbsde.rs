//! Direct dynamic-programming solver for the obliquely reflected system.
//!
//! Each step runs the implicit BSDE step with the raw generator and then
//! projects the result onto the domain. `Z` is the pre-projection coefficient.

use std::io::Write;

use serde::Serialize;

use crate::bsde_core::{
    check_contraction, context, min_steps_for, moments, picard, terminal_field, unpack_z,
    GeneratorDriver, PicardOptions,
};
use crate::error::{Error, Result};
use crate::lattice::{map_level, Filtration, ModeField};
use crate::spec_model::{
    lower_barrier, project_oblique_with, project_upper, qbar_violation, upper_barrier, GameSpec,
    ModeMatrix, SweepOrder,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Constraints {
    #[default]
    Both,
    /// Drop the lower barriers (Player II never switches).
    UpperOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbsdeOptions {
    pub picard: PicardOptions,
    pub projection_tol: f64,
    /// Allowed domain violation of terminal values.
    pub terminal_tol: f64,
    pub order: SweepOrder,
    pub constraints: Constraints,
}

impl Default for RbsdeOptions {
    fn default() -> Self {
        Self {
            picard: PicardOptions::default(),
            projection_tol: 1e-13,
            terminal_tol: 1e-12,
            order: SweepOrder::MinFirst,
            constraints: Constraints::Both,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RbsdeSolution {
    pub y: ModeField,
    pub z: Vec<ModeField>,
    /// Downward push applied at each node (over the step leaving it).
    pub dk: ModeField,
    /// Upward push applied at each node.
    pub dl: ModeField,
    /// Path-cumulative pushes, zero at the root; only on path trees.
    pub k_cum: Option<ModeField>,
    pub l_cum: Option<ModeField>,
    pub max_picard_iterations: usize,
    pub max_projection_sweeps: usize,
}

impl RbsdeSolution {
    pub fn root(&self) -> ModeMatrix {
        self.y.matrix(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbsdeStep {
    pub y: ModeMatrix,
    pub z: Vec<ModeMatrix>,
    pub dk: ModeMatrix,
    pub dl: ModeMatrix,
    pub iterations: usize,
    pub sweeps: usize,
}

/// Leaf values, rejecting any leaf outside the domain.
pub fn checked_terminal<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    tol: f64,
) -> Result<ModeField> {
    let field = terminal_field(f, spec.terminal(), spec.m1(), spec.m2())?;
    let costs = spec.costs();
    for leaf in f.level(f.steps()) {
        let xi = field.matrix(leaf);
        if qbar_violation(&xi, costs) > tol {
            let (i, j, excess) = xi
                .pairs()
                .map(|(i, j)| {
                    let v = xi[(i, j)];
                    let e = (v - upper_barrier(&xi, costs, i, j))
                        .max(lower_barrier(&xi, costs, i, j) - v);
                    (i, j, e)
                })
                .fold((0, 0, f64::NEG_INFINITY), |a, b| if b.2 > a.2 { b } else { a });
            return Err(Error::TerminalOutsideDomain {
                leaf: f.leaf_ordinal(leaf),
                i,
                j,
                excess,
            });
        }
    }
    Ok(field)
}

fn contraction<F: Filtration + ?Sized>(spec: &GameSpec, f: &F) -> Result<()> {
    let c = spec.generator().lipschitz();
    check_contraction(f.dt(), c, || {
        format!("use at least N = {} steps", min_steps_for(f.horizon(), c))
    })
}

fn step_packed<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    next: &ModeField,
    spec: &GameSpec,
    opts: &RbsdeOptions,
) -> Result<RbsdeStep> {
    let (m1, m2, d) = (spec.m1(), spec.m2(), f.dimension());
    let mm = m1 * m2;
    let driver = GeneratorDriver::new(spec.generator(), m2, d);
    let mut x = vec![0.0; mm];
    let mut z = vec![0.0; mm * d];
    moments(f, node, next, &mut x, &mut z);
    let mut yt = vec![0.0; mm];
    let iterations = picard(&driver, &context(f, node), f.dt(), &x, &z, &opts.picard, &mut yt)?;
    let yt = ModeMatrix::from_row_major(m1, m2, yt)?;
    let (y, dk, dl, sweeps) = match opts.constraints {
        Constraints::Both => {
            let p = project_oblique_with(&yt, spec.costs(), opts.projection_tol, opts.order, None)?;
            (p.y, p.dk, p.dl, p.sweeps)
        }
        Constraints::UpperOnly => {
            let (y, dk) = project_upper(&yt, spec.costs());
            (y, dk, ModeMatrix::zeros(m1, m2), 0)
        }
    };
    Ok(RbsdeStep {
        y,
        z: unpack_z(&z, m1, m2, d),
        dk,
        dl,
        iterations,
        sweeps,
    })
}

/// Implicit step with the raw generator followed by the oblique projection.
pub fn rbsde_step<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    next: &ModeField,
    spec: &GameSpec,
    opts: &RbsdeOptions,
) -> Result<RbsdeStep> {
    if f.is_leaf(node) {
        return Err(Error::Usage(format!("node {node} is a leaf")));
    }
    contraction(spec, f)?;
    step_packed(f, node, next, spec, opts)
}

pub fn solve_rbsde<F: Filtration + ?Sized>(spec: &GameSpec, f: &F) -> Result<RbsdeSolution> {
    solve_rbsde_with(spec, f, &RbsdeOptions::default())
}

pub fn solve_rbsde_with<F: Filtration + ?Sized>(
    spec: &GameSpec,
    f: &F,
    opts: &RbsdeOptions,
) -> Result<RbsdeSolution> {
    if spec.dimension() != f.dimension() {
        return Err(Error::Shape(format!(
            "game has dimension {} but the filtration has {}",
            spec.dimension(),
            f.dimension()
        )));
    }
    contraction(spec, f)?;
    let (m1, m2, d) = (spec.m1(), spec.m2(), f.dimension());
    let nodes = f.node_count();
    let mut y = checked_terminal(spec, f, opts.terminal_tol)?;
    let mut z = vec![ModeField::zeros(nodes, m1, m2); d];
    let mut dk = ModeField::zeros(nodes, m1, m2);
    let mut dl = ModeField::zeros(nodes, m1, m2);
    let (mut max_it, mut max_sw) = (0, 0);
    for t in (0..f.steps()).rev() {
        let results = map_level(f, t, |node| step_packed(f, node, &y, spec, opts));
        for (node, r) in f.level(t).zip(results) {
            let step = r?;
            y.set_matrix(node, &step.y);
            dk.set_matrix(node, &step.dk);
            dl.set_matrix(node, &step.dl);
            for (zp, m) in z.iter_mut().zip(&step.z) {
                zp.set_matrix(node, m);
            }
            max_it = max_it.max(step.iterations);
            max_sw = max_sw.max(step.sweeps);
        }
    }
    let (k_cum, l_cum) = if f.is_path_tree() {
        (Some(cumulate(f, &dk)), Some(cumulate(f, &dl)))
    } else {
        (None, None)
    };
    Ok(RbsdeSolution {
        y,
        z,
        dk,
        dl,
        k_cum,
        l_cum,
        max_picard_iterations: max_it,
        max_projection_sweeps: max_sw,
    })
}

/// Root-to-node sums of per-node increments, excluding the node's own.
pub(crate) fn cumulate<F: Filtration + ?Sized>(f: &F, inc: &ModeField) -> ModeField {
    let mut out = ModeField::zeros(f.node_count(), inc.m1(), inc.m2());
    for node in 1..f.node_count() {
        let p = f.parent(node).expect("path tree nodes have parents");
        let acc: Vec<f64> = out
            .node_slice(p)
            .iter()
            .zip(inc.node_slice(p))
            .map(|(a, b)| a + b)
            .collect();
        out.node_slice_mut(node).copy_from_slice(&acc);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Barrier {
    Upper,
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimalityViolation {
    pub node: usize,
    pub i: usize,
    pub j: usize,
    pub barrier: Barrier,
    pub push: f64,
    /// Distance from the barrier the push acted on.
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MinimalityReport {
    pub pushes_checked: usize,
    pub violations: Vec<MinimalityViolation>,
}

impl MinimalityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every push larger than `push_tol` acts on a binding barrier,
/// within `tol`.
pub fn check_minimality(
    sol: &RbsdeSolution,
    spec: &GameSpec,
    push_tol: f64,
    tol: f64,
) -> MinimalityReport {
    let costs = spec.costs();
    let mut report = MinimalityReport::default();
    for node in 0..sol.y.nodes() {
        let y = sol.y.matrix(node);
        for (i, j) in y.pairs() {
            for (barrier, push) in [
                (Barrier::Upper, sol.dk.get(node, i, j)),
                (Barrier::Lower, sol.dl.get(node, i, j)),
            ] {
                if push <= push_tol {
                    continue;
                }
                report.pushes_checked += 1;
                let level = match barrier {
                    Barrier::Upper => upper_barrier(&y, costs, i, j),
                    Barrier::Lower => lower_barrier(&y, costs, i, j),
                };
                let gap = (y[(i, j)] - level).abs();
                if gap > tol || gap.is_nan() {
                    report.violations.push(MinimalityViolation {
                        node,
                        i,
                        j,
                        barrier,
                        push,
                        gap,
                    });
                }
            }
        }
    }
    report
}

/// Largest domain violation over all nodes.
pub fn max_domain_violation(sol: &RbsdeSolution, spec: &GameSpec) -> f64 {
    (0..sol.y.nodes())
        .map(|n| qbar_violation(&sol.y.matrix(n), spec.costs()))
        .fold(0.0, f64::max)
}

/// Largest `min(dK, dL)` over all nodes and coordinates.
pub fn max_complementarity(sol: &RbsdeSolution) -> f64 {
    sol.dk
        .as_slice()
        .iter()
        .zip(sol.dl.as_slice())
        .map(|(a, b)| a.min(*b))
        .fold(0.0, f64::max)
}

/// Writes one row per node and mode pair. Cumulative columns are empty on
/// recombining lattices.
pub fn export_csv<F: Filtration + ?Sized, W: Write>(
    sol: &RbsdeSolution,
    f: &F,
    out: W,
) -> Result<()> {
    let d = f.dimension();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = vec!["node".into(), "time_index".into()];
    header.extend((1..=d).map(|p| format!("w{p}")));
    header.extend(["i", "j", "y"].map(String::from));
    header.extend((1..=d).map(|p| format!("z{p}")));
    header.extend(["dk", "dl", "k_cum", "l_cum"].map(String::from));
    w.write_record(&header).map_err(io_err)?;
    for node in 0..f.node_count() {
        let ws = f.w_state(node);
        for i in 0..sol.y.m1() {
            for j in 0..sol.y.m2() {
                let mut row = vec![node.to_string(), f.time_index(node).to_string()];
                row.extend(ws.iter().map(|v| v.to_string()));
                row.extend([i.to_string(), j.to_string(), sol.y.get(node, i, j).to_string()]);
                row.extend(sol.z.iter().map(|zp| zp.get(node, i, j).to_string()));
                row.push(sol.dk.get(node, i, j).to_string());
                row.push(sol.dl.get(node, i, j).to_string());
                for cum in [&sol.k_cum, &sol.l_cum] {
                    row.push(cum.as_ref().map_or(String::new(), |c| c.get(node, i, j).to_string()));
                }
                w.write_record(&row).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Usage(format!("write failed: {e}")))?;
    Ok(())
}

fn io_err(e: csv::Error) -> Error {
    Error::Usage(format!("write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_tree;
    use crate::spec_model::{CostTables, GeneratorSpec, TerminalSpec};

    fn spec(costs: CostTables, xi: TerminalSpec, g: GeneratorSpec) -> GameSpec {
        GameSpec::new(costs, g, xi, 1.0, 1).unwrap()
    }

    #[test]
    fn constant_interior_terminal_never_pushes() {
        let costs = CostTables::uniform(2, 2, 1.0, 0.8);
        let c = ModeMatrix::from_rows(&[&[0.2, 0.1], &[0.0, 0.3]]).unwrap();
        let s = spec(costs, TerminalSpec::Constant { value: c.clone() }, GeneratorSpec::Zero);
        let tree = build_tree(5, 1, 1.0).unwrap();
        let sol = solve_rbsde(&s, &tree).unwrap();
        for node in 0..tree.node_count() {
            assert_eq!(sol.y.matrix(node), c);
        }
        assert_eq!(sol.dk.max_abs(), 0.0);
        assert_eq!(sol.dl.max_abs(), 0.0);
        assert_eq!(sol.k_cum.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn single_clamp_step() {
        let costs = CostTables::uniform(2, 1, 1.0, 0.0);
        let s = spec(
            costs,
            TerminalSpec::Constant {
                value: ModeMatrix::zeros(2, 1),
            },
            GeneratorSpec::Zero,
        );
        let tree = build_tree(1, 1, 1.0).unwrap();
        let mut next = ModeField::zeros(3, 2, 1);
        for leaf in 1..3 {
            next.set(leaf, 0, 0, 3.0);
        }
        let step = rbsde_step(&tree, 0, &next, &s, &RbsdeOptions::default()).unwrap();
        assert_eq!(step.y.as_slice(), &[1.0, 0.0]);
        assert_eq!(step.dk.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn terminal_outside_domain_names_leaf_and_pair() {
        let costs = CostTables::uniform(2, 1, 1.0, 0.0);
        let mut values = vec![ModeMatrix::zeros(2, 1); 4];
        values[2] = ModeMatrix::from_row_major(2, 1, vec![0.0, 1.5]).unwrap();
        let s = spec(costs, TerminalSpec::LeafTable { values }, GeneratorSpec::Zero);
        let tree = build_tree(2, 1, 1.0).unwrap();
        match solve_rbsde(&s, &tree) {
            Err(Error::TerminalOutsideDomain { leaf, i, j, excess }) => {
                assert_eq!((leaf, i, j), (2, 1, 0));
                assert!((excess - 0.5).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clamped_coordinate_sits_on_barrier() {
        let costs = CostTables::uniform(2, 1, 1.0, 0.0);
        let g = GeneratorSpec::ModeConstant {
            c: ModeMatrix::from_row_major(2, 1, vec![3.0, 0.0]).unwrap(),
        };
        let s = spec(costs, TerminalSpec::Constant { value: ModeMatrix::zeros(2, 1) }, g);
        let tree = build_tree(4, 1, 1.0).unwrap();
        let sol = solve_rbsde(&s, &tree).unwrap();
        let report = check_minimality(&sol, &s, 1e-9, 1e-12);
        assert!(report.pushes_checked > 0);
        assert!(report.is_ok(), "{report:?}");
        for node in 0..tree.interior_count() {
            assert!(sol.dk.get(node, 1, 0) == 0.0);
        }
        assert!(max_domain_violation(&sol, &s) < 1e-12);
    }

    #[test]
    fn export_has_one_row_per_node_and_pair() {
        let costs = CostTables::uniform(2, 2, 1.0, 0.8);
        let s = spec(
            costs,
            TerminalSpec::Constant {
                value: ModeMatrix::zeros(2, 2),
            },
            GeneratorSpec::Zero,
        );
        let tree = build_tree(2, 1, 1.0).unwrap();
        let sol = solve_rbsde(&s, &tree).unwrap();
        let mut buf = Vec::new();
        export_csv(&sol, &tree, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 7 * 4);
        assert!(text.starts_with("node,time_index,w1,i,j,y,z1,dk,dl,k_cum,l_cum"));
    }
}
