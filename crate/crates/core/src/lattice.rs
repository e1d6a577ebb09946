//! Exact discrete Brownian filtrations.
//!
//! Every non-leaf node has `2^d` children; branch `b` moves component `p` by
//! `+sqrt(dt)` when bit `p` of `b` is set and by `-sqrt(dt)` otherwise, each
//! with probability `2^-d`. Conditional expectations are therefore exact sums.
//!
//! Nodes are numbered level by level, so every level occupies a contiguous
//! range of node ids and the leaves come last.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spec_model::ModeMatrix;

pub const DEFAULT_NODE_CAP: usize = 1 << 22;

/// Levels smaller than this are processed sequentially.
const PAR_THRESHOLD: usize = 64;

/// Common interface of the path tree and the recombining lattice.
pub trait Filtration: Sync {
    fn steps(&self) -> usize;
    fn dimension(&self) -> usize;
    fn horizon(&self) -> f64;
    fn node_count(&self) -> usize;
    /// Node ids at time index `t`.
    fn level(&self, t: usize) -> Range<usize>;
    fn time_index(&self, node: usize) -> usize;
    fn child(&self, node: usize, branch: usize) -> usize;
    /// The W-state of `node`, one entry per Brownian component.
    fn w_state(&self, node: usize) -> Vec<f64>;
    /// Unique parent on a path tree; `None` at the root and on recombining lattices.
    fn parent(&self, node: usize) -> Option<usize>;
    /// Whether each node identifies a unique path (needed for path-dependent data).
    fn is_path_tree(&self) -> bool;

    fn dt(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }

    fn branches(&self) -> usize {
        1 << self.dimension()
    }

    fn branch_probability(&self) -> f64 {
        1.0 / self.branches() as f64
    }

    fn branch_increment(&self, branch: usize, p: usize) -> f64 {
        let s = self.dt().sqrt();
        if branch >> p & 1 == 1 {
            s
        } else {
            -s
        }
    }

    fn is_leaf(&self, node: usize) -> bool {
        node >= self.level(self.steps()).start
    }

    /// Interior nodes are exactly `0..interior_count()`.
    fn interior_count(&self) -> usize {
        self.level(self.steps()).start
    }

    fn leaf_ordinal(&self, node: usize) -> usize {
        node - self.level(self.steps()).start
    }

    fn time(&self, node: usize) -> f64 {
        self.time_index(node) as f64 * self.dt()
    }
}

fn check_shape(steps: usize, d: usize, horizon: f64) -> Result<()> {
    if steps == 0 || d == 0 {
        return Err(Error::Usage(format!(
            "tree needs at least one step and one dimension (got N = {steps}, d = {d})"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Usage(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(())
}

/// Non-recombining binary tree: node ids identify full paths.
#[derive(Clone, Debug)]
pub struct PathTree {
    steps: usize,
    d: usize,
    horizon: f64,
    offsets: Vec<usize>,
    w: Vec<f64>,
}

pub fn build_tree(steps: usize, d: usize, horizon: f64) -> Result<PathTree> {
    PathTree::with_cap(steps, d, horizon, DEFAULT_NODE_CAP)
}

impl PathTree {
    /// Node count `sum_{t=0..N} 2^(d t)`, computed without overflow.
    pub fn count_nodes(steps: usize, d: usize) -> u128 {
        (0..=steps)
            .map(|t| {
                let e = (d * t) as u32;
                if e >= 127 {
                    u128::MAX / 2
                } else {
                    1u128 << e
                }
            })
            .fold(0u128, |a, b| a.saturating_add(b))
    }

    pub fn with_cap(steps: usize, d: usize, horizon: f64, cap: usize) -> Result<Self> {
        check_shape(steps, d, horizon)?;
        let nodes = Self::count_nodes(steps, d);
        if nodes > cap as u128 {
            return Err(Error::NodeCap {
                nodes,
                cap: cap as u128,
            });
        }
        let mut offsets = Vec::with_capacity(steps + 2);
        let mut acc = 0usize;
        for t in 0..=steps {
            offsets.push(acc);
            acc += 1 << (d * t);
        }
        offsets.push(acc);
        let sq = (horizon / steps as f64).sqrt();
        let mut w = vec![0.0; acc * d];
        for t in 1..=steps {
            for q in 0..(1usize << (d * t)) {
                let node = offsets[t] + q;
                let parent = offsets[t - 1] + (q >> d);
                let branch = q & ((1 << d) - 1);
                for p in 0..d {
                    let inc = if branch >> p & 1 == 1 { sq } else { -sq };
                    w[node * d + p] = w[parent * d + p] + inc;
                }
            }
        }
        Ok(Self {
            steps,
            d,
            horizon,
            offsets,
            w,
        })
    }

    /// Children of a non-leaf node as a contiguous id range.
    pub fn children(&self, node: usize) -> Range<usize> {
        let first = self.child(node, 0);
        first..first + self.branches()
    }

    /// Node ids from the root down to `node`.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

impl Filtration for PathTree {
    fn steps(&self) -> usize {
        self.steps
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn node_count(&self) -> usize {
        self.offsets[self.steps + 1]
    }

    fn level(&self, t: usize) -> Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    fn time_index(&self, node: usize) -> usize {
        self.offsets.partition_point(|&o| o <= node) - 1
    }

    fn child(&self, node: usize, branch: usize) -> usize {
        let t = self.time_index(node);
        let q = node - self.offsets[t];
        self.offsets[t + 1] + (q << self.d) + branch
    }

    fn w_state(&self, node: usize) -> Vec<f64> {
        self.w[node * self.d..(node + 1) * self.d].to_vec()
    }

    fn parent(&self, node: usize) -> Option<usize> {
        let t = self.time_index(node);
        (t > 0).then(|| self.offsets[t - 1] + ((node - self.offsets[t]) >> self.d))
    }

    fn is_path_tree(&self) -> bool {
        true
    }
}

/// Recombining lattice: level `t` holds `(t+1)^d` nodes indexed by the number
/// of up-moves per component. Only valid for Markovian data.
#[derive(Clone, Debug)]
pub struct RecombiningLattice {
    steps: usize,
    d: usize,
    horizon: f64,
    offsets: Vec<usize>,
}

impl RecombiningLattice {
    pub fn new(steps: usize, d: usize, horizon: f64) -> Result<Self> {
        Self::with_cap(steps, d, horizon, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(steps: usize, d: usize, horizon: f64, cap: usize) -> Result<Self> {
        check_shape(steps, d, horizon)?;
        let nodes: u128 = (0..=steps)
            .map(|t| (t as u128 + 1).saturating_pow(d as u32))
            .fold(0, |a: u128, b| a.saturating_add(b));
        if nodes > cap as u128 {
            return Err(Error::NodeCap {
                nodes,
                cap: cap as u128,
            });
        }
        let mut offsets = Vec::with_capacity(steps + 2);
        let mut acc = 0usize;
        for t in 0..=steps {
            offsets.push(acc);
            acc += (t + 1).pow(d as u32);
        }
        offsets.push(acc);
        Ok(Self {
            steps,
            d,
            horizon,
            offsets,
        })
    }

    fn ups(&self, node: usize) -> (usize, Vec<usize>) {
        let t = self.time_index(node);
        let mut q = node - self.offsets[t];
        let ups = (0..self.d)
            .map(|_| {
                let u = q % (t + 1);
                q /= t + 1;
                u
            })
            .collect();
        (t, ups)
    }
}

impl Filtration for RecombiningLattice {
    fn steps(&self) -> usize {
        self.steps
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn node_count(&self) -> usize {
        self.offsets[self.steps + 1]
    }

    fn level(&self, t: usize) -> Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    fn time_index(&self, node: usize) -> usize {
        self.offsets.partition_point(|&o| o <= node) - 1
    }

    fn child(&self, node: usize, branch: usize) -> usize {
        let (t, ups) = self.ups(node);
        let radix = t + 2;
        let mut q = 0;
        for p in (0..self.d).rev() {
            q = q * radix + ups[p] + (branch >> p & 1);
        }
        self.offsets[t + 1] + q
    }

    fn w_state(&self, node: usize) -> Vec<f64> {
        let (t, ups) = self.ups(node);
        let sq = self.dt().sqrt();
        ups.iter()
            .map(|&u| (2.0 * u as f64 - t as f64) * sq)
            .collect()
    }

    fn parent(&self, _node: usize) -> Option<usize> {
        None
    }

    fn is_path_tree(&self) -> bool {
        false
    }
}

/// One mode matrix per node of a filtration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeField {
    m1: usize,
    m2: usize,
    data: Vec<f64>,
}

impl ModeField {
    pub fn zeros(nodes: usize, m1: usize, m2: usize) -> Self {
        Self::filled(nodes, m1, m2, 0.0)
    }

    pub fn filled(nodes: usize, m1: usize, m2: usize, value: f64) -> Self {
        Self {
            m1,
            m2,
            data: vec![value; nodes * m1 * m2],
        }
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / (self.m1 * self.m2)
    }

    fn stride(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn get(&self, node: usize, i: usize, j: usize) -> f64 {
        self.data[node * self.stride() + i * self.m2 + j]
    }

    pub fn set(&mut self, node: usize, i: usize, j: usize, v: f64) {
        let s = self.stride();
        self.data[node * s + i * self.m2 + j] = v;
    }

    pub fn node_slice(&self, node: usize) -> &[f64] {
        let s = self.stride();
        &self.data[node * s..(node + 1) * s]
    }

    pub fn node_slice_mut(&mut self, node: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.data[node * s..(node + 1) * s]
    }

    pub fn matrix(&self, node: usize) -> ModeMatrix {
        ModeMatrix::from_row_major(self.m1, self.m2, self.node_slice(node).to_vec())
            .expect("field stride matches mode counts")
    }

    pub fn set_matrix(&mut self, node: usize, m: &ModeMatrix) {
        self.node_slice_mut(node).copy_from_slice(m.as_slice());
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ModeField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn require_interior<F: Filtration + ?Sized>(f: &F, node: usize) -> Result<()> {
    if node >= f.node_count() {
        return Err(Error::Usage(format!("node {node} is out of range")));
    }
    if f.is_leaf(node) {
        return Err(Error::Usage(format!(
            "node {node} is a leaf and has no children"
        )));
    }
    Ok(())
}

/// Exact conditional expectation over the children of `node`.
pub fn node_expectation<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    values: &ModeField,
) -> Result<ModeMatrix> {
    require_interior(f, node)?;
    let mut out = vec![0.0; values.m1 * values.m2];
    expectation_into(f, node, values, &mut out);
    ModeMatrix::from_row_major(values.m1, values.m2, out)
}

/// Exact `E[value * dW_p] / dt` over the children of `node`.
pub fn martingale_coefficient<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    values: &ModeField,
    p: usize,
) -> Result<ModeMatrix> {
    require_interior(f, node)?;
    if p >= f.dimension() {
        return Err(Error::Usage(format!(
            "component {p} out of range for dimension {}",
            f.dimension()
        )));
    }
    let mut out = vec![0.0; values.m1 * values.m2];
    coefficient_into(f, node, values, p, &mut out);
    ModeMatrix::from_row_major(values.m1, values.m2, out)
}

pub(crate) fn expectation_into<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    values: &ModeField,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let prob = f.branch_probability();
    for b in 0..f.branches() {
        let c = values.node_slice(f.child(node, b));
        for (o, v) in out.iter_mut().zip(c) {
            *o += prob * v;
        }
    }
}

pub(crate) fn coefficient_into<F: Filtration + ?Sized>(
    f: &F,
    node: usize,
    values: &ModeField,
    p: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let w = f.branch_probability() / f.dt();
    for b in 0..f.branches() {
        let inc = f.branch_increment(b, p);
        let c = values.node_slice(f.child(node, b));
        for (o, v) in out.iter_mut().zip(c) {
            *o += w * inc * v;
        }
    }
}

/// Applies `op` to every node of level `t`, in parallel for wide levels.
/// Results come back in node order.
pub(crate) fn map_level<F, T, Op>(f: &F, t: usize, op: Op) -> Vec<T>
where
    F: Filtration + ?Sized,
    T: Send,
    Op: Fn(usize) -> T + Sync + Send,
{
    let range = f.level(t);
    if range.len() >= PAR_THRESHOLD {
        range.into_par_iter().map(op).collect()
    } else {
        range.map(op).collect()
    }
}
