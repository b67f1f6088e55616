//! Streaming evaluation of one Galton-Watson tree of depth `n`.
//!
//! The edge into a vertex at depth `d` carries resistance `m^d xi`. Writing
//! `C(x)` for `m^|x|` times the conductance between `x` and the level-`n`
//! descendants of `x`, the series and parallel laws give
//!
//! ```text
//! C(x) = (1/m) * sum over children y of  C(y) / (1 + xi_y C(y)),   C(leaf) = +inf
//! ```
//!
//! and `C_n = C(root)`. The traversal is an iterative depth-first search in
//! which each frame folds its children in as they complete, so only the
//! current root-to-leaf path is alive. Every vertex draws its weight and its
//! offspring number from a stream keyed by its path from the root; the tree
//! is a pure function of the seed and trees of different depths are nested.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{OffspringLaw, ResistanceLaw};
use crate::oracles::{Edge, ExplicitNetwork};
use crate::rng::StreamKey;

pub const DEFAULT_NODE_BUDGET: u64 = 1 << 32;
/// Cap on vertices for trees materialized in memory.
pub const MAX_MATERIALIZED_VERTICES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctOptions {
    /// Number of levels `L` kept in the fluctuation series.
    pub truncation: usize,
    pub c1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    pub fluct: Option<FluctOptions>,
    pub node_budget: u64,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            fluct: None,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

impl TreeOptions {
    pub fn with_fluct(truncation: usize, c1: f64) -> Self {
        TreeOptions {
            fluct: Some(FluctOptions { truncation, c1 }),
            ..Self::default()
        }
    }
}

/// Joint observables of one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeObservables {
    pub depth: usize,
    /// Conductance between the root and level `n`.
    pub c_n: f64,
    /// `m^-n #T_n`.
    pub w_hat: f64,
    pub pop_n: u64,
    /// Energy of the uniform unit flow; bounds `R_n` from above.
    pub thomson_upper: f64,
    /// Level-cutset bound on `R_n` from below.
    pub nash_williams_lower: f64,
    pub fluct_series: Option<f64>,
    pub seed: u64,
}

impl TreeObservables {
    pub fn resistance(&self) -> f64 {
        1.0 / self.c_n
    }
}

struct Draw {
    xi: f64,
    children: u32,
}

/// Draws vertices from their streams. When both laws are constant every
/// vertex is identical, so streams are neither derived nor consulted.
#[derive(Clone, Copy)]
struct Sampler<'a> {
    off: &'a OffspringLaw,
    res: &'a ResistanceLaw,
    constant: Option<(f64, u32)>,
}

impl<'a> Sampler<'a> {
    fn new(off: &'a OffspringLaw, res: &'a ResistanceLaw) -> Self {
        Sampler {
            off,
            res,
            constant: res.constant().zip(off.constant()),
        }
    }

    #[inline]
    fn child_key(&self, parent: StreamKey, index: u32) -> StreamKey {
        match self.constant {
            Some(_) => parent,
            None => parent.child(u64::from(index)),
        }
    }

    /// Every vertex draws `xi` (the weight of the edge from its parent) and
    /// then its offspring number; the root's `xi` is unused.
    #[inline]
    fn draw(&self, key: StreamKey, leaf: bool) -> Draw {
        if let Some((xi, children)) = self.constant {
            return Draw { xi, children };
        }
        let mut rng = key.rng();
        let xi = self.res.sample(&mut rng);
        let children = if leaf { 0 } else { self.off.sample(&mut rng) };
        Draw { xi, children }
    }
}

/// Contribution through an edge of weight `xi` of a child whose children
/// sum to `acc`, i.e. `c / (1 + xi c)` with `c = acc / m`, in one division.
#[inline]
fn through_edge(acc: f64, xi: f64, m: f64) -> f64 {
    acc / (m + xi * acc)
}

fn check_budget(off: &OffspringLaw, n: usize, budget: u64) -> Result<()> {
    let m = off.mean();
    let projected = (0..=n as i32).map(|k| m.powi(k)).sum::<f64>();
    if projected > budget as f64 {
        return Err(Error::DepthOverflow { projected, budget });
    }
    Ok(())
}

fn inverse_powers(m: f64, n: usize) -> Vec<f64> {
    (0..=n as i32).map(|k| m.powi(-k)).collect()
}

struct Frame {
    key: StreamKey,
    depth: usize,
    xi: f64,
    children: u32,
    next: u32,
    acc: f64,
    leaves: u64,
}

/// Samples one tree of depth `n` and returns its joint observables.
pub fn sample_tree_observables(
    off: &OffspringLaw,
    res: &ResistanceLaw,
    n: usize,
    opts: &TreeOptions,
    seed: u64,
) -> Result<TreeObservables> {
    if n == 0 {
        return Err(Error::InvalidOption("depth must be at least 1".into()));
    }
    if let Some(f) = opts.fluct {
        if f.truncation == 0 {
            return Err(Error::InvalidOption("fluctuation truncation must be at least 1".into()));
        }
        if f.truncation >= n {
            return Err(Error::TruncationTooDeep {
                truncation: f.truncation,
                depth: n,
            });
        }
        if !(f.c1.is_finite() && f.c1 > 0.0) {
            return Err(Error::InvalidOption(format!("c1 = {} must be positive", f.c1)));
        }
    }
    check_budget(off, n, opts.node_budget)?;

    let m = off.mean();
    let inv_pow = inverse_powers(m, n);
    // level_sums[k-1] = sum over |x| = k of 1/xi_x (scaled by m^-k at the end)
    let mut level_sums = vec![0.0; n];
    // sum over internal x of m^-|x| xi_x w_x^2 with w_x = m^(|x|-n) #T_n[x]
    let mut thomson_internal = 0.0;
    // leaves have w_x = 1
    let mut thomson_leaves = 0.0;
    let mut fluct = 0.0;
    let mut visited: u64 = 1;

    let sampler = Sampler::new(off, res);
    let root_key = StreamKey::new(seed);
    let root = sampler.draw(root_key, false);
    let mut stack = Vec::with_capacity(n);
    stack.push(Frame {
        key: root_key,
        depth: 0,
        xi: root.xi,
        children: root.children,
        next: 0,
        acc: 0.0,
        leaves: 0,
    });

    let (acc, pop_n) = loop {
        let top = stack.last_mut().expect("stack holds the root until it completes");
        if top.next < top.children {
            let depth = top.depth + 1;
            if depth == n {
                // every child is a leaf
                visited += u64::from(top.children - top.next);
                if visited > opts.node_budget {
                    return Err(Error::DepthOverflow {
                        projected: visited as f64,
                        budget: opts.node_budget,
                    });
                }
                for i in top.next..top.children {
                    let xi = sampler.draw(sampler.child_key(top.key, i), true).xi;
                    level_sums[n - 1] += 1.0 / xi;
                    thomson_leaves += xi;
                    top.acc += 1.0 / xi;
                }
                top.leaves += u64::from(top.children - top.next);
                top.next = top.children;
            } else {
                let key = sampler.child_key(top.key, top.next);
                top.next += 1;
                visited += 1;
                if visited > opts.node_budget {
                    return Err(Error::DepthOverflow {
                        projected: visited as f64,
                        budget: opts.node_budget,
                    });
                }
                let d = sampler.draw(key, false);
                level_sums[depth - 1] += 1.0 / d.xi;
                stack.push(Frame {
                    key,
                    depth,
                    xi: d.xi,
                    children: d.children,
                    next: 0,
                    acc: 0.0,
                    leaves: 0,
                });
            }
        } else {
            let done = stack.pop().expect("non-empty");
            let Some(parent) = stack.last_mut() else {
                break (done.acc, done.leaves);
            };
            let k = done.depth;
            let w = inv_pow[n - k] * done.leaves as f64;
            thomson_internal += inv_pow[k] * done.xi * w * w;
            if let Some(f) = opts.fluct {
                if k <= f.truncation {
                    fluct += inv_pow[k] * w * (1.0 - done.xi * w / f.c1);
                }
            }
            parent.acc += through_edge(done.acc, done.xi, m);
            parent.leaves += done.leaves;
        }
    };

    let w_hat = pop_n as f64 * inv_pow[n];
    let scaled: Vec<f64> = level_sums.iter().zip(&inv_pow[1..]).map(|(s, p)| s * p).collect();
    Ok(TreeObservables {
        depth: n,
        c_n: acc / m,
        w_hat,
        pop_n,
        thomson_upper: (thomson_internal + inv_pow[n] * thomson_leaves) / (w_hat * w_hat),
        nash_williams_lower: nash_williams(&scaled),
        fluct_series: opts.fluct.map(|_| fluct),
        seed,
    })
}

/// Nash-Williams bound `sum_k (sum_{|x|=k} m^-k / xi_x)^-1` from per-level sums.
pub fn nash_williams(level_sums: &[f64]) -> f64 {
    level_sums.iter().map(|s| 1.0 / s).sum()
}

/// One non-root vertex of a materialized tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexRecord {
    pub depth: usize,
    pub xi: f64,
    /// `#T_n[x]`
    pub leaves: u64,
}

/// Energy of the flow `Theta(x) = #T_n[x] / #T_n` on the network with
/// resistances `m^|x| xi_x`.
pub fn thomson_upper(m: f64, vertices: &[VertexRecord]) -> f64 {
    let total: u64 = vertices.iter().filter(|v| v.depth == 1).map(|v| v.leaves).sum();
    vertices
        .iter()
        .map(|v| {
            let theta = v.leaves as f64 / total as f64;
            m.powi(v.depth as i32) * v.xi * theta * theta
        })
        .sum()
}

/// Truncated fluctuation series
/// `sum_{l <= L} m^-l sum_{|x| = l} w_x (1 - xi_x w_x / c1)` with `w_x = m^(|x|-n) #T_n[x]`.
pub fn fluct_series(m: f64, n: usize, truncation: usize, c1: f64, vertices: &[VertexRecord]) -> Result<f64> {
    if truncation >= n {
        return Err(Error::TruncationTooDeep { truncation, depth: n });
    }
    Ok(vertices
        .iter()
        .filter(|v| v.depth <= truncation)
        .map(|v| {
            let w = m.powi(v.depth as i32 - n as i32) * v.leaves as f64;
            m.powi(-(v.depth as i32)) * w * (1.0 - v.xi * w / c1)
        })
        .sum())
}

/// Conductances `C_k` and level sizes `#T_k` for every `k <= n` on one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeProfile {
    /// `conductance[k - 1] = C_k`
    pub conductance: Vec<f64>,
    /// `population[k - 1] = #T_k`
    pub population: Vec<u64>,
    pub m: f64,
    pub seed: u64,
}

impl TreeProfile {
    pub fn depth(&self) -> usize {
        self.conductance.len()
    }

    pub fn c(&self, k: usize) -> f64 {
        self.conductance[k - 1]
    }

    pub fn w_hat(&self, k: usize) -> f64 {
        self.population[k - 1] as f64 * self.m.powi(-(k as i32))
    }
}

struct ProfileFrame {
    key: StreamKey,
    xi: f64,
    children: u32,
    next: u32,
}

/// Same tree as [`sample_tree_observables`] for the same seed, reporting the
/// conductance to every level. The frame at depth `d` owns `n - d`
/// accumulators, slot `j` folding its children for the conductance to level
/// `d + 1 + j`; they live in one triangular buffer indexed by depth.
pub fn sample_tree_profile(
    off: &OffspringLaw,
    res: &ResistanceLaw,
    n: usize,
    node_budget: u64,
    seed: u64,
) -> Result<TreeProfile> {
    if n == 0 {
        return Err(Error::InvalidOption("depth must be at least 1".into()));
    }
    check_budget(off, n, node_budget)?;
    let m = off.mean();
    let mut population = vec![0u64; n];
    let mut visited: u64 = 1;
    // offsets[d]..offsets[d + 1] are the accumulators of the depth-d frame
    let offsets: Vec<usize> = (0..=n).map(|d| d * n - d * d.saturating_sub(1) / 2).collect();
    let mut accs = vec![0.0; offsets[n]];

    let sampler = Sampler::new(off, res);
    let root_key = StreamKey::new(seed);
    let root = sampler.draw(root_key, false);
    let mut stack = Vec::with_capacity(n);
    stack.push(ProfileFrame {
        key: root_key,
        xi: root.xi,
        children: root.children,
        next: 0,
    });

    loop {
        let depth = stack.len();
        let top = stack.last_mut().expect("stack holds the root until it completes");
        if top.next < top.children {
            if depth == n {
                // every child is a leaf
                let count = u64::from(top.children - top.next);
                population[n - 1] += count;
                visited += count;
                if visited > node_budget {
                    return Err(Error::DepthOverflow {
                        projected: visited as f64,
                        budget: node_budget,
                    });
                }
                let slot = &mut accs[offsets[n - 1]];
                for i in top.next..top.children {
                    *slot += 1.0 / sampler.draw(sampler.child_key(top.key, i), true).xi;
                }
                top.next = top.children;
            } else {
                let key = sampler.child_key(top.key, top.next);
                top.next += 1;
                population[depth - 1] += 1;
                visited += 1;
                if visited > node_budget {
                    return Err(Error::DepthOverflow {
                        projected: visited as f64,
                        budget: node_budget,
                    });
                }
                let d = sampler.draw(key, false);
                if depth + 1 == n {
                    // the child's children are leaves: fold it into the parent without a frame
                    let count = u64::from(d.children);
                    population[n - 1] += count;
                    visited += count;
                    if visited > node_budget {
                        return Err(Error::DepthOverflow {
                            projected: visited as f64,
                            budget: node_budget,
                        });
                    }
                    let mut leaves = 0.0;
                    for i in 0..d.children {
                        leaves += 1.0 / sampler.draw(sampler.child_key(key, i), true).xi;
                    }
                    let parent = &mut accs[offsets[depth - 1]..offsets[depth - 1] + 2];
                    parent[0] += 1.0 / d.xi;
                    parent[1] += through_edge(leaves, d.xi, m);
                    continue;
                }
                accs[offsets[depth]..offsets[depth + 1]].fill(0.0);
                stack.push(ProfileFrame {
                    key,
                    xi: d.xi,
                    children: d.children,
                    next: 0,
                });
            }
        } else {
            let done = stack.pop().expect("non-empty");
            // the finished frame sits at depth - 1, its parent at depth - 2
            if depth == 1 {
                break;
            }
            let (head, tail) = accs.split_at_mut(offsets[depth - 1]);
            let parent = &mut head[offsets[depth - 2]..];
            let child = &tail[..n - (depth - 1)];
            parent[0] += 1.0 / done.xi;
            for (slot, a) in parent[1..].iter_mut().zip(child) {
                *slot += through_edge(*a, done.xi, m);
            }
        }
    }
    let acc = &accs[..n];

    Ok(TreeProfile {
        conductance: acc.iter().map(|a| a / m).collect(),
        population,
        m,
        seed,
    })
}

/// A tree held in memory, in depth-first preorder; vertex 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedTree {
    pub m: f64,
    pub depth: usize,
    /// `(parent, depth, xi)` for every non-root vertex, indexed by vertex id - 1
    pub vertices: Vec<(usize, usize, f64)>,
}

impl MaterializedTree {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len() + 1
    }

    /// Explicit network with raw resistances `m^d xi`, sink set = level `n`.
    pub fn to_network(&self) -> Result<ExplicitNetwork> {
        let edges = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, &(parent, d, xi))| Edge {
                u: parent,
                v: i + 1,
                resistance: self.m.powi(d as i32) * xi,
            })
            .collect();
        let sinks = self
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.1 == self.depth)
            .map(|(i, _)| i + 1)
            .collect();
        ExplicitNetwork::new(self.vertex_count(), edges, 0, sinks)
    }

    pub fn vertex_records(&self) -> Vec<VertexRecord> {
        let mut leaves = vec![0u64; self.vertex_count()];
        // preorder: children come after parents, so a reverse sweep accumulates
        for (i, &(parent, d, _)) in self.vertices.iter().enumerate().rev() {
            if d == self.depth {
                leaves[i + 1] = 1;
            }
            leaves[parent] += leaves[i + 1];
        }
        self.vertices
            .iter()
            .enumerate()
            .map(|(i, &(_, depth, xi))| VertexRecord {
                depth,
                xi,
                leaves: leaves[i + 1],
            })
            .collect()
    }
}

/// Materializes the tree sampled by [`sample_tree_observables`] for `seed`.
pub fn materialize_tree(off: &OffspringLaw, res: &ResistanceLaw, n: usize, seed: u64) -> Result<MaterializedTree> {
    if n == 0 {
        return Err(Error::InvalidOption("depth must be at least 1".into()));
    }
    let sampler = Sampler::new(off, res);
    let root_key = StreamKey::new(seed);
    let root = sampler.draw(root_key, false);
    // (key, vertex id, depth, children, next)
    let mut stack = vec![(root_key, 0usize, 0usize, root.children, 0u32)];
    let mut vertices = Vec::new();
    while let Some(top) = stack.last_mut() {
        if top.4 < top.3 {
            let key = sampler.child_key(top.0, top.4);
            top.4 += 1;
            let (parent, depth) = (top.1, top.2 + 1);
            let d = sampler.draw(key, depth == n);
            vertices.push((parent, depth, d.xi));
            if vertices.len() + 1 > MAX_MATERIALIZED_VERTICES {
                return Err(Error::NetworkTooLarge {
                    vertices: vertices.len() + 1,
                    cap: MAX_MATERIALIZED_VERTICES,
                });
            }
            if depth < n {
                stack.push((key, vertices.len(), depth, d.children, 0));
            }
        } else {
            stack.pop();
        }
    }
    Ok(MaterializedTree {
        m: off.mean(),
        depth: n,
        vertices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::series_parallel_reduce;

    fn binary_unit() -> (OffspringLaw, ResistanceLaw) {
        (
            OffspringLaw::deterministic(2).unwrap(),
            ResistanceLaw::point_mass(1.0).unwrap(),
        )
    }

    #[test]
    fn symmetric_binary_tree_has_unit_resistance_per_level() {
        let (off, res) = binary_unit();
        for seed in [0, 1, 99] {
            let obs = sample_tree_observables(&off, &res, 5, &TreeOptions::default(), seed).unwrap();
            assert!((obs.c_n - 0.2).abs() < 1e-15);
            assert_eq!(obs.pop_n, 32);
            assert_eq!(obs.w_hat, 1.0);
        }
    }

    #[test]
    fn symmetric_bounds_are_tight() {
        let (off, res) = binary_unit();
        let obs = sample_tree_observables(&off, &res, 3, &TreeOptions::default(), 4).unwrap();
        assert!((obs.thomson_upper - 3.0).abs() < 1e-12);
        assert!((obs.nash_williams_lower - 3.0).abs() < 1e-12);
        assert!((nash_williams(&[1.0, 1.0, 1.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn depth_one_thomson_energy() {
        let (off, res) = binary_unit();
        let obs = sample_tree_observables(&off, &res, 1, &TreeOptions::default(), 0).unwrap();
        assert_eq!(obs.c_n, 1.0);
        assert_eq!(obs.thomson_upper, 1.0);
        let recs = [
            VertexRecord { depth: 1, xi: 1.0, leaves: 1 },
            VertexRecord { depth: 1, xi: 1.0, leaves: 1 },
        ];
        assert_eq!(thomson_upper(2.0, &recs), 1.0);
    }

    #[test]
    fn fluct_series_vanishes_on_symmetric_tree() {
        let (off, res) = binary_unit();
        let obs = sample_tree_observables(&off, &res, 6, &TreeOptions::with_fluct(3, 1.0), 0).unwrap();
        assert_eq!(obs.fluct_series, Some(0.0));
    }

    #[test]
    fn fluct_series_depth_one_formula() {
        let (xi1, xi2, w1, w2, c1) = (0.5, 1.5, 0.75, 1.25, 1.0);
        // m = 2, n = 3: w_x = m^(1-3) leaves, so leaves = 4 w
        let recs = [
            VertexRecord { depth: 1, xi: xi1, leaves: (4.0 * w1) as u64 },
            VertexRecord { depth: 1, xi: xi2, leaves: (4.0 * w2) as u64 },
            VertexRecord { depth: 2, xi: 9.0, leaves: 2 },
        ];
        let want = 0.5 * (w1 * (1.0 - xi1 * w1 / c1) + w2 * (1.0 - xi2 * w2 / c1));
        assert!((fluct_series(2.0, 3, 1, c1, &recs).unwrap() - want).abs() < 1e-15);
        assert!(matches!(
            fluct_series(2.0, 3, 3, c1, &recs),
            Err(Error::TruncationTooDeep { .. })
        ));
    }

    #[test]
    fn option_validation() {
        let (off, res) = binary_unit();
        let err = sample_tree_observables(&off, &res, 4, &TreeOptions::with_fluct(4, 1.0), 0).unwrap_err();
        assert!(matches!(err, Error::TruncationTooDeep { .. }));
        assert!(sample_tree_observables(&off, &res, 0, &TreeOptions::default(), 0).is_err());
        assert!(sample_tree_observables(&off, &res, 4, &TreeOptions::with_fluct(2, -1.0), 0).is_err());
        let tight = TreeOptions {
            node_budget: 100,
            ..TreeOptions::default()
        };
        assert!(matches!(
            sample_tree_observables(&off, &res, 10, &tight, 0),
            Err(Error::DepthOverflow { .. })
        ));
    }

    #[test]
    fn realized_node_count_is_bounded_too() {
        // mean 2.5 projects 1 + 2.5 + 6.25 + 15.6 = 25.4 nodes at depth 3, but a
        // realization can reach 1 + 4 + 16 + 64
        let off = OffspringLaw::new(vec![1, 4], vec![0.5, 0.5]).unwrap();
        let res = ResistanceLaw::point_mass(1.0).unwrap();
        let opts = TreeOptions {
            fluct: None,
            node_budget: 26,
        };
        let over = (0..200)
            .filter(|&s| matches!(sample_tree_observables(&off, &res, 3, &opts, s), Err(Error::DepthOverflow { .. })))
            .count();
        assert!(over > 0);
    }

    #[test]
    fn observables_match_materialized_tree() {
        let off = OffspringLaw::new(vec![1, 2, 3], vec![0.3, 0.4, 0.3]).unwrap();
        let res = ResistanceLaw::uniform(0.2, 2.0).unwrap();
        for seed in 0..30 {
            let n = 1 + (seed as usize % 5);
            let obs = sample_tree_observables(&off, &res, n, &TreeOptions::default(), seed).unwrap();
            let tree = materialize_tree(&off, &res, n, seed).unwrap();
            let r = series_parallel_reduce(&tree.to_network().unwrap()).unwrap();
            assert!((obs.c_n * r - 1.0).abs() < 1e-12);
            let recs = tree.vertex_records();
            let th = thomson_upper(off.mean(), &recs);
            assert!((obs.thomson_upper - th).abs() <= 1e-12 * th);
            let pop: u64 = recs.iter().filter(|v| v.depth == n).count() as u64;
            assert_eq!(obs.pop_n, pop);
        }
    }

    #[test]
    fn streamed_fluct_matches_listing() {
        let off = OffspringLaw::new(vec![1, 3], vec![0.5, 0.5]).unwrap();
        let res = ResistanceLaw::two_point(0.5, 0.5, 1.5).unwrap();
        for seed in 0..10 {
            let obs = sample_tree_observables(&off, &res, 7, &TreeOptions::with_fluct(4, 1.5), seed).unwrap();
            let recs = materialize_tree(&off, &res, 7, seed).unwrap().vertex_records();
            let want = fluct_series(2.0, 7, 4, 1.5, &recs).unwrap();
            assert!((obs.fluct_series.unwrap() - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn profile_agrees_bitwise_with_single_depth_runs() {
        let off = OffspringLaw::new(vec![1, 2, 4], vec![0.2, 0.5, 0.3]).unwrap();
        let res = ResistanceLaw::log_normal(0.0, 0.6).unwrap();
        for seed in 0..8 {
            let profile = sample_tree_profile(&off, &res, 7, DEFAULT_NODE_BUDGET, seed).unwrap();
            for k in 1..=7 {
                let obs = sample_tree_observables(&off, &res, k, &TreeOptions::default(), seed).unwrap();
                assert_eq!(profile.c(k), obs.c_n, "seed {seed} depth {k}");
                assert_eq!(profile.population[k - 1], obs.pop_n);
                assert_eq!(profile.w_hat(k), obs.w_hat);
            }
        }
    }

    #[test]
    fn conductance_is_monotone_along_nested_depths() {
        let off = OffspringLaw::new(vec![1, 3], vec![0.5, 0.5]).unwrap();
        let res = ResistanceLaw::two_point(0.5, 0.5, 1.5).unwrap();
        for seed in 0..50 {
            let p = sample_tree_profile(&off, &res, 10, DEFAULT_NODE_BUDGET, seed).unwrap();
            for k in 1..10 {
                assert!(p.c(k + 1) <= p.c(k), "seed {seed}: C_{} > C_{k}", k + 1);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let off = OffspringLaw::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let res = ResistanceLaw::uniform(0.5, 1.5).unwrap();
        let a = sample_tree_observables(&off, &res, 9, &TreeOptions::with_fluct(4, 4.0 / 3.0), 77).unwrap();
        let b = sample_tree_observables(&off, &res, 9, &TreeOptions::with_fluct(4, 4.0 / 3.0), 77).unwrap();
        assert_eq!(a, b);
        let c = sample_tree_observables(&off, &res, 9, &TreeOptions::with_fluct(4, 4.0 / 3.0), 78).unwrap();
        assert_ne!(a.c_n, c.c_n);
    }
}
