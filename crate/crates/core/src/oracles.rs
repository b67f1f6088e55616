//! Independent ground truth on small explicit networks.
//!
//! Three unrelated routes to the same number: a dense Kirchhoff solve, a
//! leaf-up series-parallel reduction for trees, and a Monte Carlo estimate of
//! the escape probability of the conductance-weighted random walk.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Largest network accepted by the dense solver.
pub const MAX_DENSE_VERTICES: usize = 20_000;
pub const MIN_WALK_TRIALS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub resistance: f64,
}

/// Finite resistor network with one source vertex and a sink set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitNetwork {
    vertex_count: usize,
    edges: Vec<Edge>,
    source: usize,
    sinks: Vec<usize>,
}

impl ExplicitNetwork {
    pub fn new(vertex_count: usize, edges: Vec<Edge>, source: usize, sinks: Vec<usize>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidNetwork(msg));
        if source >= vertex_count {
            return invalid(format!("source {source} out of range"));
        }
        if sinks.is_empty() {
            return invalid("empty sink set".into());
        }
        let sink_set: BTreeSet<usize> = sinks.iter().copied().collect();
        if sink_set.contains(&source) {
            return invalid("source is in the sink set".into());
        }
        if let Some(z) = sink_set.iter().find(|&&z| z >= vertex_count) {
            return invalid(format!("sink {z} out of range"));
        }
        for e in &edges {
            if e.u >= vertex_count || e.v >= vertex_count {
                return invalid(format!("edge {}-{} out of range", e.u, e.v));
            }
            if e.u == e.v {
                return invalid(format!("self-loop at {}", e.u));
            }
            if !(e.resistance.is_finite() && e.resistance > 0.0) {
                return invalid(format!("edge {}-{} has resistance {}", e.u, e.v, e.resistance));
            }
        }
        let net = ExplicitNetwork {
            vertex_count,
            edges,
            source,
            sinks: sink_set.into_iter().collect(),
        };
        if !net.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(net)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sinks(&self) -> &[usize] {
        &self.sinks
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertex_count];
        for e in &self.edges {
            adj[e.u].push((e.v, e.resistance));
            adj[e.v].push((e.u, e.resistance));
        }
        adj
    }

    fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.vertex_count];
        let mut queue = VecDeque::from([self.source]);
        seen[self.source] = true;
        let mut reached = 1;
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    reached += 1;
                    queue.push_back(y);
                }
            }
        }
        reached == self.vertex_count
    }

    /// Same network with every resistance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.edges {
            e.resistance *= factor;
        }
        out
    }

    pub fn with_resistance(&self, edge: usize, resistance: f64) -> Self {
        let mut out = self.clone();
        out.edges[edge].resistance = resistance;
        out
    }

    /// Parses the `u v r` text format.
    ///
    /// Blank lines and `#` comments are ignored. `source <id>` sets the source
    /// (default 0); `sink <id>...` lines add sinks. Without sink lines the sink
    /// set is every degree-one vertex other than the source.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut source = 0usize;
        let mut sinks = Vec::new();
        let mut max_id = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let id = |tok: &str| tok.parse::<usize>().map_err(|_| err(format!("bad vertex id {tok:?}")));
            let mut toks = line.split_whitespace();
            let first = toks.next().unwrap_or_default();
            match first {
                "source" => {
                    source = id(toks.next().ok_or_else(|| err("missing source id".into()))?)?;
                    max_id = max_id.max(source);
                }
                "sink" => {
                    for tok in toks.by_ref() {
                        let z = id(tok)?;
                        max_id = max_id.max(z);
                        sinks.push(z);
                    }
                }
                _ => {
                    let rest: Vec<&str> = toks.collect();
                    if rest.len() != 2 {
                        return Err(err(format!("expected `u v r`, got {line:?}")));
                    }
                    let (u, v) = (id(first)?, id(rest[0])?);
                    let resistance: f64 = rest[1]
                        .parse()
                        .map_err(|_| err(format!("bad resistance {:?}", rest[1])))?;
                    max_id = max_id.max(u).max(v);
                    edges.push(Edge { u, v, resistance });
                }
            }
        }
        let vertex_count = max_id + 1;
        if sinks.is_empty() {
            let mut degree = vec![0usize; vertex_count];
            for e in &edges {
                degree[e.u] += 1;
                degree[e.v] += 1;
            }
            sinks = (0..vertex_count).filter(|&x| x != source && degree[x] == 1).collect();
        }
        Self::new(vertex_count, edges, source, sinks)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("source {}\nsink", self.source);
        for z in &self.sinks {
            let _ = write!(out, " {z}");
        }
        out.push('\n');
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {:?}", e.u, e.v, e.resistance);
        }
        out
    }
}

/// Effective resistance between the source and the (merged) sink set by a
/// dense Kirchhoff solve with unit current injected at the source.
pub fn effective_resistance_laplacian(net: &ExplicitNetwork) -> Result<f64> {
    if net.vertex_count > MAX_DENSE_VERTICES {
        return Err(Error::NetworkTooLarge {
            vertices: net.vertex_count,
            cap: MAX_DENSE_VERTICES,
        });
    }
    // Sinks collapse into the grounded node, which is dropped from the system.
    let mut index = vec![usize::MAX; net.vertex_count];
    let mut k = 0;
    for (x, slot) in index.iter_mut().enumerate() {
        if net.sinks.binary_search(&x).is_err() {
            *slot = k;
            k += 1;
        }
    }
    let mut a = vec![0.0; k * k];
    for e in &net.edges {
        let c = 1.0 / e.resistance;
        let (iu, iv) = (index[e.u], index[e.v]);
        if iu != usize::MAX {
            a[iu * k + iu] += c;
        }
        if iv != usize::MAX {
            a[iv * k + iv] += c;
        }
        if iu != usize::MAX && iv != usize::MAX {
            a[iu * k + iv] -= c;
            a[iv * k + iu] -= c;
        }
    }
    let mut b = vec![0.0; k];
    let s = index[net.source];
    b[s] = 1.0;
    let potential = solve_dense(&mut a, &mut b, k)?;
    Ok(potential[s])
}

/// Gaussian elimination with partial pivoting on a row-major `k x k` system.
fn solve_dense(a: &mut [f64], b: &mut [f64], k: usize) -> Result<Vec<f64>> {
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    for col in 0..k {
        let pivot_row = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))
            .unwrap_or(col);
        let pivot = a[pivot_row * k + col];
        if pivot.abs() <= 1e-14 * scale {
            return Err(Error::SingularSystem);
        }
        if pivot_row != col {
            for j in 0..k {
                a.swap(col * k + j, pivot_row * k + j);
            }
            b.swap(col, pivot_row);
        }
        for row in col + 1..k {
            let factor = a[row * k + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..k {
                a[row * k + j] -= factor * a[col * k + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let mut acc = b[row];
        for j in row + 1..k {
            acc -= a[row * k + j] * x[j];
        }
        x[row] = acc / a[row * k + row];
    }
    Ok(x)
}

/// Leaf-up series-parallel reduction of a rooted tree whose sinks are exactly
/// its leaves, all at the same depth.
pub fn series_parallel_reduce(net: &ExplicitNetwork) -> Result<f64> {
    if net.edges.len() + 1 != net.vertex_count {
        return Err(Error::NotATree(format!(
            "{} edges on {} vertices",
            net.edges.len(),
            net.vertex_count
        )));
    }
    let adj = net.adjacency();
    let mut parent = vec![(usize::MAX, 0.0); net.vertex_count];
    let mut depth = vec![0usize; net.vertex_count];
    let mut order = Vec::with_capacity(net.vertex_count);
    let mut queue = VecDeque::from([net.source]);
    let mut seen = vec![false; net.vertex_count];
    seen[net.source] = true;
    while let Some(x) = queue.pop_front() {
        order.push(x);
        for &(y, r) in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                parent[y] = (x, r);
                depth[y] = depth[x] + 1;
                queue.push_back(y);
            }
        }
    }
    let leaves: Vec<usize> = (0..net.vertex_count)
        .filter(|&x| x != net.source && adj[x].len() == 1)
        .collect();
    if leaves.windows(2).any(|w| depth[w[0]] != depth[w[1]]) {
        return Err(Error::LeavesAtMixedDepth);
    }
    if leaves != net.sinks {
        return Err(Error::InvalidNetwork("sink set is not the leaf set".into()));
    }
    // conductance accumulated from each vertex's children
    let mut child_conductance = vec![0.0; net.vertex_count];
    let mut resistance = vec![0.0; net.vertex_count];
    for &x in order.iter().rev() {
        resistance[x] = if adj[x].len() == 1 && x != net.source {
            0.0
        } else {
            1.0 / child_conductance[x]
        };
        let (p, r) = parent[x];
        if p != usize::MAX {
            child_conductance[p] += 1.0 / (r + resistance[x]);
        }
    }
    Ok(resistance[net.source])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkEstimate {
    /// `pi(source) * P(hit the sink set before returning to the source)`.
    pub conductance: f64,
    pub se: f64,
    pub escape_probability: f64,
    pub trials: u64,
}

/// Estimates the effective conductance from the escape frequency of the
/// conductance-weighted walk started at the source.
pub fn random_walk_conductance(net: &ExplicitNetwork, trials: u64, seed: u64) -> Result<WalkEstimate> {
    if trials < MIN_WALK_TRIALS {
        return Err(Error::InvalidOption(format!(
            "random walk needs at least {MIN_WALK_TRIALS} trials, got {trials}"
        )));
    }
    // cumulative conductances per vertex for inversion sampling
    let adj: Vec<(Vec<usize>, Vec<f64>)> = net
        .adjacency()
        .into_iter()
        .map(|nbrs| {
            let mut acc = 0.0;
            let cum = nbrs
                .iter()
                .map(|&(_, r)| {
                    acc += 1.0 / r;
                    acc
                })
                .collect();
            (nbrs.into_iter().map(|(y, _)| y).collect(), cum)
        })
        .collect();
    let mut is_sink = vec![false; net.vertex_count];
    for &z in &net.sinks {
        is_sink[z] = true;
    }
    let pi_source = *adj[net.source].1.last().unwrap_or(&0.0);
    let key = StreamKey::new(seed);
    let escapes: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = key.child(t).rng();
            let mut x = net.source;
            loop {
                let (nbrs, cum) = &adj[x];
                let u = rng.random::<f64>() * cum[cum.len() - 1];
                let pick = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
                x = nbrs[pick];
                if is_sink[x] {
                    return 1;
                }
                if x == net.source {
                    return 0;
                }
            }
        })
        .sum();
    let p = escapes as f64 / trials as f64;
    Ok(WalkEstimate {
        conductance: pi_source * p,
        se: pi_source * (p * (1.0 - p) / trials as f64).sqrt(),
        escape_probability: p,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn edge(u: usize, v: usize, resistance: f64) -> Edge {
        Edge { u, v, resistance }
    }

    #[test]
    fn series_path() {
        let net = ExplicitNetwork::new(3, vec![edge(0, 1, 1.0), edge(1, 2, 2.0)], 0, vec![2]).unwrap();
        assert!((effective_resistance_laplacian(&net).unwrap() - 3.0).abs() < 1e-12);
        assert!((series_parallel_reduce(&net).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_edges_to_merged_sink() {
        let net = ExplicitNetwork::new(3, vec![edge(0, 1, 2.0), edge(0, 2, 2.0)], 0, vec![1, 2]).unwrap();
        assert!((effective_resistance_laplacian(&net).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_star_matches_unit_conductance() {
        // depth-1 binary tree, resistances m * xi = 2 * 1
        let net = ExplicitNetwork::new(3, vec![edge(0, 1, 2.0), edge(0, 2, 2.0)], 0, vec![1, 2]).unwrap();
        assert!((series_parallel_reduce(&net).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_children_reduce_in_parallel() {
        let (r1, r2) = (0.7, 2.9);
        let net = ExplicitNetwork::new(3, vec![edge(0, 1, r1), edge(0, 2, r2)], 0, vec![1, 2]).unwrap();
        let want = 1.0 / (1.0 / r1 + 1.0 / r2);
        assert!((series_parallel_reduce(&net).unwrap() - want).abs() < 1e-12);
    }

    fn binary_tree(depth: usize) -> ExplicitNetwork {
        // heap numbering; edge into level d carries resistance 2^d
        let count = (1usize << (depth + 1)) - 1;
        let mut edges = Vec::new();
        for x in 1..count {
            let d = usize::BITS - 1 - (x + 1).leading_zeros();
            edges.push(edge((x - 1) / 2, x, f64::from(1u32 << d)));
        }
        let sinks = ((1 << depth) - 1..count).collect();
        ExplicitNetwork::new(count, edges, 0, sinks).unwrap()
    }

    #[test]
    fn symmetric_binary_tree_depth_three() {
        let net = binary_tree(3);
        assert!((series_parallel_reduce(&net).unwrap() - 3.0).abs() < 1e-12);
        assert!((effective_resistance_laplacian(&net).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn reducer_rejects_non_trees() {
        let cycle = ExplicitNetwork::new(
            3,
            vec![edge(0, 1, 1.0), edge(1, 2, 1.0), edge(0, 2, 1.0)],
            0,
            vec![2],
        )
        .unwrap();
        assert!(matches!(series_parallel_reduce(&cycle), Err(Error::NotATree(_))));
        let ragged = ExplicitNetwork::new(
            4,
            vec![edge(0, 1, 1.0), edge(0, 2, 1.0), edge(2, 3, 1.0)],
            0,
            vec![1, 3],
        )
        .unwrap();
        assert!(matches!(series_parallel_reduce(&ragged), Err(Error::LeavesAtMixedDepth)));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            ExplicitNetwork::new(4, vec![edge(0, 1, 1.0), edge(2, 3, 1.0)], 0, vec![1]),
            Err(Error::Disconnected)
        ));
        assert!(ExplicitNetwork::new(2, vec![edge(0, 1, 0.0)], 0, vec![1]).is_err());
        assert!(ExplicitNetwork::new(2, vec![edge(0, 1, 1.0)], 0, vec![0]).is_err());
    }

    #[test]
    fn walk_single_edge_always_escapes() {
        let net = ExplicitNetwork::new(2, vec![edge(0, 1, 4.0)], 0, vec![1]).unwrap();
        let est = random_walk_conductance(&net, 10_000, 1).unwrap();
        assert_eq!(est.escape_probability, 1.0);
        assert_eq!(est.conductance, 0.25);
        assert_eq!(est.se, 0.0);
    }

    #[test]
    fn walk_binary_depth_two() {
        let est = random_walk_conductance(&binary_tree(2), 100_000, 3).unwrap();
        assert!((est.conductance - 0.5).abs() < 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn walk_is_deterministic_and_needs_trials() {
        let net = binary_tree(2);
        assert_eq!(
            random_walk_conductance(&net, 20_000, 9).unwrap(),
            random_walk_conductance(&net, 20_000, 9).unwrap()
        );
        assert!(random_walk_conductance(&net, 100, 9).is_err());
    }

    #[test]
    fn text_format_round_trip_and_defaults() {
        let text = "# binary star\n0 1 2\n0 2 2.0\n";
        let net = ExplicitNetwork::parse(text).unwrap();
        assert_eq!(net.source(), 0);
        assert_eq!(net.sinks(), &[1, 2]);
        assert_eq!(ExplicitNetwork::parse(&net.to_text()).unwrap(), net);
        let err = ExplicitNetwork::parse("0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let explicit = ExplicitNetwork::parse("source 1\nsink 2\n0 1 1\n1 2 1\n").unwrap();
        assert_eq!((explicit.source(), explicit.sinks()), (1, &[2][..]));
    }

    /// Random connected graph: a random spanning tree plus extra edges.
    fn arb_network() -> impl Strategy<Value = ExplicitNetwork> {
        (3usize..9)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    prop::collection::vec((0usize..1000, 0.1f64..5.0), n - 1),
                    prop::collection::vec((0usize..n, 0usize..n, 0.1f64..5.0), 0..6),
                )
            })
            .prop_map(|(n, tree, extra)| {
                let mut edges: Vec<Edge> = tree
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, r))| edge(p % (i + 1), i + 1, r))
                    .collect();
                edges.extend(extra.into_iter().filter(|e| e.0 != e.1).map(|(u, v, r)| edge(u, v, r)));
                ExplicitNetwork::new(n, edges, 0, vec![n - 1]).unwrap()
            })
    }

    proptest! {
        #[test]
        fn increasing_a_resistance_never_increases_conductance(
            net in arb_network(),
            pick in 0usize..100,
            bump in 1.0f64..10.0,
        ) {
            let e = pick % net.edges().len();
            let before = effective_resistance_laplacian(&net).unwrap();
            let bumped = net.with_resistance(e, net.edges()[e].resistance * bump);
            let after = effective_resistance_laplacian(&bumped).unwrap();
            prop_assert!(after >= before * (1.0 - 1e-12));
        }

        #[test]
        fn scaling_resistances_scales_effective_resistance(net in arb_network(), s in 0.01f64..100.0) {
            let r = effective_resistance_laplacian(&net).unwrap();
            let rs = effective_resistance_laplacian(&net.scaled(s)).unwrap();
            prop_assert!((rs - s * r).abs() <= 1e-12 * (s * r).max(1.0));
        }
    }
}
