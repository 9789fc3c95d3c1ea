//! W-KNN topology, edge features and the graph Laplacian.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::wasserstein::{wasserstein_1d, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::linalg::Matrix;
use crate::scene::Scene;

/// Distance used to pick each node's K nearest neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EdgeMetric {
    /// 1-Wasserstein distance between magnitude distributions.
    #[default]
    Wasserstein,
    /// Plain spatial distance.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GraphConfig {
    pub k: usize,
    /// Edge-weight temperature; `None` takes the median W over the KNN edges.
    pub tau_w: Option<f64>,
    pub metric: EdgeMetric,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { k: 10, tau_w: None, metric: EdgeMetric::Wasserstein }
    }
}

/// Features of a directed edge as seen from the receiving node: the
/// offset points from receiver to neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeature {
    pub dx: f64,
    pub dy: f64,
    pub d_euc: f64,
    pub w_dist: f64,
    pub los: bool,
}

impl EdgeFeature {
    pub const DIM: usize = 5;

    pub fn reversed(self) -> Self {
        EdgeFeature { dx: -self.dx, dy: -self.dy, ..self }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.dx, self.dy, self.d_euc, self.w_dist, if self.los { 1.0 } else { 0.0 }]
    }
}

/// Undirected edge with `u < v`; `feature` is oriented from `u` to `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub u: usize,
    pub v: usize,
    pub feature: EdgeFeature,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    coords: Vec<(f64, f64)>,
    edges: Vec<GraphEdge>,
    /// Per node: `(neighbour, edge index)` sorted by neighbour.
    adjacency: Vec<Vec<(usize, usize)>>,
    k: usize,
    metric: EdgeMetric,
    tau_w: f64,
    dist_scale: f64,
}

/// 1 iff both endpoints see the transmitter.
pub fn los_indicator(scene: &Scene, u: Point3, v: Point3) -> bool {
    scene.has_los(u) && scene.has_los(v)
}

fn knn_row(
    k: usize,
    n: usize,
    kk: usize,
    coords: &[(f64, f64)],
    dists: &[EmpiricalDistribution],
    metric: EdgeMetric,
    buf: &mut Vec<(f64, usize)>,
) -> Vec<usize> {
    buf.clear();
    for j in 0..n {
        if j == k {
            continue;
        }
        let m = match metric {
            EdgeMetric::Wasserstein => wasserstein_1d(&dists[k], &dists[j]),
            EdgeMetric::Euclidean => euclid(coords[k], coords[j]),
        };
        buf.push((m, j));
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if kk < buf.len() {
        buf.select_nth_unstable_by(kk - 1, cmp);
        buf.truncate(kk);
    }
    buf.sort_unstable_by(cmp);
    buf.iter().map(|&(_, j)| j).collect()
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn positive_or_one(x: Option<f64>) -> f64 {
    match x {
        Some(v) if v > 0.0 && v.is_finite() => v,
        _ => 1.0,
    }
}

/// Builds the union-symmetrized KNN graph. `los_fn(a, b)` gives the LoS
/// flag of the node pair.
pub fn build_wknn_graph<F>(
    coords: &[(f64, f64)],
    dists: &[EmpiricalDistribution],
    cfg: &GraphConfig,
    los_fn: F,
) -> Result<SpatialGraph>
where
    F: Fn(usize, usize) -> bool,
{
    let n = coords.len();
    if dists.len() != n {
        return Err(Error::Shape("one distribution per node required".into()));
    }
    if cfg.k == 0 || cfg.k >= n {
        return Err(Error::Config(alloc::format!("K = {} out of range for {n} nodes", cfg.k)));
    }
    if let Some(t) = cfg.tau_w {
        if !(t > 0.0) {
            return Err(Error::Config("tau_w must be > 0".into()));
        }
    }
    let mut pairs = Vec::with_capacity(n * cfg.k);
    let mut buf = Vec::with_capacity(n);
    for k in 0..n {
        for j in knn_row(k, n, cfg.k, coords, dists, cfg.metric, &mut buf) {
            pairs.push((k.min(j), k.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut edges: Vec<GraphEdge> = pairs
        .into_iter()
        .map(|(u, v)| GraphEdge { u, v, feature: edge_feature(coords, dists, u, v, &los_fn), weight: 0.0 })
        .collect();
    let tau_w = match cfg.tau_w {
        Some(t) => t,
        None => positive_or_one(median(edges.iter().map(|e| e.feature.w_dist).collect())),
    };
    for e in &mut edges {
        e.weight = (-e.feature.w_dist / tau_w).exp();
    }
    let dist_scale = positive_or_one(median(edges.iter().map(|e| e.feature.d_euc).collect()));
    let mut adjacency = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        adjacency[e.u].push((e.v, i));
        adjacency[e.v].push((e.u, i));
    }
    Ok(SpatialGraph {
        coords: coords.to_vec(),
        edges,
        adjacency,
        k: cfg.k,
        metric: cfg.metric,
        tau_w,
        dist_scale,
    })
}

fn edge_feature<F: Fn(usize, usize) -> bool>(
    coords: &[(f64, f64)],
    dists: &[EmpiricalDistribution],
    u: usize,
    v: usize,
    los_fn: &F,
) -> EdgeFeature {
    let (dx, dy) = (coords[v].0 - coords[u].0, coords[v].1 - coords[u].1);
    EdgeFeature {
        dx,
        dy,
        d_euc: (dx * dx + dy * dy).sqrt(),
        w_dist: wasserstein_1d(&dists[u], &dists[v]),
        los: los_fn(u, v),
    }
}

impl SpatialGraph {
    /// Assembles a graph from explicit parts; used for subgraphs and by
    /// file readers. Edges must satisfy `u < v < coords.len()`.
    pub fn from_parts(
        coords: Vec<(f64, f64)>,
        edges: Vec<GraphEdge>,
        k: usize,
        metric: EdgeMetric,
        tau_w: f64,
        dist_scale: f64,
    ) -> Result<Self> {
        let n = coords.len();
        let mut adjacency = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            if e.u >= e.v || e.v >= n {
                return Err(Error::Shape(alloc::format!("bad edge ({}, {})", e.u, e.v)));
            }
            adjacency[e.u].push((e.v, i));
            adjacency[e.v].push((e.u, i));
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        if !(tau_w > 0.0) || !(dist_scale > 0.0) {
            return Err(Error::Config("graph scales must be > 0".into()));
        }
        Ok(SpatialGraph { coords, edges, adjacency, k, metric, tau_w, dist_scale })
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> EdgeMetric {
        self.metric
    }

    pub fn tau_w(&self) -> f64 {
        self.tau_w
    }

    /// Median edge length used to normalise offsets for the filter network.
    pub fn dist_scale(&self) -> f64 {
        self.dist_scale
    }

    pub fn neighbors(&self, k: usize) -> &[(usize, usize)] {
        &self.adjacency[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.adjacency[k].len()
    }

    pub fn weighted_degree(&self, k: usize) -> f64 {
        self.adjacency[k].iter().map(|&(_, e)| self.edges[e].weight).sum()
    }

    /// Edge feature for messages into `receiver` along edge `edge`.
    pub fn edge_feature_into(&self, receiver: usize, edge: usize) -> EdgeFeature {
        let e = &self.edges[edge];
        if e.u == receiver {
            e.feature
        } else {
            e.feature.reversed()
        }
    }

    /// Scale-normalised edge feature fed to the filter network.
    pub fn edge_input(&self, receiver: usize, edge: usize) -> [f64; 5] {
        let f = self.edge_feature_into(receiver, edge);
        let s = self.dist_scale;
        [f.dx / s, f.dy / s, f.d_euc / s, f.w_dist / self.tau_w, if f.los { 1.0 } else { 0.0 }]
    }

    pub fn laplacian_dense(&self) -> Matrix {
        let n = self.n_nodes();
        let mut l = Matrix::zeros(n, n);
        for e in &self.edges {
            l.set(e.u, e.v, l.get(e.u, e.v) - e.weight);
            l.set(e.v, e.u, l.get(e.v, e.u) - e.weight);
            l.set(e.u, e.u, l.get(e.u, e.u) + e.weight);
            l.set(e.v, e.v, l.get(e.v, e.v) + e.weight);
        }
        l
    }

    /// `L X` for `X` stored row-major with `dim` columns per node.
    pub fn laplacian_mul(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for e in &self.edges {
            let (u, v) = (e.u * dim, e.v * dim);
            for d in 0..dim {
                let diff = e.weight * (x[u + d] - x[v + d]);
                out[u + d] += diff;
                out[v + d] -= diff;
            }
        }
        out
    }

    /// Nodes within `hops` of any seed, ascending.
    pub fn khop_nodes(&self, seeds: &[usize], hops: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_nodes()];
        let mut frontier: Vec<usize> = Vec::new();
        for &s in seeds {
            if !seen[s] {
                seen[s] = true;
                frontier.push(s);
            }
        }
        for _ in 0..hops {
            let mut next = Vec::new();
            for &k in &frontier {
                for &(j, _) in &self.adjacency[k] {
                    if !seen[j] {
                        seen[j] = true;
                        next.push(j);
                    }
                }
            }
            frontier = next;
        }
        (0..self.n_nodes()).filter(|&i| seen[i]).collect()
    }

    /// Induced subgraph on ascending `nodes`, keeping edge features,
    /// weights and scales. Node `i` of the subgraph is `nodes[i]`.
    pub fn induced(&self, nodes: &[usize]) -> Result<SpatialGraph> {
        let mut local = vec![usize::MAX; self.n_nodes()];
        for (i, &g) in nodes.iter().enumerate() {
            local[g] = i;
        }
        let mut edges = Vec::new();
        for &g in nodes {
            for &(j, e) in &self.adjacency[g] {
                if j > g && local[j] != usize::MAX {
                    let mut edge = self.edges[e].clone();
                    edge.u = local[g];
                    edge.v = local[j];
                    if edge.u > edge.v {
                        core::mem::swap(&mut edge.u, &mut edge.v);
                        edge.feature = edge.feature.reversed();
                    }
                    edges.push(edge);
                }
            }
        }
        let coords = nodes.iter().map(|&g| self.coords[g]).collect();
        SpatialGraph::from_parts(coords, edges, self.k, self.metric, self.tau_w, self.dist_scale)
    }

    /// Appends nodes and links each by its own KNN selection over the
    /// enlarged node set; existing selections, `tau_w` and scales are kept.
    /// `dists` covers old and new nodes. Returns the new node indices.
    pub fn append_nodes<F>(
        &mut self,
        new_coords: &[(f64, f64)],
        dists: &[EmpiricalDistribution],
        los_fn: F,
    ) -> Result<core::ops::Range<usize>>
    where
        F: Fn(usize, usize) -> bool,
    {
        let start = self.n_nodes();
        self.coords.extend_from_slice(new_coords);
        let n = self.coords.len();
        if dists.len() != n {
            self.coords.truncate(start);
            return Err(Error::Shape("one distribution per node required".into()));
        }
        let kk = self.k.min(n - 1).max(1);
        let mut pairs = Vec::new();
        let mut buf = Vec::with_capacity(n);
        for k in start..n {
            for j in knn_row(k, n, kk, &self.coords, dists, self.metric, &mut buf) {
                pairs.push((k.min(j), k.max(j)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        self.adjacency.resize(n, Vec::new());
        for (u, v) in pairs {
            let feature = edge_feature(&self.coords, dists, u, v, &los_fn);
            let weight = (-feature.w_dist / self.tau_w).exp();
            let idx = self.edges.len();
            self.edges.push(GraphEdge { u, v, feature, weight });
            self.adjacency[u].push((v, idx));
            self.adjacency[v].push((u, idx));
        }
        for a in &mut self.adjacency {
            a.sort_unstable();
        }
        Ok(start..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use crate::rng;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    fn random_graph(n: usize, k: usize, seed: u64) -> SpatialGraph {
        let mut r = rng::stream(seed, &[]);
        let coords: Vec<(f64, f64)> =
            (0..n).map(|_| (rng::uniform_range(&mut r, 0.0, 10.0), rng::uniform_range(&mut r, 0.0, 3.0))).collect();
        let dists: Vec<_> = (0..n).map(|_| dist(&[rng::uniform(&mut r), rng::uniform(&mut r) * 2.0])).collect();
        build_wknn_graph(&coords, &dists, &GraphConfig { k, ..Default::default() }, |_, _| true).unwrap()
    }

    #[test]
    fn two_nodes() {
        let g = build_wknn_graph(
            &[(0.0, 0.0), (3.0, 4.0)],
            &[dist(&[1.0]), dist(&[3.0])],
            &GraphConfig { k: 1, tau_w: Some(4.0), metric: EdgeMetric::Wasserstein },
            |_, _| false,
        )
        .unwrap();
        assert_eq!(g.n_edges(), 1);
        let e = &g.edges()[0];
        assert_eq!(e.feature.d_euc, 5.0);
        assert_eq!(e.feature.w_dist, 2.0);
        assert!((e.weight - (-0.5f64).exp()).abs() < 1e-15);
        let into0 = g.edge_feature_into(0, 0);
        let into1 = g.edge_feature_into(1, 0);
        assert_eq!((into0.dx, into1.dx), (3.0, -3.0));
    }

    #[test]
    fn identical_distributions_tie_by_index() {
        let coords: Vec<_> = (0..6).map(|i| (i as f64, 0.0)).collect();
        let dists: Vec<_> = (0..6).map(|_| dist(&[0.5, 0.7])).collect();
        let g = build_wknn_graph(&coords, &dists, &GraphConfig { k: 2, ..Default::default() }, |_, _| true)
            .unwrap();
        assert!(g.edges().iter().all(|e| e.weight == 1.0));
        // Node 0 picks {1, 2}; node 3 picks {0, 1}; the rest also pick {0, 1}.
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.u, e.v)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (1, 3), (1, 4), (1, 5)]);
        assert_eq!(g.tau_w(), 1.0);
    }

    #[test]
    fn every_node_has_at_least_k_neighbours() {
        let g = random_graph(40, 5, 3);
        for k in 0..40 {
            assert!(g.degree(k) >= 5);
        }
    }

    #[test]
    fn k_out_of_range() {
        let d = [dist(&[1.0]), dist(&[2.0])];
        let c = [(0.0, 0.0), (1.0, 0.0)];
        assert!(build_wknn_graph(&c, &d, &GraphConfig { k: 2, ..Default::default() }, |_, _| true).is_err());
        assert!(build_wknn_graph(&c, &d, &GraphConfig { k: 0, ..Default::default() }, |_, _| true).is_err());
    }

    #[test]
    fn laplacian_properties() {
        let g = random_graph(12, 3, 9);
        let l = g.laplacian_dense();
        for i in 0..12 {
            let s: f64 = l.row(i).iter().sum();
            assert!(s.abs() < 1e-10);
            for j in 0..12 {
                assert_eq!(l.get(i, j), l.get(j, i));
            }
        }
        assert!(symmetric_eigenvalues(&l).iter().all(|&e| e >= -1e-8));
        let mut r = rng::stream(4, &[]);
        let x: Vec<f64> = (0..12).map(|_| rng::normal(&mut r)).collect();
        let lx = g.laplacian_mul(&x, 1);
        let quad: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
        let half_sum: f64 = g.edges().iter().map(|e| e.weight * (x[e.u] - x[e.v]).powi(2)).sum();
        assert!((quad - half_sum).abs() < 1e-9);
    }

    #[test]
    fn induced_subgraph_keeps_local_edges() {
        let g = random_graph(30, 3, 5);
        let nodes = g.khop_nodes(&[7], 2);
        let sub = g.induced(&nodes).unwrap();
        let c = nodes.iter().position(|&x| x == 7).unwrap();
        assert_eq!(sub.degree(c), g.degree(7));
        for (slot, &(j, e)) in sub.neighbors(c).iter().enumerate() {
            let (gj, ge) = g.neighbors(7)[slot];
            assert_eq!(nodes[j], gj);
            assert_eq!(sub.edge_input(c, e), g.edge_input(7, ge));
        }
    }

    #[test]
    fn append_keeps_existing_edges() {
        let mut r = rng::stream(8, &[]);
        let coords: Vec<(f64, f64)> = (0..25).map(|i| (i as f64, rng::uniform(&mut r))).collect();
        let dists: Vec<_> = (0..25).map(|_| dist(&[rng::uniform(&mut r), rng::uniform(&mut r)])).collect();
        let cfg = GraphConfig { k: 3, ..Default::default() };
        let mut g = build_wknn_graph(&coords[..20], &dists[..20], &cfg, |_, _| true).unwrap();
        let before = g.edges().to_vec();
        let added = g.append_nodes(&coords[20..], &dists, |_, _| true).unwrap();
        assert_eq!(added, 20..25);
        assert_eq!(&g.edges()[..before.len()], &before[..]);
        for k in added {
            assert!(g.degree(k) >= 3);
        }
    }
}
