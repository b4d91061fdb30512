//! Density-based clustering (HDBSCAN*), deterministic variant.
//!
//! The pipeline is the standard one: core distances with
//! `k = min_cluster_size`, mutual reachability distances, a minimum
//! spanning structure, the single-linkage hierarchy, condensation by
//! minimum cluster size, and excess-of-mass cluster extraction.
//!
//! One deliberate difference from textbook implementations: instead of
//! building a binary dendrogram from an arbitrary tie-broken MST, edges are
//! processed in Kruskal order with equal-weight edges merged as one event.
//! The hierarchy is then exactly the evolution of the connected components
//! of the mutual-reachability threshold graph, which does not depend on
//! which of several equal-weight spanning trees a tie-break would pick.
//! Output is therefore deterministic and, up to cluster relabeling,
//! invariant under permutation of the input points.

use crate::error::{Error, Result};

/// Per-point cluster labels. `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    /// Indices of points labeled noise.
    pub fn outliers(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    /// Point indices belonging to cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(c))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Finite stand-in for `1/0` so zero-distance merges never produce NaN in
/// the stability sums. Real lambdas stay far below this.
const LAMBDA_CAP: f64 = 1e18;

fn lambda(dist: f64) -> f64 {
    if dist > 1e-18 {
        1.0 / dist
    } else {
        LAMBDA_CAP
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller root wins so component roots stay reproducible.
        let (keep, drop) = if ra <= rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop] = keep;
        keep
    }
}

/// A node of the k-ary merge forest. Children are components that became
/// connected at `dist`.
struct MergeNode {
    dist: f64,
    size: usize,
    min_point: usize,
    children: Vec<NodeRef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeRef {
    Point(usize),
    Merge(usize),
}

struct Forest {
    nodes: Vec<MergeNode>,
}

impl Forest {
    fn size(&self, r: NodeRef) -> usize {
        match r {
            NodeRef::Point(_) => 1,
            NodeRef::Merge(i) => self.nodes[i].size,
        }
    }

    fn min_point(&self, r: NodeRef) -> usize {
        match r {
            NodeRef::Point(p) => p,
            NodeRef::Merge(i) => self.nodes[i].min_point,
        }
    }

    /// All point indices under `r`.
    fn points(&self, r: NodeRef) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![r];
        while let Some(cur) = stack.pop() {
            match cur {
                NodeRef::Point(p) => out.push(p),
                NodeRef::Merge(i) => stack.extend(self.nodes[i].children.iter().copied()),
            }
        }
        out
    }
}

/// Builds the merge forest from the complete mutual-reachability graph.
///
/// Returns the root. Edges are sorted by `(weight, smaller id, larger id)`
/// and processed in batches of exactly equal weight; every component formed
/// within one batch becomes a single k-ary node.
fn build_hierarchy(mreach: &[Vec<f64>], n: usize) -> (Forest, NodeRef) {
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((mreach[i][j], i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut uf = UnionFind::new(n);
    let mut forest = Forest { nodes: Vec::new() };
    // Current node for each component root.
    let mut refs: Vec<NodeRef> = (0..n).map(NodeRef::Point).collect();
    let mut root = NodeRef::Point(0);

    let mut idx = 0;
    while idx < edges.len() {
        let weight = edges[idx].0;
        let mut end = idx;
        while end < edges.len() && edges[end].0 == weight {
            end += 1;
        }
        // Children gathered per component that grows during this batch.
        let mut pending: Vec<(usize, Vec<NodeRef>)> = Vec::new();
        for &(_, a, b) in &edges[idx..end] {
            let (ra, rb) = (uf.find(a), uf.find(b));
            if ra == rb {
                continue;
            }
            let take = |pending: &mut Vec<(usize, Vec<NodeRef>)>, r: usize| -> Vec<NodeRef> {
                if let Some(pos) = pending.iter().position(|(root, _)| *root == r) {
                    pending.swap_remove(pos).1
                } else {
                    vec![refs[r]]
                }
            };
            let mut kids = take(&mut pending, ra);
            kids.extend(take(&mut pending, rb));
            let merged = uf.union(ra, rb);
            pending.push((merged, kids));
        }
        for (r, mut kids) in pending {
            kids.sort_by_key(|k| forest.min_point(*k));
            let node = MergeNode {
                dist: weight,
                size: kids.iter().map(|k| forest.size(*k)).sum(),
                min_point: kids.iter().map(|k| forest.min_point(*k)).min().unwrap(),
                children: kids,
            };
            forest.nodes.push(node);
            refs[r] = NodeRef::Merge(forest.nodes.len() - 1);
            root = refs[r];
        }
        idx = end;
    }
    (forest, root)
}

/// One cluster of the condensed tree.
struct Condensed {
    parent: Option<usize>,
    birth: f64,
    /// `(lambda, size)` of everything that departed this cluster: child
    /// clusters at their birth, points at the level they fell out.
    departures: Vec<(f64, usize)>,
    children: Vec<usize>,
    /// Points that leave directly at this cluster (not via a child).
    points: Vec<usize>,
}

/// Walks the merge forest top-down, keeping only splits where at least two
/// sides have `min_cluster_size` points. Smaller side-branches dissolve
/// into their parent cluster as departing points.
fn condense(forest: &Forest, root: NodeRef, mcs: usize) -> Vec<Condensed> {
    let mut clusters = vec![Condensed {
        parent: None,
        birth: 0.0,
        departures: Vec::new(),
        children: Vec::new(),
        points: Vec::new(),
    }];
    // The stack only ever holds components of at least `mcs >= 2` points,
    // so every entry is a merge node.
    let mut stack: Vec<(NodeRef, usize)> = vec![(root, 0)];
    while let Some((node_ref, cluster)) = stack.pop() {
        let node = match node_ref {
            NodeRef::Point(_) => unreachable!("stack holds only components of >= 2 points"),
            NodeRef::Merge(i) => &forest.nodes[i],
        };
        let lam = lambda(node.dist);
        let big = node.children.iter().filter(|c| forest.size(**c) >= mcs).count();
        if big >= 2 {
            // True split: each big side becomes a child cluster.
            for &child in &node.children {
                if forest.size(child) >= mcs {
                    clusters.push(Condensed {
                        parent: Some(cluster),
                        birth: lam,
                        departures: Vec::new(),
                        children: Vec::new(),
                        points: Vec::new(),
                    });
                    let id = clusters.len() - 1;
                    clusters[cluster].children.push(id);
                    clusters[cluster].departures.push((lam, forest.size(child)));
                    stack.push((child, id));
                } else {
                    for p in forest.points(child) {
                        clusters[cluster].departures.push((lam, 1));
                        clusters[cluster].points.push(p);
                    }
                }
            }
        } else if big == 1 {
            // The cluster lives on through its one big side.
            for &child in &node.children {
                if forest.size(child) >= mcs {
                    stack.push((child, cluster));
                } else {
                    for p in forest.points(child) {
                        clusters[cluster].departures.push((lam, 1));
                        clusters[cluster].points.push(p);
                    }
                }
            }
        } else {
            // Everything is small: the cluster dissolves here.
            for &child in &node.children {
                for p in forest.points(child) {
                    clusters[cluster].departures.push((lam, 1));
                    clusters[cluster].points.push(p);
                }
            }
        }
    }
    clusters
}

/// Excess-of-mass extraction over the condensed tree.
///
/// The root is never selected on its own (a single all-points cluster says
/// nothing), matching the usual default. Returns the winning cluster ids.
fn extract_eom(clusters: &[Condensed]) -> Vec<usize> {
    let m = clusters.len();
    let mut stability: Vec<f64> = clusters
        .iter()
        .map(|c| c.departures.iter().map(|(lam, size)| (lam - c.birth) * *size as f64).sum())
        .collect();
    let mut selected = vec![false; m];
    // Children have larger ids than their parent, so reverse order visits
    // children first.
    for id in (1..m).rev() {
        let subtree: f64 = clusters[id].children.iter().map(|&c| stability[c]).sum();
        if subtree > stability[id] {
            stability[id] = subtree;
        } else {
            selected[id] = true;
        }
    }
    // Shadow any selected cluster underneath a selected ancestor.
    let mut winners = Vec::new();
    for id in 1..m {
        if !selected[id] {
            continue;
        }
        let mut anc = clusters[id].parent;
        let mut shadowed = false;
        while let Some(a) = anc {
            if selected[a] {
                shadowed = true;
                break;
            }
            anc = clusters[a].parent;
        }
        if !shadowed {
            winners.push(id);
        }
    }
    winners
}

/// Clusters `coords` (any fixed dimension) with HDBSCAN*.
pub(crate) fn cluster_coords(coords: &[Vec<f64>], min_cluster_size: usize) -> Result<ClusterAssignment> {
    if min_cluster_size < 2 {
        return Err(Error::InvalidConfig("min_cluster_size must be >= 2".into()));
    }
    let n = coords.len();
    if n == 0 {
        return Ok(ClusterAssignment { labels: Vec::new(), n_clusters: 0 });
    }
    let dim = coords[0].len();
    for c in coords {
        if c.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite coordinate".into()));
        }
    }
    if n < min_cluster_size {
        return Ok(ClusterAssignment { labels: vec![None; n], n_clusters: 0 });
    }

    let mut dist = vec![vec![0.0f64; n]; n];
    let mut max_dist = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&coords[i], &coords[j]);
            dist[i][j] = d;
            dist[j][i] = d;
            max_dist = max_dist.max(d);
        }
    }
    if max_dist == 0.0 {
        // All points coincide: one cluster holding everything.
        return Ok(ClusterAssignment { labels: vec![Some(0); n], n_clusters: 1 });
    }

    // Core distance: k-th smallest distance from the point, the point
    // itself included as distance zero.
    let k = min_cluster_size;
    let mut core = vec![0.0f64; n];
    let mut scratch = vec![0.0f64; n];
    for i in 0..n {
        scratch.copy_from_slice(&dist[i]);
        scratch.sort_by(f64::total_cmp);
        core[i] = scratch[k - 1];
    }

    let mut mreach = dist;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                mreach[i][j] = mreach[i][j].max(core[i]).max(core[j]);
            }
        }
    }

    let (forest, root) = build_hierarchy(&mreach, n);
    let condensed = condense(&forest, root, min_cluster_size);
    let winners = extract_eom(&condensed);

    // A point belongs to the winner closest above its departure cluster.
    let mut winner_of: Vec<Option<usize>> = vec![None; condensed.len()];
    for (rank, &w) in winners.iter().enumerate() {
        winner_of[w] = Some(rank);
    }
    let mut labels = vec![None; n];
    for (cid, cluster) in condensed.iter().enumerate() {
        if cluster.points.is_empty() {
            continue;
        }
        let mut label = None;
        let mut cur = Some(cid);
        while let Some(c) = cur {
            if let Some(w) = winner_of[c] {
                label = Some(w);
                break;
            }
            cur = condensed[c].parent;
        }
        for &p in &cluster.points {
            labels[p] = label;
        }
    }

    // Renumber winners by their smallest member point so labels are stable.
    let mut first_point = vec![usize::MAX; winners.len()];
    for (p, l) in labels.iter().enumerate() {
        if let Some(w) = l {
            first_point[*w] = first_point[*w].min(p);
        }
    }
    let mut order: Vec<usize> = (0..winners.len()).collect();
    order.sort_by_key(|&w| first_point[w]);
    let mut rename = vec![0usize; winners.len()];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    let labels: Vec<Option<usize>> = labels.into_iter().map(|l| l.map(|w| rename[w])).collect();
    Ok(ClusterAssignment { labels, n_clusters: winners.len() })
}
