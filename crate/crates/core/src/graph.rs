//! Patch-similarity graphs and the non-local gradient, divergence, node norm
//! and shrinkage on them.
//!
//! Edges are stored in CSR form with each node's neighbors sorted by index.
//! A [`GraphField`] holds one value per directed edge in the same layout.
//! The non-local gradient of `u` on edge `(i, j)` is `(u(j) - u(i)) sqrt(w(i, j))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;

/// Floor applied to the forced spatial neighbors so the graph stays connected.
pub const SPATIAL_WEIGHT_FLOOR: f64 = 1e-6;

/// Nodes sampled when estimating the patch-distance scale.
pub const H_SAMPLE_SIZE: usize = 512;

/// Construction parameters of a patch graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    pub patch_radius: usize,
    pub window_radius: usize,
    pub k_neighbors: usize,
    /// Patch-distance scale; `None` estimates it from the reference.
    pub h: Option<f64>,
    /// Lower bound on the estimated scale, relative to the reference's
    /// dynamic range times the patch side length.
    pub h_floor: f64,
    /// Seed of the node subsample used to estimate `h`.
    pub h_seed: u64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            patch_radius: 2,
            window_radius: 10,
            k_neighbors: 10,
            h: None,
            h_floor: 1e-2,
            h_seed: 0,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidParameter("k_neighbors must be >= 1".into()));
        }
        if self.window_radius < self.patch_radius {
            return Err(Error::InvalidParameter("window_radius must be >= patch_radius".into()));
        }
        if self.window_radius == 0 {
            return Err(Error::InvalidParameter("window_radius must be >= 1".into()));
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("h must be positive, got {h}")));
            }
        }
        if !(self.h_floor > 0.0 && self.h_floor.is_finite()) {
            return Err(Error::InvalidParameter("h_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted directed graph over the pixels of a `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    /// Source node of every edge slot.
    sources: Vec<u32>,
    weights: Vec<f64>,
    sqrt_weights: Vec<f64>,
    /// For symmetric graphs, the slot of edge `(j, i)` for every edge `(i, j)`.
    reverse: Option<Vec<usize>>,
    /// Scale used to compute the weights (0 for fixed-weight graphs).
    h: f64,
}

impl PatchGraph {
    /// Builds a graph from CSR arrays. Neighbor lists must be strictly
    /// increasing, free of self-edges, and every weight positive.
    pub fn from_csr(
        width: usize,
        height: usize,
        offsets: Vec<usize>,
        neighbors: Vec<u32>,
        weights: Vec<f64>,
        h: f64,
    ) -> Result<Self> {
        let n = width * height;
        if offsets.len() != n + 1 || offsets[0] != 0 || *offsets.last().unwrap() != neighbors.len() {
            return Err(Error::Graph("malformed CSR offsets".into()));
        }
        if neighbors.len() != weights.len() {
            return Err(Error::Graph("neighbor and weight arrays differ in length".into()));
        }
        for i in 0..n {
            let (a, b) = (offsets[i], offsets[i + 1]);
            if b <= a {
                return Err(Error::Graph(format!("node {i} has no neighbors")));
            }
            let row = &neighbors[a..b];
            if row.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Graph(format!("neighbors of node {i} not strictly increasing")));
            }
            if row.iter().any(|&j| j as usize == i || j as usize >= n) {
                return Err(Error::Graph(format!("node {i} has a self-edge or out-of-range neighbor")));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Graph("weights must be positive and finite".into()));
        }
        let sqrt_weights = weights.iter().map(|w| w.sqrt()).collect();
        let sources = (0..n)
            .flat_map(|i| std::iter::repeat_n(i as u32, offsets[i + 1] - offsets[i]))
            .collect();
        let mut graph = Self {
            width,
            height,
            offsets,
            neighbors,
            sources,
            weights,
            sqrt_weights,
            reverse: None,
            h,
        };
        graph.reverse = graph.reverse_index();
        Ok(graph)
    }

    fn reverse_index(&self) -> Option<Vec<usize>> {
        let mut rev = Vec::with_capacity(self.edge_count());
        for i in 0..self.node_count() {
            for slot in self.offsets[i]..self.offsets[i + 1] {
                let j = self.neighbors[slot] as usize;
                let back = self.slot_of(j, i)?;
                if self.weights[back] != self.weights[slot] {
                    return None;
                }
                rev.push(back);
            }
        }
        Some(rev)
    }

    /// Edge slot of `(i, j)`, if stored.
    pub fn slot_of(&self, i: usize, j: usize) -> Option<usize> {
        let a = self.offsets[i];
        let row = &self.neighbors[a..self.offsets[i + 1]];
        row.binary_search(&(j as u32)).ok().map(|k| a + k)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn node_count(&self) -> usize {
        self.width * self.height
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self) -> &[u32] {
        &self.neighbors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Slots of node `i`'s outgoing edges.
    pub fn edges_of(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Whether every edge `(i, j)` has a reverse `(j, i)` with equal weight.
    pub fn is_symmetric(&self) -> bool {
        self.reverse.is_some()
    }

    fn check_image(&self, u: &Image) -> Result<()> {
        if u.dims() != (self.width, self.height) {
            return Err(Error::Dimension(format!(
                "graph is {}x{}, image is {}x{}",
                self.width,
                self.height,
                u.width(),
                u.height()
            )));
        }
        Ok(())
    }

    fn check_field(&self, d: &GraphField) -> Result<()> {
        if d.len() != self.edge_count() {
            return Err(Error::Dimension(format!(
                "graph field has {} entries, graph has {} edges",
                d.len(),
                self.edge_count()
            )));
        }
        Ok(())
    }

    /// Diagonal of `D^T D`: sum of incoming and outgoing weights per node.
    pub fn dtd_diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.node_count()];
        for i in 0..self.node_count() {
            for slot in self.edges_of(i) {
                let w = self.weights[slot];
                diag[i] += w;
                diag[self.neighbors[slot] as usize] += w;
            }
        }
        diag
    }
}

/// One value per directed edge of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphField {
    pub values: Vec<f64>,
}

impl GraphField {
    pub fn zeros(graph: &PatchGraph) -> Self {
        Self {
            values: vec![0.0; graph.edge_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &GraphField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> GraphField {
        GraphField {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn axpy(&mut self, factor: f64, other: &GraphField) {
        assert_eq!(self.len(), other.len(), "axpy on graph fields of different length");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn sub(&self, other: &GraphField) -> GraphField {
        assert_eq!(self.len(), other.len(), "sub on graph fields of different length");
        GraphField {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }
}

/// `(D u)(i, j) = (u(j) - u(i)) sqrt(w(i, j))`.
pub fn nl_gradient(u: &Image, graph: &PatchGraph) -> Result<GraphField> {
    graph.check_image(u)?;
    let us = u.as_slice();
    let values = (0..graph.edge_count())
        .into_par_iter()
        .map(|slot| {
            let (i, j) = (graph.sources[slot] as usize, graph.neighbors[slot] as usize);
            (us[j] - us[i]) * graph.sqrt_weights[slot]
        })
        .collect();
    Ok(GraphField { values })
}

/// Non-local divergence `-D^T d`. On symmetric graphs this is
/// `sum_j (d(i, j) - d(j, i)) sqrt(w(i, j))`.
pub fn nl_divergence(d: &GraphField, graph: &PatchGraph) -> Result<Image> {
    graph.check_field(d)?;
    let n = graph.node_count();
    let mut out = vec![0.0; n];
    match &graph.reverse {
        Some(rev) => {
            out.par_iter_mut().enumerate().for_each(|(i, o)| {
                let mut acc = 0.0;
                for slot in graph.edges_of(i) {
                    acc += (d.values[slot] - d.values[rev[slot]]) * graph.sqrt_weights[slot];
                }
                *o = acc;
            });
        }
        None => {
            for i in 0..n {
                for slot in graph.edges_of(i) {
                    let j = graph.neighbors[slot] as usize;
                    let t = d.values[slot] * graph.sqrt_weights[slot];
                    out[i] += t;
                    out[j] -= t;
                }
            }
        }
    }
    Image::new(graph.width, graph.height, out)
}

/// `D^T D u = -div(D u)`.
pub fn nl_dtd(u: &Image, graph: &PatchGraph) -> Result<Image> {
    Ok(nl_divergence(&nl_gradient(u, graph)?, graph)?.scaled(-1.0))
}

/// Euclidean norm of each node's outgoing entries.
pub fn nl_node_norm(d: &GraphField, graph: &PatchGraph) -> Result<Image> {
    graph.check_field(d)?;
    let data = (0..graph.node_count())
        .into_par_iter()
        .map(|i| graph.edges_of(i).map(|s| d.values[s] * d.values[s]).sum::<f64>().sqrt())
        .collect();
    Image::new(graph.width, graph.height, data)
}

/// Non-local total variation `sum_i |D u|_G(i)`.
pub fn nl_tv(u: &Image, graph: &PatchGraph) -> Result<f64> {
    Ok(nl_node_norm(&nl_gradient(u, graph)?, graph)?.sum())
}

/// Node-wise shrinkage of all outgoing entries by `threshold`.
pub fn nl_shrink(z: &GraphField, threshold: f64, graph: &PatchGraph) -> Result<GraphField> {
    graph.check_field(z)?;
    let norms = nl_node_norm(z, graph)?;
    let mut out = GraphField::zeros(graph);
    for i in 0..graph.node_count() {
        let norm = norms.as_slice()[i];
        if norm > threshold && norm > 0.0 {
            let s = (norm - threshold) / norm;
            for slot in graph.edges_of(i) {
                out.values[slot] = s * z.values[slot];
            }
        }
    }
    Ok(out)
}

/// Directed edges to the right and down periodic neighbors with weight 1.
/// Under this graph the non-local TV equals the isotropic TV of the grid.
pub fn local_stencil_graph(width: usize, height: usize) -> Result<PatchGraph> {
    if width < 2 || height < 2 {
        return Err(Error::Dimension(format!("stencil graph needs at least 2x2, got {width}x{height}")));
    }
    let n = width * height;
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::with_capacity(2 * n);
    offsets.push(0);
    for r in 0..height {
        for c in 0..width {
            let right = (r * width + (c + 1) % width) as u32;
            let down = (((r + 1) % height) * width + c) as u32;
            let (a, b) = if right < down { (right, down) } else { (down, right) };
            neighbors.push(a);
            neighbors.push(b);
            offsets.push(neighbors.len());
        }
    }
    let weights = vec![1.0; neighbors.len()];
    PatchGraph::from_csr(width, height, offsets, neighbors, weights, 0.0)
}

/// Squared patch distance with periodic extension.
fn patch_distance2(reference: &Image, i: usize, j: usize, radius: isize) -> f64 {
    let (w, h) = (reference.width() as isize, reference.height() as isize);
    let data = reference.as_slice();
    let (ri, ci) = ((i as isize) / w, (i as isize) % w);
    let (rj, cj) = ((j as isize) / w, (j as isize) % w);
    let mut acc = 0.0;
    for dr in -radius..=radius {
        let ra = (ri + dr).rem_euclid(h) * w;
        let rb = (rj + dr).rem_euclid(h) * w;
        for dc in -radius..=radius {
            let a = data[(ra + (ci + dc).rem_euclid(w)) as usize];
            let b = data[(rb + (cj + dc).rem_euclid(w)) as usize];
            acc += (a - b) * (a - b);
        }
    }
    acc
}

/// Distinct window candidates of node `i` in scan order, excluding `i`.
fn window_candidates(width: usize, height: usize, i: usize, radius: usize) -> Vec<usize> {
    let (w, h) = (width as isize, height as isize);
    let (r0, c0) = ((i / width) as isize, (i % width) as isize);
    let rad = radius as isize;
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
    let mut seen = std::collections::HashSet::new();
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            let j = ((r0 + dr).rem_euclid(h) * w + (c0 + dc).rem_euclid(w)) as usize;
            if j != i && seen.insert(j) {
                out.push(j);
            }
        }
    }
    out
}

fn spatial_neighbors(width: usize, height: usize, i: usize) -> [usize; 4] {
    let (r, c) = (i / width, i % width);
    [
        r * width + (c + 1) % width,
        r * width + (c + width - 1) % width,
        ((r + 1) % height) * width + c,
        ((r + height - 1) % height) * width + c,
    ]
}

/// `k`-th smallest squared patch distance of node `i` within its window.
fn kth_distance2(reference: &Image, i: usize, params: &GraphParams) -> f64 {
    let cands = window_candidates(reference.width(), reference.height(), i, params.window_radius);
    let mut d: Vec<f64> = cands
        .iter()
        .map(|&j| patch_distance2(reference, i, j, params.patch_radius as isize))
        .collect();
    let k = params.k_neighbors.min(d.len()) - 1;
    let (_, v, _) = d.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

/// Median over a seeded node subsample of the `k`-th-best patch distance,
/// floored at `h_floor * dynamic_range * (2 patch_radius + 1)`.
pub fn estimate_h(reference: &Image, params: &GraphParams) -> f64 {
    let n = reference.len();
    let nodes: Vec<usize> = if n <= H_SAMPLE_SIZE {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(params.h_seed);
        let mut v = rand::seq::index::sample(&mut rng, n, H_SAMPLE_SIZE).into_vec();
        v.sort_unstable();
        v
    };
    let dists: Vec<f64> = nodes
        .par_iter()
        .map(|&i| kth_distance2(reference, i, params).sqrt())
        .collect();
    let median = crate::edge::lower_median(&dists);
    let side = (2 * params.patch_radius + 1) as f64;
    let floor = params.h_floor * reference.dynamic_range() * side;
    median.max(floor).max(1e-100)
}

/// k-nearest patch graph within a search window, with the four spatial
/// neighbors always kept, symmetrized by union.
pub fn build_graph(reference: &Image, params: &GraphParams) -> Result<PatchGraph> {
    params.validate()?;
    let (width, height) = reference.dims();
    if !reference.is_finite() {
        return Err(Error::Graph("reference image is not finite".into()));
    }
    let h = params.h.unwrap_or_else(|| estimate_h(reference, params));
    let weight = |d2: f64| if d2 == 0.0 { 1.0 } else { (-d2 / (2.0 * h * h)).exp() };
    let n = width * height;

    let selections: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cands = window_candidates(width, height, i, params.window_radius);
            let mut scored: Vec<(f64, usize, usize)> = cands
                .iter()
                .enumerate()
                .map(|(order, &j)| (patch_distance2(reference, i, j, params.patch_radius as isize), order, j))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut kept: Vec<(usize, f64)> = scored
                .iter()
                .take(params.k_neighbors)
                .map(|&(d2, _, j)| (j, weight(d2)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            for j in spatial_neighbors(width, height, i) {
                if j != i && !kept.iter().any(|&(k, _)| k == j) {
                    let d2 = patch_distance2(reference, i, j, params.patch_radius as isize);
                    kept.push((j, weight(d2)));
                }
            }
            for (j, w) in kept.iter_mut() {
                if spatial_neighbors(width, height, i).contains(j) {
                    *w = w.max(SPATIAL_WEIGHT_FLOOR);
                }
            }
            kept
        })
        .collect();

    // union symmetrization; the weight of a pair does not depend on direction
    let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, kept) in selections.iter().enumerate() {
        for &(j, w) in kept {
            adjacency[i].push((j as u32, w));
            adjacency[j].push((i as u32, w));
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0);
    for row in adjacency.iter_mut() {
        row.sort_by_key(|e| e.0);
        row.dedup_by_key(|e| e.0);
        for &(j, w) in row.iter() {
            neighbors.push(j);
            weights.push(w);
        }
        offsets.push(neighbors.len());
    }
    let graph = PatchGraph::from_csr(width, height, offsets, neighbors, weights, h)?;
    if !graph.is_symmetric() {
        return Err(Error::Graph("symmetrization failed".into()));
    }
    log::debug!(
        "patch graph: {} nodes, {} edges, max degree {}, h = {h:.4e}",
        graph.node_count(),
        graph.edge_count(),
        graph.max_degree()
    );
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{grad_forward, pixel_norm, total_variation};
    use rand::Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn small_params() -> GraphParams {
        GraphParams { patch_radius: 1, window_radius: 3, k_neighbors: 5, ..Default::default() }
    }

    #[test]
    fn constant_reference_gives_unit_weights() {
        let g = build_graph(&Image::filled(12, 10, 0.7), &small_params()).unwrap();
        assert!(g.weights().iter().all(|&w| w == 1.0));
        assert!(g.is_symmetric());
    }

    #[test]
    fn similar_patches_get_larger_weights() {
        // columns 0..4 hold a ramp, column 6 a spike
        let u = Image::from_fn(16, 16, |_, c| if c == 6 { 10.0 } else { 0.0 });
        let params = GraphParams { h: Some(1.0), ..small_params() };
        let g = build_graph(&u, &params).unwrap();
        let i = 2 * 16 + 1; // (2, 1)
        let same = g.slot_of(i, 2 * 16 + 2).unwrap(); // (2, 2), identical patch
        let w_same = g.weights()[same];
        let mixed = g.slot_of(2 * 16 + 5, 2 * 16 + 6).unwrap(); // across the spike
        assert!(w_same > g.weights()[mixed]);
    }

    #[test]
    fn random_graph_is_symmetric_by_scan() {
        let g = build_graph(&random_image(1, 16, 16), &small_params()).unwrap();
        for i in 0..g.node_count() {
            for slot in g.edges_of(i) {
                let j = g.neighbors()[slot] as usize;
                let back = g.slot_of(j, i).expect("reverse edge");
                assert_eq!(g.weights()[back], g.weights()[slot]);
                assert_ne!(i, j);
            }
            assert!(g.degree(i) >= 4);
        }
    }

    #[test]
    fn graph_is_deterministic() {
        let u = random_image(2, 20, 14);
        assert_eq!(build_graph(&u, &small_params()).unwrap(), build_graph(&u, &small_params()).unwrap());
    }

    #[test]
    fn piecewise_constant_reference_has_positive_h() {
        let u = Image::from_fn(32, 32, |r, _| if r < 16 { 0.0 } else { 1.0 });
        let h = estimate_h(&u, &GraphParams::default());
        assert!(h > 0.0);
        let g = build_graph(&u, &GraphParams::default()).unwrap();
        assert!(g.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn bad_params_rejected() {
        let u = Image::zeros(8, 8);
        assert!(build_graph(&u, &GraphParams { k_neighbors: 0, ..Default::default() }).is_err());
        assert!(build_graph(&u, &GraphParams { patch_radius: 4, window_radius: 3, ..Default::default() }).is_err());
        assert!(build_graph(&u, &GraphParams { h: Some(0.0), ..Default::default() }).is_err());
    }

    #[test]
    fn stencil_graph_reproduces_local_operators() {
        let u = random_image(3, 9, 7);
        let g = local_stencil_graph(9, 7).unwrap();
        assert!((0..g.node_count()).all(|i| g.degree(i) == 2));
        assert!((nl_tv(&u, &g).unwrap() - total_variation(&u)).abs() <= 1e-12 * total_variation(&u));
        let grad = grad_forward(&u);
        let d = nl_gradient(&u, &g).unwrap();
        let norms = nl_node_norm(&d, &g).unwrap();
        assert!(norms.sub(&pixel_norm(&grad)).norm() <= 1e-12);
        for r in 0..7 {
            for c in 0..9 {
                let i = r * 9 + c;
                let right = g.slot_of(i, r * 9 + (c + 1) % 9).unwrap();
                let down = g.slot_of(i, ((r + 1) % 7) * 9 + c).unwrap();
                assert_eq!(d.values[right], grad.x.get(r, c));
                assert_eq!(d.values[down], grad.y.get(r, c));
            }
        }
    }

    #[test]
    fn stencil_shrink_matches_isotropic_shrink() {
        let u = random_image(4, 8, 8);
        let g = local_stencil_graph(8, 8).unwrap();
        let d = nl_gradient(&u, &g).unwrap();
        let s = nl_shrink(&d, 0.4, &g).unwrap();
        let local = crate::local::shrink_isotropic(&grad_forward(&u), crate::local::Threshold::Uniform(0.4));
        for r in 0..8 {
            for c in 0..8 {
                let i = r * 8 + c;
                let right = g.slot_of(i, r * 8 + (c + 1) % 8).unwrap();
                let down = g.slot_of(i, ((r + 1) % 8) * 8 + c).unwrap();
                assert!((s.values[right] - local.x.get(r, c)).abs() <= 1e-12);
                assert!((s.values[down] - local.y.get(r, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_basics() {
        let g = build_graph(&random_image(5, 10, 10), &small_params()).unwrap();
        assert!(nl_gradient(&Image::filled(10, 10, 3.0), &g).unwrap().norm() == 0.0);
        let stencil = local_stencil_graph(4, 4).unwrap();
        let mut ind = Image::zeros(4, 4);
        ind.set(0, 1, 1.0);
        let d = nl_gradient(&ind, &stencil).unwrap();
        assert_eq!(d.values[stencil.slot_of(0, 1).unwrap()], 1.0);
    }

    fn adjoint_gap(g: &PatchGraph, seed: u64) -> f64 {
        let u = random_image(seed, g.width(), g.height());
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let d = GraphField {
            values: (0..g.edge_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let du = nl_gradient(&u, g).unwrap();
        let div = nl_divergence(&d, g).unwrap();
        (du.dot(&d) + u.dot(&div)).abs() / (du.norm() * d.norm())
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        let g = build_graph(&random_image(6, 16, 12), &small_params()).unwrap();
        assert!(adjoint_gap(&g, 7) < 1e-12);
        assert!(adjoint_gap(&local_stencil_graph(16, 12).unwrap(), 8) < 1e-12);
    }

    #[test]
    fn divergence_of_single_edge_pair() {
        // two-node-wide graph: 0 <-> 1 plus vertical edges
        let g = build_graph(&Image::filled(4, 4, 0.0), &GraphParams { k_neighbors: 1, patch_radius: 0, window_radius: 1, ..Default::default() }).unwrap();
        let mut d = GraphField::zeros(&g);
        assert!(nl_divergence(&d, &g).unwrap().norm() == 0.0);
        let slot = g.slot_of(0, 1).unwrap();
        d.values[slot] = 2.5;
        let div = nl_divergence(&d, &g).unwrap();
        assert_eq!(div.as_slice()[0], 2.5);
        assert_eq!(div.as_slice()[1], -2.5);
    }

    #[test]
    fn node_norm_three_four() {
        let g = local_stencil_graph(3, 3).unwrap();
        let mut d = GraphField::zeros(&g);
        assert!(nl_node_norm(&d, &g).unwrap().norm() == 0.0);
        let slots: Vec<usize> = g.edges_of(4).collect();
        d.values[slots[0]] = 3.0;
        d.values[slots[1]] = 4.0;
        assert_eq!(nl_node_norm(&d, &g).unwrap().as_slice()[4], 5.0);
        let s = nl_shrink(&d, 2.0, &g).unwrap();
        assert!((s.values[slots[0]] - 1.8).abs() < 1e-15 && (s.values[slots[1]] - 2.4).abs() < 1e-15);
        assert_eq!(nl_shrink(&d, 0.0, &g).unwrap(), d);
        assert!(nl_shrink(&d, 5.0, &g).unwrap().norm() == 0.0);
    }

    #[test]
    fn nl_tv_is_one_homogeneous() {
        let g = build_graph(&random_image(9, 12, 12), &small_params()).unwrap();
        let u = random_image(10, 12, 12);
        let tv = nl_tv(&u, &g).unwrap();
        for c in [-3.0, 0.5, 2.0] {
            assert!((nl_tv(&u.scaled(c), &g).unwrap() - c.abs() * tv).abs() <= 1e-12 * tv * c.abs());
        }
        assert_eq!(nl_tv(&Image::filled(12, 12, 4.0), &g).unwrap(), 0.0);
    }

    #[test]
    fn malformed_csr_rejected() {
        assert!(PatchGraph::from_csr(2, 2, vec![0, 1, 2, 3, 3], vec![1, 0, 0], vec![1.0; 3], 0.0).is_err());
        assert!(PatchGraph::from_csr(2, 2, vec![0, 1, 2, 3, 4], vec![0, 0, 0, 0], vec![1.0; 4], 0.0).is_err());
        assert!(PatchGraph::from_csr(2, 2, vec![0, 1, 2, 3, 4], vec![1, 0, 3, 2], vec![1.0, 1.0, -1.0, 1.0], 0.0).is_err());
        let ok = PatchGraph::from_csr(2, 2, vec![0, 1, 2, 3, 4], vec![1, 0, 3, 2], vec![1.0; 4], 0.0).unwrap();
        assert!(ok.is_symmetric());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = local_stencil_graph(4, 4).unwrap();
        assert!(nl_gradient(&Image::zeros(5, 4), &g).is_err());
        assert!(nl_divergence(&GraphField { values: vec![0.0; 3] }, &g).is_err());
    }
}
