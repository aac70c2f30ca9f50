//! Spatially-constrained Ward clustering of voxels and the feature reduction
//! it induces.
//!
//! Only clusters that touch in the 6-neighbor voxel graph may merge, so every
//! cluster is a connected region of the mask.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EckoError, Result};
use crate::geometry::{coord_distance, GridGeometry};

/// Clusters larger than this get a bounding-box upper bound on their
/// diameter instead of the exact pairwise maximum.
pub const EXACT_DIAMETER_LIMIT: usize = 2000;

pub const DEFAULT_SUBSAMPLE_FRACTION: f64 = 0.7;

/// A partition of the features into `n_clusters` connected groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    assignment: Vec<usize>,
    n_clusters: usize,
    diameters: Vec<f64>,
}

impl Clustering {
    /// Builds a clustering from labels in `0..n_clusters`, computing the
    /// diameters from `geometry`. Every label must be used.
    pub fn from_assignment(assignment: Vec<usize>, geometry: &GridGeometry) -> Result<Self> {
        if assignment.len() != geometry.n_features() {
            return Err(EckoError::dims(format!(
                "assignment covers {} features, geometry has {}",
                assignment.len(),
                geometry.n_features()
            )));
        }
        let n_clusters = assignment.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_clusters];
        for (k, &c) in assignment.iter().enumerate() {
            members[c].push(k);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(EckoError::arg("cluster labels are not contiguous"));
        }
        let diameters = members.iter().map(|m| cluster_diameter(m, geometry)).collect();
        Ok(Clustering {
            assignment,
            n_clusters,
            diameters,
        })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_features(&self) -> usize {
        self.assignment.len()
    }

    pub fn diameters(&self) -> &[f64] {
        &self.diameters
    }

    /// Feature indices of every cluster, each sorted ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_clusters];
        for (k, &c) in self.assignment.iter().enumerate() {
            members[c].push(k);
        }
        members
    }
}

fn cluster_diameter(members: &[usize], geometry: &GridGeometry) -> f64 {
    let coords = geometry.feature_coords();
    if members.len() <= EXACT_DIAMETER_LIMIT {
        let mut best = 0.0f64;
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                best = best.max(coord_distance(coords[a], coords[b]));
            }
        }
        return best;
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &m in members {
        for a in 0..3 {
            lo[a] = lo[a].min(coords[m][a]);
            hi[a] = hi[a].max(coords[m][a]);
        }
    }
    coord_distance(lo, hi)
}

/// Uniform subset of `floor(fraction * n)` row indices, sorted ascending.
pub fn subsample_rows(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EckoError::arg(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    // guard against 0.7 * 10 landing just below 7
    let size = ((fraction * n as f64) + 1e-9).floor() as usize;
    let size = size.min(n);
    if size < 2 {
        return Err(EckoError::arg(format!(
            "subsample of {n} rows at fraction {fraction} keeps fewer than 2 rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, size).into_vec();
    rows.sort_unstable();
    Ok(rows)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

/// Increase in within-cluster sum of squares when merging two clusters.
fn ward_cost(size_a: f64, ca: &[f64], size_b: f64, cb: &[f64]) -> f64 {
    let sq: f64 = ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum();
    size_a * size_b / (size_a + size_b) * sq
}

/// Agglomerative Ward clustering of the columns of `x_sub` (one column per
/// voxel), merging only graph-adjacent clusters until `q` remain.
///
/// Merge order is the smallest Ward increase, ties going to the
/// lexicographically smallest pair of cluster ids (leaves are `0..p`, merged
/// clusters take `p, p + 1, ...`). Output labels are numbered by each
/// cluster's smallest feature index.
pub fn ward_cluster(x_sub: ArrayView2<f64>, geometry: &GridGeometry, q: usize) -> Result<Clustering> {
    let p = geometry.n_features();
    if x_sub.ncols() != p {
        return Err(EckoError::dims(format!(
            "data has {} columns, geometry has {p} voxels",
            x_sub.ncols()
        )));
    }
    if q == 0 || q > p {
        return Err(EckoError::arg(format!("cannot form {q} clusters from {p} voxels")));
    }
    let (_, n_components) = geometry.connected_components();
    if q < n_components {
        return Err(EckoError::arg(format!(
            "mask has {n_components} disconnected components, more than the {q} requested clusters"
        )));
    }

    let total = 2 * p - q;
    let mut centroid: Vec<Vec<f64>> = x_sub.columns().into_iter().map(|c| c.to_vec()).collect();
    centroid.reserve(total - p);
    let mut size = vec![1.0f64; p];
    size.reserve(total - p);
    let mut parent: Vec<usize> = (0..p).collect();
    parent.reserve(total - p);
    let mut active = vec![true; p];
    active.reserve(total - p);
    let mut adjacency: Vec<Vec<usize>> = (0..p).map(|j| geometry.neighbors(j).collect()).collect();
    adjacency.reserve(total - p);

    let mut heap = BinaryHeap::new();
    for a in 0..p {
        for &b in &adjacency[a] {
            if a < b {
                let cost = ward_cost(1.0, &centroid[a], 1.0, &centroid[b]);
                heap.push(Reverse(Candidate { cost, a, b }));
            }
        }
    }

    let mut n_active = p;
    while n_active > q {
        let Reverse(Candidate { a, b, .. }) = heap
            .pop()
            .ok_or_else(|| EckoError::Numerical("ran out of adjacent clusters to merge".into()))?;
        if !active[a] || !active[b] {
            continue;
        }
        let t = centroid.len();
        let (sa, sb) = (size[a], size[b]);
        let merged: Vec<f64> = centroid[a]
            .iter()
            .zip(&centroid[b])
            .map(|(x, y)| (sa * x + sb * y) / (sa + sb))
            .collect();
        active[a] = false;
        active[b] = false;
        parent[a] = t;
        parent[b] = t;

        let mut neigh: Vec<usize> = std::mem::take(&mut adjacency[a]);
        neigh.append(&mut std::mem::take(&mut adjacency[b]));
        neigh.retain(|&k| active[k]);
        neigh.sort_unstable();
        neigh.dedup();

        centroid.push(merged);
        size.push(sa + sb);
        parent.push(t);
        active.push(true);
        for &k in &neigh {
            let adj = &mut adjacency[k];
            adj.retain(|&v| v != a && v != b);
            adj.push(t);
            let cost = ward_cost(size[k], &centroid[k], size[t], &centroid[t]);
            heap.push(Reverse(Candidate { cost, a: k, b: t }));
        }
        adjacency.push(neigh);
        // the merged-away centroids are never read again
        centroid[a] = Vec::new();
        centroid[b] = Vec::new();
        n_active -= 1;
    }

    let mut root_of = vec![usize::MAX; p];
    for (k, slot) in root_of.iter_mut().enumerate() {
        let mut r = k;
        while parent[r] != r {
            r = parent[r];
        }
        *slot = r;
    }
    let mut label_of_root = vec![usize::MAX; total];
    let mut next = 0;
    let assignment = root_of
        .iter()
        .map(|&r| {
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect();
    Clustering::from_assignment(assignment, geometry)
}

/// Averages the columns of `x` within each cluster (`n x p` to `n x q`).
pub fn reduce_features(x: ArrayView2<f64>, clustering: &Clustering) -> Result<Array2<f64>> {
    if x.ncols() != clustering.n_features() {
        return Err(EckoError::dims(format!(
            "data has {} columns, clustering covers {}",
            x.ncols(),
            clustering.n_features()
        )));
    }
    let q = clustering.n_clusters();
    let mut out = Array2::<f64>::zeros((x.nrows(), q));
    let mut counts = vec![0.0f64; q];
    for (k, &c) in clustering.assignment().iter().enumerate() {
        counts[c] += 1.0;
        let mut col = out.column_mut(c);
        col += &x.column(k);
    }
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        col /= counts[c];
    }
    Ok(out)
}

/// Gives every voxel the q-value of the cluster containing it.
pub fn broadcast_qvalues(cluster_q: &[f64], clustering: &Clustering) -> Result<Vec<f64>> {
    if cluster_q.len() != clustering.n_clusters() {
        return Err(EckoError::dims(format!(
            "{} cluster q-values for {} clusters",
            cluster_q.len(),
            clustering.n_clusters()
        )));
    }
    clustering
        .assignment()
        .iter()
        .map(|&c| {
            cluster_q
                .get(c)
                .copied()
                .ok_or_else(|| EckoError::arg(format!("cluster label {c} out of range")))
        })
        .collect()
}

/// Largest cluster diameter over all clusterings: the spatial tolerance
/// `delta` of the resulting selection.
pub fn max_diameter(clusterings: &[Clustering]) -> Result<f64> {
    if clusterings.is_empty() {
        return Err(EckoError::arg("no clusterings"));
    }
    Ok(clusterings
        .iter()
        .flat_map(|c| c.diameters().iter().copied())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn line_geometry(p: usize) -> GridGeometry {
        GridGeometry::full([p, 1, 1]).unwrap()
    }

    #[test]
    fn subsample_sizes() {
        assert_eq!(subsample_rows(10, 0.7, 3).unwrap().len(), 7);
        assert_eq!(subsample_rows(10, 1.0, 3).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(
            subsample_rows(100, 0.7, 5).unwrap(),
            subsample_rows(100, 0.7, 5).unwrap()
        );
        assert_ne!(
            subsample_rows(100, 0.7, 5).unwrap(),
            subsample_rows(100, 0.7, 6).unwrap()
        );
        assert!(subsample_rows(2, 0.7, 0).is_err());
        assert!(subsample_rows(10, 0.0, 0).is_err());
        assert!(subsample_rows(10, 1.5, 0).is_err());
    }

    #[test]
    fn line_of_four_splits_by_profile() {
        let x = array![[1.0, 1.0, 5.0, 5.0], [1.0, 1.0, 5.0, 5.0], [1.0, 1.0, 5.0, 5.0]];
        let c = ward_cluster(x.view(), &line_geometry(4), 2).unwrap();
        assert_eq!(c.assignment(), &[0, 0, 1, 1]);
        assert_eq!(c.diameters(), &[1.0, 1.0]);
    }

    #[test]
    fn q_equals_p_is_identity() {
        let g = GridGeometry::full([2, 2, 2]).unwrap();
        let x = Array2::from_shape_fn((3, 8), |(i, j)| (i * 8 + j) as f64);
        let c = ward_cluster(x.view(), &g, 8).unwrap();
        assert_eq!(c.assignment(), &(0..8).collect::<Vec<_>>()[..]);
        assert!(c.diameters().iter().all(|&d| d == 0.0));
        assert_eq!(reduce_features(x.view(), &c).unwrap(), x);
    }

    #[test]
    fn argument_errors() {
        let g = line_geometry(3);
        let x = Array2::<f64>::zeros((2, 3));
        assert!(ward_cluster(x.view(), &g, 4).is_err());
        assert!(ward_cluster(x.view(), &g, 0).is_err());
        let mut mask = vec![true; 5];
        mask[2] = false;
        let split = GridGeometry::from_mask([5, 1, 1], mask).unwrap();
        let x = Array2::<f64>::zeros((2, 4));
        assert!(matches!(
            ward_cluster(x.view(), &split, 1),
            Err(EckoError::InvalidArgument(_))
        ));
        assert_eq!(ward_cluster(x.view(), &split, 2).unwrap().assignment(), &[0, 0, 1, 1]);
    }

    #[test]
    fn identical_distant_blocks_stay_apart() {
        // a 9-voxel line whose two ends carry the same profile and the middle a
        // very different one: merging the ends would be free but they never touch
        let g = line_geometry(9);
        let mut x = Array2::<f64>::zeros((4, 9));
        for i in 0..4 {
            for j in 0..9 {
                x[[i, j]] = if (3..6).contains(&j) {
                    100.0 * (i as f64 + 1.0)
                } else {
                    i as f64
                };
            }
        }
        let c = ward_cluster(x.view(), &g, 3).unwrap();
        assert_eq!(c.assignment(), &[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let c = ward_cluster(x.view(), &g, 2).unwrap();
        assert_eq!(c.n_clusters(), 2);
        assert_connected(&c, &g);
    }

    fn assert_connected(c: &Clustering, g: &GridGeometry) {
        for members in c.members() {
            let label = c.assignment()[members[0]];
            let mut seen = vec![false; g.n_features()];
            let mut stack = vec![members[0]];
            seen[members[0]] = true;
            let mut reached = 0;
            while let Some(v) = stack.pop() {
                reached += 1;
                for w in g.neighbors(v) {
                    if !seen[w] && c.assignment()[w] == label {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            assert_eq!(reached, members.len(), "cluster {label} is not connected");
        }
    }

    #[test]
    fn random_volume_clusters_are_connected_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mask = vec![false; 6 * 7 * 5];
        for m in mask.iter_mut() {
            *m = rng.random_bool(0.8);
        }
        let g = GridGeometry::from_mask([6, 7, 5], mask).unwrap();
        let (_, comps) = g.connected_components();
        let x = Array2::from_shape_fn((12, g.n_features()), |_| rng.sample::<f64, _>(StandardNormal));
        for q in [comps, comps + 5, g.n_features() / 3, g.n_features()] {
            let c = ward_cluster(x.view(), &g, q).unwrap();
            assert_eq!(c.n_clusters(), q);
            assert_eq!(c.n_features(), g.n_features());
            assert_connected(&c, &g);
            assert_eq!(c, ward_cluster(x.view(), &g, q).unwrap());
            for (members, &d) in c.members().iter().zip(c.diameters()) {
                let brute = members
                    .iter()
                    .flat_map(|&a| members.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| coord_distance(g.feature_coords()[a], g.feature_coords()[b]))
                    .fold(0.0, f64::max);
                assert_eq!(d, brute);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let g = line_geometry(2);
        let c = Clustering::from_assignment(vec![0, 0], &g).unwrap();
        let r = reduce_features(array![[1.0, 3.0], [2.0, 4.0]].view(), &c).unwrap();
        assert_eq!(r, array![[2.0], [3.0]]);
        let r = reduce_features(array![[5.0, 5.0], [7.0, 7.0]].view(), &c).unwrap();
        assert_eq!(r, array![[5.0], [7.0]]);
        assert!(reduce_features(array![[1.0]].view(), &c).is_err());
    }

    #[test]
    fn broadcast_examples() {
        let g = line_geometry(3);
        let c = Clustering::from_assignment(vec![0, 0, 1], &g).unwrap();
        assert_eq!(broadcast_qvalues(&[0.1, 0.9], &c).unwrap(), vec![0.1, 0.1, 0.9]);
        assert_eq!(broadcast_qvalues(&[0.4, 0.4], &c).unwrap(), vec![0.4; 3]);
        assert!(broadcast_qvalues(&[0.1], &c).is_err());
    }

    #[test]
    fn reduction_then_broadcast_of_constants() {
        let g = GridGeometry::full([3, 3, 1]).unwrap();
        let c = Clustering::from_assignment(vec![0, 0, 1, 0, 2, 1, 3, 3, 1], &g).unwrap();
        let x = Array2::from_elem((2, 9), 0.25);
        let r = reduce_features(x.view(), &c).unwrap();
        let back = broadcast_qvalues(&r.row(0).to_vec(), &c).unwrap();
        assert_eq!(back, vec![0.25; 9]);
    }

    #[test]
    fn diameter_examples() {
        let mut mask = vec![false; 4 * 5];
        let g_shape = [4, 5, 1];
        for x in 0..4 {
            mask[x * 5] = true;
        }
        for y in 0..5 {
            mask[3 * 5 + y] = true;
        }
        let g = GridGeometry::from_mask(g_shape, mask).unwrap();
        let single = Clustering::from_assignment(vec![0; g.n_features()], &g).unwrap();
        assert_eq!(max_diameter(&[single]).unwrap(), 5.0);
        let singletons = Clustering::from_assignment((0..g.n_features()).collect(), &g).unwrap();
        assert_eq!(max_diameter(&[singletons]).unwrap(), 0.0);
        assert!(max_diameter(&[]).is_err());
    }

    #[test]
    fn large_clusters_use_bounding_box() {
        let g = GridGeometry::full([50, 50, 1]).unwrap();
        let c = Clustering::from_assignment(vec![0; 2500], &g).unwrap();
        assert!((c.diameters()[0] - (2.0 * 49.0f64.powi(2)).sqrt()).abs() < 1e-12);
    }
}
