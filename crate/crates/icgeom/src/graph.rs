//! Neighborhood machinery: k-NN graphs with self-loops, farthest point
//! sampling and ball queries.
//!
//! Distances are Euclidean in whatever space the caller supplies — 3D
//! coordinates for the first network layer, feature vectors for later
//! layers. All ties break toward the smaller index so graphs are
//! bit-reproducible across runs and platforms.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Directed k-NN neighbor table. Row `i` starts with `i` itself (the
/// self-loop) followed by the `k - 1` nearest other points ordered by
/// `(distance, index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    neighbors: Vec<u32>,
    k: usize,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of vertices.
    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.neighbors.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.neighbors.chunks_exact(self.k)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Builds the k-NN graph over `n` points of dimension `dim` stored row-major
/// in `features`. The self-loop is always the first entry of a row.
pub fn knn_graph(features: &[f64], dim: usize, k: usize) -> Result<KnnGraph> {
    assert!(dim >= 1, "feature dimension must be at least 1");
    assert_eq!(features.len() % dim, 0, "feature table is not N x dim");
    let n = features.len() / dim;
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if k == 0 {
        return Err(Error::KTooLarge { k, n });
    }

    let mut neighbors = vec![0u32; n * k];
    neighbors
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = &features[i * dim..(i + 1) * dim];
            let mut candidates: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                candidates.push((dist_sq(xi, &features[j * dim..(j + 1) * dim]), j as u32));
            }
            row[0] = i as u32;
            let rest = k - 1;
            if rest > 0 {
                let cmp = |a: &(f64, u32), b: &(f64, u32)| {
                    a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                };
                if rest < candidates.len() {
                    candidates.select_nth_unstable_by(rest - 1, cmp);
                    candidates.truncate(rest);
                }
                candidates.sort_by(cmp);
                for (slot, (_, j)) in row[1..].iter_mut().zip(candidates) {
                    *slot = j;
                }
            }
        });

    Ok(KnnGraph { neighbors, k })
}

/// Convenience wrapper for 3D point arrays.
pub fn knn_graph_points(points: &[[f64; 3]], k: usize) -> Result<KnnGraph> {
    knn_graph(points.as_flattened(), 3, k)
}

/// Greedy max-min subset selection: the first pick is `start`; every later
/// pick maximizes the minimum distance to the points picked so far, ties
/// broken by smaller index.
pub fn farthest_point_sampling(
    points: &[[f64; 3]],
    m: usize,
    start: usize,
) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::SampleTooLarge { m, n });
    }
    if start >= n {
        return Err(Error::StartOutOfRange { start, n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }

    let mut picked = Vec::with_capacity(m);
    let mut chosen = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = start;
    chosen[current] = true;
    picked.push(current);
    for _ in 1..m {
        let base = points[current];
        let mut best_j = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        // Scanning j in ascending order with a strict > makes ties land on
        // the smaller index.
        for (j, p) in points.iter().enumerate() {
            let d = dist_sq(&base, p);
            if d < min_dist[j] {
                min_dist[j] = d;
            }
            if !chosen[j] && min_dist[j] > best_d {
                best_d = min_dist[j];
                best_j = j;
            }
        }
        current = best_j;
        chosen[current] = true;
        picked.push(current);
    }
    Ok(picked)
}

/// All points within distance `r` of `center`, nearest first, truncated to
/// `max_count` entries.
pub fn ball_query(
    points: &[[f64; 3]],
    center: [f64; 3],
    r: f64,
    max_count: usize,
) -> Vec<usize> {
    let r2 = r * r;
    let mut hits: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(j, p)| {
            let d = dist_sq(&center, p);
            (d <= r2).then_some((d, j))
        })
        .collect();
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    hits.truncate(max_count);
    hits.into_iter().map(|(_, j)| j).collect()
}
