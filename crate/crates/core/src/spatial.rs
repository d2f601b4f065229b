//! Farthest-point sampling, exact k-nearest-neighbor search, and index-based
//! gathering for the set-abstraction levels.
//!
//! Nearest-neighbor queries run on a uniform hash grid with an exhaustive
//! fallback for small clouds; the grid is performance-only and its results
//! are defined by (and tested against) the exhaustive scan, including the
//! lower-index tie-break.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

/// Indices into a referenced point sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    pub indices: Vec<usize>,
}

impl IndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min farthest-point sampling.
///
/// The start index is the point farthest from the centroid (ties to the
/// lowest index), which keeps the selection independent of input order for
/// clouds with distinct pairwise distances. When `q > n`, indices repeat
/// cyclically after exhausting the cloud.
pub fn farthest_point_sample(cloud: &PointCloud, q: usize) -> Result<IndexSet> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let pts = cloud.points();
    let centroid = cloud.centroid();

    let mut start = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let d = dist2(p, &centroid);
        if d > best {
            best = d;
            start = i;
        }
    }

    let take = q.min(n);
    let mut selected = Vec::with_capacity(q);
    selected.push(start);
    let mut min_dist: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[start])).collect();
    while selected.len() < take {
        let mut next = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best {
                best = d;
                next = i;
            }
        }
        selected.push(next);
        let np = pts[next];
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = dist2(&pts[i], &np);
            if nd < *d {
                *d = nd;
            }
        }
    }
    for i in take..q {
        selected.push(selected[i % take]);
    }
    Ok(IndexSet { indices: selected })
}

/// Uniform hash grid over the cloud for exact neighbor queries.
struct HashGrid<'a> {
    points: &'a [Point3],
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    max_ring: usize,
}

impl<'a> HashGrid<'a> {
    fn build(points: &'a [Point3]) -> Self {
        // Cell size from the bounding volume so cells hold a handful of
        // points on average.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max).max(1e-9);
        let cell = (extent / (points.len() as f64).cbrt()).max(1e-9);
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::key_of(p, cell))
                .or_default()
                .push(i as u32);
        }
        let max_ring = ((extent / cell).ceil() as usize) + 2;
        HashGrid {
            points,
            cell,
            cells,
            max_ring,
        }
    }

    fn key_of(p: &Point3, cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Exact k-nearest search by expanding Chebyshev rings of cells until the
    /// k-th best distance is covered by the explored radius.
    fn knn(&self, query: &Point3, k: usize) -> Vec<(f64, usize)> {
        let center = Self::key_of(query, self.cell);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(4 * k + 16);
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = (center.0 + dx, center.1 + dy, center.2 + dz);
                        if let Some(ids) = self.cells.get(&key) {
                            for &i in ids {
                                let d = dist2(&self.points[i as usize], query);
                                best.push((d, i as usize));
                            }
                        }
                    }
                }
            }
            best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Any point in an unexplored cell is at least `ring * cell` from
            // the query (the query may sit on its own cell's boundary).
            let explored_radius = ring as f64 * self.cell;
            let done = best.len() >= k && best[k - 1].0.sqrt() <= explored_radius;
            if done || ring as usize > self.max_ring {
                best.truncate(k);
                return best;
            }
            ring += 1;
        }
    }
}

const EXHAUSTIVE_THRESHOLD: usize = 96;

fn knn_one_exhaustive(points: &[Point3], query: &Point3, k: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p, query), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

/// K nearest cloud points per query, ascending by distance, ties broken by
/// the lower index. When `k > n`, the nearest index repeats to fill the row.
///
/// A query that is itself a cloud member is its own nearest neighbor.
pub fn knn(cloud: &PointCloud, queries: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if k == 0 {
        return Ok(vec![Vec::new(); queries.len()]);
    }
    let pts = cloud.points();
    let kk = k.min(n);
    let grid = if n > EXHAUSTIVE_THRESHOLD {
        Some(HashGrid::build(pts))
    } else {
        None
    };
    let out = queries
        .iter()
        .map(|q| {
            let found = match &grid {
                Some(g) => g.knn(q, kk),
                None => knn_one_exhaustive(pts, q, kk),
            };
            let mut row: Vec<usize> = found.into_iter().map(|(_, i)| i).collect();
            while row.len() < k {
                row.push(row[0]);
            }
            row
        })
        .collect();
    Ok(out)
}

/// [`knn`] with queries given as indices into the cloud itself.
pub fn knn_indexed(cloud: &PointCloud, queries: &IndexSet, k: usize) -> Result<Vec<Vec<usize>>> {
    let pts = cloud.points();
    for &i in &queries.indices {
        if i >= pts.len() {
            return Err(Error::invalid(format!("query index {i} out of range")));
        }
    }
    let coords: Vec<Point3> = queries.indices.iter().map(|&i| pts[i]).collect();
    knn(cloud, &coords, k)
}

/// Pure gather: output row `(q, k)` equals `source` row `indices[q][k]`.
///
/// Rows may be coordinates or feature vectors; `row_width` is the number of
/// values per source row.
pub fn group(source: &[f64], row_width: usize, indices: &[Vec<usize>]) -> Result<Vec<f64>> {
    let rows = source.len() / row_width;
    if rows * row_width != source.len() {
        return Err(Error::shape("source length not a multiple of row width"));
    }
    let total: usize = indices.iter().map(|r| r.len()).sum();
    let mut out = Vec::with_capacity(total * row_width);
    for row in indices {
        for &i in row {
            if i >= rows {
                return Err(Error::invalid(format!("gather index {i} out of range")));
            }
            out.extend_from_slice(&source[i * row_width..(i + 1) * row_width]);
        }
    }
    Ok(out)
}

/// Gather of 3-D points by a `Q x K` index grid.
pub fn group_points(points: &[Point3], indices: &[Vec<usize>]) -> Result<Vec<Vec<Point3>>> {
    indices
        .iter()
        .map(|row| {
            row.iter()
                .map(|&i| {
                    points
                        .get(i)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("gather index {i} out of range")))
                })
                .collect()
        })
        .collect()
}
