//! Point-cloud and range-image data model, cylindrical projection and
//! back-projection, and neighborhood normalization.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3-D point in meters, sensor-relative.
pub type Point3 = [f64; 3];

/// An unordered set of sensor-relative points.
///
/// No ordering semantics: consumers must be permutation-tolerant or document
/// order sensitivity explicitly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        Ok(PointCloud { points })
    }

    pub fn empty() -> Self {
        PointCloud { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Point3] {
        &mut self.points
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        if !self.points.is_empty() {
            let n = self.points.len() as f64;
            for v in c.iter_mut() {
                *v /= n;
            }
        }
        c
    }
}

/// Cylindrical projection geometry: `H` elevation rows over
/// `[elevation_min, elevation_max]` and `W` azimuth columns over a full
/// revolution. Row 0 is the highest elevation (top-down image convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub height: usize,
    pub width: usize,
    /// Lowest elevation angle in radians.
    pub elevation_min: f64,
    /// Highest elevation angle in radians.
    pub elevation_max: f64,
    /// Fill value written at cells with no return.
    pub invalid_depth: f64,
}

impl ProjectionModel {
    pub fn new(height: usize, width: usize, elevation_min: f64, elevation_max: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("projection grid must be at least 1x1"));
        }
        if !(elevation_min < elevation_max) {
            return Err(Error::invalid("elevation_min must be below elevation_max"));
        }
        Ok(ProjectionModel {
            height,
            width,
            elevation_min,
            elevation_max,
            invalid_depth: 0.0,
        })
    }

    pub fn elevation_span(&self) -> f64 {
        self.elevation_max - self.elevation_min
    }

    /// Center elevation of row `i` (row 0 at the top).
    pub fn row_elevation(&self, row: usize) -> f64 {
        self.elevation_max - (row as f64 + 0.5) * self.elevation_span() / self.height as f64
    }

    /// Center azimuth of column `j`, spanning `[-pi, pi)`.
    pub fn col_azimuth(&self, col: usize) -> f64 {
        -std::f64::consts::PI
            + (col as f64 + 0.5) * std::f64::consts::TAU / self.width as f64
    }

    /// Unit ray direction through the center of cell `(row, col)`.
    pub fn ray_direction(&self, row: usize, col: usize) -> Point3 {
        let theta = self.row_elevation(row);
        let phi = self.col_azimuth(col);
        [
            theta.cos() * phi.cos(),
            theta.cos() * phi.sin(),
            theta.sin(),
        ]
    }

    /// Floor-binning of spherical angles to `(row, col)`.
    ///
    /// Azimuth wraps around; elevation outside the configured span returns
    /// `None` (the point is dropped and counted by the projection).
    pub fn bin(&self, azimuth: f64, elevation: f64) -> Option<(usize, usize)> {
        if elevation < self.elevation_min || elevation > self.elevation_max {
            return None;
        }
        let u = (self.elevation_max - elevation) / self.elevation_span();
        let row = ((u * self.height as f64) as usize).min(self.height - 1);
        let frac = (azimuth + std::f64::consts::PI) / std::f64::consts::TAU;
        let frac = frac - frac.floor();
        let col = ((frac * self.width as f64) as usize).min(self.width - 1);
        Some((row, col))
    }

    /// Same-geometry model with `factor` times the vertical resolution.
    pub fn with_vertical_factor(&self, factor: usize) -> ProjectionModel {
        ProjectionModel {
            height: self.height * factor,
            ..*self
        }
    }
}

/// An `H x W` cylindrical depth grid plus the validity mask of measured cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub model: ProjectionModel,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl RangeImage {
    /// All-invalid image filled with the model's invalid depth.
    pub fn empty(model: ProjectionModel) -> Self {
        let n = model.height * model.width;
        RangeImage {
            model,
            depth: vec![model.invalid_depth; n],
            valid: vec![false; n],
        }
    }

    pub fn from_parts(model: ProjectionModel, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = model.height * model.width;
        if depth.len() != n || valid.len() != n {
            return Err(Error::shape(format!(
                "range image buffers must hold {n} cells"
            )));
        }
        if depth.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("depth values must be finite"));
        }
        for i in 0..n {
            if valid[i] && depth[i] <= 0.0 {
                return Err(Error::invalid("valid-cell depths must be positive"));
            }
        }
        Ok(RangeImage { model, depth, valid })
    }

    pub fn height(&self) -> usize {
        self.model.height
    }

    pub fn width(&self) -> usize {
        self.model.width
    }

    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.model.width + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.model.width + col]
    }

    pub fn depth_data(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid_data(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Writes a measured return; `depth` must be positive.
    pub fn set(&mut self, row: usize, col: usize, depth: f64) {
        let idx = row * self.model.width + col;
        self.depth[idx] = depth;
        self.valid[idx] = true;
    }

    /// Marks a cell as missing and restores the fill value.
    pub fn clear(&mut self, row: usize, col: usize) {
        let idx = row * self.model.width + col;
        self.depth[idx] = self.model.invalid_depth;
        self.valid[idx] = false;
    }
}

/// Outcome counters of a projection; points outside the elevation span are
/// dropped rather than clamped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub dropped_out_of_range: usize,
    pub collisions: usize,
}

/// Projects a cloud to a cylindrical range image.
///
/// Each point maps to `(r, phi, theta)` and is floor-binned; collisions keep
/// the nearer return. Points with `r = 0` are rejected (undefined direction).
pub fn project_cylindrical(cloud: &PointCloud, model: &ProjectionModel) -> Result<RangeImage> {
    project_cylindrical_stats(cloud, model).map(|(image, _)| image)
}

/// [`project_cylindrical`] plus drop/collision counters.
pub fn project_cylindrical_stats(
    cloud: &PointCloud,
    model: &ProjectionModel,
) -> Result<(RangeImage, ProjectionStats)> {
    let mut image = RangeImage::empty(*model);
    let mut stats = ProjectionStats::default();
    for (i, p) in cloud.points().iter().enumerate() {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 {
            return Err(Error::invalid(format!(
                "point {i} coincides with the sensor origin (r = 0)"
            )));
        }
        let phi = p[1].atan2(p[0]);
        let theta = (p[2] / r).asin();
        match model.bin(phi, theta) {
            None => stats.dropped_out_of_range += 1,
            Some((row, col)) => {
                if image.is_valid(row, col) {
                    stats.collisions += 1;
                    if r < image.depth(row, col) {
                        image.set(row, col, r);
                    }
                } else {
                    image.set(row, col, r);
                }
            }
        }
    }
    Ok((image, stats))
}

/// One point per valid cell, at the cell-center direction scaled by depth.
pub fn backproject(image: &RangeImage) -> PointCloud {
    let mut points = Vec::with_capacity(image.valid_count());
    for row in 0..image.height() {
        for col in 0..image.width() {
            if !image.is_valid(row, col) {
                continue;
            }
            let d = image.model.ray_direction(row, col);
            let r = image.depth(row, col);
            points.push([d[0] * r, d[1] * r, d[2] * r]);
        }
    }
    PointCloud { points }
}

/// Translation normalization of a neighborhood toward its query point.
pub fn normalize_neighborhood(neighbors: &[Point3], query: &Point3) -> Vec<Point3> {
    neighbors
        .iter()
        .map(|p| [p[0] - query[0], p[1] - query[1], p[2] - query[2]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_1x4() -> ProjectionModel {
        ProjectionModel::new(1, 4, -0.1, 0.1).unwrap()
    }

    #[test]
    fn axis_aligned_point_lands_in_forward_column() {
        // point (1,0,0): phi = 0 lies in column 2 of a 4-column [-pi, pi) sweep
        let cloud = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let image = project_cylindrical(&cloud, &model_1x4()).unwrap();
        let mut valid_cells = Vec::new();
        for col in 0..4 {
            if image.is_valid(0, col) {
                valid_cells.push(col);
                assert!((image.depth(0, col) - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(image.depth(0, col), image.model.invalid_depth);
            }
        }
        assert_eq!(valid_cells, vec![2]);
    }

    #[test]
    fn empty_cloud_projects_to_all_invalid() {
        let image = project_cylindrical(&PointCloud::empty(), &model_1x4()).unwrap();
        assert_eq!(image.valid_count(), 0);
        let back = backproject(&image);
        assert!(back.is_empty());
    }

    #[test]
    fn origin_point_is_rejected() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        assert!(project_cylindrical(&cloud, &model_1x4()).is_err());
    }

    /// Independent per-point binning oracle: explicit angle arithmetic with
    /// bin edges, no shared code with the production path.
    fn oracle_bin(p: &Point3, model: &ProjectionModel) -> Option<(usize, usize, f64)> {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let theta = (p[2] / r).asin();
        if theta < model.elevation_min || theta > model.elevation_max {
            return None;
        }
        let phi = p[1].atan2(p[0]);
        let row_h = (model.elevation_max - model.elevation_min) / model.height as f64;
        let mut row = model.height;
        for i in 0..model.height {
            let hi = model.elevation_max - i as f64 * row_h;
            let lo = model.elevation_max - (i + 1) as f64 * row_h;
            let include_low = i + 1 == model.height;
            if theta <= hi && (theta > lo || (include_low && theta >= lo)) {
                row = i;
                break;
            }
        }
        if row == model.height {
            row = 0; // theta == elevation_max boundary
        }
        let col_w = std::f64::consts::TAU / model.width as f64;
        let mut col = 0;
        for j in 0..model.width {
            let lo = -std::f64::consts::PI + j as f64 * col_w;
            let hi = lo + col_w;
            if phi >= lo && phi < hi {
                col = j;
                break;
            }
        }
        Some((row, col, r))
    }

    #[test]
    fn random_points_match_binning_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let model = ProjectionModel::new(4, 8, -0.4, 0.3).unwrap();
        for _ in 0..20 {
            let points: Vec<Point3> = (0..8)
                .map(|_| {
                    let r = 1.0 + 20.0 * rng.gen::<f64>();
                    let phi = -std::f64::consts::PI + std::f64::consts::TAU * rng.gen::<f64>();
                    let theta = -0.5 + rng.gen::<f64>();
                    [
                        r * theta.cos() * phi.cos(),
                        r * theta.cos() * phi.sin(),
                        r * theta.sin(),
                    ]
                })
                .collect();
            let cloud = PointCloud::new(points.clone()).unwrap();
            let image = project_cylindrical(&cloud, &model).unwrap();

            // collision rule: stored depth = min over points binned to a cell
            let mut expect = vec![f64::INFINITY; 32];
            for p in &points {
                if let Some((row, col, r)) = oracle_bin(p, &model) {
                    let idx = row * 8 + col;
                    if r < expect[idx] {
                        expect[idx] = r;
                    }
                }
            }
            for row in 0..4 {
                for col in 0..8 {
                    let want = expect[row * 8 + col];
                    if want.is_finite() {
                        assert!(image.is_valid(row, col), "cell ({row},{col}) should be hit");
                        assert!((image.depth(row, col) - want).abs() < 1e-12);
                    } else {
                        assert!(!image.is_valid(row, col));
                    }
                }
            }
        }
    }

    #[test]
    fn cell_center_points_roundtrip_exactly() {
        let model = ProjectionModel::new(6, 16, -0.45, 0.1).unwrap();
        let mut points = Vec::new();
        for row in (0..6).step_by(2) {
            for col in (0..16).step_by(3) {
                let d = model.ray_direction(row, col);
                let r = 2.0 + (row * 16 + col) as f64 * 0.25;
                points.push([d[0] * r, d[1] * r, d[2] * r]);
            }
        }
        let cloud = PointCloud::new(points.clone()).unwrap();
        let image = project_cylindrical(&cloud, &model).unwrap();
        let back = backproject(&image);
        assert_eq!(back.len(), points.len());
        // backprojection emits in row-major order; match by nearest
        for p in &points {
            let best = back
                .points()
                .iter()
                .map(|q| {
                    ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "cell-center point moved by {best}");
        }
    }

    #[test]
    fn roundtrip_preserves_range_and_bounds_direction_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = ProjectionModel::new(8, 32, -0.5, 0.2);
        let model = model.unwrap();
        let points: Vec<Point3> = (0..200)
            .map(|_| {
                let r = 2.0 + 40.0 * rng.gen::<f64>();
                let phi = -std::f64::consts::PI + std::f64::consts::TAU * rng.gen::<f64>();
                let theta = -0.5 + 0.7 * rng.gen::<f64>();
                [
                    r * theta.cos() * phi.cos(),
                    r * theta.cos() * phi.sin(),
                    r * theta.sin(),
                ]
            })
            .collect();
        let cloud = PointCloud::new(points.clone()).unwrap();
        let image = project_cylindrical(&cloud, &model).unwrap();
        let back = backproject(&image);

        let half_az = std::f64::consts::PI / model.width as f64;
        let half_el = model.elevation_span() / (2.0 * model.height as f64);
        // every surviving cell's depth equals some source point's range, and
        // the emitted direction is within half a bin of that point
        for q in back.points() {
            let rq = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            let matching = points.iter().find(|p| {
                let rp = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if (rp - rq).abs() > 1e-9 {
                    return false;
                }
                let dphi = (p[1].atan2(p[0]) - q[1].atan2(q[0])).abs();
                let dphi = dphi.min(std::f64::consts::TAU - dphi);
                let dtheta = ((p[2] / rp).asin() - (q[2] / rq).asin()).abs();
                dphi <= half_az + 1e-12 && dtheta <= half_el + 1e-12
            });
            assert!(matching.is_some(), "no source point within half a bin");
        }
    }

    #[test]
    fn normalize_neighborhood_examples() {
        // neighbors = {query} -> all-zero rows
        let q = [1.0, 2.0, 3.0];
        let out = normalize_neighborhood(&[q], &q);
        assert_eq!(out, vec![[0.0, 0.0, 0.0]]);

        // query (1,2,3), neighbor (1,2,4) -> (0,0,1)
        let out = normalize_neighborhood(&[[1.0, 2.0, 4.0]], &[1.0, 2.0, 3.0]);
        assert_eq!(out, vec![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn normalize_matches_subtraction_oracle_and_translates() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let neighbors: Vec<Point3> = (0..10)
            .map(|_| [rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0])
            .collect();
        let query = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let out = normalize_neighborhood(&neighbors, &query);
        for (o, n) in out.iter().zip(neighbors.iter()) {
            for k in 0..3 {
                assert_eq!(o[k], n[k] - query[k]);
            }
        }

        // translation equivariance: shifting both inputs leaves output unchanged
        let t = [5.0, -3.0, 0.25];
        let shifted: Vec<Point3> = neighbors
            .iter()
            .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
            .collect();
        let shifted_q = [query[0] + t[0], query[1] + t[1], query[2] + t[2]];
        let out2 = normalize_neighborhood(&shifted, &shifted_q);
        for (a, b) in out.iter().zip(out2.iter()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn range_image_invariants_enforced() {
        let model = model_1x4();
        assert!(RangeImage::from_parts(model, vec![0.0; 4], vec![false; 4]).is_ok());
        // valid cell with non-positive depth rejected
        assert!(RangeImage::from_parts(model, vec![0.0; 4], vec![true; 4]).is_err());
        assert!(RangeImage::from_parts(model, vec![f64::NAN; 4], vec![false; 4]).is_err());
    }
}
