//! Ray-traced synthetic scenes: geometric primitives scattered on a ground
//! plane, scanned over the projection-model ray grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{backproject, Point3, PointCloud, ProjectionModel, RangeImage};
use crate::metric::{Category, SceneSample};

const EPS: f64 = 1e-9;

/// Analytic scene primitives. The sensor sits at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    GroundPlane { z: f64 },
    Sphere { center: Point3, radius: f64 },
    Aabb { min: Point3, max: Point3 },
    /// Vertical capped cylinder.
    Cylinder { cx: f64, cy: f64, radius: f64, z0: f64, z1: f64 },
}

impl Primitive {
    pub fn is_ground(&self) -> bool {
        matches!(self, Primitive::GroundPlane { .. })
    }

    /// Nearest positive ray parameter for a unit ray from the origin.
    pub fn intersect(&self, dir: &Point3) -> Option<f64> {
        match *self {
            Primitive::GroundPlane { z } => {
                if dir[2].abs() < EPS {
                    return None;
                }
                let t = z / dir[2];
                (t > EPS).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let b = dir[0] * center[0] + dir[1] * center[1] + dir[2] * center[2];
                let c2 = center[0] * center[0] + center[1] * center[1] + center[2] * center[2];
                let disc = b * b - (c2 - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t1 = b - sq;
                if t1 > EPS {
                    return Some(t1);
                }
                let t2 = b + sq;
                (t2 > EPS).then_some(t2)
            }
            Primitive::Aabb { min, max } => {
                let mut tmin = f64::NEG_INFINITY;
                let mut tmax = f64::INFINITY;
                for k in 0..3 {
                    if dir[k].abs() < EPS {
                        if 0.0 < min[k] || 0.0 > max[k] {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / dir[k];
                        let (t0, t1) = {
                            let a = min[k] * inv;
                            let b = max[k] * inv;
                            if a < b {
                                (a, b)
                            } else {
                                (b, a)
                            }
                        };
                        tmin = tmin.max(t0);
                        tmax = tmax.min(t1);
                    }
                }
                if tmax < tmin || tmax <= EPS {
                    return None;
                }
                Some(if tmin > EPS { tmin } else { tmax })
            }
            Primitive::Cylinder { cx, cy, radius, z0, z1 } => {
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                // side surface
                let a = dir[0] * dir[0] + dir[1] * dir[1];
                if a > EPS {
                    let b = dir[0] * cx + dir[1] * cy;
                    let c = cx * cx + cy * cy - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(b - sq) / a, (b + sq) / a] {
                            if t > EPS {
                                let z = t * dir[2];
                                if z >= z0 && z <= z1 {
                                    consider(t);
                                }
                            }
                        }
                    }
                }
                // caps
                if dir[2].abs() > EPS {
                    for zc in [z0, z1] {
                        let t = zc / dir[2];
                        if t > EPS {
                            let px = t * dir[0] - cx;
                            let py = t * dir[1] - cy;
                            if px * px + py * py <= radius * radius {
                                consider(t);
                            }
                        }
                    }
                }
                best
            }
        }
    }
}

/// GeoSet scene parameters; ranges are sampled per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSetConfig {
    pub projection: ProjectionModel,
    pub sensor_height: (f64, f64),
    pub object_count: (usize, usize),
    pub sphere_radius: (f64, f64),
    pub box_half_extent: (f64, f64),
    pub placement_distance: (f64, f64),
    pub max_range: f64,
}

impl GeoSetConfig {
    pub fn desk(projection: ProjectionModel) -> Self {
        GeoSetConfig {
            projection,
            sensor_height: (1.5, 2.0),
            object_count: (3, 10),
            sphere_radius: (0.4, 2.5),
            box_half_extent: (0.3, 2.0),
            placement_distance: (4.0, 40.0),
            max_range: 120.0,
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen::<f64>() * (range.1 - range.0) + range.0
}

fn sample_count(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    if range.1 <= range.0 {
        return range.0;
    }
    rng.gen_range(range.0..=range.1)
}

/// Builds the primitive list of a GeoSet scene: a ground plane plus randomly
/// placed and sized spheres and axis-aligned boxes resting on it.
pub fn build_geoset_scene(config: &GeoSetConfig, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let ground_z = -sample_range(rng, config.sensor_height);
    let mut prims = vec![Primitive::GroundPlane { z: ground_z }];
    let count = sample_count(rng, config.object_count);
    for _ in 0..count {
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let dist = sample_range(rng, config.placement_distance);
        let (x, y) = (dist * angle.cos(), dist * angle.sin());
        if rng.gen::<bool>() {
            let radius = sample_range(rng, config.sphere_radius);
            prims.push(Primitive::Sphere {
                center: [x, y, ground_z + radius],
                radius,
            });
        } else {
            let hx = sample_range(rng, config.box_half_extent);
            let hy = sample_range(rng, config.box_half_extent);
            let hz = sample_range(rng, config.box_half_extent);
            prims.push(Primitive::Aabb {
                min: [x - hx, y - hy, ground_z],
                max: [x + hx, y + hy, ground_z + 2.0 * hz],
            });
        }
    }
    prims
}

/// Per-ray nearest-hit trace of a primitive list over the projection grid.
///
/// Returns the range image plus a per-cell flag marking ground-plane hits.
pub fn trace_scene(
    prims: &[Primitive],
    model: &ProjectionModel,
    max_range: f64,
) -> (RangeImage, Vec<bool>) {
    let mut image = RangeImage::empty(*model);
    let mut ground = vec![false; model.height * model.width];
    for row in 0..model.height {
        for col in 0..model.width {
            let dir = model.ray_direction(row, col);
            let mut best: Option<(f64, bool)> = None;
            for p in prims {
                if let Some(t) = p.intersect(&dir) {
                    if t <= max_range && best.is_none_or(|(b, _)| t < b) {
                        best = Some((t, p.is_ground()));
                    }
                }
            }
            if let Some((t, is_ground)) = best {
                image.set(row, col, t);
                ground[row * model.width + col] = is_ground;
            }
        }
    }
    (image, ground)
}

/// Ray-traced GeoSet range image (the projection-domain form used by the
/// up-sampling experiments).
pub fn geoset_range_image(config: &GeoSetConfig, seed: u64) -> RangeImage {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = build_geoset_scene(config, &mut rng);
    trace_scene(&prims, &config.projection, config.max_range).0
}

/// GeoSet scene as a labeled point cloud (category Syn).
pub fn gen_geoset(config: &GeoSetConfig, seed: u64, dataset_id: usize) -> SceneSample {
    let image = geoset_range_image(config, seed);
    SceneSample::new(backproject(&image), Category::Syn, dataset_id)
}

/// Radial noise augmentation: zero-mean Gaussian perturbation along each
/// point's ray direction, with the scene's sigma drawn from `sigma_range`.
pub fn augment_syn(cloud: &PointCloud, sigma_range: (f64, f64), seed: u64) -> PointCloud {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = sample_range(&mut rng, sigma_range);
    if sigma == 0.0 {
        return cloud.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if r == 0.0 {
                return *p;
            }
            let delta: f64 = normal.sample(&mut rng);
            // keep the range positive so the direction never flips
            let scale = ((r + delta) / r).max(1e-6);
            [p[0] * scale, p[1] * scale, p[2] * scale]
        })
        .collect();
    PointCloud::new(points).expect("finite augmentation")
}
