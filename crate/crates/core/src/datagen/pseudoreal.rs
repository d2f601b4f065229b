//! Pseudo-real scene generator: a synthetic stand-in for the Real category.
//!
//! Builds on the GeoSet scene family and layers structured realism cues on
//! top: per-ray dropout, distance-dependent range noise, mixed object meshes
//! (cylinders and composite boxes), and ground undulation. With every
//! enrichment disabled the output reduces to the plain GeoSet generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geoset::{build_geoset_scene, trace_scene, GeoSetConfig, Primitive};
use crate::geom::PointCloud;
use crate::metric::{Category, SceneSample};

/// Realism cues layered over the base scene; zeroed values disable a cue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrichments {
    /// Probability that a measured return is dropped.
    pub dropout_rate: f64,
    /// Range-noise sigma at zero distance.
    pub noise_sigma0: f64,
    /// Range-noise sigma growth per meter.
    pub noise_sigma_slope: f64,
    /// Vertical ground-undulation amplitude in meters.
    pub undulation_amp: f64,
    /// Undulation wavelength in meters.
    pub undulation_wavelength: f64,
    /// Extra vertical cylinders added to the scene.
    pub cylinders: (usize, usize),
    /// Extra two-box composite objects added to the scene.
    pub composites: (usize, usize),
}

impl Enrichments {
    /// All cues off: the generator reduces to plain GeoSet.
    pub fn none() -> Self {
        Enrichments {
            dropout_rate: 0.0,
            noise_sigma0: 0.0,
            noise_sigma_slope: 0.0,
            undulation_amp: 0.0,
            undulation_wavelength: 30.0,
            cylinders: (0, 0),
            composites: (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoRealConfig {
    pub base: GeoSetConfig,
    pub enrich: Enrichments,
}

impl PseudoRealConfig {
    /// Training sub-regimes 0 and 1 plus the held-out transfer regime 2.
    ///
    /// Regime 2 interpolates the two training regimes so transfer evaluation
    /// stays inside the Real envelope the metric saw.
    pub fn regime(base: GeoSetConfig, index: usize) -> Self {
        let enrich = match index {
            0 => Enrichments {
                dropout_rate: 0.04,
                noise_sigma0: 0.010,
                noise_sigma_slope: 0.0004,
                undulation_amp: 0.12,
                undulation_wavelength: 24.0,
                cylinders: (1, 3),
                composites: (1, 2),
            },
            1 => Enrichments {
                dropout_rate: 0.12,
                noise_sigma0: 0.022,
                noise_sigma_slope: 0.0012,
                undulation_amp: 0.30,
                undulation_wavelength: 40.0,
                cylinders: (2, 5),
                composites: (2, 4),
            },
            2 => Enrichments {
                dropout_rate: 0.08,
                noise_sigma0: 0.016,
                noise_sigma_slope: 0.0008,
                undulation_amp: 0.20,
                undulation_wavelength: 32.0,
                cylinders: (1, 4),
                composites: (1, 3),
            },
            other => panic!("pseudo-real regime {other} undefined"),
        };
        PseudoRealConfig { base, enrich }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen::<f64>() * (range.1 - range.0) + range.0
}

fn ground_z_of(prims: &[Primitive]) -> f64 {
    prims
        .iter()
        .find_map(|p| match p {
            Primitive::GroundPlane { z } => Some(*z),
            _ => None,
        })
        .unwrap_or(-1.7)
}

fn enrich_scene(prims: &mut Vec<Primitive>, config: &PseudoRealConfig, rng: &mut ChaCha8Rng) {
    let ground_z = ground_z_of(prims);
    let e = &config.enrich;
    let n_cyl = if e.cylinders.1 > 0 {
        rng.gen_range(e.cylinders.0..=e.cylinders.1)
    } else {
        0
    };
    for _ in 0..n_cyl {
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let dist = sample_range(rng, config.base.placement_distance);
        let radius = sample_range(rng, (0.1, 0.6));
        let height = sample_range(rng, (1.5, 6.0));
        prims.push(Primitive::Cylinder {
            cx: dist * angle.cos(),
            cy: dist * angle.sin(),
            radius,
            z0: ground_z,
            z1: ground_z + height,
        });
    }
    let n_comp = if e.composites.1 > 0 {
        rng.gen_range(e.composites.0..=e.composites.1)
    } else {
        0
    };
    for _ in 0..n_comp {
        // a wide base box with a narrower box stacked on top
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let dist = sample_range(rng, config.base.placement_distance);
        let (x, y) = (dist * angle.cos(), dist * angle.sin());
        let hx = sample_range(rng, (0.6, 1.6));
        let hy = sample_range(rng, (0.6, 1.6));
        let h0 = sample_range(rng, (0.6, 1.4));
        let h1 = sample_range(rng, (0.5, 1.2));
        prims.push(Primitive::Aabb {
            min: [x - hx, y - hy, ground_z],
            max: [x + hx, y + hy, ground_z + h0],
        });
        prims.push(Primitive::Aabb {
            min: [x - 0.5 * hx, y - 0.5 * hy, ground_z + h0],
            max: [x + 0.5 * hx, y + 0.5 * hy, ground_z + h0 + h1],
        });
    }
}

/// Pseudo-real scene (category Real).
///
/// The base scene consumes its own seeded stream, so disabling every
/// enrichment reproduces `gen_geoset` for the same seed bit-for-bit.
pub fn gen_pseudoreal(config: &PseudoRealConfig, seed: u64, dataset_id: usize) -> SceneSample {
    use rand::SeedableRng;
    let mut base_rng = ChaCha8Rng::seed_from_u64(seed);
    base_rng.set_stream(0);
    let mut prims = build_geoset_scene(&config.base, &mut base_rng);
    let ground_z = ground_z_of(&prims);

    let mut enrich_rng = ChaCha8Rng::seed_from_u64(seed);
    enrich_rng.set_stream(1);
    enrich_scene(&mut prims, config, &mut enrich_rng);

    let (mut image, ground_mask) = trace_scene(&prims, &config.base.projection, config.base.max_range);

    // per-ray dropout of measured returns
    let e = &config.enrich;
    if e.dropout_rate > 0.0 {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
        drop_rng.set_stream(2);
        for row in 0..image.height() {
            for col in 0..image.width() {
                if image.is_valid(row, col) && drop_rng.gen::<f64>() < e.dropout_rate {
                    image.clear(row, col);
                }
            }
        }
    }

    // back-project with ground undulation and distance-dependent range noise
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(3);
    let model = &config.base.projection;
    let mut points = Vec::with_capacity(image.valid_count());
    for row in 0..image.height() {
        for col in 0..image.width() {
            if !image.is_valid(row, col) {
                continue;
            }
            let dir = model.ray_direction(row, col);
            let r = image.depth(row, col);
            let mut p = [dir[0] * r, dir[1] * r, dir[2] * r];
            if e.undulation_amp > 0.0 && ground_mask[row * model.width + col] {
                let k = std::f64::consts::TAU / e.undulation_wavelength;
                p[2] = ground_z
                    + e.undulation_amp * (k * p[0]).sin() * (k * p[1]).sin();
            }
            let sigma = e.noise_sigma0 + e.noise_sigma_slope * r;
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("valid sigma");
                let rr = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if rr > 0.0 {
                    let delta: f64 = normal.sample(&mut noise_rng);
                    let scale = ((rr + delta) / rr).max(1e-6);
                    for v in p.iter_mut() {
                        *v *= scale;
                    }
                }
            }
            points.push(p);
        }
    }
    SceneSample::new(
        PointCloud::new(points).expect("finite pseudo-real points"),
        Category::Real,
        dataset_id,
    )
}
