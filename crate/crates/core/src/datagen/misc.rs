//! Misc-category generators: degenerate range-image distributions standing
//! in for broken or meaningless data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{backproject, ProjectionModel, RangeImage};
use crate::metric::{Category, SceneSample};

/// Parameters of the four Misc families; ranges are drawn per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiscConfig {
    pub projection: ProjectionModel,
    /// Depth ramp endpoints for Misc 1/2 (near, far).
    pub depth_ramp: (f64, f64),
    /// Range-noise sigma drawn per scene for Misc 1/2/4.
    pub noise_sigma: (f64, f64),
    /// Cell-value mean for Misc 3.
    pub misc3_mean: (f64, f64),
    /// Cell-value sigma for Misc 3.
    pub misc3_sigma: (f64, f64),
    pub misc4_patches: (usize, usize),
    pub misc4_patch_rows: (usize, usize),
    pub misc4_patch_cols: (usize, usize),
    /// Depth values assigned to Misc 4 patches and base.
    pub misc4_depth: (f64, f64),
}

impl MiscConfig {
    pub fn desk(projection: ProjectionModel) -> Self {
        MiscConfig {
            projection,
            depth_ramp: (2.0, 80.0),
            noise_sigma: (0.05, 0.5),
            misc3_mean: (10.0, 40.0),
            misc3_sigma: (0.2, 2.0),
            misc4_patches: (5, 30),
            misc4_patch_rows: (2, 16),
            misc4_patch_cols: (4, 64),
            misc4_depth: (2.0, 80.0),
        }
    }
}

const MIN_DEPTH: f64 = 0.05;

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen::<f64>() * (range.1 - range.0) + range.0
}

fn add_range_noise(image: &mut RangeImage, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for row in 0..image.height() {
        for col in 0..image.width() {
            if image.is_valid(row, col) {
                let d = (image.depth(row, col) + normal.sample(rng)).max(MIN_DEPTH);
                image.set(row, col, d);
            }
        }
    }
}

/// A stamped constant-depth rectangle of a Misc-4 image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Misc4Patch {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
    pub depth: f64,
}

/// Patch list drawn for a Misc-4 scene; stamping order matters (later
/// patches overwrite earlier ones).
pub fn misc4_patches(config: &MiscConfig, rng: &mut ChaCha8Rng) -> (f64, Vec<Misc4Patch>) {
    let model = &config.projection;
    let base_depth = sample_range(rng, config.misc4_depth);
    let count = rng.gen_range(config.misc4_patches.0..=config.misc4_patches.1);
    let patches = (0..count)
        .map(|_| {
            let rows = rng
                .gen_range(config.misc4_patch_rows.0..=config.misc4_patch_rows.1)
                .min(model.height);
            let cols = rng
                .gen_range(config.misc4_patch_cols.0..=config.misc4_patch_cols.1)
                .min(model.width);
            Misc4Patch {
                row0: rng.gen_range(0..=(model.height - rows)),
                rows,
                col0: rng.gen_range(0..=(model.width - cols)),
                cols,
                depth: sample_range(rng, config.misc4_depth),
            }
        })
        .collect();
    (base_depth, patches)
}

/// Noise-free Misc range image per family rule.
pub fn misc_base_image(kind: u8, config: &MiscConfig, rng: &mut ChaCha8Rng) -> Result<RangeImage> {
    let model = config.projection;
    let (h, w) = (model.height, model.width);
    let mut image = RangeImage::empty(model);
    match kind {
        // depth increases linearly down the rows, constant along each row
        1 => {
            for row in 0..h {
                let frac = if h > 1 { row as f64 / (h - 1) as f64 } else { 0.0 };
                let d = config.depth_ramp.0 + frac * (config.depth_ramp.1 - config.depth_ramp.0);
                for col in 0..w {
                    image.set(row, col, d);
                }
            }
        }
        // depth increases linearly across the columns
        2 => {
            for col in 0..w {
                let frac = if w > 1 { col as f64 / (w - 1) as f64 } else { 0.0 };
                let d = config.depth_ramp.0 + frac * (config.depth_ramp.1 - config.depth_ramp.0);
                for row in 0..h {
                    image.set(row, col, d);
                }
            }
        }
        // independent Gaussian cell values
        3 => {
            let mean = sample_range(rng, config.misc3_mean);
            let sigma = sample_range(rng, config.misc3_sigma);
            let normal = Normal::new(mean, sigma).expect("valid sigma");
            for row in 0..h {
                for col in 0..w {
                    image.set(row, col, normal.sample(rng).max(MIN_DEPTH));
                }
            }
        }
        // constant-depth patches over a constant base
        4 => {
            let (base_depth, patches) = misc4_patches(config, rng);
            for row in 0..h {
                for col in 0..w {
                    image.set(row, col, base_depth);
                }
            }
            for p in &patches {
                for row in p.row0..p.row0 + p.rows {
                    for col in p.col0..p.col0 + p.cols {
                        image.set(row, col, p.depth);
                    }
                }
            }
        }
        other => return Err(Error::invalid(format!("misc kind {other} not in 1..=4"))),
    }
    Ok(image)
}

/// Misc scene of the given family, with per-family Gaussian range noise for
/// kinds 1, 2, and 4 (kind 3 is noise by construction).
pub fn gen_misc(kind: u8, config: &MiscConfig, seed: u64, dataset_id: usize) -> Result<SceneSample> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = misc_base_image(kind, config, &mut rng)?;
    if matches!(kind, 1 | 2 | 4) {
        let sigma = sample_range(&mut rng, config.noise_sigma);
        add_range_noise(&mut image, sigma, &mut rng);
    }
    Ok(SceneSample::new(backproject(&image), Category::Misc, dataset_id))
}

/// [`gen_misc`] returning the range image instead of the cloud.
pub fn gen_misc_image(kind: u8, config: &MiscConfig, seed: u64) -> Result<RangeImage> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = misc_base_image(kind, config, &mut rng)?;
    if matches!(kind, 1 | 2 | 4) {
        let sigma = sample_range(&mut rng, config.noise_sigma);
        add_range_noise(&mut image, sigma, &mut rng);
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn model() -> ProjectionModel {
        ProjectionModel::new(16, 64, -0.4, 0.1).unwrap()
    }

    fn zero_noise_config() -> MiscConfig {
        MiscConfig {
            noise_sigma: (0.0, 0.0),
            ..MiscConfig::desk(model())
        }
    }

    #[test]
    fn misc1_rows_constant_and_increasing_down() {
        let cfg = zero_noise_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let image = misc_base_image(1, &cfg, &mut rng).unwrap();
        let mut prev = 0.0;
        for row in 0..image.height() {
            let d0 = image.depth(row, 0);
            for col in 0..image.width() {
                assert_eq!(image.depth(row, col), d0);
            }
            assert!(d0 > prev, "row {row} not increasing");
            prev = d0;
        }
    }

    #[test]
    fn misc2_columns_constant_and_increasing_across() {
        let cfg = zero_noise_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let image = misc_base_image(2, &cfg, &mut rng).unwrap();
        let mut prev = 0.0;
        for col in 0..image.width() {
            let d0 = image.depth(0, col);
            for row in 0..image.height() {
                assert_eq!(image.depth(row, col), d0);
            }
            assert!(d0 > prev);
            prev = d0;
        }
    }

    #[test]
    fn misc3_sample_std_matches_configured_sigma() {
        // 1e4 cells at sigma 0.5: sample std within 5%
        let big = ProjectionModel::new(100, 100, -0.4, 0.1).unwrap();
        let cfg = MiscConfig {
            misc3_mean: (25.0, 25.0),
            misc3_sigma: (0.5, 0.5),
            ..MiscConfig::desk(big)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let image = misc_base_image(3, &cfg, &mut rng).unwrap();
        let n = (image.height() * image.width()) as f64;
        let mean: f64 = image.depth_data().iter().sum::<f64>() / n;
        let var: f64 = image
            .depth_data()
            .iter()
            .map(|d| (d - mean) * (d - mean))
            .sum::<f64>()
            / (n - 1.0);
        let std = var.sqrt();
        assert!((std - 0.5).abs() < 0.025, "sample std {std}");
    }

    #[test]
    fn misc4_patches_have_zero_internal_variance() {
        let cfg = zero_noise_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (base_depth, patches) = misc4_patches(&cfg, &mut rng.clone());
        let image = misc_base_image(4, &cfg, &mut rng).unwrap();

        // replay coverage: a cell belongs to the last patch stamped over it
        let (h, w) = (image.height(), image.width());
        let mut owner = vec![usize::MAX; h * w];
        for (pi, p) in patches.iter().enumerate() {
            for row in p.row0..p.row0 + p.rows {
                for col in p.col0..p.col0 + p.cols {
                    owner[row * w + col] = pi;
                }
            }
        }
        for row in 0..h {
            for col in 0..w {
                let want = match owner[row * w + col] {
                    usize::MAX => base_depth,
                    pi => patches[pi].depth,
                };
                assert_eq!(image.depth(row, col), want);
            }
        }
    }

    #[test]
    fn misc_generators_deterministic_and_labeled() {
        let cfg = MiscConfig::desk(model());
        for kind in 1..=4u8 {
            let a = gen_misc(kind, &cfg, 77, (kind - 1) as usize).unwrap();
            let b = gen_misc(kind, &cfg, 77, (kind - 1) as usize).unwrap();
            assert_eq!(a.cloud.points(), b.cloud.points(), "kind {kind}");
            assert_eq!(a.category, Category::Misc);
            assert!(!a.cloud.is_empty());
        }
        assert!(gen_misc(5, &cfg, 0, 0).is_err());
    }
}
