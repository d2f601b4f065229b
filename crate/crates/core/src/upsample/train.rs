//! Up-sampler training: masked reconstruction objectives or the adversarial
//! game, Adam throughout, deterministic under seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{disc_adversarial_loss, gen_adversarial_loss, sr_l_alpha_loss};
use super::model::{
    depth_to_log, disc_backward, disc_forward, gen_backward, gen_forward, log_to_depth,
    DiscriminatorParams, GeneratorParams, SRParams, UpsampleConfig,
};
use crate::diff::{adam_update, LrSchedule, OptimizerState, Tensor};
use crate::error::{Error, Result};
use crate::geom::RangeImage;

/// Training objectives for the up-sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SrTrainMode {
    L1,
    L2,
    Gan,
}

impl SrTrainMode {
    pub fn parse(s: &str) -> Result<SrTrainMode> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(SrTrainMode::L1),
            "l2" => Ok(SrTrainMode::L2),
            "gan" => Ok(SrTrainMode::Gan),
            other => Err(Error::invalid(format!("unknown training mode '{other}'"))),
        }
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SrHistoryRow {
    pub step: u64,
    pub generator_loss: f64,
    pub discriminator_loss: f64,
}

fn batch_tensor(images: &[&RangeImage]) -> Tensor {
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        data.extend(img.depth_data().iter().map(|&r| depth_to_log(r)));
    }
    Tensor::from_vec(&[images.len(), h, w, 1], data).expect("finite depths")
}

/// Mean masked L-alpha loss of a log-depth prediction batch against range
/// images, with the gradient chained through the depth transform.
fn batch_recon_loss(y: &Tensor, targets: &[&RangeImage], alpha: u8) -> Result<(f64, Tensor)> {
    let b = targets.len();
    let (h, w) = (targets[0].height(), targets[0].width());
    if y.numel() != b * h * w {
        return Err(Error::shape("prediction batch does not match targets"));
    }
    let mut dy = y.zeros_like();
    let mut loss = 0.0;
    for (bi, target) in targets.iter().enumerate() {
        let offset = bi * h * w;
        let depths: Vec<f64> = y.data()[offset..offset + h * w]
            .iter()
            .map(|&v| log_to_depth(v))
            .collect();
        let pred = RangeImage::from_parts(target.model, depths, vec![true; h * w])?;
        let (l, grad) = sr_l_alpha_loss(&pred, target, alpha)?;
        loss += l / b as f64;
        let dyd = dy.data_mut();
        for (i, &g) in grad.data().iter().enumerate() {
            let yv = y.data()[offset + i];
            // depth = max(exp(y) - 1, floor): zero slope on the floor
            let slope = if yv.exp() - 1.0 > 1e-3 { yv.exp() } else { 0.0 };
            dyd[offset + i] = g * slope / b as f64;
        }
    }
    Ok((loss, dy))
}

/// Trains the generator (and, in GAN mode, the discriminator) on aligned
/// `(lr, hr)` pairs where the low-resolution input is the row-subsampled
/// high-resolution target.
pub fn train_upsampler(
    pairs: &[(RangeImage, RangeImage)],
    config: &UpsampleConfig,
    mode: SrTrainMode,
    schedule: &LrSchedule,
) -> Result<(SRParams, Vec<SrHistoryRow>)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let (lr0, hr0) = &pairs[0];
    if hr0.height() != lr0.height() * config.f_up || hr0.width() != lr0.width() {
        return Err(Error::shape("pair shapes do not match the up-sampling factor"));
    }
    for (lr, hr) in pairs {
        if lr.height() != lr0.height()
            || lr.width() != lr0.width()
            || hr.height() != hr0.height()
            || hr.width() != hr0.width()
        {
            return Err(Error::shape("all pairs must share a shape"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = GeneratorParams::init(config, &mut rng);
    let mut gen_opt = OptimizerState::new(&generator.tensors(), schedule.clone());
    let mut discriminator = match mode {
        SrTrainMode::Gan => Some(DiscriminatorParams::init(hr0.height(), hr0.width(), &mut rng)),
        _ => None,
    };
    let mut disc_opt = discriminator
        .as_ref()
        .map(|d| OptimizerState::new(&d.tensors(), schedule.clone()));

    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(1);
    let mut history = Vec::new();
    let alpha = match mode {
        SrTrainMode::L1 => 1,
        SrTrainMode::L2 => 2,
        SrTrainMode::Gan => config.alpha,
    };

    for step in 0..config.steps {
        let batch: Vec<&(RangeImage, RangeImage)> = (0..config.batch_size)
            .map(|_| &pairs[batch_rng.gen_range(0..pairs.len())])
            .collect();
        let lr_batch: Vec<&RangeImage> = batch.iter().map(|(lr, _)| lr).collect();
        let hr_batch: Vec<&RangeImage> = batch.iter().map(|(_, hr)| hr).collect();
        let x = batch_tensor(&lr_batch);

        let (g_loss, d_loss) = match mode {
            SrTrainMode::L1 | SrTrainMode::L2 => {
                let (y, tape) = gen_forward(x, &mut generator, true)?;
                let (loss, dy) = batch_recon_loss(&y, &hr_batch, alpha)?;
                let mut grads = GeneratorParams::zeros_like(config);
                gen_backward(&tape, &generator, &dy, &mut grads);
                let grad_refs: Vec<&Tensor> = grads.tensors();
                adam_update(&mut generator.tensors_mut(), &grad_refs, &mut gen_opt)
                    .map_err(|e| divergence_at(e, step))?;
                (loss, 0.0)
            }
            SrTrainMode::Gan => {
                let disc = discriminator.as_mut().expect("gan mode has a discriminator");
                let opt_d = disc_opt.as_mut().expect("gan mode has a discriminator");

                // discriminator step on real and generated batches
                let real = batch_tensor(&hr_batch);
                let (fake, _) = gen_forward(x.clone(), &mut generator, true)?;
                let (real_logits, real_tape) = disc_forward(real, disc, true)?;
                let (fake_logits, fake_tape) = disc_forward(fake.clone(), disc, true)?;
                let (d_loss, d_real, d_fake) = disc_adversarial_loss(&real_logits, &fake_logits);
                let mut d_grads =
                    DiscriminatorParams::zeros_like(disc.input_h, disc.input_w);
                disc_backward(&real_tape, disc, &d_real, &mut d_grads);
                disc_backward(&fake_tape, disc, &d_fake, &mut d_grads);
                let grad_refs: Vec<&Tensor> = d_grads.tensors();
                adam_update(&mut disc.tensors_mut(), &grad_refs, opt_d)
                    .map_err(|e| divergence_at(e, step))?;

                // generator step through the (frozen) discriminator
                let (fake, gen_tape) = gen_forward(x, &mut generator, true)?;
                let (fake_logits, fake_tape) = disc_forward(fake, disc, true)?;
                let (g_loss, d_logits) = gen_adversarial_loss(&fake_logits);
                let mut sink = DiscriminatorParams::zeros_like(disc.input_h, disc.input_w);
                let d_fake_input = disc_backward(&fake_tape, disc, &d_logits, &mut sink);
                let mut g_grads = GeneratorParams::zeros_like(config);
                gen_backward(&gen_tape, &generator, &d_fake_input, &mut g_grads);
                let grad_refs: Vec<&Tensor> = g_grads.tensors();
                adam_update(&mut generator.tensors_mut(), &grad_refs, &mut gen_opt)
                    .map_err(|e| divergence_at(e, step))?;
                (g_loss, d_loss)
            }
        };

        if !g_loss.is_finite() || !d_loss.is_finite() {
            return Err(Error::NonFinite {
                context: "up-sampler training loss".into(),
                step,
            });
        }
        history.push(SrHistoryRow {
            step: step + 1,
            generator_loss: g_loss,
            discriminator_loss: d_loss,
        });
    }

    Ok((
        SRParams {
            generator,
            discriminator,
        },
        history,
    ))
}

fn divergence_at(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { context, .. } => Error::NonFinite { context, step },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ProjectionModel;
    use crate::upsample::interp::make_lr;

    fn constant_scene(h: usize, w: usize, depth: f64) -> RangeImage {
        let model = ProjectionModel::new(h, w, -0.4, -0.05).unwrap();
        let mut img = RangeImage::empty(model);
        for r in 0..h {
            for c in 0..w {
                img.set(r, c, depth);
            }
        }
        img
    }

    fn pair_set(f_up: usize) -> Vec<(RangeImage, RangeImage)> {
        (0..6)
            .map(|i| {
                let hr = constant_scene(8, 16, 5.0 + i as f64);
                let lr = make_lr(&hr, f_up).unwrap();
                (lr, hr)
            })
            .collect()
    }

    fn tiny_config() -> UpsampleConfig {
        UpsampleConfig {
            f_up: 2,
            residual_blocks: 1,
            alpha: 1,
            steps: 60,
            batch_size: 2,
            seed: 3,
        }
    }

    #[test]
    fn l1_training_converges_on_constant_scenes() {
        let pairs = pair_set(2);
        let cfg = tiny_config();
        let schedule = LrSchedule {
            warmup_steps: 10,
            ..LrSchedule::default()
        };
        let (params, history) = train_upsampler(&pairs, &cfg, SrTrainMode::L1, &schedule).unwrap();
        assert!(params.discriminator.is_none());
        assert_eq!(history.len(), 60);
        let last = history.last().unwrap();
        assert!(
            last.generator_loss < history[0].generator_loss,
            "loss did not decrease: {} -> {}",
            history[0].generator_loss,
            last.generator_loss
        );
        assert!(history.iter().all(|r| r.generator_loss.is_finite()));
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let pairs = pair_set(2);
        let cfg = UpsampleConfig {
            steps: 8,
            ..tiny_config()
        };
        let schedule = LrSchedule::default();
        let run = || {
            let (params, _) = train_upsampler(&pairs, &cfg, SrTrainMode::L2, &schedule).unwrap();
            let mut buf = Vec::new();
            params.to_checkpoint(&cfg).write_to(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gan_mode_keeps_losses_finite() {
        let pairs = pair_set(2);
        let cfg = UpsampleConfig {
            steps: 6,
            ..tiny_config()
        };
        let schedule = LrSchedule {
            base_lr: 1e-4,
            warmup_steps: 2,
            ..LrSchedule::default()
        };
        let (params, history) = train_upsampler(&pairs, &cfg, SrTrainMode::Gan, &schedule).unwrap();
        assert!(params.discriminator.is_some());
        for row in &history {
            assert!(row.generator_loss.is_finite());
            assert!(row.discriminator_loss.is_finite());
            assert!(row.discriminator_loss != 0.0);
        }
    }

    #[test]
    fn mismatched_pairs_rejected() {
        let hr = constant_scene(8, 16, 5.0);
        let lr_wrong = make_lr(&hr, 4).unwrap(); // config expects f_up = 2
        let cfg = tiny_config();
        assert!(train_upsampler(
            &[(lr_wrong, hr)],
            &cfg,
            SrTrainMode::L1,
            &LrSchedule::default()
        )
        .is_err());
    }
}
