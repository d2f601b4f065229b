//! Masked reconstruction loss and the adversarial objectives.

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geom::RangeImage;

/// Masked L-alpha loss over the target's measured cells:
/// `(1 / (alpha * |gamma|)) * sum_{gamma} |r_gt - r_hr|^alpha`
/// (alpha 1 is the MAE, alpha 2 half the MSE). Cells outside the measured
/// set contribute nothing to the loss or the gradient.
pub fn sr_l_alpha_loss(pred: &RangeImage, target: &RangeImage, alpha: u8) -> Result<(f64, Tensor)> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::shape("loss inputs must share a shape"));
    }
    if !matches!(alpha, 1 | 2) {
        return Err(Error::invalid("alpha must be 1 or 2"));
    }
    let gamma: usize = target.valid_data().iter().filter(|v| **v).count();
    if gamma == 0 {
        return Err(Error::invalid("target has no measured cells"));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[pred.height(), pred.width()]);
    {
        let g = grad.data_mut();
        for (i, (&p, &t)) in pred
            .depth_data()
            .iter()
            .zip(target.depth_data().iter())
            .enumerate()
        {
            if !target.valid_data()[i] {
                continue;
            }
            let d = p - t;
            match alpha {
                1 => {
                    loss += d.abs();
                    g[i] = d.signum() / gamma as f64;
                    if d == 0.0 {
                        g[i] = 0.0;
                    }
                }
                _ => {
                    loss += d * d;
                    g[i] = d / gamma as f64;
                }
            }
        }
    }
    Ok((loss / (alpha as f64 * gamma as f64), grad))
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Discriminator objective (to minimize): the negation of
/// `log D(real) + log(1 - D(fake))` expressed through stable softplus terms.
/// Returns the loss plus gradients with respect to both logit vectors.
pub fn disc_adversarial_loss(
    real_logits: &Tensor,
    fake_logits: &Tensor,
) -> (f64, Tensor, Tensor) {
    let n = real_logits.numel().max(1) as f64;
    let m = fake_logits.numel().max(1) as f64;
    let mut loss = 0.0;
    let mut d_real = real_logits.zeros_like();
    let mut d_fake = fake_logits.zeros_like();
    for (i, &l) in real_logits.data().iter().enumerate() {
        loss += softplus(-l) / n;
        d_real.data_mut()[i] = (sigmoid(l) - 1.0) / n;
    }
    for (i, &l) in fake_logits.data().iter().enumerate() {
        loss += softplus(l) / m;
        d_fake.data_mut()[i] = sigmoid(l) / m;
    }
    (loss, d_real, d_fake)
}

/// Generator adversarial objective (to minimize): `-log D(fake)`.
/// Returns the loss plus the gradient with respect to the fake logits.
pub fn gen_adversarial_loss(fake_logits: &Tensor) -> (f64, Tensor) {
    let m = fake_logits.numel().max(1) as f64;
    let mut loss = 0.0;
    let mut d_fake = fake_logits.zeros_like();
    for (i, &l) in fake_logits.data().iter().enumerate() {
        loss += softplus(-l) / m;
        d_fake.data_mut()[i] = (sigmoid(l) - 1.0) / m;
    }
    (loss, d_fake)
}
