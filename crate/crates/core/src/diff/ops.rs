//! Layer vocabulary for the point-based networks: shared per-point dense
//! maps (1x1 convolutions), leaky rectifiers, max-reduction over neighbors,
//! dropout, softmax cross-entropy, and gradient reversal.
//!
//! Every forward returns whatever tape state its backward needs; backwards
//! are hand-derived and checked against central finite differences in the
//! test suite.

use rand::Rng;

use super::tensor::{matmul_acc, matmul_at_acc, Tensor};
use crate::error::{Error, Result};

/// Slope of the leaky rectifier used by the metric network.
pub const DEFAULT_LEAK: f64 = 0.2;

fn transpose(w: &Tensor) -> Tensor {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut t = Tensor::zeros(&[cols, rows]);
    let src = w.data();
    let dst = t.data_mut();
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
    t
}

/// Tape for a dense (or shared 1x1-conv) layer.
pub struct DenseTape {
    /// Layer input, kept for the weight gradient.
    pub input: Tensor,
    /// Negative-side rectifier mask (absent for linear layers).
    neg_mask: Option<Vec<bool>>,
    rows: usize,
    leak: f64,
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor, rows: usize) -> Result<Tensor> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    if x.numel() != rows * cin {
        return Err(Error::shape(format!(
            "dense input {} values, expected {}x{}",
            x.numel(),
            rows,
            cin
        )));
    }
    if b.numel() != cout {
        return Err(Error::shape("bias width does not match weight"));
    }
    let mut y = Tensor::zeros(&[rows, cout]);
    {
        let yd = y.data_mut();
        for r in 0..rows {
            yd[r * cout..(r + 1) * cout].copy_from_slice(b.data());
        }
    }
    matmul_acc(x.data(), w.data(), y.data_mut(), rows, cin, cout);
    Ok(y)
}

/// Row-wise affine map followed by a leaky rectifier.
///
/// Treats the input as `[rows, cin]`; the same weights apply to every row,
/// which makes this the shared-MLP / 1x1-convolution primitive.
pub fn dense_leaky_forward(
    x: Tensor,
    w: &Tensor,
    b: &Tensor,
    leak: f64,
) -> Result<(Tensor, DenseTape)> {
    let rows = x.numel() / w.shape()[0];
    let mut y = affine(&x, w, b, rows)?;
    let neg_mask: Vec<bool> = y
        .data_mut()
        .iter_mut()
        .map(|v| {
            if *v < 0.0 {
                *v *= leak;
                true
            } else {
                false
            }
        })
        .collect();
    let tape = DenseTape {
        input: x,
        neg_mask: Some(neg_mask),
        rows,
        leak,
    };
    Ok((y, tape))
}

/// Row-wise affine map with no activation (head output layers).
pub fn dense_forward(x: Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, DenseTape)> {
    let rows = x.numel() / w.shape()[0];
    let y = affine(&x, w, b, rows)?;
    let tape = DenseTape {
        input: x,
        neg_mask: None,
        rows,
        leak: 1.0,
    };
    Ok((y, tape))
}

/// Backward pass for [`dense_leaky_forward`] / [`dense_forward`].
///
/// Returns the input gradient and accumulates into `dw`/`db`.
pub fn dense_backward(
    tape: &DenseTape,
    w: &Tensor,
    dy: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Tensor {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    let rows = tape.rows;
    assert_eq!(dy.numel(), rows * cout, "dense backward shape");

    let dpre = match &tape.neg_mask {
        Some(mask) => {
            let mut d = dy.clone();
            for (g, &neg) in d.data_mut().iter_mut().zip(mask.iter()) {
                if neg {
                    *g *= tape.leak;
                }
            }
            d
        }
        None => dy.clone(),
    };

    matmul_at_acc(tape.input.data(), dpre.data(), dw.data_mut(), rows, cin, cout);
    {
        let dbd = db.data_mut();
        let dp = dpre.data();
        for r in 0..rows {
            for c in 0..cout {
                dbd[c] += dp[r * cout + c];
            }
        }
    }

    // dX = dPre * W^T via the fast row-major kernel on the materialized transpose.
    let wt = transpose(w);
    let mut dx = Tensor::zeros(&[rows, cin]);
    matmul_acc(dpre.data(), wt.data(), dx.data_mut(), rows, cout, cin);
    dx
}

/// Shared per-point MLP step over a `Q x K x Cin` neighborhood block.
///
/// Identical weights at every (q, k) position; this is the contract form of
/// [`dense_leaky_forward`] with the block flattened to `(Q*K) x Cin`.
pub fn shared_mlp_forward(
    block: &Tensor,
    w: &Tensor,
    b: &Tensor,
    leak: f64,
) -> Result<(Tensor, DenseTape)> {
    if block.shape().len() != 3 {
        return Err(Error::shape("shared mlp expects a rank-3 block"));
    }
    let (q, k) = (block.shape()[0], block.shape()[1]);
    let cin = block.shape()[2];
    if cin != w.shape()[0] {
        return Err(Error::shape(format!(
            "shared mlp channel mismatch: block {}, weights {}",
            cin,
            w.shape()[0]
        )));
    }
    let flat = Tensor::new_unchecked(&[q * k, cin], block.data().to_vec());
    let (y, tape) = dense_leaky_forward(flat, w, b, leak)?;
    let cout = w.shape()[1];
    Ok((y.into_shape(&[q, k, cout]), tape))
}

/// Tape for the neighbor max-reduction: winning k index per (q, c).
pub struct MaxTape {
    pub argmax: Vec<u32>,
    q: usize,
    k: usize,
    c: usize,
}

/// Element-wise max over the K axis of a `Q x K x C` block.
///
/// Ties route to the lowest k so replay is deterministic.
pub fn reduce_max_neighbors(block: &Tensor) -> (Tensor, MaxTape) {
    assert_eq!(block.shape().len(), 3, "reduce_max expects rank-3 block");
    let (q, k, c) = (block.shape()[0], block.shape()[1], block.shape()[2]);
    assert!(k >= 1);
    let mut out = Tensor::zeros(&[q, c]);
    let mut argmax = vec![0u32; q * c];
    let src = block.data();
    let dst = out.data_mut();
    for qi in 0..q {
        let base = qi * k * c;
        dst[qi * c..(qi + 1) * c].copy_from_slice(&src[base..base + c]);
        for ki in 1..k {
            let row = &src[base + ki * c..base + (ki + 1) * c];
            for ci in 0..c {
                if row[ci] > dst[qi * c + ci] {
                    dst[qi * c + ci] = row[ci];
                    argmax[qi * c + ci] = ki as u32;
                }
            }
        }
    }
    (out, MaxTape { argmax, q, k, c })
}

/// Backward of [`reduce_max_neighbors`]: the gradient of each (q, c) flows
/// to the single argmax element.
pub fn reduce_max_backward(tape: &MaxTape, dy: &Tensor) -> Tensor {
    let (q, k, c) = (tape.q, tape.k, tape.c);
    assert_eq!(dy.numel(), q * c);
    let mut dx = Tensor::zeros(&[q, k, c]);
    let dxd = dx.data_mut();
    let dyd = dy.data();
    for qi in 0..q {
        for ci in 0..c {
            let ki = tape.argmax[qi * c + ci] as usize;
            dxd[qi * k * c + ki * c + ci] += dyd[qi * c + ci];
        }
    }
    dx
}

/// Gradient reversal: forward identity.
pub fn grad_reverse(input: &Tensor, lambda: f64) -> Tensor {
    debug_assert!(lambda >= 0.0);
    input.clone()
}

/// Gradient reversal: backward multiplies the incoming gradient by `-lambda`.
pub fn grad_reverse_backward(upstream: &Tensor, lambda: f64) -> Tensor {
    let mut g = upstream.clone();
    g.scale(-lambda);
    g
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (rows, u) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = logits.clone();
    let d = probs.data_mut();
    for r in 0..rows {
        let row = &mut d[r * u..(r + 1) * u];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Weighted mean softmax cross-entropy over rows.
///
/// `loss = (1/rows) * sum_r w_r * (-log softmax(logits_r)[target_r])`,
/// `dlogits_r = w_r * (softmax_r - onehot_r) / rows`. A zero row weight
/// removes the row from both loss and gradient.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    row_weights: &[f64],
) -> Result<(f64, Tensor)> {
    let (rows, u) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != rows || row_weights.len() != rows {
        return Err(Error::shape("targets/weights must match logit rows"));
    }
    if !logits.is_finite() {
        return Err(Error::invalid("non-finite logits"));
    }
    if targets.iter().any(|&t| t >= u) {
        return Err(Error::invalid("target index out of range"));
    }
    if row_weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("row weights must be nonnegative"));
    }

    let probs = softmax_rows(logits);
    let mut dlogits = probs.clone();
    let inv_rows = 1.0 / rows as f64;
    let mut loss = 0.0;
    {
        let dl = dlogits.data_mut();
        let pd = probs.data();
        for r in 0..rows {
            let w = row_weights[r];
            if w == 0.0 {
                dl[r * u..(r + 1) * u].iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let p = pd[r * u + targets[r]].max(f64::MIN_POSITIVE);
            loss += w * (-p.ln());
            for c in 0..u {
                let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                dl[r * u + c] = w * (pd[r * u + c] - onehot) * inv_rows;
            }
        }
    }
    Ok((loss * inv_rows, dlogits))
}

/// Train/eval switch for dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout tape: per-element keep multiplier (0 or 1/(1-rate)).
pub struct DropoutTape {
    scale: Option<Vec<f64>>,
}

/// Inverted dropout: eval mode and rate 0 are the identity; in train mode
/// each element is zeroed with probability `rate` and survivors are scaled
/// by `1/(1-rate)`.
pub fn dropout_forward<R: Rng>(
    x: Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, DropoutTape)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout rate must be in [0, 1)"));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x, DropoutTape { scale: None }));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut y = x;
    let scale: Vec<f64> = y
        .data_mut()
        .iter_mut()
        .map(|v| {
            if rng.gen::<f64>() < rate {
                *v = 0.0;
                0.0
            } else {
                *v *= keep;
                keep
            }
        })
        .collect();
    Ok((y, DropoutTape { scale: Some(scale) }))
}

pub fn dropout_backward(tape: &DropoutTape, dy: &Tensor) -> Tensor {
    match &tape.scale {
        None => dy.clone(),
        Some(scale) => {
            let mut dx = dy.clone();
            for (g, s) in dx.data_mut().iter_mut().zip(scale.iter()) {
                *g *= s;
            }
            dx
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_passthrough() {
        // identity weights, zero bias, positive inputs -> output equals input
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::zeros(&[3]);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 0.5, 0.25, 4.0]).unwrap();
        let (y, _) = dense_leaky_forward(x.clone(), &w, &b, 0.2).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn leaky_negative_slope() {
        // input -1, weight 1, bias 0, leak 0.2 -> -0.2
        let w = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let x = Tensor::from_vec(&[1, 1], vec![-1.0]).unwrap();
        let (y, _) = dense_leaky_forward(x, &w, &b, 0.2).unwrap();
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn shared_mlp_matches_per_position_oracle() {
        // random 4x3x2 -> 5 case against an explicit loop nest
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, k, cin, cout) = (4, 3, 2, 5);
        let block = Tensor::from_vec(
            &[q, k, cin],
            (0..q * k * cin).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(
            &[cin, cout],
            (0..cin * cout).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let b = Tensor::from_vec(&[cout], (0..cout).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let leak = 0.2;
        let (y, _) = shared_mlp_forward(&block, &w, &b, leak).unwrap();

        for qi in 0..q {
            for ki in 0..k {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        acc += block.data()[qi * k * cin + ki * cin + ci] * w.data()[ci * cout + co];
                    }
                    if acc < 0.0 {
                        acc *= leak;
                    }
                    let got = y.data()[qi * k * cout + ki * cout + co];
                    assert!((got - acc).abs() < 1e-12, "mismatch at ({qi},{ki},{co})");
                }
            }
        }
    }

    #[test]
    fn reduce_max_basics() {
        // K=1 -> identity
        let block = Tensor::from_vec(&[2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, _) = reduce_max_neighbors(&block);
        assert_eq!(y.data(), block.data());

        // one dominant row -> that row
        let block =
            Tensor::from_vec(&[1, 3, 2], vec![0.0, 0.1, 9.0, 8.0, 0.2, 0.3]).unwrap();
        let (y, tape) = reduce_max_neighbors(&block);
        assert_eq!(y.data(), &[9.0, 8.0]);
        assert_eq!(tape.argmax, vec![1, 1]);
    }

    #[test]
    fn reduce_max_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, k, c) = (3, 4, 2);
        // perturb inputs away from ties
        let mut vals: Vec<f64> = (0..q * k * c).map(|i| i as f64 * 0.173).collect();
        for v in vals.iter_mut() {
            *v += rng.gen::<f64>() * 0.01;
        }
        let block = Tensor::from_vec(&[q, k, c], vals).unwrap();
        // scalar objective: weighted sum of the reduced block
        let wts: Vec<f64> = (0..q * c).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let f = |b: &Tensor| -> f64 {
            let (y, _) = reduce_max_neighbors(b);
            y.data().iter().zip(wts.iter()).map(|(a, w)| a * w).sum()
        };
        let (y, tape) = reduce_max_neighbors(&block);
        let dy = Tensor::from_vec(&[q, c], wts.clone()).unwrap();
        let dx = reduce_max_backward(&tape, &dy);
        assert_eq!(y.shape(), &[q, c]);

        let h = 1e-6;
        for i in 0..block.numel() {
            let mut plus = block.clone();
            plus.data_mut()[i] += h;
            let mut minus = block.clone();
            minus.data_mut()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = dx.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < 1e-4,
                "fd {fd} vs analytic {an} at {i}"
            );
        }
    }

    #[test]
    fn grad_reverse_contract() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        // forward(x) = x for any x
        assert_eq!(grad_reverse(&x, 0.3).data(), x.data());
        // lambda = 0 -> zero backward
        let g = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(grad_reverse_backward(&g, 0.0).data().iter().all(|&v| v == 0.0));
        // lambda = 0.3 -> exactly -0.3 * g
        let up = Tensor::from_vec(&[2, 2], vec![2.0, -4.0, 1.0, 0.0]).unwrap();
        let back = grad_reverse_backward(&up, 0.3);
        for (o, i) in back.data().iter().zip(up.data().iter()) {
            assert_eq!(*o, -0.3 * *i);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        // uniform logits, U=3 -> ln 3 per unit-weight row
        let logits = Tensor::zeros(&[4, 3]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 2, 0], &[1.0; 4]).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_zero_weight_masks_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::from_vec(
            &[3, 4],
            (0..12).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect(),
        )
        .unwrap();
        let (loss_w, grad_w) =
            softmax_cross_entropy(&logits, &[1, 2, 3], &[1.0, 0.0, 1.0]).unwrap();

        // changing the masked row's logits changes nothing
        let mut altered = logits.clone();
        for c in 0..4 {
            altered.data_mut()[4 + c] = 99.0;
        }
        let (loss_a, grad_a) =
            softmax_cross_entropy(&altered, &[1, 2, 3], &[1.0, 0.0, 1.0]).unwrap();
        assert!((loss_w - loss_a).abs() < 1e-12);
        for c in 0..4 {
            assert_eq!(grad_w.data()[4 + c], 0.0);
            assert_eq!(grad_a.data()[4 + c], 0.0);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = Tensor::from_vec(
            &[5, 3],
            (0..15).map(|_| rng.gen::<f64>() * 3.0 - 1.5).collect(),
        )
        .unwrap();
        let targets = [0usize, 2, 1, 1, 0];
        let weights = [1.0, 0.5, 2.0, 0.0, 1.0];
        let (_, grad) = softmax_cross_entropy(&logits, &targets, &weights).unwrap();
        let h = 1e-6;
        for i in 0..logits.numel() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let (lp, _) = softmax_cross_entropy(&plus, &targets, &weights).unwrap();
            let (lm, _) = softmax_cross_entropy(&minus, &targets, &weights).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = grad.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-4, "at {i}: fd {fd} an {an}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Tensor::from_vec(
            &[8, 5],
            (0..40).map(|_| rng.gen::<f64>() * 20.0 - 10.0).collect(),
        )
        .unwrap();
        let probs = softmax_rows(&logits);
        for r in 0..8 {
            let s: f64 = probs.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::filled(&[10, 10], 1.0);
        // eval mode -> identity
        let (y, _) = dropout_forward(x.clone(), 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        // rate 0 -> identity in both modes
        let (y, _) = dropout_forward(x.clone(), 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        // train mode, 1e5 elements of value 1 -> mean within [0.98, 1.02]
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let x = Tensor::filled(&[n], 1.0);
        let (y, tape) = dropout_forward(x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");

        // backward routes through the same mask
        let dy = Tensor::filled(&[n], 1.0);
        let dx = dropout_backward(&tape, &dy);
        for (o, i) in dx.data().iter().zip(y.data().iter()) {
            assert_eq!(*o, *i);
        }
    }
}
