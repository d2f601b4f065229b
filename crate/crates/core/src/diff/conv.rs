//! 2-D convolution vocabulary for the range-image networks: conv layers with
//! SAME padding, batch normalization, parametric/leaky rectifiers, and the
//! vertical subpixel shuffle.
//!
//! Activations are `[B, H, W, C]` row-major; conv weights are
//! `[kh, kw, cin, cout]` so the channel-out axis stays contiguous for the
//! vectorized inner loops.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Kernel size and stride of a conv layer; padding is always SAME
/// (output dims are `ceil(input / stride)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl ConvSpec {
    pub fn square(k: usize, stride: usize) -> Self {
        ConvSpec {
            kh: k,
            kw: k,
            stride_h: stride,
            stride_w: stride,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride_h), w.div_ceil(self.stride_w))
    }

    fn pad_lo(&self, input: usize, out: usize, k: usize, stride: usize) -> isize {
        let total = ((out - 1) * stride + k).saturating_sub(input);
        let _ = self;
        (total / 2) as isize
    }
}

/// Tape for a conv layer: the input plus resolved geometry.
pub struct ConvTape {
    pub input: Tensor,
    spec: ConvSpec,
    dims: (usize, usize, usize, usize), // b, h, w, cin
    out_dims: (usize, usize, usize),    // ho, wo, cout
}

pub fn conv2d_forward(
    x: Tensor,
    w: &Tensor,
    bias: &Tensor,
    spec: ConvSpec,
) -> Result<(Tensor, ConvTape)> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape("conv input must be [B,H,W,C]"));
    }
    let (b, h, wd, cin) = (sh[0], sh[1], sh[2], sh[3]);
    let wsh = w.shape();
    if wsh.len() != 4 || wsh[2] != cin {
        return Err(Error::shape(format!(
            "conv weights {:?} do not match input channels {}",
            wsh, cin
        )));
    }
    let (kh, kw, cout) = (wsh[0], wsh[1], wsh[3]);
    if kh != spec.kh || kw != spec.kw || bias.numel() != cout {
        return Err(Error::shape("conv weight/bias dims disagree with spec"));
    }
    let (ho, wo) = spec.out_dims(h, wd);
    let pad_h = spec.pad_lo(h, ho, kh, spec.stride_h);
    let pad_w = spec.pad_lo(wd, wo, kw, spec.stride_w);

    let mut out = Tensor::zeros(&[b, ho, wo, cout]);
    let xd = x.data();
    let wdta = w.data();
    let bd = bias.data();
    out.data_mut()
        .par_chunks_mut(wo * cout)
        .enumerate()
        .for_each(|(row_idx, orow)| {
            let bi = row_idx / ho;
            let oi = row_idx % ho;
            for oj in 0..wo {
                orow[oj * cout..(oj + 1) * cout].copy_from_slice(bd);
            }
            for di in 0..kh {
                let ii = (oi * spec.stride_h) as isize + di as isize - pad_h;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let ii = ii as usize;
                for oj in 0..wo {
                    let ocell = &mut orow[oj * cout..(oj + 1) * cout];
                    for dj in 0..kw {
                        let jj = (oj * spec.stride_w) as isize + dj as isize - pad_w;
                        if jj < 0 || jj >= wd as isize {
                            continue;
                        }
                        let jj = jj as usize;
                        let xcell = &xd[((bi * h + ii) * wd + jj) * cin..][..cin];
                        let wbase = (di * kw + dj) * cin * cout;
                        for (ci, &xv) in xcell.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &wdta[wbase + ci * cout..][..cout];
                            for co in 0..cout {
                                ocell[co] += xv * wrow[co];
                            }
                        }
                    }
                }
            }
        });

    let tape = ConvTape {
        input: x,
        spec,
        dims: (b, h, wd, cin),
        out_dims: (ho, wo, cout),
    };
    Ok((out, tape))
}

/// Backward of [`conv2d_forward`]; accumulates into `dw`/`db`, returns `dx`.
pub fn conv2d_backward(
    tape: &ConvTape,
    w: &Tensor,
    dy: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Tensor {
    let (b, h, wd, cin) = tape.dims;
    let (ho, wo, cout) = tape.out_dims;
    let spec = tape.spec;
    let (kh, kw) = (spec.kh, spec.kw);
    let pad_h = spec.pad_lo(h, ho, kh, spec.stride_h);
    let pad_w = spec.pad_lo(wd, wo, kw, spec.stride_w);
    assert_eq!(dy.numel(), b * ho * wo * cout, "conv backward dy shape");

    let xd = tape.input.data();
    let dyd = dy.data();
    let wdta = w.data();

    // db
    {
        let dbd = db.data_mut();
        for r in 0..b * ho * wo {
            let cell = &dyd[r * cout..(r + 1) * cout];
            for co in 0..cout {
                dbd[co] += cell[co];
            }
        }
    }

    // dW: each (di, dj) tap owns its own weight slab, so taps parallelize
    // without reduction races.
    dw.data_mut()
        .par_chunks_mut(cin * cout)
        .enumerate()
        .for_each(|(tap, dwslab)| {
            let di = tap / kw;
            let dj = tap % kw;
            for bi in 0..b {
                for oi in 0..ho {
                    let ii = (oi * spec.stride_h) as isize + di as isize - pad_h;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let ii = ii as usize;
                    for oj in 0..wo {
                        let jj = (oj * spec.stride_w) as isize + dj as isize - pad_w;
                        if jj < 0 || jj >= wd as isize {
                            continue;
                        }
                        let jj = jj as usize;
                        let xcell = &xd[((bi * h + ii) * wd + jj) * cin..][..cin];
                        let dycell = &dyd[((bi * ho + oi) * wo + oj) * cout..][..cout];
                        for (ci, &xv) in xcell.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let slab = &mut dwslab[ci * cout..(ci + 1) * cout];
                            for co in 0..cout {
                                slab[co] += xv * dycell[co];
                            }
                        }
                    }
                }
            }
        });

    // dX, parallel over input rows
    let mut dx = Tensor::zeros(&[b, h, wd, cin]);
    dx.data_mut()
        .par_chunks_mut(wd * cin)
        .enumerate()
        .for_each(|(row_idx, dxrow)| {
            let bi = row_idx / h;
            let ii = row_idx % h;
            for di in 0..kh {
                let oi_num = ii as isize + pad_h - di as isize;
                if oi_num < 0 || oi_num % spec.stride_h as isize != 0 {
                    continue;
                }
                let oi = (oi_num / spec.stride_h as isize) as usize;
                if oi >= ho {
                    continue;
                }
                for jj in 0..wd {
                    let dxcell = &mut dxrow[jj * cin..(jj + 1) * cin];
                    for dj in 0..kw {
                        let oj_num = jj as isize + pad_w - dj as isize;
                        if oj_num < 0 || oj_num % spec.stride_w as isize != 0 {
                            continue;
                        }
                        let oj = (oj_num / spec.stride_w as isize) as usize;
                        if oj >= wo {
                            continue;
                        }
                        let dycell = &dyd[((bi * ho + oi) * wo + oj) * cout..][..cout];
                        let wbase = (di * kw + dj) * cin * cout;
                        for (ci, dxv) in dxcell.iter_mut().enumerate() {
                            let wrow = &wdta[wbase + ci * cout..][..cout];
                            let mut acc = 0.0;
                            for co in 0..cout {
                                acc += dycell[co] * wrow[co];
                            }
                            *dxv += acc;
                        }
                    }
                }
            }
        });
    dx
}

/// Batch-normalization parameters: per-channel scale/shift plus running
/// statistics used in evaluation mode.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
        }
    }
}

pub struct BatchNormTape {
    xhat: Tensor,
    inv_std: Vec<f64>,
    rows: usize,
    eval_scale: Option<Vec<f64>>,
}

const BN_EPS: f64 = 1e-5;

/// Per-channel standardization with trainable scale/shift.
///
/// Training mode uses batch statistics and updates the running averages;
/// evaluation mode standardizes with the stored running statistics.
pub fn batchnorm_forward(
    x: Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BatchNormState,
    training: bool,
) -> Result<(Tensor, BatchNormTape)> {
    let c = gamma.numel();
    if x.numel() % c != 0 {
        return Err(Error::shape("batchnorm channel mismatch"));
    }
    let rows = x.numel() / c;
    let shape = x.shape().to_vec();
    let mut y = x;

    if training {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for r in 0..rows {
            let cell = &y.data()[r * c..(r + 1) * c];
            for ci in 0..c {
                mean[ci] += cell[ci];
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        for r in 0..rows {
            let cell = &y.data()[r * c..(r + 1) * c];
            for ci in 0..c {
                let d = cell[ci] - mean[ci];
                var[ci] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= rows as f64;
        }
        let mom = state.momentum;
        for ci in 0..c {
            state.running_mean[ci] = mom * state.running_mean[ci] + (1.0 - mom) * mean[ci];
            state.running_var[ci] = mom * state.running_var[ci] + (1.0 - mom) * var[ci];
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(&shape);
        {
            let xh = xhat.data_mut();
            let yd = y.data_mut();
            let gd = gamma.data();
            let bd = beta.data();
            for r in 0..rows {
                for ci in 0..c {
                    let idx = r * c + ci;
                    let h = (yd[idx] - mean[ci]) * inv_std[ci];
                    xh[idx] = h;
                    yd[idx] = gd[ci] * h + bd[ci];
                }
            }
        }
        Ok((
            y,
            BatchNormTape {
                xhat,
                inv_std,
                rows,
                eval_scale: None,
            },
        ))
    } else {
        let inv_std: Vec<f64> = state
            .running_var
            .iter()
            .map(|&v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        let scale: Vec<f64> = (0..c).map(|ci| gamma.data()[ci] * inv_std[ci]).collect();
        {
            let yd = y.data_mut();
            let bd = beta.data();
            for r in 0..rows {
                for ci in 0..c {
                    let idx = r * c + ci;
                    yd[idx] = scale[ci] * (yd[idx] - state.running_mean[ci]) + bd[ci];
                }
            }
        }
        Ok((
            y,
            BatchNormTape {
                xhat: Tensor::zeros(&[0]),
                inv_std,
                rows,
                eval_scale: Some(scale),
            },
        ))
    }
}

pub fn batchnorm_backward(
    tape: &BatchNormTape,
    gamma: &Tensor,
    dy: &Tensor,
    dgamma: &mut Tensor,
    dbeta: &mut Tensor,
) -> Tensor {
    let c = gamma.numel();
    let rows = tape.rows;
    let mut dx = dy.clone();

    if let Some(scale) = &tape.eval_scale {
        // eval mode: y = scale * (x - rm) + beta, a per-channel affine map
        let dxd = dx.data_mut();
        for r in 0..rows {
            for ci in 0..c {
                dxd[r * c + ci] *= scale[ci];
            }
        }
        return dx;
    }

    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    let dyd = dy.data();
    let xh = tape.xhat.data();
    for r in 0..rows {
        for ci in 0..c {
            let idx = r * c + ci;
            sum_dy[ci] += dyd[idx];
            sum_dy_xhat[ci] += dyd[idx] * xh[idx];
        }
    }
    {
        let dgd = dgamma.data_mut();
        let dbd = dbeta.data_mut();
        for ci in 0..c {
            dgd[ci] += sum_dy_xhat[ci];
            dbd[ci] += sum_dy[ci];
        }
    }
    let n = rows as f64;
    let dxd = dx.data_mut();
    let gd = gamma.data();
    for r in 0..rows {
        for ci in 0..c {
            let idx = r * c + ci;
            let dxhat = dyd[idx] * gd[ci];
            dxd[idx] = tape.inv_std[ci]
                * (dxhat - sum_dy[ci] * gd[ci] / n - xh[idx] * sum_dy_xhat[ci] * gd[ci] / n);
        }
    }
    dx
}

pub struct PreluTape {
    input: Tensor,
}

/// Parametric rectifier with a trainable per-channel negative slope.
pub fn prelu_forward(x: Tensor, slope: &Tensor) -> (Tensor, PreluTape) {
    let c = slope.numel();
    let mut y = x.clone();
    let sd = slope.data();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            *v *= sd[i % c];
        }
    }
    (y, PreluTape { input: x })
}

pub fn prelu_backward(
    tape: &PreluTape,
    slope: &Tensor,
    dy: &Tensor,
    dslope: &mut Tensor,
) -> Tensor {
    let c = slope.numel();
    let mut dx = dy.clone();
    let xd = tape.input.data();
    let sd = slope.data();
    let dsd = dslope.data_mut();
    for (i, g) in dx.data_mut().iter_mut().enumerate() {
        if xd[i] < 0.0 {
            dsd[i % c] += xd[i] * *g;
            *g *= sd[i % c];
        }
    }
    dx
}

pub struct LeakyTape {
    mask: Vec<bool>,
}

/// Fixed-slope leaky rectifier (element-wise, any shape).
pub fn leaky_forward(x: Tensor, leak: f64) -> (Tensor, LeakyTape) {
    let mut y = x;
    let mask: Vec<bool> = y
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
    (y, LeakyTape { mask })
}

pub fn leaky_backward(tape: &LeakyTape, dy: &Tensor, leak: f64) -> Tensor {
    let mut dx = dy.clone();
    for (g, &neg) in dx.data_mut().iter_mut().zip(tape.mask.iter()) {
        if neg {
            *g *= leak;
        }
    }
    dx
}

/// Vertical subpixel shuffle: `[B, H, W, s*C] -> [B, s*H, W, C]` with
/// `out[b, s*i + t, j, c] = in[b, i, j, t*C + c]`. Bijective on elements.
pub fn subpixel_shuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::shape("subpixel shuffle expects [B,H,W,C]"));
    }
    let (b, h, w, cs) = (sh[0], sh[1], sh[2], sh[3]);
    if cs % s != 0 {
        return Err(Error::shape(format!(
            "channel count {cs} not divisible by shuffle factor {s}"
        )));
    }
    let c = cs / s;
    let mut out = Tensor::zeros(&[b, s * h, w, c]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for i in 0..h {
            for t in 0..s {
                for j in 0..w {
                    let src = ((bi * h + i) * w + j) * cs + t * c;
                    let dst = ((bi * s * h + s * i + t) * w + j) * c;
                    od[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`subpixel_shuffle`]; also serves as its backward pass.
pub fn subpixel_unshuffle(y: &Tensor, s: usize) -> Result<Tensor> {
    let sh = y.shape();
    if sh.len() != 4 {
        return Err(Error::shape("subpixel unshuffle expects [B,H,W,C]"));
    }
    let (b, sh_rows, w, c) = (sh[0], sh[1], sh[2], sh[3]);
    if sh_rows % s != 0 {
        return Err(Error::shape("row count not divisible by shuffle factor"));
    }
    let h = sh_rows / s;
    let mut out = Tensor::zeros(&[b, h, w, s * c]);
    let yd = y.data();
    let od = out.data_mut();
    for bi in 0..b {
        for i in 0..h {
            for t in 0..s {
                for j in 0..w {
                    let dst = ((bi * h + i) * w + j) * (s * c) + t * c;
                    let src = ((bi * s * h + s * i + t) * w + j) * c;
                    od[dst..dst + c].copy_from_slice(&yd[src..src + c]);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with identity weights reproduces the input
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 3, 4, 2]);
        let mut w = Tensor::zeros(&[1, 1, 2, 2]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let b = Tensor::zeros(&[2]);
        let (y, _) = conv2d_forward(x.clone(), &w, &b, ConvSpec::square(1, 1)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, h, w, cin, cout) = (2, 5, 6, 3, 4);
        let spec = ConvSpec {
            kh: 3,
            kw: 3,
            stride_h: 2,
            stride_w: 2,
        };
        let x = rand_tensor(&mut rng, &[b, h, w, cin]);
        let wt = rand_tensor(&mut rng, &[3, 3, cin, cout]);
        let bias = rand_tensor(&mut rng, &[cout]);
        let (y, _) = conv2d_forward(x.clone(), &wt, &bias, spec).unwrap();

        let (ho, wo) = spec.out_dims(h, w);
        assert_eq!(y.shape(), &[b, ho, wo, cout]);
        let pad_h = 0usize.max(((ho - 1) * 2 + 3).saturating_sub(h)) / 2;
        let pad_w = 0usize.max(((wo - 1) * 2 + 3).saturating_sub(w)) / 2;
        for bi in 0..b {
            for oi in 0..ho {
                for oj in 0..wo {
                    for co in 0..cout {
                        let mut acc = bias.data()[co];
                        for di in 0..3 {
                            for dj in 0..3 {
                                let ii = oi as isize * 2 + di as isize - pad_h as isize;
                                let jj = oj as isize * 2 + dj as isize - pad_w as isize;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.data()
                                        [((bi * h + ii as usize) * w + jj as usize) * cin + ci]
                                        * wt.data()[((di * 3 + dj) * cin + ci) * cout + co];
                                }
                            }
                        }
                        let got = y.data()[((bi * ho + oi) * wo + oj) * cout + co];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ConvSpec::square(3, 1);
        let x = rand_tensor(&mut rng, &[1, 4, 5, 2]);
        let w = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let bias = rand_tensor(&mut rng, &[3]);
        // objective: fixed random projection of the output
        let proj: Vec<f64> = (0..60).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let loss = |x: &Tensor, w: &Tensor, bias: &Tensor| -> f64 {
            let (y, _) = conv2d_forward(x.clone(), w, bias, spec).unwrap();
            y.data().iter().zip(proj.iter()).map(|(a, p)| a * p).sum()
        };
        let (y, tape) = conv2d_forward(x.clone(), &w, &bias, spec).unwrap();
        let dy = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let mut dw = w.zeros_like();
        let mut db = bias.zeros_like();
        let dx = conv2d_backward(&tape, &w, &dy, &mut dw, &mut db);

        let h = 1e-6;
        for i in 0..x.numel() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&p, &w, &bias) - loss(&m, &w, &bias)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "dx[{i}]");
        }
        for i in 0..w.numel() {
            let mut p = w.clone();
            p.data_mut()[i] += h;
            let mut m = w.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&x, &p, &bias) - loss(&x, &m, &bias)) / (2.0 * h);
            assert!((fd - dw.data()[i]).abs() < 1e-6, "dw[{i}]");
        }
        for i in 0..bias.numel() {
            let mut p = bias.clone();
            p.data_mut()[i] += h;
            let mut m = bias.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&x, &w, &p) - loss(&x, &w, &m)) / (2.0 * h);
            assert!((fd - db.data()[i]).abs() < 1e-6, "db[{i}]");
        }
    }

    #[test]
    fn batchnorm_train_standardizes_and_backward_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 2]);
        let gamma = Tensor::from_vec(&[2], vec![1.3, 0.7]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap();
        let mut state = BatchNormState::new(2);
        let (y, tape) = batchnorm_forward(x.clone(), &gamma, &beta, &mut state, true).unwrap();

        // standardized pre-scale activations have zero mean / unit variance
        let rows = x.numel() / 2;
        for ci in 0..2 {
            let mut mean = 0.0;
            for r in 0..rows {
                mean += tape.xhat.data()[r * 2 + ci];
            }
            mean /= rows as f64;
            assert!(mean.abs() < 1e-9);
        }

        let proj: Vec<f64> = (0..y.numel()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let loss = |x: &Tensor, g: &Tensor, b: &Tensor| -> f64 {
            let mut st = BatchNormState::new(2);
            let (y, _) = batchnorm_forward(x.clone(), g, b, &mut st, true).unwrap();
            y.data().iter().zip(proj.iter()).map(|(a, p)| a * p).sum()
        };
        let dy = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let mut dgamma = gamma.zeros_like();
        let mut dbeta = beta.zeros_like();
        let dx = batchnorm_backward(&tape, &gamma, &dy, &mut dgamma, &mut dbeta);

        let h = 1e-6;
        for i in 0..x.numel() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&p, &gamma, &beta) - loss(&m, &gamma, &beta)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-5, "dx[{i}]: {fd} vs {}", dx.data()[i]);
        }
        for i in 0..2 {
            let mut p = gamma.clone();
            p.data_mut()[i] += h;
            let mut m = gamma.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&x, &p, &beta) - loss(&x, &m, &beta)) / (2.0 * h);
            assert!((fd - dgamma.data()[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn prelu_gradients() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -2.0, -0.5, 3.0]).unwrap();
        let slope = Tensor::from_vec(&[2], vec![0.2, 0.4]).unwrap();
        let (y, tape) = prelu_forward(x, &slope);
        assert_eq!(y.data(), &[1.0, -0.8, -0.1, 3.0]);
        let dy = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let mut dslope = slope.zeros_like();
        let dx = prelu_backward(&tape, &slope, &dy, &mut dslope);
        assert_eq!(dx.data(), &[1.0, 0.4, 0.2, 1.0]);
        assert_eq!(dslope.data(), &[-0.5, -2.0]);
    }

    #[test]
    fn subpixel_shuffle_contract() {
        // 1x1x2 block (a, b) -> rows (a), (b)
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![7.0, 9.0]).unwrap();
        let y = subpixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[7.0, 9.0]);

        // indivisible channels rejected
        let bad = Tensor::zeros(&[1, 1, 1, 3]);
        assert!(subpixel_shuffle(&bad, 2).is_err());

        // multiset preserved and inverse recovers the input exactly
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 6]);
        let y = subpixel_shuffle(&x, 2).unwrap();
        let mut a: Vec<f64> = x.data().to_vec();
        let mut b: Vec<f64> = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        let back = subpixel_unshuffle(&y, 2).unwrap();
        assert_eq!(back.data(), x.data());
        assert_eq!(back.shape(), x.shape());
    }
}
