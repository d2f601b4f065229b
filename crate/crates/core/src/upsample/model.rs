//! SR generator (residual blocks + vertical subpixel shuffle) and
//! discriminator (strided conv ladder) at configurable depth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::checkpoint::{fnv1a64, Checkpoint};
use crate::diff::conv::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, leaky_backward,
    leaky_forward, prelu_backward, prelu_forward, subpixel_shuffle, subpixel_unshuffle,
    BatchNormState, BatchNormTape, ConvSpec, ConvTape, LeakyTape, PreluTape,
};
use crate::diff::ops::{dense_backward, dense_forward, dense_leaky_forward, DenseTape};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geom::RangeImage;

/// Base feature width of the generator trunk.
const BASE: usize = 64;
/// Channels entering a subpixel stage conv (after the first stage).
const STAGE_CH: usize = 128;
/// Channels produced by a stage conv before the shuffle.
const STAGE_OUT: usize = 256;
/// Negative slope of the discriminator rectifiers and the initial value of
/// the generator's parametric slopes.
const LEAK: f64 = 0.2;

/// Up-sampler training/architecture configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsampleConfig {
    /// Vertical up-sampling factor; a power of two (one subpixel stage per
    /// doubling).
    pub f_up: usize,
    /// Residual block count (16 at paper scale, 4 at desk scale).
    pub residual_blocks: usize,
    /// Loss exponent for the non-adversarial trainings.
    pub alpha: u8,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
}

impl UpsampleConfig {
    pub fn desk() -> Self {
        UpsampleConfig {
            f_up: 4,
            residual_blocks: 4,
            alpha: 1,
            steps: 800,
            batch_size: 4,
            seed: 0,
        }
    }

    pub fn stages(&self) -> usize {
        self.f_up.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.f_up.is_power_of_two() || self.f_up < 2 {
            return Err(Error::invalid("f_up must be a power of two, at least 2"));
        }
        if self.residual_blocks == 0 {
            return Err(Error::invalid("at least one residual block required"));
        }
        if !matches!(self.alpha, 1 | 2) {
            return Err(Error::invalid("alpha must be 1 or 2"));
        }
        Ok(())
    }

    pub fn digest(&self) -> u64 {
        let canon = format!(
            "srgan f_up={} blocks={} alpha={}",
            self.f_up, self.residual_blocks, self.alpha
        );
        fnv1a64(canon.as_bytes())
    }
}

/// Depth transform: the network sees `ln(1 + r)` and emits log-depth that is
/// mapped back with `expm1`, clamped to a small positive floor.
pub fn depth_to_log(r: f64) -> f64 {
    (1.0 + r).ln()
}

pub fn log_to_depth(y: f64) -> f64 {
    (y.exp() - 1.0).max(1e-3)
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvLayer {
    fn init(kh: usize, kw: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (kh * kw * cin) as f64;
        let gain = (2.0 / (1.0 + LEAK * LEAK)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        ConvLayer {
            w: Tensor::from_vec(
                &[kh, kw, cin, cout],
                (0..kh * kw * cin * cout)
                    .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                    .collect(),
            )
            .expect("conv init"),
            b: Tensor::zeros(&[cout]),
        }
    }

    fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        ConvLayer {
            w: Tensor::zeros(&[kh, kw, cin, cout]),
            b: Tensor::zeros(&[cout]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub state: BatchNormState,
}

impl BnLayer {
    fn new(channels: usize) -> Self {
        BnLayer {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            state: BatchNormState::new(channels),
        }
    }

    fn zeros(channels: usize) -> Self {
        BnLayer {
            gamma: Tensor::zeros(&[channels]),
            beta: Tensor::zeros(&[channels]),
            state: BatchNormState::new(channels),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: ConvLayer,
    pub bn1: BnLayer,
    pub slope1: Tensor,
    pub conv2: ConvLayer,
    pub bn2: BnLayer,
}

#[derive(Debug, Clone)]
pub struct SubpixelStage {
    pub conv: ConvLayer,
    pub slope: Tensor,
}

/// Generator weights: head conv + parametric rectifier, residual trunk,
/// post-trunk conv with long skip, subpixel stages, and the tail conv.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub head: ConvLayer,
    pub head_slope: Tensor,
    pub blocks: Vec<ResBlock>,
    pub post: ConvLayer,
    pub post_bn: BnLayer,
    pub stages: Vec<SubpixelStage>,
    pub tail: ConvLayer,
}

impl GeneratorParams {
    pub fn init(config: &UpsampleConfig, rng: &mut ChaCha8Rng) -> Self {
        let blocks = (0..config.residual_blocks)
            .map(|_| ResBlock {
                conv1: ConvLayer::init(3, 3, BASE, BASE, rng),
                bn1: BnLayer::new(BASE),
                slope1: Tensor::filled(&[BASE], LEAK),
                conv2: ConvLayer::init(3, 3, BASE, BASE, rng),
                bn2: BnLayer::new(BASE),
            })
            .collect();
        let stages = (0..config.stages())
            .map(|s| {
                let cin = if s == 0 { BASE } else { STAGE_CH };
                SubpixelStage {
                    conv: ConvLayer::init(3, 3, cin, STAGE_OUT, rng),
                    slope: Tensor::filled(&[STAGE_CH], LEAK),
                }
            })
            .collect();
        GeneratorParams {
            head: ConvLayer::init(9, 9, 1, BASE, rng),
            head_slope: Tensor::filled(&[BASE], LEAK),
            blocks,
            post: ConvLayer::init(3, 3, BASE, BASE, rng),
            post_bn: BnLayer::new(BASE),
            stages,
            tail: ConvLayer::init(9, 9, STAGE_CH, 1, rng),
        }
    }

    pub fn zeros_like(config: &UpsampleConfig) -> Self {
        let blocks = (0..config.residual_blocks)
            .map(|_| ResBlock {
                conv1: ConvLayer::zeros(3, 3, BASE, BASE),
                bn1: BnLayer::zeros(BASE),
                slope1: Tensor::zeros(&[BASE]),
                conv2: ConvLayer::zeros(3, 3, BASE, BASE),
                bn2: BnLayer::zeros(BASE),
            })
            .collect();
        let stages = (0..config.stages())
            .map(|s| {
                let cin = if s == 0 { BASE } else { STAGE_CH };
                SubpixelStage {
                    conv: ConvLayer::zeros(3, 3, cin, STAGE_OUT),
                    slope: Tensor::zeros(&[STAGE_CH]),
                }
            })
            .collect();
        GeneratorParams {
            head: ConvLayer::zeros(9, 9, 1, BASE),
            head_slope: Tensor::zeros(&[BASE]),
            blocks,
            post: ConvLayer::zeros(3, 3, BASE, BASE),
            post_bn: BnLayer::zeros(BASE),
            stages,
            tail: ConvLayer::zeros(9, 9, STAGE_CH, 1),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("gen.head.w".into(), &self.head.w),
            ("gen.head.b".into(), &self.head.b),
            ("gen.head.slope".into(), &self.head_slope),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("gen.block{i}.conv1.w"), &b.conv1.w));
            out.push((format!("gen.block{i}.conv1.b"), &b.conv1.b));
            out.push((format!("gen.block{i}.bn1.gamma"), &b.bn1.gamma));
            out.push((format!("gen.block{i}.bn1.beta"), &b.bn1.beta));
            out.push((format!("gen.block{i}.slope"), &b.slope1));
            out.push((format!("gen.block{i}.conv2.w"), &b.conv2.w));
            out.push((format!("gen.block{i}.conv2.b"), &b.conv2.b));
            out.push((format!("gen.block{i}.bn2.gamma"), &b.bn2.gamma));
            out.push((format!("gen.block{i}.bn2.beta"), &b.bn2.beta));
        }
        out.push(("gen.post.w".into(), &self.post.w));
        out.push(("gen.post.b".into(), &self.post.b));
        out.push(("gen.post_bn.gamma".into(), &self.post_bn.gamma));
        out.push(("gen.post_bn.beta".into(), &self.post_bn.beta));
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("gen.stage{i}.conv.w"), &s.conv.w));
            out.push((format!("gen.stage{i}.conv.b"), &s.conv.b));
            out.push((format!("gen.stage{i}.slope"), &s.slope));
        }
        out.push(("gen.tail.w".into(), &self.tail.w));
        out.push(("gen.tail.b".into(), &self.tail.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> =
            vec![&mut self.head.w, &mut self.head.b, &mut self.head_slope];
        for b in self.blocks.iter_mut() {
            out.push(&mut b.conv1.w);
            out.push(&mut b.conv1.b);
            out.push(&mut b.bn1.gamma);
            out.push(&mut b.bn1.beta);
            out.push(&mut b.slope1);
            out.push(&mut b.conv2.w);
            out.push(&mut b.conv2.b);
            out.push(&mut b.bn2.gamma);
            out.push(&mut b.bn2.beta);
        }
        out.push(&mut self.post.w);
        out.push(&mut self.post.b);
        out.push(&mut self.post_bn.gamma);
        out.push(&mut self.post_bn.beta);
        for s in self.stages.iter_mut() {
            out.push(&mut s.conv.w);
            out.push(&mut s.conv.b);
            out.push(&mut s.slope);
        }
        out.push(&mut self.tail.w);
        out.push(&mut self.tail.b);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn accumulate(&mut self, other: &GeneratorParams) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    fn bn_states(&self) -> Vec<(String, &BatchNormState)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("gen.block{i}.bn1"), &b.bn1.state));
            out.push((format!("gen.block{i}.bn2"), &b.bn2.state));
        }
        out.push(("gen.post_bn".into(), &self.post_bn.state));
        out
    }

    fn bn_states_mut(&mut self) -> Vec<(String, &mut BatchNormState)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("gen.block{i}.bn1"), &mut b.bn1.state));
            out.push((format!("gen.block{i}.bn2"), &mut b.bn2.state));
        }
        out.push(("gen.post_bn".into(), &mut self.post_bn.state));
        out
    }
}

/// Tape of one generator forward.
pub struct GenTape {
    head_conv: ConvTape,
    head_prelu: PreluTape,
    blocks: Vec<ResBlockTape>,
    post_conv: ConvTape,
    post_bn: BatchNormTape,
    stages: Vec<StageTape>,
    tail_conv: ConvTape,
}

struct ResBlockTape {
    conv1: ConvTape,
    bn1: BatchNormTape,
    prelu: PreluTape,
    conv2: ConvTape,
    bn2: BatchNormTape,
}

struct StageTape {
    conv: ConvTape,
    prelu: PreluTape,
}

/// Generator forward on log-depth tensors `[B, H, W, 1]`.
///
/// Training mode uses batch statistics in the normalization layers and
/// updates their running averages.
pub fn gen_forward(
    x: Tensor,
    params: &mut GeneratorParams,
    training: bool,
) -> Result<(Tensor, GenTape)> {
    let s1 = ConvSpec::square(3, 1);
    let s9 = ConvSpec::square(9, 1);

    let (h, head_conv) = conv2d_forward(x, &params.head.w, &params.head.b, s9)?;
    let (h1, head_prelu) = prelu_forward(h, &params.head_slope);

    let mut r = h1.clone();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in params.blocks.iter_mut() {
        let (c1, conv1) = conv2d_forward(r.clone(), &b.conv1.w, &b.conv1.b, s1)?;
        let (n1, bn1) = batchnorm_forward(c1, &b.bn1.gamma, &b.bn1.beta, &mut b.bn1.state, training)?;
        let (p1, prelu) = prelu_forward(n1, &b.slope1);
        let (c2, conv2) = conv2d_forward(p1, &b.conv2.w, &b.conv2.b, s1)?;
        let (n2, bn2) = batchnorm_forward(c2, &b.bn2.gamma, &b.bn2.beta, &mut b.bn2.state, training)?;
        let mut next = n2;
        next.add_assign(&r);
        r = next;
        blocks.push(ResBlockTape {
            conv1,
            bn1,
            prelu,
            conv2,
            bn2,
        });
    }

    let (pc, post_conv) = conv2d_forward(r, &params.post.w, &params.post.b, s1)?;
    let (pn, post_bn) = batchnorm_forward(
        pc,
        &params.post_bn.gamma,
        &params.post_bn.beta,
        &mut params.post_bn.state,
        training,
    )?;
    let mut y = pn;
    y.add_assign(&h1);

    let mut stages = Vec::with_capacity(params.stages.len());
    for s in params.stages.iter() {
        let (c, conv) = conv2d_forward(y, &s.conv.w, &s.conv.b, s1)?;
        let shuffled = subpixel_shuffle(&c, 2)?;
        let (p, prelu) = prelu_forward(shuffled, &s.slope);
        y = p;
        stages.push(StageTape { conv, prelu });
    }

    let (out, tail_conv) = conv2d_forward(y, &params.tail.w, &params.tail.b, s9)?;
    Ok((
        out,
        GenTape {
            head_conv,
            head_prelu,
            blocks,
            post_conv,
            post_bn,
            stages,
            tail_conv,
        },
    ))
}

/// Backward through the generator, accumulating into `grads`.
pub fn gen_backward(
    tape: &GenTape,
    params: &GeneratorParams,
    dy: &Tensor,
    grads: &mut GeneratorParams,
) {
    let mut d = conv2d_backward(
        &tape.tail_conv,
        &params.tail.w,
        dy,
        &mut grads.tail.w,
        &mut grads.tail.b,
    );

    for (si, s) in params.stages.iter().enumerate().rev() {
        let st = &tape.stages[si];
        let g = &mut grads.stages[si];
        d = prelu_backward(&st.prelu, &s.slope, &d, &mut g.slope);
        d = subpixel_unshuffle(&d, 2).expect("shuffle backward");
        d = conv2d_backward(&st.conv, &s.conv.w, &d, &mut g.conv.w, &mut g.conv.b);
    }

    // long skip: gradient reaches both the post-trunk output and h1
    let mut dh1 = d.clone();
    let mut dr = batchnorm_backward(
        &tape.post_bn,
        &params.post_bn.gamma,
        &d,
        &mut grads.post_bn.gamma,
        &mut grads.post_bn.beta,
    );
    dr = conv2d_backward(
        &tape.post_conv,
        &params.post.w,
        &dr,
        &mut grads.post.w,
        &mut grads.post.b,
    );

    for (bi, b) in params.blocks.iter().enumerate().rev() {
        let bt = &tape.blocks[bi];
        let g = &mut grads.blocks[bi];
        // block output = branch(r_in) + r_in
        let mut dbranch = batchnorm_backward(&bt.bn2, &b.bn2.gamma, &dr, &mut g.bn2.gamma, &mut g.bn2.beta);
        dbranch = conv2d_backward(&bt.conv2, &b.conv2.w, &dbranch, &mut g.conv2.w, &mut g.conv2.b);
        dbranch = prelu_backward(&bt.prelu, &b.slope1, &dbranch, &mut g.slope1);
        dbranch = batchnorm_backward(&bt.bn1, &b.bn1.gamma, &dbranch, &mut g.bn1.gamma, &mut g.bn1.beta);
        dbranch = conv2d_backward(&bt.conv1, &b.conv1.w, &dbranch, &mut g.conv1.w, &mut g.conv1.b);
        dr.add_assign(&dbranch);
    }
    dh1.add_assign(&dr);

    let d = prelu_backward(&tape.head_prelu, &params.head_slope, &dh1, &mut grads.head_slope);
    conv2d_backward(
        &tape.head_conv,
        &params.head.w,
        &d,
        &mut grads.head.w,
        &mut grads.head.b,
    );
}

/// Eval-mode generator applied to a range image; output is a dense
/// prediction over the vertically scaled projection model.
pub fn sr_generator_forward(
    image_lr: &RangeImage,
    params: &mut GeneratorParams,
    config: &UpsampleConfig,
) -> Result<RangeImage> {
    config.validate()?;
    let x = image_to_log_tensor(image_lr);
    let (y, _) = gen_forward(x, params, false)?;
    let model = image_lr.model.with_vertical_factor(config.f_up);
    log_tensor_to_image(&y, model)
}

/// Packs a range image into a `[1, H, W, 1]` log-depth tensor; missing cells
/// carry the log of the invalid fill depth.
pub fn image_to_log_tensor(image: &RangeImage) -> Tensor {
    let data: Vec<f64> = image.depth_data().iter().map(|&r| depth_to_log(r)).collect();
    Tensor::from_vec(&[1, image.height(), image.width(), 1], data).expect("finite depths")
}

/// Unpacks a `[1, H, W, 1]` log-depth tensor into a dense range image.
pub fn log_tensor_to_image(y: &Tensor, model: crate::geom::ProjectionModel) -> Result<RangeImage> {
    if y.numel() != model.height * model.width {
        return Err(Error::shape("log tensor does not match the model grid"));
    }
    let depth: Vec<f64> = y.data().iter().map(|&v| log_to_depth(v)).collect();
    let valid = vec![true; depth.len()];
    RangeImage::from_parts(model, depth, valid)
}

/// Discriminator weights: the Table-style conv ladder plus two dense layers.
/// The flatten width is derived from the actual conv output shape for the
/// configured input size.
#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub convs: Vec<DiscConvLayer>,
    pub dense1_w: Tensor,
    pub dense1_b: Tensor,
    pub dense2_w: Tensor,
    pub dense2_b: Tensor,
    pub input_h: usize,
    pub input_w: usize,
}

#[derive(Debug, Clone)]
pub struct DiscConvLayer {
    pub conv: ConvLayer,
    pub bn: Option<BnLayer>,
    pub spec: ConvSpec,
}

/// `(kernel, stride_h, stride_w, cin, cout, batchnorm)` rows of the ladder.
const DISC_LADDER: [(usize, usize, usize, usize, usize, bool); 8] = [
    (3, 1, 1, 1, 64, false),
    (5, 2, 4, 64, 64, true),
    (3, 1, 1, 64, 128, true),
    (3, 2, 2, 128, 128, true),
    (3, 1, 1, 128, 256, true),
    (3, 1, 2, 256, 256, true),
    (3, 1, 1, 256, 512, true),
    (3, 2, 2, 512, 512, true),
];

impl DiscriminatorParams {
    /// Flattened feature width after the ladder for a given input size.
    pub fn flat_width(input_h: usize, input_w: usize) -> usize {
        let (mut h, mut w) = (input_h, input_w);
        for (_, sh, sw, _, cout, _) in DISC_LADDER {
            h = h.div_ceil(sh);
            w = w.div_ceil(sw);
            let _ = cout;
        }
        h * w * 512
    }

    pub fn init(input_h: usize, input_w: usize, rng: &mut ChaCha8Rng) -> Self {
        let convs = DISC_LADDER
            .iter()
            .map(|&(k, sh, sw, cin, cout, bn)| DiscConvLayer {
                conv: ConvLayer::init(k, k, cin, cout, rng),
                bn: bn.then(|| BnLayer::new(cout)),
                spec: ConvSpec {
                    kh: k,
                    kw: k,
                    stride_h: sh,
                    stride_w: sw,
                },
            })
            .collect();
        let flat = Self::flat_width(input_h, input_w);
        let bound1 = (2.0f64 / (1.0 + LEAK * LEAK)).sqrt() * (3.0 / flat as f64).sqrt();
        let dense1_w = Tensor::from_vec(
            &[flat, 1024],
            (0..flat * 1024)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound1)
                .collect(),
        )
        .expect("dense init");
        let bound2 = (3.0f64 / 1024.0).sqrt();
        let dense2_w = Tensor::from_vec(
            &[1024, 1],
            (0..1024).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound2).collect(),
        )
        .expect("dense init");
        DiscriminatorParams {
            convs,
            dense1_w,
            dense1_b: Tensor::zeros(&[1024]),
            dense2_w,
            dense2_b: Tensor::zeros(&[1]),
            input_h,
            input_w,
        }
    }

    pub fn zeros_like(input_h: usize, input_w: usize) -> Self {
        let convs = DISC_LADDER
            .iter()
            .map(|&(k, sh, sw, cin, cout, bn)| DiscConvLayer {
                conv: ConvLayer::zeros(k, k, cin, cout),
                bn: bn.then(|| BnLayer::zeros(cout)),
                spec: ConvSpec {
                    kh: k,
                    kw: k,
                    stride_h: sh,
                    stride_w: sw,
                },
            })
            .collect();
        let flat = Self::flat_width(input_h, input_w);
        DiscriminatorParams {
            convs,
            dense1_w: Tensor::zeros(&[flat, 1024]),
            dense1_b: Tensor::zeros(&[1024]),
            dense2_w: Tensor::zeros(&[1024, 1]),
            dense2_b: Tensor::zeros(&[1]),
            input_h,
            input_w,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.convs.iter().enumerate() {
            out.push((format!("disc.conv{i}.w"), &l.conv.w));
            out.push((format!("disc.conv{i}.b"), &l.conv.b));
            if let Some(bn) = &l.bn {
                out.push((format!("disc.conv{i}.bn.gamma"), &bn.gamma));
                out.push((format!("disc.conv{i}.bn.beta"), &bn.beta));
            }
        }
        out.push(("disc.dense1.w".into(), &self.dense1_w));
        out.push(("disc.dense1.b".into(), &self.dense1_b));
        out.push(("disc.dense2.w".into(), &self.dense2_w));
        out.push(("disc.dense2.b".into(), &self.dense2_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in self.convs.iter_mut() {
            out.push(&mut l.conv.w);
            out.push(&mut l.conv.b);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.dense1_w);
        out.push(&mut self.dense1_b);
        out.push(&mut self.dense2_w);
        out.push(&mut self.dense2_b);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn accumulate(&mut self, other: &DiscriminatorParams) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }
}

pub struct DiscTape {
    convs: Vec<(ConvTape, Option<BatchNormTape>, LeakyTape)>,
    dense1: DenseTape,
    dense2: DenseTape,
    batch: usize,
}

/// Discriminator forward on `[B, f_up*H, W, 1]` log-depth tensors; returns
/// one logit per image.
pub fn disc_forward(
    x: Tensor,
    params: &mut DiscriminatorParams,
    training: bool,
) -> Result<(Tensor, DiscTape)> {
    let sh = x.shape().to_vec();
    if sh.len() != 4 || sh[1] != params.input_h || sh[2] != params.input_w || sh[3] != 1 {
        return Err(Error::shape(format!(
            "discriminator expects [B,{},{},1], got {:?}",
            params.input_h, params.input_w, sh
        )));
    }
    let batch = sh[0];
    let mut y = x;
    let mut convs = Vec::with_capacity(params.convs.len());
    for l in params.convs.iter_mut() {
        let (c, conv_tape) = conv2d_forward(y, &l.conv.w, &l.conv.b, l.spec)?;
        let (n, bn_tape) = match &mut l.bn {
            Some(bn) => {
                let (n, t) = batchnorm_forward(c, &bn.gamma, &bn.beta, &mut bn.state, training)?;
                (n, Some(t))
            }
            None => (c, None),
        };
        let (a, leaky_tape) = leaky_forward(n, LEAK);
        y = a;
        convs.push((conv_tape, bn_tape, leaky_tape));
    }
    let flat = Tensor::from_vec(&[batch, y.numel() / batch], y.data().to_vec())?;
    let (h, dense1) = dense_leaky_forward(flat, &params.dense1_w, &params.dense1_b, LEAK)?;
    let (logits, dense2) = dense_forward(h, &params.dense2_w, &params.dense2_b)?;
    Ok((
        logits,
        DiscTape {
            convs,
            dense1,
            dense2,
            batch,
        },
    ))
}

/// Backward through the discriminator; returns the input gradient.
pub fn disc_backward(
    tape: &DiscTape,
    params: &DiscriminatorParams,
    dlogits: &Tensor,
    grads: &mut DiscriminatorParams,
) -> Tensor {
    let mut d = dense_backward(
        &tape.dense2,
        &params.dense2_w,
        dlogits,
        &mut grads.dense2_w,
        &mut grads.dense2_b,
    );
    d = dense_backward(
        &tape.dense1,
        &params.dense1_w,
        &d,
        &mut grads.dense1_w,
        &mut grads.dense1_b,
    );
    // unflatten to the last conv activation shape
    let (mut h, mut w) = (params.input_h, params.input_w);
    let mut dims = Vec::new();
    for (_, sh, sw, _, cout, _) in DISC_LADDER {
        h = h.div_ceil(sh);
        w = w.div_ceil(sw);
        dims.push((h, w, cout));
    }
    let (lh, lw, lc) = *dims.last().unwrap();
    let mut d = Tensor::from_vec(&[tape.batch, lh, lw, lc], d.data().to_vec()).expect("unflatten");
    for (i, l) in params.convs.iter().enumerate().rev() {
        let (conv_tape, bn_tape, leaky_tape) = &tape.convs[i];
        let g = &mut grads.convs[i];
        d = leaky_backward(leaky_tape, &d, LEAK);
        if let (Some(bn_tape), Some(bn), Some(gbn)) = (bn_tape, &l.bn, g.bn.as_mut()) {
            d = batchnorm_backward(bn_tape, &bn.gamma, &d, &mut gbn.gamma, &mut gbn.beta);
        }
        d = conv2d_backward(conv_tape, &l.conv.w, &d, &mut g.conv.w, &mut g.conv.b);
    }
    d
}

/// Eval-mode discriminator logit for one range image.
pub fn sr_discriminator_forward(
    image_hr: &RangeImage,
    params: &mut DiscriminatorParams,
) -> Result<f64> {
    let x = image_to_log_tensor(image_hr);
    let (logits, _) = disc_forward(x, params, false)?;
    Ok(logits.data()[0])
}

/// Generator plus optional discriminator (absent for the non-adversarial
/// trainings).
#[derive(Debug, Clone)]
pub struct SRParams {
    pub generator: GeneratorParams,
    pub discriminator: Option<DiscriminatorParams>,
}

impl SRParams {
    /// Packs everything, including normalization running statistics, into a
    /// checkpoint with the config embedded.
    pub fn to_checkpoint(&self, config: &UpsampleConfig) -> Checkpoint {
        let metadata = serde_json::json!({
            "kind": "srgan",
            "config": config,
            "depth_transform": "log1p",
            "has_discriminator": self.discriminator.is_some(),
            "disc_input": self
                .discriminator
                .as_ref()
                .map(|d| vec![d.input_h, d.input_w]),
        })
        .to_string();
        let mut blocks: Vec<(String, Tensor)> = self
            .generator
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        for (name, state) in self.generator.bn_states() {
            blocks.push((
                format!("{name}.running_mean"),
                Tensor::from_vec(&[state.running_mean.len()], state.running_mean.clone()).unwrap(),
            ));
            blocks.push((
                format!("{name}.running_var"),
                Tensor::from_vec(&[state.running_var.len()], state.running_var.clone()).unwrap(),
            ));
        }
        if let Some(d) = &self.discriminator {
            for (n, t) in d.named_tensors() {
                blocks.push((n, t.clone()));
            }
        }
        Checkpoint { metadata, blocks }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(SRParams, UpsampleConfig)> {
        let meta: serde_json::Value = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
        if meta.get("kind").and_then(|v| v.as_str()) != Some("srgan") {
            return Err(Error::Format("checkpoint is not an up-sampler checkpoint".into()));
        }
        let config: UpsampleConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing config".into()))?,
        )
        .map_err(|e| Error::Format(format!("bad embedded config: {e}")))?;
        config.validate()?;
        let mut generator = GeneratorParams::zeros_like(&config);
        {
            let names: Vec<String> = generator
                .named_tensors()
                .iter()
                .map(|(n, _)| n.clone())
                .collect();
            for (name, dst) in names.iter().zip(generator.tensors_mut()) {
                let src = ckpt
                    .block(name)
                    .ok_or_else(|| Error::Format(format!("checkpoint missing block {name}")))?;
                if src.shape() != dst.shape() {
                    return Err(Error::Format(format!("block {name} has wrong shape")));
                }
                *dst = src.clone();
            }
        }
        for (name, state) in generator.bn_states_mut() {
            let mean = ckpt
                .block(&format!("{name}.running_mean"))
                .ok_or_else(|| Error::Format(format!("missing {name} running stats")))?;
            let var = ckpt
                .block(&format!("{name}.running_var"))
                .ok_or_else(|| Error::Format(format!("missing {name} running stats")))?;
            state.running_mean = mean.data().to_vec();
            state.running_var = var.data().to_vec();
        }
        let discriminator = if meta.get("has_discriminator").and_then(|v| v.as_bool()) == Some(true)
        {
            let dims: Vec<usize> = serde_json::from_value(
                meta.get("disc_input")
                    .cloned()
                    .ok_or_else(|| Error::Format("missing discriminator input dims".into()))?,
            )
            .map_err(|e| Error::Format(format!("bad discriminator dims: {e}")))?;
            let mut d = DiscriminatorParams::zeros_like(dims[0], dims[1]);
            let names: Vec<String> =
                d.named_tensors().iter().map(|(n, _)| n.clone()).collect();
            for (name, dst) in names.iter().zip(d.tensors_mut()) {
                let src = ckpt
                    .block(name)
                    .ok_or_else(|| Error::Format(format!("checkpoint missing block {name}")))?;
                *dst = src.clone();
            }
            Some(d)
        } else {
            None
        };
        Ok((
            SRParams {
                generator,
                discriminator,
            },
            config,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradcheck::{probe_indices, rel_err};
    use crate::geom::ProjectionModel;
    use rand::SeedableRng;

    fn tiny_config() -> UpsampleConfig {
        UpsampleConfig {
            f_up: 2,
            residual_blocks: 1,
            alpha: 1,
            steps: 1,
            batch_size: 1,
            seed: 0,
        }
    }

    fn rand_input(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            &[b, h, w, 1],
            (0..b * h * w).map(|_| rng.gen::<f64>() * 3.0 + 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn generator_output_shape_scales_rows() {
        for f_up in [2usize, 4, 8] {
            let cfg = UpsampleConfig {
                f_up,
                ..tiny_config()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut params = GeneratorParams::init(&cfg, &mut rng);
            let x = rand_input(&mut rng, 1, 4, 8);
            let (y, _) = gen_forward(x, &mut params, false).unwrap();
            assert_eq!(y.shape(), &[1, f_up * 4, 8, 1]);
        }
    }

    #[test]
    fn zeroed_residual_section_acts_as_identity() {
        // with all residual-branch and post convs zeroed (and BN shifts
        // zero), the trunk output equals the head output, so the network is
        // tail(stages(head(x)))
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = GeneratorParams::init(&cfg, &mut rng);
        for b in params.blocks.iter_mut() {
            b.conv1.w.fill(0.0);
            b.conv1.b.fill(0.0);
            b.conv2.w.fill(0.0);
            b.conv2.b.fill(0.0);
            b.bn1.beta.fill(0.0);
            b.bn2.beta.fill(0.0);
        }
        params.post.w.fill(0.0);
        params.post.b.fill(0.0);
        params.post_bn.beta.fill(0.0);

        let x = rand_input(&mut rng, 1, 4, 8);
        let (full, _) = gen_forward(x.clone(), &mut params.clone(), false).unwrap();

        // manual composition of head, stages, tail
        let s1 = ConvSpec::square(3, 1);
        let s9 = ConvSpec::square(9, 1);
        let (h, _) = conv2d_forward(x, &params.head.w, &params.head.b, s9).unwrap();
        let (mut y, _) = prelu_forward(h, &params.head_slope);
        for s in &params.stages {
            let (c, _) = conv2d_forward(y, &s.conv.w, &s.conv.b, s1).unwrap();
            let shuffled = subpixel_shuffle(&c, 2).unwrap();
            let (p, _) = prelu_forward(shuffled, &s.slope);
            y = p;
        }
        let (manual, _) = conv2d_forward(y, &params.tail.w, &params.tail.b, s9).unwrap();
        for (a, b) in full.data().iter().zip(manual.data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        // 4x8 input, one residual block, projection objective
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = GeneratorParams::init(&cfg, &mut rng);
        let x = rand_input(&mut rng, 1, 4, 8);
        let proj: Vec<f64> = (0..2 * 4 * 8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();

        let loss_of = |p: &GeneratorParams| -> f64 {
            let mut p = p.clone();
            let (y, _) = gen_forward(x.clone(), &mut p, true).unwrap();
            y.data().iter().zip(proj.iter()).map(|(a, b)| a * b).sum()
        };

        let mut work = params.clone();
        let (y, tape) = gen_forward(x.clone(), &mut work, true).unwrap();
        let dy = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
        let mut grads = GeneratorParams::zeros_like(&cfg);
        gen_backward(&tape, &params, &dy, &mut grads);

        // conv biases directly before a normalization layer have exactly
        // zero influence (the batch mean cancels them); treat values below
        // the finite-difference noise floor as matching zeros.
        let noise_floor = 1e-6 * (1.0 + loss_of(&params).abs());
        let h = 1e-6;
        let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let gts = grads.tensors();
        for (ti, name) in names.iter().enumerate() {
            for &i in probe_indices(gts[ti].numel(), 3).iter() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].data_mut()[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = gts[ti].data()[i];
                if fd.abs().max(an.abs()) < noise_floor {
                    continue;
                }
                let err = rel_err(fd, an, noise_floor);
                assert!(err < 1e-4, "{name}[{i}]: fd {fd} vs {an} (rel {err})");
            }
        }
    }

    #[test]
    fn discriminator_scalar_output_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = DiscriminatorParams::init(16, 32, &mut rng);
        let x = rand_input(&mut rng, 2, 16, 32);
        let (l1, _) = disc_forward(x.clone(), &mut params, false).unwrap();
        assert_eq!(l1.shape(), &[2, 1]);
        let (l2, _) = disc_forward(x, &mut params, false).unwrap();
        assert_eq!(l1.data(), l2.data());
        // identical inputs produce identical logits
        let model = ProjectionModel::new(16, 32, -0.4, 0.0).unwrap();
        let mut img = RangeImage::empty(model);
        for r in 0..16 {
            for c in 0..32 {
                img.set(r, c, 5.0 + r as f64 * 0.1);
            }
        }
        let a = sr_discriminator_forward(&img, &mut params).unwrap();
        let b = sr_discriminator_forward(&img, &mut params).unwrap();
        assert_eq!(a, b);
        // wrong input shape rejected
        let bad = ProjectionModel::new(8, 32, -0.4, 0.0).unwrap();
        assert!(sr_discriminator_forward(&RangeImage::empty(bad), &mut params).is_err());
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = DiscriminatorParams::init(8, 16, &mut rng);
        let x = rand_input(&mut rng, 2, 8, 16);
        // objective: sum of logits
        let loss_of = |p: &DiscriminatorParams| -> f64 {
            let mut p = p.clone();
            let (l, _) = disc_forward(x.clone(), &mut p, true).unwrap();
            l.data().iter().sum()
        };
        let mut work = params.clone();
        let (l, tape) = disc_forward(x.clone(), &mut work, true).unwrap();
        let dl = Tensor::filled(l.shape(), 1.0);
        let mut grads = DiscriminatorParams::zeros_like(8, 16);
        disc_backward(&tape, &params, &dl, &mut grads);

        // h small enough that the deep rectifier ladder does not cross kinks
        // inside the difference interval
        let noise_floor = 1e-6 * (1.0 + loss_of(&params).abs());
        let h = 1e-6;
        let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let gts = grads.tensors();
        for (ti, name) in names.iter().enumerate() {
            for &i in probe_indices(gts[ti].numel(), 2).iter() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].data_mut()[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].data_mut()[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = gts[ti].data()[i];
                if fd.abs().max(an.abs()) < noise_floor {
                    continue;
                }
                let err = rel_err(fd, an, noise_floor);
                assert!(err < 1e-4, "{name}[{i}]: fd {fd} vs {an} (rel {err})");
            }
        }
    }

    #[test]
    fn sr_checkpoint_roundtrip() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = SRParams {
            generator: GeneratorParams::init(&cfg, &mut rng),
            discriminator: Some(DiscriminatorParams::init(8, 16, &mut rng)),
        };
        let ckpt = params.to_checkpoint(&cfg);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        let (restored, cfg2) = SRParams::from_checkpoint(&back).unwrap();
        assert_eq!(cfg, cfg2);
        assert!(restored.discriminator.is_some());
        for (a, b) in params
            .generator
            .tensors()
            .iter()
            .zip(restored.generator.tensors().iter())
        {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((x - y).abs() <= x.abs().max(1.0) * 1e-6);
            }
        }
    }
}
