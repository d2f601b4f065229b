//! Trainable parameters of the metric network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::MetricArchConfig;
use crate::diff::checkpoint::Checkpoint;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Weight and bias of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearParams {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        LinearParams {
            w: Tensor::zeros(&[cin, cout]),
            b: Tensor::zeros(&[cout]),
        }
    }

    /// Kaiming-uniform init for leaky-rectified layers.
    pub fn init(cin: usize, cout: usize, leak: f64, rng: &mut ChaCha8Rng) -> Self {
        let gain = (2.0 / (1.0 + leak * leak)).sqrt();
        let bound = gain * (3.0 / cin as f64).sqrt();
        let w = Tensor::from_vec(
            &[cin, cout],
            (0..cin * cout)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        )
        .expect("init shape");
        LinearParams {
            w,
            b: Tensor::zeros(&[cout]),
        }
    }
}

/// One classification head: hidden layer plus output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: LinearParams,
    pub out: LinearParams,
}

impl HeadParams {
    fn zeros(cin: usize, hidden: usize, cout: usize) -> Self {
        HeadParams {
            hidden: LinearParams::zeros(cin, hidden),
            out: LinearParams::zeros(hidden, cout),
        }
    }

    fn init(cin: usize, hidden: usize, cout: usize, leak: f64, rng: &mut ChaCha8Rng) -> Self {
        HeadParams {
            hidden: LinearParams::init(cin, hidden, leak, rng),
            out: LinearParams::init(hidden, cout, leak, rng),
        }
    }
}

/// All trainable weights: extractor, classifier, and the three per-category
/// adversaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricParams {
    pub mlp1: Vec<LinearParams>,
    pub mlp2: Vec<LinearParams>,
    pub classifier: HeadParams,
    pub adversaries: [HeadParams; 3],
}

impl MetricParams {
    pub fn init(config: &MetricArchConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp1 = Vec::new();
        let mut cin = 3;
        for &w in &config.mlp1 {
            mlp1.push(LinearParams::init(cin, w, config.leak, &mut rng));
            cin = w;
        }
        let mut mlp2 = Vec::new();
        let mut cin = config.level2_in();
        for &w in &config.mlp2 {
            mlp2.push(LinearParams::init(cin, w, config.leak, &mut rng));
            cin = w;
        }
        let uf = config.feature_width();
        let classifier = HeadParams::init(uf, config.head_hidden, config.u_c, config.leak, &mut rng);
        let adversaries = [
            HeadParams::init(uf, config.head_hidden, config.u_a[0], config.leak, &mut rng),
            HeadParams::init(uf, config.head_hidden, config.u_a[1], config.leak, &mut rng),
            HeadParams::init(uf, config.head_hidden, config.u_a[2], config.leak, &mut rng),
        ];
        MetricParams {
            mlp1,
            mlp2,
            classifier,
            adversaries,
        }
    }

    /// Same structure with all tensors zeroed; used as a gradient buffer.
    pub fn zeros_like(config: &MetricArchConfig) -> Self {
        let mut mlp1 = Vec::new();
        let mut cin = 3;
        for &w in &config.mlp1 {
            mlp1.push(LinearParams::zeros(cin, w));
            cin = w;
        }
        let mut mlp2 = Vec::new();
        let mut cin = config.level2_in();
        for &w in &config.mlp2 {
            mlp2.push(LinearParams::zeros(cin, w));
            cin = w;
        }
        let uf = config.feature_width();
        MetricParams {
            mlp1,
            mlp2,
            classifier: HeadParams::zeros(uf, config.head_hidden, config.u_c),
            adversaries: [
                HeadParams::zeros(uf, config.head_hidden, config.u_a[0]),
                HeadParams::zeros(uf, config.head_hidden, config.u_a[1]),
                HeadParams::zeros(uf, config.head_hidden, config.u_a[2]),
            ],
        }
    }

    /// Named views of every tensor in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.mlp1.iter().enumerate() {
            out.push((format!("extractor.mlp1.{i}.w"), &l.w));
            out.push((format!("extractor.mlp1.{i}.b"), &l.b));
        }
        for (i, l) in self.mlp2.iter().enumerate() {
            out.push((format!("extractor.mlp2.{i}.w"), &l.w));
            out.push((format!("extractor.mlp2.{i}.b"), &l.b));
        }
        let heads = [
            ("classifier", &self.classifier),
            ("adversary.real", &self.adversaries[0]),
            ("adversary.syn", &self.adversaries[1]),
            ("adversary.misc", &self.adversaries[2]),
        ];
        for (name, h) in heads {
            out.push((format!("{name}.hidden.w"), &h.hidden.w));
            out.push((format!("{name}.hidden.b"), &h.hidden.b));
            out.push((format!("{name}.out.w"), &h.out.w));
            out.push((format!("{name}.out.b"), &h.out.b));
        }
        out
    }

    /// Mutable tensor list in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in self.mlp1.iter_mut().chain(self.mlp2.iter_mut()) {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        let heads = std::iter::once(&mut self.classifier).chain(self.adversaries.iter_mut());
        for h in heads {
            out.push(&mut h.hidden.w);
            out.push(&mut h.hidden.b);
            out.push(&mut h.out.w);
            out.push(&mut h.out.b);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Accumulate `other` (a gradient buffer) into `self`.
    pub fn accumulate(&mut self, other: &MetricParams) {
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

    /// Packs the parameters into a checkpoint with the config embedded in
    /// the metadata.
    pub fn to_checkpoint(&self, config: &MetricArchConfig) -> Checkpoint {
        let metadata = serde_json::json!({
            "kind": "metric",
            "config": config,
        })
        .to_string();
        Checkpoint {
            metadata,
            blocks: self
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// Restores parameters from a checkpoint, returning the embedded config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(MetricParams, MetricArchConfig)> {
        let meta: serde_json::Value = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
        if meta.get("kind").and_then(|v| v.as_str()) != Some("metric") {
            return Err(Error::Format("checkpoint is not a metric checkpoint".into()));
        }
        let config: MetricArchConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing config".into()))?,
        )
        .map_err(|e| Error::Format(format!("bad embedded config: {e}")))?;
        config.validate()?;
        let mut params = MetricParams::zeros_like(&config);
        {
            let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
            let tensors = params.tensors_mut();
            for (name, dst) in names.iter().zip(tensors) {
                let src = ckpt
                    .block(name)
                    .ok_or_else(|| Error::Format(format!("checkpoint missing block {name}")))?;
                if src.shape() != dst.shape() {
                    return Err(Error::Format(format!("block {name} has wrong shape")));
                }
                *dst = src.clone();
            }
        }
        Ok((params, config))
    }
}
