//! Forward and backward passes of the metric network: two-level
//! set-abstraction feature extraction, classifier and adversary heads, and
//! scene scoring.

use rand_chacha::ChaCha8Rng;

use super::config::{Category, MetricArchConfig};
use super::params::{HeadParams, MetricParams};
use crate::diff::ops::{
    dense_backward, dense_forward, dense_leaky_forward, dropout_backward, dropout_forward,
    reduce_max_backward, reduce_max_neighbors, softmax_rows, DenseTape, DropoutTape, MaxTape, Mode,
};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::spatial::{farthest_point_sample, knn, knn_indexed};

/// Per-query latent features plus the query coordinates they localize.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    /// `Q2 x U_F` latent representation.
    pub z: Tensor,
    /// Second-level query coordinates, one per feature row.
    pub query_points: Vec<Point3>,
}

/// Per-query category probabilities plus the aggregated scene score.
#[derive(Debug, Clone)]
pub struct MetricScores {
    /// `Q2 x 3` probability rows (Real, Syn, Misc).
    pub per_query: Tensor,
    /// Column mean of `per_query`.
    pub scene: [f64; 3],
    pub query_points: Vec<Point3>,
}

impl MetricScores {
    pub fn argmax_category(&self) -> Category {
        let mut best = 0;
        for c in 1..3 {
            if self.scene[c] > self.scene[best] {
                best = c;
            }
        }
        Category::from_index(best).unwrap()
    }
}

/// Tape of one extractor evaluation, consumed by the backward pass.
pub struct ExtractTape {
    /// Neighbor indices of level 2 (into the level-1 query set).
    n2: Vec<Vec<usize>>,
    mlp1_tapes: Vec<DenseTape>,
    max1_tape: MaxTape,
    mlp2_tapes: Vec<DenseTape>,
    max2_tape: MaxTape,
}

/// Two-level set abstraction.
///
/// Level 1 samples `q1` queries by FPS over the cloud, gathers `k1` nearest
/// neighbors, normalizes them toward the query, applies the shared MLP, and
/// max-pools over the neighborhood. Level 2 repeats the scheme over the
/// level-1 query set, concatenating normalized coordinates with gathered
/// level-1 features.
pub fn extract_features_full(
    cloud: &PointCloud,
    params: &MetricParams,
    config: &MetricArchConfig,
) -> Result<(FeatureMatrix, ExtractTape)> {
    if cloud.len() < config.k1 {
        return Err(Error::TooFewPoints {
            have: cloud.len(),
            need: config.k1,
        });
    }
    let pts = cloud.points();

    // Level 1
    let fps1 = farthest_point_sample(cloud, config.q1)?;
    let q1_pts: Vec<Point3> = fps1.indices.iter().map(|&i| pts[i]).collect();
    let n1 = knn_indexed(cloud, &fps1, config.k1)?;
    let mut nb1 = Vec::with_capacity(config.q1 * config.k1 * 3);
    for (q, row) in n1.iter().enumerate() {
        for &i in row {
            for c in 0..3 {
                nb1.push(pts[i][c] - q1_pts[q][c]);
            }
        }
    }
    let mut x = Tensor::new_unchecked(&[config.q1 * config.k1, 3], nb1);
    let mut mlp1_tapes = Vec::with_capacity(params.mlp1.len());
    for layer in &params.mlp1 {
        let (y, tape) = dense_leaky_forward(x, &layer.w, &layer.b, config.leak)?;
        mlp1_tapes.push(tape);
        x = y;
    }
    let c1 = *config.mlp1.last().unwrap();
    let block1 = x.into_shape(&[config.q1, config.k1, c1]);
    let (f1, max1_tape) = reduce_max_neighbors(&block1);

    // Level 2 over the level-1 query coordinates
    let q1_cloud = PointCloud::new(q1_pts.clone())?;
    let fps2 = farthest_point_sample(&q1_cloud, config.q2)?;
    let q2_pts: Vec<Point3> = fps2.indices.iter().map(|&i| q1_pts[i]).collect();
    let n2 = knn(&q1_cloud, &q2_pts, config.k2)?;

    let cin2 = config.level2_in();
    let mut concat = Vec::with_capacity(config.q2 * config.k2 * cin2);
    {
        let f1d = f1.data();
        for (q, row) in n2.iter().enumerate() {
            for &i in row {
                for c in 0..3 {
                    concat.push(q1_pts[i][c] - q2_pts[q][c]);
                }
                concat.extend_from_slice(&f1d[i * c1..(i + 1) * c1]);
            }
        }
    }
    let mut x = Tensor::new_unchecked(&[config.q2 * config.k2, cin2], concat);
    let mut mlp2_tapes = Vec::with_capacity(params.mlp2.len());
    for layer in &params.mlp2 {
        let (y, tape) = dense_leaky_forward(x, &layer.w, &layer.b, config.leak)?;
        mlp2_tapes.push(tape);
        x = y;
    }
    let c2 = config.feature_width();
    let block2 = x.into_shape(&[config.q2, config.k2, c2]);
    let (z, max2_tape) = reduce_max_neighbors(&block2);

    Ok((
        FeatureMatrix {
            z,
            query_points: q2_pts,
        },
        ExtractTape {
            n2,
            mlp1_tapes,
            max1_tape,
            mlp2_tapes,
            max2_tape,
        },
    ))
}

/// Eval-mode feature extraction without tape retention.
pub fn extract_features(
    cloud: &PointCloud,
    params: &MetricParams,
    config: &MetricArchConfig,
) -> Result<FeatureMatrix> {
    extract_features_full(cloud, params, config).map(|(fm, _)| fm)
}

/// Backward through the extractor, accumulating into `grads`.
pub fn extract_backward(
    tape: &ExtractTape,
    params: &MetricParams,
    config: &MetricArchConfig,
    dz: &Tensor,
    grads: &mut MetricParams,
) {
    // Level-2 MLP chain
    let mut dy = reduce_max_backward(&tape.max2_tape, dz)
        .into_shape(&[config.q2 * config.k2, config.feature_width()]);
    for (idx, layer) in params.mlp2.iter().enumerate().rev() {
        let g = &mut grads.mlp2[idx];
        dy = dense_backward(&tape.mlp2_tapes[idx], &layer.w, &dy, &mut g.w, &mut g.b);
    }

    // Split the concat gradient: coordinate part has no trainable upstream,
    // feature part scatters back to the level-1 features.
    let c1 = *config.mlp1.last().unwrap();
    let cin2 = config.level2_in();
    let mut df1 = Tensor::zeros(&[config.q1, c1]);
    {
        let d = df1.data_mut();
        let dyd = dy.data();
        for (q, row) in tape.n2.iter().enumerate() {
            for (k, &i) in row.iter().enumerate() {
                let base = (q * config.k2 + k) * cin2 + 3;
                for c in 0..c1 {
                    d[i * c1 + c] += dyd[base + c];
                }
            }
        }
    }

    // Level-1 MLP chain
    let mut dy =
        reduce_max_backward(&tape.max1_tape, &df1).into_shape(&[config.q1 * config.k1, c1]);
    for (idx, layer) in params.mlp1.iter().enumerate().rev() {
        let g = &mut grads.mlp1[idx];
        dy = dense_backward(&tape.mlp1_tapes[idx], &layer.w, &dy, &mut g.w, &mut g.b);
    }
}

/// Tape of one head evaluation.
pub struct HeadTape {
    hidden: DenseTape,
    dropout: DropoutTape,
    out: DenseTape,
}

/// Head forward: dense + leaky, dropout, dense. Returns logits.
pub fn head_forward(
    z: &Tensor,
    head: &HeadParams,
    config: &MetricArchConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, HeadTape)> {
    let (h, hidden_tape) = dense_leaky_forward(z.clone(), &head.hidden.w, &head.hidden.b, config.leak)?;
    let (h, dropout_tape) = dropout_forward(h, config.dropout, mode, rng)?;
    let (logits, out_tape) = dense_forward(h, &head.out.w, &head.out.b)?;
    Ok((
        logits,
        HeadTape {
            hidden: hidden_tape,
            dropout: dropout_tape,
            out: out_tape,
        },
    ))
}

/// Backward through a head; returns the gradient with respect to `z` and
/// accumulates the head's own parameter gradients.
pub fn head_backward(
    tape: &HeadTape,
    head: &HeadParams,
    dlogits: &Tensor,
    grads: &mut HeadParams,
) -> Tensor {
    let dh = dense_backward(&tape.out, &head.out.w, dlogits, &mut grads.out.w, &mut grads.out.b);
    let dh = dropout_backward(&tape.dropout, &dh);
    dense_backward(
        &tape.hidden,
        &head.hidden.w,
        &dh,
        &mut grads.hidden.w,
        &mut grads.hidden.b,
    )
}

fn eval_rng() -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(0)
}

/// Per-query classification of a feature matrix; dropout active only when a
/// training RNG is supplied.
pub fn classify(
    fm: &FeatureMatrix,
    params: &MetricParams,
    config: &MetricArchConfig,
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<MetricScores> {
    let mut fallback = eval_rng();
    let (mode, rng) = match train_rng {
        Some(r) => (Mode::Train, r),
        None => (Mode::Eval, &mut fallback),
    };
    let (logits, _) = head_forward(&fm.z, &params.classifier, config, mode, rng)?;
    let per_query = softmax_rows(&logits);
    let q2 = per_query.shape()[0];
    let mut scene = [0.0; 3];
    for r in 0..q2 {
        for c in 0..3 {
            scene[c] += per_query.data()[r * 3 + c];
        }
    }
    for s in scene.iter_mut() {
        *s /= q2 as f64;
    }
    Ok(MetricScores {
        per_query,
        scene,
        query_points: fm.query_points.clone(),
    })
}

/// Eval-mode adversary prediction: per-query probabilities over the datasets
/// of the given category.
pub fn adversary_predict(
    fm: &FeatureMatrix,
    params: &MetricParams,
    config: &MetricArchConfig,
    category: Category,
) -> Result<Tensor> {
    let head = &params.adversaries[category.index()];
    let (logits, _) = head_forward(&fm.z, head, config, Mode::Eval, &mut eval_rng())?;
    Ok(softmax_rows(&logits))
}

/// Deterministic eval-mode scoring of a scene with trained parameters.
pub fn score_scene(
    cloud: &PointCloud,
    params: &MetricParams,
    config: &MetricArchConfig,
) -> Result<MetricScores> {
    let fm = extract_features(cloud, params, config)?;
    classify(&fm, params, config, None)
}
