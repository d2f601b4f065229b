//! Seeded, deterministic training loop for the metric network, plus the
//! accuracy evaluations recorded along the way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Category, MetricArchConfig};
use super::forward::{extract_features, head_forward, score_scene};
use super::loss::{metric_loss_sample, LossParts, SceneSample};
use super::params::MetricParams;
use crate::datagen::augment_syn;
use crate::diff::ops::Mode;
use crate::diff::{adam_update, LrSchedule, OptimizerState};
use crate::error::{Error, Result};

/// Training hyperparameters; everything that affects the run is recorded
/// here so (config, seed) fully determines the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient-reversal factor.
    pub lambda: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluation cadence in steps; a final evaluation always runs.
    pub eval_every: u64,
    pub schedule: LrSchedule,
    /// Range-noise augmentation applied to Syn samples at presentation time.
    pub syn_augment_sigma: Option<(f64, f64)>,
    /// Cap on scenes per dataset during cadence evaluations (the final
    /// evaluation always uses the full validation set).
    pub eval_max_per_dataset: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.3,
            steps: 2000,
            batch_size: 6,
            seed: 0,
            eval_every: 500,
            schedule: LrSchedule::default(),
            syn_augment_sigma: Some((0.002, 0.02)),
            eval_max_per_dataset: Some(12),
        }
    }
}

/// One evaluation snapshot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub classifier_acc: f64,
    /// Per-category adversary accuracy (Real, Syn, Misc).
    pub adv_acc: [f64; 3],
    pub adv_weighted_acc: f64,
    pub loss: f64,
}

/// Accuracy curves of one run plus the chance levels they compare against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub lambda: f64,
    /// Per-category chance level `1 / U_A`.
    pub chance: [f64; 3],
    /// Chance of the weighted adversary accuracy under the validation mix.
    pub chance_weighted: f64,
    pub rows: Vec<HistoryRow>,
}

impl TrainingHistory {
    pub fn final_row(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}

/// Per-query accuracies of classifier and adversaries on a sample set.
#[derive(Debug, Clone, Copy)]
pub struct Accuracies {
    pub classifier: f64,
    pub adversary: [f64; 3],
    pub adversary_weighted: f64,
    pub chance_weighted: f64,
}

fn derived_seed(seed: u64, step: u64, slot: u64, tag: u64) -> u64 {
    let mut x = seed ^ (step.wrapping_mul(0x9e3779b97f4a7c15)) ^ (slot << 17) ^ (tag << 48);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x ^ (x >> 31)
}

/// Per-query argmax accuracies against category and dataset labels.
pub fn evaluate_accuracies(
    samples: &[SceneSample],
    params: &MetricParams,
    config: &MetricArchConfig,
) -> Result<Accuracies> {
    if samples.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    struct SceneEval {
        category: usize,
        clf_acc: f64,
        adv_acc: f64,
    }
    let evals: Vec<Result<SceneEval>> = samples
        .par_iter()
        .map(|s| {
            let fm = extract_features(&s.cloud, params, config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (clf_logits, _) =
                head_forward(&fm.z, &params.classifier, config, Mode::Eval, &mut rng)?;
            let ci = s.category.index();
            let (adv_logits, _) = head_forward(
                &fm.z,
                &params.adversaries[ci],
                config,
                Mode::Eval,
                &mut rng,
            )?;
            let q2 = config.q2;
            let argmax_hits = |logits: &crate::diff::Tensor, width: usize, target: usize| {
                let mut hits = 0usize;
                for r in 0..q2 {
                    let row = &logits.data()[r * width..(r + 1) * width];
                    let mut best = 0;
                    for c in 1..width {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    if best == target {
                        hits += 1;
                    }
                }
                hits as f64 / q2 as f64
            };
            Ok(SceneEval {
                category: ci,
                clf_acc: argmax_hits(&clf_logits, config.u_c, ci),
                adv_acc: argmax_hits(&adv_logits, config.u_a[ci], s.dataset_id),
            })
        })
        .collect();

    let mut clf_sum = 0.0;
    let mut adv_sum = [0.0; 3];
    let mut cat_count = [0usize; 3];
    let mut total = 0usize;
    for e in evals {
        let e = e?;
        clf_sum += e.clf_acc;
        adv_sum[e.category] += e.adv_acc;
        cat_count[e.category] += 1;
        total += 1;
    }
    let adversary: [f64; 3] = std::array::from_fn(|c| {
        if cat_count[c] > 0 {
            adv_sum[c] / cat_count[c] as f64
        } else {
            f64::NAN
        }
    });
    let mut weighted = 0.0;
    let mut chance_weighted = 0.0;
    for c in 0..3 {
        let share = cat_count[c] as f64 / total as f64;
        if cat_count[c] > 0 {
            weighted += share * adversary[c];
            chance_weighted += share / config.u_a[c] as f64;
        }
    }
    Ok(Accuracies {
        classifier: clf_sum / total as f64,
        adversary,
        adversary_weighted: weighted,
        chance_weighted,
    })
}

/// Fraction of scenes whose aggregated score argmax matches the category.
pub fn scene_argmax_accuracy(
    samples: &[SceneSample],
    params: &MetricParams,
    config: &MetricArchConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let hits: Vec<Result<bool>> = samples
        .par_iter()
        .map(|s| Ok(score_scene(&s.cloud, params, config)?.argmax_category() == s.category))
        .collect();
    let mut ok = 0usize;
    for h in hits {
        if h? {
            ok += 1;
        }
    }
    Ok(ok as f64 / samples.len() as f64)
}

fn eval_subset<'a>(
    val: &'a [SceneSample],
    cap: Option<usize>,
) -> Vec<&'a SceneSample> {
    match cap {
        None => val.iter().collect(),
        Some(cap) => {
            let mut taken: std::collections::HashMap<(usize, usize), usize> =
                std::collections::HashMap::new();
            val.iter()
                .filter(|s| {
                    let k = (s.category.index(), s.dataset_id);
                    let c = taken.entry(k).or_insert(0);
                    *c += 1;
                    *c <= cap
                })
                .collect()
        }
    }
}

/// Seeded training loop: stratified batches, per-sample parallel backward
/// with fixed-order reduction, Adam updates, and cadence evaluations on the
/// validation set.
pub fn train_metric(
    train: &[SceneSample],
    val: &[SceneSample],
    config: &MetricArchConfig,
    tc: &TrainConfig,
) -> Result<(MetricParams, TrainingHistory)> {
    config.validate()?;
    if tc.batch_size == 0 || tc.steps == 0 {
        return Err(Error::invalid("steps and batch size must be positive"));
    }
    let mut by_category: [Vec<usize>; 3] = Default::default();
    for (i, s) in train.iter().enumerate() {
        if s.dataset_id >= config.u_a[s.category.index()] {
            return Err(Error::invalid(format!(
                "train sample {i}: dataset id {} exceeds adversary width",
                s.dataset_id
            )));
        }
        by_category[s.category.index()].push(i);
    }
    if by_category.iter().any(|v| v.is_empty()) {
        return Err(Error::invalid("every category needs at least one train sample"));
    }

    let mut params = MetricParams::init(config, tc.seed);
    let schedule = tc.schedule.clone();
    let mut opt = OptimizerState::new(&params.tensors(), schedule);
    let mut history = TrainingHistory {
        lambda: tc.lambda,
        chance: std::array::from_fn(|c| 1.0 / config.u_a[c] as f64),
        chance_weighted: 0.0,
        rows: Vec::new(),
    };

    let mut batch_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    batch_rng.set_stream(0xba7c4);

    for step in 0..tc.steps {
        // stratified batch: categories rotate so each slot triple covers all
        // three, giving equal expected counts per category
        let mut batch: Vec<(SceneSample, u64)> = Vec::with_capacity(tc.batch_size);
        for slot in 0..tc.batch_size {
            let cat = (step as usize + slot) % 3;
            let pool = &by_category[cat];
            let idx = pool[batch_rng.gen_range(0..pool.len())];
            let base = &train[idx];
            let dropout_seed = derived_seed(tc.seed, step, slot as u64, 1);
            let sample = if base.category == Category::Syn {
                if let Some(range) = tc.syn_augment_sigma {
                    let aug_seed = derived_seed(tc.seed, step, slot as u64, 2);
                    SceneSample::new(
                        augment_syn(&base.cloud, range, aug_seed),
                        base.category,
                        base.dataset_id,
                    )
                } else {
                    base.clone()
                }
            } else {
                base.clone()
            };
            batch.push((sample, dropout_seed));
        }

        let results: Vec<Result<(LossParts, MetricParams)>> = batch
            .par_iter()
            .map(|(sample, dropout_seed)| {
                let mut grads = MetricParams::zeros_like(config);
                let parts = metric_loss_sample(
                    sample,
                    &params,
                    config,
                    tc.lambda,
                    Mode::Train,
                    *dropout_seed,
                    &mut grads,
                )?;
                Ok((parts, grads))
            })
            .collect();

        let mut grads = MetricParams::zeros_like(config);
        let mut parts = LossParts::default();
        for r in results {
            let (p, g) = r.map_err(|e| match e {
                Error::NonFinite { context, .. } => Error::NonFinite { context, step },
                other => other,
            })?;
            grads.accumulate(&g);
            parts.classifier += p.classifier;
            for c in 0..3 {
                parts.adversary[c] += p.adversary[c];
            }
        }
        let inv = 1.0 / tc.batch_size as f64;
        grads.scale(inv);
        parts.classifier *= inv;
        for c in parts.adversary.iter_mut() {
            *c *= inv;
        }
        if !parts.total().is_finite() {
            return Err(Error::NonFinite {
                context: "training loss".into(),
                step,
            });
        }

        {
            let grad_refs: Vec<&crate::diff::Tensor> = grads.tensors();
            let mut param_refs = params.tensors_mut();
            adam_update(&mut param_refs, &grad_refs, &mut opt).map_err(|e| match e {
                Error::NonFinite { context, .. } => Error::NonFinite { context, step },
                other => other,
            })?;
        }

        let is_last = step + 1 == tc.steps;
        let at_cadence = tc.eval_every > 0 && (step + 1) % tc.eval_every == 0;
        if (at_cadence || is_last) && !val.is_empty() {
            let subset: Vec<SceneSample> = if is_last {
                val.to_vec()
            } else {
                eval_subset(val, tc.eval_max_per_dataset)
                    .into_iter()
                    .cloned()
                    .collect()
            };
            let acc = evaluate_accuracies(&subset, &params, config)?;
            history.chance_weighted = acc.chance_weighted;
            history.rows.push(HistoryRow {
                step: step + 1,
                classifier_acc: acc.classifier,
                adv_acc: acc.adversary,
                adv_weighted_acc: acc.adversary_weighted,
                loss: parts.total(),
            });
        }
    }
    Ok((params, history))
}
