//! Score, history, and feature exports: CSV reports and colored PLY clouds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::config::{Category, MetricArchConfig};
use super::forward::{extract_features, MetricScores};
use super::loss::SceneSample;
use super::params::MetricParams;
use super::train::TrainingHistory;
use crate::error::{Error, Result};
use crate::geom::io::write_ply;

/// Category base colors for score visualization (Real green, Syn blue,
/// Misc red).
pub const CATEGORY_COLORS: [[u8; 3]; 3] = [[60, 180, 90], [65, 105, 225], [220, 60, 50]];

/// Soft interpolation of the category colors by the probability vector.
pub fn score_color(probs: [f64; 3]) -> [u8; 3] {
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let mut v = 0.0;
        for (cat, color) in CATEGORY_COLORS.iter().enumerate() {
            v += probs[cat] * color[ch] as f64;
        }
        out[ch] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Writes per-query scores as a colored PLY over the query points.
pub fn write_scores_ply(path: &Path, scores: &MetricScores) -> Result<()> {
    let colors: Vec<[u8; 3]> = (0..scores.query_points.len())
        .map(|r| {
            let row = &scores.per_query.data()[r * 3..(r + 1) * 3];
            score_color([row[0], row[1], row[2]])
        })
        .collect();
    write_ply(path, &scores.query_points, &colors)
}

/// Scene-score CSV: `scene_id, s_real, s_syn, s_misc`.
pub fn write_scores_csv(path: &Path, rows: &[(String, [f64; 3])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "scene_id,s_real,s_syn,s_misc")?;
    for (id, s) in rows {
        writeln!(w, "{id},{},{},{}", s[0], s[1], s[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-query score CSV: `scene_id, qx, qy, qz, p_real, p_syn, p_misc`.
pub fn write_per_query_csv(path: &Path, rows: &[(String, MetricScores)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "scene_id,qx,qy,qz,p_real,p_syn,p_misc")?;
    for (id, scores) in rows {
        for (r, q) in scores.query_points.iter().enumerate() {
            let p = &scores.per_query.data()[r * 3..(r + 1) * 3];
            writeln!(w, "{id},{},{},{},{},{},{}", q[0], q[1], q[2], p[0], p[1], p[2])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Accuracy-history CSV with the gradient-reversal factor recorded in the
/// leading metadata comment.
pub fn write_history_csv(path: &Path, history: &TrainingHistory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# lambda={}", history.lambda)?;
    writeln!(
        w,
        "# chance_real={} chance_syn={} chance_misc={} chance_weighted={}",
        history.chance[0], history.chance[1], history.chance[2], history.chance_weighted
    )?;
    writeln!(
        w,
        "step,classifier_acc,adv_real_acc,adv_syn_acc,adv_misc_acc,adv_weighted_acc"
    )?;
    for r in &history.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.classifier_acc, r.adv_acc[0], r.adv_acc[1], r.adv_acc[2], r.adv_weighted_acc
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Feature-export layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureExportMode {
    /// One row per query point (`samples x Q2` rows).
    PerQuery,
    /// One row per scene: mean of the per-query features.
    SceneMean,
}

/// Writes latent features with category/dataset label columns.
///
/// Row width is the feature width plus the two label columns.
pub fn export_features(
    samples: &[SceneSample],
    params: &MetricParams,
    config: &MetricArchConfig,
    mode: FeatureExportMode,
    path: &Path,
) -> Result<()> {
    let uf = config.feature_width();
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..uf {
        write!(w, "z{i},")?;
    }
    writeln!(w, "category,dataset_id")?;
    for s in samples {
        let fm = extract_features(&s.cloud, params, config)?;
        match mode {
            FeatureExportMode::PerQuery => {
                for r in 0..config.q2 {
                    for v in &fm.z.data()[r * uf..(r + 1) * uf] {
                        write!(w, "{v},")?;
                    }
                    writeln!(w, "{},{}", s.category.name(), s.dataset_id)?;
                }
            }
            FeatureExportMode::SceneMean => {
                for c in 0..uf {
                    let mean: f64 =
                        (0..config.q2).map(|r| fm.z.data()[r * uf + c]).sum::<f64>()
                            / config.q2 as f64;
                    write!(w, "{mean},")?;
                }
                writeln!(w, "{},{}", s.category.name(), s.dataset_id)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a feature CSV back into `(features, category, dataset_id)` rows.
pub fn read_features_csv(path: &Path) -> Result<Vec<(Vec<f64>, Category, usize)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Format(format!("feature row {} malformed", i + 1)));
        }
        let nf = fields.len() - 2;
        let mut z = Vec::with_capacity(nf);
        for f in &fields[..nf] {
            z.push(
                f.parse::<f64>()
                    .map_err(|_| Error::Format("bad feature value".into()))?,
            );
        }
        let category = Category::parse(fields[nf])?;
        let dataset_id = fields[nf + 1]
            .parse()
            .map_err(|_| Error::Format("bad dataset id".into()))?;
        rows.push((z, category, dataset_id));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PointCloud;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_samples() -> Vec<SceneSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..3)
            .map(|i| {
                let cloud = PointCloud::new(
                    (0..48)
                        .map(|_| {
                            [
                                rng.gen::<f64>() * 20.0,
                                rng.gen::<f64>() * 20.0,
                                rng.gen::<f64>() * 4.0,
                            ]
                        })
                        .collect(),
                )
                .unwrap();
                SceneSample::new(cloud, Category::ALL[i % 3], i % 2)
            })
            .collect()
    }

    #[test]
    fn feature_export_round_trips_labels_and_shapes() {
        let cfg = MetricArchConfig::mini();
        let params = MetricParams::init(&cfg, 1);
        let samples = toy_samples();
        let dir = tempfile::tempdir().unwrap();

        let per_query = dir.path().join("features_pq.csv");
        export_features(&samples, &params, &cfg, FeatureExportMode::PerQuery, &per_query).unwrap();
        let rows = read_features_csv(&per_query).unwrap();
        // row count = samples x Q2, row width = U_F plus two label columns
        assert_eq!(rows.len(), samples.len() * cfg.q2);
        assert!(rows.iter().all(|(z, _, _)| z.len() == cfg.feature_width()));
        for (i, s) in samples.iter().enumerate() {
            for r in 0..cfg.q2 {
                let (_, cat, ds) = &rows[i * cfg.q2 + r];
                assert_eq!(*cat, s.category);
                assert_eq!(*ds, s.dataset_id);
            }
        }

        let scene_mean = dir.path().join("features_sm.csv");
        export_features(&samples, &params, &cfg, FeatureExportMode::SceneMean, &scene_mean)
            .unwrap();
        let rows = read_features_csv(&scene_mean).unwrap();
        assert_eq!(rows.len(), samples.len());
    }

    #[test]
    fn score_color_is_soft_interpolation() {
        assert_eq!(score_color([1.0, 0.0, 0.0]), CATEGORY_COLORS[0]);
        assert_eq!(score_color([0.0, 0.0, 1.0]), CATEGORY_COLORS[2]);
        let mixed = score_color([0.5, 0.5, 0.0]);
        for ch in 0..3 {
            let want =
                (0.5 * CATEGORY_COLORS[0][ch] as f64 + 0.5 * CATEGORY_COLORS[1][ch] as f64).round();
            assert_eq!(mixed[ch] as f64, want);
        }
    }

    #[test]
    fn ply_export_has_one_vertex_per_query() {
        use crate::geom::io::read_ply;
        use crate::metric::forward::score_scene;
        let cfg = MetricArchConfig::mini();
        let params = MetricParams::init(&cfg, 2);
        let samples = toy_samples();
        let scores = score_scene(&samples[0].cloud, &params, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.ply");
        write_scores_ply(&path, &scores).unwrap();
        let (points, colors) = read_ply(&path).unwrap();
        assert_eq!(points.len(), cfg.q2);
        assert_eq!(colors.len(), cfg.q2);
    }

    #[test]
    fn history_csv_records_lambda() {
        use crate::metric::train::{HistoryRow, TrainingHistory};
        let history = TrainingHistory {
            lambda: 0.3,
            chance: [0.5, 1.0, 1.0 / 3.0],
            chance_weighted: 0.61,
            rows: vec![HistoryRow {
                step: 10,
                classifier_acc: 0.9,
                adv_acc: [0.5, 1.0, 0.4],
                adv_weighted_acc: 0.63,
                loss: 1.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# lambda=0.3\n"));
        assert!(text.contains("step,classifier_acc,adv_real_acc,adv_syn_acc,adv_misc_acc,adv_weighted_acc"));
        assert!(text.lines().count() >= 4);
    }
}
