//! Reconstruction-error baselines: Chamfer distance on unordered sets,
//! MAE/MSE on projected range images, and the paired Coverage/MMD
//! simplification.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, RangeImage};
use crate::spatial::knn;

/// Symmetric mean nearest-neighbor distance between two unordered sets, in
/// meters. Exact nearest neighbors via the spatial module.
pub fn chamfer(pred: &PointCloud, target: &PointCloud) -> Result<f64> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let one_sided = |from: &PointCloud, to: &PointCloud| -> Result<f64> {
        let rows = knn(to, from.points(), 1)?;
        let mut sum = 0.0;
        for (p, row) in from.points().iter().zip(rows.iter()) {
            let q = to.points()[row[0]];
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            sum += d;
        }
        Ok(sum / from.len() as f64)
    };
    Ok(one_sided(pred, target)? + one_sided(target, pred)?)
}

/// MAE and MSE over the jointly valid cells of two equally shaped images.
pub fn image_errors(pred: &RangeImage, target: &RangeImage) -> Result<(f64, f64)> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::shape("image error inputs must share a shape"));
    }
    let mut count = 0usize;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (i, (&dp, &dt)) in pred
        .depth_data()
        .iter()
        .zip(target.depth_data().iter())
        .enumerate()
    {
        if pred.valid_data()[i] && target.valid_data()[i] {
            let d = dp - dt;
            abs_sum += d.abs();
            sq_sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no jointly valid cells"));
    }
    Ok((abs_sum / count as f64, sq_sum / count as f64))
}

/// Coverage/MMD under paired translation: the best match of each prediction
/// is its own target, so coverage is 1.0 and MMD reduces to the mean Chamfer
/// distance. Exists so reports can state why Cov/MMD columns are omitted.
pub fn paired_cov_mmd(pred_set: &[PointCloud], target_set: &[PointCloud]) -> Result<(f64, f64)> {
    if pred_set.len() != target_set.len() {
        return Err(Error::shape("paired sets must have equal lengths"));
    }
    if pred_set.is_empty() {
        return Err(Error::invalid("empty paired sets"));
    }
    let mut sum = 0.0;
    for (p, t) in pred_set.iter().zip(target_set.iter()) {
        sum += chamfer(p, t)?;
    }
    Ok((1.0, sum / pred_set.len() as f64))
}

/// Per-scene baseline rows plus aggregate statistics.
#[derive(Debug, Clone)]
pub struct BaselineReport {
    /// `(scene_id, method, cd_m, mae_m, mse_m2)` rows.
    pub rows: Vec<BaselineRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub scene_id: String,
    pub method: String,
    pub cd_m: f64,
    pub mae_m: f64,
    pub mse_m2: f64,
}

impl BaselineReport {
    pub fn new() -> Self {
        BaselineReport { rows: Vec::new() }
    }

    pub fn push(&mut self, row: BaselineRow) {
        self.rows.push(row);
    }

    /// Mean and standard deviation of each error column for one method.
    pub fn aggregate(&self, method: &str) -> Option<(BaselineRow, BaselineRow)> {
        let rows: Vec<&BaselineRow> = self.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&BaselineRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let m_cd = mean(&|r| r.cd_m);
        let m_mae = mean(&|r| r.mae_m);
        let m_mse = mean(&|r| r.mse_m2);
        let std = |f: &dyn Fn(&BaselineRow) -> f64, m: f64| {
            if rows.len() < 2 {
                0.0
            } else {
                (rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        };
        let mk = |tag: &str, cd: f64, mae: f64, mse: f64| BaselineRow {
            scene_id: tag.into(),
            method: method.into(),
            cd_m: cd,
            mae_m: mae,
            mse_m2: mse,
        };
        Some((
            mk("mean", m_cd, m_mae, m_mse),
            mk(
                "std",
                std(&|r| r.cd_m, m_cd),
                std(&|r| r.mae_m, m_mae),
                std(&|r| r.mse_m2, m_mse),
            ),
        ))
    }

    pub fn methods(&self) -> Vec<String> {
        let mut methods: Vec<String> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        methods
    }

    /// CSV with per-scene rows followed by mean/std aggregate rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "scene_id,method,cd_m,mae_m,mse_m2")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.scene_id, r.method, r.cd_m, r.mae_m, r.mse_m2)?;
        }
        for method in self.methods() {
            if let Some((mean, std)) = self.aggregate(&method) {
                for r in [mean, std] {
                    writeln!(w, "{},{},{},{},{}", r.scene_id, r.method, r.cd_m, r.mae_m, r.mse_m2)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Default for BaselineReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Parses a report CSV back; aggregate rows are kept as ordinary rows.
pub fn read_baseline_csv(path: &Path) -> Result<BaselineReport> {
    let text = std::fs::read_to_string(path)?;
    let mut report = BaselineReport::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("baseline row {} malformed", i + 1)));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format("bad baseline value".into()))
        };
        report.push(BaselineRow {
            scene_id: f[0].into(),
            method: f[1].into(),
            cd_m: parse(f[2])?,
            mae_m: parse(f[3])?,
            mse_m2: parse(f[4])?,
        });
    }
    Ok(report)
}
