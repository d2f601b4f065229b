//! Command implementations tying the pipeline together.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use lidar_realism::baselines::{chamfer, image_errors, BaselineReport, BaselineRow};
use lidar_realism::datagen::{
    load_split, materialize_registry, read_manifest, standard_desk_registry, DatasetRegistry,
    SplitCounts,
};
use lidar_realism::diff::{Checkpoint, LrSchedule};
use lidar_realism::geom::io::{read_kitti_bin, write_kitti_bin, write_range_image};
use lidar_realism::geom::{backproject, project_cylindrical, PointCloud};
use lidar_realism::metric::export::{
    write_history_csv, write_per_query_csv, write_scores_csv, write_scores_ply,
};
use lidar_realism::metric::{
    export_features, score_scene, train_metric, FeatureExportMode, MetricArchConfig,
    MetricParams, TrainConfig,
};
use lidar_realism::upsample::{
    make_lr, sr_generator_forward, train_upsampler, upsample_bilinear, upsample_nearest, SRParams,
    SrTrainMode, UpsampleConfig,
};

use crate::config::*;

/// Writes a file through a temp-file rename so partial output never lands
/// under the final name.
pub fn atomic_write(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move output into place at {}", path.display()))?;
    Ok(())
}

fn write_resolved_config<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<()> {
    fs::create_dir_all(out)?;
    let snapshot = serde_json::json!({
        "command": command,
        "config": config,
    });
    atomic_write(&out.join("resolved_config.json"), |p| {
        fs::write(p, serde_json::to_string_pretty(&snapshot)?)?;
        Ok(())
    })
}

fn sorted_bin_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .bin clouds under {}", dir.display());
    }
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

fn build_registry(cfg: &GenerateConfig) -> Result<DatasetRegistry> {
    let model = cfg.projection.to_model()?;
    let mut registry = standard_desk_registry(model, cfg.seed);
    match cfg.preset.as_str() {
        "desk" => {}
        // one dataset per category, for quick smoke runs
        "minimal" => {
            registry.datasets.retain(|d| {
                matches!(d.name.as_str(), "pseudoreal-a" | "geoset" | "misc1")
            });
        }
        other => bail!("unknown registry preset '{other}' (expected desk or minimal)"),
    }
    Ok(registry)
}

pub fn cmd_generate(cfg: GenerateConfig, out: &Path) -> Result<()> {
    let registry = build_registry(&cfg)?;
    registry.validate_for_training()?;
    let counts = SplitCounts {
        train: cfg.train,
        val: cfg.val,
        test: cfg.test,
    };
    fs::create_dir_all(out)?;
    let entries = materialize_registry(&registry, counts, out)?;
    write_resolved_config(out, "generate", &serde_json::json!({
        "generate": cfg,
        "registry": registry,
    }))?;
    println!(
        "generated {} samples over {} datasets at {}",
        entries.len(),
        registry.datasets.len(),
        out.display()
    );
    Ok(())
}

/// Architecture preset with adversary widths derived from the dataset.
fn resolve_arch(arch: &str, dataset_dir: &Path) -> Result<MetricArchConfig> {
    let mut config = match arch {
        "desk" => MetricArchConfig::desk(),
        "paper" => MetricArchConfig::paper(),
        other => bail!("unknown architecture preset '{other}' (expected desk or paper)"),
    };
    let entries = read_manifest(dataset_dir)?;
    let mut u_a = [0usize; 3];
    for e in entries.iter().filter(|e| e.split == "train") {
        let c = e.category.index();
        u_a[c] = u_a[c].max(e.dataset_id + 1);
    }
    if u_a.iter().any(|&u| u == 0) {
        bail!("train split must cover all three categories");
    }
    config.u_a = u_a;
    Ok(config)
}

fn train_config_of(cfg: &TrainMetricConfig) -> TrainConfig {
    let augment = if cfg.augment_sigma == [0.0, 0.0] {
        None
    } else {
        Some((cfg.augment_sigma[0], cfg.augment_sigma[1]))
    };
    TrainConfig {
        lambda: cfg.lambda,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
        schedule: LrSchedule::default(),
        syn_augment_sigma: augment,
        eval_max_per_dataset: Some(12),
    }
}

fn run_one_training(
    cfg: &TrainMetricConfig,
    lambda: f64,
    out: &Path,
    tag: &str,
) -> Result<(MetricParams, MetricArchConfig)> {
    let arch = resolve_arch(&cfg.arch, &cfg.dataset_dir)?;
    let entries = read_manifest(&cfg.dataset_dir)?;
    let train = load_split(&cfg.dataset_dir, &entries, "train")?;
    let val = load_split(&cfg.dataset_dir, &entries, &cfg.val_split)?;
    let tc = TrainConfig {
        lambda,
        ..train_config_of(cfg)
    };
    let (params, history) = train_metric(&train, &val, &arch, &tc)?;

    fs::create_dir_all(out)?;
    let ckpt = params.to_checkpoint(&arch);
    atomic_write(&out.join(format!("checkpoint{tag}.lrm")), |p| {
        ckpt.save(p)?;
        Ok(())
    })?;
    atomic_write(&out.join(format!("history{tag}.csv")), |p| {
        write_history_csv(p, &history)?;
        Ok(())
    })?;
    if let Some(last) = history.final_row() {
        println!(
            "lambda {lambda}: classifier {:.3}, adversary {:.3} (chance {:.3}), digest {:#018x}",
            last.classifier_acc,
            last.adv_weighted_acc,
            history.chance_weighted,
            ckpt.digest()
        );
    }
    Ok((params, arch))
}

pub fn cmd_train_metric(cfg: TrainMetricConfig, out: &Path) -> Result<()> {
    write_resolved_config(out, "train-metric", &cfg)?;
    run_one_training(&cfg, cfg.lambda, out, "")?;
    Ok(())
}

pub fn cmd_sweep_lambda(cfg: SweepLambdaConfig, out: &Path) -> Result<()> {
    if cfg.lambdas.is_empty() {
        bail!("sweep needs at least one lambda");
    }
    write_resolved_config(out, "sweep-lambda", &cfg)?;
    let mut summary = String::from(
        "lambda,classifier_acc,adv_real_acc,adv_syn_acc,adv_misc_acc,adv_weighted_acc\n",
    );
    for &lambda in &cfg.lambdas {
        let tag = format!("_lambda{lambda}");
        run_one_training(&cfg.base, lambda, out, &tag)?;
        // re-read the final history row for the summary
        let text = fs::read_to_string(out.join(format!("history{tag}.csv")))?;
        if let Some(last) = text.lines().filter(|l| !l.starts_with('#')).last() {
            if !last.starts_with("step,") {
                let fields: Vec<&str> = last.split(',').collect();
                summary.push_str(&format!(
                    "{lambda},{},{},{},{},{}\n",
                    fields[1], fields[2], fields[3], fields[4], fields[5]
                ));
            }
        }
    }
    atomic_write(&out.join("sweep_summary.csv"), |p| {
        fs::write(p, &summary)?;
        Ok(())
    })?;
    Ok(())
}

fn load_metric_checkpoint(
    path: &Path,
    expect_digest: Option<&str>,
) -> Result<(MetricParams, MetricArchConfig)> {
    let ckpt = Checkpoint::load(path)?;
    if let Some(expect) = expect_digest {
        let expect = u64::from_str_radix(expect.trim_start_matches("0x"), 16)
            .map_err(|_| anyhow!("expect_digest must be a hex number"))?;
        if ckpt.digest() != expect {
            return Err(lidar_realism::Error::DigestMismatch {
                found: ckpt.digest(),
                expected: expect,
            }
            .into());
        }
    }
    Ok(MetricParams::from_checkpoint(&ckpt)?)
}

/// Scenes to score: either a bare directory of clouds or a materialized
/// dataset (scored split by split).
fn scorable_scenes(inputs: &Path) -> Result<Vec<(String, PointCloud)>> {
    let mut scenes = Vec::new();
    if inputs.join(lidar_realism::datagen::registry::MANIFEST_NAME).exists() {
        for e in read_manifest(inputs)? {
            let cloud = read_kitti_bin(&inputs.join(&e.relative_path))?;
            scenes.push((stem_of(&e.relative_path), cloud));
        }
    } else {
        for f in sorted_bin_files(inputs)? {
            scenes.push((stem_of(&f), read_kitti_bin(&f)?));
        }
    }
    Ok(scenes)
}

pub fn cmd_score(cfg: ScoreConfig, out: &Path) -> Result<()> {
    let (params, arch) = load_metric_checkpoint(&cfg.checkpoint, cfg.expect_digest.as_deref())?;
    let scenes = scorable_scenes(&cfg.inputs)?;
    write_resolved_config(out, "score", &cfg)?;

    let mut rows = Vec::new();
    let mut detailed = Vec::new();
    for (id, cloud) in &scenes {
        let scores = score_scene(cloud, &params, &arch)
            .with_context(|| format!("scoring scene {id}"))?;
        rows.push((id.clone(), scores.scene));
        if cfg.ply {
            let ply = out.join(format!("{id}_scores.ply"));
            atomic_write(&ply, |p| {
                write_scores_ply(p, &scores)?;
                Ok(())
            })?;
        }
        if cfg.per_query {
            detailed.push((id.clone(), scores));
        }
    }
    atomic_write(&out.join("scores.csv"), |p| {
        write_scores_csv(p, &rows)?;
        Ok(())
    })?;
    if cfg.per_query {
        atomic_write(&out.join("scores_per_query.csv"), |p| {
            write_per_query_csv(p, &detailed)?;
            Ok(())
        })?;
    }
    println!("scored {} scenes into {}", rows.len(), out.display());
    Ok(())
}

pub fn cmd_export_features(cfg: ExportFeaturesConfig, out: &Path) -> Result<()> {
    let (params, arch) = load_metric_checkpoint(&cfg.checkpoint, None)?;
    let entries = read_manifest(&cfg.dataset_dir)?;
    let samples = load_split(&cfg.dataset_dir, &entries, &cfg.split)?;
    if samples.is_empty() {
        bail!("split '{}' is empty", cfg.split);
    }
    let mode = match cfg.mode.as_str() {
        "per-query" => FeatureExportMode::PerQuery,
        "scene-mean" => FeatureExportMode::SceneMean,
        other => bail!("unknown feature mode '{other}'"),
    };
    write_resolved_config(out, "export-features", &cfg)?;
    atomic_write(&out.join("features.csv"), |p| {
        export_features(&samples, &params, &arch, mode, p)?;
        Ok(())
    })?;
    Ok(())
}

pub fn cmd_eval_baselines(cfg: EvalBaselinesConfig, out: &Path) -> Result<()> {
    let preds = sorted_bin_files(&cfg.pred_dir)?;
    let targets = sorted_bin_files(&cfg.target_dir)?;
    if preds.len() != targets.len() {
        bail!(
            "misaligned scene lists: {} predictions vs {} targets",
            preds.len(),
            targets.len()
        );
    }
    let model = cfg.projection.to_model()?;
    let method = cfg.method.clone().unwrap_or_else(|| "pred".into());
    write_resolved_config(out, "eval-baselines", &cfg)?;

    let mut report = BaselineReport::new();
    for (p, t) in preds.iter().zip(targets.iter()) {
        let pred = read_kitti_bin(p)?;
        let target = read_kitti_bin(t)?;
        let cd = chamfer(&pred, &target)?;
        let pred_img = project_cylindrical(&pred, &model)?;
        let target_img = project_cylindrical(&target, &model)?;
        let (mae, mse) = image_errors(&pred_img, &target_img)?;
        report.push(BaselineRow {
            scene_id: stem_of(p),
            method: method.clone(),
            cd_m: cd,
            mae_m: mae,
            mse_m2: mse,
        });
    }
    atomic_write(&out.join("baselines.csv"), |p| {
        report.write_csv(p)?;
        Ok(())
    })?;
    println!("evaluated {} scene pairs", preds.len());
    Ok(())
}

pub fn cmd_upsample(cfg: UpsampleCmdConfig, out: &Path) -> Result<()> {
    let model = cfg.projection.to_model()?;
    let learned = matches!(cfg.mode.as_str(), "l1" | "l2" | "gan");
    let mut sr: Option<(SRParams, UpsampleConfig)> = None;
    if learned {
        let Some(ckpt_path) = &cfg.checkpoint else {
            bail!("mode '{}' requires a checkpoint", cfg.mode);
        };
        let ckpt = Checkpoint::load(ckpt_path)?;
        let (params, sr_cfg) = SRParams::from_checkpoint(&ckpt)?;
        if sr_cfg.f_up != cfg.f_up {
            bail!(
                "checkpoint was trained for f_up={}, requested {}",
                sr_cfg.f_up,
                cfg.f_up
            );
        }
        sr = Some((params, sr_cfg));
    } else if !matches!(cfg.mode.as_str(), "nearest" | "bilinear") {
        bail!("unknown up-sampling mode '{}'", cfg.mode);
    }

    write_resolved_config(out, "upsample", &cfg)?;
    let files = sorted_bin_files(&cfg.inputs)?;
    for f in &files {
        let cloud = read_kitti_bin(f)?;
        let hr = project_cylindrical(&cloud, &model)?;
        let lr = make_lr(&hr, cfg.f_up)?;
        let up = match cfg.mode.as_str() {
            "nearest" => upsample_nearest(&lr, cfg.f_up)?,
            "bilinear" => upsample_bilinear(&lr, cfg.f_up)?,
            _ => {
                let (params, sr_cfg) = sr.as_mut().expect("learned mode checked above");
                sr_generator_forward(&lr, &mut params.generator, sr_cfg)?
            }
        };
        let stem = stem_of(f);
        atomic_write(&out.join(format!("{stem}.lrri")), |p| {
            write_range_image(p, &up)?;
            Ok(())
        })?;
        atomic_write(&out.join(format!("{stem}.bin")), |p| {
            write_kitti_bin(p, &backproject(&up))?;
            Ok(())
        })?;
    }
    println!("up-sampled {} scenes ({})", files.len(), cfg.mode);
    Ok(())
}

pub fn cmd_train_upsampler(cfg: TrainUpsamplerConfig, out: &Path) -> Result<()> {
    let mode = SrTrainMode::parse(&cfg.mode)?;
    let model = cfg.projection.to_model()?;
    let sr_cfg = UpsampleConfig {
        f_up: cfg.f_up,
        residual_blocks: cfg.residual_blocks,
        alpha: 1,
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    sr_cfg.validate()?;
    if cfg.scenes == 0 {
        bail!("at least one training scene required");
    }

    // piecewise-smooth GeoSet scenes over the configured grid
    let geos = lidar_realism::datagen::GeoSetConfig::desk(model);
    let pairs: Vec<_> = (0..cfg.scenes)
        .map(|i| {
            let hr = lidar_realism::datagen::geoset_range_image(&geos, cfg.seed ^ (i as u64) << 20);
            let lr = make_lr(&hr, cfg.f_up)?;
            Ok((lr, hr))
        })
        .collect::<Result<Vec<_>>>()?;

    write_resolved_config(out, "train-upsampler", &cfg)?;
    let (params, history) = train_upsampler(&pairs, &sr_cfg, mode, &LrSchedule::default())?;
    let ckpt = params.to_checkpoint(&sr_cfg);
    atomic_write(&out.join("sr_checkpoint.lrm"), |p| {
        ckpt.save(p)?;
        Ok(())
    })?;
    atomic_write(&out.join("sr_history.csv"), |p| {
        let mut text = String::from("step,generator_loss,discriminator_loss\n");
        for r in &history {
            text.push_str(&format!("{},{},{}\n", r.step, r.generator_loss, r.discriminator_loss));
        }
        fs::write(p, text)?;
        Ok(())
    })?;
    if let Some(last) = history.last() {
        println!(
            "trained {} steps, final generator loss {:.5}",
            last.step, last.generator_loss
        );
    }
    Ok(())
}

