//! Dataset registry: named generators with category labels, on-disk
//! materialization with disjoint splits, and a line-per-record manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::geoset::{gen_geoset, GeoSetConfig};
use super::misc::{gen_misc, MiscConfig};
use super::pseudoreal::{gen_pseudoreal, PseudoRealConfig};
use crate::error::{Error, Result};
use crate::geom::io::{read_kitti_bin, write_kitti_bin};
use crate::geom::ProjectionModel;
use crate::metric::{Category, SceneSample};

/// A scene generator with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GeneratorKind {
    GeoSet(GeoSetConfig),
    Misc { kind: u8, config: MiscConfig },
    PseudoReal(PseudoRealConfig),
}

impl GeneratorKind {
    pub fn generate(&self, seed: u64, dataset_id: usize) -> Result<SceneSample> {
        match self {
            GeneratorKind::GeoSet(cfg) => Ok(gen_geoset(cfg, seed, dataset_id)),
            GeneratorKind::Misc { kind, config } => gen_misc(*kind, config, seed, dataset_id),
            GeneratorKind::PseudoReal(cfg) => Ok(gen_pseudoreal(cfg, seed, dataset_id)),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            GeneratorKind::GeoSet(_) => Category::Syn,
            GeneratorKind::Misc { .. } => Category::Misc,
            GeneratorKind::PseudoReal(_) => Category::Real,
        }
    }
}

/// One dataset of a registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub category: Category,
    /// Index within the dataset's category (the adversary target).
    pub dataset_id: usize,
    pub generator: GeneratorKind,
}

/// The datasets backing one experiment, with the master seed that makes
/// materialization reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRegistry {
    pub datasets: Vec<DatasetSpec>,
    pub base_seed: u64,
}

impl DatasetRegistry {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.datasets.iter().enumerate() {
            for b in &self.datasets[i + 1..] {
                if a.name == b.name {
                    return Err(Error::invalid(format!("duplicate dataset name '{}'", a.name)));
                }
                if a.category == b.category && a.dataset_id == b.dataset_id {
                    return Err(Error::invalid(format!(
                        "duplicate dataset id {} within category {}",
                        a.dataset_id,
                        a.category.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Training registries need at least one dataset per category.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        for cat in Category::ALL {
            if !self.datasets.iter().any(|d| d.category == cat) {
                return Err(Error::invalid(format!(
                    "training registry has no {} dataset",
                    cat.name()
                )));
            }
        }
        Ok(())
    }

    /// Number of datasets per category, in Real/Syn/Misc order; these are
    /// the adversary head widths the registry induces.
    pub fn datasets_per_category(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for d in &self.datasets {
            counts[d.category.index()] += 1;
        }
        counts
    }
}

/// Standard desk-scale training registry: two pseudo-real sub-regimes,
/// GeoSet, and Misc 1-3. Misc 4 and pseudo-real regime 2 stay held out for
/// transfer evaluation.
pub fn standard_desk_registry(projection: ProjectionModel, base_seed: u64) -> DatasetRegistry {
    let geos = GeoSetConfig::desk(projection);
    let misc = MiscConfig::desk(projection);
    DatasetRegistry {
        datasets: vec![
            DatasetSpec {
                name: "pseudoreal-a".into(),
                category: Category::Real,
                dataset_id: 0,
                generator: GeneratorKind::PseudoReal(PseudoRealConfig::regime(geos.clone(), 0)),
            },
            DatasetSpec {
                name: "pseudoreal-b".into(),
                category: Category::Real,
                dataset_id: 1,
                generator: GeneratorKind::PseudoReal(PseudoRealConfig::regime(geos.clone(), 1)),
            },
            DatasetSpec {
                name: "geoset".into(),
                category: Category::Syn,
                dataset_id: 0,
                generator: GeneratorKind::GeoSet(geos),
            },
            DatasetSpec {
                name: "misc1".into(),
                category: Category::Misc,
                dataset_id: 0,
                generator: GeneratorKind::Misc { kind: 1, config: misc.clone() },
            },
            DatasetSpec {
                name: "misc2".into(),
                category: Category::Misc,
                dataset_id: 1,
                generator: GeneratorKind::Misc { kind: 2, config: misc.clone() },
            },
            DatasetSpec {
                name: "misc3".into(),
                category: Category::Misc,
                dataset_id: 2,
                generator: GeneratorKind::Misc { kind: 3, config: misc },
            },
        ],
        base_seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn splits(&self) -> [(&'static str, usize); 3] {
        [("train", self.train), ("val", self.val), ("test", self.test)]
    }
}

/// One manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub relative_path: PathBuf,
    pub category: Category,
    pub dataset_id: usize,
    pub split: String,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-sample seed derived from the registry seed, dataset, split, and index.
pub fn sample_seed(base_seed: u64, dataset_idx: usize, split: &str, index: usize) -> u64 {
    let split_tag = match split {
        "train" => 1u64,
        "val" => 2,
        "test" => 3,
        _ => 4,
    };
    splitmix64(
        base_seed
            ^ splitmix64((dataset_idx as u64) << 40 | split_tag << 32 | index as u64),
    )
}

/// Writes every sample of every dataset and split to disk plus the manifest.
///
/// Sample files are KITTI-style binaries under `<out>/<split>/`; splits are
/// disjoint by construction of the per-sample seeds and paths.
pub fn materialize_registry(
    registry: &DatasetRegistry,
    counts: SplitCounts,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if counts.total() == 0 {
        return Err(Error::invalid("split counts must not all be zero"));
    }
    registry.validate()?;
    let mut entries = Vec::new();
    for (split, n) in counts.splits() {
        if n == 0 {
            continue;
        }
        let split_dir = out_dir.join(split);
        fs::create_dir_all(&split_dir)?;
        for (di, spec) in registry.datasets.iter().enumerate() {
            for i in 0..n {
                let seed = sample_seed(registry.base_seed, di, split, i);
                let sample = spec.generator.generate(seed, spec.dataset_id)?;
                let rel = PathBuf::from(split).join(format!("{}_{i:05}.bin", spec.name));
                write_kitti_bin(&out_dir.join(&rel), &sample.cloud)?;
                entries.push(ManifestEntry {
                    relative_path: rel,
                    category: spec.category,
                    dataset_id: spec.dataset_id,
                    split: split.to_string(),
                    seed,
                });
            }
        }
    }
    write_manifest(out_dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = fs::File::create(dir.join(MANIFEST_NAME))?;
    for e in entries {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.relative_path.display(),
            e.category.name(),
            e.dataset_id,
            e.split,
            e.seed
        )?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(dir.join(MANIFEST_NAME))?;
    let mut entries = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("manifest line {} malformed", ln + 1)));
        }
        entries.push(ManifestEntry {
            relative_path: PathBuf::from(fields[0]),
            category: Category::parse(fields[1])?,
            dataset_id: fields[2]
                .parse()
                .map_err(|_| Error::Format("bad dataset id".into()))?,
            split: fields[3].to_string(),
            seed: fields[4]
                .parse()
                .map_err(|_| Error::Format("bad seed".into()))?,
        });
    }
    Ok(entries)
}

/// Loads every sample of one split back into memory.
pub fn load_split(dir: &Path, entries: &[ManifestEntry], split: &str) -> Result<Vec<SceneSample>> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let cloud = read_kitti_bin(&dir.join(&e.relative_path))?;
            Ok(SceneSample::new(cloud, e.category, e.dataset_id))
        })
        .collect()
}
