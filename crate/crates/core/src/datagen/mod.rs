//! Synthetic scene generators standing in for the metric's dataset
//! categories: ray-traced GeoSet scenes (Syn), the Misc 1-4 randomized
//! families, noise augmentation, pseudo-real scenes with structured realism
//! cues (Real), and the dataset registry with on-disk splits.

pub mod geoset;
pub mod misc;
pub mod pseudoreal;
pub mod registry;

pub use geoset::{augment_syn, gen_geoset, geoset_range_image, GeoSetConfig};
pub use misc::{gen_misc, gen_misc_image, MiscConfig};
pub use pseudoreal::{gen_pseudoreal, Enrichments, PseudoRealConfig};
pub use registry::{
    load_split, materialize_registry, read_manifest, standard_desk_registry, DatasetRegistry,
    DatasetSpec, GeneratorKind, ManifestEntry, SplitCounts,
};
