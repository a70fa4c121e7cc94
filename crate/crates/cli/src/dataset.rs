//! Synthetic dataset on disk: NIfTI images and masks plus a JSON manifest.

use std::path::{Path, PathBuf};

use entseg::data::{
    apply_domain_shift, config_hash, nifti_read, nifti_write, synth_sample, DatasetManifest, ManifestEntry,
    NiftiDatatype, NiftiMeta, ShiftParams, Split, SynthConfig, MANIFEST_SCHEMA_VERSION,
};
use entseg::metrics::Domain;
use entseg::rng::derive_seed;
use entseg::volume::{zscore_normalize, BinaryMask, Volume};
use serde::Serialize;

use crate::config::{ExperimentConfig, SplitSizes};
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Labels mixed into the root seed for each consumer of randomness.
pub mod seed_label {
    pub const SYNTH: u64 = 1;
    pub const SHIFT: u64 = 2;
    pub const TRAIN: u64 = 3;
}

/// Generator settings with the seed derived from the experiment's root seed.
pub fn synth_config(cfg: &ExperimentConfig) -> SynthConfig {
    SynthConfig {
        seed: derive_seed(cfg.seed, seed_label::SYNTH),
        ..cfg.synth
    }
}

/// Noise seed for the OOD twin of generator sample `index`.
pub fn shift_seed(root: u64, index: u64) -> u64 {
    derive_seed(derive_seed(root, seed_label::SHIFT), index)
}

#[derive(Serialize)]
struct Recipe<'a> {
    seed: u64,
    synth: &'a SynthConfig,
    splits: &'a SplitSizes,
    shift: &'a ShiftParams,
}

/// Hash identifying the generated data; recorded in the manifest and every report.
pub fn dataset_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(config_hash(&Recipe {
        seed: cfg.seed,
        synth: &synth_config(cfg),
        splits: &cfg.splits,
        shift: &cfg.shift,
    })?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn write_pair(dir: &Path, entry: &ManifestEntry, image: &Volume<f64>, mask: &BinaryMask) -> Result<()> {
    let mut meta = NiftiMeta::for_geometry(image.geometry());
    meta.datatype = NiftiDatatype::F64;
    write_file(&dir.join(&entry.image), &nifti_write(image, &meta)?)?;
    meta.datatype = NiftiDatatype::U8;
    write_file(&dir.join(&entry.mask), &nifti_write(&mask.to_volume::<f64>(), &meta)?)?;
    Ok(())
}

fn entry(split: Split, k: usize, index: u64) -> ManifestEntry {
    let id = format!("{}-{k:03}", split.name());
    ManifestEntry {
        image: format!("{}/{id}_image.nii", split.name()),
        mask: format!("{}/{id}_mask.nii", split.name()),
        id,
        split,
        domain: split.domain(),
        index,
    }
}

/// Generates the ID train/val/test splits and the shifted OOD twins of the test
/// scans under `dir`.
pub fn write_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetManifest> {
    let synth = synth_config(cfg);
    let s = cfg.splits;
    let mut samples = Vec::new();
    let mut index = 0u64;
    for (split, n) in [(Split::Train, s.train), (Split::Val, s.val), (Split::Test, s.test)] {
        for k in 0..n {
            let (image, mask) = synth_sample::<f64>(&synth, index)?;
            let e = entry(split, k, index);
            write_pair(dir, &e, &image, &mask)?;
            samples.push(e);
            if split == Split::Test {
                let shifted = apply_domain_shift(&image, &cfg.shift, shift_seed(cfg.seed, index))?;
                let e = entry(Split::OodTest, k, index);
                write_pair(dir, &e, &shifted, &mask)?;
                samples.push(e);
            }
            index += 1;
        }
    }
    // Keep splits contiguous in the manifest.
    samples.sort_by_key(|e| e.split);
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: cfg.seed,
        config_hash: dataset_hash(cfg)?,
        samples,
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path).map_err(|e| match e {
        entseg::Error::Io(source) => CliError::Io { path, source },
        e => e.into(),
    })?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(CliError::io(&path))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Parse { path, source })
}

/// One labelled scan as read from disk.
#[derive(Debug, Clone)]
pub struct Scan {
    pub id: String,
    pub domain: Domain,
    pub image: Volume<f64>,
    pub mask: BinaryMask,
}

impl Scan {
    /// Model input: the image standardized over the whole grid.
    pub fn input(&self) -> Result<Volume<f64>> {
        Ok(zscore_normalize(&self.image, None)?)
    }
}

pub fn read_volume(path: &Path) -> Result<Volume<f64>> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(nifti_read::<f64>(&bytes)?.0)
}

pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Scan>> {
    manifest
        .split(split)
        .map(|e| {
            let image = read_volume(&dir.join(&e.image))?;
            let mask = read_volume(&dir.join(&e.mask))?.to_mask();
            Ok(Scan {
                id: e.id.clone(),
                domain: e.domain,
                image,
                mask,
            })
        })
        .collect()
}

/// `(normalized input, ground truth)` pairs for training.
pub fn training_pairs(scans: &[Scan]) -> Result<Vec<(Volume<f64>, BinaryMask)>> {
    scans.iter().map(|s| Ok((s.input()?, s.mask.clone()))).collect()
}

pub fn image_path(dir: &Path, e: &ManifestEntry) -> PathBuf {
    dir.join(&e.image)
}
