//! Synthetic lesion images, parametric domain shift and NIfTI-1 I/O.

mod manifest;
mod nifti;
mod shift;
mod synth;

pub use manifest::{config_hash, DatasetManifest, ManifestEntry, Split, MANIFEST_SCHEMA_VERSION};
pub use nifti::{nifti_read, nifti_write, Endianness, NiftiDatatype, NiftiMeta, NIFTI_HEADER_SIZE, NIFTI_VOX_OFFSET};
pub use shift::{apply_domain_shift, ShiftParams};
pub use synth::{gaussian_blur, synth_generate, synth_sample, SynthConfig};
