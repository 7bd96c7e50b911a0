//! Dataset files, label color coding, synthetic data and checkpoints.

mod checkpoint;
mod codec;
mod manifest;
mod synth;

pub use checkpoint::{digest, Checkpoint, CheckpointMeta, StoredParam, MAGIC, VERSION};
pub use codec::{
    decode_av_label, read_label, read_mask, read_probability, read_rgb, write_label, write_mask, write_probability,
    write_rgb, PALETTE_TOLERANCE,
};
pub use manifest::{
    load_manifest, DatasetKind, DatasetManifest, ManifestEntry, IMAGE_DIR, LABEL_DIR, MANIFEST_FILE, MASK_DIR,
};
pub use synth::{generate_synthetic, synthesize, SynthConfig, SynthImage};
