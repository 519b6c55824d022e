//! On-disk formats: embedding stores, manifests, class splits, partition
//! assignments and checkpoints.

mod checkpoint;
mod embeddings;
mod manifest;
mod splits;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use embeddings::{read_embeddings, write_embeddings, EmbeddingStore, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestRecord, SourceSplit};
pub use splits::{
    assignment_to_text, parse_assignment, parse_split, read_assignment, read_split, split_to_text, write_assignment,
    write_split, ASSIGNMENT_HEADER, SPLITS_VERSION, SPLIT_HEADER,
};
