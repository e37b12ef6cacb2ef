//! On-disk formats: simulated datasets and network checkpoints.

mod bytes;
pub mod checkpoint;
pub mod dataset;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use dataset::{generate_dataset, read_dataset, DatasetHeader, DatasetReader, SampleRecord};
