//! Dataset container, file formats, toy corpora and the bundled embeddings.

mod dataset;
mod embeddings;
mod io;
mod toy;

pub use dataset::{LabeledDataset, Split};
pub use embeddings::{EmbeddingTable, BUNDLED_EMBEDDINGS};
pub use io::{
    load_dataset, read_csv, read_csv_from, read_dataset_from, save_dataset, write_csv_to,
    write_dataset_to, DATASET_MAGIC, DATASET_VERSION,
};
pub use toy::{apportion, make_toy_world, ToyWorld, ToyWorldSpec};

/// Names of the ten toy semantics, in vocabulary order.
pub const DEFAULT_VOCABULARY: [&str; 10] = [
    "zebra",
    "bee",
    "sorrel",
    "tabby",
    "airliner",
    "sports_car",
    "ostrich",
    "tailed_frog",
    "ocean_liner",
    "moving_van",
];
