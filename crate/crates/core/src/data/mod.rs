//! Corpus ingestion, vocabularies, embeddings, splits and batching.

pub mod batch;
pub mod corpus;
pub mod embeddings;
pub mod folds;
pub mod synthetic;
pub mod vocab;

pub use batch::{batch_iter, pad_example, pad_to, Batch, MIN_PADDED_LEN};
pub use corpus::{load_parallel_corpus, write_corpus, Dataset, MultiViewExample, RawCorpus, RawExample};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use folds::{make_folds, DatasetSplit};
pub use synthetic::{gen_synthetic, SyntheticConfig};
pub use vocab::{Vocabulary, PAD, UNK};
