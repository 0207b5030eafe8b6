//! Synthetic corpora and the file formats shared by training, prediction
//! and evaluation.

pub mod annotations;
pub mod error;
pub mod features_io;
pub mod predictions;
pub mod synth;
pub mod vocab;

pub use annotations::{load_annotations, save_annotations, AnnotatedEvent, AnnotationRecord};
pub use error::{DataError, Result};
pub use features_io::{read_features, write_features, FeatureSidecar};
pub use predictions::{load_predictions, load_proposals, save_predictions, PredictedEvent, PredictionFile};
pub use synth::{generate, generate_corpus, Corpus, CorpusPaths, SynthConfig};
pub use vocab::Vocabulary;
