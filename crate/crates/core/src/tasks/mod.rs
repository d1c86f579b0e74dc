//! Downstream applications: noise simulation and detection, mutation
//! generation, and evaluation metrics.

pub mod levenshtein;
pub mod metrics;
pub mod mutation;
pub mod noise;
pub mod reference;

pub use levenshtein::levenshtein;
pub use metrics::{classification_metrics, generation_metrics, ClassificationReport, GenerationReport};
pub use mutation::{generate_mutation, write_mutation_tsv, MutationCandidate, MutationResult, MUTATION_BEAMS};
pub use noise::{build_noise_dataset, detect_noise, inject_noise, inject_noise_counted, NoiseCounts, NoiseDatasetConfig, NoiseRecord, NoiseSpec};
pub use reference::{sample_read, simulate_reference, simulate_reference_with, Read, ReadSampler, ReferenceSim, MOTIF};
