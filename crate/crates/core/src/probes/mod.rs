//! Evaluation machinery: separability, open-loop ranking, transition
//! similarity, RSA alignment, the random-init baseline, and the
//! frozen-encoder slot-decoder probe.

mod delta;
mod linear;
mod ranking;
mod rsa;
mod separability;
mod similarity;
mod slot_probe;

pub use delta::{delta_vectors, encode_frames, ProbeDataset};
pub use linear::{
    accuracy, fit_l1_logistic, LinearProbe, Standardizer, MAX_ITERS, PENALTY_GRID,
};
pub use ranking::{ranking_accuracy, ranking_from_latents, RankingReport};
pub use rsa::{rsa_alignment, rsa_from_latents, MIN_RSA_FRAMES};
pub use separability::{
    random_init_baseline, separability, separability_from_dataset, MIN_PAIRS_PER_LABEL,
};
pub use similarity::{
    similarity_from_deltas, transition_similarity, write_similarity, SimilarityReport,
};
pub use slot_probe::{slot_decoder_probe, SlotProbeConfig, SlotProbeReport, SlotSample};

use serde::{Deserialize, Serialize};

/// One metrics record; (family, dataset, size, seed, metric) is unique
/// within a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub family: String,
    pub dataset: String,
    pub size: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub extra: String,
}

impl MetricsRow {
    /// Sort/uniqueness key.
    pub fn key(&self) -> (String, String, usize, u64, String) {
        (
            self.family.clone(),
            self.dataset.clone(),
            self.size,
            self.seed,
            self.metric.clone(),
        )
    }
}
