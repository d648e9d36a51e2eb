//! Training objectives: the four losses, augmentation, negative sampling,
//! and the epoch loop.

mod augment;
mod batch;
mod loss;
mod train;

pub use augment::{augment, shift_frame, SHIFT_PAD};
pub use batch::{
    assemble_steps, assemble_windows, derangement, Sampler, StepBatch, StepParts, WindowBatch,
};
pub use loss::{
    loss_ae_dynamic, loss_ae_static, loss_contrastive_dynamic, loss_contrastive_static,
};
pub use train::{train, RunMetadata, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::Family;

/// Which loss a training run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveFamily {
    AeStatic,
    AeDynamic,
    ContrastiveStatic,
    ContrastiveDynamic,
}

impl ObjectiveFamily {
    /// The objective each model family trains under.
    pub fn for_model(family: Family) -> ObjectiveFamily {
        match family {
            Family::Ae => ObjectiveFamily::AeStatic,
            Family::SeqAe => ObjectiveFamily::AeDynamic,
            Family::Crl => ObjectiveFamily::ContrastiveStatic,
            Family::Cwm | Family::Cswm => ObjectiveFamily::ContrastiveDynamic,
        }
    }

    pub fn is_contrastive(self) -> bool {
        matches!(self, ObjectiveFamily::ContrastiveStatic | ObjectiveFamily::ContrastiveDynamic)
    }

    /// Which extra pieces a step batch must carry for this objective.
    pub fn step_parts(self) -> StepParts {
        match self {
            ObjectiveFamily::AeStatic => {
                StepParts { next: false, augmented: false, negatives: false }
            }
            ObjectiveFamily::ContrastiveStatic => {
                StepParts { next: false, augmented: true, negatives: true }
            }
            ObjectiveFamily::ContrastiveDynamic => {
                StepParts { next: true, augmented: false, negatives: true }
            }
            // Sequence training assembles windows, not step batches.
            ObjectiveFamily::AeDynamic => {
                StepParts { next: true, augmented: false, negatives: false }
            }
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub family: ObjectiveFamily,
    pub margin: f32,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
}

impl ObjectiveConfig {
    pub fn default_for(family: ObjectiveFamily) -> Self {
        ObjectiveConfig {
            family,
            margin: 1.0,
            batch_size: 512,
            learning_rate: 1e-3,
            epochs: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::invalid("ObjectiveConfig", "zero batch size"));
        }
        if self.family.is_contrastive() {
            if self.margin <= 0.0 {
                return Err(CoreError::invalid(
                    "ObjectiveConfig",
                    "contrastive margin must be positive",
                ));
            }
            if self.batch_size < 2 {
                return Err(CoreError::invalid(
                    "ObjectiveConfig",
                    "contrastive batches need at least two elements",
                ));
            }
        }
        Ok(())
    }
}
