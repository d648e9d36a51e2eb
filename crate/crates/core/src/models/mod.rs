//! Model zoo: four distributed families (AE, seq-AE, CRL, CWM) sharing one
//! convolutional encoder, and the slotted CSWM baseline. A `WorldModel`
//! bundles the parameter store with the pieces its family needs.

mod decoder;
mod dynamics;
mod encoder;
pub mod nn;
mod preset;
mod slot_decoder;

pub use decoder::ConvDecoder;
pub use dynamics::{AttentionDynamics, GnnTransition, MlpDynamics};
pub use encoder::{ConvEncoder, SlotEncoder};
pub use preset::{
    DynamicsConfig, DynamicsKind, EncoderConfig, Family, ModelPreset, SlottedConfig,
};
pub use slot_decoder::{SlotDecode, SlotDecoder, SlotDecoderConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::numerics::{checkpoint, Graph, NodeId, ParamStore};

enum EncoderKind {
    Distributed(ConvEncoder),
    Slotted(SlotEncoder),
}

enum DynamicsHead {
    Mlp(MlpDynamics),
    Attention(AttentionDynamics),
    Gnn(GnnTransition),
}

/// One instantiated model: encoder, optional decoder, optional dynamics.
pub struct WorldModel {
    preset: ModelPreset,
    store: ParamStore,
    encoder: EncoderKind,
    decoder: Option<ConvDecoder>,
    dynamics: Option<DynamicsHead>,
}

impl WorldModel {
    pub fn init(preset: &ModelPreset, resolution: usize) -> Result<Self> {
        preset.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);

        let encoder = if preset.family.is_slotted() {
            let slotted = preset.slotted.as_ref().expect("validated");
            EncoderKind::Slotted(SlotEncoder::init(
                &mut store,
                &mut rng,
                "encoder",
                &preset.encoder,
                resolution,
                slotted,
            )?)
        } else {
            EncoderKind::Distributed(ConvEncoder::init(
                &mut store,
                &mut rng,
                "encoder",
                &preset.encoder,
                resolution,
                preset.latent_dim,
            )?)
        };

        let decoder = if preset.family.has_decoder() {
            Some(ConvDecoder::init(
                &mut store,
                &mut rng,
                "decoder",
                &preset.encoder,
                resolution,
                preset.latent_dim,
            )?)
        } else {
            None
        };

        let dynamics = match preset.family {
            Family::Ae | Family::Crl => None,
            Family::SeqAe | Family::Cwm => {
                let cfg = preset.dynamics.as_ref().expect("validated");
                Some(match cfg.kind {
                    DynamicsKind::Mlp => DynamicsHead::Mlp(MlpDynamics::init(
                        &mut store,
                        &mut rng,
                        "dynamics",
                        preset.latent_dim,
                        cfg,
                    )?),
                    DynamicsKind::CausalAttention => {
                        DynamicsHead::Attention(AttentionDynamics::init(
                            &mut store,
                            &mut rng,
                            "dynamics",
                            preset.latent_dim,
                            cfg,
                        )?)
                    }
                })
            }
            Family::Cswm => {
                let slotted = preset.slotted.as_ref().expect("validated");
                Some(DynamicsHead::Gnn(GnnTransition::init(
                    &mut store,
                    &mut rng,
                    "dynamics",
                    slotted.slots,
                    slotted.slot_dim,
                    slotted.hidden,
                    slotted.action_dim,
                )?))
            }
        };

        Ok(WorldModel { preset: preset.clone(), store, encoder, decoder, dynamics })
    }

    pub fn preset(&self) -> &ModelPreset {
        &self.preset
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Latent shape per example: [D] for distributed, [K, S] for slotted.
    pub fn latent_shape(&self) -> Vec<usize> {
        self.preset.latent_shape()
    }

    /// x [B, H, W, C] -> z ([B, D] or [B, K, S]).
    pub fn encode(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match &self.encoder {
            EncoderKind::Distributed(e) => e.build(g, &self.store, x),
            EncoderKind::Slotted(e) => e.build(g, &self.store, x),
        }
    }

    /// z [B, D] -> reconstruction [B, H, W, C]. AE families only.
    pub fn decode(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        match &self.decoder {
            Some(d) => d.build(g, &self.store, z),
            None => Err(CoreError::invalid(
                "WorldModel::decode",
                format!("family {} has no decoder", self.preset.family.id()),
            )),
        }
    }

    /// One-step latent prediction. For the attention head the single state is
    /// treated as a length-1 history.
    pub fn predict_next(
        &self,
        g: &mut Graph,
        z: NodeId,
        action: Option<NodeId>,
    ) -> Result<NodeId> {
        match &self.dynamics {
            Some(DynamicsHead::Mlp(d)) => d.build(g, &self.store, z, action),
            Some(DynamicsHead::Gnn(d)) => d.build(g, &self.store, z, action),
            Some(DynamicsHead::Attention(d)) => {
                let shape = g.value(z).shape().to_vec();
                if shape.len() != 2 {
                    return Err(CoreError::invalid(
                        "WorldModel::predict_next",
                        format!("expected [batch, latent], got {shape:?}"),
                    ));
                }
                let (b, dim) = (shape[0], shape[1]);
                let z1 = g.reshape(z, &[b, 1, dim])?;
                let a1 = match action {
                    Some(a) => {
                        let ashape = g.value(a).shape().to_vec();
                        Some(g.reshape(a, &[b, 1, ashape[1]])?)
                    }
                    None => None,
                };
                let out = d.build_sequence(g, &self.store, z1, a1)?;
                g.reshape(out, &[b, dim])
            }
            None => Err(CoreError::invalid(
                "WorldModel::predict_next",
                format!("family {} has no dynamics head", self.preset.family.id()),
            )),
        }
    }

    /// History prediction for the attention head: z [B, T, D] (T at most the
    /// context length) -> [B, T, D], where position t predicts z_{t+1}.
    pub fn predict_sequence(
        &self,
        g: &mut Graph,
        z: NodeId,
        actions: Option<NodeId>,
    ) -> Result<NodeId> {
        match &self.dynamics {
            Some(DynamicsHead::Attention(d)) => d.build_sequence(g, &self.store, z, actions),
            _ => Err(CoreError::invalid(
                "WorldModel::predict_sequence",
                "sequence prediction requires the causal-attention head",
            )),
        }
    }

    pub fn has_dynamics(&self) -> bool {
        self.dynamics.is_some()
    }

    pub fn context(&self) -> usize {
        match &self.dynamics {
            Some(DynamicsHead::Attention(d)) => d.context(),
            _ => 1,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    /// Rebuilds the model from its preset, then overwrites every parameter
    /// from the checkpoint.
    pub fn load(preset: &ModelPreset, resolution: usize, path: &Path) -> Result<Self> {
        let mut model = WorldModel::init(preset, resolution)?;
        checkpoint::load(&mut model.store, path)?;
        Ok(model)
    }
}
