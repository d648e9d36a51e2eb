//! Model presets: the JSON description of a trainable model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::util::sha256_hex;
use crate::worlds::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Ae,
    SeqAe,
    Crl,
    Cwm,
    Cswm,
}

impl Family {
    pub fn id(&self) -> &'static str {
        match self {
            Family::Ae => "ae",
            Family::SeqAe => "seq-ae",
            Family::Crl => "crl",
            Family::Cwm => "cwm",
            Family::Cswm => "cswm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(Family::Ae),
            "seq-ae" => Ok(Family::SeqAe),
            "crl" => Ok(Family::Crl),
            "cwm" => Ok(Family::Cwm),
            "cswm" => Ok(Family::Cswm),
            other => Err(CoreError::invalid("Family::parse", format!("unknown family {other:?}"))),
        }
    }

    pub fn all() -> [Family; 5] {
        [Family::Ae, Family::SeqAe, Family::Crl, Family::Cwm, Family::Cswm]
    }

    pub fn has_decoder(&self) -> bool {
        matches!(self, Family::Ae | Family::SeqAe)
    }

    pub fn has_dynamics(&self) -> bool {
        matches!(self, Family::SeqAe | Family::Cwm | Family::Cswm)
    }

    pub fn is_slotted(&self) -> bool {
        matches!(self, Family::Cswm)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub kernel: usize,
    pub mlp_hidden: Vec<usize>,
}

impl EncoderConfig {
    pub fn default_distributed(in_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            conv_channels: vec![32, 32, 32, 32],
            conv_strides: vec![2, 1, 1, 1],
            kernel: 3,
            mlp_hidden: vec![512, 512],
        }
    }

    /// Spatial side length after each valid-convolution stage.
    pub fn stage_sizes(&self, resolution: usize) -> Result<Vec<usize>> {
        let mut sizes = Vec::with_capacity(self.conv_strides.len());
        let mut n = resolution;
        for &s in &self.conv_strides {
            if n < self.kernel {
                return Err(CoreError::invalid(
                    "EncoderConfig::stage_sizes",
                    format!("spatial size {n} below kernel {}", self.kernel),
                ));
            }
            n = (n - self.kernel) / s + 1;
            sizes.push(n);
        }
        Ok(sizes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    Mlp,
    CausalAttention,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub kind: DynamicsKind,
    pub action_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub mlp_width: usize,
    pub context: usize,
}

impl DynamicsConfig {
    pub fn mlp(action_dim: usize) -> Self {
        DynamicsConfig {
            kind: DynamicsKind::Mlp,
            action_dim,
            mlp_hidden: vec![512, 512],
            blocks: 0,
            heads: 0,
            d_model: 0,
            mlp_width: 0,
            context: 1,
        }
    }

    pub fn causal_attention(action_dim: usize) -> Self {
        DynamicsConfig {
            kind: DynamicsKind::CausalAttention,
            action_dim,
            mlp_hidden: Vec::new(),
            blocks: 2,
            heads: 8,
            d_model: 512,
            mlp_width: 2048,
            context: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlottedConfig {
    pub slots: usize,
    pub slot_dim: usize,
    pub hidden: usize,
    pub action_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub family: Family,
    pub encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slotted: Option<SlottedConfig>,
    pub latent_dim: usize,
    pub seed: u64,
}

impl ModelPreset {
    /// The desk-scale default for a family on a domain. Slot counts match
    /// the domain's object count; per-slot width keeps the total latent
    /// budget near the distributed models' 50 dimensions.
    pub fn default_for(family: Family, domain: Domain, seed: u64) -> Self {
        let encoder = EncoderConfig::default_distributed(domain.channels());
        let action_dim = domain.action_dim();
        let dynamics = match family {
            Family::SeqAe => Some(DynamicsConfig::causal_attention(action_dim)),
            Family::Cwm => Some(DynamicsConfig::mlp(action_dim)),
            _ => None,
        };
        let slotted = match family {
            Family::Cswm => Some(SlottedConfig {
                slots: domain.num_objects(),
                slot_dim: 10,
                hidden: 512,
                action_dim,
            }),
            _ => None,
        };
        ModelPreset { family, encoder, dynamics, slotted, latent_dim: 50, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.conv_channels.len() != self.encoder.conv_strides.len() {
            return Err(CoreError::invalid(
                "ModelPreset::validate",
                "conv_channels and conv_strides lengths differ",
            ));
        }
        if self.family.has_dynamics() && !self.family.is_slotted() && self.dynamics.is_none() {
            return Err(CoreError::invalid(
                "ModelPreset::validate",
                format!("{} requires a dynamics config", self.family.id()),
            ));
        }
        if self.family.is_slotted() {
            let s = self.slotted.as_ref().ok_or_else(|| {
                CoreError::invalid("ModelPreset::validate", "cswm requires a slotted config")
            })?;
            if s.slots == 0 || s.slot_dim == 0 {
                return Err(CoreError::invalid(
                    "ModelPreset::validate",
                    "slot count and width must be positive",
                ));
            }
        }
        if let Some(d) = &self.dynamics {
            if d.kind == DynamicsKind::CausalAttention {
                if d.d_model % d.heads != 0 {
                    return Err(CoreError::invalid(
                        "ModelPreset::validate",
                        format!("d_model {} not divisible by heads {}", d.d_model, d.heads),
                    ));
                }
                if d.context == 0 {
                    return Err(CoreError::invalid("ModelPreset::validate", "context must be >= 1"));
                }
            }
        }
        if self.latent_dim == 0 {
            return Err(CoreError::invalid("ModelPreset::validate", "latent_dim must be positive"));
        }
        Ok(())
    }

    /// Latent shape per sample: [D] for distributed, [K, slot_dim] slotted.
    pub fn latent_shape(&self) -> Vec<usize> {
        match &self.slotted {
            Some(s) => vec![s.slots, s.slot_dim],
            None => vec![self.latent_dim],
        }
    }

    /// Hash of the canonical JSON encoding, for run registries.
    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("preset serializes").as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_vec_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let preset: ModelPreset = serde_json::from_slice(&std::fs::read(path)?)?;
        preset.validate()?;
        Ok(preset)
    }
}
