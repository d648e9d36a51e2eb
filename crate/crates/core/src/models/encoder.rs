//! Convolutional encoders: distributed (one latent vector per frame) and
//! slotted (one latent vector per object slot).

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::nn;
use crate::models::preset::{EncoderConfig, SlottedConfig};
use crate::numerics::{init, Array, Graph, NodeId, ParamStore};

fn register_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    kernel: usize,
    in_c: usize,
    out_c: usize,
) -> Result<()> {
    let w = init::kaiming_uniform(rng, kernel * kernel * in_c, vec![kernel, kernel, in_c, out_c]);
    store.register(&format!("{name}.w"), w)?;
    store.register(&format!("{name}.b"), Array::zeros(&[out_c]))
}

fn conv_relu(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: NodeId,
    stride: usize,
) -> Result<NodeId> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.conv2d(x, w, stride)?;
    let y = g.bias_add(y, b)?;
    Ok(g.relu(y))
}

/// Conv trunk plus MLP head emitting one latent vector per frame.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    prefix: String,
    cfg: EncoderConfig,
    resolution: usize,
    latent: usize,
    stages: Vec<usize>,
}

impl ConvEncoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &EncoderConfig,
        resolution: usize,
        latent: usize,
    ) -> Result<Self> {
        let stages = cfg.stage_sizes(resolution)?;
        let mut in_c = cfg.in_channels;
        for (i, &out_c) in cfg.conv_channels.iter().enumerate() {
            register_conv(store, rng, &format!("{prefix}.conv{i}"), cfg.kernel, in_c, out_c)?;
            in_c = out_c;
        }
        let flat = stages.last().unwrap().pow(2) * in_c;
        let mut dims = vec![flat];
        dims.extend_from_slice(&cfg.mlp_hidden);
        dims.push(latent);
        nn::register_mlp(store, rng, &format!("{prefix}.mlp"), &dims)?;
        Ok(ConvEncoder {
            prefix: prefix.to_string(),
            cfg: cfg.clone(),
            resolution,
            latent,
            stages,
        })
    }

    /// Spatial side after each conv stage.
    pub fn stage_sizes(&self) -> &[usize] {
        &self.stages
    }

    pub fn flat_dim(&self) -> usize {
        self.stages.last().unwrap().pow(2) * self.cfg.conv_channels.last().unwrap()
    }

    /// x [B, H, W, C] -> latent [B, D].
    pub fn build(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for (i, &stride) in self.cfg.conv_strides.iter().enumerate() {
            h = conv_relu(g, store, &format!("{}.conv{i}", self.prefix), h, stride)?;
        }
        let h = g.reshape(h, &[batch, self.flat_dim()])?;
        nn::mlp(g, store, &format!("{}.mlp", self.prefix), self.cfg.mlp_hidden.len() + 1, h)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn latent(&self) -> usize {
        self.latent
    }
}

/// Conv trunk whose final stage emits one feature map per slot, followed
/// by a weight-shared per-slot MLP.
#[derive(Clone, Debug)]
pub struct SlotEncoder {
    prefix: String,
    cfg: EncoderConfig,
    slots: usize,
    slot_dim: usize,
    map_side: usize,
}

impl SlotEncoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &EncoderConfig,
        resolution: usize,
        slotted: &SlottedConfig,
    ) -> Result<Self> {
        let (slots, slot_dim, hidden) = (slotted.slots, slotted.slot_dim, slotted.hidden);
        let stages = cfg.stage_sizes(resolution)?;
        let mut in_c = cfg.in_channels;
        for (i, &out_c) in cfg.conv_channels.iter().enumerate() {
            // The last stage emits K object feature maps instead of its
            // configured channel count.
            let out_c = if i + 1 == cfg.conv_channels.len() { slots } else { out_c };
            register_conv(store, rng, &format!("{prefix}.conv{i}"), cfg.kernel, in_c, out_c)?;
            in_c = out_c;
        }
        let map_side = *stages.last().unwrap();
        let dims = [map_side * map_side, hidden, hidden, slot_dim];
        nn::register_mlp(store, rng, &format!("{prefix}.slot_mlp"), &dims)?;
        Ok(SlotEncoder { prefix: prefix.to_string(), cfg: cfg.clone(), slots, slot_dim, map_side })
    }

    /// x [B, H, W, C] -> slot latents [B, K, slot_dim].
    pub fn build(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        for (i, &stride) in self.cfg.conv_strides.iter().enumerate() {
            h = conv_relu(g, store, &format!("{}.conv{i}", self.prefix), h, stride)?;
        }
        let px = self.map_side * self.map_side;
        let h = g.reshape(h, &[batch, px, self.slots])?;
        let h = g.batch_transpose(h)?;
        let h = g.reshape(h, &[batch * self.slots, px])?;
        let z = nn::mlp(g, store, &format!("{}.slot_mlp", self.prefix), 3, h)?;
        g.reshape(z, &[batch, self.slots, self.slot_dim])
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn slot_dim(&self) -> usize {
        self.slot_dim
    }
}
