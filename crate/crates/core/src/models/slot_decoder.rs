//! Additive slot decoder: a learned projection splits a latent into K slot
//! vectors, each slot is decoded from an 8x8 spatial broadcast to RGB plus a
//! mask logit, and per-pixel softmax over slots composes the final image.

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::models::nn;
use crate::numerics::{init, Array, Graph, NodeId, ParamStore};

const SEED_SIDE: usize = 8;
const UP_CHANNELS: usize = 32;

/// Everything `slot_decode` produces for one batch.
pub struct SlotDecode {
    /// Composed image [B, H, W, C].
    pub image: NodeId,
    /// Per-slot RGB before masking [B, K, H, W, C].
    pub slot_images: NodeId,
    /// Per-pixel slot weights [B, K, H, W], summing to 1 over K.
    pub masks: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct SlotDecoderConfig {
    /// Input latent width.
    pub latent: usize,
    /// Slot count K.
    pub slots: usize,
    /// Per-slot vector width after the projection.
    pub slot_dim: usize,
    /// Image channels (a mask logit channel is added internally).
    pub channels: usize,
    /// Output image side length.
    pub resolution: usize,
}

#[derive(Clone, Debug)]
pub struct SlotDecoder {
    prefix: String,
    latent: usize,
    slots: usize,
    slot_dim: usize,
    channels: usize,
    resolution: usize,
}

impl SlotDecoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &SlotDecoderConfig,
    ) -> Result<Self> {
        let SlotDecoderConfig { latent, slots, slot_dim, channels, resolution } = *cfg;
        if slots == 0 || slot_dim == 0 || latent == 0 {
            return Err(CoreError::invalid("SlotDecoder::init", "zero-sized configuration"));
        }
        if resolution != SEED_SIDE * 4 {
            return Err(CoreError::invalid(
                "SlotDecoder::init",
                format!("resolution {resolution} is not 4x the {SEED_SIDE}x{SEED_SIDE} seed grid"),
            ));
        }
        store.register_linear(&format!("{prefix}.proj"), latent, slots * slot_dim, rng)?;
        register_deconv(store, rng, &format!("{prefix}.up0"), slot_dim + 2, UP_CHANNELS, 2)?;
        register_deconv(store, rng, &format!("{prefix}.up1"), UP_CHANNELS, UP_CHANNELS, 2)?;
        register_deconv(store, rng, &format!("{prefix}.out"), UP_CHANNELS, channels + 1, 1)?;
        Ok(SlotDecoder {
            prefix: prefix.to_string(),
            latent,
            slots,
            slot_dim,
            channels,
            resolution,
        })
    }

    /// z [B, latent] -> composed image plus per-slot images and masks.
    pub fn build(&self, g: &mut Graph, store: &ParamStore, z: NodeId) -> Result<SlotDecode> {
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.latent {
            return Err(CoreError::invalid(
                "SlotDecoder::build",
                format!("expected [batch, {}], got {shape:?}", self.latent),
            ));
        }
        let batch = shape[0];
        let (k, res) = (self.slots, self.resolution);
        let pixels = res * res;

        let slots = nn::linear(g, store, &format!("{}.proj", self.prefix), z)?;
        let slots = g.reshape(slots, &[batch * k, self.slot_dim])?;

        let tile: Vec<usize> = (0..batch * k * SEED_SIDE * SEED_SIDE).map(|r| r / (SEED_SIDE * SEED_SIDE)).collect();
        let grid = g.gather_rows(slots, tile)?;
        let grid = g.reshape(grid, &[batch * k, SEED_SIDE, SEED_SIDE, self.slot_dim])?;
        let coords = g.constant(coord_grid(batch * k));
        let grid = g.concat_last(grid, coords)?;

        let h = deconv(g, store, &format!("{}.up0", self.prefix), grid, 2, 0)?;
        let h = g.relu(h);
        let h = deconv(g, store, &format!("{}.up1", self.prefix), h, 2, 0)?;
        let h = g.relu(h);
        let h = deconv(g, store, &format!("{}.out", self.prefix), h, 1, 0)?;

        let rgb = g.slice_last(h, 0, self.channels)?;
        let logit = g.slice_last(h, self.channels, 1)?;

        let logit = g.reshape(logit, &[batch, k, pixels])?;
        let logit = g.batch_transpose(logit)?;
        let mask = g.softmax(logit)?;
        let mask = g.batch_transpose(mask)?;

        let rgb = g.reshape(rgb, &[batch, k, pixels, self.channels])?;
        let weighted = g.scale_rows(rgb, mask)?;
        let weighted = g.reshape(weighted, &[batch * k, pixels * self.channels])?;
        let bucket: Vec<usize> = (0..batch * k).map(|r| r / k).collect();
        let image = g.scatter_sum_rows(weighted, bucket, batch)?;
        let image = g.reshape(image, &[batch, res, res, self.channels])?;

        let slot_images = g.reshape(rgb, &[batch, k, res, res, self.channels])?;
        let masks = g.reshape(mask, &[batch, k, res, res])?;
        Ok(SlotDecode { image, slot_images, masks })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn latent(&self) -> usize {
        self.latent
    }
}

fn register_deconv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    in_c: usize,
    out_c: usize,
    kernel: usize,
) -> Result<()> {
    let fan_in = kernel * kernel * in_c;
    let w = init::kaiming_uniform(rng, fan_in, vec![in_c, kernel, kernel, out_c]);
    store.register(&format!("{prefix}.w"), w)?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[out_c]))?;
    Ok(())
}

fn deconv(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    x: NodeId,
    stride: usize,
    out_pad: usize,
) -> Result<NodeId> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let h = g.conv_t2d(x, w, stride, out_pad)?;
    g.bias_add(h, b)
}

/// Constant (x, y) channels in [-1, 1] for every seed-grid cell, repeated for
/// each of the `rows` slot copies.
fn coord_grid(rows: usize) -> Array {
    let mut one = Vec::with_capacity(SEED_SIDE * SEED_SIDE * 2);
    for y in 0..SEED_SIDE {
        for x in 0..SEED_SIDE {
            one.push(x as f32 / (SEED_SIDE - 1) as f32 * 2.0 - 1.0);
            one.push(y as f32 / (SEED_SIDE - 1) as f32 * 2.0 - 1.0);
        }
    }
    let data: Vec<f32> = one.iter().copied().cycle().take(rows * one.len()).collect();
    Array::from_vec(&[rows, SEED_SIDE, SEED_SIDE, 2], data).expect("static shape")
}
