//! Transposed-convolution decoder mirroring the distributed encoder.

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::models::nn;
use crate::models::preset::EncoderConfig;
use crate::numerics::{init, Array, Graph, NodeId, ParamStore};

/// Mirror image of [`super::encoder::ConvEncoder`]: MLP from the latent to
/// the flattened deepest feature map, then transposed convolutions back to
/// the input resolution.
#[derive(Clone, Debug)]
pub struct ConvDecoder {
    prefix: String,
    cfg: EncoderConfig,
    resolution: usize,
    latent: usize,
    seed_side: usize,
}

impl ConvDecoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &EncoderConfig,
        resolution: usize,
        latent: usize,
    ) -> Result<Self> {
        let stages = cfg.stage_sizes(resolution)?;
        let seed_side = *stages.last().unwrap();
        let deep_c = *cfg.conv_channels.last().unwrap();

        let mut dims = vec![latent];
        dims.extend(cfg.mlp_hidden.iter().rev());
        dims.push(seed_side * seed_side * deep_c);
        nn::register_mlp(store, rng, &format!("{prefix}.mlp"), &dims)?;

        // Deconv stage i inverts encoder conv stage (n-1-i): channel chain
        // runs deepest-first back to the input channels.
        let mut chain = vec![cfg.in_channels];
        chain.extend(cfg.conv_channels.iter().copied());
        let n = cfg.conv_strides.len();
        for i in 0..n {
            let enc = n - 1 - i;
            let (in_c, out_c) = (chain[enc + 1], chain[enc]);
            let w = init::kaiming_uniform(
                rng,
                cfg.kernel * cfg.kernel * in_c,
                vec![in_c, cfg.kernel, cfg.kernel, out_c],
            );
            store.register(&format!("{prefix}.deconv{i}.w"), w)?;
            store.register(&format!("{prefix}.deconv{i}.b"), Array::zeros(&[out_c]))?;
        }
        Ok(ConvDecoder {
            prefix: prefix.to_string(),
            cfg: cfg.clone(),
            resolution,
            latent,
            seed_side,
        })
    }

    /// z [B, D] -> image [B, H, W, C].
    pub fn build(&self, g: &mut Graph, store: &ParamStore, z: NodeId) -> Result<NodeId> {
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.latent {
            return Err(CoreError::invalid(
                "ConvDecoder::build",
                format!("expected [batch, {}], got {shape:?}", self.latent),
            ));
        }
        let batch = shape[0];
        let deep_c = *self.cfg.conv_channels.last().unwrap();

        let h = nn::mlp(g, store, &format!("{}.mlp", self.prefix), self.cfg.mlp_hidden.len() + 1, z)?;
        let mut h = g.reshape(h, &[batch, self.seed_side, self.seed_side, deep_c])?;

        // Output size of a valid convolution is (n - k)/s + 1; its transpose
        // needs out_pad = (n - k) mod s to restore the original size.
        let mut sizes = vec![self.resolution];
        sizes.extend(self.cfg.stage_sizes(self.resolution)?);
        let n = self.cfg.conv_strides.len();
        for i in 0..n {
            let enc = n - 1 - i;
            let stride = self.cfg.conv_strides[enc];
            let target = sizes[enc];
            let out_pad = (target - self.cfg.kernel) % stride;
            h = g.relu(h);
            let w = g.param(store, &format!("{}.deconv{i}.w", self.prefix))?;
            let b = g.param(store, &format!("{}.deconv{i}.b", self.prefix))?;
            h = g.conv_t2d(h, w, stride, out_pad)?;
            h = g.bias_add(h, b)?;
        }
        Ok(h)
    }

    pub fn latent(&self) -> usize {
        self.latent
    }
}
