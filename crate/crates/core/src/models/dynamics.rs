//! Dynamics heads: Markovian MLP, causal-attention sequence model, and the
//! slotted message-passing transition. All heads predict a residual delta
//! that is added to the current latent.

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::models::nn;
use crate::models::preset::DynamicsConfig;
use crate::numerics::{init, Graph, NodeId, ParamStore};

fn check_action(action_dim: usize, action: &Option<NodeId>, op: &'static str) -> Result<()> {
    match (action_dim, action) {
        (0, Some(_)) => Err(CoreError::invalid(op, "action provided to an action-free model")),
        (d, None) if d > 0 => Err(CoreError::invalid(op, "model expects an action")),
        _ => Ok(()),
    }
}

/// MLP on [z_t, a_t] emitting a latent delta.
#[derive(Clone, Debug)]
pub struct MlpDynamics {
    prefix: String,
    latent: usize,
    action_dim: usize,
    layers: usize,
}

impl MlpDynamics {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        latent: usize,
        cfg: &DynamicsConfig,
    ) -> Result<Self> {
        let mut dims = vec![latent + cfg.action_dim];
        dims.extend_from_slice(&cfg.mlp_hidden);
        dims.push(latent);
        nn::register_mlp(store, rng, prefix, &dims)?;
        Ok(MlpDynamics {
            prefix: prefix.to_string(),
            latent,
            action_dim: cfg.action_dim,
            layers: cfg.mlp_hidden.len() + 1,
        })
    }

    /// z [B, D], action [B, A] -> z + delta [B, D].
    pub fn build(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: NodeId,
        action: Option<NodeId>,
    ) -> Result<NodeId> {
        check_action(self.action_dim, &action, "MlpDynamics::build")?;
        let h = match action {
            Some(a) => g.concat_last(z, a)?,
            None => z,
        };
        let delta = nn::mlp(g, store, &self.prefix, self.layers, h)?;
        g.add(z, delta)
    }

    pub fn latent(&self) -> usize {
        self.latent
    }
}

/// GPT-2 style causal transformer over a short latent history.
#[derive(Clone, Debug)]
pub struct AttentionDynamics {
    prefix: String,
    latent: usize,
    cfg: DynamicsConfig,
}

impl AttentionDynamics {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        latent: usize,
        cfg: &DynamicsConfig,
    ) -> Result<Self> {
        let d = cfg.d_model;
        store.register_linear(&format!("{prefix}.embed"), latent + cfg.action_dim, d, rng)?;
        store.register(
            &format!("{prefix}.pos"),
            init::kaiming_uniform(rng, d, vec![cfg.context, d]),
        )?;
        for blk in 0..cfg.blocks {
            let p = format!("{prefix}.h{blk}");
            nn::register_layer_norm(store, &format!("{p}.ln1"), d)?;
            store.register_linear(&format!("{p}.attn.qkv"), d, 3 * d, rng)?;
            store.register_linear(&format!("{p}.attn.proj"), d, d, rng)?;
            nn::register_layer_norm(store, &format!("{p}.ln2"), d)?;
            store.register_linear(&format!("{p}.mlp.0"), d, cfg.mlp_width, rng)?;
            store.register_linear(&format!("{p}.mlp.1"), cfg.mlp_width, d, rng)?;
        }
        nn::register_layer_norm(store, &format!("{prefix}.lnf"), d)?;
        store.register_linear(&format!("{prefix}.head"), d, latent, rng)?;
        Ok(AttentionDynamics { prefix: prefix.to_string(), latent, cfg: cfg.clone() })
    }

    fn attention_block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        p: &str,
        x: NodeId,
        batch: usize,
        t: usize,
    ) -> Result<NodeId> {
        let (d, heads) = (self.cfg.d_model, self.cfg.heads);
        let dh = d / heads;

        let h = nn::layer_norm(g, store, &format!("{p}.ln1"), x)?;
        let h = g.reshape(h, &[batch * t, d])?;
        let qkv = nn::linear(g, store, &format!("{p}.attn.qkv"), h)?;
        let mut split = Vec::with_capacity(3);
        for i in 0..3 {
            let part = g.slice_last(qkv, i * d, d)?;
            let part = g.reshape(part, &[batch, t, heads, dh])?;
            split.push(g.transpose12(part)?);
        }
        let scores = g.batch_matmul_nt(split[0], split[1])?;
        let scores = g.affine(scores, 1.0 / (dh as f32).sqrt(), 0.0);
        let attn = g.causal_softmax(scores)?;
        let ctx = g.batch_matmul(attn, split[2])?;
        let ctx = g.transpose12(ctx)?;
        let ctx = g.reshape(ctx, &[batch * t, d])?;
        let proj = nn::linear(g, store, &format!("{p}.attn.proj"), ctx)?;
        let proj = g.reshape(proj, &[batch, t, d])?;
        let x = g.add(x, proj)?;

        let h = nn::layer_norm(g, store, &format!("{p}.ln2"), x)?;
        let h = g.reshape(h, &[batch * t, d])?;
        let h = nn::linear(g, store, &format!("{p}.mlp.0"), h)?;
        let h = g.gelu(h);
        let h = nn::linear(g, store, &format!("{p}.mlp.1"), h)?;
        let h = g.reshape(h, &[batch, t, d])?;
        g.add(x, h)
    }

    /// z [B, T, D], actions [B, T, A] -> predictions [B, T, D], where
    /// position t carries the model's estimate of z_{t+1} as z_t + delta.
    pub fn build_sequence(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: NodeId,
        actions: Option<NodeId>,
    ) -> Result<NodeId> {
        check_action(self.cfg.action_dim, &actions, "AttentionDynamics::build_sequence")?;
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.latent {
            return Err(CoreError::invalid(
                "AttentionDynamics::build_sequence",
                format!("expected [batch, time, {}], got {shape:?}", self.latent),
            ));
        }
        let (batch, t) = (shape[0], shape[1]);
        if t == 0 || t > self.cfg.context {
            return Err(CoreError::invalid(
                "AttentionDynamics::build_sequence",
                format!("history length {t} outside 1..={}", self.cfg.context),
            ));
        }
        let d = self.cfg.d_model;

        let tokens = match actions {
            Some(a) => g.concat_last(z, a)?,
            None => z,
        };
        let tok_dim = g.value(tokens).last_dim();
        let flat = g.reshape(tokens, &[batch * t, tok_dim])?;
        let h = nn::linear(g, store, &format!("{}.embed", self.prefix), flat)?;

        let pos = g.param(store, &format!("{}.pos", self.prefix))?;
        let pos = g.gather_rows(pos, (0..t).collect())?;
        let pos = g.reshape(pos, &[t * d])?;
        let h = g.reshape(h, &[batch, t * d])?;
        let h = g.bias_add(h, pos)?;
        let mut h = g.reshape(h, &[batch, t, d])?;

        for blk in 0..self.cfg.blocks {
            h = self.attention_block(g, store, &format!("{}.h{blk}", self.prefix), h, batch, t)?;
        }
        let h = nn::layer_norm(g, store, &format!("{}.lnf", self.prefix), h)?;
        let h = g.reshape(h, &[batch * t, d])?;
        let delta = nn::linear(g, store, &format!("{}.head", self.prefix), h)?;
        let delta = g.reshape(delta, &[batch, t, self.latent])?;
        g.add(z, delta)
    }

    pub fn context(&self) -> usize {
        self.cfg.context
    }

    pub fn latent(&self) -> usize {
        self.latent
    }
}

/// Fully connected message passing over slots: an edge MLP on ordered slot
/// pairs, summed per receiver, then a node MLP conditioned on the full
/// action vector (every slot sees the same action).
#[derive(Clone, Debug)]
pub struct GnnTransition {
    prefix: String,
    slots: usize,
    slot_dim: usize,
    hidden: usize,
    action_dim: usize,
}

impl GnnTransition {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        slots: usize,
        slot_dim: usize,
        hidden: usize,
        action_dim: usize,
    ) -> Result<Self> {
        nn::register_mlp(store, rng, &format!("{prefix}.edge"), &[2 * slot_dim, hidden, hidden])?;
        nn::register_mlp(
            store,
            rng,
            &format!("{prefix}.node"),
            &[slot_dim + hidden + action_dim, hidden, slot_dim],
        )?;
        Ok(GnnTransition { prefix: prefix.to_string(), slots, slot_dim, hidden, action_dim })
    }

    /// z [B, K, S], action [B, A] -> z + delta [B, K, S].
    pub fn build(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: NodeId,
        action: Option<NodeId>,
    ) -> Result<NodeId> {
        check_action(self.action_dim, &action, "GnnTransition::build")?;
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.slots || shape[2] != self.slot_dim {
            return Err(CoreError::invalid(
                "GnnTransition::build",
                format!("expected [batch, {}, {}], got {shape:?}", self.slots, self.slot_dim),
            ));
        }
        let (batch, k) = (shape[0], self.slots);
        let flat = g.reshape(z, &[batch * k, self.slot_dim])?;

        let mut src = Vec::new();
        let mut dst = Vec::new();
        for b in 0..batch {
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        src.push(b * k + i);
                        dst.push(b * k + j);
                    }
                }
            }
        }
        let senders = g.gather_rows(flat, src)?;
        let receivers = g.gather_rows(flat, dst.clone())?;
        let pair = g.concat_last(senders, receivers)?;
        let messages = nn::mlp(g, store, &format!("{}.edge", self.prefix), 2, pair)?;
        let agg = g.scatter_sum_rows(messages, dst, batch * k)?;

        let mut h = g.concat_last(flat, agg)?;
        if let Some(a) = action {
            let tiled_idx: Vec<usize> = (0..batch * k).map(|r| r / k).collect();
            let tiled = g.gather_rows(a, tiled_idx)?;
            h = g.concat_last(h, tiled)?;
        }
        let delta = nn::mlp(g, store, &format!("{}.node", self.prefix), 2, h)?;
        let delta = g.reshape(delta, &[batch, k, self.slot_dim])?;
        g.add(z, delta)
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}
