//! Frozen-encoder slot-decoder probe: train a slot decoder on top of a
//! trained encoder whose parameters receive no updates, and report how
//! well the decoder reconstructs frames and segments objects.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::models::{SlotDecoder, SlotDecoderConfig, WorldModel};
use crate::numerics::{AdamConfig, Array, Graph, ParamStore};
use crate::util::derive_seed;
use crate::worlds::EpisodePack;

/// Frames per evaluation pass when computing the final MSE.
const EVAL_CHUNK: usize = 256;
/// Cap on frames scored in the final evaluation pass.
const EVAL_CAP: usize = 1024;

#[derive(Clone, Debug)]
pub struct SlotProbeConfig {
    pub slots: usize,
    pub slot_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Cap on distinct training frames drawn from the pack.
    pub max_frames: usize,
    /// Number of per-slot decompositions kept in the report.
    pub sample_frames: usize,
    pub seed: u64,
}

impl SlotProbeConfig {
    pub fn default_for(slots: usize) -> Self {
        SlotProbeConfig {
            slots,
            slot_dim: 10,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            max_frames: 5000,
            sample_frames: 8,
            seed: 0,
        }
    }
}

/// One frame's decomposition: composed reconstruction, per-slot images,
/// and per-pixel slot masks.
#[derive(Clone, Debug)]
pub struct SlotSample {
    pub episode: usize,
    pub frame: usize,
    /// [H, W, C]
    pub image: Vec<f32>,
    /// [K, H, W, C]
    pub slot_images: Vec<f32>,
    /// [K, H, W]
    pub masks: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct SlotProbeReport {
    /// Per-pixel mean squared error over the evaluation frames.
    pub final_mse: f64,
    /// Per-pixel training MSE per epoch.
    pub epoch_mse: Vec<f64>,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
    pub samples: Vec<SlotSample>,
}

/// Encodes observations with gradients discarded, returning flat latents.
fn encode_detached(model: &WorldModel, obs: &Array) -> Result<Array> {
    let mut g = Graph::new();
    let x = g.constant(obs.clone());
    let z = model.encode(&mut g, x)?;
    let zv = g.value(z);
    let b = zv.shape()[0];
    let d: usize = zv.shape()[1..].iter().product();
    Array::from_vec(&[b, d], zv.data().to_vec())
}

fn gather_obs(pack: &EpisodePack, items: &[(usize, usize)]) -> Result<Array> {
    let domain = pack.domain()?;
    let res = pack.manifest.resolution;
    let ch = domain.channels();
    let mut data = Vec::with_capacity(items.len() * res * res * ch);
    for &(e, t) in items {
        data.extend_from_slice(&pack.episodes[e].observation(domain, t));
    }
    Array::from_vec(&[items.len(), res, res, ch], data)
}

/// Per-pixel MSE between observations and composed reconstructions.
fn eval_mse(
    model: &WorldModel,
    decoder: &SlotDecoder,
    store: &ParamStore,
    pack: &EpisodePack,
    items: &[(usize, usize)],
) -> Result<f64> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in items.chunks(EVAL_CHUNK) {
        let obs = gather_obs(pack, chunk)?;
        let z = encode_detached(model, &obs)?;
        let mut g = Graph::new();
        let zid = g.constant(z);
        let decode = decoder.build(&mut g, store, zid)?;
        let img = g.value(decode.image);
        for (a, b) in obs.data().iter().zip(img.data()) {
            let d = (*a - *b) as f64;
            total += d * d;
        }
        count += obs.data().len();
    }
    Ok(total / count as f64)
}

/// Trains a slot decoder against the frozen encoder and reports
/// reconstruction error plus per-slot decompositions.
pub fn slot_decoder_probe(
    model: &WorldModel,
    pack: &EpisodePack,
    cfg: &SlotProbeConfig,
) -> Result<SlotProbeReport> {
    if cfg.slots == 0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(CoreError::invalid("slot_decoder_probe", "zero slots, epochs, or batch"));
    }
    let res = pack.manifest.resolution;
    let domain = pack.domain()?;
    let channels = domain.channels();
    let latent: usize = model.latent_shape().iter().product();
    let px = res * res * channels;

    let encoder_hash_before = model.store().content_hash();

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "slot_probe/init"));
    let dec_cfg = SlotDecoderConfig {
        latent,
        slots: cfg.slots,
        slot_dim: cfg.slot_dim,
        channels,
        resolution: res,
    };
    let decoder = SlotDecoder::init(&mut store, &mut rng, "slot_probe", &dec_cfg)?;

    // Training universe: every frame, capped by a seeded subsample.
    let mut universe: Vec<(usize, usize)> = (0..pack.episodes.len())
        .flat_map(|e| (0..pack.episodes[e].frames.len()).map(move |t| (e, t)))
        .collect();
    if universe.len() > cfg.max_frames {
        let mut sub_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "slot_probe/subsample"));
        universe.shuffle(&mut sub_rng);
        universe.truncate(cfg.max_frames);
        universe.sort_unstable();
    }
    if universe.len() < cfg.batch_size.min(2) {
        return Err(CoreError::invalid("slot_decoder_probe", "pack too small"));
    }

    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut epoch_mse = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = universe.clone();
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("slot_probe/epoch/{epoch}")));
        order.shuffle(&mut epoch_rng);
        let mut sum = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let obs = gather_obs(pack, batch)?;
            let z = encode_detached(model, &obs)?;
            let mut g = Graph::new();
            let zid = g.constant(z);
            let decode = decoder.build(&mut g, &store, zid)?;
            let x = g.constant(obs);
            let diff = g.sub(x, decode.image)?;
            let flat = g.reshape(diff, &[batch.len(), px])?;
            let sq = g.row_sumsq(flat)?;
            let mean = g.mean_all(sq);
            let loss = g.affine(mean, 1.0 / px as f32, 0.0);
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, batch: batches });
            }
            g.backward(loss, &mut store)?;
            store.adam_step(&adam)?;
            store.clear_grads();
            sum += value as f64;
            batches += 1;
        }
        epoch_mse.push(sum / batches.max(1) as f64);
    }

    let eval_items: Vec<(usize, usize)> = universe.iter().take(EVAL_CAP).copied().collect();
    let final_mse = eval_mse(model, &decoder, &store, pack, &eval_items)?;

    // Per-slot decompositions for the first frame of the leading episodes.
    let sample_items: Vec<(usize, usize)> =
        (0..cfg.sample_frames.min(pack.episodes.len())).map(|e| (e, 0)).collect();
    let mut samples = Vec::with_capacity(sample_items.len());
    if !sample_items.is_empty() {
        let obs = gather_obs(pack, &sample_items)?;
        let z = encode_detached(model, &obs)?;
        let mut g = Graph::new();
        let zid = g.constant(z);
        let decode = decoder.build(&mut g, &store, zid)?;
        let image = g.value(decode.image).data().to_vec();
        let slot_images = g.value(decode.slot_images).data().to_vec();
        let masks = g.value(decode.masks).data().to_vec();
        let k = cfg.slots;
        let img_per = res * res * channels;
        for (i, &(episode, frame)) in sample_items.iter().enumerate() {
            samples.push(SlotSample {
                episode,
                frame,
                image: image[i * img_per..(i + 1) * img_per].to_vec(),
                slot_images: slot_images[i * k * img_per..(i + 1) * k * img_per].to_vec(),
                masks: masks[i * k * res * res..(i + 1) * k * res * res].to_vec(),
            });
        }
    }

    let encoder_hash_after = model.store().content_hash();
    if encoder_hash_after != encoder_hash_before {
        return Err(CoreError::invalid(
            "slot_decoder_probe",
            "encoder parameters changed during probe training",
        ));
    }

    Ok(SlotProbeReport {
        final_mse,
        epoch_mse,
        encoder_hash_before,
        encoder_hash_after,
        samples,
    })
}
