//! Open-loop prediction ranking: roll the dynamics forward without
//! re-encoding and ask whether the prediction lands nearest its own
//! trajectory's final frame among all trajectories' final frames.

use crate::error::{CoreError, Result};
use crate::models::WorldModel;
use crate::numerics::{Array, Graph};
use crate::probes::delta::encode_frames;
use crate::worlds::{transition_starts, EpisodePack};

/// Trajectories scored per rollout pass.
const ROLLOUT_CHUNK: usize = 250;

#[derive(Clone, Debug)]
pub struct RankingReport {
    pub hits_at_one: f64,
    pub mrr: f64,
    pub count: usize,
    pub horizon: usize,
}

/// Ranks each prediction against all targets by squared Euclidean
/// distance; ties broken by trajectory index.
pub fn ranking_from_latents(preds: &[Vec<f32>], targets: &[Vec<f32>]) -> Result<RankingReport> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(CoreError::invalid("ranking_from_latents", "empty or mismatched inputs"));
    }
    let n = preds.len();
    let mut hits = 0usize;
    let mut mrr = 0.0f64;
    let mut dist = vec![0.0f64; n];
    for (i, p) in preds.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            dist[j] = p
                .iter()
                .zip(t)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
        }
        let own = dist[i];
        let rank = 1 + dist
            .iter()
            .enumerate()
            .filter(|&(j, &d)| d < own || (d == own && j < i))
            .count();
        if rank == 1 {
            hits += 1;
        }
        mrr += 1.0 / rank as f64;
    }
    Ok(RankingReport {
        hits_at_one: hits as f64 / n as f64,
        mrr: mrr / n as f64,
        count: n,
        horizon: 0,
    })
}

/// Rolls each trajectory's first valid observation forward `horizon` steps
/// through the dynamics head, then ranks against encoded final frames.
pub fn ranking_accuracy(
    model: &WorldModel,
    pack: &EpisodePack,
    horizon: usize,
) -> Result<RankingReport> {
    if horizon == 0 {
        return Err(CoreError::invalid("ranking_accuracy", "zero horizon"));
    }
    let domain = pack.domain()?;
    let len = pack.manifest.frames_per_episode;
    let t0 = transition_starts(domain, len).start;
    if t0 + horizon + 1 > len {
        return Err(CoreError::invalid(
            "ranking_accuracy",
            format!("horizon {horizon} exceeds trajectory length {len}"),
        ));
    }
    let action_dim = domain.action_dim();
    let context = model.context();

    let start_frames: Vec<Vec<f32>> =
        pack.episodes.iter().map(|e| e.observation(domain, t0)).collect();
    let final_frames: Vec<Vec<f32>> =
        pack.episodes.iter().map(|e| e.observation(domain, t0 + horizon)).collect();

    let z0 = encode_frames(model, &start_frames)?;
    let targets = encode_frames(model, &final_frames)?;
    let latent_shape = model.latent_shape();
    let flat: usize = latent_shape.iter().product();

    let mut preds: Vec<Vec<f32>> = Vec::with_capacity(z0.len());
    let episodes: Vec<usize> = (0..pack.episodes.len()).collect();
    for chunk in episodes.chunks(ROLLOUT_CHUNK) {
        let b = chunk.len();
        // History of latents for context-windowed dynamics; single-step
        // heads only ever read the last entry.
        let mut current: Vec<f32> = Vec::with_capacity(b * flat);
        for &e in chunk {
            current.extend_from_slice(&z0[e]);
        }
        let mut history: Vec<Vec<f32>> = vec![current];

        for step in 0..horizon {
            let window = history.len().min(context);
            let hist_slice = &history[history.len() - window..];
            let t_idx = t0 + step;

            let mut g = Graph::new();
            let mut shape = vec![b, window];
            shape.extend_from_slice(&latent_shape);
            let mut zdata = Vec::with_capacity(b * window * flat);
            for bi in 0..b {
                for h in hist_slice {
                    zdata.extend_from_slice(&h[bi * flat..(bi + 1) * flat]);
                }
            }
            let next = if context > 1 {
                let z = g.constant(Array::from_vec(&shape, zdata)?);
                let actions = if action_dim > 0 {
                    let mut a = vec![0.0f32; b * window * action_dim];
                    for (bi, &e) in chunk.iter().enumerate() {
                        for (wi, t) in (t_idx + 1 - window..=t_idx).enumerate() {
                            let act = pack.episodes[e].actions[t];
                            a[(bi * window + wi) * action_dim + act] = 1.0;
                        }
                    }
                    Some(g.constant(Array::from_vec(&[b, window, action_dim], a)?))
                } else {
                    None
                };
                let seq = model.predict_sequence(&mut g, z, actions)?;
                // Keep only the last position's prediction.
                let seq = g.reshape(seq, &[b, window * flat])?;
                let last = g.slice_last(seq, (window - 1) * flat, flat)?;
                let mut out_shape = vec![b];
                out_shape.extend_from_slice(&latent_shape);
                g.reshape(last, &out_shape)?
            } else {
                let mut zshape = vec![b];
                zshape.extend_from_slice(&latent_shape);
                let zdata = history.last().unwrap().clone();
                let z = g.constant(Array::from_vec(&zshape, zdata)?);
                let actions = if action_dim > 0 {
                    let mut a = vec![0.0f32; b * action_dim];
                    for (bi, &e) in chunk.iter().enumerate() {
                        a[bi * action_dim + pack.episodes[e].actions[t_idx]] = 1.0;
                    }
                    Some(g.constant(Array::from_vec(&[b, action_dim], a)?))
                } else {
                    None
                };
                model.predict_next(&mut g, z, actions)?
            };
            history.push(g.value(next).data().to_vec());
        }

        let last = history.last().unwrap();
        for bi in 0..b {
            preds.push(last[bi * flat..(bi + 1) * flat].to_vec());
        }
    }

    let mut report = ranking_from_latents(&preds, &targets)?;
    report.horizon = horizon;
    Ok(report)
}
