//! The epoch loop: shuffle, batch, loss, Adam step, artifacts.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::WorldModel;
use crate::numerics::{AdamConfig, Graph};
use crate::objectives::batch::{assemble_steps, assemble_windows, Sampler};
use crate::objectives::loss;
use crate::objectives::{ObjectiveConfig, ObjectiveFamily};
use crate::util::derive_seed;
use crate::worlds::EpisodePack;

/// Per-run artifact written next to the checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub objective: ObjectiveConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub wall_secs: f64,
    pub final_loss: Option<f32>,
}

/// What `train` hands back.
#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean loss per epoch, in order.
    pub epoch_losses: Vec<f32>,
    pub wall_secs: f64,
    /// Batch size actually used after the small-pack reduction.
    pub batch_size: usize,
}

/// Trains `model` on `pack` under `cfg`. With a run directory, writes
/// loss_curve.csv, model.oswb, and run.json there.
pub fn train(
    model: &mut WorldModel,
    pack: &EpisodePack,
    cfg: &ObjectiveConfig,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let family = cfg.family;

    let sampler = match family {
        ObjectiveFamily::AeDynamic => Sampler::windows(pack, model.context())?,
        _ => Sampler::steps(pack)?,
    };

    // Window batches hold batch_size trained positions, not windows.
    let per_item = match family {
        ObjectiveFamily::AeDynamic => model.context(),
        _ => 1,
    };
    let mut batch_size = cfg.batch_size;
    if pack.transitions() < 512 {
        batch_size = batch_size.min(128);
    }
    let batch_items = (batch_size / per_item).max(1).min(sampler.len());
    if family.is_contrastive() && batch_items < 2 {
        return Err(CoreError::invalid(
            "train",
            "contrastive training needs at least two items per batch",
        ));
    }

    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch/{epoch}")));
        let order = sampler.shuffled(&mut rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;

        for (bi, chunk) in order.chunks(batch_items).enumerate() {
            if chunk.len() < batch_items {
                break;
            }
            let mut g = Graph::new();
            let loss_node = match family {
                ObjectiveFamily::AeStatic => {
                    let b = assemble_steps(pack, chunk, family.step_parts(), &mut rng)?;
                    loss::loss_ae_static(model, &mut g, &b)?
                }
                ObjectiveFamily::ContrastiveStatic => {
                    let b = assemble_steps(pack, chunk, family.step_parts(), &mut rng)?;
                    loss::loss_contrastive_static(model, &mut g, &b, cfg.margin)?
                }
                ObjectiveFamily::ContrastiveDynamic => {
                    let b = assemble_steps(pack, chunk, family.step_parts(), &mut rng)?;
                    loss::loss_contrastive_dynamic(model, &mut g, &b, cfg.margin)?
                }
                ObjectiveFamily::AeDynamic => {
                    let b = assemble_windows(pack, chunk, sampler.window_steps())?;
                    loss::loss_ae_dynamic(model, &mut g, &b)?
                }
            };
            let value = g.value(loss_node).data()[0];
            if !value.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, batch: bi });
            }
            g.backward(loss_node, model.store_mut())?;
            model.store_mut().adam_step(&adam)?;
            model.store_mut().clear_grads();
            total += value as f64;
            batches += 1;
        }

        if batches == 0 {
            return Err(CoreError::invalid("train", "epoch produced no full batches"));
        }
        epoch_losses.push((total / batches as f64) as f32);
    }

    let wall_secs = start.elapsed().as_secs_f64();
    let report = TrainReport { epoch_losses, wall_secs, batch_size: batch_items * per_item };

    if let Some(dir) = run_dir {
        write_artifacts(model, cfg, seed, &report, dir)?;
    }
    Ok(report)
}

fn write_artifacts(
    model: &WorldModel,
    cfg: &ObjectiveConfig,
    seed: u64,
    report: &TrainReport,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    let mut f = fs::File::create(dir.join("loss_curve.csv"))?;
    f.write_all(csv.as_bytes())?;

    model.save(&dir.join("model.oswb"))?;
    model.preset().save(&dir.join("preset.json"))?;

    let meta = RunMetadata {
        config_hash: model.preset().config_hash(),
        objective: cfg.clone(),
        seed,
        epochs: report.epoch_losses.len(),
        batch_size: report.batch_size,
        wall_secs: report.wall_secs,
        final_loss: report.epoch_losses.last().copied(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(dir.join("run.json"), json)?;
    Ok(())
}
