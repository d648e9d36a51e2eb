//! The four training losses. Each builds onto a caller-owned graph and
//! returns the scalar loss node.

use crate::error::{CoreError, Result};
use crate::models::WorldModel;
use crate::numerics::{Graph, NodeId};
use crate::objectives::batch::{StepBatch, WindowBatch};

fn flatten_rows(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let cols: usize = shape[1..].iter().product();
    g.reshape(x, &[shape[0], cols])
}

/// Mean over rows of the squared L2 distance between a and b.
fn mean_sq_dist(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let diff = g.sub(a, b)?;
    let flat = flatten_rows(g, diff)?;
    let ss = g.row_sumsq(flat)?;
    Ok(g.mean_all(ss))
}

/// Reconstruct the current frame from the current latent.
pub fn loss_ae_static(model: &WorldModel, g: &mut Graph, batch: &StepBatch) -> Result<NodeId> {
    let x = g.constant(batch.x.clone());
    let z = model.encode(g, x)?;
    let rec = model.decode(g, z)?;
    mean_sq_dist(g, x, rec)
}

/// Next-frame reconstruction through the predicted latent, plus a latent
/// consistency term whose target is gradient-detached.
pub fn loss_ae_dynamic(model: &WorldModel, g: &mut Graph, batch: &WindowBatch) -> Result<NodeId> {
    let (b, t) = (batch.batch, batch.steps);
    let frames = g.constant(batch.frames.clone());
    let z_all = model.encode(g, frames)?;
    let d = g.value(z_all).last_dim();

    let z_flat = g.reshape(z_all, &[b, (t + 1) * d])?;
    let z_in = g.slice_last(z_flat, 0, t * d)?;
    let z_in = g.reshape(z_in, &[b, t, d])?;
    let z_tgt = g.slice_last(z_flat, d, t * d)?;
    let z_tgt = g.reshape(z_tgt, &[b, t, d])?;

    let actions = batch.actions.as_ref().map(|a| g.constant(a.clone()));
    let pred = model.predict_sequence(g, z_in, actions)?;

    let pred_flat = g.reshape(pred, &[b * t, d])?;
    let rec = model.decode(g, pred_flat)?;
    let target_idx: Vec<usize> =
        (0..b).flat_map(|w| (1..=t).map(move |i| w * (t + 1) + i)).collect();
    let targets = g.gather_rows(frames, target_idx)?;
    let recon = mean_sq_dist(g, targets, rec)?;

    let z_tgt = g.detach(z_tgt);
    let z_tgt = g.reshape(z_tgt, &[b * t, d])?;
    let consistency = mean_sq_dist(g, z_tgt, pred_flat)?;
    g.add(recon, consistency)
}

/// Pull an augmented view toward its frame, push a deranged other frame's
/// augmented view out to the margin.
pub fn loss_contrastive_static(
    model: &WorldModel,
    g: &mut Graph,
    batch: &StepBatch,
    margin: f32,
) -> Result<NodeId> {
    let (aug, neg) = match (&batch.x_aug, &batch.negatives) {
        (Some(a), Some(n)) => (a, n),
        _ => {
            return Err(CoreError::invalid(
                "loss_contrastive_static",
                "batch lacks augmented views or negatives",
            ))
        }
    };
    let x = g.constant(batch.x.clone());
    let xa = g.constant(aug.clone());
    let z = model.encode(g, x)?;
    let z_pos = model.encode(g, xa)?;
    let z_neg = g.gather_rows(z_pos, neg.clone())?;

    let diff = g.sub(z, z_pos)?;
    let pos = g.row_sumsq(diff)?;
    let ndiff = g.sub(z_neg, z)?;
    let nsq = g.row_sumsq(ndiff)?;
    let flipped = g.affine(nsq, -1.0, margin);
    let hinged = g.relu(flipped);
    let per_item = g.add(pos, hinged)?;
    Ok(g.mean_all(per_item))
}

/// Pull the predicted next latent toward the encoded next frame, push a
/// deranged other transition's next latent out to the margin. Slotted
/// latents are compared slot-by-slot at matching indices, summed.
pub fn loss_contrastive_dynamic(
    model: &WorldModel,
    g: &mut Graph,
    batch: &StepBatch,
    margin: f32,
) -> Result<NodeId> {
    let (x_next, neg) = match (&batch.x_next, &batch.negatives) {
        (Some(xn), Some(n)) => (xn, n),
        _ => {
            return Err(CoreError::invalid(
                "loss_contrastive_dynamic",
                "batch lacks next frames or negatives",
            ))
        }
    };
    let x = g.constant(batch.x.clone());
    let xn = g.constant(x_next.clone());
    let z = model.encode(g, x)?;
    let z_next = model.encode(g, xn)?;
    let actions = batch.actions.as_ref().map(|a| g.constant(a.clone()));
    let pred = model.predict_next(g, z, actions)?;

    let pred = flatten_rows(g, pred)?;
    let z_next = flatten_rows(g, z_next)?;
    let z_neg = g.gather_rows(z_next, neg.clone())?;

    let diff = g.sub(z_next, pred)?;
    let pos = g.row_sumsq(diff)?;
    let ndiff = g.sub(z_neg, pred)?;
    let nsq = g.row_sumsq(ndiff)?;
    let hinged = {
        let flipped = g.affine(nsq, -1.0, margin);
        g.relu(flipped)
    };
    let per_item = g.add(pos, hinged)?;
    Ok(g.mean_all(per_item))
}
