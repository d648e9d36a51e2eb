//! Representational similarity analysis: correlate two models' pairwise
//! latent distance structure over a shared frame set.

use crate::error::{CoreError, Result};
use crate::models::WorldModel;
use crate::probes::delta::encode_frames;

/// Minimum frames for a model-level RSA call.
pub const MIN_RSA_FRAMES: usize = 100;

/// Strict upper triangle of the pairwise Euclidean distance matrix.
fn distance_triangle(z: &[Vec<f32>]) -> Vec<f64> {
    let n = z.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = z[i]
                .iter()
                .zip(&z[j])
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            out.push(d.sqrt());
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Pearson correlation of the two distance triangles; `None` when either
/// matrix is constant (correlation undefined).
pub fn rsa_from_latents(za: &[Vec<f32>], zb: &[Vec<f32>]) -> Result<Option<f64>> {
    if za.len() != zb.len() {
        return Err(CoreError::invalid("rsa_from_latents", "frame count mismatch"));
    }
    if za.len() < 3 {
        return Err(CoreError::invalid("rsa_from_latents", "need at least three frames"));
    }
    let ta = distance_triangle(za);
    let tb = distance_triangle(zb);
    Ok(pearson(&ta, &tb))
}

/// RSA between two models on an identical frame set.
pub fn rsa_alignment(
    model_a: &WorldModel,
    model_b: &WorldModel,
    frames: &[Vec<f32>],
) -> Result<Option<f64>> {
    if frames.len() < MIN_RSA_FRAMES {
        return Err(CoreError::invalid(
            "rsa_alignment",
            format!("need at least {MIN_RSA_FRAMES} frames, got {}", frames.len()),
        ));
    }
    let za = encode_frames(model_a, frames)?;
    let zb = encode_frames(model_b, frames)?;
    rsa_from_latents(&za, &zb)
}
