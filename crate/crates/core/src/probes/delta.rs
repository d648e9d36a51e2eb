//! Delta vectors and the labeled probe dataset behind the separability
//! and similarity analyses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::models::WorldModel;
use crate::numerics::{Array, Graph};
use crate::util::derive_seed;
use crate::worlds::ProbePair;

/// Frames encoded per forward pass when embedding large sets.
const ENCODE_CHUNK: usize = 256;

/// Fraction of each label's pairs assigned to the train split.
const TRAIN_FRACTION: f64 = 0.8;

/// Encodes a list of observations, returning one flattened latent per row.
/// Slotted latents are flattened slot-major.
pub fn encode_frames(model: &WorldModel, frames: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let res = crate::worlds::RESOLUTION;
    let ch = model.preset().encoder.in_channels;
    let per = res * res * ch;
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(ENCODE_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * per);
        for f in chunk {
            if f.len() != per {
                return Err(CoreError::invalid(
                    "encode_frames",
                    format!("frame has {} values, expected {per}", f.len()),
                ));
            }
            data.extend_from_slice(f);
        }
        let x = Array::from_vec(&[chunk.len(), res, res, ch], data)?;
        let mut g = Graph::new();
        let xid = g.constant(x);
        let z = model.encode(&mut g, xid)?;
        let zv = g.value(z);
        let d: usize = zv.shape()[1..].iter().product();
        for b in 0..chunk.len() {
            out.push(zv.data()[b * d..(b + 1) * d].to_vec());
        }
    }
    Ok(out)
}

/// |e(before) − e(after)| per probe pair, flattened.
pub fn delta_vectors(model: &WorldModel, pairs: &[ProbePair]) -> Result<Vec<Vec<f32>>> {
    let before: Vec<Vec<f32>> = pairs.iter().map(|p| p.before.clone()).collect();
    let after: Vec<Vec<f32>> = pairs.iter().map(|p| p.after.clone()).collect();
    let zb = encode_frames(model, &before)?;
    let za = encode_frames(model, &after)?;
    Ok(zb
        .into_iter()
        .zip(za)
        .map(|(b, a)| b.iter().zip(&a).map(|(x, y)| (x - y).abs()).collect())
        .collect())
}

/// Labeled delta vectors with a fixed train/test split.
#[derive(Clone, Debug)]
pub struct ProbeDataset {
    pub x: Vec<Vec<f32>>,
    pub object_labels: Vec<usize>,
    pub transform_labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub classes: usize,
}

impl ProbeDataset {
    /// Splits 80/20, stratified by object label, shuffled by `seed`.
    pub fn split(
        x: Vec<Vec<f32>>,
        object_labels: Vec<usize>,
        transform_labels: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if x.len() != object_labels.len() || x.len() != transform_labels.len() {
            return Err(CoreError::invalid("ProbeDataset::split", "label count mismatch"));
        }
        if x.is_empty() {
            return Err(CoreError::invalid("ProbeDataset::split", "empty dataset"));
        }
        let classes = object_labels.iter().max().unwrap() + 1;
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &y) in object_labels.iter().enumerate() {
            groups[y].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "probe/split"));
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (label, group) in groups.iter_mut().enumerate() {
            let n_train = (group.len() as f64 * TRAIN_FRACTION).floor() as usize;
            if n_train == 0 || n_train == group.len() {
                return Err(CoreError::invalid(
                    "ProbeDataset::split",
                    format!("label {label} has too few pairs ({}) to split", group.len()),
                ));
            }
            group.shuffle(&mut rng);
            train.extend_from_slice(&group[..n_train]);
            test.extend_from_slice(&group[n_train..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(ProbeDataset { x, object_labels, transform_labels, train, test, classes })
    }

    /// Builds the dataset from a model and labeled probe pairs.
    pub fn from_pairs(model: &WorldModel, pairs: &[ProbePair], seed: u64) -> Result<Self> {
        let x = delta_vectors(model, pairs)?;
        let object_labels = pairs.iter().map(|p| p.object_label).collect();
        let transform_labels = pairs.iter().map(|p| p.transform_label).collect();
        ProbeDataset::split(x, object_labels, transform_labels, seed)
    }
}
