//! Object separability: can a sparse linear classifier read off which
//! object an intervention changed from the latent delta alone?

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::models::{ModelPreset, WorldModel};
use crate::probes::delta::ProbeDataset;
use crate::probes::linear::{accuracy, fit_l1_logistic, Standardizer, MAX_ITERS, PENALTY_GRID};
use crate::util::derive_seed;
use crate::worlds::ProbePair;

const CV_FOLDS: usize = 5;

/// Minimum pairs per object label for a meaningful split.
pub const MIN_PAIRS_PER_LABEL: usize = 20;

fn standardized(x: &[Vec<f32>], idx: &[usize], stats: &Standardizer) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| stats.apply(&x[i])).collect()
}

fn labels_of(idx: &[usize], labels: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Stratified fold assignment: per class, shuffled round-robin.
fn cv_folds(train: &[usize], labels: &[usize], classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (pos, &i) in train.iter().enumerate() {
        by_class[labels[i]].push(pos);
    }
    let mut fold = vec![0usize; train.len()];
    for group in &mut by_class {
        group.shuffle(rng);
        for (j, &pos) in group.iter().enumerate() {
            fold[pos] = j % CV_FOLDS;
        }
    }
    fold
}

/// Mean validation accuracy of `penalty` over stratified folds.
fn cv_score(ds: &ProbeDataset, fold: &[usize], penalty: f64) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..CV_FOLDS {
        let fit_idx: Vec<usize> =
            ds.train.iter().zip(fold).filter(|&(_, &ff)| ff != f).map(|(&i, _)| i).collect();
        let val_idx: Vec<usize> =
            ds.train.iter().zip(fold).filter(|&(_, &ff)| ff == f).map(|(&i, _)| i).collect();
        if fit_idx.is_empty() || val_idx.is_empty() {
            return Err(CoreError::invalid("cv_score", "empty cross-validation fold"));
        }
        let stats = Standardizer::fit(&ds.x, &fit_idx)?;
        let probe = fit_l1_logistic(
            &standardized(&ds.x, &fit_idx, &stats),
            &labels_of(&fit_idx, &ds.object_labels),
            ds.classes,
            penalty,
            MAX_ITERS,
        )?;
        total += accuracy(
            &probe,
            &standardized(&ds.x, &val_idx, &stats),
            &labels_of(&val_idx, &ds.object_labels),
        );
    }
    Ok(total / CV_FOLDS as f64)
}

/// Test accuracy of the penalty-selected probe on a pre-split dataset.
pub fn separability_from_dataset(ds: &ProbeDataset, seed: u64) -> Result<f64> {
    for split in [&ds.train, &ds.test] {
        let mut present = vec![false; ds.classes];
        for &i in split {
            present[ds.object_labels[i]] = true;
        }
        if let Some(missing) = present.iter().position(|&p| !p) {
            return Err(CoreError::invalid(
                "separability",
                format!("label {missing} missing from a split"),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "probe/cv"));
    let fold = cv_folds(&ds.train, &ds.object_labels, ds.classes, &mut rng);
    // Ties go to the larger penalty: prefer the sparser classifier.
    let mut best = (f64::NEG_INFINITY, 0.0f64);
    for &penalty in &PENALTY_GRID {
        let score = cv_score(ds, &fold, penalty)?;
        if score > best.0 || (score == best.0 && penalty > best.1) {
            best = (score, penalty);
        }
    }

    let stats = Standardizer::fit(&ds.x, &ds.train)?;
    let probe = fit_l1_logistic(
        &standardized(&ds.x, &ds.train, &stats),
        &labels_of(&ds.train, &ds.object_labels),
        ds.classes,
        best.1,
        MAX_ITERS,
    )?;
    Ok(accuracy(
        &probe,
        &standardized(&ds.x, &ds.test, &stats),
        &labels_of(&ds.test, &ds.object_labels),
    ))
}

/// Full separability probe for a model on labeled pairs.
pub fn separability(model: &WorldModel, pairs: &[ProbePair], seed: u64) -> Result<f64> {
    let mut counts = std::collections::BTreeMap::new();
    for p in pairs {
        *counts.entry(p.object_label).or_insert(0usize) += 1;
    }
    if let Some((&label, &n)) = counts.iter().find(|(_, &n)| n < MIN_PAIRS_PER_LABEL) {
        return Err(CoreError::invalid(
            "separability",
            format!("label {label} has {n} pairs, need {MIN_PAIRS_PER_LABEL}"),
        ));
    }
    let ds = ProbeDataset::from_pairs(model, pairs, seed)?;
    separability_from_dataset(&ds, seed)
}

/// Separability of freshly initialized, untrained encoders, one per seed.
pub fn random_init_baseline(
    preset: &ModelPreset,
    resolution: usize,
    pairs: &[ProbePair],
    seeds: &[u64],
) -> Result<Vec<(u64, f64)>> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut p = preset.clone();
        p.seed = seed;
        let model = WorldModel::init(&p, resolution)?;
        out.push((seed, separability(&model, pairs, seed)?));
    }
    Ok(out)
}
