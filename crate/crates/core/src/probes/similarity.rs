//! Pairwise cosine similarity of transition deltas, grouped by which
//! object changed and by which transform was applied.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::models::WorldModel;
use crate::numerics::checkpoint::write_record;
use crate::numerics::Array;
use crate::probes::delta::delta_vectors;
use crate::worlds::ProbePair;

#[derive(Clone, Debug)]
pub struct SimilarityReport {
    /// Row-major [kept, kept] cosine matrix over non-zero deltas.
    pub matrix: Vec<f32>,
    /// Original pair index of each matrix row.
    pub kept: Vec<usize>,
    pub object_labels: Vec<usize>,
    pub transform_labels: Vec<usize>,
    pub intra_object_mean: f64,
    pub intra_action_mean: f64,
    /// Pairs dropped because their delta was identically zero.
    pub excluded_zero: usize,
}

impl SimilarityReport {
    pub fn rows(&self) -> usize {
        self.kept.len()
    }

    /// Row order sorted by object label (stable in original index).
    pub fn object_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rows()).collect();
        order.sort_by_key(|&i| (self.object_labels[i], i));
        order
    }

    /// Row order sorted by transform label (stable in original index).
    pub fn action_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rows()).collect();
        order.sort_by_key(|&i| (self.transform_labels[i], i));
        order
    }

    fn reordered(&self, order: &[usize]) -> Vec<f32> {
        let n = self.rows();
        let mut out = vec![0.0f32; n * n];
        for (r, &i) in order.iter().enumerate() {
            for (c, &j) in order.iter().enumerate() {
                out[r * n + c] = self.matrix[i * n + j];
            }
        }
        out
    }
}

/// Mean over distinct pairs sharing a label; NaN when no such pair exists.
fn intra_mean(matrix: &[f32], labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] == labels[j] {
                total += matrix[i * n + j] as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

/// Cosine similarity analysis over raw delta vectors.
pub fn similarity_from_deltas(
    deltas: &[Vec<f32>],
    object_labels: &[usize],
    transform_labels: &[usize],
) -> Result<SimilarityReport> {
    if deltas.len() != object_labels.len() || deltas.len() != transform_labels.len() {
        return Err(CoreError::invalid("similarity_from_deltas", "label count mismatch"));
    }
    if deltas.len() < 2 {
        return Err(CoreError::invalid("similarity_from_deltas", "need at least two pairs"));
    }

    let norms: Vec<f64> = deltas
        .iter()
        .map(|d| d.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .collect();
    let kept: Vec<usize> = (0..deltas.len()).filter(|&i| norms[i] > 0.0).collect();
    let excluded_zero = deltas.len() - kept.len();
    if kept.len() < 2 {
        return Err(CoreError::invalid(
            "similarity_from_deltas",
            "fewer than two non-zero deltas",
        ));
    }

    let n = kept.len();
    let mut matrix = vec![0.0f32; n * n];
    for a in 0..n {
        let (ia, na) = (kept[a], norms[kept[a]]);
        matrix[a * n + a] = 1.0;
        for b in a + 1..n {
            let (ib, nb) = (kept[b], norms[kept[b]]);
            let dot: f64 = deltas[ia]
                .iter()
                .zip(&deltas[ib])
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
            let cos = (dot / (na * nb)) as f32;
            matrix[a * n + b] = cos;
            matrix[b * n + a] = cos;
        }
    }

    let object_labels: Vec<usize> = kept.iter().map(|&i| object_labels[i]).collect();
    let transform_labels: Vec<usize> = kept.iter().map(|&i| transform_labels[i]).collect();
    let intra_object_mean = intra_mean(&matrix, &object_labels);
    let intra_action_mean = intra_mean(&matrix, &transform_labels);
    Ok(SimilarityReport {
        matrix,
        kept,
        object_labels,
        transform_labels,
        intra_object_mean,
        intra_action_mean,
        excluded_zero,
    })
}

/// Full similarity probe for a model on labeled pairs.
pub fn transition_similarity(model: &WorldModel, pairs: &[ProbePair]) -> Result<SimilarityReport> {
    let deltas = delta_vectors(model, pairs)?;
    let object_labels: Vec<usize> = pairs.iter().map(|p| p.object_label).collect();
    let transform_labels: Vec<usize> = pairs.iter().map(|p| p.transform_label).collect();
    similarity_from_deltas(&deltas, &object_labels, &transform_labels)
}

#[derive(Serialize, Deserialize)]
struct SimilarityHeader {
    ordering: String,
    rows: usize,
    object_labels: Vec<usize>,
    transform_labels: Vec<usize>,
    intra_object_mean: f64,
    intra_action_mean: f64,
    excluded_zero: usize,
}

/// Writes `similarity_object.{bin,json}` and `similarity_action.{bin,json}`:
/// the matrix reordered by each grouping, with a JSON header of the row
/// labels in that order.
pub fn write_similarity(dir: &Path, report: &SimilarityReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, order) in
        [("object", report.object_order()), ("action", report.action_order())]
    {
        let n = report.rows();
        let header = SimilarityHeader {
            ordering: name.to_string(),
            rows: n,
            object_labels: order.iter().map(|&i| report.object_labels[i]).collect(),
            transform_labels: order.iter().map(|&i| report.transform_labels[i]).collect(),
            intra_object_mean: report.intra_object_mean,
            intra_action_mean: report.intra_action_mean,
            excluded_zero: report.excluded_zero,
        };
        let json = serde_json::to_string_pretty(&header)?;
        std::fs::write(dir.join(format!("similarity_{name}.json")), json)?;
        let arr = Array::from_vec(&[n, n], report.reordered(&order))?;
        let mut w = BufWriter::new(File::create(dir.join(format!("similarity_{name}.bin")))?);
        write_record(&mut w, "similarity", &arr)?;
    }
    Ok(())
}
