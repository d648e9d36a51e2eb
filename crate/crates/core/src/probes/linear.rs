//! L1-penalized multinomial logistic regression, fit by proximal gradient
//! descent with backtracking line search. All arithmetic is f64.

use crate::error::{CoreError, Result};

/// Candidate penalty strengths for cross-validation.
pub const PENALTY_GRID: [f64; 3] = [0.1, 0.01, 0.001];

/// Proximal gradient iteration budget.
pub const MAX_ITERS: usize = 2000;

/// Relative objective change below which iteration stops early.
const CONVERGENCE_TOL: f64 = 1e-10;

/// Initial and maximum backtracking step sizes.
const STEP_INIT: f64 = 1.0;
const STEP_GROW: f64 = 1.1;
const STEP_SHRINK: f64 = 0.5;
const STEP_MAX: f64 = 16.0;

/// Per-feature affine map fixed from a reference split.
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Mean and standard deviation of the rows selected by `idx`.
    /// Constant features get unit scale so they standardize to zero.
    pub fn fit(x: &[Vec<f32>], idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(CoreError::invalid("Standardizer::fit", "empty index set"));
        }
        let d = x[idx[0]].len();
        let n = idx.len() as f64;
        let mut mean = vec![0.0f64; d];
        for &i in idx {
            for (m, &v) in mean.iter_mut().zip(&x[i]) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0f64; d];
        for &i in idx {
            for ((s, &v), m) in var.iter_mut().zip(&x[i]).zip(&mean) {
                let c = v as f64 - m;
                *s += c * c;
            }
        }
        let std = var
            .iter()
            .map(|&s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, v: &[f32]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (m, s))| (x as f64 - m) / s)
            .collect()
    }
}

/// Trained multinomial classifier with an L1 penalty on the weights.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    /// Row-major [classes, features].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub penalty: f64,
    pub classes: usize,
    pub features: usize,
}

impl LinearProbe {
    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.scores(x);
        scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(k, _)| k)
            .unwrap()
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let w = &self.weights[k * self.features..(k + 1) * self.features];
                self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Fraction of rows the probe classifies correctly.
pub fn accuracy(probe: &LinearProbe, x: &[Vec<f64>], y: &[usize]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let hits = x.iter().zip(y).filter(|(xi, &yi)| probe.predict(xi) == yi).count();
    hits as f64 / x.len() as f64
}

struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    features: usize,
}

impl Objective<'_> {
    /// Mean negative log-likelihood and its gradient in (weights, bias).
    fn nll_grad(&self, w: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let (k, d) = (self.classes, self.features);
        let n = self.x.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0f64; k * d];
        let mut gb = vec![0.0f64; k];
        let mut scores = vec![0.0f64; k];
        for (xi, &yi) in self.x.iter().zip(self.y) {
            for (c, s) in scores.iter_mut().enumerate() {
                *s = b[c] + w[c * d..(c + 1) * d].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            loss += lse - scores[yi];
            for c in 0..k {
                let p = (scores[c] - lse).exp();
                let coef = (p - if c == yi { 1.0 } else { 0.0 }) / n;
                gb[c] += coef;
                for (g, &v) in gw[c * d..(c + 1) * d].iter_mut().zip(xi) {
                    *g += coef * v;
                }
            }
        }
        (loss / n, gw, gb)
    }

    /// Mean negative log-likelihood only.
    fn nll(&self, w: &[f64], b: &[f64]) -> f64 {
        let (k, d) = (self.classes, self.features);
        let mut loss = 0.0;
        let mut scores = vec![0.0f64; k];
        for (xi, &yi) in self.x.iter().zip(self.y) {
            for (c, s) in scores.iter_mut().enumerate() {
                *s = b[c] + w[c * d..(c + 1) * d].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            loss += lse - scores[yi];
        }
        loss / self.x.len() as f64
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Fits the classifier on standardized rows. `y` entries must lie in
/// `0..classes`. The bias is not penalized.
pub fn fit_l1_logistic(
    x: &[Vec<f64>],
    y: &[usize],
    classes: usize,
    penalty: f64,
    max_iters: usize,
) -> Result<LinearProbe> {
    if x.is_empty() || x.len() != y.len() {
        return Err(CoreError::invalid("fit_l1_logistic", "empty or mismatched inputs"));
    }
    if penalty < 0.0 {
        return Err(CoreError::invalid("fit_l1_logistic", "negative penalty"));
    }
    if let Some(&bad) = y.iter().find(|&&yi| yi >= classes) {
        return Err(CoreError::invalid("fit_l1_logistic", format!("label {bad} >= {classes}")));
    }
    let features = x[0].len();
    let obj = Objective { x, y, classes, features };

    let mut w = vec![0.0f64; classes * features];
    let mut b = vec![0.0f64; classes];
    let mut step = STEP_INIT;
    let mut prev_obj = f64::INFINITY;

    for _ in 0..max_iters {
        let (f0, gw, gb) = obj.nll_grad(&w, &b);
        // Backtracking: shrink until the quadratic upper bound holds.
        let (w_new, b_new, f_new) = loop {
            let wt: Vec<f64> = w
                .iter()
                .zip(&gw)
                .map(|(&wi, &gi)| soft_threshold(wi - step * gi, step * penalty))
                .collect();
            let bt: Vec<f64> = b.iter().zip(&gb).map(|(&bi, &gi)| bi - step * gi).collect();
            let ft = obj.nll(&wt, &bt);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((&n_, &o), &g) in wt.iter().zip(&w).zip(&gw) {
                let d = n_ - o;
                lin += g * d;
                sq += d * d;
            }
            for ((&n_, &o), &g) in bt.iter().zip(&b).zip(&gb) {
                let d = n_ - o;
                lin += g * d;
                sq += d * d;
            }
            if ft <= f0 + lin + sq / (2.0 * step) || step < 1e-12 {
                break (wt, bt, ft);
            }
            step *= STEP_SHRINK;
        };
        w = w_new;
        b = b_new;
        let total = f_new + penalty * w.iter().map(|v| v.abs()).sum::<f64>();
        if (prev_obj - total).abs() <= CONVERGENCE_TOL * total.abs().max(1.0) {
            break;
        }
        prev_obj = total;
        step = (step * STEP_GROW).min(STEP_MAX);
    }

    if w.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(CoreError::invalid("fit_l1_logistic", "non-finite coefficients"));
    }
    Ok(LinearProbe { weights: w, bias: b, penalty, classes, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_two_class_problem_is_fit_perfectly() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let c = (i % 2) as f64 * 2.0 - 1.0;
                vec![c + (i as f64 * 0.01), c * 0.5]
            })
            .collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let probe = fit_l1_logistic(&x, &y, 2, 0.001, MAX_ITERS).unwrap();
        assert_eq!(accuracy(&probe, &x, &y), 1.0);
    }

    #[test]
    fn heavy_penalty_zeroes_the_weights() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let probe = fit_l1_logistic(&x, &y, 2, 1e4, MAX_ITERS).unwrap();
        assert!(probe.weights.iter().all(|&w| w == 0.0), "weights {:?}", probe.weights);
    }

    #[test]
    fn soft_threshold_matches_its_definition() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
    }

    #[test]
    fn standardizer_centers_and_scales_the_reference_rows() {
        let x = vec![vec![1.0f32, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        let idx = [0usize, 1, 2];
        let s = Standardizer::fit(&x, &idx).unwrap();
        assert!((s.mean[0] - 3.0).abs() < 1e-12);
        // The constant feature keeps unit scale.
        assert_eq!(s.std[1], 1.0);
        let z = s.apply(&x[0]);
        assert!((z[1]).abs() < 1e-12);
        let zs: Vec<Vec<f64>> = idx.iter().map(|&i| s.apply(&x[i])).collect();
        let mean: f64 = zs.iter().map(|z| z[0]).sum::<f64>() / 3.0;
        let var: f64 = zs.iter().map(|z| (z[0] - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
