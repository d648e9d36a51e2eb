//! Finite-difference gradient checking against a naive f64 reference.
//!
//! The reference ops here deliberately share no code with the production
//! kernels: convolutions are direct nested loops rather than im2col and all
//! arithmetic is f64, so they double as an independent oracle for both
//! forward values and gradients.

use crate::error::Result;
use crate::numerics::array::Array;
use crate::numerics::graph::{Graph, NodeId};

/// Dense f64 tensor for reference computations.
#[derive(Clone, Debug)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        T64 { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        T64 { shape, data: vec![0.0; n] }
    }

    pub fn from_array(a: &Array) -> Self {
        T64 { shape: a.shape().to_vec(), data: a.data().iter().map(|&v| v as f64).collect() }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    fn lead(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }
}

pub fn add(a: &T64, b: &T64) -> T64 {
    assert_eq!(a.shape, b.shape);
    T64::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

pub fn sub(a: &T64, b: &T64) -> T64 {
    assert_eq!(a.shape, b.shape);
    T64::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect())
}

pub fn relu(x: &T64) -> T64 {
    T64::new(x.shape.clone(), x.data.iter().map(|&v| v.max(0.0)).collect())
}

pub fn gelu(x: &T64) -> T64 {
    const C: f64 = 0.7978845608028654;
    let f = |v: f64| 0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh());
    T64::new(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect())
}

pub fn affine(x: &T64, scale: f64, shift: f64) -> T64 {
    T64::new(x.shape.clone(), x.data.iter().map(|&v| scale * v + shift).collect())
}

/// x [..., k] times w [k, n].
pub fn matmul(x: &T64, w: &T64) -> T64 {
    let (k, n) = (w.shape[0], w.shape[1]);
    assert_eq!(x.last_dim(), k);
    let m = x.lead();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let xv = x.data[i * k + l];
            for j in 0..n {
                out[i * n + j] += xv * w.data[l * n + j];
            }
        }
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = n;
    T64::new(shape, out)
}

/// a [..., m, k] times b [..., k, n] (or [..., n, k] when trans_b).
pub fn batch_matmul(a: &T64, b: &T64, trans_b: bool) -> T64 {
    let ra = a.shape.len();
    let (m, k) = (a.shape[ra - 2], a.shape[ra - 1]);
    let n = if trans_b { b.shape[ra - 2] } else { b.shape[ra - 1] };
    let batches: usize = a.shape[..ra - 2].iter().product();
    let mut out = vec![0.0; batches * m * n];
    for t in 0..batches {
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    let bv = if trans_b {
                        b.data[t * n * k + j * k + l]
                    } else {
                        b.data[t * k * n + l * n + j]
                    };
                    s += a.data[t * m * k + i * k + l] * bv;
                }
                out[t * m * n + i * n + j] = s;
            }
        }
    }
    let mut shape = a.shape.clone();
    shape[ra - 2] = m;
    shape[ra - 1] = n;
    T64::new(shape, out)
}

pub fn bias_add(x: &T64, b: &T64) -> T64 {
    let d = b.shape[0];
    assert_eq!(x.last_dim(), d);
    let mut out = x.data.clone();
    for (i, o) in out.iter_mut().enumerate() {
        *o += b.data[i % d];
    }
    T64::new(x.shape.clone(), out)
}

/// Valid convolution, x [b,h,w,c] with kernel [k,k,c,o], direct loops.
pub fn conv2d(x: &T64, w: &T64, stride: usize) -> T64 {
    let (b, h, wd, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (k, o) = (w.shape[0], w.shape[3]);
    let oh = (h - k) / stride + 1;
    let ow = (wd - k) / stride + 1;
    let mut out = T64::zeros(vec![b, oh, ow, o]);
    for bi in 0..b {
        for y in 0..oh {
            for xo in 0..ow {
                for oc in 0..o {
                    let mut s = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            for ic in 0..c {
                                let xv = x.data
                                    [((bi * h + y * stride + dy) * wd + xo * stride + dx) * c + ic];
                                let wv = w.data[((dy * k + dx) * c + ic) * o + oc];
                                s += xv * wv;
                            }
                        }
                    }
                    out.data[((bi * oh + y) * ow + xo) * o + oc] = s;
                }
            }
        }
    }
    out
}

/// Transposed convolution, x [b,h,w,c] with kernel [c,k,k,o], direct scatter.
pub fn conv_t2d(x: &T64, w: &T64, stride: usize, out_pad: usize) -> T64 {
    let (b, h, wd, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (k, o) = (w.shape[1], w.shape[3]);
    let oh = (h - 1) * stride + k + out_pad;
    let ow = (wd - 1) * stride + k + out_pad;
    let mut out = T64::zeros(vec![b, oh, ow, o]);
    for bi in 0..b {
        for y in 0..h {
            for xi in 0..wd {
                for ic in 0..c {
                    let xv = x.data[((bi * h + y) * wd + xi) * c + ic];
                    for dy in 0..k {
                        for dx in 0..k {
                            for oc in 0..o {
                                let wv = w.data[((ic * k + dy) * k + dx) * o + oc];
                                out.data[((bi * oh + y * stride + dy) * ow + xi * stride + dx) * o
                                    + oc] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn layer_norm(x: &T64, gain: &T64, bias: &T64, eps: f64) -> T64 {
    let d = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for (r, row) in x.data.chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for i in 0..d {
            out[r * d + i] = (row[i] - mean) * rstd * gain.data[i] + bias.data[i];
        }
    }
    T64::new(x.shape.clone(), out)
}

pub fn softmax(x: &T64) -> T64 {
    let d = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for (r, row) in x.data.chunks(d).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for i in 0..d {
            out[r * d + i] = exps[i] / sum;
        }
    }
    T64::new(x.shape.clone(), out)
}

pub fn causal_softmax(x: &T64) -> T64 {
    let t = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for (blk, block) in x.data.chunks(t * t).enumerate() {
        for i in 0..t {
            let row = &block[i * t..i * t + i + 1];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                out[blk * t * t + i * t + j] = e / sum;
            }
        }
    }
    T64::new(x.shape.clone(), out)
}

pub fn row_sumsq(x: &T64) -> T64 {
    let d = x.last_dim();
    let out: Vec<f64> = x.data.chunks(d).map(|row| row.iter().map(|v| v * v).sum()).collect();
    T64::new(x.shape[..x.shape.len() - 1].to_vec(), out)
}

pub fn sum_all(x: &T64) -> f64 {
    x.data.iter().sum()
}

pub fn mean_all(x: &T64) -> f64 {
    x.data.iter().sum::<f64>() / x.numel().max(1) as f64
}

pub fn concat_last(a: &T64, b: &T64) -> T64 {
    let (da, db) = (a.last_dim(), b.last_dim());
    let rows = a.lead();
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(&a.data[r * da..(r + 1) * da]);
        out.extend_from_slice(&b.data[r * db..(r + 1) * db]);
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = da + db;
    T64::new(shape, out)
}

pub fn slice_last(x: &T64, start: usize, len: usize) -> T64 {
    let d = x.last_dim();
    let rows = x.lead();
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&x.data[r * d + start..r * d + start + len]);
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = len;
    T64::new(shape, out)
}

pub fn reshape(x: &T64, shape: Vec<usize>) -> T64 {
    T64::new(shape, x.data.clone())
}

pub fn batch_transpose(x: &T64) -> T64 {
    let rank = x.shape.len();
    let (r, c) = (x.shape[rank - 2], x.shape[rank - 1]);
    let batches: usize = x.shape[..rank - 2].iter().product();
    let mut out = vec![0.0; x.numel()];
    for t in 0..batches {
        for i in 0..r {
            for j in 0..c {
                out[t * r * c + j * r + i] = x.data[t * r * c + i * c + j];
            }
        }
    }
    let mut shape = x.shape.clone();
    shape[rank - 2] = c;
    shape[rank - 1] = r;
    T64::new(shape, out)
}

pub fn transpose12(x: &T64) -> T64 {
    let (a, b, c, d) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut out = vec![0.0; x.numel()];
    for ai in 0..a {
        for bi in 0..b {
            for ci in 0..c {
                for di in 0..d {
                    out[((ai * c + ci) * b + bi) * d + di] =
                        x.data[((ai * b + bi) * c + ci) * d + di];
                }
            }
        }
    }
    T64::new(vec![a, c, b, d], out)
}

pub fn gather_rows(x: &T64, idx: &[usize]) -> T64 {
    let row: usize = x.shape[1..].iter().product();
    let mut out = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        out.extend_from_slice(&x.data[i * row..(i + 1) * row]);
    }
    let mut shape = x.shape.clone();
    shape[0] = idx.len();
    T64::new(shape, out)
}

pub fn scatter_sum_rows(x: &T64, idx: &[usize], out_rows: usize) -> T64 {
    let row: usize = x.shape[1..].iter().product();
    let mut out = vec![0.0; out_rows * row];
    for (i, &dst) in idx.iter().enumerate() {
        for j in 0..row {
            out[dst * row + j] += x.data[i * row + j];
        }
    }
    let mut shape = x.shape.clone();
    shape[0] = out_rows;
    T64::new(shape, out)
}

pub fn scale_rows(x: &T64, s: &T64) -> T64 {
    let d = x.last_dim();
    let mut out = vec![0.0; x.numel()];
    for (r, row) in x.data.chunks(d).enumerate() {
        for i in 0..d {
            out[r * d + i] = row[i] * s.data[r];
        }
    }
    T64::new(x.shape.clone(), out)
}

/// Outcome of one gradient check, carrying the worst element seen.
#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub forward_rel_err: f64,
}

/// Checks analytic gradients of a graph-built scalar against central
/// differences of an independently written f64 reference.
///
/// `build` constructs the loss from constant leaves bound to `inputs`;
/// `reference` computes the same scalar from f64 copies of the inputs. Fails
/// with a description of the first offending element.
pub fn check_grads<FB, FR>(
    inputs: &[Array],
    build: FB,
    reference: FR,
    eps: f64,
    tol: f64,
) -> std::result::Result<GradReport, String>
where
    FB: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    FR: Fn(&[T64]) -> f64,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|a| g.constant(a.clone())).collect();
    let loss = build(&mut g, &ids).map_err(|e| format!("build failed: {e}"))?;
    if g.value(loss).numel() != 1 {
        return Err("loss is not scalar".into());
    }
    let v32 = g.value(loss).item() as f64;
    let base: Vec<T64> = inputs.iter().map(T64::from_array).collect();
    let vref = reference(&base);
    let fwd_err = (v32 - vref).abs() / vref.abs().max(1.0);
    if fwd_err > 1e-4 {
        return Err(format!("forward mismatch: graph {v32} vs reference {vref}"));
    }
    let analytic = g.grads_wrt(loss, &ids).map_err(|e| format!("backward failed: {e}"))?;

    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = base.to_vec();
            plus[i].data[j] += eps;
            let mut minus = base.to_vec();
            minus[i].data[j] -= eps;
            let numeric = (reference(&plus) - reference(&minus)) / (2.0 * eps);
            let a = analytic[i].data()[j] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max(rel);
            if rel > tol {
                return Err(format!(
                    "input {i} element {j}: analytic {a} vs numeric {numeric} (rel {rel:.3e})"
                ));
            }
        }
    }
    Ok(GradReport { max_rel_err: max_rel, forward_rel_err: fwd_err })
}

/// Uniform draw over [-1, -lo] and [lo, 1], keeping values away from the
/// kinks of relu-like ops so finite differences stay two-sided.
pub fn sample_away_from_zero(rng: &mut rand_chacha::ChaCha8Rng, lo: f32, shape: Vec<usize>) -> Array {
    use rand::Rng;
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(lo..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Array::from_vec(&shape, data).expect("shape matches")
}
