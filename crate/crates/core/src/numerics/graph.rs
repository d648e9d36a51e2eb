//! Reverse-mode autodiff on a flat tape of nodes.
//!
//! A `Graph` is built per training step: leaves are constants or clones of
//! `ParamStore` entries, interior nodes record the op and its inputs, and
//! `backward` walks the tape in reverse creation order, accumulating
//! parameter gradients back into the store.

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::numerics::kernels::{self, ConvGeom, ConvTGeom};
use crate::numerics::params::ParamStore;

/// Handle to a node in a `Graph`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

const LN_EPS: f32 = 1e-5;

#[derive(Clone)]
enum Op {
    Leaf,
    Param(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Affine { x: NodeId, scale: f32 },
    Detach,
    Matmul(NodeId, NodeId),
    BatchMatmul { a: NodeId, b: NodeId, trans_b: bool },
    BiasAdd(NodeId, NodeId),
    Conv2d { x: NodeId, w: NodeId, geom: ConvGeom },
    ConvT2d { x: NodeId, w: NodeId, geom: ConvTGeom },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    Softmax(NodeId),
    CausalSoftmax(NodeId),
    RowSumSq(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    ConcatLast(NodeId, NodeId),
    SliceLast { x: NodeId, start: usize },
    Reshape(NodeId),
    BatchTranspose(NodeId),
    Transpose12(NodeId),
    GatherRows { x: NodeId, idx: Vec<usize> },
    ScatterSumRows { x: NodeId, idx: Vec<usize> },
    ScaleRows { x: NodeId, s: NodeId },
}

struct Node {
    value: Array,
    op: Op,
}

/// Computation tape. Create one per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a constant leaf (inputs, targets, masks).
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter from the store as a leaf. Gradients flow back
    /// to the store on `backward`; binding the same name twice accumulates.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let slot = store.lookup(name)?;
        Ok(self.push(store.value_at(slot).clone(), Op::Param(slot)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same("add", a, b)?;
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same("sub", a, b)?;
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::Sub(a, b)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f32> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Array::from_vec(&shape, out).expect("same shape"), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f32> = self.value(x).data().iter().map(|&v| gelu_f(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Array::from_vec(&shape, out).expect("same shape"), Op::Gelu(x))
    }

    /// Elementwise scale * x + shift.
    pub fn affine(&mut self, x: NodeId, scale: f32, shift: f32) -> NodeId {
        let out: Vec<f32> = self.value(x).data().iter().map(|v| scale * v + shift).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Array::from_vec(&shape, out).expect("same shape"), Op::Affine { x, scale })
    }

    /// Identity forward, blocks gradient flow backward.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, Op::Detach)
    }

    /// a [..., k] times b [k, n] -> [..., n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() < 1 || bv.rank() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (av.lead_numel(), bv.shape()[0], bv.shape()[1]);
        let mut out = vec![0.0f32; m * n];
        kernels::sgemm_nn(m, k, n, av.data(), bv.data(), &mut out, 0.0);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = n;
        Ok(self.push(Array::from_vec(&shape, out)?, Op::Matmul(a, b)))
    }

    /// a [..., m, k] times b [..., k, n] -> [..., m, n], matching leading dims.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.batch_matmul_impl(a, b, false)
    }

    /// a [..., m, k] times transpose of b [..., n, k] -> [..., m, n].
    pub fn batch_matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.batch_matmul_impl(a, b, true)
    }

    fn batch_matmul_impl(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, rb) = (av.rank(), bv.rank());
        if ra < 2 || rb != ra || av.shape()[..ra - 2] != bv.shape()[..rb - 2] {
            return Err(self.shape_err("batch_matmul", a, b));
        }
        let (m, k) = (av.shape()[ra - 2], av.shape()[ra - 1]);
        let (bk, n) = if trans_b {
            (bv.shape()[rb - 1], bv.shape()[rb - 2])
        } else {
            (bv.shape()[rb - 2], bv.shape()[rb - 1])
        };
        if bk != k {
            return Err(self.shape_err("batch_matmul", a, b));
        }
        let batches: usize = av.shape()[..ra - 2].iter().product();
        let mut out = vec![0.0f32; batches * m * n];
        for i in 0..batches {
            let asl = &av.data()[i * m * k..(i + 1) * m * k];
            let bsl = &bv.data()[i * k * n..(i + 1) * k * n];
            let osl = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::sgemm_nt(m, k, n, asl, bsl, osl, 0.0);
            } else {
                kernels::sgemm_nn(m, k, n, asl, bsl, osl, 0.0);
            }
        }
        let mut shape = av.shape().to_vec();
        shape[ra - 2] = m;
        shape[ra - 1] = n;
        Ok(self.push(Array::from_vec(&shape, out)?, Op::BatchMatmul { a, b, trans_b }))
    }

    /// x [..., d] plus bias [d] broadcast over leading dims.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.rank() < 1 || bv.rank() != 1 || xv.last_dim() != bv.shape()[0] {
            return Err(self.shape_err("bias_add", x, b));
        }
        let d = bv.shape()[0];
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, bi) in row.iter_mut().zip(bv.data()) {
                *o += bi;
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::BiasAdd(x, b)))
    }

    /// Valid convolution of x [b,h,w,c] with w [k,k,c,o] at `stride`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.rank() != 4 || wv.rank() != 4 || wv.shape()[0] != wv.shape()[1] {
            return Err(self.shape_err("conv2d", x, w));
        }
        let (batch, in_h, in_w, in_c) =
            (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (kernel, out_c) = (wv.shape()[0], wv.shape()[3]);
        if wv.shape()[2] != in_c {
            return Err(self.shape_err("conv2d", x, w));
        }
        let out_h = kernels::conv_out_size(in_h, kernel, stride)
            .ok_or_else(|| CoreError::invalid("conv2d", "kernel larger than input"))?;
        let out_w = kernels::conv_out_size(in_w, kernel, stride)
            .ok_or_else(|| CoreError::invalid("conv2d", "kernel larger than input"))?;
        let geom = ConvGeom { batch, in_h, in_w, in_c, kernel, stride, out_h, out_w, out_c };
        let mut out = vec![0.0f32; batch * out_h * out_w * out_c];
        kernels::conv2d_forward(xv.data(), wv.data(), &geom, &mut out);
        Ok(self.push(
            Array::from_vec(&[batch, out_h, out_w, out_c], out)?,
            Op::Conv2d { x, w, geom },
        ))
    }

    /// Transposed convolution of x [b,h,w,c] with w [c,k,k,o] at `stride`,
    /// growing each spatial side to (n-1)*stride + k + out_pad.
    pub fn conv_t2d(&mut self, x: NodeId, w: NodeId, stride: usize, out_pad: usize) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.rank() != 4 || wv.rank() != 4 || wv.shape()[1] != wv.shape()[2] {
            return Err(self.shape_err("conv_t2d", x, w));
        }
        let (batch, in_h, in_w, in_c) =
            (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (kernel, out_c) = (wv.shape()[1], wv.shape()[3]);
        if wv.shape()[0] != in_c || stride == 0 || out_pad >= stride.max(kernel) {
            return Err(self.shape_err("conv_t2d", x, w));
        }
        let out_h = kernels::convt_out_size(in_h, kernel, stride, out_pad);
        let out_w = kernels::convt_out_size(in_w, kernel, stride, out_pad);
        let geom =
            ConvTGeom { batch, in_h, in_w, in_c, kernel, stride, out_pad, out_h, out_w, out_c };
        let mut out = vec![0.0f32; batch * out_h * out_w * out_c];
        kernels::convt2d_forward(xv.data(), wv.data(), &geom, &mut out);
        Ok(self.push(
            Array::from_vec(&[batch, out_h, out_w, out_c], out)?,
            Op::ConvT2d { x, w, geom },
        ))
    }

    /// Layer normalization over the last dim with learned gain and bias [d].
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.last_dim();
        if xv.rank() < 1 || gv.shape() != [d] || bv.shape() != [d] {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        let mut out = vec![0.0f32; xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS as f64).sqrt();
            for i in 0..d {
                let xh = ((row[i] as f64 - mean) * rstd) as f32;
                out[r * d + i] = xh * gv.data()[i] + bv.data()[i];
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::LayerNorm { x, gain, bias }))
    }

    /// Softmax over the last dim.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() < 1 {
            return Err(CoreError::invalid("softmax", "rank-0 input"));
        }
        let d = xv.last_dim();
        let mut out = vec![0.0f32; xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            softmax_row(row, &mut out[r * d..(r + 1) * d]);
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::Softmax(x)))
    }

    /// Softmax over the last dim of [..., t, t] score blocks where position i
    /// attends only to positions j <= i.
    pub fn causal_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let r = xv.rank();
        if r < 2 || xv.shape()[r - 1] != xv.shape()[r - 2] {
            return Err(CoreError::invalid("causal_softmax", "last two dims must be square"));
        }
        let t = xv.last_dim();
        let mut out = vec![0.0f32; xv.numel()];
        for (blk, block) in xv.data().chunks(t * t).enumerate() {
            for i in 0..t {
                let row = &block[i * t..i * t + i + 1];
                softmax_row(row, &mut out[blk * t * t + i * t..blk * t * t + i * t + i + 1]);
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::CausalSoftmax(x)))
    }

    /// Sum of squares over the last dim: [..., d] -> [...].
    pub fn row_sumsq(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() < 1 {
            return Err(CoreError::invalid("row_sumsq", "rank-0 input"));
        }
        let d = xv.last_dim();
        let out: Vec<f32> = xv
            .data()
            .chunks(d)
            .map(|row| row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() as f32)
            .collect();
        let shape = xv.shape()[..xv.rank() - 1].to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::RowSumSq(x)))
    }

    /// Sum of all elements to a scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        self.push(Array::scalar(s), Op::SumAll(x))
    }

    /// Mean of all elements to a scalar.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel().max(1) as f64;
        let s = (self.value(x).data().iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
        self.push(Array::scalar(s), Op::MeanAll(x))
    }

    /// Concatenation along the last dim; leading dims must match.
    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, rb) = (av.rank(), bv.rank());
        if ra < 1 || rb != ra || av.shape()[..ra - 1] != bv.shape()[..rb - 1] {
            return Err(self.shape_err("concat_last", a, b));
        }
        let (da, db) = (av.last_dim(), bv.last_dim());
        let rows = av.lead_numel();
        let mut out = vec![0.0f32; rows * (da + db)];
        for r in 0..rows {
            out[r * (da + db)..r * (da + db) + da]
                .copy_from_slice(&av.data()[r * da..(r + 1) * da]);
            out[r * (da + db) + da..(r + 1) * (da + db)]
                .copy_from_slice(&bv.data()[r * db..(r + 1) * db]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = da + db;
        Ok(self.push(Array::from_vec(&shape, out)?, Op::ConcatLast(a, b)))
    }

    /// Takes columns [start, start+len) of the last dim.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rank() < 1 || start + len > d || len == 0 {
            return Err(CoreError::invalid(
                "slice_last",
                format!("slice {start}..{} of dim {d}", start + len),
            ));
        }
        let rows = xv.lead_numel();
        let mut out = vec![0.0f32; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&xv.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        Ok(self.push(Array::from_vec(&shape, out)?, Op::SliceLast { x, start }))
    }

    /// Reinterprets the element buffer under a new shape of equal size.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Transposes the last two dims: [..., r, c] -> [..., c, r].
    pub fn batch_transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let rank = xv.rank();
        if rank < 2 {
            return Err(CoreError::invalid("batch_transpose", "needs rank >= 2"));
        }
        let (r, c) = (xv.shape()[rank - 2], xv.shape()[rank - 1]);
        let batches: usize = xv.shape()[..rank - 2].iter().product();
        let mut out = vec![0.0f32; xv.numel()];
        transpose_rc(xv.data(), &mut out, batches, r, c);
        let mut shape = xv.shape().to_vec();
        shape[rank - 2] = c;
        shape[rank - 1] = r;
        Ok(self.push(Array::from_vec(&shape, out)?, Op::BatchTranspose(x)))
    }

    /// Swaps dims 1 and 2 of a rank-4 array: [a,b,c,d] -> [a,c,b,d].
    pub fn transpose12(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(CoreError::invalid("transpose12", "needs rank 4"));
        }
        let s = xv.shape().to_vec();
        let mut out = vec![0.0f32; xv.numel()];
        transpose_mid(xv.data(), &mut out, s[0], s[1], s[2], s[3]);
        Ok(self.push(Array::from_vec(&[s[0], s[2], s[1], s[3]], out)?, Op::Transpose12(x)))
    }

    /// Picks rows of x [n, ...rest] by index: out[i] = x[idx[i]].
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() < 1 {
            return Err(CoreError::invalid("gather_rows", "rank-0 input"));
        }
        let n = xv.shape()[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(CoreError::invalid("gather_rows", format!("index {bad} >= {n} rows")));
        }
        let row = xv.numel() / n.max(1);
        let mut out = vec![0.0f32; idx.len() * row];
        for (i, &src) in idx.iter().enumerate() {
            out[i * row..(i + 1) * row].copy_from_slice(&xv.data()[src * row..(src + 1) * row]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = idx.len();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::GatherRows { x, idx }))
    }

    /// Sums rows of x [m, ...rest] into `out_rows` buckets: out[idx[i]] += x[i].
    pub fn scatter_sum_rows(&mut self, x: NodeId, idx: Vec<usize>, out_rows: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() < 1 || xv.shape()[0] != idx.len() {
            return Err(CoreError::invalid("scatter_sum_rows", "index length != rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(CoreError::invalid(
                "scatter_sum_rows",
                format!("index {bad} >= {out_rows} buckets"),
            ));
        }
        let row = xv.shape()[1..].iter().product::<usize>();
        let mut out = vec![0.0f32; out_rows * row];
        for (i, &dst) in idx.iter().enumerate() {
            for j in 0..row {
                out[dst * row + j] += xv.data()[i * row + j];
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = out_rows;
        Ok(self.push(Array::from_vec(&shape, out)?, Op::ScatterSumRows { x, idx }))
    }

    /// Scales each last-dim row of x [..., d] by the matching scalar in s [...].
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (xv, sv) = (self.value(x), self.value(s));
        if xv.rank() < 1 || sv.shape() != &xv.shape()[..xv.rank() - 1] {
            return Err(self.shape_err("scale_rows", x, s));
        }
        let d = xv.last_dim();
        let mut out = vec![0.0f32; xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let f = sv.data()[r];
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = v * f;
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Array::from_vec(&shape, out)?, Op::ScaleRows { x, s }))
    }

    /// Runs reverse-mode accumulation from scalar `loss` into the store.
    pub fn backward(self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward_pass(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(slot), Some(g)) = (&node.op, grad) {
                store.accumulate_grad(*slot, &g);
            }
        }
        Ok(())
    }

    /// Like `backward`, but returns gradients for the requested nodes instead
    /// of touching a store. Nodes the loss does not depend on get zeros.
    pub fn grads_wrt(self, loss: NodeId, wanted: &[NodeId]) -> Result<Vec<Array>> {
        let mut grads = self.backward_pass(loss)?;
        Ok(wanted
            .iter()
            .map(|id| {
                grads[id.0]
                    .take()
                    .unwrap_or_else(|| Array::zeros(self.nodes[id.0].value.shape()))
            })
            .collect())
    }

    fn backward_pass(&self, loss: NodeId) -> Result<Vec<Option<Array>>> {
        if self.value(loss).numel() != 1 {
            return Err(CoreError::invalid("backward", "loss must be scalar"));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::from_vec(self.value(loss).shape(), vec![1.0])?);
        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.step_backward(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        Ok(grads)
    }

    fn step_backward(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let acc = |grads: &mut [Option<Array>], id: NodeId, delta: Array| {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) | Op::Detach => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                let neg: Vec<f32> = g.data().iter().map(|v| -v).collect();
                acc(grads, *b, Array::from_vec(g.shape(), neg)?);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx: Vec<f32> = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                acc(grads, *x, Array::from_vec(xv.shape(), dx)?);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx: Vec<f32> = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gi)| gelu_df(v) * gi)
                    .collect();
                acc(grads, *x, Array::from_vec(xv.shape(), dx)?);
            }
            Op::Affine { x, scale, .. } => {
                let dx: Vec<f32> = g.data().iter().map(|v| scale * v).collect();
                acc(grads, *x, Array::from_vec(g.shape(), dx)?);
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.lead_numel(), bv.shape()[0], bv.shape()[1]);
                let mut ga = vec![0.0f32; m * k];
                kernels::sgemm_nt(m, n, k, g.data(), bv.data(), &mut ga, 0.0);
                acc(grads, *a, Array::from_vec(av.shape(), ga)?);
                let mut gb = vec![0.0f32; k * n];
                kernels::sgemm_tn(k, m, n, av.data(), g.data(), &mut gb, 0.0);
                acc(grads, *b, Array::from_vec(bv.shape(), gb)?);
            }
            Op::BatchMatmul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ra = av.rank();
                let (m, k) = (av.shape()[ra - 2], av.shape()[ra - 1]);
                let n = if *trans_b { bv.shape()[ra - 2] } else { bv.shape()[ra - 1] };
                let batches: usize = av.shape()[..ra - 2].iter().product();
                let mut ga = vec![0.0f32; av.numel()];
                let mut gb = vec![0.0f32; bv.numel()];
                for t in 0..batches {
                    let gs = &g.data()[t * m * n..(t + 1) * m * n];
                    let asl = &av.data()[t * m * k..(t + 1) * m * k];
                    let bsl = &bv.data()[t * k * n..(t + 1) * k * n];
                    let gasl = &mut ga[t * m * k..(t + 1) * m * k];
                    let gbsl = &mut gb[t * k * n..(t + 1) * k * n];
                    if *trans_b {
                        // out = a b^T: ga = g b, gb = g^T a
                        kernels::sgemm_nn(m, n, k, gs, bsl, gasl, 0.0);
                        kernels::sgemm_tn(n, m, k, gs, asl, gbsl, 0.0);
                    } else {
                        // out = a b: ga = g b^T, gb = a^T g
                        kernels::sgemm_nt(m, n, k, gs, bsl, gasl, 0.0);
                        kernels::sgemm_tn(k, m, n, asl, gs, gbsl, 0.0);
                    }
                }
                acc(grads, *a, Array::from_vec(av.shape(), ga)?);
                acc(grads, *b, Array::from_vec(bv.shape(), gb)?);
            }
            Op::BiasAdd(x, b) => {
                acc(grads, *x, g.clone());
                let d = self.value(*b).shape()[0];
                let mut gb = vec![0.0f64; d];
                for row in g.data().chunks(d) {
                    for (acc_i, &gi) in gb.iter_mut().zip(row) {
                        *acc_i += gi as f64;
                    }
                }
                let gb: Vec<f32> = gb.into_iter().map(|v| v as f32).collect();
                acc(grads, *b, Array::from_vec(&[d], gb)?);
            }
            Op::Conv2d { x, w, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut gx = vec![0.0f32; xv.numel()];
                kernels::conv2d_grad_input(g.data(), wv.data(), geom, &mut gx);
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
                let mut gw = vec![0.0f32; wv.numel()];
                kernels::conv2d_grad_weight(xv.data(), g.data(), geom, &mut gw);
                acc(grads, *w, Array::from_vec(wv.shape(), gw)?);
            }
            Op::ConvT2d { x, w, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut gx = vec![0.0f32; xv.numel()];
                kernels::convt2d_grad_input(g.data(), wv.data(), geom, &mut gx);
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
                let mut gw = vec![0.0f32; wv.numel()];
                kernels::convt2d_grad_weight(xv.data(), g.data(), geom, &mut gw);
                acc(grads, *w, Array::from_vec(wv.shape(), gw)?);
            }
            Op::LayerNorm { x, gain, bias } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let d = xv.last_dim();
                let rows = xv.lead_numel();
                let mut gx = vec![0.0f32; xv.numel()];
                let mut ggain = vec![0.0f64; d];
                let mut gbias = vec![0.0f64; d];
                for r in 0..rows {
                    let row = &xv.data()[r * d..(r + 1) * d];
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
                    let rstd = 1.0 / (var + LN_EPS as f64).sqrt();
                    let mut sum_dxh = 0.0f64;
                    let mut sum_dxh_xh = 0.0f64;
                    for i in 0..d {
                        let xh = (row[i] as f64 - mean) * rstd;
                        let dxh = grow[i] as f64 * gv.data()[i] as f64;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        ggain[i] += grow[i] as f64 * xh;
                        gbias[i] += grow[i] as f64;
                    }
                    for i in 0..d {
                        let xh = (row[i] as f64 - mean) * rstd;
                        let dxh = grow[i] as f64 * gv.data()[i] as f64;
                        gx[r * d + i] = (rstd
                            * (dxh - sum_dxh / d as f64 - xh * sum_dxh_xh / d as f64))
                            as f32;
                    }
                }
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
                let ggain: Vec<f32> = ggain.into_iter().map(|v| v as f32).collect();
                acc(grads, *gain, Array::from_vec(&[d], ggain)?);
                let gbias: Vec<f32> = gbias.into_iter().map(|v| v as f32).collect();
                acc(grads, *bias, Array::from_vec(&[d], gbias)?);
            }
            Op::Softmax(x) => {
                let pv = &self.nodes[i].value;
                let d = pv.last_dim();
                let mut gx = vec![0.0f32; pv.numel()];
                for r in 0..pv.lead_numel() {
                    let p = &pv.data()[r * d..(r + 1) * d];
                    let grow = &g.data()[r * d..(r + 1) * d];
                    softmax_row_backward(p, grow, &mut gx[r * d..(r + 1) * d]);
                }
                acc(grads, *x, Array::from_vec(pv.shape(), gx)?);
            }
            Op::CausalSoftmax(x) => {
                let pv = &self.nodes[i].value;
                let t = pv.last_dim();
                let mut gx = vec![0.0f32; pv.numel()];
                for blk in 0..pv.numel() / (t * t) {
                    for r in 0..t {
                        let off = blk * t * t + r * t;
                        let p = &pv.data()[off..off + r + 1];
                        let grow = &g.data()[off..off + r + 1];
                        softmax_row_backward(p, grow, &mut gx[off..off + r + 1]);
                    }
                }
                acc(grads, *x, Array::from_vec(pv.shape(), gx)?);
            }
            Op::RowSumSq(x) => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let mut gx = vec![0.0f32; xv.numel()];
                for (r, row) in xv.data().chunks(d).enumerate() {
                    let gi = 2.0 * g.data()[r];
                    for (o, &v) in gx[r * d..(r + 1) * d].iter_mut().zip(row) {
                        *o = gi * v;
                    }
                }
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                let gi = g.data()[0];
                acc(grads, *x, Array::full(xv.shape(), gi));
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let gi = g.data()[0] / xv.numel().max(1) as f32;
                acc(grads, *x, Array::full(xv.shape(), gi));
            }
            Op::ConcatLast(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (da, db) = (av.last_dim(), bv.last_dim());
                let mut ga = vec![0.0f32; av.numel()];
                let mut gb = vec![0.0f32; bv.numel()];
                for r in 0..av.lead_numel() {
                    let grow = &g.data()[r * (da + db)..(r + 1) * (da + db)];
                    ga[r * da..(r + 1) * da].copy_from_slice(&grow[..da]);
                    gb[r * db..(r + 1) * db].copy_from_slice(&grow[da..]);
                }
                acc(grads, *a, Array::from_vec(av.shape(), ga)?);
                acc(grads, *b, Array::from_vec(bv.shape(), gb)?);
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let len = self.nodes[i].value.last_dim();
                let mut gx = vec![0.0f32; xv.numel()];
                for r in 0..xv.lead_numel() {
                    gx[r * d + start..r * d + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(grads, *x, Array::from_vec(&shape, g.data().to_vec())?);
            }
            Op::BatchTranspose(x) => {
                let xv = self.value(*x);
                let rank = xv.rank();
                let (r, c) = (xv.shape()[rank - 2], xv.shape()[rank - 1]);
                let batches: usize = xv.shape()[..rank - 2].iter().product();
                let mut gx = vec![0.0f32; xv.numel()];
                transpose_rc(g.data(), &mut gx, batches, c, r);
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
            }
            Op::Transpose12(x) => {
                let xv = self.value(*x);
                let s = xv.shape();
                let mut gx = vec![0.0f32; xv.numel()];
                transpose_mid(g.data(), &mut gx, s[0], s[2], s[1], s[3]);
                acc(grads, *x, Array::from_vec(s, gx)?);
            }
            Op::GatherRows { x, idx } => {
                let xv = self.value(*x);
                let n = xv.shape()[0];
                let row = xv.numel() / n.max(1);
                let mut gx = vec![0.0f32; xv.numel()];
                for (i2, &src) in idx.iter().enumerate() {
                    for j in 0..row {
                        gx[src * row + j] += g.data()[i2 * row + j];
                    }
                }
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
            }
            Op::ScatterSumRows { x, idx } => {
                let xv = self.value(*x);
                let row = xv.shape()[1..].iter().product::<usize>();
                let mut gx = vec![0.0f32; xv.numel()];
                for (i2, &dst) in idx.iter().enumerate() {
                    gx[i2 * row..(i2 + 1) * row]
                        .copy_from_slice(&g.data()[dst * row..(dst + 1) * row]);
                }
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
            }
            Op::ScaleRows { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let d = xv.last_dim();
                let mut gx = vec![0.0f32; xv.numel()];
                let mut gs = vec![0.0f32; sv.numel()];
                for (r, row) in xv.data().chunks(d).enumerate() {
                    let f = sv.data()[r];
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let mut dot = 0.0f64;
                    for j in 0..d {
                        gx[r * d + j] = grow[j] * f;
                        dot += grow[j] as f64 * row[j] as f64;
                    }
                    gs[r] = dot as f32;
                }
                acc(grads, *x, Array::from_vec(xv.shape(), gx)?);
                acc(grads, *s, Array::from_vec(sv.shape(), gs)?);
            }
        }
        Ok(())
    }

    fn require_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err(op, a, b));
        }
        Ok(())
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> CoreError {
        CoreError::ShapeMismatch {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }
}

fn softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = ((v - max) as f64).exp();
        *o = e as f32;
        sum += e;
    }
    let inv = (1.0 / sum) as f32;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

fn softmax_row_backward(p: &[f32], g: &[f32], out: &mut [f32]) {
    let dot: f64 = p.iter().zip(g).map(|(&pi, &gi)| pi as f64 * gi as f64).sum();
    for i in 0..p.len() {
        out[i] = (p[i] as f64 * (g[i] as f64 - dot)) as f32;
    }
}

fn transpose_rc(src: &[f32], dst: &mut [f32], batches: usize, r: usize, c: usize) {
    for t in 0..batches {
        let s = &src[t * r * c..(t + 1) * r * c];
        let d = &mut dst[t * r * c..(t + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
}

// [a, b, c, d] -> [a, c, b, d]
fn transpose_mid(src: &[f32], dst: &mut [f32], a: usize, b: usize, c: usize, d: usize) {
    for ai in 0..a {
        for bi in 0..b {
            for ci in 0..c {
                let s = ((ai * b + bi) * c + ci) * d;
                let t = ((ai * c + ci) * b + bi) * d;
                dst[t..t + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
}

fn gelu_f(x: f32) -> f32 {
    const C: f64 = 0.7978845608028654;
    let xd = x as f64;
    let u = C * (xd + 0.044715 * xd * xd * xd);
    (0.5 * xd * (1.0 + u.tanh())) as f32
}

fn gelu_df(x: f32) -> f32 {
    const C: f64 = 0.7978845608028654;
    let xd = x as f64;
    let u = C * (xd + 0.044715 * xd * xd * xd);
    let th = u.tanh();
    let sech2 = 1.0 - th * th;
    (0.5 * (1.0 + th) + 0.5 * xd * sech2 * C * (1.0 + 3.0 * 0.044715 * xd * xd)) as f32
}
