//! Dense kernels behind the graph ops: GEMM wrappers and the im2col/col2im
//! machinery shared by convolution and transposed convolution.

/// c = a[m,k] * b[k,n] + beta * c, all row-major contiguous.
pub fn sgemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        }
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c = a^T * b + beta * c where a is stored row-major [k, m].
pub fn sgemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        }
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c = a * b^T + beta * c where b is stored row-major [n, k].
pub fn sgemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        }
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a valid (unpadded) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
}

pub fn conv_out_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || stride == 0 {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

/// Gather sliding-window patches of `src` [b, h, w, c] over a `gh x gw` grid of
/// stride-spaced windows into `patches` [b*gh*gw, k*k*c].
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    src: &[f32],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    gh: usize,
    gw: usize,
    patches: &mut [f32],
) {
    let row_len = k * k * c;
    debug_assert!(gh == 0 || (gh - 1) * stride + k <= h);
    debug_assert!(gw == 0 || (gw - 1) * stride + k <= w);
    debug_assert_eq!(patches.len(), b * gh * gw * row_len);
    let seg = k * c;
    for bi in 0..b {
        let img = &src[bi * h * w * c..(bi + 1) * h * w * c];
        for oh in 0..gh {
            for ow in 0..gw {
                let row = ((bi * gh + oh) * gw + ow) * row_len;
                let (y0, x0) = (oh * stride, ow * stride);
                for dy in 0..k {
                    let src_off = ((y0 + dy) * w + x0) * c;
                    let dst_off = row + dy * seg;
                    patches[dst_off..dst_off + seg].copy_from_slice(&img[src_off..src_off + seg]);
                }
            }
        }
    }
}

/// Transpose of `im2col`: scatter-add patch rows back into `dst` [b, h, w, c].
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    patches: &[f32],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    gh: usize,
    gw: usize,
    dst: &mut [f32],
) {
    let row_len = k * k * c;
    debug_assert_eq!(patches.len(), b * gh * gw * row_len);
    debug_assert_eq!(dst.len(), b * h * w * c);
    let seg = k * c;
    for bi in 0..b {
        let img = &mut dst[bi * h * w * c..(bi + 1) * h * w * c];
        for oh in 0..gh {
            for ow in 0..gw {
                let row = ((bi * gh + oh) * gw + ow) * row_len;
                let (y0, x0) = (oh * stride, ow * stride);
                for dy in 0..k {
                    let dst_off = ((y0 + dy) * w + x0) * c;
                    let src_off = row + dy * seg;
                    for i in 0..seg {
                        img[dst_off + i] += patches[src_off + i];
                    }
                }
            }
        }
    }
}

// Batch frames per im2col/GEMM chunk so the patch buffer stays cache-friendly.
fn chunk_frames(rows_per_frame: usize) -> usize {
    const TARGET_ROWS: usize = 16384;
    (TARGET_ROWS / rows_per_frame.max(1)).max(1)
}

/// Forward convolution: x [b,h,w,c] (*) w [k,k,c,o] -> out [b,oh,ow,o].
pub fn conv2d_forward(x: &[f32], w: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let rows_per_frame = g.out_h * g.out_w;
    let row_len = g.kernel * g.kernel * g.in_c;
    let bs = chunk_frames(rows_per_frame);
    let mut patches = vec![0.0f32; bs * rows_per_frame * row_len];
    let mut b0 = 0;
    while b0 < g.batch {
        let bn = bs.min(g.batch - b0);
        let rows = bn * rows_per_frame;
        let pat = &mut patches[..rows * row_len];
        im2col(
            &x[b0 * g.in_h * g.in_w * g.in_c..],
            bn,
            g.in_h,
            g.in_w,
            g.in_c,
            g.kernel,
            g.stride,
            g.out_h,
            g.out_w,
            pat,
        );
        let c = &mut out[b0 * rows_per_frame * g.out_c..(b0 + bn) * rows_per_frame * g.out_c];
        sgemm_nn(rows, row_len, g.out_c, pat, w, c, 0.0);
        b0 += bn;
    }
}

/// Gradient of `conv2d_forward` w.r.t. the input image.
pub fn conv2d_grad_input(gout: &[f32], w: &[f32], g: &ConvGeom, gx: &mut [f32]) {
    let rows_per_frame = g.out_h * g.out_w;
    let row_len = g.kernel * g.kernel * g.in_c;
    let bs = chunk_frames(rows_per_frame);
    let mut gpat = vec![0.0f32; bs * rows_per_frame * row_len];
    let mut b0 = 0;
    while b0 < g.batch {
        let bn = bs.min(g.batch - b0);
        let rows = bn * rows_per_frame;
        let gp = &mut gpat[..rows * row_len];
        let go = &gout[b0 * rows_per_frame * g.out_c..(b0 + bn) * rows_per_frame * g.out_c];
        // gpatches = gout * w^T
        sgemm_nt(rows, g.out_c, row_len, go, w, gp, 0.0);
        col2im(
            gp,
            bn,
            g.in_h,
            g.in_w,
            g.in_c,
            g.kernel,
            g.stride,
            g.out_h,
            g.out_w,
            &mut gx[b0 * g.in_h * g.in_w * g.in_c..(b0 + bn) * g.in_h * g.in_w * g.in_c],
        );
        b0 += bn;
    }
}

/// Gradient of `conv2d_forward` w.r.t. the kernel (accumulates into `gw`).
pub fn conv2d_grad_weight(x: &[f32], gout: &[f32], g: &ConvGeom, gw: &mut [f32]) {
    let rows_per_frame = g.out_h * g.out_w;
    let row_len = g.kernel * g.kernel * g.in_c;
    let bs = chunk_frames(rows_per_frame);
    let mut patches = vec![0.0f32; bs * rows_per_frame * row_len];
    let mut b0 = 0;
    while b0 < g.batch {
        let bn = bs.min(g.batch - b0);
        let rows = bn * rows_per_frame;
        let pat = &mut patches[..rows * row_len];
        im2col(
            &x[b0 * g.in_h * g.in_w * g.in_c..],
            bn,
            g.in_h,
            g.in_w,
            g.in_c,
            g.kernel,
            g.stride,
            g.out_h,
            g.out_w,
            pat,
        );
        let go = &gout[b0 * rows_per_frame * g.out_c..(b0 + bn) * rows_per_frame * g.out_c];
        // gw += patches^T * gout
        sgemm_tn(row_len, rows, g.out_c, pat, go, gw, 1.0);
        b0 += bn;
    }
}

/// Geometry of a valid transposed convolution with optional output padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_pad: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
}

pub fn convt_out_size(input: usize, kernel: usize, stride: usize, out_pad: usize) -> usize {
    (input - 1) * stride + kernel + out_pad
}

/// Forward transposed convolution: x [b,h,w,c] with kernel w [c, k,k,o]
/// scattered into out [b, (h-1)s+k+p, (w-1)s+k+p, o].
pub fn convt2d_forward(x: &[f32], w: &[f32], g: &ConvTGeom, out: &mut [f32]) {
    let rows = g.batch * g.in_h * g.in_w;
    let contrib_len = g.kernel * g.kernel * g.out_c;
    let mut contrib = vec![0.0f32; rows * contrib_len];
    // contrib = x2 [rows, c] * w [c, k*k*o]
    sgemm_nn(rows, g.in_c, contrib_len, x, w, &mut contrib, 0.0);
    out.fill(0.0);
    col2im(
        &contrib,
        g.batch,
        g.out_h,
        g.out_w,
        g.out_c,
        g.kernel,
        g.stride,
        g.in_h,
        g.in_w,
        out,
    );
}

/// Gradient of `convt2d_forward` w.r.t. the input.
pub fn convt2d_grad_input(gout: &[f32], w: &[f32], g: &ConvTGeom, gx: &mut [f32]) {
    let rows = g.batch * g.in_h * g.in_w;
    let contrib_len = g.kernel * g.kernel * g.out_c;
    let mut gpat = vec![0.0f32; rows * contrib_len];
    im2col(
        gout,
        g.batch,
        g.out_h,
        g.out_w,
        g.out_c,
        g.kernel,
        g.stride,
        g.in_h,
        g.in_w,
        &mut gpat,
    );
    // gx2 = gpatches * w^T
    sgemm_nt(rows, contrib_len, g.in_c, &gpat, w, gx, 0.0);
}

/// Gradient of `convt2d_forward` w.r.t. the kernel (accumulates into `gw`).
pub fn convt2d_grad_weight(x: &[f32], gout: &[f32], g: &ConvTGeom, gw: &mut [f32]) {
    let rows = g.batch * g.in_h * g.in_w;
    let contrib_len = g.kernel * g.kernel * g.out_c;
    let mut gpat = vec![0.0f32; rows * contrib_len];
    im2col(
        gout,
        g.batch,
        g.out_h,
        g.out_w,
        g.out_c,
        g.kernel,
        g.stride,
        g.in_h,
        g.in_w,
        &mut gpat,
    );
    // gw += x2^T * gpatches
    sgemm_tn(g.in_c, rows, contrib_len, x, &gpat, gw, 1.0);
}
