//! Tiny software rasterizer shared by the domain renderers.

/// RGB canvas, row-major [h, w, 3], values in [0, 1], black background.
pub struct Canvas {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Canvas {
    pub fn new(h: usize, w: usize) -> Self {
        Canvas { h, w, data: vec![0.0; h * w * 3] }
    }

    /// Opaque axis-aligned rectangle with integer pixel bounds, clipped to
    /// the canvas. `y1`/`x1` are exclusive.
    pub fn fill_rect(&mut self, y0: i32, x0: i32, y1: i32, x1: i32, color: [f32; 3]) {
        let ya = y0.max(0) as usize;
        let yb = (y1.max(0) as usize).min(self.h);
        let xa = x0.max(0) as usize;
        let xb = (x1.max(0) as usize).min(self.w);
        for y in ya..yb {
            for x in xa..xb {
                let off = (y * self.w + x) * 3;
                self.data[off..off + 3].copy_from_slice(&color);
            }
        }
    }

    /// Paints a shape given by an inside test in local coordinates. The local
    /// frame is centered at (cx, cy) pixels, rotated by `theta`, and scaled so
    /// the shape's unit box spans `half` pixels. 3x3 supersampling gives soft
    /// edges; coverage alpha-blends over what is already painted.
    pub fn fill_shape<F>(&mut self, cy: f32, cx: f32, half: f32, theta: f32, inside: F, color: [f32; 3])
    where
        F: Fn(f32, f32) -> bool,
    {
        let pad = half * 1.6 + 1.0;
        let ya = (cy - pad).floor().max(0.0) as usize;
        let yb = ((cy + pad).ceil() as usize).min(self.h);
        let xa = (cx - pad).floor().max(0.0) as usize;
        let xb = ((cx + pad).ceil() as usize).min(self.w);
        let (sin, cos) = theta.sin_cos();
        for y in ya..yb {
            for x in xa..xb {
                let mut hits = 0;
                for sy in 0..3 {
                    for sx in 0..3 {
                        let py = y as f32 + (sy as f32 + 0.5) / 3.0 - cy;
                        let px = x as f32 + (sx as f32 + 0.5) / 3.0 - cx;
                        // Rotate into the shape frame and normalize.
                        let u = (cos * px + sin * py) / half;
                        let v = (-sin * px + cos * py) / half;
                        if inside(u, v) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let alpha = hits as f32 / 9.0;
                let off = (y * self.w + x) * 3;
                for (c, &col) in color.iter().enumerate() {
                    self.data[off + c] = alpha * col + (1.0 - alpha) * self.data[off + c];
                }
            }
        }
    }
}

pub fn inside_square(u: f32, v: f32) -> bool {
    u.abs() <= 1.0 && v.abs() <= 1.0
}

pub fn inside_circle(u: f32, v: f32) -> bool {
    u * u + v * v <= 1.0
}

pub fn inside_ellipse(u: f32, v: f32) -> bool {
    u * u + (v / 0.6) * (v / 0.6) <= 1.0
}

pub fn inside_triangle(u: f32, v: f32) -> bool {
    (-1.0..=1.0).contains(&v) && u.abs() <= (v + 1.0) / 2.0
}

/// Two half-disks atop a triangle.
pub fn inside_heart(u: f32, v: f32) -> bool {
    let lobes = {
        let du = u.abs() - 0.5;
        let dv = v + 0.45;
        v <= -0.45 && du * du + dv * dv <= 0.55 * 0.55
    };
    let wedge = (-0.45..=1.0).contains(&v) && u.abs() <= 1.05 * (1.0 - (v + 0.45) / 1.45);
    lobes || wedge
}
