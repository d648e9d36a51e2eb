//! Random-shift augmentation: replicate-pad the frame, then crop a window
//! at a random offset.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Pad width on every side; offsets range over 0..=2*SHIFT_PAD.
pub const SHIFT_PAD: usize = 4;

/// Crops a `res` x `res` window from the replicate-padded frame at offset
/// (dy, dx) measured from the padded top-left corner. The centered offset
/// (SHIFT_PAD, SHIFT_PAD) reproduces the input exactly.
pub fn shift_frame(
    frame: &[f32],
    res: usize,
    channels: usize,
    dy: usize,
    dx: usize,
) -> Result<Vec<f32>> {
    if frame.len() != res * res * channels {
        return Err(CoreError::invalid(
            "shift_frame",
            format!("frame length {} != {res}x{res}x{channels}", frame.len()),
        ));
    }
    if dy > 2 * SHIFT_PAD || dx > 2 * SHIFT_PAD {
        return Err(CoreError::invalid(
            "shift_frame",
            format!("offset ({dy}, {dx}) outside 0..={}", 2 * SHIFT_PAD),
        ));
    }
    let mut out = vec![0.0f32; frame.len()];
    for y in 0..res {
        // Source row in the padded image, clamped back into the frame.
        let sy = (y + dy).saturating_sub(SHIFT_PAD).min(res - 1);
        for x in 0..res {
            let sx = (x + dx).saturating_sub(SHIFT_PAD).min(res - 1);
            let src = (sy * res + sx) * channels;
            let dst = (y * res + x) * channels;
            out[dst..dst + channels].copy_from_slice(&frame[src..src + channels]);
        }
    }
    Ok(out)
}

/// Draws a uniform offset and shifts. Deterministic given the rng state.
pub fn augment(frame: &[f32], res: usize, channels: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let dy = rng.gen_range(0..=2 * SHIFT_PAD);
    let dx = rng.gen_range(0..=2 * SHIFT_PAD);
    shift_frame(frame, res, channels, dy, dx)
}
