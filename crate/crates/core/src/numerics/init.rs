//! Weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::array::Array;

/// Kaiming-uniform draw: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, shape: Vec<usize>) -> Array {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Array::from_vec(&shape, data).expect("shape/product agree by construction")
}
