//! Four fixed-identity sprites whose latent factors walk under actions.

use std::f32::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::worlds::raster::{inside_ellipse, inside_heart, inside_square, inside_triangle, Canvas};

pub const NUM_SPRITES: usize = 4;
pub const NUM_FACTORS: usize = 4;
/// (sprite, factor, sign) one-hot encoding.
pub const ACTION_DIM: usize = NUM_SPRITES * NUM_FACTORS * 2;

pub const SCALE_MIN: f32 = 0.12;
pub const SCALE_MAX: f32 = 0.30;
pub const ORIENT_MAX: f32 = 2.0 * PI;

/// Per-action factor increments.
pub const STEP_XY: f32 = 0.04;
pub const STEP_SCALE: f32 = 0.05 * (SCALE_MAX - SCALE_MIN);
pub const STEP_ORIENT: f32 = PI / 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Ellipse,
    Heart,
    Triangle,
}

/// Fixed (shape, color) identities shared by every sprites dataset.
pub const IDENTITIES: [(Shape, [f32; 3]); NUM_SPRITES] = [
    (Shape::Square, [0.92, 0.18, 0.18]),
    (Shape::Ellipse, [0.20, 0.85, 0.25]),
    (Shape::Heart, [0.95, 0.40, 0.75]),
    (Shape::Triangle, [0.20, 0.70, 0.92]),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub orientation: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteState {
    pub sprites: Vec<Sprite>,
}

impl SpriteState {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let sprites = (0..NUM_SPRITES)
            .map(|_| Sprite {
                x: rng.gen_range(0.15..0.85),
                y: rng.gen_range(0.15..0.85),
                scale: rng.gen_range(SCALE_MIN..SCALE_MAX),
                orientation: rng.gen_range(0.0..ORIENT_MAX),
            })
            .collect();
        SpriteState { sprites }
    }
}

pub fn encode_action(sprite: usize, factor: usize, positive: bool) -> usize {
    sprite * NUM_FACTORS * 2 + factor * 2 + usize::from(positive)
}

/// Splits an action index into (sprite, factor, positive).
pub fn decode_action(action: usize) -> (usize, usize, bool) {
    (action / (NUM_FACTORS * 2), (action / 2) % NUM_FACTORS, action % 2 == 1)
}

/// Applies one factor increment to one sprite, clamping at range edges.
pub fn step(state: &SpriteState, action: usize) -> SpriteState {
    let (idx, factor, positive) = decode_action(action);
    let dir = if positive { 1.0 } else { -1.0 };
    let mut next = state.clone();
    let s = &mut next.sprites[idx];
    match factor {
        0 => s.x = (s.x + dir * STEP_XY).clamp(0.0, 1.0),
        1 => s.y = (s.y + dir * STEP_XY).clamp(0.0, 1.0),
        2 => s.scale = (s.scale + dir * STEP_SCALE).clamp(SCALE_MIN, SCALE_MAX),
        _ => s.orientation = (s.orientation + dir * STEP_ORIENT).clamp(0.0, ORIENT_MAX),
    }
    next
}

/// Would `action` change the state?
pub fn action_effective(state: &SpriteState, action: usize) -> bool {
    step(state, action) != *state
}

pub fn random_action(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(0..ACTION_DIM)
}

/// Sprites drawn in identity order, later indices over earlier ones.
pub fn render(state: &SpriteState, resolution: usize) -> Vec<f32> {
    let mut canvas = Canvas::new(resolution, resolution);
    let span = resolution as f32 - 1.0;
    for (i, s) in state.sprites.iter().enumerate() {
        let (shape, color) = IDENTITIES[i];
        let cy = s.y * span;
        let cx = s.x * span;
        let half = s.scale * resolution as f32 / 2.0;
        let inside: fn(f32, f32) -> bool = match shape {
            Shape::Square => inside_square,
            Shape::Ellipse => inside_ellipse,
            Shape::Heart => inside_heart,
            Shape::Triangle => inside_triangle,
        };
        canvas.fill_shape(cy, cx, half, s.orientation, inside, color);
    }
    canvas.data
}
