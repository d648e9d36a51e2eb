//! Grid world of colored blocks pushed one cell at a time.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::worlds::raster::Canvas;

pub const GRID_W: usize = 5;
pub const NUM_OBJECTS: usize = 5;
pub const NUM_DIRECTIONS: usize = 4;
pub const ACTION_DIM: usize = NUM_OBJECTS * NUM_DIRECTIONS;

/// Fixed palette; index i colors object i in every cubes dataset.
pub const PALETTE: [[f32; 3]; NUM_OBJECTS] = [
    [0.90, 0.12, 0.12],
    [0.15, 0.80, 0.20],
    [0.20, 0.40, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
];

/// Offsets indexed by direction: up, down, left, right.
const MOVES: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridWorldState {
    pub w: usize,
    /// (row, col) of each object.
    pub positions: Vec<(i32, i32)>,
}

impl GridWorldState {
    /// Samples distinct cells for all objects.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut cells: Vec<(i32, i32)> = (0..GRID_W as i32)
            .flat_map(|r| (0..GRID_W as i32).map(move |c| (r, c)))
            .collect();
        cells.shuffle(rng);
        GridWorldState { w: GRID_W, positions: cells[..NUM_OBJECTS].to_vec() }
    }

    pub fn occupied(&self, cell: (i32, i32)) -> bool {
        self.positions.contains(&cell)
    }

    pub fn in_bounds(&self, cell: (i32, i32)) -> bool {
        cell.0 >= 0 && cell.1 >= 0 && cell.0 < self.w as i32 && cell.1 < self.w as i32
    }
}

/// Splits an action index into (object, direction).
pub fn decode_action(action: usize) -> (usize, usize) {
    (action / NUM_DIRECTIONS, action % NUM_DIRECTIONS)
}

pub fn encode_action(object: usize, direction: usize) -> usize {
    object * NUM_DIRECTIONS + direction
}

/// Pushes one object one cell; moves that would leave the grid or enter an
/// occupied cell are no-ops.
pub fn step(state: &GridWorldState, action: usize) -> GridWorldState {
    let (obj, dir) = decode_action(action);
    let (dr, dc) = MOVES[dir];
    let from = state.positions[obj];
    let to = (from.0 + dr, from.1 + dc);
    if !state.in_bounds(to) || state.occupied(to) {
        return state.clone();
    }
    let mut next = state.clone();
    next.positions[obj] = to;
    next
}

/// Would `action` change the state?
pub fn action_effective(state: &GridWorldState, action: usize) -> bool {
    step(state, action) != *state
}

/// Flat colored squares, one cell each, with a one-pixel vertical overlap
/// between rows so nearer rows partially occlude the row behind them.
pub fn render(state: &GridWorldState, resolution: usize) -> Vec<f32> {
    let cell = resolution / state.w;
    let overlap = 1i32;
    let mut canvas = Canvas::new(resolution, resolution);
    let mut order: Vec<usize> = (0..state.positions.len()).collect();
    order.sort_by_key(|&i| state.positions[i].0);
    for i in order {
        let (r, c) = state.positions[i];
        let y0 = r * (cell as i32 - overlap) + 1;
        let x0 = c * cell as i32 + 1;
        canvas.fill_rect(y0, x0, y0 + cell as i32, x0 + cell as i32, PALETTE[i]);
    }
    canvas.data
}

/// Index of the object visible at each pixel, `NUM_OBJECTS` for background.
/// Mirrors `render`'s draw order and geometry exactly.
pub fn visibility_map(state: &GridWorldState, resolution: usize) -> Vec<usize> {
    let cell = resolution / state.w;
    let overlap = 1i32;
    let mut map = vec![NUM_OBJECTS; resolution * resolution];
    let mut order: Vec<usize> = (0..state.positions.len()).collect();
    order.sort_by_key(|&i| state.positions[i].0);
    for i in order {
        let (r, c) = state.positions[i];
        let y0 = r * (cell as i32 - overlap) + 1;
        let x0 = c * cell as i32 + 1;
        for y in y0.max(0)..(y0 + cell as i32).min(resolution as i32) {
            for x in x0.max(0)..(x0 + cell as i32).min(resolution as i32) {
                map[y as usize * resolution + x as usize] = i;
            }
        }
    }
    map
}

/// Uniform random action index.
pub fn random_action(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(0..ACTION_DIM)
}
