//! Episodes: rollouts of (frame, action, state) triples per domain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::util::derive_seed;
use crate::worlds::{cubes, physics, sprites};

/// Rendered frame side length for every domain.
pub const RESOLUTION: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Cubes,
    Physics,
    Msprites,
}

impl Domain {
    pub fn id(&self) -> &'static str {
        match self {
            Domain::Cubes => "cubes",
            Domain::Physics => "physics",
            Domain::Msprites => "msprites",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cubes" => Ok(Domain::Cubes),
            "physics" => Ok(Domain::Physics),
            "msprites" => Ok(Domain::Msprites),
            other => Err(CoreError::invalid("Domain::parse", format!("unknown domain {other:?}"))),
        }
    }

    pub fn all() -> [Domain; 3] {
        [Domain::Cubes, Domain::Physics, Domain::Msprites]
    }

    /// One-hot action width; zero for the action-free domain.
    pub fn action_dim(&self) -> usize {
        match self {
            Domain::Cubes => cubes::ACTION_DIM,
            Domain::Physics => 0,
            Domain::Msprites => sprites::ACTION_DIM,
        }
    }

    /// Number of ground-truth objects in a scene.
    pub fn num_objects(&self) -> usize {
        match self {
            Domain::Cubes => cubes::NUM_OBJECTS,
            Domain::Physics => physics::NUM_BODIES,
            Domain::Msprites => sprites::NUM_SPRITES,
        }
    }

    /// Channels of a model observation. Physics stacks two consecutive
    /// frames, so observations carry six channels; raw stored frames are
    /// always RGB.
    pub fn channels(&self) -> usize {
        match self {
            Domain::Physics => 6,
            _ => 3,
        }
    }

    /// Distinct transform labels emitted by the probe-pair generator.
    pub fn transform_labels(&self) -> usize {
        match self {
            Domain::Cubes => cubes::NUM_DIRECTIONS,
            Domain::Physics => 4,
            Domain::Msprites => sprites::NUM_FACTORS * 2,
        }
    }
}

/// Ground-truth state of any domain, for oracles and probe labeling only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum WorldState {
    Cubes(cubes::GridWorldState),
    Physics(physics::PhysicsState),
    Msprites(sprites::SpriteState),
}

impl WorldState {
    pub fn random(domain: Domain, rng: &mut ChaCha8Rng) -> Self {
        match domain {
            Domain::Cubes => WorldState::Cubes(cubes::GridWorldState::random(rng)),
            Domain::Physics => WorldState::Physics(physics::PhysicsState::random(rng)),
            Domain::Msprites => WorldState::Msprites(sprites::SpriteState::random(rng)),
        }
    }

    /// Applies one action (ignored by the action-free domain).
    pub fn step(&self, action: usize) -> WorldState {
        match self {
            WorldState::Cubes(s) => WorldState::Cubes(cubes::step(s, action)),
            WorldState::Physics(s) => WorldState::Physics(physics::step(s, physics::DT)),
            WorldState::Msprites(s) => WorldState::Msprites(sprites::step(s, action)),
        }
    }

    pub fn render(&self, resolution: usize) -> Result<Vec<f32>> {
        if resolution < 16 {
            return Err(CoreError::invalid("render", format!("resolution {resolution} < 16")));
        }
        Ok(match self {
            WorldState::Cubes(s) => cubes::render(s, resolution),
            WorldState::Physics(s) => physics::render(s, resolution),
            WorldState::Msprites(s) => sprites::render(s, resolution),
        })
    }
}

/// One rollout: T frames, T-1 actions (empty for physics), T states.
#[derive(Clone, Debug)]
pub struct Episode {
    pub frames: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub states: Vec<WorldState>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Model observation at time t. Physics stacks the previous and current
    /// frame channel-wise (the first observation repeats frame zero).
    pub fn observation(&self, domain: Domain, t: usize) -> Vec<f32> {
        match domain {
            Domain::Physics => {
                let prev = if t == 0 { &self.frames[0] } else { &self.frames[t - 1] };
                stack_channels(prev, &self.frames[t], RESOLUTION)
            }
            _ => self.frames[t].clone(),
        }
    }
}

/// Interleaves two RGB frames into one six-channel image.
pub fn stack_channels(a: &[f32], b: &[f32], resolution: usize) -> Vec<f32> {
    let px = resolution * resolution;
    let mut out = vec![0.0f32; px * 6];
    for p in 0..px {
        out[p * 6..p * 6 + 3].copy_from_slice(&a[p * 3..p * 3 + 3]);
        out[p * 6 + 3..p * 6 + 6].copy_from_slice(&b[p * 3..p * 3 + 3]);
    }
    out
}

/// Transition start indices that give every observation real motion cues.
/// Physics skips t=0 because its first observation duplicates frame zero.
pub fn transition_starts(domain: Domain, episode_len: usize) -> std::ops::Range<usize> {
    match domain {
        Domain::Physics => 1..episode_len.saturating_sub(1),
        _ => 0..episode_len.saturating_sub(1),
    }
}

/// Rolls out one episode of `length` frames with uniform random actions.
pub fn generate_episode(domain: Domain, length: usize, rng: &mut ChaCha8Rng) -> Result<Episode> {
    let mut states = vec![WorldState::random(domain, rng)];
    let mut actions = Vec::new();
    for _ in 0..length - 1 {
        let action = match domain {
            Domain::Cubes => cubes::random_action(rng),
            Domain::Msprites => sprites::random_action(rng),
            Domain::Physics => 0,
        };
        let next = states.last().expect("nonempty").step(action);
        states.push(next);
        if domain.action_dim() > 0 {
            actions.push(action);
        }
    }
    let frames = states.iter().map(|s| s.render(RESOLUTION)).collect::<Result<Vec<_>>>()?;
    Ok(Episode { frames, actions, states })
}

/// Generates `count` episodes with per-episode seeds derived from `seed`.
pub fn generate_dataset(
    domain: Domain,
    count: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if count == 0 || length < 2 {
        return Err(CoreError::invalid(
            "generate_dataset",
            format!("need count >= 1 and length >= 2, got {count} and {length}"),
        ));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("episode/{i}")));
            generate_episode(domain, length, &mut rng)
        })
        .collect()
}
