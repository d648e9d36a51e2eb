//! Probe pairs: single-object interventions with ground-truth labels.
//!
//! Each pair is a (before, after) observation where exactly one object
//! changed, annotated with the object index and a domain-specific
//! transform label. Probe sets are balanced across objects and saved as
//! `probe.json` (labels, states, metadata) plus `probe_frames.bin`
//! (before/after observation tensors in record framing).

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::checkpoint::{read_record, write_record};
use crate::numerics::Array;
use crate::util::derive_seed;
use crate::worlds::episode::{stack_channels, Domain, WorldState, RESOLUTION};
use crate::worlds::{cubes, physics, sprites};

pub const PROBE_FORMAT_VERSION: u32 = 1;

/// One labeled intervention. Observations match the domain's model input
/// layout ([H, W, C] with C = domain.channels()).
#[derive(Clone, Debug)]
pub struct ProbePair {
    pub before: Vec<f32>,
    pub after: Vec<f32>,
    pub object_label: usize,
    pub transform_label: usize,
    pub state_before: WorldState,
    pub state_after: WorldState,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub domain: String,
    pub pairs: usize,
    pub resolution: usize,
    pub channels: usize,
    pub seed: u64,
    pub format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    object_label: usize,
    transform_label: usize,
    state_before: WorldState,
    state_after: WorldState,
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    meta: ProbeMeta,
    pairs: Vec<PairRecord>,
}

/// Magnitude range of the physics teleport, as a fraction of arena width.
const TELEPORT_MIN: f64 = 0.05;
const TELEPORT_MAX: f64 = 0.15;
/// Physics arena spans [-1, 1] in both axes.
const ARENA_WIDTH: f64 = 2.0;
/// Burn-in steps before sampling a physics probe state, so velocities
/// reflect interaction rather than the initializer.
const PHYSICS_BURN_IN: usize = 3;
const MAX_TRIES: usize = 200;

fn frames_identical(a: &[f32], b: &[f32]) -> bool {
    a == b
}

/// Quadrant of a displacement vector: sign(dy) and sign(dx) as two bits.
fn quadrant(dy: f64, dx: f64) -> usize {
    ((dy >= 0.0) as usize) * 2 + ((dx >= 0.0) as usize)
}

fn cubes_pair(obj: usize, rng: &mut ChaCha8Rng) -> Option<(ProbePair, usize)> {
    let state = cubes::GridWorldState::random(rng);
    let mut dirs: Vec<usize> = (0..cubes::NUM_DIRECTIONS).collect();
    dirs.shuffle(rng);
    for dir in dirs {
        let action = cubes::encode_action(obj, dir);
        if !cubes::action_effective(&state, action) {
            continue;
        }
        let after_state = cubes::step(&state, action);
        let before = cubes::render(&state, RESOLUTION);
        let after = cubes::render(&after_state, RESOLUTION);
        if frames_identical(&before, &after) {
            continue;
        }
        return Some((
            ProbePair {
                before,
                after,
                object_label: obj,
                transform_label: dir,
                state_before: WorldState::Cubes(state),
                state_after: WorldState::Cubes(after_state),
            },
            dir,
        ));
    }
    None
}

fn sprites_pair(obj: usize, rng: &mut ChaCha8Rng) -> Option<(ProbePair, usize)> {
    let state = sprites::SpriteState::random(rng);
    let mut moves: Vec<usize> = (0..sprites::NUM_FACTORS * 2).collect();
    moves.shuffle(rng);
    for mv in moves {
        let factor = mv / 2;
        let positive = mv % 2 == 1;
        let action = sprites::encode_action(obj, factor, positive);
        if !sprites::action_effective(&state, action) {
            continue;
        }
        let after_state = sprites::step(&state, action);
        let before = sprites::render(&state, RESOLUTION);
        let after = sprites::render(&after_state, RESOLUTION);
        if frames_identical(&before, &after) {
            continue;
        }
        return Some((
            ProbePair {
                before,
                after,
                object_label: obj,
                transform_label: mv,
                state_before: WorldState::Msprites(state),
                state_after: WorldState::Msprites(after_state),
            },
            mv,
        ));
    }
    None
}

fn physics_pair(obj: usize, rng: &mut ChaCha8Rng) -> Option<(ProbePair, usize)> {
    let mut prev = physics::PhysicsState::random(rng);
    for _ in 0..PHYSICS_BURN_IN {
        prev = physics::step(&prev, physics::DT);
    }
    let cur = physics::step(&prev, physics::DT);

    let mag = rng.gen_range(TELEPORT_MIN..TELEPORT_MAX) * ARENA_WIDTH;
    let angle = rng.gen_range(0.0..TAU);
    let (dy, dx) = (mag * angle.sin(), mag * angle.cos());

    let mut prev_t = prev.clone();
    let mut cur_t = cur.clone();
    for s in [&mut prev_t, &mut cur_t] {
        s.bodies[obj].pos[0] += dx;
        s.bodies[obj].pos[1] += dy;
    }
    let moved = &cur_t.bodies[obj].pos;
    if moved[0].abs() > 0.95 || moved[1].abs() > 0.95 {
        return None;
    }

    let before = stack_channels(
        &physics::render(&prev, RESOLUTION),
        &physics::render(&cur, RESOLUTION),
        RESOLUTION,
    );
    let after = stack_channels(
        &physics::render(&prev_t, RESOLUTION),
        &physics::render(&cur_t, RESOLUTION),
        RESOLUTION,
    );
    if frames_identical(&before, &after) {
        return None;
    }
    let label = quadrant(dy, dx);
    Some((
        ProbePair {
            before,
            after,
            object_label: obj,
            transform_label: label,
            state_before: WorldState::Physics(cur),
            state_after: WorldState::Physics(cur_t),
        },
        label,
    ))
}

/// Generates `count` pairs, round-robin over objects for exact balance.
pub fn generate_probe_set(domain: Domain, count: usize, seed: u64) -> Result<Vec<ProbePair>> {
    let k = domain.num_objects();
    if count < k {
        return Err(CoreError::invalid(
            "generate_probe_set",
            format!("need at least {k} pairs for {}", domain.id()),
        ));
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let obj = i % k;
        let mut made = None;
        for attempt in 0..MAX_TRIES {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &format!("probe/{i}/attempt/{attempt}"),
            ));
            made = match domain {
                Domain::Cubes => cubes_pair(obj, &mut rng),
                Domain::Physics => physics_pair(obj, &mut rng),
                Domain::Msprites => sprites_pair(obj, &mut rng),
            };
            if made.is_some() {
                break;
            }
        }
        let (pair, _) = made.ok_or_else(|| {
            CoreError::invalid(
                "generate_probe_set",
                format!("no effective intervention found for pair {i} (object {obj})"),
            )
        })?;
        pairs.push(pair);
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "probe/shuffle"));
    pairs.shuffle(&mut order_rng);
    Ok(pairs)
}

/// Writes `probe.json` and `probe_frames.bin` into `dir`.
pub fn write_probe_set(
    dir: &Path,
    domain: Domain,
    pairs: &[ProbePair],
    seed: u64,
    force: bool,
) -> Result<()> {
    let json_path = dir.join("probe.json");
    if json_path.exists() && !force {
        return Err(CoreError::invalid(
            "write_probe_set",
            format!("{} already exists (pass force to overwrite)", json_path.display()),
        ));
    }
    std::fs::create_dir_all(dir)?;
    let meta = ProbeMeta {
        domain: domain.id().to_string(),
        pairs: pairs.len(),
        resolution: RESOLUTION,
        channels: domain.channels(),
        seed,
        format_version: PROBE_FORMAT_VERSION,
    };
    let file = ProbeFile {
        meta,
        pairs: pairs
            .iter()
            .map(|p| PairRecord {
                object_label: p.object_label,
                transform_label: p.transform_label,
                state_before: p.state_before.clone(),
                state_after: p.state_after.clone(),
            })
            .collect(),
    };
    std::fs::write(&json_path, serde_json::to_vec_pretty(&file)?)?;

    let c = domain.channels();
    let mut frames = BufWriter::new(File::create(dir.join("probe_frames.bin"))?);
    for (i, p) in pairs.iter().enumerate() {
        let before = Array::from_vec(&[RESOLUTION, RESOLUTION, c], p.before.clone())?;
        let after = Array::from_vec(&[RESOLUTION, RESOLUTION, c], p.after.clone())?;
        write_record(&mut frames, &format!("p{i:05}/before"), &before)?;
        write_record(&mut frames, &format!("p{i:05}/after"), &after)?;
    }
    Ok(())
}

/// Reads a probe set written by [`write_probe_set`].
pub fn read_probe_set(dir: &Path) -> Result<(ProbeMeta, Vec<ProbePair>)> {
    let file: ProbeFile = serde_json::from_slice(&std::fs::read(dir.join("probe.json"))?)?;
    if file.meta.format_version != PROBE_FORMAT_VERSION {
        return Err(CoreError::CheckpointFormat(format!(
            "unsupported probe format_version {}",
            file.meta.format_version
        )));
    }
    let c = file.meta.channels;
    let res = file.meta.resolution;
    let mut reader = BufReader::new(File::open(dir.join("probe_frames.bin"))?);
    let mut pairs = Vec::with_capacity(file.pairs.len());
    for (i, rec) in file.pairs.iter().enumerate() {
        let mut halves = Vec::with_capacity(2);
        for side in ["before", "after"] {
            let (name, arr) = read_record(&mut reader)?.ok_or_else(|| {
                CoreError::CheckpointFormat("probe_frames.bin ended early".into())
            })?;
            let want = format!("p{i:05}/{side}");
            if name != want || arr.shape() != [res, res, c] {
                return Err(CoreError::CheckpointFormat(format!(
                    "probe_frames.bin: expected {want} [{res}, {res}, {c}], found {name} {:?}",
                    arr.shape()
                )));
            }
            halves.push(arr.into_data());
        }
        let after = halves.pop().expect("two halves");
        let before = halves.pop().expect("two halves");
        pairs.push(ProbePair {
            before,
            after,
            object_label: rec.object_label,
            transform_label: rec.transform_label,
            state_before: rec.state_before.clone(),
            state_after: rec.state_after.clone(),
        });
    }
    if read_record(&mut reader)?.is_some() {
        return Err(CoreError::CheckpointFormat(
            "probe_frames.bin has trailing records".into(),
        ));
    }
    Ok((file.meta, pairs))
}
