//! Batch assembly: transition sampling, window sampling for sequence models,
//! within-batch negatives, and the epoch shuffle.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::numerics::Array;
use crate::objectives::augment;
use crate::worlds::{transition_starts, EpisodePack};

/// One epoch's sample universe: (episode, start) pairs. For step batches the
/// start indexes a single transition; for window batches it is the first of
/// `steps` consecutive transitions.
#[derive(Clone, Debug)]
pub struct Sampler {
    items: Vec<(usize, usize)>,
    steps: usize,
}

impl Sampler {
    /// One item per stored transition.
    pub fn steps(pack: &EpisodePack) -> Result<Self> {
        Sampler::windows(pack, 1)
    }

    /// One item per run of `steps` consecutive transitions.
    pub fn windows(pack: &EpisodePack, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(CoreError::invalid("Sampler::windows", "zero-step windows"));
        }
        let domain = pack.domain()?;
        let mut items = Vec::new();
        for (e, ep) in pack.episodes.iter().enumerate() {
            let starts = transition_starts(domain, ep.frames.len());
            if starts.len() >= steps {
                let last = starts.end - steps;
                for t in starts.take_while(|&t| t <= last) {
                    items.push((e, t));
                }
            }
        }
        if items.is_empty() {
            return Err(CoreError::invalid(
                "Sampler::windows",
                format!("no length-{steps} windows in the pack"),
            ));
        }
        Ok(Sampler { items, steps })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Seed-shuffled item order for one epoch.
    pub fn shuffled(&self, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        let mut order = self.items.clone();
        order.shuffle(rng);
        order
    }

    pub fn window_steps(&self) -> usize {
        self.steps
    }
}

/// Index map sending every batch element to a different element: a cyclic
/// shift by a uniform non-zero offset, so no element maps to itself and each
/// partner is uniform over the others marginally.
pub fn derangement(len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if len < 2 {
        return Err(CoreError::invalid("derangement", "need at least two elements"));
    }
    let offset = rng.gen_range(1..len);
    Ok((0..len).map(|i| (i + offset) % len).collect())
}

/// One assembled step batch. `x`, `x_next`, `x_aug` are [B, H, W, C];
/// `actions` is one-hot [B, A].
pub struct StepBatch {
    pub x: Array,
    pub x_next: Option<Array>,
    pub x_aug: Option<Array>,
    pub actions: Option<Array>,
    pub negatives: Option<Vec<usize>>,
}

/// One assembled window batch: `frames` stacks `batch` windows of
/// `steps` + 1 consecutive observations; `actions` is one-hot [B, steps, A].
pub struct WindowBatch {
    pub frames: Array,
    pub actions: Option<Array>,
    pub batch: usize,
    pub steps: usize,
}

/// What the step assembler should include beyond the anchor frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepParts {
    pub next: bool,
    pub augmented: bool,
    pub negatives: bool,
}

fn one_hot(actions: &[usize], dim: usize, rows: usize) -> Result<Array> {
    let mut data = vec![0.0f32; rows * dim];
    for (r, &a) in actions.iter().enumerate() {
        if a >= dim {
            return Err(CoreError::invalid("one_hot", format!("action {a} >= {dim}")));
        }
        data[r * dim + a] = 1.0;
    }
    Array::from_vec(&[rows, dim], data)
}

/// Builds a step batch for the given transitions.
pub fn assemble_steps(
    pack: &EpisodePack,
    items: &[(usize, usize)],
    parts: StepParts,
    rng: &mut ChaCha8Rng,
) -> Result<StepBatch> {
    let domain = pack.domain()?;
    let res = pack.manifest.resolution;
    let ch = domain.channels();
    let b = items.len();
    if b == 0 {
        return Err(CoreError::invalid("assemble_steps", "empty batch"));
    }
    let frame_len = res * res * ch;

    let mut x = Vec::with_capacity(b * frame_len);
    let mut x_next = if parts.next { Some(Vec::with_capacity(b * frame_len)) } else { None };
    let mut x_aug = if parts.augmented { Some(Vec::with_capacity(b * frame_len)) } else { None };
    let mut acts = Vec::with_capacity(b);

    for &(e, t) in items {
        let ep = &pack.episodes[e];
        let obs = ep.observation(domain, t);
        if let Some(aug) = x_aug.as_mut() {
            aug.extend_from_slice(&augment::augment(&obs, res, ch, rng)?);
        }
        x.extend_from_slice(&obs);
        if let Some(next) = x_next.as_mut() {
            next.extend_from_slice(&ep.observation(domain, t + 1));
        }
        if domain.action_dim() > 0 {
            acts.push(ep.actions[t]);
        }
    }

    let shape = [b, res, res, ch];
    let negatives = if parts.negatives { Some(derangement(b, rng)?) } else { None };
    Ok(StepBatch {
        x: Array::from_vec(&shape, x)?,
        x_next: match x_next {
            Some(v) => Some(Array::from_vec(&shape, v)?),
            None => None,
        },
        x_aug: match x_aug {
            Some(v) => Some(Array::from_vec(&shape, v)?),
            None => None,
        },
        actions: if domain.action_dim() > 0 {
            Some(one_hot(&acts, domain.action_dim(), b)?)
        } else {
            None
        },
        negatives,
    })
}

/// Builds a window batch: for each (episode, start) item, observations
/// start..=start+steps and the actions taken at the first `steps` of them.
pub fn assemble_windows(
    pack: &EpisodePack,
    items: &[(usize, usize)],
    steps: usize,
) -> Result<WindowBatch> {
    let domain = pack.domain()?;
    let res = pack.manifest.resolution;
    let ch = domain.channels();
    let b = items.len();
    if b == 0 {
        return Err(CoreError::invalid("assemble_windows", "empty batch"));
    }

    let mut frames = Vec::with_capacity(b * (steps + 1) * res * res * ch);
    let mut acts = Vec::with_capacity(b * steps);
    for &(e, t) in items {
        let ep = &pack.episodes[e];
        for i in 0..=steps {
            frames.extend_from_slice(&ep.observation(domain, t + i));
        }
        if domain.action_dim() > 0 {
            acts.extend(ep.actions[t..t + steps].iter().copied());
        }
    }

    let frames = Array::from_vec(&[b * (steps + 1), res, res, ch], frames)?;
    let actions = if domain.action_dim() > 0 {
        let flat = one_hot(&acts, domain.action_dim(), b * steps)?;
        Some(flat.reshaped(&[b, steps, domain.action_dim()])?)
    } else {
        None
    };
    Ok(WindowBatch { frames, actions, batch: b, steps })
}
