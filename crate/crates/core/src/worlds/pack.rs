//! Episode packs: the on-disk dataset layout.
//!
//! A pack directory holds `manifest.json`, `frames.bin`, `actions.bin`
//! (omitted for the action-free domain), and `states.json`. The binary
//! files reuse the checkpoint record framing: each record is a named,
//! shaped little-endian f32 tensor. Frames are stored per episode under
//! `ep{i:05}` with shape [T, H, W, 3]; actions are one-hot [T-1, A].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::checkpoint::{read_record, write_record};
use crate::numerics::Array;
use crate::worlds::episode::{Domain, Episode, WorldState, RESOLUTION};

pub const PACK_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub domain: String,
    pub episodes: usize,
    pub frames_per_episode: usize,
    pub resolution: usize,
    pub channels: usize,
    pub action_dim: usize,
    pub seed: u64,
    pub format_version: u32,
}

#[derive(Clone, Debug)]
pub struct EpisodePack {
    pub manifest: PackManifest,
    pub episodes: Vec<Episode>,
}

impl EpisodePack {
    pub fn domain(&self) -> Result<Domain> {
        Domain::parse(&self.manifest.domain)
    }

    /// Total number of usable transitions across all episodes.
    pub fn transitions(&self) -> usize {
        let domain = match Domain::parse(&self.manifest.domain) {
            Ok(d) => d,
            Err(_) => return 0,
        };
        self.episodes
            .iter()
            .map(|ep| crate::worlds::episode::transition_starts(domain, ep.len()).len())
            .sum()
    }
}

fn episode_name(i: usize) -> String {
    format!("ep{i:05}")
}

/// Writes a pack directory. Refuses to overwrite an existing manifest
/// unless `force` is set.
pub fn write_pack(
    dir: &Path,
    domain: Domain,
    episodes: &[Episode],
    seed: u64,
    force: bool,
) -> Result<()> {
    if episodes.is_empty() {
        return Err(CoreError::invalid("write_pack", "no episodes"));
    }
    let frames_per_episode = episodes[0].len();
    for (i, ep) in episodes.iter().enumerate() {
        if ep.len() != frames_per_episode {
            return Err(CoreError::invalid(
                "write_pack",
                format!("episode {i} has {} frames, expected {frames_per_episode}", ep.len()),
            ));
        }
        let want_actions =
            if domain.action_dim() > 0 { frames_per_episode - 1 } else { 0 };
        if ep.actions.len() != want_actions {
            return Err(CoreError::invalid(
                "write_pack",
                format!("episode {i} has {} actions, expected {want_actions}", ep.actions.len()),
            ));
        }
    }

    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(CoreError::invalid(
            "write_pack",
            format!("{} already exists (pass force to overwrite)", manifest_path.display()),
        ));
    }
    std::fs::create_dir_all(dir)?;

    let manifest = PackManifest {
        domain: domain.id().to_string(),
        episodes: episodes.len(),
        frames_per_episode,
        resolution: RESOLUTION,
        channels: domain.channels(),
        action_dim: domain.action_dim(),
        seed,
        format_version: PACK_FORMAT_VERSION,
    };
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;

    let mut frames = BufWriter::new(File::create(dir.join("frames.bin"))?);
    for (i, ep) in episodes.iter().enumerate() {
        let mut data = Vec::with_capacity(frames_per_episode * RESOLUTION * RESOLUTION * 3);
        for frame in &ep.frames {
            data.extend_from_slice(frame);
        }
        let arr = Array::from_vec(&[frames_per_episode, RESOLUTION, RESOLUTION, 3], data)?;
        write_record(&mut frames, &episode_name(i), &arr)?;
    }
    drop(frames);

    let a = domain.action_dim();
    let mut actions = BufWriter::new(File::create(dir.join("actions.bin"))?);
    for (i, ep) in episodes.iter().enumerate() {
        let rows = if a > 0 { ep.actions.len() } else { frames_per_episode - 1 };
        let mut data = vec![0.0f32; rows * a];
        for (t, &act) in ep.actions.iter().enumerate() {
            if act >= a {
                return Err(CoreError::invalid(
                    "write_pack",
                    format!("episode {i} action {act} out of range {a}"),
                ));
            }
            data[t * a + act] = 1.0;
        }
        let arr = Array::from_vec(&[rows, a], data)?;
        write_record(&mut actions, &episode_name(i), &arr)?;
    }
    drop(actions);

    let states: Vec<&Vec<WorldState>> = episodes.iter().map(|ep| &ep.states).collect();
    std::fs::write(dir.join("states.json"), serde_json::to_vec(&states)?)?;
    Ok(())
}

/// Reads a pack directory back into memory, validating framing against
/// the manifest.
pub fn read_pack(dir: &Path) -> Result<EpisodePack> {
    let manifest: PackManifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != PACK_FORMAT_VERSION {
        return Err(CoreError::CheckpointFormat(format!(
            "unsupported pack format_version {}",
            manifest.format_version
        )));
    }
    let domain = Domain::parse(&manifest.domain)?;
    let t = manifest.frames_per_episode;
    let res = manifest.resolution;
    let frame_len = res * res * 3;

    let mut frames_by_ep: Vec<Vec<Vec<f32>>> = Vec::with_capacity(manifest.episodes);
    let mut reader = BufReader::new(File::open(dir.join("frames.bin"))?);
    while let Some((name, arr)) = read_record(&mut reader)? {
        let want = episode_name(frames_by_ep.len());
        if name != want {
            return Err(CoreError::CheckpointFormat(format!(
                "frames.bin: expected record {want}, found {name}"
            )));
        }
        if arr.shape() != [t, res, res, 3] {
            return Err(CoreError::CheckpointFormat(format!(
                "frames.bin: record {name} has shape {:?}",
                arr.shape()
            )));
        }
        frames_by_ep
            .push(arr.into_data().chunks_exact(frame_len).map(|c| c.to_vec()).collect());
    }
    if frames_by_ep.len() != manifest.episodes {
        return Err(CoreError::CheckpointFormat(format!(
            "frames.bin holds {} episodes, manifest says {}",
            frames_by_ep.len(),
            manifest.episodes
        )));
    }

    let mut actions_by_ep: Vec<Vec<usize>> = vec![Vec::new(); manifest.episodes];
    let a = manifest.action_dim;
    let mut reader = BufReader::new(File::open(dir.join("actions.bin"))?);
    let mut idx = 0usize;
    while let Some((name, arr)) = read_record(&mut reader)? {
        if name != episode_name(idx) || arr.shape() != [t - 1, a] {
            return Err(CoreError::CheckpointFormat(format!(
                "actions.bin: unexpected record {name} with shape {:?}",
                arr.shape()
            )));
        }
        if a > 0 {
            actions_by_ep[idx] = arr
                .into_data()
                .chunks_exact(a)
                .map(|row| {
                    row.iter()
                        .position(|&v| v == 1.0)
                        .ok_or_else(|| CoreError::CheckpointFormat("non one-hot action row".into()))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        idx += 1;
    }
    if idx != manifest.episodes {
        return Err(CoreError::CheckpointFormat(format!(
            "actions.bin holds {idx} episodes, manifest says {}",
            manifest.episodes
        )));
    }

    let states: Vec<Vec<WorldState>> =
        serde_json::from_slice(&std::fs::read(dir.join("states.json"))?)?;
    if states.len() != manifest.episodes {
        return Err(CoreError::CheckpointFormat(format!(
            "states.json holds {} episodes, manifest says {}",
            states.len(),
            manifest.episodes
        )));
    }

    let episodes = frames_by_ep
        .into_iter()
        .zip(actions_by_ep)
        .zip(states)
        .map(|((frames, actions), states)| Episode { frames, actions, states })
        .collect();
    let _ = domain;
    Ok(EpisodePack { manifest, episodes })
}
