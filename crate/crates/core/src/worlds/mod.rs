//! Procedural multi-object video domains.
//!
//! Three worlds share a common episode and probe-pair format: a grid of
//! pushable cubes, an action-free three-body system, and a set of
//! factor-controlled sprites. All render to low-resolution RGB frames
//! with known ground-truth object states.

pub mod cubes;
pub mod episode;
pub mod pack;
pub mod physics;
pub mod probe;
mod raster;
pub mod sprites;

pub use episode::{
    generate_dataset, generate_episode, stack_channels, transition_starts, Domain, Episode,
    WorldState, RESOLUTION,
};
pub use pack::{read_pack, write_pack, EpisodePack, PackManifest, PACK_FORMAT_VERSION};
pub use probe::{
    generate_probe_set, read_probe_set, write_probe_set, ProbeMeta, ProbePair,
    PROBE_FORMAT_VERSION,
};
