//! Synthetic multi-scene e-commerce world and the cascade funnel simulator.
//!
//! Scene 0 is the scene the models serve ("own scene"); every other scene only
//! contributes purchases of previous-stage candidates.

mod episode;
mod rng;
mod world;

pub use episode::{
    extend_history, run_simulation, simulate_episode, EpisodeConfig, FunnelEvent, SimulationOutput,
};
pub use rng::stream_rng;
pub use world::{
    generate_world, ground_truth_prob, GroundTruthModel, ItemRecord, ProbKind, UserProfile, World,
    WorldConfig,
};
