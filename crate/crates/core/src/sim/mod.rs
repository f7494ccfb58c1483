//! Seeded simulation with common random numbers.
//!
//! Noise and initial states are counter-based: the draw for `(trial, step)`
//! never depends on what else was sampled, so trials parallelize freely and
//! two policies evaluated with the same seeds see identical randomness.

mod dump;
mod external;
mod noise;
mod policy;
mod rollout;

pub use dump::{
    read_trajectory, write_noise_dump, write_trajectory, FinalRecord, NoiseLine, StepRecord, TrajectoryDump,
    TrajectoryHeader, TrajectoryLine, DUMP_VERSION,
};
pub use external::{parse_action, serve_policy, ExternalPolicy, WireBody, WireMessage, PROTOCOL_VERSION};
pub use noise::{InitialStateSchedule, NoiseStream, ScheduleMode};
pub use policy::{LinearPolicy, Observation, Policy, PolicySpec, ScaledOracle, ZeroPolicy, DEFAULT_QUERY_TIMEOUT};
pub use rollout::{discounted_sum, step, PairedTrajectory, Simulator, Trajectory, TrajectorySeeds};
