//! Average consensus over noisy, non-coherent over-the-air aggregation.
//!
//! Agents pick one of two half-duplex slots at random, transmit
//! `sqrt(ρ x_j)` over Rayleigh fading, and update from the received power.
//! The crate simulates that protocol on static and time-varying graphs,
//! checks step-size and connectivity conditions, evaluates the mean-square
//! bound constants, and runs seeded Monte Carlo experiments.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod protocol;
pub mod rng;

pub use analysis::{
    bound_constants, estimate_conditional_moments, expected_laplacian, lyapunov, BoundConstants,
    BoundMode, LaplacianSet, MetricsTrace, MomentReport,
};
pub use channel::{
    conditional_mean_power, draw_round, received_power_direct, received_power_expanded,
    ChannelModel, ChannelSpec, NegativePolicy, RoundDraw, SignalBreakdown,
};
pub use error::{Error, Result};
pub use graph::{
    certify_aligned_windows, generate_sampled_sequence, is_jointly_connected,
    ConnectivityCertificate, PhysicalTopology, StepFailures, TopologySequence,
};
pub use harness::{compare, run, validate, Resolved, RunOptions, RunReport, Scenario};
pub use protocol::{
    step, step_baseline, step_heterogeneous, validate_schedule, NoiseDecomposition,
    ScheduleVerdict, StateVector, StepsizeRule, StepsizeSchedule, ValidationMode,
};
