//! Makespan analysis for retried tasks with a run-time failure classifier.
//!
//! A task attempt either succeeds after a stochastic dwell or fails and is
//! retried. A classifier watching each attempt may issue an early negative
//! verdict, letting a supervisor preempt likely-failing attempts instead of
//! waiting for the terminal failure. This crate provides:
//!
//! * closed-form expected-makespan predictions for the reactive (run every
//!   attempt to termination) and preemptive policies ([`formulas`]),
//! * an absorbing Markov chain solver that serves as the ground-truth
//!   oracle for those formulas ([`markov`]),
//! * a Monte Carlo episode simulator with a deterministic per-episode
//!   RNG stream protocol ([`sim`]),
//! * a tick-driven behavior-tree engine reproducing the preemptive
//!   supervisor, equivalent to the simulator attempt-for-attempt ([`bt`]),
//! * rank-based significance testing for makespan comparisons ([`stats`]),
//! * attempt-log and config I/O plus parameter estimation ([`logio`]),
//! * parameter sweeps with policy crossover detection ([`sweep`]).

#![forbid(unsafe_code)]

pub mod bt;
pub mod expr;
pub mod formulas;
mod linalg;
pub mod logio;
pub mod markov;
pub mod params;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod sweep;

pub use bt::{
    build_twist_insert_tree, load_tree, run_pbt_episode, run_pbt_episode_traced, run_pbt_episodes,
    run_pbt_episodes_with_tree, tick, validate_tree, Blackboard, BtError, BtNode, BtRunConfig,
    NodeStatus, SimulatedPlant,
};
pub use formulas::{
    preemptive_makespan, reactive_makespan, time_saved, MakespanPrediction, Policy, PolicyAdvice,
    Recommendation, Variant,
};
pub use params::{
    apply_guards, derive_outcome_rates, validate_confusion, ConfusionSpec, GuardKind,
    GuardedParams, OutcomeRates, ParamError, TaskTimings,
};
pub use sim::{
    monte_carlo, run_episode, run_episodes, AttemptEvent, AttemptOutcome, ClassifierEvent,
    EpisodeResult, FloorMode, GroundTruth, MakespanStats, SimConfig, SimError, Verdict,
};
