//! Monte Carlo simulation of retry episodes under either policy.
//!
//! An attempt draws exactly two values from its episode stream: one uniform
//! that picks the confusion cell (success cells first: TP, FN, NCS, then
//! TN, FP, NCF) and one exponential dwell. Because the draw count never
//! depends on policy or floor mode, runs that share a seed see identical
//! event sequences, which the floor and behavior-tree equivalence tests
//! rely on.
//!
//! Verdict times recorded in logs are coupled to the attempt duration as
//! `duration * latency_mean / dwell_mean` (clamped to the duration), so
//! estimated latencies stay unbiased while every record satisfies
//! `verdict_time <= duration`.

use crate::formulas::Policy;
use crate::params::GuardedParams;
use crate::rng::{episode_rng, sample_dwell, unit_open};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("episode {episode} exceeded the attempt limit {limit}")]
    AttemptLimitExceeded { episode: u64, limit: u32 },
    #[error("simulation requires at least one episode")]
    NoEpisodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierEvent {
    Tp,
    Fn,
    Tn,
    Fp,
    Ncs,
    Ncf,
}

impl ClassifierEvent {
    pub fn ground_truth(self) -> GroundTruth {
        match self {
            Self::Tp | Self::Fn | Self::Ncs => GroundTruth::Success,
            Self::Tn | Self::Fp | Self::Ncf => GroundTruth::Failure,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Tp => "TP",
            Self::Fn => "FN",
            Self::Tn => "TN",
            Self::Fp => "FP",
            Self::Ncs => "NCS",
            Self::Ncf => "NCF",
        }
    }
}

/// What the acting policy observed for one attempt: the preemptive policy
/// sees the full classified event, the reactive policy only the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptEvent {
    Reactive(GroundTruth),
    Classified(ClassifierEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pos,
    Neg,
    None,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorMode {
    #[default]
    None,
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub ground_truth: GroundTruth,
    pub event: AttemptEvent,
    pub duration_s: f64,
    pub preempted: bool,
    pub verdict: Verdict,
    pub verdict_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Stream index of this episode under the run seed.
    pub episode: u64,
    pub seed: u64,
    pub attempts: Vec<AttemptOutcome>,
    pub makespan_s: f64,
}

impl EpisodeResult {
    pub fn attempt_count(&self) -> usize {
        self.attempts.len()
    }

    pub fn preempted_count(&self) -> usize {
        self.attempts.iter().filter(|a| a.preempted).count()
    }
}

fn default_n_episodes() -> u64 {
    1000
}

fn default_max_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

fn default_policy() -> Policy {
    Policy::Reactive
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default = "default_n_episodes")]
    pub n_episodes: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts_per_episode: u32,
    #[serde(default)]
    pub floor_mode: FloorMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Reactive,
            n_episodes: default_n_episodes(),
            seed: 0,
            max_attempts_per_episode: DEFAULT_MAX_ATTEMPTS,
            floor_mode: FloorMode::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MakespanStats {
    pub mean_s: f64,
    pub std_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub n: u64,
    /// Per-episode makespans in episode order, kept for downstream tests.
    pub makespans: Vec<f64>,
}

impl MakespanStats {
    pub fn from_makespans(makespans: Vec<f64>) -> Self {
        let n = makespans.len() as u64;
        let mean_s = makespans.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            makespans.iter().map(|m| (m - mean_s).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let min_s = makespans.iter().copied().fold(f64::INFINITY, f64::min);
        let max_s = makespans.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean_s,
            std_s: var.sqrt(),
            min_s,
            max_s,
            n,
            makespans,
        }
    }

    pub fn standard_error(&self) -> f64 {
        self.std_s / (self.n as f64).sqrt()
    }
}

fn draw_event(rng: &mut ChaCha12Rng, params: &GuardedParams) -> ClassifierEvent {
    let c = &params.confusion;
    let cells = [
        (ClassifierEvent::Tp, c.p_tp),
        (ClassifierEvent::Fn, c.p_fn),
        (ClassifierEvent::Ncs, c.p_ncs),
        (ClassifierEvent::Tn, c.p_tn),
        (ClassifierEvent::Fp, c.p_fp),
        (ClassifierEvent::Ncf, c.p_ncf),
    ];
    let u = unit_open(rng);
    let mut acc = 0.0;
    for (event, mass) in cells {
        acc += mass;
        if u < acc {
            return event;
        }
    }
    // Rounding left u at or above the accumulated sum; take the last
    // positive cell.
    cells
        .iter()
        .rev()
        .find(|(_, mass)| *mass > 0.0)
        .map(|(event, _)| *event)
        .expect("confusion distribution has positive mass")
}

fn verdict_coupling(latency_mean: f64, dwell_mean: f64, duration: f64) -> f64 {
    duration * (latency_mean / dwell_mean).min(1.0)
}

/// Samples one attempt. Consumes exactly one uniform and one exponential
/// draw regardless of policy or floor mode.
pub fn sample_attempt(
    rng: &mut ChaCha12Rng,
    params: &GuardedParams,
    policy: Policy,
    floor_mode: FloorMode,
) -> AttemptOutcome {
    let event = draw_event(rng, params);
    let truth = event.ground_truth();
    let t = &params.timings;
    // Latency for shadow/positive verdict coupling; mtp falls back to the
    // raw negative latency when unspecified.
    let raw_mtn = params.mtn_for_successes();
    let mtp = t.mtp.unwrap_or(raw_mtn);
    let floor = match floor_mode {
        FloorMode::None => 0.0,
        FloorMode::Shifted => t.classification_floor,
    };
    match policy {
        Policy::Preemptive => {
            let (duration_s, preempted, verdict, verdict_time_s) = match event {
                ClassifierEvent::Tp => {
                    let d = sample_dwell(rng, t.mts);
                    (
                        d,
                        false,
                        Verdict::Pos,
                        Some(verdict_coupling(mtp, t.mts, d)),
                    )
                }
                ClassifierEvent::Ncs => (sample_dwell(rng, t.mts), false, Verdict::None, None),
                ClassifierEvent::Fn => {
                    let d = floor + sample_dwell(rng, params.mtn_for_successes());
                    (d, true, Verdict::Neg, Some(d))
                }
                ClassifierEvent::Tn => {
                    let d = floor + sample_dwell(rng, params.mtn_for_failures());
                    (d, true, Verdict::Neg, Some(d))
                }
                ClassifierEvent::Fp => {
                    let d = sample_dwell(rng, t.mtf);
                    (
                        d,
                        false,
                        Verdict::Pos,
                        Some(verdict_coupling(mtp, t.mtf, d)),
                    )
                }
                ClassifierEvent::Ncf => (sample_dwell(rng, t.mtf), false, Verdict::None, None),
            };
            AttemptOutcome {
                ground_truth: truth,
                event: AttemptEvent::Classified(event),
                duration_s,
                preempted,
                verdict,
                verdict_time_s,
            }
        }
        Policy::Reactive => {
            // Run to termination; verdicts are recorded but never acted on.
            let dwell_mean = match truth {
                GroundTruth::Success => t.mts,
                GroundTruth::Failure => t.mtf,
            };
            let duration_s = sample_dwell(rng, dwell_mean);
            let (verdict, verdict_time_s) = match event {
                ClassifierEvent::Tp | ClassifierEvent::Fp => (
                    Verdict::Pos,
                    Some(verdict_coupling(mtp, dwell_mean, duration_s)),
                ),
                ClassifierEvent::Fn | ClassifierEvent::Tn => (
                    Verdict::Neg,
                    Some(verdict_coupling(raw_mtn, dwell_mean, duration_s)),
                ),
                ClassifierEvent::Ncs | ClassifierEvent::Ncf => (Verdict::None, None),
            };
            AttemptOutcome {
                ground_truth: truth,
                event: AttemptEvent::Reactive(truth),
                duration_s,
                preempted: false,
                verdict,
                verdict_time_s,
            }
        }
    }
}

fn attempt_terminates(outcome: &AttemptOutcome, policy: Policy) -> bool {
    match policy {
        Policy::Reactive => outcome.ground_truth == GroundTruth::Success,
        Policy::Preemptive => outcome.ground_truth == GroundTruth::Success && !outcome.preempted,
    }
}

/// Runs attempts until the first terminal success or the attempt limit.
pub fn run_episode(
    rng: &mut ChaCha12Rng,
    params: &GuardedParams,
    cfg: &SimConfig,
    episode: u64,
) -> Result<EpisodeResult, SimError> {
    let mut attempts = Vec::new();
    let mut makespan_s = 0.0;
    loop {
        if attempts.len() as u32 >= cfg.max_attempts_per_episode {
            return Err(SimError::AttemptLimitExceeded {
                episode,
                limit: cfg.max_attempts_per_episode,
            });
        }
        let outcome = sample_attempt(rng, params, cfg.policy, cfg.floor_mode);
        makespan_s += outcome.duration_s;
        let done = attempt_terminates(&outcome, cfg.policy);
        attempts.push(outcome);
        if done {
            return Ok(EpisodeResult {
                episode,
                seed: cfg.seed,
                attempts,
                makespan_s,
            });
        }
    }
}

/// Runs all episodes on the current rayon pool. Episode `i` always uses
/// stream `i` of the run seed, so results are identical however the work
/// is scheduled.
pub fn run_episodes(
    params: &GuardedParams,
    cfg: &SimConfig,
) -> Result<Vec<EpisodeResult>, SimError> {
    if cfg.n_episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    let results: Vec<Result<EpisodeResult, SimError>> = (0..cfg.n_episodes)
        .into_par_iter()
        .map(|episode| {
            let mut rng = episode_rng(cfg.seed, episode);
            run_episode(&mut rng, params, cfg, episode)
        })
        .collect();
    results.into_iter().collect()
}

/// Summary statistics of episode makespans; the full list is retained.
pub fn monte_carlo(params: &GuardedParams, cfg: &SimConfig) -> Result<MakespanStats, SimError> {
    let episodes = run_episodes(params, cfg)?;
    Ok(MakespanStats::from_makespans(
        episodes.into_iter().map(|e| e.makespan_s).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{apply_guards, ConfusionSpec, GuardedParams, TaskTimings};

    fn worked_params() -> GuardedParams {
        let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
        let confusion = ConfusionSpec::new(0.4, 0.1, 0.3, 0.1, 0.05, 0.05).unwrap();
        apply_guards(&timings, &confusion).unwrap()
    }

    fn preemptive_cfg(n: u64, seed: u64) -> SimConfig {
        SimConfig {
            policy: Policy::Preemptive,
            n_episodes: n,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn certain_tp_attempts_always_succeed_unpreempted() {
        let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
        let confusion = ConfusionSpec::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let params = apply_guards(&timings, &confusion).unwrap();
        let mut rng = episode_rng(1, 0);
        for _ in 0..100 {
            let a = sample_attempt(&mut rng, &params, Policy::Preemptive, FloorMode::None);
            assert_eq!(a.event, AttemptEvent::Classified(ClassifierEvent::Tp));
            assert!(!a.preempted);
            assert_eq!(a.verdict, Verdict::Pos);
            assert!(a.verdict_time_s.unwrap() <= a.duration_s);
        }
    }

    #[test]
    fn certain_tn_attempts_are_preempted_with_mtn_dwell() {
        let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
        let confusion = ConfusionSpec::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let params = apply_guards(&timings, &confusion).unwrap();
        let mut rng = episode_rng(2, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let a = sample_attempt(&mut rng, &params, Policy::Preemptive, FloorMode::None);
            assert!(a.preempted);
            assert_eq!(a.verdict_time_s, Some(a.duration_s));
            sum += a.duration_s;
        }
        let mean = sum / n as f64;
        // 3 sigma of the sample mean of Exp(5) at n = 1e5.
        assert!((mean - 5.0).abs() < 3.0 * 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn event_frequencies_match_the_confusion_joint() {
        let params = worked_params();
        let mut rng = episode_rng(3, 0);
        let n = 1_000_000;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            let a = sample_attempt(&mut rng, &params, Policy::Preemptive, FloorMode::None);
            let AttemptEvent::Classified(event) = a.event else {
                panic!("preemptive attempts carry classified events")
            };
            counts[event as usize] += 1;
        }
        let expected = [0.4, 0.1, 0.3, 0.1, 0.05, 0.05];
        for (event, p) in expected.iter().enumerate() {
            let freq = counts[event] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 3.0 * sigma,
                "event {event}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn reactive_attempts_record_shadow_verdicts_within_duration() {
        let params = worked_params();
        let mut rng = episode_rng(4, 0);
        let mut saw_verdict = false;
        for _ in 0..1000 {
            let a = sample_attempt(&mut rng, &params, Policy::Reactive, FloorMode::None);
            assert!(!a.preempted);
            assert!(matches!(a.event, AttemptEvent::Reactive(_)));
            match a.verdict {
                Verdict::None => assert!(a.verdict_time_s.is_none()),
                _ => {
                    saw_verdict = true;
                    assert!(a.verdict_time_s.unwrap() <= a.duration_s);
                }
            }
        }
        assert!(saw_verdict);
    }

    #[test]
    fn episode_ends_on_first_terminal_success() {
        let params = worked_params();
        let cfg = preemptive_cfg(1, 7);
        let mut rng = episode_rng(7, 0);
        let episode = run_episode(&mut rng, &params, &cfg, 0).unwrap();
        let (last, rest) = episode.attempts.split_last().unwrap();
        assert_eq!(last.ground_truth, GroundTruth::Success);
        assert!(!last.preempted);
        for attempt in rest {
            assert!(attempt.preempted || attempt.ground_truth == GroundTruth::Failure);
        }
        let total: f64 = episode.attempts.iter().map(|a| a.duration_s).sum();
        assert!((episode.makespan_s - total).abs() < 1e-12);
    }

    #[test]
    fn hopeless_process_hits_the_attempt_limit() {
        let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
        let confusion = ConfusionSpec::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let params = apply_guards(&timings, &confusion).unwrap();
        let cfg = SimConfig {
            policy: Policy::Preemptive,
            n_episodes: 1,
            seed: 0,
            max_attempts_per_episode: 1000,
            floor_mode: FloorMode::None,
        };
        let mut rng = episode_rng(0, 0);
        assert_eq!(
            run_episode(&mut rng, &params, &cfg, 0).unwrap_err(),
            SimError::AttemptLimitExceeded {
                episode: 0,
                limit: 1000
            }
        );
    }

    #[test]
    fn preemptive_mean_tracks_renewal_prediction() {
        let params = worked_params();
        let stats = monte_carlo(&params, &preemptive_cfg(100_000, 11)).unwrap();
        let predicted = 9.5 / 0.45;
        assert!(
            (stats.mean_s - predicted).abs() / predicted < 0.01,
            "mean {} vs {}",
            stats.mean_s,
            predicted
        );
        assert!((stats.mean_s - 21.1).abs() < 0.3);
    }

    #[test]
    fn reactive_mean_tracks_renewal_prediction() {
        // Events come from the worked confusion, so the relevant rates are
        // its marginals (0.55, 0.45): E[M] = (0.45*20 + 0.55*10)/0.55.
        let params = worked_params();
        let predicted = 14.5 / 0.55;
        for seed in [13, 5] {
            let cfg = SimConfig {
                policy: Policy::Reactive,
                n_episodes: 100_000,
                seed,
                ..SimConfig::default()
            };
            let stats = monte_carlo(&params, &cfg).unwrap();
            assert!(
                (stats.mean_s - predicted).abs() / predicted < 0.015,
                "seed {seed}: mean {} vs {predicted}",
                stats.mean_s
            );
        }
    }

    #[test]
    fn same_seed_is_bit_identical_and_thread_count_invariant() {
        let params = worked_params();
        let cfg = preemptive_cfg(2000, 99);
        let a = monte_carlo(&params, &cfg).unwrap();
        let b = monte_carlo(&params, &cfg).unwrap();
        assert_eq!(a, b);

        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_episodes(&params, &cfg).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| run_episodes(&params, &cfg).unwrap());
        assert_eq!(single, many);
    }

    #[test]
    fn attempt_counts_follow_a_geometric_law() {
        // Chi-square GOF on attempts-per-episode against Geometric(p_term)
        // where p_term = p_tp + p_ncs = 0.45.
        let params = worked_params();
        let cfg = preemptive_cfg(100_000, 17);
        let episodes = run_episodes(&params, &cfg).unwrap();
        let p = 0.45_f64;
        let k_max = 12usize;
        let mut observed = vec![0.0_f64; k_max + 1];
        for e in &episodes {
            let k = e.attempt_count().min(k_max + 1) - 1;
            observed[k] += 1.0;
        }
        let n = episodes.len() as f64;
        let mut chi2 = 0.0;
        for (k, obs) in observed.iter().enumerate() {
            let prob = if k < k_max {
                p * (1.0 - p).powi(k as i32)
            } else {
                (1.0 - p).powi(k as i32)
            };
            let expected = n * prob;
            chi2 += (obs - expected).powi(2) / expected;
        }
        let p_value = crate::stats::chi2_sf(chi2, k_max as f64);
        assert!(p_value > 0.01, "chi2 {chi2}, p {p_value}");
    }

    #[test]
    fn shifted_floor_adds_exactly_one_floor_per_preempted_attempt() {
        let params = worked_params();
        let base_cfg = preemptive_cfg(20_000, 23);
        let shifted_cfg = SimConfig {
            floor_mode: FloorMode::Shifted,
            ..base_cfg
        };
        let base = run_episodes(&params, &base_cfg).unwrap();
        let shifted = run_episodes(&params, &shifted_cfg).unwrap();
        let floor = params.timings.classification_floor;
        let mut preempted_total = 0usize;
        for (a, b) in base.iter().zip(&shifted) {
            // Identical event sequences: the floor consumes no extra draws.
            let label = |e: &EpisodeResult| -> Vec<AttemptEvent> {
                e.attempts.iter().map(|a| a.event).collect()
            };
            assert_eq!(label(a), label(b));
            let negs = a.preempted_count();
            preempted_total += negs;
            let excess = b.makespan_s - a.makespan_s;
            assert!((excess - floor * negs as f64).abs() < 1e-9);
        }
        // Mean excess is bounded by floor * E[preempted attempts/episode]
        // within sampling error. E = (p_fn + p_tn) / (p_tp + p_ncs).
        let n = base.len() as f64;
        let mean_excess = preempted_total as f64 / n * floor;
        let e_neg = 0.4 / 0.45;
        let counts: Vec<f64> = base.iter().map(|e| e.preempted_count() as f64).collect();
        let mean_neg = counts.iter().sum::<f64>() / n;
        let var_neg = counts.iter().map(|c| (c - mean_neg).powi(2)).sum::<f64>() / (n - 1.0);
        let bound = floor * (e_neg + 3.0 * (var_neg / n).sqrt());
        assert!(mean_excess <= bound, "{mean_excess} vs {bound}");
    }

    #[test]
    fn zero_episode_run_is_rejected() {
        let params = worked_params();
        let cfg = preemptive_cfg(0, 0);
        assert_eq!(
            run_episodes(&params, &cfg).unwrap_err(),
            SimError::NoEpisodes
        );
    }
}
