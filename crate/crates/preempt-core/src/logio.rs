//! Attempt-log persistence (CSV), parameter estimation from logs, and
//! experiment configuration loading (JSON).
//!
//! The CSV layout is fixed for bit-stable goldens: a `# schema_version=1`
//! comment line, the header
//! `episode_id,attempt_idx,ground_truth,verdict,verdict_time_s,duration_s`,
//! then one row per attempt with times printed to 6 decimal places and an
//! empty field for an absent verdict time. Writing quantizes times to
//! microseconds; `read(write(x))` is idempotent and exact for times that
//! are already microsecond multiples.

use crate::formulas::Policy;
use crate::params::{
    derive_outcome_rates, validate_confusion, ConfusionSpec, OutcomeRates, TaskTimings,
    DEFAULT_CLASSIFICATION_FLOOR,
};
use crate::sim::{EpisodeResult, GroundTruth, SimConfig, Verdict};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use thiserror::Error;

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const CONFIG_SCHEMA_VERSION: u32 = 1;
const CSV_HEADER: &str = "episode_id,attempt_idx,ground_truth,verdict,verdict_time_s,duration_s";

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("schema error: {message}")]
    SchemaError { message: String },
    #[error("line {line}: invariant violation: {message}")]
    InvariantViolation { line: usize, message: String },
    #[error("attempt log is empty")]
    EmptyLog,
    #[error("attempt log contains no successful attempts")]
    NoSuccesses,
}

/// One attempt as persisted to the log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub episode_id: u64,
    pub attempt_idx: u32,
    pub ground_truth: GroundTruth,
    pub verdict: Verdict,
    pub verdict_time_s: Option<f64>,
    pub duration_s: f64,
}

impl AttemptRecord {
    /// `duration_s > 0`, `verdict == none` iff the time is absent, and the
    /// verdict never lands after the attempt ends.
    fn check(&self) -> Result<(), String> {
        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            return Err(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            ));
        }
        match (self.verdict, self.verdict_time_s) {
            (Verdict::None, Some(_)) => {
                return Err("verdict_time_s present without a verdict".into())
            }
            (Verdict::Pos | Verdict::Neg, None) => {
                return Err("verdict_time_s absent for a pos/neg verdict".into())
            }
            _ => {}
        }
        if let Some(t) = self.verdict_time_s {
            if !t.is_finite() || t < 0.0 {
                return Err(format!("verdict_time_s must be non-negative, got {t}"));
            }
            if t > self.duration_s {
                return Err(format!(
                    "verdict_time_s {t} exceeds duration_s {}",
                    self.duration_s
                ));
            }
        }
        Ok(())
    }
}

/// Flattens simulator episodes into log records, preserving order.
pub fn records_from_episodes(episodes: &[EpisodeResult]) -> Vec<AttemptRecord> {
    let mut out = Vec::new();
    for episode in episodes {
        for (idx, attempt) in episode.attempts.iter().enumerate() {
            out.push(AttemptRecord {
                episode_id: episode.episode,
                attempt_idx: idx as u32,
                ground_truth: attempt.ground_truth,
                verdict: attempt.verdict,
                verdict_time_s: attempt.verdict_time_s,
                duration_s: attempt.duration_s,
            });
        }
    }
    out
}

fn truth_str(truth: GroundTruth) -> &'static str {
    match truth {
        GroundTruth::Success => "success",
        GroundTruth::Failure => "failure",
    }
}

fn verdict_str(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Pos => "pos",
        Verdict::Neg => "neg",
        Verdict::None => "none",
    }
}

/// Writes records in the fixed CSV layout; byte output is deterministic
/// for a fixed input.
pub fn write_attempt_log<W: Write>(records: &[AttemptRecord], mut sink: W) -> Result<(), LogError> {
    writeln!(sink, "# schema_version={LOG_SCHEMA_VERSION}")?;
    writeln!(sink, "{CSV_HEADER}")?;
    for record in records {
        debug_assert!(record.check().is_ok());
        let verdict_time = match record.verdict_time_s {
            Some(t) => format!("{t:.6}"),
            None => String::new(),
        };
        writeln!(
            sink,
            "{},{},{},{},{},{:.6}",
            record.episode_id,
            record.attempt_idx,
            truth_str(record.ground_truth),
            verdict_str(record.verdict),
            verdict_time,
            record.duration_s,
        )?;
    }
    Ok(())
}

/// Reads and validates an attempt log. Line numbers in errors are
/// 1-based and count the version and header lines.
pub fn read_attempt_log<R: Read>(source: R) -> Result<Vec<AttemptRecord>, LogError> {
    let reader = BufReader::new(source);
    let mut records = Vec::new();
    let mut lines = reader.lines().enumerate();

    let (_, version_line) = lines.next().ok_or_else(|| LogError::SchemaError {
        message: "empty input; expected `# schema_version=...` line".into(),
    })?;
    let version_line = version_line?;
    let version = version_line
        .strip_prefix("# schema_version=")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| LogError::SchemaError {
            message: format!("expected `# schema_version=N` first line, got `{version_line}`"),
        })?;
    if version != LOG_SCHEMA_VERSION {
        return Err(LogError::SchemaError {
            message: format!("unsupported schema_version {version}, expected {LOG_SCHEMA_VERSION}"),
        });
    }

    let (_, header) = lines.next().ok_or_else(|| LogError::SchemaError {
        message: "missing header line".into(),
    })?;
    let header = header?;
    if header != CSV_HEADER {
        return Err(LogError::SchemaError {
            message: format!("bad header: expected `{CSV_HEADER}`, got `{header}`"),
        });
    }

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let parse_err = |message: String| LogError::ParseError {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(format!(
                "expected 6 fields, got {}",
                fields.len()
            )));
        }
        let episode_id: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("episode_id: {e}")))?;
        let attempt_idx: u32 = fields[1]
            .parse()
            .map_err(|e| parse_err(format!("attempt_idx: {e}")))?;
        let ground_truth = match fields[2] {
            "success" => GroundTruth::Success,
            "failure" => GroundTruth::Failure,
            other => return Err(parse_err(format!("ground_truth: unknown value `{other}`"))),
        };
        let verdict = match fields[3] {
            "pos" => Verdict::Pos,
            "neg" => Verdict::Neg,
            "none" => Verdict::None,
            other => return Err(parse_err(format!("verdict: unknown value `{other}`"))),
        };
        let verdict_time_s = if fields[4].is_empty() {
            None
        } else {
            Some(
                fields[4]
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("verdict_time_s: {e}")))?,
            )
        };
        let duration_s: f64 = fields[5]
            .parse()
            .map_err(|e| parse_err(format!("duration_s: {e}")))?;
        let record = AttemptRecord {
            episode_id,
            attempt_idx,
            ground_truth,
            verdict,
            verdict_time_s,
            duration_s,
        };
        record
            .check()
            .map_err(|message| LogError::InvariantViolation {
                line: line_no,
                message,
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Raw event tallies over a log, keyed by (ground truth, verdict).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EventCounts {
    pub true_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub no_call_success: u64,
    pub no_call_failure: u64,
    pub total: u64,
}

/// Model parameters recovered from a reactive attempt log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatedParams {
    pub timings: TaskTimings,
    pub confusion: ConfusionSpec,
    pub rates: OutcomeRates,
    pub counts: EventCounts,
    /// Coverage notes: empty event classes and timing fallbacks.
    pub warnings: Vec<String>,
}

/// Tallies event frequencies and mean times from a log of reactive
/// attempts (verdicts recorded but never acted on).
///
/// Probabilities are plain event counts over total attempts. Mean times
/// to failure/success average every failed/successful attempt regardless
/// of verdict; the negative and positive verdict latencies average
/// `verdict_time_s` over the matching verdicts. Classes with no
/// observations yield probability zero plus a coverage warning; missing
/// failure or negative-verdict coverage falls back to the success-side
/// mean so the timing set stays constructible.
pub fn estimate_params(records: &[AttemptRecord]) -> Result<EstimatedParams, LogError> {
    if records.is_empty() {
        return Err(LogError::EmptyLog);
    }
    let mut counts = EventCounts::default();
    let mut success_time = 0.0;
    let mut failure_time = 0.0;
    let mut neg_time = 0.0;
    let mut neg_count = 0u64;
    let mut pos_time = 0.0;
    let mut pos_count = 0u64;
    for record in records {
        counts.total += 1;
        match (record.ground_truth, record.verdict) {
            (GroundTruth::Success, Verdict::Pos) => counts.true_pos += 1,
            (GroundTruth::Success, Verdict::Neg) => counts.false_neg += 1,
            (GroundTruth::Success, Verdict::None) => counts.no_call_success += 1,
            (GroundTruth::Failure, Verdict::Neg) => counts.true_neg += 1,
            (GroundTruth::Failure, Verdict::Pos) => counts.false_pos += 1,
            (GroundTruth::Failure, Verdict::None) => counts.no_call_failure += 1,
        }
        match record.ground_truth {
            GroundTruth::Success => success_time += record.duration_s,
            GroundTruth::Failure => failure_time += record.duration_s,
        }
        if let Some(t) = record.verdict_time_s {
            match record.verdict {
                Verdict::Neg => {
                    neg_time += t;
                    neg_count += 1;
                }
                Verdict::Pos => {
                    pos_time += t;
                    pos_count += 1;
                }
                // Unreachable for validated records; tolerated here.
                Verdict::None => debug_assert!(false, "verdict_time_s without a verdict"),
            }
        }
    }

    let successes = counts.true_pos + counts.false_neg + counts.no_call_success;
    let failures = counts.total - successes;
    if successes == 0 {
        return Err(LogError::NoSuccesses);
    }

    let mut warnings = Vec::new();
    for (name, n) in [
        ("tp", counts.true_pos),
        ("fn", counts.false_neg),
        ("tn", counts.true_neg),
        ("fp", counts.false_pos),
        ("ncs", counts.no_call_success),
        ("ncf", counts.no_call_failure),
    ] {
        if n == 0 {
            warnings.push(format!(
                "no {name} events observed; p_{name} estimated as 0"
            ));
        }
    }

    let total = counts.total as f64;
    let confusion = ConfusionSpec::new(
        counts.true_pos as f64 / total,
        counts.false_neg as f64 / total,
        counts.true_neg as f64 / total,
        counts.false_pos as f64 / total,
        counts.no_call_success as f64 / total,
        counts.no_call_failure as f64 / total,
    )
    .map_err(|e| LogError::SchemaError {
        message: format!("tallied confusion rejected: {e}"),
    })?;
    let rates = derive_outcome_rates(&confusion);

    let mts = success_time / successes as f64;
    let mtf = if failures > 0 {
        failure_time / failures as f64
    } else {
        warnings.push("no failed attempts; mtf defaulted to mts".into());
        mts
    };
    let mtn = if neg_count > 0 {
        neg_time / neg_count as f64
    } else {
        warnings.push("no negative verdicts; mtn defaulted to mts".into());
        mts
    };
    let mtp = if pos_count > 0 {
        Some(pos_time / pos_count as f64)
    } else {
        warnings.push("no positive verdicts; mtp unavailable".into());
        None
    };
    let timings =
        TaskTimings::with_all(mtf, mts, mtn, mtp, DEFAULT_CLASSIFICATION_FLOOR).map_err(|e| {
            LogError::SchemaError {
                message: format!("estimated timings rejected: {e}"),
            }
        })?;

    Ok(EstimatedParams {
        timings,
        confusion,
        rates,
        counts,
        warnings,
    })
}

/// Per-episode makespans (sum of attempt durations, in episode-id order).
/// With `filter_trivial`, episodes consisting of a single successful
/// attempt are dropped; a preempted attempt never ends an episode, so
/// single-attempt episodes are exactly the unpreempted one-shot successes.
pub fn episode_makespans(records: &[AttemptRecord], filter_trivial: bool) -> Vec<f64> {
    let mut by_episode: BTreeMap<u64, (usize, GroundTruth, f64)> = BTreeMap::new();
    for record in records {
        let entry = by_episode
            .entry(record.episode_id)
            .or_insert((0, record.ground_truth, 0.0));
        entry.0 += 1;
        entry.1 = record.ground_truth;
        entry.2 += record.duration_s;
    }
    by_episode
        .values()
        .filter(|(n, last_truth, _)| {
            !(filter_trivial && *n == 1 && *last_truth == GroundTruth::Success)
        })
        .map(|(_, _, makespan)| *makespan)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimingsDoc {
    mtf: f64,
    mts: f64,
    mtn: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mtp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classification_floor: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfusionDoc {
    p_tp: f64,
    p_fn: f64,
    p_tn: f64,
    p_fp: f64,
    p_ncs: f64,
    p_ncf: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatesDoc {
    p_s: f64,
    p_f: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    schema_version: u32,
    timings: TimingsDoc,
    confusion: ConfusionDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rates: Option<RatesDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim: Option<SimConfig>,
}

/// A fully validated experiment description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub timings: TaskTimings,
    pub confusion: ConfusionSpec,
    pub rates: OutcomeRates,
    pub sim: SimConfig,
}

/// Loads and validates a JSON experiment config. Unknown keys are
/// rejected; explicit `rates` must agree with the confusion marginals.
pub fn read_config<R: Read>(source: R) -> Result<ExperimentConfig, LogError> {
    let doc: ConfigDoc = serde_json::from_reader(source).map_err(|e| LogError::SchemaError {
        message: e.to_string(),
    })?;
    if doc.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(LogError::SchemaError {
            message: format!(
                "unsupported schema_version {}, expected {CONFIG_SCHEMA_VERSION}",
                doc.schema_version
            ),
        });
    }
    let schema_err = |path: &str, e: &dyn std::fmt::Display| LogError::SchemaError {
        message: format!("{path}: {e}"),
    };
    let timings = TaskTimings::with_all(
        doc.timings.mtf,
        doc.timings.mts,
        doc.timings.mtn,
        doc.timings.mtp,
        doc.timings
            .classification_floor
            .unwrap_or(DEFAULT_CLASSIFICATION_FLOOR),
    )
    .map_err(|e| schema_err("timings", &e))?;
    let confusion = ConfusionSpec::new(
        doc.confusion.p_tp,
        doc.confusion.p_fn,
        doc.confusion.p_tn,
        doc.confusion.p_fp,
        doc.confusion.p_ncs,
        doc.confusion.p_ncf,
    )
    .map_err(|e| schema_err("confusion", &e))?;
    let rates = match doc.rates {
        Some(r) => {
            let rates = OutcomeRates::new(r.p_s, r.p_f).map_err(|e| schema_err("rates", &e))?;
            validate_confusion(&confusion, Some(&rates)).map_err(|e| schema_err("rates", &e))?;
            rates
        }
        None => derive_outcome_rates(&confusion),
    };
    let sim = doc.sim.unwrap_or_else(|| SimConfig {
        policy: Policy::Reactive,
        ..SimConfig::default()
    });
    Ok(ExperimentConfig {
        timings,
        confusion,
        rates,
        sim,
    })
}

/// Writes a config document that `read_config` parses back identically.
pub fn write_config<W: Write>(config: &ExperimentConfig, mut sink: W) -> Result<(), LogError> {
    let doc = ConfigDoc {
        schema_version: CONFIG_SCHEMA_VERSION,
        timings: TimingsDoc {
            mtf: config.timings.mtf,
            mts: config.timings.mts,
            mtn: config.timings.mtn,
            mtp: config.timings.mtp,
            classification_floor: Some(config.timings.classification_floor),
        },
        confusion: ConfusionDoc {
            p_tp: config.confusion.p_tp,
            p_fn: config.confusion.p_fn,
            p_tn: config.confusion.p_tn,
            p_fp: config.confusion.p_fp,
            p_ncs: config.confusion.p_ncs,
            p_ncf: config.confusion.p_ncf,
        },
        rates: Some(RatesDoc {
            p_s: config.rates.p_s,
            p_f: config.rates.p_f,
        }),
        sim: Some(config.sim),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| LogError::SchemaError {
        message: e.to_string(),
    })?;
    sink.write_all(text.as_bytes())?;
    sink.write_all(b"\n")?;
    Ok(())
}
