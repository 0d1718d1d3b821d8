//! Model parameters: task timings, outcome rates, the classifier confusion
//! distribution, and the guard rules that keep the preemptive model honest
//! when the classifier is too slow to matter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for probability normalization and marginal checks.
pub const PROB_TOL: f64 = 1e-9;

/// Default time (seconds) before a verdict can be issued when the
/// classification floor is enabled in simulation.
pub const DEFAULT_CLASSIFICATION_FLOOR: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} must be a finite value in range ({value} given)")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("probabilities must sum to 1 within {PROB_TOL:e} (sum = {sum})")]
    SumViolation { sum: f64 },
    #[error("{field} disagrees with confusion marginal: given {given}, derived {derived}")]
    RateMismatch {
        field: &'static str,
        given: f64,
        derived: f64,
    },
}

fn check_unit(field: &'static str, value: f64) -> Result<(), ParamError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { field, value })
    }
}

fn check_positive(field: &'static str, value: f64) -> Result<(), ParamError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { field, value })
    }
}

/// Mean dwell times of the task model, in seconds.
///
/// `mtf` and `mts` are the mean times to terminal failure and to success.
/// `mtn` is the mean time for the classifier to issue a negative verdict;
/// `mtp` (positive verdict) is kept for log round-trips but plays no role
/// in makespan predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTimings {
    pub mtf: f64,
    pub mts: f64,
    pub mtn: f64,
    pub mtp: Option<f64>,
    /// Earliest time a verdict can fire when simulating with the shifted
    /// floor mode. Unused by the closed forms.
    pub classification_floor: f64,
}

impl TaskTimings {
    pub fn new(mtf: f64, mts: f64, mtn: f64) -> Result<Self, ParamError> {
        Self::with_all(mtf, mts, mtn, None, DEFAULT_CLASSIFICATION_FLOOR)
    }

    pub fn with_all(
        mtf: f64,
        mts: f64,
        mtn: f64,
        mtp: Option<f64>,
        classification_floor: f64,
    ) -> Result<Self, ParamError> {
        check_positive("mtf", mtf)?;
        check_positive("mts", mts)?;
        check_positive("mtn", mtn)?;
        if let Some(v) = mtp {
            check_positive("mtp", v)?;
        }
        if !classification_floor.is_finite() || classification_floor < 0.0 {
            return Err(ParamError::OutOfRange {
                field: "classification_floor",
                value: classification_floor,
            });
        }
        Ok(Self {
            mtf,
            mts,
            mtn,
            mtp,
            classification_floor,
        })
    }
}

/// Marginal success/failure rates of a single attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRates {
    pub p_s: f64,
    pub p_f: f64,
}

impl OutcomeRates {
    pub fn new(p_s: f64, p_f: f64) -> Result<Self, ParamError> {
        check_unit("p_s", p_s)?;
        check_unit("p_f", p_f)?;
        let sum = p_s + p_f;
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(ParamError::SumViolation { sum });
        }
        Ok(Self { p_s, p_f })
    }
}

/// Joint distribution of a single attempt outcome crossed with the
/// classifier verdict.
///
/// The six cells partition an attempt: `p_tp + p_fn + p_ncs` is the success
/// marginal, `p_tn + p_fp + p_ncf` the failure marginal. `ncs`/`ncf` are
/// attempts that terminate before any verdict fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSpec {
    pub p_tp: f64,
    pub p_fn: f64,
    pub p_tn: f64,
    pub p_fp: f64,
    pub p_ncs: f64,
    pub p_ncf: f64,
}

impl ConfusionSpec {
    pub fn new(
        p_tp: f64,
        p_fn: f64,
        p_tn: f64,
        p_fp: f64,
        p_ncs: f64,
        p_ncf: f64,
    ) -> Result<Self, ParamError> {
        let spec = Self {
            p_tp,
            p_fn,
            p_tn,
            p_fp,
            p_ncs,
            p_ncf,
        };
        validate_confusion(&spec, None)?;
        Ok(spec)
    }

    pub fn success_marginal(&self) -> f64 {
        self.p_tp + self.p_fn + self.p_ncs
    }

    pub fn failure_marginal(&self) -> f64 {
        self.p_tn + self.p_fp + self.p_ncf
    }

    fn cells(&self) -> [(&'static str, f64); 6] {
        [
            ("p_tp", self.p_tp),
            ("p_fn", self.p_fn),
            ("p_tn", self.p_tn),
            ("p_fp", self.p_fp),
            ("p_ncs", self.p_ncs),
            ("p_ncf", self.p_ncf),
        ]
    }
}

/// Checks cell ranges, normalization, and (optionally) agreement between
/// the confusion marginals and separately supplied outcome rates.
pub fn validate_confusion(
    spec: &ConfusionSpec,
    rates: Option<&OutcomeRates>,
) -> Result<(), ParamError> {
    for (field, value) in spec.cells() {
        check_unit(field, value)?;
    }
    let sum: f64 = spec.cells().iter().map(|(_, v)| v).sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(ParamError::SumViolation { sum });
    }
    if let Some(rates) = rates {
        let p_s = spec.success_marginal();
        if (p_s - rates.p_s).abs() > PROB_TOL {
            return Err(ParamError::RateMismatch {
                field: "p_s",
                given: rates.p_s,
                derived: p_s,
            });
        }
        let p_f = spec.failure_marginal();
        if (p_f - rates.p_f).abs() > PROB_TOL {
            return Err(ParamError::RateMismatch {
                field: "p_f",
                given: rates.p_f,
                derived: p_f,
            });
        }
    }
    Ok(())
}

/// Collapses a confusion distribution to its success/failure marginals.
pub fn derive_outcome_rates(spec: &ConfusionSpec) -> OutcomeRates {
    OutcomeRates {
        p_s: spec.success_marginal(),
        p_f: spec.failure_marginal(),
    }
}

/// Which structural guard `apply_guards` engaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardKind {
    /// `mtn < mtf` and `mtn < mts`: verdicts are fast enough to matter on
    /// both sides; parameters pass through unchanged.
    None,
    /// `mtn >= mtf`: a negative verdict on a failing attempt cannot beat the
    /// terminal failure, so the failure-side negative dwell is capped at
    /// `mtf`. Preemption can no longer save time, only lose it on false
    /// negatives.
    MtnCappedByMtf,
    /// `mtn >= mts`: a false-negative verdict cannot beat the success it
    /// would have aborted, so FN mass runs to success and is folded into TP.
    FnAverted,
    /// Both inequalities hold: the classifier cannot change the makespan at
    /// all and the preemptive process degenerates to the reactive one.
    ClassifierInert,
}

/// Guard-adjusted parameters consumed by the predictors, chain builders,
/// and the simulator.
///
/// `timings.mtn` holds the failure-side negative dwell after capping;
/// `mtn_successes` keeps the uncapped verdict latency used for FN dwells
/// and for shadow verdict coupling in reactive logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardedParams {
    pub timings: TaskTimings,
    pub confusion: ConfusionSpec,
    pub guard_applied: GuardKind,
    mtn_successes: f64,
}

impl GuardedParams {
    /// Builds guarded parameters without engaging any guard. Used for the
    /// reactive policy, where the classifier never acts on the process.
    pub fn unguarded(timings: TaskTimings, confusion: ConfusionSpec) -> Result<Self, ParamError> {
        validate_confusion(&confusion, None)?;
        Ok(Self {
            timings,
            confusion,
            guard_applied: GuardKind::None,
            mtn_successes: timings.mtn,
        })
    }

    /// Effective mean dwell of a preempted failing attempt (TN).
    pub fn mtn_for_failures(&self) -> f64 {
        self.timings.mtn
    }

    /// Effective mean dwell of a preempted succeeding attempt (FN).
    pub fn mtn_for_successes(&self) -> f64 {
        self.mtn_successes
    }

    pub fn rates(&self) -> OutcomeRates {
        derive_outcome_rates(&self.confusion)
    }
}

/// Applies the structural guards relating verdict latency to the task
/// dwells and returns the effective parameters.
///
/// The guard label always reflects the inequalities of the inputs as given;
/// reapplying on already-guarded values yields the same effective values
/// (the label may weaken, e.g. `ClassifierInert` inputs relabel as
/// `MtnCappedByMtf` once `mtn` has been capped below `mts`).
pub fn apply_guards(
    timings: &TaskTimings,
    confusion: &ConfusionSpec,
) -> Result<GuardedParams, ParamError> {
    validate_confusion(confusion, None)?;
    let capped = timings.mtn >= timings.mtf;
    let averted = timings.mtn >= timings.mts;
    let guard_applied = match (capped, averted) {
        (false, false) => GuardKind::None,
        (true, false) => GuardKind::MtnCappedByMtf,
        (false, true) => GuardKind::FnAverted,
        (true, true) => GuardKind::ClassifierInert,
    };
    let mut confusion = *confusion;
    if averted {
        confusion.p_tp += confusion.p_fn;
        confusion.p_fn = 0.0;
    }
    // FN dwell keeps the raw latency; the cap only applies to the failure
    // side. After an avert the FN mass is zero anyway.
    let mtn_successes = timings.mtn;
    let mut timings = *timings;
    if capped {
        timings.mtn = timings.mtf;
    }
    Ok(GuardedParams {
        timings,
        confusion,
        guard_applied,
        mtn_successes,
    })
}
