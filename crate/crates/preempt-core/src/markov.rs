//! Absorbing Markov chains in canonical form, the fundamental matrix, and
//! the chain encodings of the reactive and preemptive retry processes.
//!
//! Retry processes are encoded as discrete chains with a one-second step:
//! each outcome branch becomes a dwell state whose self-loop probability
//! `1 - 1/mean` makes the expected visit count equal the mean dwell in
//! seconds. Expected steps to absorption then read off as expected seconds,
//! with each visit to `Run` contributing one extra second.

use crate::linalg::{lu_factor, Matrix};
use crate::params::{GuardedParams, OutcomeRates, TaskTimings};
use serde_json::json;
use thiserror::Error;

/// Transient row sums must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Pivot threshold below which (I - Q) is reported singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("chain has no absorbing state")]
    NoAbsorbingState,
    #[error("duplicate state label {0:?}")]
    DuplicateState(String),
    #[error("transition references unknown state {0:?}")]
    UnknownState(String),
    #[error("negative transition weight {weight} on {from:?} -> {to:?}")]
    NegativeWeight {
        from: String,
        to: String,
        weight: f64,
    },
    #[error("absorbing state {0:?} has outgoing transitions")]
    AbsorbingOutflow(String),
    #[error("row for state {state:?} sums to {sum}, expected 1")]
    RowSumError { state: String, sum: f64 },
    #[error("transient state {0:?} cannot reach any absorbing state")]
    UnreachableAbsorption(String),
    #[error("(I - Q) is singular; chain does not absorb")]
    SingularSystem,
    #[error("mean dwell {mean} s for {state:?} is below the 1 s step of the chain encoding")]
    DwellUnencodable { state: String, mean: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Transient,
    Absorbing,
}

/// Which preemptive chain to build for the published expected-time formula.
///
/// The printed closed form keeps non-classified failures out of the
/// returning mass, which absorbs them; the prose model routes them back to
/// `Run` like every other failed attempt. `AsPrinted` reproduces the former,
/// `ChainDerived` the latter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVariant {
    AsPrinted,
    ChainDerived,
}

/// Canonical-form absorbing chain: transient states first, `q` the
/// transient-to-transient block, `r` the transient-to-absorbing block.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    labels: Vec<String>,
    transient_count: usize,
    q: Matrix,
    r: Matrix,
    /// Mean-seconds annotations for dwell self-loops; informational only.
    pub time_costs: Vec<(String, String, f64)>,
}

impl AbsorbingChain {
    /// Raw constructor bypassing structural validation. Intended for tests
    /// and oracles that need a deliberately malformed chain.
    pub fn from_parts(labels: Vec<String>, transient_count: usize, q: Matrix, r: Matrix) -> Self {
        assert_eq!(q.rows(), transient_count);
        assert_eq!(q.cols(), transient_count);
        assert_eq!(r.rows(), transient_count);
        Self {
            labels,
            transient_count,
            q,
            r,
            time_costs: Vec::new(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transient_count(&self) -> usize {
        self.transient_count
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn transient_index(&self, label: &str) -> Option<usize> {
        self.labels[..self.transient_count]
            .iter()
            .position(|l| l == label)
    }

    /// Expected steps to absorption per transient state, via a direct LU
    /// solve of `(I - Q) t = 1` (no explicit inverse).
    pub fn sojourn(&self) -> Result<SojournVector, ChainError> {
        let m = self.transient_count;
        let mut a = Matrix::identity(m);
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] -= self.q[(i, j)];
            }
        }
        let lu = lu_factor(&a, SINGULAR_TOL).ok_or(ChainError::SingularSystem)?;
        let times = lu.solve(&vec![1.0; m]);
        Ok(SojournVector {
            labels: self.labels[..m].to_vec(),
            times,
        })
    }

    /// Debug/golden JSON: state labels plus row-major Q and R blocks.
    pub fn to_json(&self) -> serde_json::Value {
        let rows =
            |m: &Matrix| -> Vec<Vec<f64>> { (0..m.rows()).map(|i| m.row(i).to_vec()).collect() };
        json!({
            "schema_version": 1,
            "state_labels": self.labels,
            "transient_count": self.transient_count,
            "q": rows(&self.q),
            "r": rows(&self.r),
        })
    }
}

/// `N = (I - Q)^{-1}`; entry (i, j) is the expected number of visits to
/// transient state j starting from transient state i.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    labels: Vec<String>,
    n: Matrix,
}

impl FundamentalMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix {
        &self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SojournVector {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
}

impl SojournVector {
    pub fn for_state(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.times[i])
    }
}

/// Validates states and transitions and assembles the canonical form.
/// Transient rows must be stochastic; absorbing states may not have
/// outgoing edges; every transient state must reach absorption. Duplicate
/// edges accumulate.
pub fn build_canonical(
    states: &[(&str, StateKind)],
    transitions: &[(&str, &str, f64)],
) -> Result<AbsorbingChain, ChainError> {
    let mut labels = Vec::with_capacity(states.len());
    let mut order: Vec<usize> = Vec::new();
    // Canonical order: transient states first, both groups in input order.
    for (idx, (label, kind)) in states.iter().enumerate() {
        if labels.contains(&label.to_string()) {
            return Err(ChainError::DuplicateState((*label).into()));
        }
        labels.push((*label).to_string());
        if *kind == StateKind::Transient {
            order.push(idx);
        }
    }
    let transient_count = order.len();
    for (idx, (_, kind)) in states.iter().enumerate() {
        if *kind == StateKind::Absorbing {
            order.push(idx);
        }
    }
    if transient_count == states.len() {
        return Err(ChainError::NoAbsorbingState);
    }
    let canonical_labels: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
    let index_of = |label: &str| -> Result<usize, ChainError> {
        canonical_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ChainError::UnknownState(label.into()))
    };

    let absorbing_count = states.len() - transient_count;
    let mut q = Matrix::zeros(transient_count, transient_count);
    let mut r = Matrix::zeros(transient_count, absorbing_count);
    for (from, to, weight) in transitions {
        let fi = index_of(from)?;
        let ti = index_of(to)?;
        if *weight < 0.0 || !weight.is_finite() {
            return Err(ChainError::NegativeWeight {
                from: (*from).into(),
                to: (*to).into(),
                weight: *weight,
            });
        }
        if fi >= transient_count {
            return Err(ChainError::AbsorbingOutflow((*from).into()));
        }
        if ti < transient_count {
            q[(fi, ti)] += weight;
        } else {
            r[(fi, ti - transient_count)] += weight;
        }
    }

    for (i, label) in canonical_labels.iter().take(transient_count).enumerate() {
        let sum: f64 = q.row(i).iter().sum::<f64>() + r.row(i).iter().sum::<f64>();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ChainError::RowSumError {
                state: label.clone(),
                sum,
            });
        }
    }

    // Every transient state must have a positive-probability path into R.
    let mut reaches: Vec<bool> = (0..transient_count)
        .map(|i| r.row(i).iter().any(|&w| w > 0.0))
        .collect();
    loop {
        let mut changed = false;
        for i in 0..transient_count {
            if !reaches[i] && (0..transient_count).any(|j| q[(i, j)] > 0.0 && reaches[j]) {
                reaches[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(stuck) = reaches.iter().position(|r| !r) {
        return Err(ChainError::UnreachableAbsorption(
            canonical_labels[stuck].clone(),
        ));
    }

    Ok(AbsorbingChain {
        labels: canonical_labels,
        transient_count,
        q,
        r,
        time_costs: Vec::new(),
    })
}

/// `N = (I - Q)^{-1}` by LU-factoring `(I - Q)` and solving for each
/// identity column.
pub fn fundamental_matrix(chain: &AbsorbingChain) -> Result<FundamentalMatrix, ChainError> {
    let m = chain.transient_count;
    let mut a = Matrix::identity(m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] -= chain.q[(i, j)];
        }
    }
    let lu = lu_factor(&a, SINGULAR_TOL).ok_or(ChainError::SingularSystem)?;
    Ok(FundamentalMatrix {
        labels: chain.labels[..m].to_vec(),
        n: lu.inverse(),
    })
}

/// Partial sum `I + Q + Q^2 + ... + Q^k` of the visit-count series. Slow by
/// design; serves as an independent oracle for the fundamental matrix.
pub fn power_series_oracle(chain: &AbsorbingChain, k: usize) -> Matrix {
    let mut sum = Matrix::identity(chain.transient_count);
    let mut term = Matrix::identity(chain.transient_count);
    for _ in 0..k {
        term = term.mul(&chain.q);
        sum.add_assign(&term);
    }
    sum
}

/// Expected steps to absorption: row sums of N (`t = N 1`).
pub fn sojourn_times(fm: &FundamentalMatrix) -> SojournVector {
    let times = (0..fm.n.rows()).map(|i| fm.n.row(i).iter().sum()).collect();
    SojournVector {
        labels: fm.labels.clone(),
        times,
    }
}

fn check_dwell(state: &str, mean: f64) -> Result<(), ChainError> {
    if mean < 1.0 {
        Err(ChainError::DwellUnencodable {
            state: state.into(),
            mean,
        })
    } else {
        Ok(())
    }
}

/// Chain for the reactive policy: every attempt runs to termination,
/// failures dwell `mtf` and return to `Run`, successes dwell `mts` and
/// absorb. Zero-probability branches are omitted.
pub fn build_reactive_chain(
    rates: &OutcomeRates,
    timings: &TaskTimings,
) -> Result<AbsorbingChain, ChainError> {
    let mut states = vec![("Run", StateKind::Transient)];
    let mut transitions: Vec<(&str, &str, f64)> = Vec::new();
    let mut time_costs = Vec::new();
    if rates.p_f > 0.0 {
        check_dwell("FailDwell", timings.mtf)?;
        states.push(("FailDwell", StateKind::Transient));
        transitions.push(("Run", "FailDwell", rates.p_f));
        transitions.push(("FailDwell", "FailDwell", 1.0 - 1.0 / timings.mtf));
        transitions.push(("FailDwell", "Run", 1.0 / timings.mtf));
        time_costs.push(("FailDwell".into(), "FailDwell".into(), timings.mtf));
    }
    if rates.p_s > 0.0 {
        check_dwell("SuccessDwell", timings.mts)?;
        states.push(("SuccessDwell", StateKind::Transient));
        transitions.push(("Run", "SuccessDwell", rates.p_s));
        transitions.push(("SuccessDwell", "SuccessDwell", 1.0 - 1.0 / timings.mts));
        transitions.push(("SuccessDwell", "Done", 1.0 / timings.mts));
        time_costs.push(("SuccessDwell".into(), "SuccessDwell".into(), timings.mts));
    }
    states.push(("Done", StateKind::Absorbing));
    let mut chain = build_canonical(&states, &transitions)?;
    chain.time_costs = time_costs;
    Ok(chain)
}

/// Chain for the preemptive policy: one dwell state per confusion cell
/// with positive mass. TP/NCS absorb after their success dwell; FN, TN and
/// FP return to `Run`; NCF returns to `Run` in the `ChainDerived` variant
/// and absorbs in the `AsPrinted` variant.
pub fn build_preemptive_chain(
    params: &GuardedParams,
    variant: ChainVariant,
) -> Result<AbsorbingChain, ChainError> {
    let c = &params.confusion;
    let t = &params.timings;
    let ncf_target = match variant {
        ChainVariant::AsPrinted => "Done",
        ChainVariant::ChainDerived => "Run",
    };
    let branches: [(&str, f64, f64, &str); 6] = [
        ("TpDwell", c.p_tp, t.mts, "Done"),
        ("FnDwell", c.p_fn, params.mtn_for_successes(), "Run"),
        ("TnDwell", c.p_tn, params.mtn_for_failures(), "Run"),
        ("FpDwell", c.p_fp, t.mtf, "Run"),
        ("NcsDwell", c.p_ncs, t.mts, "Done"),
        ("NcfDwell", c.p_ncf, t.mtf, ncf_target),
    ];
    let mut states = vec![("Run", StateKind::Transient)];
    let mut transitions: Vec<(&str, &str, f64)> = Vec::new();
    let mut time_costs = Vec::new();
    for (label, mass, mean, exit) in branches {
        if mass <= 0.0 {
            continue;
        }
        check_dwell(label, mean)?;
        states.push((label, StateKind::Transient));
        transitions.push(("Run", label, mass));
        transitions.push((label, label, 1.0 - 1.0 / mean));
        transitions.push((label, exit, 1.0 / mean));
        time_costs.push((label.to_string(), label.to_string(), mean));
    }
    states.push(("Done", StateKind::Absorbing));
    let mut chain = build_canonical(&states, &transitions)?;
    chain.time_costs = time_costs;
    Ok(chain)
}
