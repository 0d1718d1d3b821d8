//! Parameter sweeps over outcome rates, classifier rates, and timings,
//! producing time-saved grids and policy-crossover boundaries.
//!
//! Probability axes re-normalize the dependent confusion masses:
//! * `p_f` rescales the failure-side cells to the target marginal and the
//!   success side to its complement, preserving each side's conditional
//!   distribution;
//! * `p_tp_rate` / `p_tn_rate` set the conditional true-verdict rate
//!   within the fixed marginal and split the remainder over the other two
//!   cells holding their ratio constant (all of it to the no-call cell
//!   when that ratio is degenerate).

use crate::formulas::{time_saved, FormulaError, PolicyAdvice, Recommendation, Variant};
use crate::params::{
    apply_guards, derive_outcome_rates, ConfusionSpec, GuardKind, ParamError, TaskTimings,
};
use serde::Serialize;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

pub const GRID_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("invalid axis: {message}")]
    InvalidAxis { message: String },
    #[error("expected 1 or 2 axes, got {got}")]
    BadAxisCount { got: usize },
    #[error("cannot rescale {param}: the base distribution has no mass to redistribute")]
    UnscalableMarginal { param: &'static str },
    #[error("cell {index}: {source}")]
    Cell { index: usize, source: ParamError },
}

/// Sweepable parameter. Probability axes are dimensionless; the
/// conditional rates are measured within their side's marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    #[serde(rename = "p_f")]
    PF,
    #[serde(rename = "p_tp_rate")]
    PTpRate,
    #[serde(rename = "p_tn_rate")]
    PTnRate,
    #[serde(rename = "mtf")]
    Mtf,
    #[serde(rename = "mts")]
    Mts,
    #[serde(rename = "mtn")]
    Mtn,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PF => "p_f",
            SweepParam::PTpRate => "p_tp_rate",
            SweepParam::PTnRate => "p_tn_rate",
            SweepParam::Mtf => "mtf",
            SweepParam::Mts => "mts",
            SweepParam::Mtn => "mtn",
        }
    }

    pub fn is_probability(self) -> bool {
        matches!(
            self,
            SweepParam::PF | SweepParam::PTpRate | SweepParam::PTnRate
        )
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_f" => Ok(SweepParam::PF),
            "p_tp_rate" => Ok(SweepParam::PTpRate),
            "p_tn_rate" => Ok(SweepParam::PTnRate),
            "mtf" => Ok(SweepParam::Mtf),
            "mts" => Ok(SweepParam::Mts),
            "mtn" => Ok(SweepParam::Mtn),
            other => Err(format!(
                "unknown sweep parameter `{other}` (expected p_f, p_tp_rate, p_tn_rate, mtf, mts, or mtn)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl SweepAxis {
    /// Validates the range; probability axes are clipped into [0, 1],
    /// timing axes must be strictly positive.
    pub fn new(param: SweepParam, start: f64, stop: f64, steps: usize) -> Result<Self, SweepError> {
        if steps < 2 {
            return Err(SweepError::InvalidAxis {
                message: format!("{param}: steps must be >= 2, got {steps}"),
            });
        }
        if !start.is_finite() || !stop.is_finite() {
            return Err(SweepError::InvalidAxis {
                message: format!("{param}: non-finite range [{start}, {stop}]"),
            });
        }
        let (start, stop) = if param.is_probability() {
            (start.clamp(0.0, 1.0), stop.clamp(0.0, 1.0))
        } else {
            if start <= 0.0 || stop <= 0.0 {
                return Err(SweepError::InvalidAxis {
                    message: format!("{param}: timings must be positive, got [{start}, {stop}]"),
                });
            }
            (start, stop)
        };
        Ok(Self {
            param,
            start,
            stop,
            steps,
        })
    }

    /// Evenly spaced values with exact endpoints.
    pub fn values(&self) -> Vec<f64> {
        let n = self.steps;
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.stop
                } else {
                    self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }
}

/// One evaluated grid point. Flagged cells (`never_succeeds`) have no
/// predictions: every attempt fails there, so no policy terminates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub axis_values: Vec<f64>,
    pub reactive_s: Option<f64>,
    pub preemptive_s: Option<f64>,
    pub time_saved_s: Option<f64>,
    pub recommended: Option<Recommendation>,
    pub guard: GuardKind,
    pub never_succeeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub schema_version: u32,
    pub variant: Variant,
    pub axes: Vec<SweepAxis>,
    /// (axis-0 steps, axis-1 steps); 1-axis grids have a single column.
    pub shape: (usize, usize),
    /// The unswept operating point, evaluated through the same path.
    pub baseline: SweepCell,
    /// Row-major: cell (i, j) lives at `i * shape.1 + j`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.shape.1 + j]
    }
}

/// A spot where `time_saved` crosses zero between two neighboring cells,
/// with the zero located by linear interpolation along the crossing edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossoverPoint {
    /// Which axis the edge runs along (0 or 1).
    pub axis: usize,
    /// Flat indices of the neighboring cells.
    pub between: (usize, usize),
    /// Interpolated axis value where time_saved = 0.
    pub value: f64,
    /// The other axis's value, for 2-axis grids.
    pub fixed: Option<f64>,
}

fn rescale_pair(total: f64, keep: f64, a: f64, b: f64) -> (f64, f64, f64) {
    // `keep` of `total` goes to the primary cell; the remainder is split
    // in the a:b ratio, or entirely onto `b` (the no-call cell) when both
    // are zero.
    let primary = keep * total;
    let remainder = (total - primary).max(0.0);
    if a + b > 0.0 {
        let scale = remainder / (a + b);
        (primary, a * scale, b * scale)
    } else {
        (primary, 0.0, remainder)
    }
}

fn apply_axis_value(
    timings: &TaskTimings,
    confusion: &ConfusionSpec,
    param: SweepParam,
    value: f64,
) -> Result<(TaskTimings, ConfusionSpec), SweepError> {
    let invalid = |e: ParamError| SweepError::InvalidAxis {
        message: format!("{param}={value}: {e}"),
    };
    let mut t = *timings;
    let mut c = *confusion;
    match param {
        SweepParam::Mtf => t.mtf = value,
        SweepParam::Mts => t.mts = value,
        SweepParam::Mtn => t.mtn = value,
        SweepParam::PF => {
            let p_f = confusion.failure_marginal();
            let p_s = confusion.success_marginal();
            if (p_f <= 0.0 && value > 0.0) || (p_s <= 0.0 && value < 1.0) {
                return Err(SweepError::UnscalableMarginal {
                    param: param.name(),
                });
            }
            let scale_f = if p_f > 0.0 { value / p_f } else { 0.0 };
            let scale_s = if p_s > 0.0 { (1.0 - value) / p_s } else { 0.0 };
            c.p_tn = confusion.p_tn * scale_f;
            c.p_fp = confusion.p_fp * scale_f;
            c.p_ncf = confusion.p_ncf * scale_f;
            c.p_tp = confusion.p_tp * scale_s;
            c.p_fn = confusion.p_fn * scale_s;
            c.p_ncs = confusion.p_ncs * scale_s;
        }
        SweepParam::PTpRate => {
            let p_s = confusion.success_marginal();
            if p_s <= 0.0 {
                return Err(SweepError::UnscalableMarginal {
                    param: param.name(),
                });
            }
            let (tp, fn_, ncs) = rescale_pair(p_s, value, confusion.p_fn, confusion.p_ncs);
            c.p_tp = tp;
            c.p_fn = fn_;
            c.p_ncs = ncs;
        }
        SweepParam::PTnRate => {
            let p_f = confusion.failure_marginal();
            if p_f <= 0.0 {
                return Err(SweepError::UnscalableMarginal {
                    param: param.name(),
                });
            }
            let (tn, fp, ncf) = rescale_pair(p_f, value, confusion.p_fp, confusion.p_ncf);
            c.p_tn = tn;
            c.p_fp = fp;
            c.p_ncf = ncf;
        }
    }
    let t = TaskTimings::with_all(t.mtf, t.mts, t.mtn, t.mtp, t.classification_floor)
        .map_err(invalid)?;
    let c =
        ConfusionSpec::new(c.p_tp, c.p_fn, c.p_tn, c.p_fp, c.p_ncs, c.p_ncf).map_err(invalid)?;
    Ok((t, c))
}

/// The base operating point's coordinate on an axis.
fn base_coordinate(param: SweepParam, timings: &TaskTimings, confusion: &ConfusionSpec) -> f64 {
    match param {
        SweepParam::Mtf => timings.mtf,
        SweepParam::Mts => timings.mts,
        SweepParam::Mtn => timings.mtn,
        SweepParam::PF => confusion.failure_marginal(),
        SweepParam::PTpRate => {
            let p_s = confusion.success_marginal();
            if p_s > 0.0 {
                confusion.p_tp / p_s
            } else {
                f64::NAN
            }
        }
        SweepParam::PTnRate => {
            let p_f = confusion.failure_marginal();
            if p_f > 0.0 {
                confusion.p_tn / p_f
            } else {
                f64::NAN
            }
        }
    }
}

fn evaluate_cell(
    index: usize,
    axis_values: Vec<f64>,
    timings: &TaskTimings,
    confusion: &ConfusionSpec,
    variant: Variant,
) -> Result<SweepCell, SweepError> {
    let rates = derive_outcome_rates(confusion);
    match time_saved(&rates, timings, confusion, variant) {
        Ok(advice) => Ok(cell_from_advice(axis_values, &advice)),
        Err(FormulaError::NeverSucceeds) => {
            let guard = apply_guards(timings, confusion)
                .map_err(|source| SweepError::Cell { index, source })?
                .guard_applied;
            Ok(SweepCell {
                axis_values,
                reactive_s: None,
                preemptive_s: None,
                time_saved_s: None,
                recommended: None,
                guard,
                never_succeeds: true,
            })
        }
        Err(FormulaError::Param(source)) => Err(SweepError::Cell { index, source }),
    }
}

fn cell_from_advice(axis_values: Vec<f64>, advice: &PolicyAdvice) -> SweepCell {
    SweepCell {
        axis_values,
        reactive_s: Some(advice.reactive.seconds),
        preemptive_s: Some(advice.preemptive.seconds),
        time_saved_s: Some(advice.time_saved_s),
        recommended: Some(advice.recommended),
        guard: advice.guard_applied,
        never_succeeds: false,
    }
}

/// Evaluates the closed forms over a 1- or 2-axis grid. Every non-swept
/// parameter is held at the base value; cell outcome rates are the
/// marginals of the cell's (possibly rescaled) confusion. Cells are pure
/// functions of (base, coordinates), so evaluation order is irrelevant.
pub fn run_sweep(
    timings: &TaskTimings,
    confusion: &ConfusionSpec,
    axes: &[SweepAxis],
    variant: Variant,
) -> Result<SweepGrid, SweepError> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(SweepError::BadAxisCount { got: axes.len() });
    }
    let axis0_values = axes[0].values();
    let axis1_values: Vec<Option<f64>> = match axes.get(1) {
        Some(axis) => axis.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let shape = (axis0_values.len(), axis1_values.len());
    let mut cells = Vec::with_capacity(shape.0 * shape.1);
    for &v0 in &axis0_values {
        for &v1 in &axis1_values {
            let index = cells.len();
            let (t, c) = apply_axis_value(timings, confusion, axes[0].param, v0)?;
            let (t, c, coords) = match v1 {
                Some(v1) => {
                    let (t, c) = apply_axis_value(&t, &c, axes[1].param, v1)?;
                    (t, c, vec![v0, v1])
                }
                None => (t, c, vec![v0]),
            };
            cells.push(evaluate_cell(index, coords, &t, &c, variant)?);
        }
    }
    let base_coords: Vec<f64> = axes
        .iter()
        .map(|axis| base_coordinate(axis.param, timings, confusion))
        .collect();
    let baseline = evaluate_cell(usize::MAX, base_coords, timings, confusion, variant)?;
    Ok(SweepGrid {
        schema_version: GRID_SCHEMA_VERSION,
        variant,
        axes: axes.to_vec(),
        shape,
        baseline,
        cells,
    })
}

/// Finds zero crossings of `time_saved` between neighboring cells. Edges
/// touching flagged cells are skipped. A cell sitting exactly on zero is
/// reported once at its own coordinate.
pub fn find_crossover(grid: &SweepGrid) -> Vec<CrossoverPoint> {
    let (n0, n1) = grid.shape;
    let axis0 = grid.axes[0].values();
    let axis1 = grid.axes.get(1).map(|a| a.values());
    let mut points = Vec::new();

    let mut scan = |axis: usize, line: &[usize], coords: &[f64], fixed: Option<f64>| {
        for w in 0..line.len() - 1 {
            let (ia, ib) = (line[w], line[w + 1]);
            let last_pair = w + 2 == line.len();
            let (Some(ta), Some(tb)) = (grid.cells[ia].time_saved_s, grid.cells[ib].time_saved_s)
            else {
                continue;
            };
            let (xa, xb) = (coords[w], coords[w + 1]);
            let crossing = if ta == 0.0 && tb == 0.0 {
                None
            } else if ta == 0.0 {
                Some(xa)
            } else if tb == 0.0 {
                // Interior zeros are reported by the next edge's left
                // endpoint; the final cell has no next edge.
                last_pair.then_some(xb)
            } else if ta * tb < 0.0 {
                Some(xa + (xb - xa) * (-ta) / (tb - ta))
            } else {
                None
            };
            if let Some(value) = crossing {
                points.push(CrossoverPoint {
                    axis,
                    between: (ia, ib),
                    value,
                    fixed,
                });
            }
        }
    };

    // Edges along axis 0 (one scan per column).
    for j in 0..n1 {
        let line: Vec<usize> = (0..n0).map(|i| i * n1 + j).collect();
        let fixed = axis1.as_ref().map(|v| v[j]);
        scan(0, &line, &axis0, fixed);
    }
    // Edges along axis 1 (one scan per row).
    if let Some(axis1_coords) = &axis1 {
        if n1 > 1 {
            for (i, &fixed) in axis0.iter().enumerate() {
                let line: Vec<usize> = (0..n1).map(|j| i * n1 + j).collect();
                scan(1, &line, axis1_coords, Some(fixed));
            }
        }
    }
    points
}

/// Writes the grid as CSV: one row per cell, axis coordinates first, then
/// the four result columns. Flagged cells leave the numeric results empty
/// and mark the recommendation as `never_succeeds`.
pub fn write_grid_csv<W: Write>(grid: &SweepGrid, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "# schema_version={GRID_SCHEMA_VERSION}")?;
    let axis_names: Vec<&str> = grid.axes.iter().map(|a| a.param.name()).collect();
    writeln!(
        sink,
        "{},reactive_s,preemptive_s,time_saved_s,recommended",
        axis_names.join(",")
    )?;
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for cell in &grid.cells {
        let coords: Vec<String> = cell.axis_values.iter().map(|v| format!("{v:.6}")).collect();
        let recommended = if cell.never_succeeds {
            "never_succeeds"
        } else {
            match cell.recommended {
                Some(Recommendation::Reactive) => "reactive",
                Some(Recommendation::Preemptive) => "preemptive",
                Some(Recommendation::Indifferent) => "indifferent",
                None => "",
            }
        };
        writeln!(
            sink,
            "{},{},{},{},{}",
            coords.join(","),
            fmt_opt(cell.reactive_s),
            fmt_opt(cell.preemptive_s),
            fmt_opt(cell.time_saved_s),
            recommended,
        )?;
    }
    Ok(())
}
