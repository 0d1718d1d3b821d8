//! Closed-form expected makespans for the reactive and preemptive retry
//! policies, plus the policy recommendation built on their difference.
//!
//! Every formula exists in two variants. `Paper` reproduces the published
//! jump-process closed forms, which price each visit to the decision state
//! at one second (the `1 +` term) and, in the preemptive case, keep
//! non-classified failures out of the returning mass. `Renewal` is the
//! plain renewal-reward ratio expected cost per attempt over success
//! probability per attempt, which is what the Monte Carlo mean converges
//! to. The chain builders in [`crate::markov`] provide matching oracles.

use crate::params::{
    apply_guards, validate_confusion, ConfusionSpec, GuardKind, GuardedParams, OutcomeRates,
    ParamError, TaskTimings,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Predictions closer than this (seconds) are treated as a tie.
pub const TIE_TOLERANCE_S: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("process never succeeds: success probability per attempt is zero")]
    NeverSucceeds,
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Paper,
    Renewal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Reactive,
    Preemptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Reactive,
    Preemptive,
    Indifferent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MakespanPrediction {
    pub seconds: f64,
    pub variant: Variant,
    pub policy: Policy,
}

/// Output of [`time_saved`]: both predictions and the recommendation with
/// its indifference band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyAdvice {
    pub reactive: MakespanPrediction,
    pub preemptive: MakespanPrediction,
    pub time_saved_s: f64,
    pub recommended: Recommendation,
    pub guard_applied: GuardKind,
}

/// Expected makespan when every attempt runs to termination.
pub fn reactive_makespan(
    rates: &OutcomeRates,
    timings: &TaskTimings,
    variant: Variant,
) -> Result<MakespanPrediction, FormulaError> {
    let denom = 1.0 - rates.p_f;
    if denom <= 0.0 {
        return Err(FormulaError::NeverSucceeds);
    }
    let cost = timings.mtf * rates.p_f + timings.mts * rates.p_s;
    let seconds = match variant {
        Variant::Paper => (1.0 + cost) / denom,
        Variant::Renewal => cost / denom,
    };
    Ok(MakespanPrediction {
        seconds,
        variant,
        policy: Policy::Reactive,
    })
}

/// Expected makespan when negative verdicts preempt the attempt.
///
/// Under `GuardKind::ClassifierInert` the preemptive process is the
/// reactive process, so the renewal variant delegates to
/// [`reactive_makespan`] on the derived marginals and the equality is
/// exact rather than a rounding accident. The paper variant always
/// evaluates the published expression as printed.
pub fn preemptive_makespan(
    params: &GuardedParams,
    variant: Variant,
) -> Result<MakespanPrediction, FormulaError> {
    let c = &params.confusion;
    let succ = c.p_tp + c.p_ncs;
    if succ <= 0.0 {
        return Err(FormulaError::NeverSucceeds);
    }
    if variant == Variant::Renewal && params.guard_applied == GuardKind::ClassifierInert {
        let base = reactive_makespan(&params.rates(), &params.timings, variant)?;
        return Ok(MakespanPrediction {
            policy: Policy::Preemptive,
            ..base
        });
    }
    let cost = params.timings.mtf * (c.p_fp + c.p_ncf)
        + params.timings.mts * (c.p_tp + c.p_ncs)
        + params.mtn_for_successes() * c.p_fn
        + params.mtn_for_failures() * c.p_tn;
    let seconds = match variant {
        Variant::Paper => (1.0 + cost) / (1.0 - c.p_fn - c.p_fp - c.p_tn),
        Variant::Renewal => cost / succ,
    };
    Ok(MakespanPrediction {
        seconds,
        variant,
        policy: Policy::Preemptive,
    })
}

/// Predicts both policies from the same inputs and recommends one.
///
/// When the guards collapse the classifier (`ClassifierInert`), both
/// predictions are the same value by construction and `time_saved_s` is an
/// exact zero for either variant.
pub fn time_saved(
    rates: &OutcomeRates,
    timings: &TaskTimings,
    confusion: &ConfusionSpec,
    variant: Variant,
) -> Result<PolicyAdvice, FormulaError> {
    validate_confusion(confusion, Some(rates))?;
    let guarded = apply_guards(timings, confusion)?;
    let reactive = reactive_makespan(rates, timings, variant)?;
    let (preemptive, time_saved_s) = if guarded.guard_applied == GuardKind::ClassifierInert {
        let preemptive = MakespanPrediction {
            policy: Policy::Preemptive,
            ..reactive
        };
        (preemptive, 0.0)
    } else {
        let preemptive = preemptive_makespan(&guarded, variant)?;
        (preemptive, reactive.seconds - preemptive.seconds)
    };
    let recommended = if time_saved_s.abs() < TIE_TOLERANCE_S {
        Recommendation::Indifferent
    } else if time_saved_s > 0.0 {
        Recommendation::Preemptive
    } else {
        Recommendation::Reactive
    };
    Ok(PolicyAdvice {
        reactive,
        preemptive,
        time_saved_s,
        recommended,
        guard_applied: guarded.guard_applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{build_preemptive_chain, build_reactive_chain, ChainVariant};
    use crate::params::derive_outcome_rates;
    use proptest::prelude::*;

    fn worked_timings() -> TaskTimings {
        TaskTimings::new(20.0, 10.0, 5.0).unwrap()
    }

    fn worked_confusion() -> ConfusionSpec {
        ConfusionSpec::new(0.4, 0.1, 0.3, 0.1, 0.05, 0.05).unwrap()
    }

    #[test]
    fn reactive_worked_example() {
        let rates = OutcomeRates::new(0.5, 0.5).unwrap();
        let paper = reactive_makespan(&rates, &worked_timings(), Variant::Paper).unwrap();
        assert!((paper.seconds - 32.0).abs() < 1e-12);
        let renewal = reactive_makespan(&rates, &worked_timings(), Variant::Renewal).unwrap();
        assert!((renewal.seconds - 30.0).abs() < 1e-12);
    }

    #[test]
    fn reactive_sure_success() {
        let rates = OutcomeRates::new(1.0, 0.0).unwrap();
        let paper = reactive_makespan(&rates, &worked_timings(), Variant::Paper).unwrap();
        assert!((paper.seconds - 11.0).abs() < 1e-12);
        let renewal = reactive_makespan(&rates, &worked_timings(), Variant::Renewal).unwrap();
        assert!((renewal.seconds - 10.0).abs() < 1e-12);
    }

    #[test]
    fn reactive_never_succeeds() {
        let rates = OutcomeRates::new(0.0, 1.0).unwrap();
        assert_eq!(
            reactive_makespan(&rates, &worked_timings(), Variant::Paper).unwrap_err(),
            FormulaError::NeverSucceeds
        );
    }

    #[test]
    fn preemptive_worked_example() {
        let params = apply_guards(&worked_timings(), &worked_confusion()).unwrap();
        let paper = preemptive_makespan(&params, Variant::Paper).unwrap();
        assert!((paper.seconds - 21.0).abs() < 1e-12, "{}", paper.seconds);
        let renewal = preemptive_makespan(&params, Variant::Renewal).unwrap();
        assert!(
            (renewal.seconds - 9.5 / 0.45).abs() < 1e-12,
            "{}",
            renewal.seconds
        );
    }

    #[test]
    fn preemptive_never_succeeds_when_no_success_mass_terminates() {
        let confusion = ConfusionSpec::new(0.0, 0.5, 0.0, 0.0, 0.0, 0.5).unwrap();
        let params = apply_guards(&worked_timings(), &confusion).unwrap();
        for variant in [Variant::Paper, Variant::Renewal] {
            assert_eq!(
                preemptive_makespan(&params, variant).unwrap_err(),
                FormulaError::NeverSucceeds
            );
        }
    }

    #[test]
    fn perfect_classifier_beats_reactive_when_verdicts_are_fast() {
        let confusion = ConfusionSpec::new(0.7, 0.0, 0.3, 0.0, 0.0, 0.0).unwrap();
        let rates = derive_outcome_rates(&confusion);
        let timings = worked_timings();
        let advice = time_saved(&rates, &timings, &confusion, Variant::Renewal).unwrap();
        assert_eq!(advice.recommended, Recommendation::Preemptive);
        // Algebraically (mtf - mtn) * p_f / p_s.
        let expect = (20.0 - 5.0) * 0.3 / 0.7;
        assert!((advice.time_saved_s - expect).abs() < 1e-12);
    }

    #[test]
    fn sure_success_without_fn_mass_is_indifferent() {
        let confusion = ConfusionSpec::new(0.6, 0.0, 0.0, 0.0, 0.4, 0.0).unwrap();
        let rates = OutcomeRates::new(1.0, 0.0).unwrap();
        let advice = time_saved(&rates, &worked_timings(), &confusion, Variant::Renewal).unwrap();
        assert_eq!(advice.recommended, Recommendation::Indifferent);
        assert!(advice.time_saved_s.abs() < TIE_TOLERANCE_S);
    }

    #[test]
    fn inert_classifier_predictions_are_exactly_equal() {
        let timings = TaskTimings::new(20.0, 30.0, 50.0).unwrap();
        let confusion = worked_confusion();
        let rates = derive_outcome_rates(&confusion);
        for variant in [Variant::Paper, Variant::Renewal] {
            let advice = time_saved(&rates, &timings, &confusion, variant).unwrap();
            assert_eq!(advice.guard_applied, GuardKind::ClassifierInert);
            assert_eq!(advice.time_saved_s, 0.0);
            assert_eq!(advice.reactive.seconds, advice.preemptive.seconds);
            assert_eq!(advice.recommended, Recommendation::Indifferent);
        }
        // The standalone renewal predictor agrees bit-for-bit as well.
        let guarded = apply_guards(&timings, &confusion).unwrap();
        let p = preemptive_makespan(&guarded, Variant::Renewal).unwrap();
        let r = reactive_makespan(&guarded.rates(), &guarded.timings, Variant::Renewal).unwrap();
        assert_eq!(p.seconds, r.seconds);
    }

    #[test]
    fn paper_and_renewal_reactive_differ_by_expected_run_visits() {
        for p_f in [0.0, 0.25, 0.5, 0.9] {
            let rates = OutcomeRates::new(1.0 - p_f, p_f).unwrap();
            let paper = reactive_makespan(&rates, &worked_timings(), Variant::Paper).unwrap();
            let renewal = reactive_makespan(&rates, &worked_timings(), Variant::Renewal).unwrap();
            let diff = paper.seconds - renewal.seconds;
            assert!((diff - 1.0 / (1.0 - p_f)).abs() < 1e-9);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    prop_compose! {
        fn arb_confusion()(w in proptest::array::uniform6(1e-3..1.0f64)) -> ConfusionSpec {
            let sum: f64 = w.iter().sum();
            ConfusionSpec::new(
                w[0] / sum, w[1] / sum, w[2] / sum, w[3] / sum, w[4] / sum, w[5] / sum,
            )
            .unwrap()
        }
    }

    prop_compose! {
        fn arb_timings()(mtf in 1.0..200.0f64, mts in 1.0..200.0f64, mtn in 1.0..200.0f64)
            -> TaskTimings
        {
            TaskTimings::new(mtf, mts, mtn).unwrap()
        }
    }

    proptest! {
        #[test]
        fn printed_formula_matches_as_printed_chain(
            confusion in arb_confusion(),
            timings in arb_timings(),
        ) {
            let params = apply_guards(&timings, &confusion).unwrap();
            let formula = preemptive_makespan(&params, Variant::Paper).unwrap().seconds;
            let chain = build_preemptive_chain(&params, ChainVariant::AsPrinted).unwrap();
            let sojourn = chain.sojourn().unwrap().for_state("Run").unwrap();
            prop_assert!(rel_err(formula, sojourn) < 1e-9, "{formula} vs {sojourn}");
        }

        #[test]
        fn renewal_formula_matches_derived_chain_minus_run_visits(
            confusion in arb_confusion(),
            timings in arb_timings(),
        ) {
            let params = apply_guards(&timings, &confusion).unwrap();
            prop_assume!(params.guard_applied != GuardKind::ClassifierInert);
            let renewal = preemptive_makespan(&params, Variant::Renewal).unwrap().seconds;
            let chain = build_preemptive_chain(&params, ChainVariant::ChainDerived).unwrap();
            let sojourn = chain.sojourn().unwrap().for_state("Run").unwrap();
            let succ = params.confusion.p_tp + params.confusion.p_ncs;
            prop_assert!(rel_err(renewal + 1.0 / succ, sojourn) < 1e-9);
        }

        #[test]
        fn reactive_formula_matches_chain(
            p_f in 0.0..0.99f64,
            timings in arb_timings(),
        ) {
            let rates = OutcomeRates::new(1.0 - p_f, p_f).unwrap();
            let formula = reactive_makespan(&rates, &timings, Variant::Paper).unwrap().seconds;
            let chain = build_reactive_chain(&rates, &timings).unwrap();
            let sojourn = chain.sojourn().unwrap().for_state("Run").unwrap();
            prop_assert!(rel_err(formula, sojourn) < 1e-9);
        }

        #[test]
        fn preemptive_renewal_is_monotone_in_mtf(
            confusion in arb_confusion(),
            timings in arb_timings(),
            bump in 0.1..100.0f64,
        ) {
            let lo = apply_guards(&timings, &confusion).unwrap();
            let raised = TaskTimings { mtf: timings.mtf + bump, ..timings };
            let hi = apply_guards(&raised, &confusion).unwrap();
            let a = preemptive_makespan(&lo, Variant::Renewal).unwrap().seconds;
            let b = preemptive_makespan(&hi, Variant::Renewal).unwrap().seconds;
            prop_assert!(b + 1e-9 >= a);
        }

        #[test]
        fn moving_success_mass_between_tp_and_ncs_never_raises_the_prediction(
            confusion in arb_confusion(),
            timings in arb_timings(),
            shift in 0.0..1.0f64,
        ) {
            // Shift NCS mass into TP while holding everything else fixed.
            let moved = shift * confusion.p_ncs;
            let bumped = ConfusionSpec {
                p_tp: confusion.p_tp + moved,
                p_ncs: confusion.p_ncs - moved,
                ..confusion
            };
            let base = apply_guards(&timings, &confusion).unwrap();
            let more_tp = apply_guards(&timings, &bumped).unwrap();
            let a = preemptive_makespan(&base, Variant::Renewal).unwrap().seconds;
            let b = preemptive_makespan(&more_tp, Variant::Renewal).unwrap().seconds;
            prop_assert!(b <= a + 1e-9);
        }
    }
}
