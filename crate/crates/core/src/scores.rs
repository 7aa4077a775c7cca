//! Per-test score tables h(x, y).
//!
//! Closed forms exist for every model at its published parameterization
//! (majority only at p = 1/2, gap models only at the extreme gap). The
//! generic builder differentiates the outcome distribution numerically and
//! works for anything the oracle can evaluate, including intermediate
//! threshold gaps.

use serde::{Deserialize, Serialize};

use crate::binom::outcome_marginals;
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};

/// Central-difference step used by [`generic_score_table`] callers that have
/// no reason to pick their own.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// The four score values, indexed by (inclusion bit x, outcome bit y).
///
/// `eliminates_on_10` marks the certain-exclusion variant: an item seen in a
/// negative test is ruled out by the decoder outright, and the stored finite
/// `h10` is only used for moment computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub h00: f64,
    pub h01: f64,
    pub h10: f64,
    pub h11: f64,
    #[serde(rename = "eliminate10")]
    pub eliminates_on_10: bool,
    #[serde(skip)]
    pub p: f64,
    #[serde(skip)]
    pub k: u64,
}

impl ScoreTable {
    /// Score for inclusion bit `x` and outcome bit `y`.
    #[inline]
    pub fn value(&self, x: bool, y: bool) -> f64 {
        match (x, y) {
            (false, false) => self.h00,
            (false, true) => self.h01,
            (true, false) => self.h10,
            (true, true) => self.h11,
        }
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.h00, self.h01, self.h10, self.h11]
    }
}

fn check_p(p: f64) -> Result<()> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::InvalidParameter(format!("p = {p} outside (0, 1)")));
    }
    Ok(())
}

/// (1 - x)^k in log space; accurate for x near 1/k with large k.
fn pow1m(x: f64, k: u64) -> f64 {
    (k as f64 * (-x).ln_1p()).exp()
}

/// 1 - (1 - x)^k without cancellation.
fn one_minus_pow1m(x: f64, k: u64) -> f64 {
    -(k as f64 * (-x).ln_1p()).exp_m1()
}

/// The closed-form optimal score table for `model` with `k` defectives and
/// inclusion probability `p`.
///
/// Majority is only available at p = 1/2 (with odd k) and the gap models
/// only at the extreme gap (0, k); anything else returns
/// [`Error::NoClosedForm`] and should go through [`generic_score_table`].
pub fn score_table(model: &ModelSpec, k: u64, p: f64) -> Result<ScoreTable> {
    model.validate(k)?;
    check_p(p)?;
    let table = match model.kind {
        ModelKind::Traditional => {
            let w = pow1m(p, k);
            let wm1 = pow1m(p, k - 1);
            let s = one_minus_pow1m(p, k);
            ScoreTable {
                h00: p / (1.0 - p),
                h01: -p * wm1 / s,
                h10: -1.0,
                h11: w / s,
                eliminates_on_10: false,
                p,
                k,
            }
        }
        ModelKind::Dilution => {
            let pe = p * (1.0 - model.r);
            let wm1 = pow1m(pe, k - 1);
            let s = one_minus_pow1m(pe, k);
            ScoreTable {
                h00: pe / (1.0 - pe),
                h01: -pe * wm1 / s,
                h10: -1.0 + model.r / (1.0 - pe),
                h11: wm1 * (1.0 - p) * (1.0 - model.r) / s,
                eliminates_on_10: false,
                p,
                k,
            }
        }
        ModelKind::Additive => {
            let w = pow1m(p, k);
            let wm1 = pow1m(p, k - 1);
            // P(y = 1) = 1 - (1-p)^k (1-r), computed without cancellation.
            let s = -(k as f64 * (-p).ln_1p() + (-model.r).ln_1p()).exp_m1();
            ScoreTable {
                h00: p / (1.0 - p),
                h01: -p * wm1 * (1.0 - model.r) / s,
                // Finite value for moment sums; the decoder eliminates instead.
                h10: -1.0,
                h11: w * (1.0 - model.r) / s,
                eliminates_on_10: true,
                p,
                k,
            }
        }
        ModelKind::Majority => {
            if k % 2 == 0 {
                return Err(Error::NoClosedForm(format!("majority with even k = {k}")));
            }
            if (p - 0.5).abs() > 1e-9 {
                return Err(Error::NoClosedForm(format!("majority at p = {p} != 1/2")));
            }
            ScoreTable {
                h00: 1.0,
                h01: -1.0,
                h10: -1.0,
                h11: 1.0,
                eliminates_on_10: false,
                p,
                k,
            }
        }
        ModelKind::BernoulliGap => {
            let (l, u) = model.gap_bounds(k);
            if (l, u) != (0, k) {
                return Err(Error::NoClosedForm(format!("bernoulli gap at bounds ({l}, {u})")));
            }
            if (model.q - 0.5).abs() > 1e-12 {
                return Err(Error::NoClosedForm(format!("bernoulli gap with q = {}", model.q)));
            }
            let pk = (k as f64 * p.ln()).exp();
            let qk = pow1m(p, k);
            let c = ((k - 1) as f64 * p.ln()).exp() + pow1m(p, k - 1);
            let py1 = 0.5 * (1.0 + pk - qk);
            let py0 = 0.5 * (1.0 - pk + qk);
            ScoreTable {
                h00: c * p / (2.0 * py0),
                h01: -c * p / (2.0 * py1),
                h10: -c * (1.0 - p) / (2.0 * py0),
                h11: c * (1.0 - p) / (2.0 * py1),
                eliminates_on_10: false,
                p,
                k,
            }
        }
        ModelKind::LinearGap | ModelKind::Unknown => {
            let (l, u) = model.gap_bounds(k);
            if (l, u) != (0, k) {
                return Err(Error::NoClosedForm(format!("linear gap at bounds ({l}, {u})")));
            }
            ScoreTable {
                h00: p / (1.0 - p),
                h01: -1.0,
                h10: -1.0,
                h11: (1.0 - p) / p,
                eliminates_on_10: false,
                p,
                k,
            }
        }
    };
    Ok(table)
}

/// Builds the optimal score table for an arbitrary model by differentiating
/// the log outcome probabilities numerically.
///
/// The derivative of ln P(y) with respect to the inclusion probability is
/// taken by central differences with step `step * min(p, 1-p)`, then scaled
/// by (1-p)/k for x = 1 and by -p/k for x = 0. That produces the centered,
/// quasi-normalized table; the threshold rows (majority, linear, unknown)
/// are then rescaled onto their published convention, which anchors
/// h(1, 0) = -1. Scaling a table never changes the resulting code length.
pub fn generic_score_table(model: &ModelSpec, k: u64, p: f64, step: f64) -> Result<ScoreTable> {
    model.validate(k)?;
    check_p(p)?;
    if !step.is_finite() || step <= 0.0 || step >= 1.0 {
        return Err(Error::InvalidParameter(format!("step = {step} outside (0, 1)")));
    }
    let d = step * p.min(1.0 - p);

    let ln_marginals = |pp: f64| -> Result<(f64, f64)> {
        let (p0, p1) = outcome_marginals(model, k, pp)?;
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(Error::SingularScore { p: pp, y: 0 });
        }
        if !(p1 > 0.0) || !p1.is_finite() {
            return Err(Error::SingularScore { p: pp, y: 1 });
        }
        Ok((p0.ln(), p1.ln()))
    };

    let (lo0, lo1) = ln_marginals(p - d)?;
    let (hi0, hi1) = ln_marginals(p + d)?;
    let d0 = (hi0 - lo0) / (2.0 * d);
    let d1 = (hi1 - lo1) / (2.0 * d);

    let kf = k as f64;
    let mut h00 = -(p / kf) * d0;
    let mut h01 = -(p / kf) * d1;
    let mut h10 = (1.0 - p) / kf * d0;
    let mut h11 = (1.0 - p) / kf * d1;

    if matches!(model.kind, ModelKind::Majority | ModelKind::LinearGap | ModelKind::Unknown) {
        if h10.abs() < 1e-300 {
            return Err(Error::SingularScore { p, y: 0 });
        }
        let scale = -1.0 / h10;
        h00 *= scale;
        h01 *= scale;
        h10 *= scale;
        h11 *= scale;
    }

    Ok(ScoreTable { h00, h01, h10, h11, eliminates_on_10: false, p, k })
}

/// Closed form where one exists, generic builder otherwise.
pub fn best_score_table(model: &ModelSpec, k: u64, p: f64) -> Result<ScoreTable> {
    match score_table(model, k, p) {
        Ok(t) => Ok(t),
        Err(Error::NoClosedForm(_)) => generic_score_table(model, k, p, DEFAULT_FD_STEP),
        Err(e) => Err(e),
    }
}

/// Switches a table to the certain-exclusion variant: items seen in a
/// negative test are certainly non-defective, so the decoder removes them
/// instead of scoring h(1, 0).
///
/// Refused for models where a defective can appear in a negative test.
pub fn finetune(table: &ScoreTable, model: &ModelSpec) -> Result<ScoreTable> {
    if !model.elimination_sound(table.k)? {
        return Err(Error::UnsoundElimination(model.kind.name().to_string()));
    }
    Ok(ScoreTable { eliminates_on_10: true, ..*table })
}
