//! Exact score moments and the code-length machinery.
//!
//! `moments` enumerates the joint law of (inclusion bit, outcome) exactly for
//! non-defective and defective items. The code-length functions turn a
//! feasible moment summary into the test count T and accusation threshold Z
//! for the non-adaptive and adaptive schemes, and `asymptotic_code_length`
//! reports the large-K leading term per model.

use serde::{Deserialize, Serialize};

use crate::binom::{outcome_marginals, pmf_table};
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};
use crate::scores::ScoreTable;

/// Per-test score moments for one (model, k, p, table) combination.
///
/// Untilded quantities describe non-defective items, tilded (`_t`) ones
/// defective items. `a_const` = 2 sigma^2 / (mu_t - mu)^2 and
/// `b_const` = sigma_t / sigma drive the code length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mu: f64,
    pub sigma2: f64,
    pub mu_t: f64,
    pub sigma2_t: f64,
    pub a_const: f64,
    pub b_const: f64,
}

impl MomentSummary {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn sigma_t(&self) -> f64 {
        self.sigma2_t.sqrt()
    }
}

/// Exact per-test score moments.
///
/// A non-defective item's inclusion bit is independent of the outcome, which
/// is driven by beta ~ Binomial(k, p) over the defectives. A defective item
/// contributes its own inclusion bit on top of beta' ~ Binomial(k-1, p) from
/// the other defectives.
///
/// Tables flagged `eliminates_on_10` are accepted only when (1, 0) has zero
/// probability for defectives; the stored finite h10 then only ever enters
/// the non-defective moments.
pub fn moments(model: &ModelSpec, k: u64, p: f64, table: &ScoreTable) -> Result<MomentSummary> {
    model.validate(k)?;
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::InvalidParameter(format!("p = {p} outside (0, 1)")));
    }

    // Non-defective: x ~ Bernoulli(p) independent of y.
    let (py0, py1) = outcome_marginals(model, k, p)?;
    let cell = |px: f64, py: f64, h: f64| (px * py * h, px * py * h * h);
    let mut mu = 0.0;
    let mut ex2 = 0.0;
    for (px, x) in [(1.0 - p, false), (p, true)] {
        for (py, y) in [(py0, false), (py1, true)] {
            let (m, s) = cell(px, py, table.value(x, y));
            mu += m;
            ex2 += s;
        }
    }
    let sigma2 = (ex2 - mu * mu).max(0.0);

    // Defective: y | x through beta' over the k-1 other defectives.
    let pmf = pmf_table(k - 1, p);
    let mut cond_py1 = [0.0f64; 2];
    for (beta_rest, w) in pmf.iter().enumerate() {
        for x in 0..2u64 {
            cond_py1[x as usize] += w * model.outcome_probability(beta_rest as u64 + x, k)?;
        }
    }
    // Eliminating tables are only meaningful where a defective can never
    // land in a negative test; check the model structurally rather than
    // through the pmf sum, which carries rounding noise.
    if table.eliminates_on_10 && !model.elimination_sound(k)? {
        return Err(Error::UnsoundElimination(model.kind.name().to_string()));
    }
    let mut mu_t = 0.0;
    let mut ex2_t = 0.0;
    for (px, x) in [(1.0 - p, false), (p, true)] {
        let py1x = cond_py1[x as usize];
        for (py, y) in [(1.0 - py1x, false), (py1x, true)] {
            let (m, s) = cell(px, py, table.value(x, y));
            mu_t += m;
            ex2_t += s;
        }
    }
    let sigma2_t = (ex2_t - mu_t * mu_t).max(0.0);

    if !(mu_t > mu) {
        return Err(Error::Infeasible { mu, mu_t });
    }
    if sigma2 <= 0.0 {
        return Err(Error::Infeasible { mu, mu_t });
    }

    Ok(MomentSummary {
        mu,
        sigma2,
        mu_t,
        sigma2_t,
        a_const: 2.0 * sigma2 / ((mu_t - mu) * (mu_t - mu)),
        b_const: (sigma2_t / sigma2).sqrt(),
    })
}

fn log_budgets(n: u64, k: u64, eps1: f64, eps2: f64) -> Result<(f64, f64)> {
    if !eps1.is_finite() || eps1 <= 0.0 || eps1 >= 1.0 {
        return Err(Error::InvalidParameter(format!("eps1 = {eps1} outside (0, 1)")));
    }
    // eps2 >= K is tolerated: ln(K/eps2) clamps to zero and the second
    // radical vanishes, Z collapsing continuously to mu_t T.
    if !eps2.is_finite() || eps2 <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps2 = {eps2} must be positive")));
    }
    if n < k || k == 0 {
        return Err(Error::InvalidParameter(format!("need n >= k >= 1, got n = {n}, k = {k}")));
    }
    let l1 = (n as f64 / eps1).ln();
    if l1 <= 0.0 {
        return Err(Error::InvalidParameter(format!("N/eps1 = {} must exceed 1", n as f64 / eps1)));
    }
    let l2 = (k as f64 / eps2).ln().max(0.0);
    Ok((l1, l2))
}

fn sigma_t_effective(m: &MomentSummary, k: u64, adaptive: bool) -> f64 {
    if adaptive {
        m.sigma_t() / (k as f64).sqrt()
    } else {
        m.sigma_t()
    }
}

/// The code length before rounding: 2/(mu_t - mu)^2 (sigma sqrt(L1) +
/// sigma_t' sqrt(L2))^2, with sigma_t' reduced by sqrt(K) in adaptive mode.
pub fn code_length_unrounded(
    m: &MomentSummary,
    n: u64,
    k: u64,
    eps1: f64,
    eps2: f64,
    adaptive: bool,
) -> Result<f64> {
    let (l1, l2) = log_budgets(n, k, eps1, eps2)?;
    let st = sigma_t_effective(m, k, adaptive);
    let num = m.sigma() * l1.sqrt() + st * l2.sqrt();
    let gap = m.mu_t - m.mu;
    Ok(2.0 / (gap * gap) * num * num)
}

fn code_length_impl(
    m: &MomentSummary,
    n: u64,
    k: u64,
    eps1: f64,
    eps2: f64,
    adaptive: bool,
) -> Result<(u64, f64)> {
    let (l1, l2) = log_budgets(n, k, eps1, eps2)?;
    let st = sigma_t_effective(m, k, adaptive);
    let t_real = code_length_unrounded(m, n, k, eps1, eps2, adaptive)?;
    // Rounding T up keeps the guarantee; Z scales with the rounded T so the
    // per-test threshold Z/T is unchanged.
    let t = (t_real.ceil() as u64).max(1);
    let num = m.sigma() * l1.sqrt() + st * l2.sqrt();
    let z = (m.sigma() * m.mu_t * l1.sqrt() + st * m.mu * l2.sqrt()) / num * t as f64;
    Ok((t, z))
}

/// Test count and threshold for the one-shot scheme.
pub fn code_length_nonadaptive(
    m: &MomentSummary,
    n: u64,
    k: u64,
    eps1: f64,
    eps2: f64,
) -> Result<(u64, f64)> {
    code_length_impl(m, n, k, eps1, eps2, false)
}

/// Test count and threshold for the sequential scheme, where accusation
/// happens as soon as a running score crosses Z. Tracking the average
/// defective score shrinks the defective deviation by sqrt(K).
pub fn code_length_adaptive(
    m: &MomentSummary,
    n: u64,
    k: u64,
    eps1: f64,
    eps2: f64,
) -> Result<(u64, f64)> {
    code_length_impl(m, n, k, eps1, eps2, true)
}

/// The error-budget ratio eta: sqrt(ln(K/eps2) / ln(N/eps1)), additionally
/// divided by sqrt(K) in adaptive mode. T = A ln(N/eps1) (1 + B eta)^2.
pub fn eta(n: u64, k: u64, eps1: f64, eps2: f64, adaptive: bool) -> Result<f64> {
    let (l1, l2) = log_budgets(n, k, eps1, eps2)?;
    if (k as f64 / eps2).ln() < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "K/eps2 = {} must be at least 1",
            k as f64 / eps2
        )));
    }
    let mut e = (l2 / l1).sqrt();
    if adaptive {
        e /= (k as f64).sqrt();
    }
    Ok(e)
}

/// Leading term of T for large N: the per-model constant times K ln N
/// (K^2 ln N for the linear-gap and unknown models).
///
/// `finetuned` selects the certain-exclusion variant of the traditional
/// model, whose constant drops from 2 to 2e(e-1)/(2e-1) ~ 2.11 at p = 1/K.
pub fn asymptotic_code_length(model: &ModelSpec, k: u64, n: u64, finetuned: bool) -> Result<f64> {
    model.validate(k)?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n = {n} must be at least 2")));
    }
    let kf = k as f64;
    let ln_n = (n as f64).ln();
    let e = std::f64::consts::E;
    Ok(match model.kind {
        ModelKind::Traditional => {
            if finetuned {
                2.0 * e * (e - 1.0) / (2.0 * e - 1.0) * kf * ln_n
            } else {
                2.0 * kf * ln_n
            }
        }
        ModelKind::Dilution => 2.0 * kf * ln_n / (1.0 - model.r),
        ModelKind::Additive => {
            let denom = 1.0 - (2.0 * model.r).sqrt();
            if denom <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "additive asymptotics require r < 1/2, got r = {}",
                    model.r
                )));
            }
            2.0 * kf * ln_n / denom
        }
        ModelKind::Majority => std::f64::consts::PI * kf * ln_n,
        ModelKind::BernoulliGap => 4.0 * kf * ln_n,
        ModelKind::LinearGap | ModelKind::Unknown => 2.0 * kf * kf * ln_n,
    })
}

/// How items are assigned to tests: one shared inclusion probability, or one
/// probability per test (the unknown model's arcsine draws).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InclusionProbs {
    Uniform(f64),
    PerTest(Vec<f64>),
}

impl InclusionProbs {
    pub fn at(&self, test: usize) -> f64 {
        match self {
            InclusionProbs::Uniform(p) => *p,
            InclusionProbs::PerTest(ps) => ps[test],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, InclusionProbs::Uniform(_))
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        let check = |p: f64| -> Result<()> {
            if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                return Err(Error::InvalidParameter(format!("p = {p} outside (0, 1)")));
            }
            Ok(())
        };
        match self {
            InclusionProbs::Uniform(p) => check(*p),
            InclusionProbs::PerTest(ps) => {
                if ps.len() != t {
                    return Err(Error::InvalidParameter(format!(
                        "{} per-test probabilities for {} tests",
                        ps.len(),
                        t
                    )));
                }
                ps.iter().try_for_each(|&p| check(p))
            }
        }
    }
}

/// A complete runnable scheme: model, score table, matrix density, test
/// count, and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub k: u64,
    pub n: u64,
    pub eps1: f64,
    pub eps2: f64,
    pub p: InclusionProbs,
    pub t: u64,
    pub z: f64,
    pub adaptive: bool,
    pub model: ModelSpec,
    pub table: ScoreTable,
}

impl DesignParams {
    /// Structural checks: t >= 1, threshold strictly above the non-defective
    /// drift and no higher than the defective drift.
    pub fn validate(&self, m: &MomentSummary) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidParameter("t must be at least 1".into()));
        }
        self.p.validate(self.t as usize)?;
        let tf = self.t as f64;
        if !(self.z > m.mu * tf && self.z <= m.mu_t * tf) {
            return Err(Error::InvalidParameter(format!(
                "z = {} outside (mu t, mu_t t] = ({}, {}]",
                self.z,
                m.mu * tf,
                m.mu_t * tf
            )));
        }
        Ok(())
    }
}
