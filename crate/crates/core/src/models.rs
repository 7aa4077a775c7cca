//! Outcome models: the probability that a group test is positive given the
//! number of defectives it contains, plus seeded outcome sampling.
//!
//! Every model is symmetric in the defectives: the outcome distribution
//! depends only on the count `beta` of defectives included in the test, never
//! on their identities or on how many non-defectives are present.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The supported outcome channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Positive iff at least one defective is present.
    Traditional,
    /// Each included defective is independently inactive with probability r.
    Dilution,
    /// Like traditional, but an all-clear test still reads positive with
    /// probability r.
    Additive,
    /// Positive iff a strict majority of all K defectives is present.
    Majority,
    /// Threshold gap model: negative up to `lower`, positive from `upper`,
    /// positive with probability q in between.
    #[serde(rename = "bernoulli")]
    BernoulliGap,
    /// Threshold gap model: positive probability interpolates linearly
    /// across the gap.
    #[serde(rename = "linear")]
    LinearGap,
    /// Same oracle as the linear gap model; the design differs (per-test
    /// inclusion probabilities drawn from the arcsine distribution).
    Unknown,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Traditional => "traditional",
            ModelKind::Dilution => "dilution",
            ModelKind::Additive => "additive",
            ModelKind::Majority => "majority",
            ModelKind::BernoulliGap => "bernoulli",
            ModelKind::LinearGap => "linear",
            ModelKind::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "traditional" => Ok(ModelKind::Traditional),
            "dilution" => Ok(ModelKind::Dilution),
            "additive" => Ok(ModelKind::Additive),
            "majority" => Ok(ModelKind::Majority),
            "bernoulli" => Ok(ModelKind::BernoulliGap),
            "linear" => Ok(ModelKind::LinearGap),
            "unknown" => Ok(ModelKind::Unknown),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

fn default_q() -> f64 {
    0.5
}

/// An outcome model together with its noise / threshold parameters.
///
/// `r` is only meaningful for `Dilution` and `Additive`, `q` only for
/// `BernoulliGap`, and the threshold bounds only for the gap models (absent
/// bounds mean the extreme gap `(0, K)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub r: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<u64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec { kind, r: 0.0, q: 0.5, lower: None, upper: None }
    }

    pub fn traditional() -> Self {
        Self::new(ModelKind::Traditional)
    }

    pub fn dilution(r: f64) -> Self {
        ModelSpec { r, ..Self::new(ModelKind::Dilution) }
    }

    pub fn additive(r: f64) -> Self {
        ModelSpec { r, ..Self::new(ModelKind::Additive) }
    }

    pub fn majority() -> Self {
        Self::new(ModelKind::Majority)
    }

    pub fn bernoulli_gap(q: f64) -> Self {
        ModelSpec { q, ..Self::new(ModelKind::BernoulliGap) }
    }

    pub fn linear_gap() -> Self {
        Self::new(ModelKind::LinearGap)
    }

    pub fn unknown() -> Self {
        Self::new(ModelKind::Unknown)
    }

    /// Sets explicit threshold bounds (gap models only).
    pub fn with_bounds(mut self, lower: u64, upper: u64) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }

    fn is_gap_kind(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::BernoulliGap | ModelKind::LinearGap | ModelKind::Unknown
        )
    }

    /// Effective threshold bounds `(l, u)` for `k` defectives: the test is
    /// negative for `beta <= l` and positive for `beta >= u`.
    pub fn gap_bounds(&self, k: u64) -> (u64, u64) {
        match self.kind {
            ModelKind::Traditional | ModelKind::Dilution | ModelKind::Additive => (0, 1),
            // Strict majority: positive iff 2*beta > k.
            ModelKind::Majority => (k / 2, k / 2 + 1),
            ModelKind::BernoulliGap | ModelKind::LinearGap | ModelKind::Unknown => {
                (self.lower.unwrap_or(0), self.upper.unwrap_or(k))
            }
        }
    }

    /// Checks the model parameters against a defective count `k`.
    pub fn validate(&self, k: u64) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if !self.r.is_finite() || !(0.0..1.0).contains(&self.r) {
            return Err(Error::InvalidParameter(format!("r = {} outside [0, 1)", self.r)));
        }
        if !self.q.is_finite() || !(0.0..=1.0).contains(&self.q) {
            return Err(Error::InvalidParameter(format!("q = {} outside [0, 1]", self.q)));
        }
        if (self.lower.is_some() || self.upper.is_some()) && !self.is_gap_kind() {
            return Err(Error::InvalidParameter(format!(
                "threshold bounds are only valid for gap models, not {}",
                self.kind.name()
            )));
        }
        let (l, u) = self.gap_bounds(k);
        if l >= u || u > k {
            return Err(Error::InvalidParameter(format!(
                "threshold bounds ({l}, {u}) must satisfy 0 <= l < u <= k = {k}"
            )));
        }
        Ok(())
    }

    /// P(y = 1 | beta defectives included), for a population of `k`
    /// defectives in total.
    ///
    /// `k = 0` is allowed with `beta = 0` so that runs against an empty
    /// defective set are well defined: every model reads negative except the
    /// additive one, which still fires with probability r.
    pub fn outcome_probability(&self, beta: u64, k: u64) -> Result<f64> {
        if k == 0 {
            if beta > 0 {
                return Err(Error::InvalidParameter("beta > k".into()));
            }
            return Ok(if self.kind == ModelKind::Additive { self.r } else { 0.0 });
        }
        self.validate(k)?;
        if beta > k {
            return Err(Error::InvalidParameter(format!("beta = {beta} exceeds k = {k}")));
        }
        Ok(match self.kind {
            ModelKind::Traditional => {
                if beta >= 1 {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::Dilution => {
                if beta == 0 {
                    0.0
                } else {
                    1.0 - pow_log(self.r, beta)
                }
            }
            ModelKind::Additive => {
                if beta >= 1 {
                    1.0
                } else {
                    self.r
                }
            }
            ModelKind::Majority => {
                if 2 * beta > k {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::BernoulliGap => {
                let (l, u) = self.gap_bounds(k);
                if beta <= l {
                    0.0
                } else if beta >= u {
                    1.0
                } else {
                    self.q
                }
            }
            ModelKind::LinearGap | ModelKind::Unknown => {
                let (l, u) = self.gap_bounds(k);
                if beta <= l {
                    0.0
                } else if beta >= u {
                    1.0
                } else {
                    (beta - l) as f64 / (u - l) as f64
                }
            }
        })
    }

    /// Draws one test outcome. Models whose probability is exactly 0 or 1 at
    /// this `beta` do not consume randomness, so their outcomes are a pure
    /// function of the test matrix.
    pub fn sample_outcome<R: Rng>(&self, beta: u64, k: u64, rng: &mut R) -> Result<bool> {
        let prob = self.outcome_probability(beta, k)?;
        Ok(if prob <= 0.0 {
            false
        } else if prob >= 1.0 {
            true
        } else {
            rng.random_bool(prob)
        })
    }

    /// True when a negative test certifies that every included item is
    /// non-defective: all `beta >= 1` outcomes are positive with probability
    /// one, so (x, y) = (1, 0) is impossible for a defective.
    pub fn elimination_sound(&self, k: u64) -> Result<bool> {
        self.validate(k)?;
        for beta in 1..=k {
            if self.outcome_probability(beta, k)? < 1.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// r^beta evaluated in log space so large exponents underflow to zero instead
/// of producing spurious denormals.
fn pow_log(r: f64, beta: u64) -> f64 {
    if r == 0.0 {
        return if beta == 0 { 1.0 } else { 0.0 };
    }
    (beta as f64 * r.ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_kinds(k: u64) -> Vec<ModelSpec> {
        vec![
            ModelSpec::traditional(),
            ModelSpec::dilution(0.1),
            ModelSpec::additive(0.05),
            ModelSpec::majority(),
            ModelSpec::bernoulli_gap(0.5),
            ModelSpec::linear_gap(),
            ModelSpec::unknown(),
        ]
        .into_iter()
        .filter(move |m| m.validate(k).is_ok())
        .collect()
    }

    #[test]
    fn traditional_empty_test_is_negative() {
        let m = ModelSpec::traditional();
        assert_eq!(m.outcome_probability(0, 10).unwrap(), 0.0);
    }

    #[test]
    fn linear_gap_is_proportional() {
        let m = ModelSpec::linear_gap();
        assert_eq!(m.outcome_probability(5, 10).unwrap(), 0.5);
    }

    #[test]
    fn dilution_matches_independent_inactivation() {
        // Brute-force the two-defective case: y = 0 only if both defectives
        // are independently inactive.
        let r: f64 = 0.1;
        let mut p_neg = 0.0;
        for a in [false, true] {
            for b in [false, true] {
                let w = (if a { r } else { 1.0 - r }) * (if b { r } else { 1.0 - r });
                if a && b {
                    p_neg += w;
                }
            }
        }
        let m = ModelSpec::dilution(r);
        let got = m.outcome_probability(2, 10).unwrap();
        assert!((got - (1.0 - p_neg)).abs() < 1e-15);
        assert!((got - 0.99).abs() < 1e-15);
    }

    #[test]
    fn additive_fires_on_empty_tests() {
        let m = ModelSpec::additive(0.05);
        assert_eq!(m.outcome_probability(0, 10).unwrap(), 0.05);
    }

    #[test]
    fn certain_outcomes_ignore_rng_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = ModelSpec::traditional();
        assert!(m.sample_outcome(3, 10, &mut rng).unwrap());
        let maj = ModelSpec::majority();
        assert!(!maj.sample_outcome(2, 11, &mut rng).unwrap());
        // Neither draw consumed randomness.
        let mut fresh = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(rng.random::<u64>(), fresh.random::<u64>());
    }

    #[test]
    fn bernoulli_gap_sampling_frequency() {
        let m = ModelSpec::bernoulli_gap(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| m.sample_outcome(1, 3, &mut rng).unwrap())
            .count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn monotone_in_beta() {
        for k in [1u64, 2, 5, 10, 11, 50] {
            for m in all_kinds(k) {
                let mut prev = -1.0;
                for beta in 0..=k {
                    let p = m.outcome_probability(beta, k).unwrap();
                    assert!(p >= prev, "{:?} not monotone at k={k} beta={beta}", m.kind);
                    prev = p;
                }
            }
        }
    }

    #[test]
    fn boundary_values() {
        for k in [1u64, 5, 10, 11] {
            for m in all_kinds(k) {
                let at_zero = m.outcome_probability(0, k).unwrap();
                assert!(at_zero == 0.0 || at_zero == m.r, "{:?}", m.kind);
                let at_k = m.outcome_probability(k, k).unwrap();
                if m.kind == ModelKind::Dilution {
                    // A fully included pool can still read negative if every
                    // defective is diluted away.
                    assert!((at_k - (1.0 - m.r.powi(k as i32))).abs() < 1e-12);
                } else {
                    assert_eq!(at_k, 1.0);
                }
            }
        }
    }

    #[test]
    fn zero_noise_degenerates_to_traditional() {
        let t = ModelSpec::traditional();
        for k in [1u64, 3, 10] {
            for beta in 0..=k {
                let want = t.outcome_probability(beta, k).unwrap();
                assert_eq!(ModelSpec::dilution(0.0).outcome_probability(beta, k).unwrap(), want);
                assert_eq!(ModelSpec::additive(0.0).outcome_probability(beta, k).unwrap(), want);
            }
        }
    }

    #[test]
    fn traditional_is_the_unit_gap() {
        let t = ModelSpec::traditional();
        let bern = ModelSpec::bernoulli_gap(0.3).with_bounds(0, 1);
        let lin = ModelSpec::linear_gap().with_bounds(0, 1);
        for k in [1u64, 4, 12] {
            for beta in 0..=k {
                let want = t.outcome_probability(beta, k).unwrap();
                assert_eq!(bern.outcome_probability(beta, k).unwrap(), want);
                assert_eq!(lin.outcome_probability(beta, k).unwrap(), want);
            }
        }
    }

    #[test]
    fn sampling_tracks_outcome_probability() {
        let n = 100_000u64;
        let cases = [
            (ModelSpec::dilution(0.2), 3u64, 10u64),
            (ModelSpec::additive(0.15), 0, 10),
            (ModelSpec::linear_gap(), 3, 10),
            (ModelSpec::bernoulli_gap(0.25), 2, 5),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (m, beta, k) in cases {
            let p = m.outcome_probability(beta, k).unwrap();
            let ones = (0..n)
                .filter(|_| m.sample_outcome(beta, k, &mut rng).unwrap())
                .count() as f64;
            let bound = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (ones / n as f64 - p).abs() <= bound,
                "{:?} beta={beta}: {} vs {p}",
                m.kind,
                ones / n as f64
            );
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(ModelSpec::dilution(1.0).validate(5).is_err());
        assert!(ModelSpec::dilution(-0.1).validate(5).is_err());
        assert!(ModelSpec::bernoulli_gap(1.5).validate(5).is_err());
        assert!(ModelSpec::linear_gap().with_bounds(3, 3).validate(5).is_err());
        assert!(ModelSpec::linear_gap().with_bounds(0, 9).validate(5).is_err());
        assert!(ModelSpec::traditional().with_bounds(0, 1).validate(5).is_err());
        assert!(ModelSpec::traditional().outcome_probability(6, 5).is_err());
        assert!(ModelSpec::traditional().validate(0).is_err());
    }

    #[test]
    fn model_spec_json_round_trip() {
        let m = ModelSpec::bernoulli_gap(0.25).with_bounds(1, 4);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"kind\":\"bernoulli\""));
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        // Omitted fields fall back to defaults.
        let sparse: ModelSpec = serde_json::from_str(r#"{"kind":"traditional"}"#).unwrap();
        assert_eq!(sparse, ModelSpec::traditional());
    }
}
