//! Binomial pmf tables via a log-space recurrence: exact enough for moment
//! sums and stable for k up to ~1e5 without factorial overflow.

/// pmf of Binomial(k, p) for beta = 0..=k.
///
/// ln pmf(0) = k ln(1 - p); successive terms via
/// ln pmf(b+1) = ln pmf(b) + ln(k - b) - ln(b + 1) + ln p - ln(1 - p).
/// Far tails underflow to zero on exp, which is what the moment sums want.
pub(crate) fn pmf_table(k: u64, p: f64) -> Vec<f64> {
    debug_assert!(p > 0.0 && p < 1.0);
    let lp = p.ln();
    let lq = (-p).ln_1p();
    let mut out = Vec::with_capacity(k as usize + 1);
    let mut ln_pmf = k as f64 * lq;
    out.push(ln_pmf.exp());
    for b in 0..k {
        ln_pmf += ((k - b) as f64).ln() - ((b + 1) as f64).ln() + lp - lq;
        out.push(ln_pmf.exp());
    }
    out
}

/// (P(y = 0), P(y = 1)) for one test, as expectations of the outcome model
/// over beta ~ Binomial(k, p). Both sides are accumulated separately so that
/// neither is lost to cancellation when the other is close to one.
pub(crate) fn outcome_marginals(
    model: &crate::models::ModelSpec,
    k: u64,
    p: f64,
) -> crate::error::Result<(f64, f64)> {
    let pmf = pmf_table(k, p);
    let mut p0 = 0.0;
    let mut p1 = 0.0;
    for (beta, w) in pmf.iter().enumerate() {
        let f = model.outcome_probability(beta as u64, k)?;
        p1 += w * f;
        p0 += w * (1.0 - f);
    }
    Ok((p0, p1))
}
