//! Monte Carlo harness: builds complete designs, estimates false-positive /
//! false-negative event rates over seeded runs, and optimizes the matrix
//! density p.
//!
//! Runs are independent work items with per-run seeds derived from the
//! master seed by a splitmix step, so reports are bitwise reproducible and
//! indifferent to execution order or worker count.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    decode_nonadaptive, decode_nonadaptive_per_test, generate_matrix, run_adaptive_with_tables,
    AdaptiveOptions, DecodeOptions, DecodeResult,
};
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};
use crate::scores::{best_score_table, finetune, ScoreTable};
use crate::stats::{
    code_length_adaptive, code_length_nonadaptive, code_length_unrounded, moments, DesignParams,
    InclusionProbs, MomentSummary,
};

/// Samples drawn from the arcsine distribution are clipped to
/// [delta, 1 - delta] so score values stay finite.
pub const ARCSINE_CLIP: f64 = 1e-6;

/// One simulated run, keyed by its derived seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub accused: u64,
    pub missed: u64,
    pub tests_used: u64,
}

/// Aggregated Monte Carlo estimate of the per-run error events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub runs: u64,
    /// Fraction of runs accusing at least one non-defective.
    pub fp_event_rate: f64,
    /// Fraction of runs missing at least one defective.
    pub fn_event_rate: f64,
    pub wilson_ci_fp: (f64, f64),
    pub wilson_ci_fn: (f64, f64),
    pub per_run: Vec<RunRecord>,
}

impl SimulationReport {
    /// True when the Wilson 95% upper bounds sit within `factor` times the
    /// error budgets.
    pub fn within_budgets(&self, eps1: f64, eps2: f64, factor: f64) -> bool {
        self.wilson_ci_fp.1 <= factor * eps1 && self.wilson_ci_fn.1 <= factor * eps2
    }

    /// Summary CSV, one row per run.
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "run_id,seed,accused,missed,tests_used")?;
        for (i, r) in self.per_run.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", i, r.seed, r.accused, r.missed, r.tests_used)?;
        }
        Ok(())
    }
}

/// 95% Wilson score interval for `hits` successes in `n` trials.
pub fn wilson_interval(hits: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054f64;
    let nf = n as f64;
    let phat = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = phat + z2 / (2.0 * nf);
    let half = z * (phat * (1.0 - phat) / nf + z2 / (4.0 * nf * nf)).sqrt();
    (((center - half) / denom).max(0.0), ((center + half) / denom).min(1.0))
}

/// Splitmix-style per-run seed: independent of run order, stable across
/// worker counts.
pub fn derive_run_seed(master_seed: u64, run: u64) -> u64 {
    let mut z = master_seed.wrapping_add((run + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Quantile function of the arcsine distribution F(p) = (2/pi) arcsin sqrt p:
/// p = sin^2(pi u / 2).
pub fn arcsine_quantile(u: f64) -> f64 {
    let s = (std::f64::consts::FRAC_PI_2 * u).sin();
    s * s
}

/// T i.i.d. per-test inclusion probabilities from the (clipped) arcsine
/// distribution.
pub fn arcsine_p_sample<R: Rng>(t: usize, rng: &mut R) -> Vec<f64> {
    (0..t)
        .map(|_| arcsine_quantile(rng.random::<f64>()).clamp(ARCSINE_CLIP, 1.0 - ARCSINE_CLIP))
        .collect()
}

/// Everything one seeded run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub result: DecodeResult,
    pub defectives: Vec<usize>,
}

/// Runs one seeded simulation: fresh uniformly-random defective set, fresh
/// matrix, fresh outcomes, decoded per the design.
pub fn run_once(
    design: &DesignParams,
    per_test_tables: Option<&[ScoreTable]>,
    seed: u64,
    opts: Option<&AdaptiveOptions>,
) -> Result<RunOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut defectives =
        index::sample(&mut rng, design.n as usize, design.k as usize).into_vec();
    defectives.sort_unstable();

    let result = if design.adaptive {
        let default_opts = AdaptiveOptions::default();
        run_adaptive_with_tables(
            design,
            per_test_tables,
            &defectives,
            &mut rng,
            opts.unwrap_or(&default_opts),
        )?
    } else {
        let matrix = generate_matrix(design.n as usize, design.t as usize, &design.p, &mut rng)?;
        let outcomes = crate::design::run_tests(&matrix, &defectives, &design.model, &mut rng)?;
        let decode_opts = DecodeOptions {
            record_trajectories: opts.is_some_and(|o| o.record_trajectories),
        };
        match per_test_tables {
            Some(ts) => {
                decode_nonadaptive_per_test(&matrix, &outcomes, ts, design.z, &decode_opts)?
            }
            None => decode_nonadaptive(&matrix, &outcomes, &design.table, design.z, &decode_opts)?,
        }
    };

    let missed =
        defectives.iter().filter(|d| !result.accused.binary_search(d).is_ok()).count() as u64;
    let record = RunRecord {
        seed,
        accused: result.accused.len() as u64,
        missed,
        tests_used: result.tests_used as u64,
    };
    Ok(RunOutput { record, result, defectives })
}

/// Estimates per-run error event rates over `runs` seeded simulations.
///
/// An FP event is a run accusing at least one non-defective; an FN event is
/// a run missing at least one defective. Runs execute in parallel on the
/// ambient rayon pool.
pub fn simulate(design: &DesignParams, runs: u64, master_seed: u64) -> Result<SimulationReport> {
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    let per_test_tables = crate::design::build_per_test_tables(design)?;
    let records: Vec<RunRecord> = (0..runs)
        .into_par_iter()
        .map(|run| {
            run_once(design, per_test_tables.as_deref(), derive_run_seed(master_seed, run), None)
                .map(|out| out.record)
        })
        .collect::<Result<_>>()?;

    let mut fp_events = 0u64;
    let mut fn_events = 0u64;
    for r in &records {
        // True positives are k - missed, so any excess accusation is an FP.
        if r.accused > design.k - r.missed {
            fp_events += 1;
        }
        if r.missed > 0 {
            fn_events += 1;
        }
    }
    Ok(SimulationReport {
        runs,
        fp_event_rate: fp_events as f64 / runs as f64,
        fn_event_rate: fn_events as f64 / runs as f64,
        wilson_ci_fp: wilson_interval(fp_events, runs),
        wilson_ci_fn: wilson_interval(fn_events, runs),
        per_run: records,
    })
}

/// Trajectory CSV rows for one decoded run.
pub fn write_trajectories_csv<W: Write>(
    mut w: W,
    run_id: u64,
    result: &DecodeResult,
    defectives: &[usize],
    header: bool,
) -> Result<()> {
    let Some(traj) = &result.trajectories else {
        return Err(Error::InvalidParameter("decode result carries no trajectories".into()));
    };
    if header {
        writeln!(w, "run_id,item_id,is_defective,test_index,running_score")?;
    }
    for (item, path) in traj.iter().enumerate() {
        let is_def = defectives.binary_search(&item).is_ok() as u8;
        for (i, s) in path.iter().enumerate() {
            writeln!(w, "{run_id},{item},{is_def},{i},{s}")?;
        }
    }
    Ok(())
}

fn objective(model: &ModelSpec, k: u64, n: u64, e1: f64, e2: f64, adaptive: bool, p: f64) -> Option<f64> {
    let table = best_score_table(model, k, p).ok()?;
    let m = moments(model, k, p, &table).ok()?;
    code_length_unrounded(&m, n, k, e1, e2, adaptive).ok()
}

/// Minimizes the unrounded code length over the matrix density p.
///
/// A 128-point log-spaced grid over (1e-6, 0.5] localizes the minimum, then
/// golden-section refinement narrows the bracketing cell. Returns the argmin
/// and the minimal unrounded T.
pub fn optimize_p(
    model: &ModelSpec,
    k: u64,
    n: u64,
    eps1: f64,
    eps2: f64,
    adaptive: bool,
) -> Result<(f64, f64)> {
    optimize_p_grid(model, k, n, eps1, eps2, adaptive, 128)
}

/// Same as [`optimize_p`] with an explicit grid density.
pub fn optimize_p_grid(
    model: &ModelSpec,
    k: u64,
    n: u64,
    eps1: f64,
    eps2: f64,
    adaptive: bool,
    grid_points: usize,
) -> Result<(f64, f64)> {
    model.validate(k)?;
    let f = |p: f64| objective(model, k, n, eps1, eps2, adaptive, p);

    let (lo, hi) = (1e-6f64, 0.5f64);
    let ratio = (hi / lo).ln();
    let grid: Vec<f64> = (0..grid_points)
        .map(|i| lo * (ratio * i as f64 / (grid_points - 1) as f64).exp())
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in grid.iter().enumerate() {
        if let Some(t) = f(p) {
            if best.is_none_or(|(_, bt)| t < bt) {
                best = Some((i, t));
            }
        }
    }
    let Some((i_best, _)) = best else {
        return Err(Error::Infeasible { mu: f64::NAN, mu_t: f64::NAN });
    };

    // Golden-section on ln p over the cell around the best grid point.
    let mut a = grid[i_best.saturating_sub(1)].ln();
    let mut b = grid[(i_best + 1).min(grid_points - 1)].ln();
    let inv_phi = 0.618_033_988_749_894_9f64;
    let g = |lnp: f64| f(lnp.exp()).unwrap_or(f64::INFINITY);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = g(x1);
    let mut f2 = g(x2);
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = g(x2);
        }
    }
    let p_star = (0.5 * (a + b)).exp().min(0.5);
    let t_star = f(p_star)
        .ok_or(Error::Infeasible { mu: f64::NAN, mu_t: f64::NAN })?;
    Ok((p_star, t_star))
}

/// Mean-moment summary over a realized per-test probability list.
///
/// Each test contributes its own exact per-p moments; the sum of per-test
/// variances is what drives the score spread, so the effective sigma values
/// are the means over the list. The defective mean is 1/K at every p for
/// this score family, so the separation gap is untouched.
fn per_test_mean_moments(model: &ModelSpec, k: u64, ps: &[f64]) -> Result<MomentSummary> {
    let mut mu = 0.0;
    let mut sigma2 = 0.0;
    let mut mu_t = 0.0;
    let mut sigma2_t = 0.0;
    for &p in ps {
        let table = best_score_table(model, k, p)?;
        let m = moments(model, k, p, &table)?;
        mu += m.mu;
        sigma2 += m.sigma2;
        mu_t += m.mu_t;
        sigma2_t += m.sigma2_t;
    }
    let tf = ps.len() as f64;
    let (mu, sigma2, mu_t, sigma2_t) = (mu / tf, sigma2 / tf, mu_t / tf, sigma2_t / tf);
    if !(mu_t > mu) {
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

/// Builds a complete runnable design.
///
/// For most models: take `p` (or optimize it), build the score table, apply
/// fine-tuning if requested, and evaluate the code-length formulas. The
/// unknown model instead draws its per-test probabilities from the clipped
/// arcsine distribution (seeded by `seed`), computes the moment summary of
/// the realized list, and iterates the length until the drawn list and the
/// code length agree.
pub fn build_design(
    model: &ModelSpec,
    k: u64,
    n: u64,
    eps1: f64,
    eps2: f64,
    p: Option<f64>,
    adaptive: bool,
    finetune_scores: bool,
    seed: u64,
) -> Result<(DesignParams, MomentSummary)> {
    model.validate(k)?;
    if model.kind == ModelKind::Unknown {
        return build_unknown_design(model, k, n, eps1, eps2, adaptive, finetune_scores, seed);
    }
    let p = match p {
        Some(p) => p,
        None => optimize_p(model, k, n, eps1, eps2, adaptive)?.0,
    };
    let mut table = best_score_table(model, k, p)?;
    if finetune_scores {
        table = finetune(&table, model)?;
    }
    let m = moments(model, k, p, &table)?;
    let (t, z) = if adaptive {
        code_length_adaptive(&m, n, k, eps1, eps2)?
    } else {
        code_length_nonadaptive(&m, n, k, eps1, eps2)?
    };
    let design = DesignParams {
        k,
        n,
        eps1,
        eps2,
        p: InclusionProbs::Uniform(p),
        t,
        z,
        adaptive,
        model: *model,
        table,
    };
    design.validate(&m)?;
    Ok((design, m))
}

fn build_unknown_design(
    model: &ModelSpec,
    k: u64,
    n: u64,
    eps1: f64,
    eps2: f64,
    adaptive: bool,
    finetune_scores: bool,
    seed: u64,
) -> Result<(DesignParams, MomentSummary)> {
    if finetune_scores {
        return Err(Error::UnsoundElimination(model.kind.name().to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Initial length guess from the fixed-p view at the arcsine median.
    let half_table = best_score_table(model, k, 0.5)?;
    let m_half = moments(model, k, 0.5, &half_table)?;
    let (mut t, _) = if adaptive {
        code_length_adaptive(&m_half, n, k, eps1, eps2)?
    } else {
        code_length_nonadaptive(&m_half, n, k, eps1, eps2)?
    };

    // Grow the drawn list until the code length computed from the realized
    // moments fits inside it; the excess is discarded. The list never
    // shrinks, so the loop is monotone and deterministic.
    let mut ps: Vec<f64> = Vec::new();
    let mut z = 0.0;
    for _ in 0..64 {
        if ps.len() < t as usize {
            ps.extend(arcsine_p_sample(t as usize - ps.len(), &mut rng));
        }
        let m = per_test_mean_moments(model, k, &ps[..t as usize])?;
        let (t_new, z_new) = if adaptive {
            code_length_adaptive(&m, n, k, eps1, eps2)?
        } else {
            code_length_nonadaptive(&m, n, k, eps1, eps2)?
        };
        z = z_new;
        if t_new <= t {
            break;
        }
        t = t_new;
    }
    ps.truncate(t as usize);
    let m = per_test_mean_moments(model, k, &ps)?;

    let table = best_score_table(model, k, 0.5)?;
    let design = DesignParams {
        k,
        n,
        eps1,
        eps2,
        p: InclusionProbs::PerTest(ps),
        t,
        z,
        adaptive,
        model: *model,
        table,
    };
    design.validate(&m)?;
    Ok((design, m))
}
