//! Achievable rate regions, asymptotic and finite block length.
//!
//! The asymptotic curves are closed-form. The finite-length solver prices the
//! Gaussian fluctuation of the per-sample information and loss vector: given a
//! moment summary (mean `J`, covariance `V`), it finds the cheapest rate
//! correction `(b1 + b2)/sqrt(n)` such that a centered Gaussian with
//! covariance `V` stays below the slack vector `b` with probability at least
//! `1 - epsilon`. Orthant probabilities come from a common-random-number
//! Monte-Carlo sampler, which makes every estimate componentwise monotone in
//! `b` and lets nearby queries share their noise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::MomentSummary;
use crate::regressors::McEstimate;
use crate::rng;

/// Which analysis produced a boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Asymptotic,
    Finite,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Asymptotic => write!(f, "asymptotic"),
            Regime::Finite => write!(f, "finite"),
        }
    }
}

/// One point on a computed achievable boundary.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegionPoint {
    pub n: usize,
    pub epsilon: f64,
    pub d_target: f64,
    pub g_target: f64,
    pub rate_bits: f64,
    pub regime: Regime,
    /// Gap between the generalization target and the noise floor sigma^2.
    pub delta: f64,
}

/// Rate needed to hit mean-square distortion `d` when the decoder already
/// holds the side sequence: `0.5 * log2(sigma2 / d)` bits per sample.
pub fn r_wz(d: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!(
            "r_wz needs sigma2 > 0 and finite d, got d = {d}, sigma2 = {sigma2}"
        )));
    }
    if d <= 0.0 || d > sigma2 {
        return Err(Error::Domain(format!(
            "distortion {d} outside (0, {sigma2}]"
        )));
    }
    Ok(0.5 * (sigma2 / d).log2())
}

/// Asymptotic rate for a joint distortion/generalization target. Any
/// generalization level at or above the noise floor is free: the rate is set
/// by the distortion constraint alone.
pub fn r_d_g(d: f64, g: f64, sigma2: f64) -> Result<f64> {
    if g < sigma2 {
        return Err(Error::Infeasible(format!(
            "generalization target {g} below the noise floor {sigma2}"
        )));
    }
    r_wz(d, sigma2)
}

/// Reference interval for the root-scale excess loss at rate `R`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RootLossBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Classical sandwich on the achievable root loss of regression over a coded
/// source: `lower = sigma` (never beat the noise), `upper = sigma * (1 + 2 *
/// 2^-R)` from a generic quantize-then-regress argument. Our scheme sits on
/// the lower edge for every positive rate.
pub fn raginsky_bounds(rate_bits: f64, sigma2: f64) -> Result<RootLossBounds> {
    if !(rate_bits >= 0.0) || !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "need rate >= 0 and sigma2 > 0, got rate = {rate_bits}, sigma2 = {sigma2}"
        )));
    }
    let sigma = sigma2.sqrt();
    let dist_rate = sigma2 * (-2.0 * rate_bits).exp2();
    Ok(RootLossBounds {
        lower: sigma,
        upper: sigma + 2.0 * dist_rate.sqrt(),
    })
}

/// Fixed pool of correlated Gaussian four-vectors used for every orthant
/// probability in one solve. Reusing the pool across queries is what makes
/// `P(B <= b)` exactly monotone in `b` and the solver's bisection noiseless.
pub struct DispersionSampler {
    samples: Vec<[f64; 4]>,
}

impl DispersionSampler {
    /// Draw `mc_samples` vectors from `N(0, v)`. The covariance is factored
    /// through its symmetric eigendecomposition; eigenvalues in the roundoff
    /// band `[-1e-6 * lambda_max, 0)` are clamped to zero so rank-deficient
    /// covariances (properly degenerate directions) are accepted.
    pub fn new(v: &[f64; 16], mc_samples: usize, seed: u64) -> Result<Self> {
        if mc_samples < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 Monte-Carlo samples, got {mc_samples}"
            )));
        }
        let mut m = DMatrix::<f64>::zeros(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = 0.5 * (v[4 * r + c] + v[4 * c + r]);
            }
        }
        let eig = m.symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut scale = DVector::<f64>::zeros(4);
        for k in 0..4 {
            let lam = eig.eigenvalues[k];
            if lam < -1e-6 * lam_max.max(1e-300) {
                return Err(Error::NotPsd { min_eig: lam });
            }
            scale[k] = lam.max(0.0).sqrt();
        }
        let mut factor = eig.eigenvectors;
        for k in 0..4 {
            factor.column_mut(k).scale_mut(scale[k]);
        }

        let mut stream = rng::stream(seed, "dispersion", &[]);
        let mut samples = Vec::with_capacity(mc_samples);
        for _ in 0..mc_samples {
            let (z0, z1) = rng::normal_pair(&mut stream);
            let (z2, z3) = rng::normal_pair(&mut stream);
            let z = [z0, z1, z2, z3];
            let mut out = [0.0; 4];
            for r in 0..4 {
                let mut acc = 0.0;
                for (c, zc) in z.iter().enumerate() {
                    acc += factor[(r, c)] * zc;
                }
                out[r] = acc;
            }
            samples.push(out);
        }
        Ok(DispersionSampler { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of the pool lying below `b` in every coordinate.
    pub fn lower_orthant(&self, b: [f64; 4]) -> f64 {
        let hits = self
            .samples
            .iter()
            .filter(|s| s[0] <= b[0] && s[1] <= b[1] && s[2] <= b[2] && s[3] <= b[3])
            .count();
        hits as f64 / self.samples.len() as f64
    }

    /// Orthant probability with its binomial standard error.
    pub fn estimate(&self, b: [f64; 4]) -> McEstimate {
        let p = self.lower_orthant(b);
        let se = (p * (1.0 - p) / self.samples.len() as f64).sqrt();
        McEstimate { mean: p, se }
    }
}

/// One-shot `P(B <= b)` for `B ~ N(0, v)` with a binomial standard error.
pub fn mvn_lower_orthant_prob(
    v: &[f64; 16],
    b: [f64; 4],
    mc_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    Ok(DispersionSampler::new(v, mc_samples, seed)?.estimate(b))
}

/// Knobs for the finite block-length rate solver.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Pool size for orthant probabilities. 2e5 puts the standard error near
    /// 1e-3 for tail levels around 0.1.
    pub mc_samples: usize,
    /// Bisection stops once the rate bracket is this narrow, in bits.
    pub tol_bits: f64,
    /// Grid resolution for the split between the two rate coordinates.
    pub s_points: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mc_samples: 200_000,
            tol_bits: 1e-3,
            s_points: 33,
            seed: 0,
        }
    }
}

/// Smallest achievable rate at block length `n` with excess probability
/// `epsilon` for joint targets `(d, g)`.
///
/// The search space is the set of slack vectors `b` with `P(B <= b) >= 1 -
/// epsilon`, minimizing `b1 + b2`. Because the orthant probability is
/// componentwise monotone, the loss coordinates can be pinned at their
/// maximum allowed slacks without loss; only the two-dimensional `(b1, b2)`
/// face is searched, by bisection on the sum with an inner grid over the
/// split.
pub fn rate_bound_finite(
    summary: &MomentSummary,
    n: usize,
    epsilon: f64,
    d: f64,
    g: f64,
    cfg: &SolverConfig,
) -> Result<RegionPoint> {
    validate_query(n, epsilon)?;
    let sampler = DispersionSampler::new(&summary.v, cfg.mc_samples, cfg.seed)?;
    let rate_bits = solve_min_rate(summary, &sampler, n, epsilon, Some(d), Some(g), cfg)?;
    Ok(RegionPoint {
        n,
        epsilon,
        d_target: d,
        g_target: g,
        rate_bits,
        regime: Regime::Finite,
        delta: g - summary.sigma2,
    })
}

/// Joint-versus-marginal rate comparison at one query point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TradeoffGap {
    pub r_joint: f64,
    pub r_d_only: f64,
    pub r_g_only: f64,
    /// `r_joint - max(r_d_only, r_g_only)`. Nonnegative by construction:
    /// the joint feasible set is the intersection of the marginal ones.
    pub gap: f64,
}

/// Price of satisfying both targets at once. All three solves share one
/// sample pool, so the gap is free of independent Monte-Carlo noise.
pub fn tradeoff_gap(
    summary: &MomentSummary,
    n: usize,
    epsilon: f64,
    d: f64,
    g: f64,
    cfg: &SolverConfig,
) -> Result<TradeoffGap> {
    validate_query(n, epsilon)?;
    let sampler = DispersionSampler::new(&summary.v, cfg.mc_samples, cfg.seed)?;
    let r_joint = solve_min_rate(summary, &sampler, n, epsilon, Some(d), Some(g), cfg)?;
    let r_d_only = solve_min_rate(summary, &sampler, n, epsilon, Some(d), None, cfg)?;
    let r_g_only = solve_min_rate(summary, &sampler, n, epsilon, None, Some(g), cfg)?;
    Ok(TradeoffGap {
        r_joint,
        r_d_only,
        r_g_only,
        gap: r_joint - r_d_only.max(r_g_only),
    })
}

/// Smallest generalization target reachable at block length `n`, excess
/// probability `epsilon`, and distortion target `d` without exceeding
/// `rate_cap` bits. `None` when the cap is unattainable even with the
/// generalization constraint dropped entirely, including the case where `d`
/// itself leaves no slack at this block length.
///
/// The minimal rate is nonincreasing in the generalization target (a larger
/// target only enlarges the feasible slack set), and one shared sample pool
/// makes that monotonicity exact, so the floor is found by bisection.
pub fn g_floor(
    summary: &MomentSummary,
    n: usize,
    epsilon: f64,
    d: f64,
    rate_cap: f64,
    g_tol: f64,
    cfg: &SolverConfig,
) -> Result<Option<RegionPoint>> {
    validate_query(n, epsilon)?;
    if !(g_tol > 0.0 && g_tol.is_finite()) {
        return Err(Error::Domain(format!("g_tol {g_tol} must be positive")));
    }
    if !(rate_cap >= 0.0 && rate_cap.is_finite()) {
        return Err(Error::Domain(format!(
            "rate_cap {rate_cap} must be finite and nonnegative"
        )));
    }
    let sampler = DispersionSampler::new(&summary.v, cfg.mc_samples, cfg.seed)?;

    let solve = |g: Option<f64>| -> Result<Option<f64>> {
        match solve_min_rate(summary, &sampler, n, epsilon, Some(d), g, cfg) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Infeasible(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    match solve(None)? {
        Some(r) if r <= rate_cap => {}
        _ => return Ok(None),
    }

    let nf = n as f64;
    let root_n = nf.sqrt();
    let penalty = 2.0 * nf.log2() / nf;
    // Once the slack clears every sample's loss coordinate the constraint is
    // vacuous, so this finite target behaves exactly like no target at all.
    let max_s = sampler.samples.iter().map(|s| s[3]).fold(0.0_f64, f64::max);
    let mut hi = summary.j[3] + penalty + (max_s + 1.0) / root_n;
    // Zero slack is infeasible by construction.
    let mut lo = summary.j[3] + penalty;
    while hi - lo > g_tol {
        let mid = 0.5 * (hi + lo);
        let fits = matches!(solve(Some(mid))?, Some(r) if r <= rate_cap);
        if fits {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let rate_bits = solve(Some(hi))?.ok_or_else(|| {
        Error::SolverNoConverge(format!("feasible bracket endpoint {hi} stopped solving"))
    })?;
    Ok(Some(RegionPoint {
        n,
        epsilon,
        d_target: d,
        g_target: hi,
        rate_bits,
        regime: Regime::Finite,
        delta: hi - summary.sigma2,
    }))
}

fn validate_query(n: usize, epsilon: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain(format!("block length {n} too small")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, 1)")));
    }
    Ok(())
}

/// Core minimization. `d` or `g` set to `None` drops that slack constraint,
/// which is how the marginal curves of `tradeoff_gap` are produced.
fn solve_min_rate(
    summary: &MomentSummary,
    sampler: &DispersionSampler,
    n: usize,
    epsilon: f64,
    d: Option<f64>,
    g: Option<f64>,
    cfg: &SolverConfig,
) -> Result<f64> {
    let nf = n as f64;
    let root_n = nf.sqrt();
    let penalty = 2.0 * nf.log2() / nf;

    let slack = |target: Option<f64>, mean: f64, what: &str| -> Result<f64> {
        match target {
            None => Ok(f64::INFINITY),
            Some(t) => {
                let s = root_n * (t - mean - penalty);
                if s <= 0.0 {
                    Err(Error::Infeasible(format!(
                        "{what} target {t} leaves slack {s:.4e} at n = {n} \
                         (mean {mean:.4}, penalty {penalty:.4e})"
                    )))
                } else {
                    Ok(s)
                }
            }
        }
    };
    let b3 = slack(d, summary.j[2], "distortion")?;
    let b4 = slack(g, summary.j[3], "generalization")?;

    // The loss coordinates are fixed for the whole solve; filter once.
    let pairs: Vec<[f64; 2]> = sampler
        .samples
        .iter()
        .filter(|s| s[2] <= b3 && s[3] <= b4)
        .map(|s| [s[0], s[1]])
        .collect();
    let need = (1.0 - epsilon) * sampler.len() as f64;
    if (pairs.len() as f64) < need {
        return Err(Error::Infeasible(format!(
            "loss slacks admit probability {:.4} < 1 - epsilon = {:.4} even with \
             unbounded rate slack",
            pairs.len() as f64 / sampler.len() as f64,
            1.0 - epsilon
        )));
    }

    let sigma = summary
        .v_at(0, 0)
        .max(0.0)
        .sqrt()
        .max(summary.v_at(1, 1).max(0.0).sqrt())
        .max(1e-9);
    let points = cfg.s_points.max(1);
    let splits: Vec<f64> = if points == 1 {
        vec![0.0]
    } else {
        (0..points)
            .map(|i| -4.0 * sigma + 8.0 * sigma * i as f64 / (points - 1) as f64)
            .collect()
    };
    let feasible = |t: f64| -> bool {
        splits.iter().any(|&s| {
            let count = pairs
                .iter()
                .filter(|p| p[0] <= t + s && p[1] <= t - s)
                .count();
            count as f64 >= need
        })
    };

    let mut hi = 8.0 * sigma;
    let mut guard = 0u32;
    while !feasible(hi) {
        hi = hi.abs() * 2.0 + sigma;
        guard += 1;
        if guard > 60 {
            return Err(Error::SolverNoConverge(format!(
                "no feasible rate slack found up to {hi:.3e}"
            )));
        }
    }
    let mut lo = -8.0 * sigma;
    while feasible(lo) {
        lo = lo * 2.0 - sigma;
        guard += 1;
        if guard > 160 {
            return Err(Error::SolverNoConverge(format!(
                "rate slack unbounded below at {lo:.3e}"
            )));
        }
    }

    // Rate changes by 2 * dt / sqrt(n), so the bracket target in t units is
    // tol_bits * sqrt(n) / 2.
    let tol_t = (cfg.tol_bits * root_n / 2.0).max(1e-12);
    while hi - lo > tol_t {
        let mid = 0.5 * (hi + lo);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let rate = summary.j[0] + summary.j[1] + 2.0 * hi / root_n + 2.0 * penalty;
    Ok(rate.max(0.0))
}
