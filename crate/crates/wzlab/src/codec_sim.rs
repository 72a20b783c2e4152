//! Desk-scale simulator for the random quantize-and-bin codec.
//!
//! A trial draws a fresh codebook of i.i.d. length-n sequences from the
//! channel's output marginal, splits it into bins by a random balanced
//! partition, and runs one source block through the encoder and decoder. The
//! encoder keeps codewords whose block information density against the
//! source stays under a ceiling (so the selection never distorts the
//! codeword's marginal typicality) and transmits the bin of the closest
//! survivor. The decoder accepts the unique bin member whose information
//! density against the side sequence clears a floor. Failures are recorded
//! outcomes, never exceptions; the companion bound estimates the same excess
//! events under the generative joint law plus the two binning residuals.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::info_density::DensityTable;
use crate::moments::RegressionMode;
use crate::regressors::{
    bandwidth, kernel_constants, kernel_fit, mc_generalization_error, ols_fit,
    ols_generalization_error, Kernel, McEstimate,
};
use crate::rng::{stream, uniform_index};
use crate::source_model::{mmse_reconstruct, sample_batch, SampleBatch, SourceModel, TestChannel};

/// Hard cap on block length; the codebook is exponential in n * r1.
pub const MAX_BLOCK: usize = 14;
/// Hard cap on codebook size times block length.
pub const MAX_TOTAL_SYMBOLS: usize = 1 << 24;

/// Codebook and binning geometry plus the two decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CodecConfig {
    pub n: usize,
    /// Codebook rate in bits per symbol.
    pub r1: f64,
    /// Binning (transmitted) rate in bits per symbol.
    pub r: f64,
    /// Codeword count, ceil(2^(n r1)).
    pub n_codewords: usize,
    /// Bin count, ceil(2^(n r)).
    pub n_bins: usize,
    /// Decoder floor on the block information density against the side
    /// sequence.
    pub gamma_p: f64,
    /// Encoder ceiling on the block information density against the source.
    pub gamma_c: f64,
}

/// Threshold pair that makes the two residual terms of the excess bound
/// collapse to 1/n and 1/(2 sqrt(n)).
pub fn default_thresholds(n: usize, n_codewords: usize, n_bins: usize) -> (f64, f64) {
    let nf = n as f64;
    let gamma_p = (n_codewords as f64 / n_bins as f64).log2() + nf.log2();
    let gamma_c = (n_codewords as f64).log2() - nf.log2();
    (gamma_p, gamma_c)
}

impl CodecConfig {
    pub fn new(n: usize, r1: f64, r: f64) -> Result<Self> {
        let (n_codewords, n_bins) = Self::sizes(n, r1, r)?;
        let (gamma_p, gamma_c) = default_thresholds(n, n_codewords, n_bins);
        Ok(CodecConfig {
            n,
            r1,
            r,
            n_codewords,
            n_bins,
            gamma_p,
            gamma_c,
        })
    }

    pub fn with_thresholds(n: usize, r1: f64, r: f64, gamma_p: f64, gamma_c: f64) -> Result<Self> {
        let (n_codewords, n_bins) = Self::sizes(n, r1, r)?;
        Ok(CodecConfig {
            n,
            r1,
            r,
            n_codewords,
            n_bins,
            gamma_p,
            gamma_c,
        })
    }

    fn sizes(n: usize, r1: f64, r: f64) -> Result<(usize, usize)> {
        if n == 0 || n > MAX_BLOCK {
            return Err(Error::Config(format!(
                "codec block length {n} outside 1..={MAX_BLOCK}"
            )));
        }
        if !(r > 0.0) || !(r1 > r) {
            return Err(Error::Config(format!(
                "codec rates need r1 > r > 0, got r1 = {r1}, r = {r}"
            )));
        }
        let n_codewords = (n as f64 * r1).exp2().ceil() as usize;
        let n_bins = (n as f64 * r).exp2().ceil() as usize;
        if n_codewords.saturating_mul(n) > MAX_TOTAL_SYMBOLS {
            return Err(Error::Config(format!(
                "codebook of {n_codewords} codewords x {n} symbols exceeds the \
                 {MAX_TOTAL_SYMBOLS}-symbol cap"
            )));
        }
        Ok((n_codewords, n_bins))
    }

    /// Additive slack terms of the excess bound: the bin-collision residual
    /// and the codeword-selection residual.
    pub fn residual_terms(&self) -> (f64, f64) {
        let bin = self.n_codewords as f64 / (self.gamma_p.exp2() * self.n_bins as f64);
        let codebook = 0.5 * (self.gamma_c.exp2() / self.n_codewords as f64).sqrt();
        (bin, codebook)
    }
}

/// Why a trial failed, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cause {
    /// Encoder found no codeword under its density ceiling.
    NoTypicalCodeword,
    /// The transmitted codeword failed the decoder's floor.
    NoCandidate,
    /// Another bin member also cleared the floor.
    Ambiguous,
    None,
}

impl std::fmt::Display for Cause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Cause::NoTypicalCodeword => "no-typical-codeword",
            Cause::NoCandidate => "no-candidate",
            Cause::Ambiguous => "ambiguous",
            Cause::None => "none",
        };
        write!(f, "{s}")
    }
}

/// Result of one encode/transmit/decode round. Losses are NaN unless the
/// block was decoded; a failed trial counts as excess for every target.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TrialOutcome {
    pub trial_id: u64,
    pub encode_ok: bool,
    pub debin_ok: bool,
    pub cause: Cause,
    pub distortion: f64,
    pub gen_error: f64,
}

impl TrialOutcome {
    /// Joint excess event at targets (d, g).
    pub fn excess(&self, d: f64, g: f64) -> bool {
        !self.debin_ok || self.distortion >= d || self.gen_error >= g
    }

    fn failed(trial_id: u64, cause: Cause) -> Self {
        TrialOutcome {
            trial_id,
            encode_ok: cause != Cause::NoTypicalCodeword,
            debin_ok: false,
            cause,
            distortion: f64::NAN,
            gen_error: f64::NAN,
        }
    }
}

/// How to fit the per-block regressor whose generalization error the trial
/// reports.
#[derive(Debug, Clone, Copy)]
pub struct GenSpec {
    pub mode: RegressionMode,
    pub kernel: Kernel,
    /// Fresh test pairs for the Monte-Carlo loss in kernel mode.
    pub n_test: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            mode: RegressionMode::Parametric,
            kernel: Kernel::Gaussian,
            n_test: 500,
        }
    }
}

/// Block information density against the source sequence. Underflow in
/// either density maps to the signed infinity that keeps set membership
/// well-defined: a vanished marginal pushes the sum up, a vanished
/// conditional pushes it down.
fn block_info_ux(table: &DensityTable, u: &[f64], x: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (ui, xi) in u.iter().zip(x) {
        match table.info_ux(*ui, *xi) {
            Ok(v) => sum += v,
            Err(Error::DensityUnderflow { sign }) => {
                return Ok(if sign > 0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(sum)
}

/// Block information density against the side sequence.
fn block_info_uy(table: &DensityTable, u: &[f64], y: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (ui, yi) in u.iter().zip(y) {
        match table.info_uy(*ui, *yi) {
            Ok(v) => sum += v,
            Err(Error::DensityUnderflow { sign }) => {
                return Ok(if sign > 0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(sum)
}

/// Deterministic encoder: among codewords whose block density stays at or
/// under `gamma_c`, return the one closest to the scaled source in square
/// distance, lowest index on ties.
pub fn encode_index(
    table: &DensityTable,
    chan: &TestChannel,
    codebook: &[f64],
    n: usize,
    x: &[f64],
    gamma_c: f64,
) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for (j, u) in codebook.chunks_exact(n).enumerate() {
        if !(block_info_ux(table, u, x)? <= gamma_c) {
            continue;
        }
        let dist: f64 = u
            .iter()
            .zip(x)
            .map(|(ui, xi)| {
                let e = ui - chan.alpha * xi;
                e * e
            })
            .sum();
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((j, dist));
        }
    }
    Ok(best.map(|(j, _)| j))
}

/// Decoder candidate set: members of `bin` whose block density against the
/// side sequence clears `gamma_p`.
pub fn decode_candidates(
    table: &DensityTable,
    codebook: &[f64],
    n: usize,
    bins: &[u32],
    bin: u32,
    y: &[f64],
    gamma_p: f64,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (j, u) in codebook.chunks_exact(n).enumerate() {
        if bins[j] == bin && block_info_uy(table, u, y)? >= gamma_p {
            out.push(j);
        }
    }
    Ok(out)
}

/// Random balanced partition of the codebook into bins: shuffle, then deal
/// round-robin. Bin sizes differ by at most one, so one codeword per bin is
/// guaranteed whenever the counts match.
fn random_balanced_bins(
    n_codewords: usize,
    n_bins: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<u32> {
    let mut order: Vec<u32> = (0..n_codewords as u32).collect();
    for k in (1..n_codewords).rev() {
        let j = uniform_index(rng, (k + 1) as u64) as usize;
        order.swap(k, j);
    }
    let mut bins = vec![0u32; n_codewords];
    for (pos, &cw) in order.iter().enumerate() {
        bins[cw as usize] = (pos % n_bins) as u32;
    }
    bins
}

#[allow(clippy::too_many_arguments)]
fn block_gen_error(
    model: &SourceModel,
    chan: &TestChannel,
    gen: &GenSpec,
    h: f64,
    block: &SampleBatch,
    decoded_u: &[f64],
    seed: u64,
    domain: &str,
    id: u64,
) -> Result<f64> {
    let fit_batch = SampleBatch {
        y: block.y.clone(),
        x: block.x.clone(),
        u: decoded_u.to_vec(),
    };
    match gen.mode {
        RegressionMode::Parametric => {
            let fit = ols_fit(model, &fit_batch, chan)?;
            Ok(ols_generalization_error(model, &fit))
        }
        RegressionMode::Kernel => {
            let fit = kernel_fit(&fit_batch, chan, h, gen.kernel)?;
            let mut test_rng = stream(seed, domain, &[id]);
            Ok(mc_generalization_error(
                |y| fit.predict(y),
                model,
                gen.n_test,
                &mut test_rng,
            ))
        }
    }
}

fn kernel_bandwidth_for(
    model: &SourceModel,
    chan: &TestChannel,
    gen: &GenSpec,
    n: usize,
) -> Result<f64> {
    match gen.mode {
        RegressionMode::Parametric => Ok(0.0),
        RegressionMode::Kernel => {
            let consts = kernel_constants(model, gen.kernel)?;
            Ok(bandwidth(n, &consts, model, chan))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn trial_inner(
    model: &SourceModel,
    chan: &TestChannel,
    table: &DensityTable,
    cfg: &CodecConfig,
    gen: &GenSpec,
    h: f64,
    seed: u64,
    trial_id: u64,
) -> Result<TrialOutcome> {
    let mut cb_rng = stream(seed, "codec-codebook", &[trial_id]);
    let codebook = sample_batch(model, chan, cfg.n_codewords * cfg.n, &mut cb_rng).u;
    let mut bin_rng = stream(seed, "codec-bins", &[trial_id]);
    let bins = random_balanced_bins(cfg.n_codewords, cfg.n_bins, &mut bin_rng);
    let mut src_rng = stream(seed, "codec-source", &[trial_id]);
    let block = sample_batch(model, chan, cfg.n, &mut src_rng);

    let Some(chosen) = encode_index(table, chan, &codebook, cfg.n, &block.x, cfg.gamma_c)? else {
        return Ok(TrialOutcome::failed(trial_id, Cause::NoTypicalCodeword));
    };
    let candidates = decode_candidates(
        table,
        &codebook,
        cfg.n,
        &bins,
        bins[chosen],
        &block.y,
        cfg.gamma_p,
    )?;
    if !candidates.contains(&chosen) {
        return Ok(TrialOutcome::failed(trial_id, Cause::NoCandidate));
    }
    if candidates.len() > 1 {
        return Ok(TrialOutcome::failed(trial_id, Cause::Ambiguous));
    }

    let decoded = &codebook[chosen * cfg.n..(chosen + 1) * cfg.n];
    let mut dist = 0.0;
    for ((&u, &x), &y) in decoded.iter().zip(&block.x).zip(&block.y) {
        let e = x - mmse_reconstruct(u, y, model, chan);
        dist += e * e;
    }
    dist /= cfg.n as f64;
    let gen_error = block_gen_error(
        model,
        chan,
        gen,
        h,
        &block,
        decoded,
        seed,
        "codec-gen",
        trial_id,
    )?;
    Ok(TrialOutcome {
        trial_id,
        encode_ok: true,
        debin_ok: true,
        cause: Cause::None,
        distortion: dist,
        gen_error,
    })
}

/// Run one codec trial. Fully deterministic in (seed, trial_id).
pub fn run_trial(
    model: &SourceModel,
    chan: &TestChannel,
    table: &DensityTable,
    cfg: &CodecConfig,
    gen: &GenSpec,
    seed: u64,
    trial_id: u64,
) -> Result<TrialOutcome> {
    let h = kernel_bandwidth_for(model, chan, gen, cfg.n)?;
    trial_inner(model, chan, table, cfg, gen, h, seed, trial_id)
}

/// Run a batch of trials in parallel, ordered by trial id, so results are
/// identical at any thread count.
pub fn run_trials(
    model: &SourceModel,
    chan: &TestChannel,
    table: &DensityTable,
    cfg: &CodecConfig,
    gen: &GenSpec,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<TrialOutcome>> {
    let h = kernel_bandwidth_for(model, chan, gen, cfg.n)?;
    (0..n_trials as u64)
        .into_par_iter()
        .map(|t| trial_inner(model, chan, table, cfg, gen, h, seed, t))
        .collect()
}

/// Fraction of trials in joint excess at targets (d, g), with its binomial
/// standard error.
pub fn excess_fraction(outcomes: &[TrialOutcome], d: f64, g: f64) -> McEstimate {
    let n = outcomes.len().max(1) as f64;
    let hits = outcomes.iter().filter(|o| o.excess(d, g)).count() as f64;
    let p = hits / n;
    McEstimate {
        mean: p,
        se: (p * (1.0 - p) / n).sqrt(),
    }
}

/// Achievability bound on the joint excess probability.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ExcessBound {
    /// Full bound, clamped to [0, 1].
    pub total: f64,
    /// Monte-Carlo estimate of the generative-law excess term.
    pub joint_term: McEstimate,
    pub residual_bin: f64,
    pub residual_codebook: f64,
}

/// Estimate the excess-probability bound: the probability, under the
/// generative joint law, that a block violates the decoder floor, the
/// encoder ceiling, the distortion target, or the generalization target,
/// plus the two structural residuals.
#[allow(clippy::too_many_arguments)]
pub fn theorem3_bound(
    model: &SourceModel,
    chan: &TestChannel,
    table: &DensityTable,
    cfg: &CodecConfig,
    gen: &GenSpec,
    d_target: f64,
    g_target: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<ExcessBound> {
    if mc_samples == 0 {
        return Err(Error::Domain(
            "bound estimation needs mc_samples > 0".into(),
        ));
    }
    let h = kernel_bandwidth_for(model, chan, gen, cfg.n)?;
    let hits: Vec<bool> = (0..mc_samples as u64)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let mut rng = stream(seed, "codec-bound", &[k]);
            let block = sample_batch(model, chan, cfg.n, &mut rng);
            if block_info_uy(table, &block.u, &block.y)? < cfg.gamma_p {
                return Ok(true);
            }
            if block_info_ux(table, &block.u, &block.x)? > cfg.gamma_c {
                return Ok(true);
            }
            let mut dist = 0.0;
            for i in 0..cfg.n {
                let e = block.x[i] - mmse_reconstruct(block.u[i], block.y[i], model, chan);
                dist += e * e;
            }
            if dist / cfg.n as f64 >= d_target {
                return Ok(true);
            }
            let gen_error = block_gen_error(
                model,
                chan,
                gen,
                h,
                &block,
                &block.u,
                seed,
                "codec-bound-gen",
                k,
            )?;
            Ok(gen_error >= g_target)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = hits.iter().filter(|&&b| b).count() as f64 / mc_samples as f64;
    let joint_term = McEstimate {
        mean: p,
        se: (p * (1.0 - p) / mc_samples as f64).sqrt(),
    };
    let (residual_bin, residual_codebook) = cfg.residual_terms();
    let total = (p + residual_bin + residual_codebook).clamp(0.0, 1.0);
    Ok(ExcessBound {
        total,
        joint_term,
        residual_bin,
        residual_codebook,
    })
}
