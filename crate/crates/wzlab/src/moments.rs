//! Sampling of the information-density / distortion / generalization vector
//! and estimation of its first two moments.
//!
//! Each trial draws a fresh length-n batch, fits the configured regressor
//! on (U, Y), and records
//!
//!   [ -i(u1; y1),  i(u1; x1),  (x1 - xhat1)^2,  G(fit) ]
//!
//! where the per-symbol entries use the first sample of the block and G is
//! the trial's conditional generalization error (closed form for the
//! parametric fit, fresh-draw Monte Carlo for the kernel fit). The mean J
//! and covariance V of this vector feed the finite-block-length rate
//! machinery.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info_density::DensityTable;
use crate::regressors::{
    bandwidth, kernel_constants, kernel_fit, mc_generalization_error, ols_fit,
    ols_generalization_error, Kernel,
};
use crate::rng::stream;
use crate::source_model::{mmse_reconstruct, sample_batch, SourceModel, TestChannel};
use crate::util::Kahan;

/// One trial's draw of the 4-component vector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InfoVector {
    /// -i(U;Y) in bits; negated so the rate constraint reads B1 + B2.
    pub neg_iota_uy: f64,
    /// i(U;X) in bits.
    pub iota_ux: f64,
    /// Squared reconstruction error of the first sample.
    pub dist: f64,
    /// Conditional generalization error of the trial's fit.
    pub gen: f64,
}

impl InfoVector {
    fn as_array(&self) -> [f64; 4] {
        [self.neg_iota_uy, self.iota_ux, self.dist, self.gen]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionMode {
    Parametric,
    Kernel,
}

/// Everything a moment run needs besides the model and channel.
#[derive(Clone, Copy, Debug)]
pub struct MomentPlan {
    pub n: usize,
    pub mode: RegressionMode,
    pub kernel: Kernel,
    pub n_trials: usize,
    /// Test draws per trial for the kernel-mode generalization error.
    pub n_test: usize,
    pub seed: u64,
}

/// Mean, covariance, and provenance of a moment run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentSummary {
    pub j: [f64; 4],
    /// Row-major 4x4 sample covariance (divisor n_trials - 1).
    pub v: [f64; 16],
    pub n: usize,
    pub regression_mode: RegressionMode,
    pub n_trials: usize,
    pub seed: u64,
    pub sigma2: f64,
    pub channel_d: f64,
    /// Trials redrawn because an information density underflowed.
    pub underflow_resamples: u64,
}

impl MomentSummary {
    pub fn v_at(&self, r: usize, c: usize) -> f64 {
        self.v[4 * r + c]
    }

    pub fn compute(
        model: &SourceModel,
        chan: &TestChannel,
        table: &DensityTable,
        plan: &MomentPlan,
    ) -> Result<MomentSummary> {
        let (vectors, resamples) = sample_info_vectors(model, chan, table, plan)?;
        let (j, v) = estimate_moments(&vectors)?;
        Ok(MomentSummary {
            j,
            v,
            n: plan.n,
            regression_mode: plan.mode,
            n_trials: plan.n_trials,
            seed: plan.seed,
            sigma2: model.sigma2,
            channel_d: chan.d,
            underflow_resamples: resamples,
        })
    }
}

/// Draws `plan.n_trials` vectors. Trials run in parallel; each owns a
/// seed-derived stream, so the output is identical at any thread count.
/// Returns the vectors plus the number of underflow-forced redraws.
pub fn sample_info_vectors(
    model: &SourceModel,
    chan: &TestChannel,
    table: &DensityTable,
    plan: &MomentPlan,
) -> Result<(Vec<InfoVector>, u64)> {
    if plan.n_trials < 2 {
        return Err(Error::InsufficientSamples {
            got: plan.n_trials,
            need: 2,
        });
    }
    let min_n = match plan.mode {
        RegressionMode::Parametric => model.dim(),
        RegressionMode::Kernel => 1,
    };
    if plan.n < min_n {
        return Err(Error::Config(format!(
            "block length {} is below the fit minimum {min_n}",
            plan.n
        )));
    }
    let h = match plan.mode {
        RegressionMode::Kernel => {
            let consts = kernel_constants(model, plan.kernel)?;
            bandwidth(plan.n, &consts, model, chan)
        }
        RegressionMode::Parametric => 0.0,
    };

    let drawn: Vec<(InfoVector, u64)> = (0..plan.n_trials)
        .into_par_iter()
        .map(|t| draw_trial(model, chan, table, plan, h, t as u64))
        .collect::<Result<_>>()?;
    let resamples = drawn.iter().map(|d| d.1).sum();
    Ok((drawn.into_iter().map(|d| d.0).collect(), resamples))
}

/// Attempt cap for underflow redraws of one trial. The cached density range
/// spans 8 conditional standard deviations, so consuming even two attempts
/// is already a sign the table does not match the sampling law.
const MAX_ATTEMPTS: u64 = 64;

fn draw_trial(
    model: &SourceModel,
    chan: &TestChannel,
    table: &DensityTable,
    plan: &MomentPlan,
    h: f64,
    t: u64,
) -> Result<(InfoVector, u64)> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream(plan.seed, "moments-trial", &[t, attempt]);
        let batch = sample_batch(model, chan, plan.n, &mut rng);
        let (u1, x1, y1) = (batch.u[0], batch.x[0], batch.y[0]);
        let iota_uy = match table.info_uy(u1, y1) {
            Ok(v) => v,
            Err(Error::DensityUnderflow { .. }) => continue,
            Err(e) => return Err(e),
        };
        let iota_ux = match table.info_ux(u1, x1) {
            Ok(v) => v,
            Err(Error::DensityUnderflow { .. }) => continue,
            Err(e) => return Err(e),
        };
        let xhat1 = mmse_reconstruct(u1, y1, model, chan);
        let dist = (x1 - xhat1) * (x1 - xhat1);
        let gen = match plan.mode {
            RegressionMode::Parametric => {
                let fit = ols_fit(model, &batch, chan)?;
                ols_generalization_error(model, &fit)
            }
            RegressionMode::Kernel => {
                let fit = kernel_fit(&batch, chan, h, plan.kernel)?;
                let mut test_rng = stream(plan.seed, "moments-test", &[t, attempt]);
                mc_generalization_error(|y| fit.predict(y), model, plan.n_test, &mut test_rng)
            }
        };
        return Ok((
            InfoVector {
                neg_iota_uy: -iota_uy,
                iota_ux,
                dist,
                gen,
            },
            attempt,
        ));
    }
    Err(Error::DensityUnderflow { sign: 1 })
}

/// Sample mean and covariance (divisor n_trials - 1), with a PSD check on
/// the raw estimate. No projection is applied; downstream factorizations
/// tolerate eigenvalues down to -1e-9.
pub fn estimate_moments(vectors: &[InfoVector]) -> Result<([f64; 4], [f64; 16])> {
    if vectors.len() < 2 {
        return Err(Error::InsufficientSamples {
            got: vectors.len(),
            need: 2,
        });
    }
    let t = vectors.len() as f64;
    let mut j = [0.0; 4];
    for (k, jk) in j.iter_mut().enumerate() {
        let mut acc = Kahan::new();
        for vec in vectors {
            acc.add(vec.as_array()[k]);
        }
        *jk = acc.value() / t;
    }
    let mut v = [0.0; 16];
    for r in 0..4 {
        for c in r..4 {
            let mut acc = Kahan::new();
            for vec in vectors {
                let a = vec.as_array();
                acc.add((a[r] - j[r]) * (a[c] - j[c]));
            }
            let cov = acc.value() / (t - 1.0);
            v[4 * r + c] = cov;
            v[4 * c + r] = cov;
        }
    }
    let m = nalgebra::DMatrix::from_row_slice(4, 4, &v);
    let min_eig = m.symmetric_eigen().eigenvalues.min();
    if min_eig < -1e-9 {
        return Err(Error::NotPsd { min_eig });
    }
    Ok((j, v))
}
