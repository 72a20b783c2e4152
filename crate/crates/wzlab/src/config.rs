//! Experiment configuration: one JSON document, one section per module.
//!
//! Every section is optional and falls back to the reference setup (the
//! quadratic source with unit noise, half-noise distortion, and the desk
//! grids). Unknown keys are rejected everywhere, so typos fail loudly at
//! parse time, and validation errors name the offending key. A config's
//! SHA-256 hash over its canonical serialization is stamped into every
//! output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec_sim::{CodecConfig, GenSpec};
use crate::error::{Error, Result};
use crate::info_density::TableSpec;
use crate::moments::{MomentPlan, RegressionMode};
use crate::region::SolverConfig;
use crate::regressors::Kernel;
use crate::source_model::{channel_params, SourceModel, TestChannel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: SourceModel,
    pub channel: ChannelSection,
    pub regression: RegressionSection,
    pub moments: MomentsSection,
    pub region: RegionSection,
    pub codec: CodecSection,
    pub density: TableSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            model: SourceModel::default(),
            channel: ChannelSection::default(),
            regression: RegressionSection::default(),
            moments: MomentsSection::default(),
            region: RegionSection::default(),
            codec: CodecSection::default(),
            density: TableSpec::default(),
        }
    }
}

/// Channel selection: either a distortion target (the usual path) or an
/// explicit gain/noise pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub d: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma_phi2: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            d: Some(0.5),
            alpha: None,
            sigma_phi2: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub mode: RegressionMode,
    pub kernel: Kernel,
    /// Fresh test pairs per Monte-Carlo generalization estimate.
    pub n_test: usize,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            mode: RegressionMode::Parametric,
            kernel: Kernel::Gaussian,
            n_test: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsSection {
    /// Training size per trial.
    pub n: usize,
    pub n_trials: usize,
}

impl Default for MomentsSection {
    fn default() -> Self {
        MomentsSection {
            n: 200,
            n_trials: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub n_grid: Vec<usize>,
    pub epsilon_grid: Vec<f64>,
    pub d_grid: Vec<f64>,
    pub g_grid: Vec<f64>,
    /// Fixed rates for the minimal-generalization sweep.
    pub rates: Vec<f64>,
    pub tol_bits: f64,
    pub mc_samples: usize,
    pub s_points: usize,
}

impl Default for RegionSection {
    fn default() -> Self {
        RegionSection {
            n_grid: vec![200, 500, 1000, 5000],
            epsilon_grid: vec![0.05, 0.1, 0.2],
            d_grid: vec![0.6, 0.7, 0.8],
            g_grid: vec![1.1, 1.25, 1.5],
            rates: vec![0.3, 1.0],
            tol_bits: 1e-3,
            mc_samples: 200_000,
            s_points: 33,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub n: usize,
    pub r1: f64,
    pub r: f64,
    pub n_trials: usize,
    /// Monte-Carlo samples for the excess-probability bound.
    pub bound_samples: usize,
    pub d_target: f64,
    pub g_target: f64,
    /// Optional threshold overrides; both or neither.
    pub gamma_p: Option<f64>,
    pub gamma_c: Option<f64>,
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection {
            n: 10,
            r1: 1.2,
            r: 0.8,
            n_trials: 200,
            bound_samples: 2000,
            d_target: 0.5,
            g_target: 2.0,
            gamma_p: None,
            gamma_c: None,
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate a JSON config file.
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, msg: String| Err(Error::Config(format!("{k}: {msg}")));
        if self.model.beta.is_empty() || !self.model.beta.iter().all(|b| b.is_finite()) {
            return key(
                "model.beta",
                "need a nonempty list of finite coefficients".into(),
            );
        }
        if !(self.model.sigma2.is_finite() && self.model.sigma2 > 0.0) {
            return key(
                "model.sigma2",
                format!("must be positive, got {}", self.model.sigma2),
            );
        }
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model.y_law: {e}")))?;
        self.channel()?;
        if self.regression.n_test == 0 {
            return key("regression.n_test", "must be at least 1".into());
        }
        if self.moments.n == 0 {
            return key("moments.n", "must be at least 1".into());
        }
        if self.moments.n_trials < 2 {
            return key("moments.n_trials", "need at least 2 trials".into());
        }
        let r = &self.region;
        if r.n_grid.is_empty() || r.n_grid.iter().any(|&n| n < 2) {
            return key("region.n_grid", "need block lengths of at least 2".into());
        }
        if r.epsilon_grid.is_empty() || r.epsilon_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return key("region.epsilon_grid", "entries must lie in (0, 1)".into());
        }
        if r.d_grid.is_empty() || r.d_grid.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return key(
                "region.d_grid",
                "entries must be positive and finite".into(),
            );
        }
        if r.g_grid.is_empty() || r.g_grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return key(
                "region.g_grid",
                "entries must be positive and finite".into(),
            );
        }
        if r.rates.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return key("region.rates", "entries must be positive and finite".into());
        }
        if !(r.tol_bits > 0.0) {
            return key(
                "region.tol_bits",
                format!("must be positive, got {}", r.tol_bits),
            );
        }
        if r.mc_samples < 2 {
            return key("region.mc_samples", "need at least 2 samples".into());
        }
        if r.s_points == 0 {
            return key("region.s_points", "need at least 1 grid point".into());
        }
        if self.codec.n_trials == 0 {
            return key("codec.n_trials", "need at least 1 trial".into());
        }
        if self.codec.bound_samples == 0 {
            return key("codec.bound_samples", "need at least 1 sample".into());
        }
        self.codec_config()?;
        if self.density.grid_points < 16 {
            return key("density.grid_points", "need at least 16 grid points".into());
        }
        if !(self.density.quad_tol > 0.0) {
            return key("density.quad_tol", "must be positive".into());
        }
        if !(self.density.pad_sd >= 6.0) {
            return key(
                "density.pad_sd",
                "need at least 6 standard deviations".into(),
            );
        }
        Ok(())
    }

    /// Resolve the channel section against the model's noise level.
    pub fn channel(&self) -> Result<TestChannel> {
        let c = self.channel;
        match (c.d, c.alpha, c.sigma_phi2) {
            (Some(d), None, None) => channel_params(self.model.sigma2, d)
                .map_err(|e| Error::Config(format!("channel.d: {e}"))),
            (None, Some(alpha), Some(sigma_phi2)) => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::Config(format!(
                        "channel.alpha: must lie in (0, 1), got {alpha}"
                    )));
                }
                if !(sigma_phi2 > 0.0 && sigma_phi2.is_finite()) {
                    return Err(Error::Config(format!(
                        "channel.sigma_phi2: must be positive, got {sigma_phi2}"
                    )));
                }
                let d = (alpha - 1.0).powi(2) * self.model.sigma2 + alpha * alpha * sigma_phi2;
                Ok(TestChannel {
                    alpha,
                    sigma_phi2,
                    d,
                })
            }
            _ => Err(Error::Config(
                "channel: set either d alone or both alpha and sigma_phi2".into(),
            )),
        }
    }

    /// Moment-estimation plan under the given master seed.
    pub fn moment_plan(&self, seed: u64) -> MomentPlan {
        MomentPlan {
            n: self.moments.n,
            mode: self.regression.mode,
            kernel: self.regression.kernel,
            n_trials: self.moments.n_trials,
            n_test: self.regression.n_test,
            seed,
        }
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            mc_samples: self.region.mc_samples,
            tol_bits: self.region.tol_bits,
            s_points: self.region.s_points,
            seed,
        }
    }

    pub fn codec_config(&self) -> Result<CodecConfig> {
        let c = self.codec;
        let built = match (c.gamma_p, c.gamma_c) {
            (None, None) => CodecConfig::new(c.n, c.r1, c.r),
            (Some(gp), Some(gc)) => CodecConfig::with_thresholds(c.n, c.r1, c.r, gp, gc),
            _ => Err(Error::Config(
                "codec: override gamma_p and gamma_c together or not at all".into(),
            )),
        };
        built.map_err(|e| match e {
            Error::Config(m) if !m.starts_with("codec") => Error::Config(format!("codec: {m}")),
            other => other,
        })
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            mode: self.regression.mode,
            kernel: self.regression.kernel,
            n_test: self.regression.n_test,
        }
    }

    /// SHA-256 of the canonical serialization, hex-encoded. Two configs hash
    /// equal exactly when every effective setting matches.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}
