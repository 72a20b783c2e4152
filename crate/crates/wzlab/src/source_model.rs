//! Source model and forward test channel.
//!
//! The source is a regression pair: X = f(Y) + N with N zero-mean Gaussian
//! of variance sigma2 and f a polynomial in Y. The encoder observes X, the
//! decoder observes Y. The forward channel description U = alpha (X + Phi)
//! with Phi Gaussian realizes a target mean-square distortion D when
//!
//!   alpha = (sigma2 - D) / sigma2,   var(Phi) = D sigma2 / (sigma2 - D),
//!
//! which makes the reconstruction error (alpha - 1) N + alpha Phi have
//! second moment exactly D.

use crate::error::{Error, Result};
use crate::rng;
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Label (side-information) distribution. Only the uniform law is shipped;
/// the enum is the seam for alternatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum YLaw {
    Uniform { lo: f64, hi: f64 },
}

impl YLaw {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            YLaw::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        match *self {
            YLaw::Uniform { lo, hi } => {
                if y >= lo && y <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative of the density on the open support.
    pub fn density_derivative(&self, _y: f64) -> f64 {
        match *self {
            YLaw::Uniform { .. } => 0.0,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            YLaw::Uniform { lo, hi } => rng::uniform(rng, lo, hi),
        }
    }

    /// E[Y^k] in closed form.
    pub fn moment(&self, k: usize) -> f64 {
        match *self {
            YLaw::Uniform { lo, hi } => {
                // (hi^(k+1) - lo^(k+1)) / ((k+1)(hi - lo))
                let p = k as i32 + 1;
                (hi.powi(p) - lo.powi(p)) / (p as f64 * (hi - lo))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            YLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Domain(format!("bad uniform support [{lo}, {hi}]")));
                }
                Ok(())
            }
        }
    }
}

/// Regression source: X = f(Y) + N, f(y) = sum_i beta[i] y^i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub y_law: YLaw,
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            beta: vec![2.0, 1.0, 1.0],
            sigma2: 1.0,
            y_law: YLaw::Uniform { lo: -1.0, hi: 1.0 },
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() {
            return Err(Error::Domain("empty coefficient vector".into()));
        }
        if !self.beta.iter().all(|b| b.is_finite()) {
            return Err(Error::Domain("non-finite regression coefficient".into()));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Domain(format!(
                "noise variance must be positive, got {}",
                self.sigma2
            )));
        }
        self.y_law.validate()
    }

    /// Number of basis functions (monomials 1, y, ..., y^(k-1)).
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Regression function f(y).
    pub fn f(&self, y: f64) -> f64 {
        // Horner evaluation.
        self.beta.iter().rev().fold(0.0, |acc, &b| acc * y + b)
    }

    pub fn f_prime(&self, y: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &b) in self.beta.iter().enumerate().skip(1).rev() {
            acc = acc * y + i as f64 * b;
        }
        acc
    }

    pub fn f_second(&self, y: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &b) in self.beta.iter().enumerate().skip(2).rev() {
            acc = acc * y + (i * (i - 1)) as f64 * b;
        }
        acc
    }

    /// Monomial feature vector (1, y, ..., y^(k-1)).
    pub fn basis(&self, y: f64) -> Vec<f64> {
        let mut h = vec![0.0; self.dim()];
        self.basis_into(y, &mut h);
        h
    }

    /// Allocation-free variant for fitting loops. `out` must have length dim.
    pub fn basis_into(&self, y: f64, out: &mut [f64]) {
        let mut p = 1.0;
        for slot in out.iter_mut() {
            *slot = p;
            p *= y;
        }
    }

    /// Range of f over the label support, located by a dense scan with a
    /// local parabolic refinement. This is the support of W = f(Y).
    pub fn w_support(&self) -> (f64, f64) {
        let (lo, hi) = self.y_law.support();
        let grid = 4096;
        let step = (hi - lo) / grid as f64;
        let mut wmin = f64::INFINITY;
        let mut wmax = f64::NEG_INFINITY;
        let mut refine = |y: f64| {
            let w = self.f(y.clamp(lo, hi));
            if w < wmin {
                wmin = w;
            }
            if w > wmax {
                wmax = w;
            }
        };
        for i in 0..=grid {
            let y = lo + step * i as f64;
            refine(y);
            // Newton step on f' to catch interior extrema between nodes.
            let fp = self.f_prime(y);
            let fs = self.f_second(y);
            if fs.abs() > 1e-12 {
                let y_star = y - fp / fs;
                if y_star > y - step && y_star < y + step {
                    refine(y_star);
                }
            }
        }
        (wmin, wmax)
    }

    /// Second-moment matrix of the basis under the label law,
    /// entries E[y^(i+j)].
    pub fn sigma_tilde(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| self.y_law.moment(i + j))
    }
}

/// Forward channel U = alpha (X + Phi).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestChannel {
    pub alpha: f64,
    pub sigma_phi2: f64,
    /// Mean-square distortion realized by the channel.
    pub d: f64,
}

impl TestChannel {
    /// Total conditional variance of U/alpha given Y: sigma2 + var(Phi).
    pub fn s2(&self, sigma2: f64) -> f64 {
        sigma2 + self.sigma_phi2
    }
}

/// Channel parameters hitting distortion `d` for noise variance `sigma2`.
pub fn channel_params(sigma2: f64, d: f64) -> Result<TestChannel> {
    if !(d.is_finite() && d > 0.0 && d < sigma2) {
        return Err(Error::Domain(format!(
            "distortion must lie in (0, {sigma2}), got {d}"
        )));
    }
    let alpha = (sigma2 - d) / sigma2;
    let sigma_phi2 = d * sigma2 / (sigma2 - d);
    Ok(TestChannel {
        alpha,
        sigma_phi2,
        d,
    })
}

/// One batch of source triples.
#[derive(Clone, Debug, Default)]
pub struct SampleBatch {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Draw n triples (Y, X, U) from the model and channel. Consumes a fixed
/// draw pattern per sample: one uniform, then one Box-Muller pair.
pub fn sample_batch(
    model: &SourceModel,
    chan: &TestChannel,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> SampleBatch {
    let mut batch = SampleBatch {
        y: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
    };
    let sphi = chan.sigma_phi2.sqrt();
    let snoise = model.sigma2.sqrt();
    for _ in 0..n {
        let y = model.y_law.sample(rng);
        let (zn, zphi) = rng::normal_pair(rng);
        let x = model.f(y) + snoise * zn;
        let u = chan.alpha * (x + sphi * zphi);
        batch.y.push(y);
        batch.x.push(x);
        batch.u.push(u);
    }
    batch
}

/// Conditional-mean reconstruction given (U, Y) under the true regression
/// function: x_hat = u + (1 - alpha) f(y). The channel constants make the
/// weight on u exactly one, so the residual is (alpha - 1) N + alpha Phi.
#[inline]
pub fn mmse_reconstruct(u: f64, y: f64, model: &SourceModel, chan: &TestChannel) -> f64 {
    u + (1.0 - chan.alpha) * model.f(y)
}

/// Plug-in variant of the reconstruction: the fitted regression value
/// `f_hat_y` stands in for f(y).
#[inline]
pub fn plugin_reconstruct(u: f64, f_hat_y: f64, chan: &TestChannel) -> f64 {
    u + (1.0 - chan.alpha) * f_hat_y
}
