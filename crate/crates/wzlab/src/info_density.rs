//! Densities of the channel output and pointwise information densities.
//!
//! W = f(Y) has a closed-form density by change of variables (inverse
//! square-root singularities at critical values of f are integrable). The
//! channel output marginal is the convolution
//!
//!   p_U(u) = (1 / (alpha sqrt(2 pi s^2))) Int p_W(w) exp(-(u/alpha - w)^2 / (2 s^2)) dw,
//!
//! with s^2 = sigma2 + var(Phi), evaluated by adaptive quadrature split at
//! the kinks of p_W. Information densities are log-ratios of the Gaussian
//! conditionals against that marginal, in bits:
//!
//!   i(u; y) = log2 phi(u; alpha f(y), alpha^2 s^2) - log2 p_U(u)
//!   i(u; x) = log2 phi(u; alpha x,   alpha^2 var(Phi)) - log2 p_U(u)
//!
//! A uniform grid of log p_U values is cached at build time; interpolation
//! on that grid is the hot path for Monte-Carlo work, and every grid value
//! is refined to relative accuracy so log-scale lookups stay accurate far
//! into the tails.

use crate::error::{Error, Result};
use crate::quad;
use crate::source_model::{SourceModel, TestChannel};
use crate::util::{log2, log2_normal_pdf};

/// Densities below this are reported as exact zeros; information densities
/// at such points surface as signed-underflow errors instead of infinities.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Density of W = f(Y).
///
/// Quadratic regression functions use the two-root closed form; any other
/// degree falls back to a sign-change scan for the level set f(y) = w.
/// The scan can miss tangent roots, which only matter at critical values
/// where the density diverges anyway. Exact critical values return
/// `f64::INFINITY`; the singularities are integrable and integrands built
/// on this density treat them as a measure-zero set.
pub fn pdf_w(model: &SourceModel, w: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::Domain(format!("non-finite w {w}")));
    }
    let (ylo, yhi) = model.y_law.support();
    if model.dim() == 3 && model.beta[2] != 0.0 {
        let (b0, b1, b2) = (model.beta[0], model.beta[1], model.beta[2]);
        let disc = b1 * b1 + 4.0 * b2 * (w - b0);
        if disc < 0.0 {
            return Ok(0.0);
        }
        let root = disc.sqrt();
        let y1 = (-b1 - root) / (2.0 * b2);
        let y2 = (-b1 + root) / (2.0 * b2);
        let mut dens = 0.0;
        for y in [y1, y2] {
            if y >= ylo && y <= yhi {
                // |f'(root)| = sqrt(disc) for a quadratic.
                dens += model.y_law.density(y) / root;
            }
        }
        return Ok(dens);
    }

    let grid = 8192;
    let step = (yhi - ylo) / grid as f64;
    let g = |y: f64| model.f(y) - w;
    let mut dens = 0.0;
    let mut prev_y = ylo;
    let mut prev_g = g(prev_y);
    if prev_g == 0.0 {
        dens += model.y_law.density(prev_y) / model.f_prime(prev_y).abs();
    }
    for i in 1..=grid {
        let y = ylo + step * i as f64;
        let gy = g(y);
        if gy == 0.0 || (gy < 0.0) != (prev_g < 0.0) {
            // Bisect the bracket to the root.
            let (mut a, mut b) = (prev_y, y);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if (g(m) < 0.0) == (prev_g < 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            let y_root = 0.5 * (a + b);
            let slope = model.f_prime(y_root).abs();
            dens += model.y_law.density(y_root) / slope;
        }
        prev_y = y;
        prev_g = gy;
    }
    Ok(dens)
}

/// Half-open rate identities of the forward channel, in bits.
pub fn binning_rate(sigma2: f64, chan: &TestChannel) -> f64 {
    0.5 * log2(chan.s2(sigma2) / chan.sigma_phi2)
}

/// Conditional rate-distortion function of X given Y (Gaussian residual).
pub fn conditional_rate_distortion(sigma2: f64, d: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Domain(format!(
            "distortion must be positive, got {d}"
        )));
    }
    Ok(if d >= sigma2 {
        0.0
    } else {
        0.5 * log2(sigma2 / d)
    })
}

/// Grid and quadrature settings for [`DensityTable`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSpec {
    pub grid_points: usize,
    pub quad_tol: f64,
    /// Half-width of the cached u-range, in conditional standard deviations
    /// beyond the image of the w-support.
    pub pad_sd: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            grid_points: 4096,
            quad_tol: 1e-8,
            pad_sd: 8.0,
        }
    }
}

/// Cached marginal density of the channel output.
pub struct DensityTable {
    model: SourceModel,
    chan: TestChannel,
    w_lo: f64,
    w_hi: f64,
    /// Panel boundaries for integration over w: support endpoints plus every
    /// critical value of f (density kinks / singularities).
    w_panels: Vec<f64>,
    u_lo: f64,
    u_hi: f64,
    du: f64,
    log_pu: Vec<f64>,
    quad_tol: f64,
    norm: f64,
}

impl DensityTable {
    pub fn build(model: &SourceModel, chan: &TestChannel, spec: &TableSpec) -> Result<Self> {
        model.validate()?;
        if spec.grid_points < 16 {
            return Err(Error::Config(
                "density grid needs at least 16 points".into(),
            ));
        }
        if !(spec.pad_sd >= 6.0) {
            return Err(Error::Config(
                "density grid pad must be at least 6 sd".into(),
            ));
        }
        let (w_lo, w_hi) = model.w_support();
        let w_panels = critical_values(model, w_lo, w_hi);
        let s = chan.s2(model.sigma2).sqrt();
        let u_lo = chan.alpha * (w_lo - spec.pad_sd * s);
        let u_hi = chan.alpha * (w_hi + spec.pad_sd * s);
        let mut table = DensityTable {
            model: model.clone(),
            chan: *chan,
            w_lo,
            w_hi,
            w_panels,
            u_lo,
            u_hi,
            du: (u_hi - u_lo) / (spec.grid_points - 1) as f64,
            log_pu: Vec::new(),
            quad_tol: spec.quad_tol,
            norm: f64::NAN,
        };
        let mut log_pu = Vec::with_capacity(spec.grid_points);
        for i in 0..spec.grid_points {
            let u = u_lo + table.du * i as f64;
            let p = table
                .pdf_u(u)
                .map_err(|e| Error::Integration(format!("grid node u = {u}: {e}")))?;
            if p < DENSITY_FLOOR {
                return Err(Error::Integration(format!(
                    "marginal density underflowed inside the cached range at u = {u}"
                )));
            }
            log_pu.push(p.ln());
        }
        // Trapezoid over the freshly computed grid; the density is smooth in
        // u, so grid-resolution error is far below the tail truncation.
        let mut acc = crate::util::Kahan::new();
        for (i, &lp) in log_pu.iter().enumerate() {
            let weight = if i == 0 || i == log_pu.len() - 1 {
                0.5
            } else {
                1.0
            };
            acc.add(weight * lp.exp());
        }
        table.log_pu = log_pu;
        table.norm = acc.value() * table.du;
        Ok(table)
    }

    pub fn channel(&self) -> &TestChannel {
        &self.chan
    }

    pub fn model(&self) -> &SourceModel {
        &self.model
    }

    pub fn w_support(&self) -> (f64, f64) {
        (self.w_lo, self.w_hi)
    }

    pub fn u_range(&self) -> (f64, f64) {
        (self.u_lo, self.u_hi)
    }

    /// Mass of the cached window; deviates from one only by tail truncation
    /// and quadrature error.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Marginal density by adaptive quadrature. Absolute accuracy follows
    /// the table tolerance, then one relative refinement pass keeps small
    /// values accurate on log scale.
    pub fn pdf_u(&self, u: f64) -> Result<f64> {
        let alpha = self.chan.alpha;
        let s2 = self.chan.s2(self.model.sigma2);
        let s = s2.sqrt();
        let t = u / alpha;
        let pref = 1.0 / (alpha * (2.0 * std::f64::consts::PI * s2).sqrt());
        let integrand = |w: f64| {
            let pw = pdf_w_quiet(&self.model, w);
            if pw == 0.0 {
                return 0.0;
            }
            let z = t - w;
            pw * (-z * z / (2.0 * s2)).exp()
        };
        // Extra panel cuts around the Gaussian factor keep its spike visible
        // to the first quadrature pass when s is much narrower than the
        // density panels.
        let mut panels = self.w_panels.clone();
        for k in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0] {
            let cut = t + k * s;
            if cut > self.w_lo && cut < self.w_hi {
                panels.push(cut);
            }
        }
        panels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        panels.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let first = quad::integrate_split(integrand, &panels, self.quad_tol / pref)?;
        let mut value = pref * first.value;
        if value > 0.0 && value < 1e-3 {
            // Re-run with a tolerance tied to the magnitude for log accuracy.
            let tol = (value / pref * 1e-8).max(1e-320);
            if let Ok(second) = quad::integrate_split(integrand, &panels, tol) {
                value = pref * second.value;
            }
        }
        Ok(if value < DENSITY_FLOOR { 0.0 } else { value })
    }

    /// Cached log2 marginal. Falls back to direct quadrature outside the grid.
    pub fn log2_pdf_u(&self, u: f64) -> Result<f64> {
        if u >= self.u_lo && u <= self.u_hi {
            let pos = (u - self.u_lo) / self.du;
            let i = (pos as usize).min(self.log_pu.len() - 2);
            let frac = pos - i as f64;
            let ln_p = self.log_pu[i] * (1.0 - frac) + self.log_pu[i + 1] * frac;
            return Ok(ln_p / crate::util::LN_2);
        }
        let p = self.pdf_u(u)?;
        if p < DENSITY_FLOOR {
            return Err(Error::DensityUnderflow { sign: 1 });
        }
        Ok(p.log2())
    }

    /// Cached marginal density.
    pub fn pdf_u_cached(&self, u: f64) -> Result<f64> {
        Ok((self.log2_pdf_u(u)? * crate::util::LN_2).exp())
    }

    /// Information density between the channel output and the label, bits.
    pub fn info_uy(&self, u: f64, y: f64) -> Result<f64> {
        let a = self.chan.alpha;
        let var = a * a * self.chan.s2(self.model.sigma2);
        let cond = log2_normal_pdf(u, a * self.model.f(y), var);
        self.finish_info(cond, u)
    }

    /// Information density between the channel output and the source, bits.
    pub fn info_ux(&self, u: f64, x: f64) -> Result<f64> {
        let a = self.chan.alpha;
        let var = a * a * self.chan.sigma_phi2;
        let cond = log2_normal_pdf(u, a * x, var);
        self.finish_info(cond, u)
    }

    fn finish_info(&self, cond_log2: f64, u: f64) -> Result<f64> {
        const LOG2_FLOOR: f64 = -996.5; // log2(1e-300)
        let marg = self.log2_pdf_u(u)?;
        if cond_log2 < LOG2_FLOOR {
            return Err(Error::DensityUnderflow { sign: -1 });
        }
        Ok(cond_log2 - marg)
    }

    /// (u, p_U(u)) pairs of the cached grid, for debugging dumps.
    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.log_pu
            .iter()
            .enumerate()
            .map(move |(i, &lp)| (self.u_lo + self.du * i as f64, lp.exp()))
    }
}

/// Density with singular points flattened to zero, for use inside
/// quadrature integrands.
fn pdf_w_quiet(model: &SourceModel, w: f64) -> f64 {
    match pdf_w(model, w) {
        Ok(v) if v.is_finite() => v,
        _ => 0.0,
    }
}

/// Critical values of f inside [w_lo, w_hi]: endpoints of the label support
/// plus interior stationary points, deduplicated and sorted. These are the
/// only places p_W can kink or blow up.
fn critical_values(model: &SourceModel, w_lo: f64, w_hi: f64) -> Vec<f64> {
    let (ylo, yhi) = model.y_law.support();
    let mut vals = vec![w_lo, w_hi, model.f(ylo), model.f(yhi)];
    let grid = 4096;
    let step = (yhi - ylo) / grid as f64;
    let mut prev = model.f_prime(ylo);
    for i in 1..=grid {
        let y = ylo + step * i as f64;
        let cur = model.f_prime(y);
        if cur == 0.0 || (cur < 0.0) != (prev < 0.0) {
            let (mut a, mut b) = (y - step, y);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if (model.f_prime(m) < 0.0) == (prev < 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            vals.push(model.f(0.5 * (a + b)));
        }
        prev = cur;
    }
    let mut vals: Vec<f64> = vals
        .into_iter()
        .filter(|v| *v >= w_lo && *v <= w_hi)
        .collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if vals.first() != Some(&w_lo) {
        vals.insert(0, w_lo);
    }
    if vals.last().copied().map(|v| (v - w_hi).abs() > 1e-12) != Some(false) {
        vals.push(w_hi);
    }
    vals
}
