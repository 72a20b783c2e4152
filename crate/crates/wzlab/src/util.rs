//! Small numeric helpers shared across modules.

/// Neumaier compensated accumulator. Summation order is fixed by the caller,
/// so results are bit-identical across runs and thread counts as long as the
/// inputs arrive in a deterministic order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice in index order.
pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = Kahan::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Compensated mean; NaN on empty input.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

pub const LN_2: f64 = std::f64::consts::LN_2;

#[inline]
pub fn log2(x: f64) -> f64 {
    x.ln() / LN_2
}

/// log2 of the normal density with mean `m` and variance `v`.
#[inline]
pub fn log2_normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    let z = x - m;
    -0.5 * log2(2.0 * std::f64::consts::PI * v) - z * z / (2.0 * v * LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_mass_lost_to_cancellation() {
        let mut acc = Kahan::new();
        acc.add(1.0);
        acc.add(1e100);
        acc.add(1.0);
        acc.add(-1e100);
        assert_eq!(acc.value(), 2.0);
    }

    #[test]
    fn normal_log_density_matches_direct_formula() {
        let got = log2_normal_pdf(0.3, 0.1, 2.0);
        let direct = ((-(0.3f64 - 0.1).powi(2) / 4.0).exp()
            / (2.0 * std::f64::consts::PI * 2.0).sqrt())
        .log2();
        assert!((got - direct).abs() < 1e-12);
    }
}
