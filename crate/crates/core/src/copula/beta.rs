use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};

/// Fraction of the maximal Bernoulli variance used when a sample variance is
/// too large for any Beta distribution with the same mean.
pub const VARIANCE_CLAMP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaMarginal {
    component: usize,
    alpha: f64,
    beta: f64,
    /// `I_{1/2}(alpha, beta)`: quantiles below it lie in `[0, 1/2]`.
    split: f64,
}

impl BetaMarginal {
    /// Panics unless both shapes are positive and finite.
    pub fn new(component: usize, alpha: f64, beta: f64) -> Self {
        assert!(
            alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite(),
            "Beta shapes must be positive, got ({alpha}, {beta})"
        );
        BetaMarginal {
            component,
            alpha,
            beta,
            split: beta_reg(alpha, beta, 0.5),
        }
    }

    pub fn component(&self) -> usize {
        self.component
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        self.quantile(u, 1.0 - u)
    }

    /// Inverse CDF given both tail probabilities `lower = u` and
    /// `upper = 1 - u`, so that extreme upper quantiles keep their precision.
    pub fn quantile(&self, lower: f64, upper: f64) -> f64 {
        if !(lower > 0.0) {
            return 0.0;
        }
        if !(upper > 0.0) {
            return 1.0;
        }
        // solve on whichever side of 1/2 the quantile lies, in logs of x or 1 - x
        if lower <= self.split {
            lower_quantile(self.alpha, self.beta, lower)
        } else {
            1.0 - lower_quantile(self.beta, self.alpha, upper)
        }
    }
}

/// Solves `I_x(a, b) = u` for a root in `(0, 1/2]`.
///
/// Newton steps on `ln I` against `ln x`, guarded by a bisection bracket,
/// starting from [`initial_log_guess`]. Working in logs keeps the deep lower
/// tail reachable when `a` is tiny.
fn lower_quantile(a: f64, b: f64, u: f64) -> f64 {
    let target = u.ln();
    let lnb = ln_beta(a, b);
    let mut lo = f64::MIN_POSITIVE.ln();
    if beta_reg(a, b, lo.exp()).ln() >= target {
        return 0.0;
    }
    let mut hi = 0.5f64.ln();
    let mut t = initial_log_guess(a, b, u).clamp(lo, hi);
    for _ in 0..200 {
        let x = t.exp();
        let cdf = beta_reg(a, b, x);
        let h = cdf.ln() - target;
        if h.abs() < 1e-13 {
            break;
        }
        if h > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        // d ln I / d ln x = x f(x) / I(x)
        let ln_slope = a * t + (b - 1.0) * (-x).ln_1p() - lnb - cdf.ln();
        let mut next = t - h / ln_slope.exp();
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * t.abs().max(1e-300) {
            t = next;
            break;
        }
        t = next;
    }
    t.exp()
}

/// Log of the classic starting point for inverting the incomplete beta
/// function: a normal-deviate approximation when both shapes are at least 1,
/// otherwise the leading tail terms near 0 and 1.
fn initial_log_guess(a: f64, b: f64, u: f64) -> f64 {
    if a >= 1.0 && b >= 1.0 {
        let t = (-2.0 * u.ln()).sqrt();
        let x = -((2.30753 + 0.27061 * t) / (1.0 + (0.99229 + 0.04481 * t) * t) - t);
        let al = (x * x - 3.0) / 6.0;
        let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
        let w = x * (al + h).sqrt() / h - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
        // x0 = a / (a + b e^{2w})
        return -((b / a).ln() + 2.0 * w).exp().ln_1p();
    }
    let ln_t = a * (a / (a + b)).ln() - a.ln();
    let ln_v = b * (b / (a + b)).ln() - b.ln();
    let ln_w = ln_t.max(ln_v) + (-(ln_t - ln_v).abs()).exp().ln_1p();
    if u.ln() < ln_t - ln_w {
        // x0 = (a w u)^(1/a)
        (a.ln() + ln_w + u.ln()) / a
    } else {
        // x0 = 1 - (b w (1 - u))^(1/b)
        (-((b.ln() + ln_w + (-u).ln_1p()) / b).exp()).ln_1p()
    }
}

/// Method-of-moments Beta fit.
///
/// Variances at or above `mu (1 - mu)` are clamped to
/// `VARIANCE_CLAMP * mu (1 - mu)` first.
pub fn fit_beta(component: usize, mu: f64, var: f64) -> Result<BetaMarginal> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Numerical(format!(
            "component {component}: Beta mean {mu} outside (0, 1)"
        )));
    }
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Numerical(format!(
            "component {component}: Beta variance {var} must be positive"
        )));
    }
    let bound = mu * (1.0 - mu);
    let var = if var >= bound { VARIANCE_CLAMP * bound } else { var };
    let k = bound / var - 1.0;
    Ok(BetaMarginal::new(component, mu * k, (1.0 - mu) * k))
}

/// Marginal of one categorical component across auxiliary locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentMarginal {
    Beta(BetaMarginal),
    /// Zero spread across locations: the inverse CDF is constant.
    PointMass { component: usize, value: f64 },
}

impl ComponentMarginal {
    /// Beta fit, or a point mass when the variance vanishes relative to the mean.
    pub fn fit(component: usize, mu: f64, var: f64) -> Result<Self> {
        if var <= 1e-12 * mu * (1.0 - mu) || var <= 0.0 {
            return Ok(ComponentMarginal::PointMass {
                component,
                value: mu.clamp(0.0, 1.0),
            });
        }
        fit_beta(component, mu, var).map(ComponentMarginal::Beta)
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        self.quantile(u, 1.0 - u)
    }

    pub fn quantile(&self, lower: f64, upper: f64) -> f64 {
        match self {
            ComponentMarginal::Beta(b) => b.quantile(lower, upper),
            ComponentMarginal::PointMass { value, .. } => *value,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ComponentMarginal::Beta(b) => b.mean(),
            ComponentMarginal::PointMass { value, .. } => *value,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ComponentMarginal::Beta(b) => b.variance(),
            ComponentMarginal::PointMass { .. } => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::beta::beta_reg;

    #[test]
    fn uniform_case() {
        let b = fit_beta(0, 0.5, 1.0 / 12.0).unwrap();
        assert!((b.alpha - 1.0).abs() < 1e-12);
        assert!((b.beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_point_three() {
        // alpha + beta = 0.21 / 0.01 - 1 = 20
        let b = fit_beta(0, 0.3, 0.01).unwrap();
        assert!((b.alpha - 6.0).abs() < 1e-12);
        assert!((b.beta - 14.0).abs() < 1e-12);
        assert!((b.mean() - 0.3).abs() < 1e-15);
        assert!((b.variance() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn u_shaped_case() {
        // 1 / (4 (2a + 1)) = 0.125  =>  a = 0.5
        let b = fit_beta(0, 0.5, 0.125).unwrap();
        assert!((b.alpha - 0.5).abs() < 1e-12);
        assert!((b.beta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clamps_excess_variance() {
        let b = fit_beta(0, 0.2, 0.5).unwrap();
        assert!((b.mean() - 0.2).abs() < 1e-12);
        assert!((b.variance() - 0.9 * 0.16).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_means() {
        assert!(fit_beta(0, 0.0, 0.01).is_err());
        assert!(fit_beta(0, 1.0, 0.01).is_err());
        assert!(fit_beta(0, f64::NAN, 0.01).is_err());
        assert!(fit_beta(0, 0.5, 0.0).is_err());
    }

    #[test]
    fn zero_variance_is_a_point_mass() {
        let m = ComponentMarginal::fit(3, 0.4, 0.0).unwrap();
        assert_eq!(m, ComponentMarginal::PointMass { component: 3, value: 0.4 });
        assert_eq!(m.inverse_cdf(0.01), 0.4);
        assert_eq!(m.inverse_cdf(0.99), 0.4);
        assert!(matches!(ComponentMarginal::fit(0, 0.0, 0.0).unwrap(), ComponentMarginal::PointMass { .. }));
    }

    proptest! {
        #[test]
        fn moments_round_trip(mu in 0.001f64..0.999, frac in 0.001f64..0.999) {
            let var = frac * mu * (1.0 - mu);
            let b = fit_beta(0, mu, var).unwrap();
            prop_assert!((b.mean() - mu).abs() < 1e-10);
            prop_assert!((b.variance() - var).abs() < 1e-10);
        }

        #[test]
        fn inverse_cdf_is_monotone(mu in 0.01f64..0.99, frac in 0.01f64..0.99, u in 0.0f64..1.0, du in 0.0f64..0.01) {
            let b = fit_beta(0, mu, frac * mu * (1.0 - mu)).unwrap();
            prop_assert!(b.inverse_cdf(u) <= b.inverse_cdf((u + du).min(1.0)));
        }

        #[test]
        fn inverse_cdf_matches_bisection(mu in 0.01f64..0.99, frac in 0.01f64..0.99, u in 0.001f64..0.999) {
            let b = fit_beta(0, mu, frac * mu * (1.0 - mu)).unwrap();
            let x = b.inverse_cdf(u);
            let oracle = bisect(b.alpha, b.beta, u);
            prop_assert!((x - oracle).abs() <= 1e-6 * oracle.min(1.0 - oracle) + 1e-14);
        }
    }

    /// Plain bisection on `ln x` below the point 1/2 and on `ln (1 - x)` above it.
    fn bisect(a: f64, b: f64, u: f64) -> f64 {
        let (mut lo, mut hi) = (-700.0f64, 0.0f64);
        if u <= beta_reg(a, b, 0.5) {
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if beta_reg(a, b, mid.exp()) < u { lo = mid } else { hi = mid }
            }
            (0.5 * (lo + hi)).exp()
        } else {
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if beta_reg(b, a, mid.exp()) < 1.0 - u { lo = mid } else { hi = mid }
            }
            1.0 - (0.5 * (lo + hi)).exp()
        }
    }

    #[test]
    fn tiny_shapes_reach_deep_tails() {
        let b = fit_beta(0, 0.05, 0.5 * 0.05 * 0.95).unwrap();
        let x = b.inverse_cdf(0.001);
        assert!(x > 0.0);
        assert!(((beta_reg(b.alpha, b.beta, x) - 0.001) / 0.001).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn quantile_accepts_complements(mu in 0.05f64..0.95, frac in 0.05f64..0.9, z in 9.0f64..20.0) {
            let b = fit_beta(0, mu, frac * mu * (1.0 - mu)).unwrap();
            // upper tail given exactly, lower as its rounded complement
            let upper = 0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
            let x = b.quantile(1.0 - upper, upper);
            // the rounded lower tail alone is 1.0 and would map to x = 1
            let gap = bisect(b.beta, b.alpha, upper);
            if gap > 1e-12 {
                prop_assert!((((1.0 - x) - gap) / gap).abs() < 1e-3);
            }
        }
    }
}
