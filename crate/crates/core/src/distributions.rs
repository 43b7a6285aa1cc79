//! Gaussian, Gamma and Beta densities in log space, the special functions they
//! need, and closed-form KL divergences.
//!
//! Gamma distributions are always `(shape, rate)`. Where a formula is written
//! rate-first (`G(ω | rate, shape)`), convert at the call site.

use crate::error::{check_finite, check_positive, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Asymptotic series for lnΓ and ψ is used from this argument upward.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// Natural log of the Gamma function for `x > 0`.
///
/// Shifts the argument upward with `lnΓ(x) = lnΓ(x+1) − ln x` and evaluates
/// the Stirling series there.
pub fn log_gamma_fn(x: f64) -> Result<f64> {
    check_positive("x", x)?;
    Ok(ln_gamma(x))
}

/// Digamma ψ(x) for `x > 0`. Poles at the non-positive integers are rejected
/// rather than approximated.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("x", x)?;
    Ok(psi(x))
}

pub(crate) fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut z = x;
    let mut prod = 1.0;
    let mut log_shift = 0.0;
    while z < ASYMPTOTIC_FROM {
        prod *= z;
        // keep the running product well inside f64 range
        if prod > 1e280 {
            log_shift += prod.ln();
            prod = 1.0;
        }
        z += 1.0;
    }
    log_shift += prod.ln();
    stirling(z) - log_shift
}

fn stirling(z: f64) -> f64 {
    // B_{2n} / (2n (2n−1))
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
    ];
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in C {
        series += c * pow;
        pow *= inv2;
    }
    (z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series
}

pub(crate) fn psi(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut z = x;
    let mut acc = 0.0;
    while z < ASYMPTOTIC_FROM {
        acc -= 1.0 / z;
        z += 1.0;
    }
    // B_{2n} / (2n)
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32_760.0,
        1.0 / 12.0,
    ];
    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in C {
        series += c * pow;
        pow *= inv2;
    }
    acc + z.ln() - 0.5 / z - series
}

/// Gamma distribution in `(shape, rate)` form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    shape: f64,
    rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        check_positive("gamma shape", shape)?;
        check_positive("gamma rate", rate)?;
        Ok(Self { shape, rate })
    }

    /// Builds from the rate-first argument order `G(· | rate, shape)`.
    pub fn from_rate_shape(rate: f64, shape: f64) -> Result<Self> {
        Self::new(shape, rate)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// E[ln ω] = ψ(shape) − ln(rate).
    pub fn mean_ln(&self) -> f64 {
        psi(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        let a = self.shape;
        a - self.rate.ln() + ln_gamma(a) + (1.0 - a) * psi(a)
    }
}

/// Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_positive("beta alpha", alpha)?;
        check_positive("beta beta", beta)?;
        Ok(Self { alpha, beta })
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

    /// E[ln π].
    pub fn mean_ln(&self) -> f64 {
        psi(self.alpha) - psi(self.alpha + self.beta)
    }

    /// E[ln(1 − π)].
    pub fn mean_ln1m(&self) -> f64 {
        psi(self.beta) - psi(self.alpha + self.beta)
    }

    /// E[−ln(1 − π)] = ψ(α+β) − ψ(β), the weight the label prior places on
    /// its smoothness term. Always positive.
    pub fn neg_ln1m_mean(&self) -> f64 {
        psi(self.alpha + self.beta) - psi(self.beta)
    }

    pub fn ln_beta_fn(&self) -> f64 {
        ln_gamma(self.alpha) + ln_gamma(self.beta) - ln_gamma(self.alpha + self.beta)
    }

    pub fn entropy(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        self.ln_beta_fn() - (a - 1.0) * psi(a) - (b - 1.0) * psi(b)
            + (a + b - 2.0) * psi(a + b)
    }
}

/// Gaussian distribution stored as `(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    mean: f64,
    variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        check_finite("gaussian mean", mean)?;
        check_positive("gaussian variance", variance)?;
        Ok(Self { mean, variance })
    }

    /// From mean and precision ρ, as in `N(n | m, ρ⁻¹)`.
    pub fn from_precision(mean: f64, precision: f64) -> Result<Self> {
        check_positive("gaussian precision", precision)?;
        Self::new(mean, 1.0 / precision)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

pub fn log_gaussian_pdf(value: f64, params: GaussianParams) -> Result<f64> {
    check_finite("value", value)?;
    let r = value - params.mean;
    Ok(-0.5 * (LN_2PI + params.variance.ln()) - r * r / (2.0 * params.variance))
}

pub fn log_gamma_pdf(value: f64, params: GammaParams) -> Result<f64> {
    check_positive("value", value)?;
    let (a, b) = (params.shape, params.rate);
    Ok(a * b.ln() - ln_gamma(a) + (a - 1.0) * value.ln() - b * value)
}

pub fn log_beta_pdf(value: f64, params: BetaParams) -> Result<f64> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::Domain {
            name: "value",
            constraint: "0 < value < 1",
            value,
        });
    }
    let (a, b) = (params.alpha, params.beta);
    Ok(-params.ln_beta_fn() + (a - 1.0) * value.ln() + (b - 1.0) * (-value).ln_1p())
}

pub fn kl_gaussian(q: GaussianParams, p: GaussianParams) -> f64 {
    let d = q.mean - p.mean;
    0.5 * ((p.variance / q.variance).ln() + (q.variance + d * d) / p.variance - 1.0)
}

pub fn kl_gamma(q: GammaParams, p: GammaParams) -> f64 {
    let (aq, bq) = (q.shape, q.rate);
    let (ap, bp) = (p.shape, p.rate);
    (aq - ap) * psi(aq) - ln_gamma(aq) + ln_gamma(ap) + ap * (bq.ln() - bp.ln())
        + aq * (bp - bq) / bq
}

pub fn kl_beta(q: BetaParams, p: BetaParams) -> f64 {
    let (a1, b1) = (q.alpha, q.beta);
    let (a2, b2) = (p.alpha, p.beta);
    p.ln_beta_fn() - q.ln_beta_fn()
        + (a1 - a2) * psi(a1)
        + (b1 - b2) * psi(b1)
        + (a2 - a1 + b2 - b1) * psi(a1 + b1)
}


#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    const HALF_LN_PI: f64 = 0.572_364_942_924_700_1;
    const EULER: f64 = 0.577_215_664_901_532_9;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn gaussian_log_pdf_examples() {
        let std = GaussianParams::new(0.0, 1.0).unwrap();
        close(log_gaussian_pdf(0.0, std).unwrap(), -0.918_938_533_204_672_7, 1e-12);
        close(log_gaussian_pdf(1.0, std).unwrap(), -1.418_938_533_204_672_7, 1e-12);
        let p = GaussianParams::new(3.7, 0.3).unwrap();
        close(
            log_gaussian_pdf(3.7, p).unwrap(),
            -0.5 * (2.0 * PI * 0.3).ln(),
            1e-14,
        );
        assert!(log_gaussian_pdf(f64::NAN, std).is_err());
        assert!(log_gaussian_pdf(f64::INFINITY, std).is_err());
    }

    #[test]
    fn gamma_log_pdf_examples() {
        let exp1 = GammaParams::new(1.0, 1.0).unwrap();
        close(log_gamma_pdf(1.0, exp1).unwrap(), -1.0, 1e-15);
        close(log_gamma_pdf(3.25, exp1).unwrap(), -3.25, 1e-15);
        let p = GammaParams::new(2.0, 3.0).unwrap();
        let expected = 2.0 * 3f64.ln() + 2f64.ln() - 6.0;
        close(log_gamma_pdf(2.0, p).unwrap(), expected, 1e-14);
        close(expected, -3.109_63, 5e-6);
        assert!(log_gamma_pdf(0.0, p).is_err());
        assert!(log_gamma_pdf(-1.0, p).is_err());
    }

    #[test]
    fn beta_log_pdf_examples() {
        let uniform = BetaParams::new(1.0, 1.0).unwrap();
        close(log_beta_pdf(0.5, uniform).unwrap(), 0.0, 1e-15);
        let b22 = BetaParams::new(2.0, 2.0).unwrap();
        close(log_beta_pdf(0.5, b22).unwrap(), (6.0f64 * 0.25).ln(), 1e-14);
        close(log_beta_pdf(0.25, b22).unwrap(), (6.0f64 * 0.25 * 0.75).ln(), 1e-14);
        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(log_beta_pdf(bad, b22).is_err());
        }
    }

    #[test]
    fn digamma_reference_values() {
        close(digamma(1.0).unwrap(), -EULER, 1e-12);
        close(digamma(2.0).unwrap(), 1.0 - EULER, 1e-12);
        close(digamma(0.5).unwrap(), -EULER - 2.0 * 2f64.ln(), 1e-12);
        close(digamma(0.5).unwrap(), -1.963_510_026_02, 1e-11);
        assert!(digamma(0.0).is_err());
        assert!(digamma(-2.5).is_err());
    }

    #[test]
    fn log_gamma_reference_values() {
        assert_eq!(log_gamma_fn(1.0).unwrap(), 0.0);
        assert_eq!(log_gamma_fn(2.0).unwrap(), 0.0);
        close(log_gamma_fn(5.0).unwrap(), 24f64.ln(), 1e-14);
        close(log_gamma_fn(0.5).unwrap(), HALF_LN_PI, 1e-14);
        assert!(log_gamma_fn(0.0).is_err());
    }

    #[test]
    fn large_arguments_do_not_overflow() {
        let v = log_gamma_fn(1e-300).unwrap();
        close(v, -(1e-300f64).ln(), 1e-9);
        let big = log_gamma_fn(1e6).unwrap();
        let stirling = (1e6 - 0.5) * (1e6f64).ln() - 1e6 + 0.5 * LN_2PI + 1.0 / 12e6;
        close(big, stirling, 1e-6);
    }

    #[test]
    fn kl_examples() {
        let n01 = GaussianParams::new(0.0, 1.0).unwrap();
        let n11 = GaussianParams::new(1.0, 1.0).unwrap();
        close(kl_gaussian(n01, n11), 0.5, 1e-15);
        let g = GammaParams::new(2.3, 0.7).unwrap();
        assert_eq!(kl_gamma(g, g), 0.0);
        let b = BetaParams::new(2.0, 2.0).unwrap();
        assert_eq!(kl_beta(b, b), 0.0);
    }

    #[test]
    fn beta_bracket_matches_recurrence() {
        // ψ(4) − ψ(2) = 1/2 + 1/3
        let b = BetaParams::new(2.0, 2.0).unwrap();
        close(b.neg_ln1m_mean(), 0.5 + 1.0 / 3.0, 1e-14);
    }

    #[test]
    fn rate_first_constructor_swaps() {
        let g = GammaParams::from_rate_shape(2.0, 1e-6).unwrap();
        assert_eq!(g.shape(), 1e-6);
        assert_eq!(g.rate(), 2.0);
        assert_eq!(g.mean(), 5e-7);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(GammaParams::new(0.0, 1.0).is_err());
        assert!(GammaParams::new(1.0, -1.0).is_err());
        assert!(BetaParams::new(f64::NAN, 1.0).is_err());
        assert!(GaussianParams::new(0.0, 0.0).is_err());
    }
}
