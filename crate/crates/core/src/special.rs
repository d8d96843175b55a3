//! Gamma-family special functions used by the Dirichlet evidential loss.

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// Shift threshold for the asymptotic expansions below.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// Digamma function `ψ(x)` for `x > 0`; NaN elsewhere.
pub fn digamma(mut x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2n / (2n x^2n), n = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + libm::log(x) - 0.5 * inv - series
}

/// Trigamma function `ψ'(x)` for `x > 0`; NaN elsewhere.
pub fn trigamma(mut x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2
                            * (1.0 / 42.0
                                - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * 691.0 / 2730.0)))));
    acc + series
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `KL(Dir(alpha) || Dir(1, ..., 1))`.
pub fn dirichlet_kl_to_uniform(alpha: &[f64]) -> f64 {
    let k = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let psi_s = digamma(s);
    let mut kl = ln_gamma(s) - ln_gamma(k);
    for &a in alpha {
        kl += (a - 1.0) * (digamma(a) - psi_s) - ln_gamma(a);
    }
    kl
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digamma_at_one_is_minus_euler_gamma() {
        assert!((digamma(1.0) + 0.5772156649).abs() < 1e-9);
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
    }

    #[test]
    fn digamma_recurrence() {
        for i in 1..=100 {
            let x = i as f64;
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-9);
        }
    }

    #[test]
    fn digamma_half() {
        // ψ(1/2) = -γ - 2 ln 2
        let expect = -EULER_GAMMA - 2.0 * core::f64::consts::LN_2;
        assert!((digamma(0.5) - expect).abs() < 1e-12);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = core::f64::consts::PI * core::f64::consts::PI / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
        assert!((trigamma(0.5) - 3.0 * pi2_6).abs() < 1e-11);
        for i in 1..50 {
            let x = i as f64 * 0.7;
            assert!((trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)).abs() < 1e-11);
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.3, 1.0, 2.5, 9.9, 10.1, 40.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() < 1e-6 * trigamma(x).max(1.0), "x={x}");
        }
    }

    #[test]
    fn nonpositive_is_nan() {
        assert!(digamma(0.0).is_nan());
        assert!(trigamma(-1.0).is_nan());
    }

    #[test]
    fn kl_of_uniform_is_zero() {
        assert_eq!(dirichlet_kl_to_uniform(&[1.0, 1.0, 1.0]), 0.0);
        assert!(dirichlet_kl_to_uniform(&[1.0, 5.0]) > 0.0);
    }
}
