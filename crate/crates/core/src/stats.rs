//! Student-t machinery for paired significance tests.

use crate::error::{Error, Result};

const EPS: f64 = 1e-10;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(alloc::format!("incomplete beta at x={x}, a={a}, b={b}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * libm::log(x) + b * libm::log(1.0 - x);
    let front = libm::exp(ln_front);
    // The continued fraction converges fast only on this side of the mode.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_fraction(x, a, b)? / a)
    } else {
        Ok(1.0 - front * beta_fraction(1.0 - x, b, a)? / b)
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_fraction(x: f64, a: f64, b: f64) -> Result<f64> {
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Divergence("incomplete beta continued fraction".into()))
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 || t.is_nan() {
        return Err(Error::InvalidArgument(alloc::format!("t={t}, df={df}")));
    }
    let tail = 0.5 * regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)?;
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
}

/// Outcome of a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Two-sided paired t-test on `a[k] - b[k]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least two pairs".into()));
    }
    let nf = n as f64;
    let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / nf;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y - mean) * (x - y - mean)).sum();
    let var = ss / (nf - 1.0);
    if var.is_nan() || var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = mean / libm::sqrt(var / nf);
    let df = nf - 1.0;
    let p_value = regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)?;
    Ok(PairedTTest { t, df, p_value })
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn t_pdf(x: f64, df: f64) -> f64 {
        let c = libm::exp(ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)) / libm::sqrt(df * core::f64::consts::PI);
        c * libm::pow(1.0 + x * x / df, -(df + 1.0) / 2.0)
    }

    /// Two-sided tail by composite Simpson integration of the density on [0, |t|].
    fn simpson_two_sided(t: f64, df: f64) -> f64 {
        let steps = 20_000;
        let h = t.abs() / steps as f64;
        let mut s = t_pdf(0.0, df) + t_pdf(t.abs(), df);
        for k in 1..steps {
            s += t_pdf(k as f64 * h, df) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            assert_abs_diff_eq!(regularized_incomplete_beta(x, 1.0, 1.0).unwrap(), x, epsilon = 1e-12);
            assert_abs_diff_eq!(regularized_incomplete_beta(x, 3.0, 1.0).unwrap(), x * x * x, epsilon = 1e-12);
            assert_abs_diff_eq!(
                regularized_incomplete_beta(x, 1.0, 4.0).unwrap(),
                1.0 - libm::pow(1.0 - x, 4.0),
                epsilon = 1e-12
            );
        }
        assert!(regularized_incomplete_beta(1.5, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn t_cdf_known_values() {
        // df = 1 is Cauchy
        for &t in &[-3.0, -0.5, 0.0, 0.7, 12.0] {
            let cauchy = 0.5 + libm::atan(t) / core::f64::consts::PI;
            assert_abs_diff_eq!(student_t_cdf(t, 1.0).unwrap(), cauchy, epsilon = 1e-10);
        }
        // df = 2: F(t) = 1/2 + t / (2 sqrt(2 + t²))
        for &t in &[-2.0, 0.3, 4.0] {
            assert_abs_diff_eq!(student_t_cdf(t, 2.0).unwrap(), 0.5 + t / (2.0 * libm::sqrt(2.0 + t * t)), epsilon = 1e-10);
        }
        // two-sided 5% critical value at df = 19
        assert_abs_diff_eq!(student_t_cdf(2.093024, 19.0).unwrap(), 0.975, epsilon = 1e-6);
    }

    #[test]
    fn textbook_paired_example() {
        // differences with mean 1 and variance 4.4667 over 20 pairs
        let d = [3.0, -1.0, 2.0, 4.0, -2.0, 1.0, 0.0, 3.0, 2.0, -1.0, 1.0, 5.0, -3.0, 2.0, 1.0, 0.0, 1.0, 2.0, -1.0, 1.0];
        let b = [0.0; 20];
        let r = paired_t_test(&d, &b).unwrap();
        let (mean, sd) = mean_std(&d);
        assert_abs_diff_eq!(r.t, mean / (sd / libm::sqrt(20.0)), epsilon = 1e-12);
        assert_abs_diff_eq!(r.df, 19.0);
        assert_abs_diff_eq!(r.p_value, simpson_two_sided(r.t, 19.0), epsilon = 1e-8);
    }

    #[test]
    fn t_of_2_116_at_19_df() {
        let p = regularized_incomplete_beta(19.0 / (19.0 + 2.116 * 2.116), 9.5, 0.5).unwrap();
        assert_abs_diff_eq!(p, 0.0478, epsilon = 5e-4);
    }

    #[test]
    fn symmetric_differences_are_insignificant() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 1.0, 4.0, 3.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert_eq!(r.t, 0.0);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]), Err(Error::ZeroVariance));
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn matches_numeric_integration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(3..40);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let b: Vec<f64> = a.iter().map(|x| x - 0.3 + rng.random_range(-1.0..1.0)).collect();
            let r = paired_t_test(&a, &b).unwrap();
            assert_abs_diff_eq!(r.p_value, simpson_two_sided(r.t, r.df), epsilon = 1e-7);
        }
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_abs_diff_eq!(m, 5.0);
        assert_abs_diff_eq!(s, libm::sqrt(32.0 / 7.0), epsilon = 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }
}
