//! Error function and the exact Gaussian-CDF GELU.

use std::f64::consts::FRAC_1_SQRT_2;

const SQRT_PI: f64 = 1.772_453_850_905_516;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// erf(x) to near machine precision: Maclaurin series for small arguments,
/// continued-fraction erfc for the tails.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ax = x.abs();
    let val = if ax <= 3.0 {
        erf_series(ax)
    } else {
        1.0 - erfc_cf(ax)
    };
    if x < 0.0 {
        -val
    } else {
        val
    }
}

fn erf_series(x: f64) -> f64 {
    // 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x2 / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    2.0 / SQRT_PI * sum
}

fn erfc_cf(x: f64) -> f64 {
    // Modified Lentz evaluation of erfc(x) = exp(-x^2)/sqrt(pi) *
    // 1/(x + 1/(2x + 2/(x + 3/(2x + ...)))), valid for x > 0.
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    for i in 0..200 {
        // erfc CF: 1/(x + 1/(2x + 2/(x + 3/(2x + ...)))), numerators 1,1,2,3,...
        let (an, bn) = if i == 0 {
            (1.0, x)
        } else {
            (i as f64, if i % 2 == 1 { 2.0 * x } else { x })
        };
        d = bn + an * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = bn + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / SQRT_PI * f
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * FRAC_1_SQRT_2))
}

/// GELU(x) = x * Phi(x), exact erf form.
pub fn gelu_scalar(x: f64) -> f64 {
    x * norm_cdf(x)
}

/// d/dx GELU(x) = Phi(x) + x * phi(x).
pub fn gelu_scalar_grad(x: f64) -> f64 {
    norm_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_known_values() {
        assert_eq!(erf(0.0), 0.0);
        // Reference values at 15+ significant digits.
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-14);
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-14);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-14);
        assert!((erf(4.0) - 0.999_999_984_582_742_1).abs() < 1e-14);
        assert!((erf(-1.0) + erf(1.0)).abs() < 1e-16);
    }

    #[test]
    fn erf_continuous_at_branch_switch() {
        let below = erf(3.0 - 1e-12);
        let above = erf(3.0 + 1e-12);
        assert!((below - above).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        let h = 1e-6;
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.3, 1.0, 2.5] {
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!(
                (fd - gelu_scalar_grad(x)).abs() < 1e-8,
                "x={x}: fd={fd} analytic={}",
                gelu_scalar_grad(x)
            );
        }
    }

    #[test]
    fn gelu_asymptotes() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-12);
        assert!(gelu_scalar(-10.0).abs() < 1e-12);
    }
}
