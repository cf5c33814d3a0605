//! Scalar math routed through libm so results are identical with and
//! without the standard library.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

/// Numerically safe softplus, ln(1 + e^x).
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        exp(x)
    } else {
        ln(1.0 + exp(x))
    }
}

/// d/dx softplus(x) = sigmoid(x).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Exact GELU, x * Phi(x) with the Gaussian CDF.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

/// d/dx GELU(x) = Phi(x) + x * phi(x).
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let phi_pdf = exp(-0.5 * x * x) / sqrt(2.0 * core::f64::consts::PI);
    phi_cdf + x * phi_pdf
}

/// elu(x) + 1, the positive feature map applied to queries and keys.
#[inline]
pub fn elu_plus_one(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        exp(x)
    }
}

#[inline]
pub fn elu_plus_one_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        exp(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for i in -20..=20 {
            let x = i as f64;
            assert!((softplus(x) - (1.0 + exp(x)).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_large_args_do_not_overflow() {
        assert!(softplus(1000.0).is_finite());
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6;
        for i in -30..=30 {
            let x = i as f64 / 10.0;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn elu_feature_map_is_positive() {
        for i in -100..=100 {
            assert!(elu_plus_one(i as f64 / 10.0) > 0.0);
        }
    }
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
