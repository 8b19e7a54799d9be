//! Gaussian convolution kernel `phi(t) = exp(-t^2 / sigma^2)` and its derivatives.
//!
//! The derivative suprema are the constants that every perturbation radius is
//! built from, so they are evaluated from their closed radical forms rather
//! than stored as rounded decimals.

use crate::error::{Error, Result};

/// `c = 4 sqrt(9 - 3 sqrt 6) exp(-(3 - sqrt 6) / 2)`, so that
/// `sup |phi'''| = c / sigma^3`.
pub fn third_derivative_constant() -> f64 {
    let r6 = 6f64.sqrt();
    4.0 * (9.0 - 3.0 * r6).sqrt() * (-(3.0 - r6) / 2.0).exp()
}

/// `c2 = 4 + c sqrt(2) / sqrt(e)`.
pub fn c2_constant() -> f64 {
    4.0 + third_derivative_constant() * std::f64::consts::SQRT_2 / std::f64::consts::E.sqrt()
}

/// Suprema of `|phi'|`, `|phi''|`, `|phi'''|` over the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivBounds {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl DerivBounds {
    pub fn get(&self, order: u8) -> Option<f64> {
        match order {
            1 => Some(self.m1),
            2 => Some(self.m2),
            3 => Some(self.m3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    sigma: f64,
}

impl Kernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("kernel width must be positive and finite, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn phi(&self, t: f64) -> f64 {
        let u = t / self.sigma;
        (-u * u).exp()
    }

    #[inline]
    pub fn d1(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        -2.0 * t / s2 * self.phi(t)
    }

    #[inline]
    pub fn d2(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (4.0 * t * t / (s2 * s2) - 2.0 / s2) * self.phi(t)
    }

    #[inline]
    pub fn d3(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let s4 = s2 * s2;
        (12.0 * t / s4 - 8.0 * t * t * t / (s4 * s2)) * self.phi(t)
    }

    /// Value and first two derivatives sharing one exponential.
    #[inline]
    pub fn phi_012(&self, t: f64) -> (f64, f64, f64) {
        let s2 = self.sigma * self.sigma;
        let p = (-t * t / s2).exp();
        (p, -2.0 * t / s2 * p, (4.0 * t * t / (s2 * s2) - 2.0 / s2) * p)
    }

    /// Derivative of the requested order (1, 2 or 3).
    pub fn derivative(&self, t: f64, order: u8) -> Result<f64> {
        match order {
            1 => Ok(self.d1(t)),
            2 => Ok(self.d2(t)),
            3 => Ok(self.d3(t)),
            _ => Err(Error::InvalidArgument(format!("unsupported derivative order {order}"))),
        }
    }

    pub fn deriv_sup_bounds(&self) -> DerivBounds {
        let s = self.sigma;
        DerivBounds {
            m1: std::f64::consts::SQRT_2 / (s * std::f64::consts::E.sqrt()),
            m2: 2.0 / (s * s),
            m3: third_derivative_constant() / (s * s * s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn phi_trivial_values() {
        let k = Kernel::new(0.07).unwrap();
        assert_eq!(k.phi(0.0), 1.0);
        let k = Kernel::new(0.1).unwrap();
        assert_relative_eq!(k.phi(0.1), (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn phi_matches_high_precision_value() {
        // exp(-(0.05/0.07)^2) at 40 digits
        let k = Kernel::new(0.07).unwrap();
        assert_relative_eq!(k.phi(0.05), 0.600_373_041_198_404_4, max_relative = 1e-15);
    }

    #[test]
    fn derivative_trivial_values() {
        let k = Kernel::new(1.0).unwrap();
        assert_eq!(k.derivative(0.0, 1).unwrap(), 0.0);
        assert_eq!(k.derivative(0.0, 2).unwrap(), -2.0);
        assert!(matches!(k.derivative(0.0, 4), Err(Error::InvalidArgument(_))));
        assert!(matches!(k.derivative(0.0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn third_derivative_high_precision() {
        // (12 t / s^4 - 8 t^3 / s^6) exp(-t^2/s^2) at t = 0.03, s = 0.07, 40 digits
        let k = Kernel::new(0.07).unwrap();
        assert_relative_eq!(k.d3(0.03), 10_950.005_618_990_27, max_relative = 1e-13);
    }

    #[test]
    fn constants_match_closed_forms() {
        assert_relative_eq!(third_derivative_constant(), 3.903_566_145_539_902, max_relative = 1e-15);
        assert!((third_derivative_constant() - 3.9036).abs() < 1e-4);
        assert_relative_eq!(c2_constant(), 7.348_338_062_199_398, max_relative = 1e-15);
        assert!((c2_constant() - 7.3484).abs() < 1e-3);
    }

    #[test]
    fn sup_bounds_scale_with_sigma() {
        let b1 = Kernel::new(1.0).unwrap().deriv_sup_bounds();
        assert_relative_eq!(b1.m1, 0.857_763_884_960_706_8, max_relative = 1e-15);
        assert_eq!(b1.m2, 2.0);
        let b2 = Kernel::new(2.0).unwrap().deriv_sup_bounds();
        assert_relative_eq!(b2.m1, b1.m1 / 2.0, max_relative = 1e-15);
        assert_relative_eq!(b2.m2, 0.5, max_relative = 1e-15);
        assert_relative_eq!(b2.m3, b1.m3 / 8.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(Kernel::new(0.0).is_err());
        assert!(Kernel::new(-1.0).is_err());
        assert!(Kernel::new(f64::NAN).is_err());
    }

    #[test]
    fn phi_012_agrees_with_separate_calls() {
        let k = Kernel::new(0.07).unwrap();
        for &t in &[-0.2, -0.03, 0.0, 0.011, 0.15] {
            let (p, d1, d2) = k.phi_012(t);
            assert_relative_eq!(p, k.phi(t), max_relative = 1e-15);
            assert_relative_eq!(d1, k.d1(t), max_relative = 1e-14, epsilon = 1e-300);
            assert_relative_eq!(d2, k.d2(t), max_relative = 1e-14, epsilon = 1e-300);
        }
    }
}
