//! Riccati coefficients, the affine kernels A1, A2, A3 and the H/h kernels.
//!
//! A3 is the integral of `sx2/(2g) A2^2 + lx X A2 + sx2/2 A1 + (g-1) mu`.
//! Its closed form comes from the substitution `u = exp(-theta tau / 2)`,
//! under which the Riccati denominator is `m + p u^2` with `m = theta - b2`,
//! `p = theta + b2` and `m p = -4 b1 b3`; the integrands are then rational in u.

use crate::error::{Error, Result};
use crate::params::DerivedParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiCoeffs {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub theta: f64,
    pub gamma_eff: f64,
}

pub fn riccati_coeffs(gamma_eff: f64, d: &DerivedParams) -> Result<RiccatiCoeffs> {
    if !(gamma_eff < 0.0) {
        return Err(Error::invalid("gamma", "gamma must be negative"));
    }
    let g = gamma_eff;
    let b1 = (1.0 - g) / g;
    let b2 = 2.0 * ((g - 1.0) / g * d.sigma_x - d.lambda_x);
    let b3 = d.sigma_x * d.sigma_x / g;
    let disc = b2 * b2 - 4.0 * b1 * b3;
    if disc < 0.0 {
        return Err(Error::NegativeDiscriminant {
            gamma_eff,
            discriminant: disc,
        });
    }
    Ok(RiccatiCoeffs {
        b1,
        b2,
        b3,
        theta: disc.sqrt(),
        gamma_eff,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub tau: f64,
    pub gamma_eff: f64,
}

/// A1, A2, A3 at one gamma, with every tau-independent constant precomputed.
#[derive(Debug, Clone, Copy)]
pub struct AffineKernel {
    pub coeffs: RiccatiCoeffs,
    m: f64,
    p: f64,
    /// 4 lx X b1 / theta.
    c2: f64,
    lx_xbar: f64,
    sx2: f64,
    mu: f64,
}

impl AffineKernel {
    pub fn new(gamma_eff: f64, d: &DerivedParams) -> Result<Self> {
        let coeffs = riccati_coeffs(gamma_eff, d)?;
        let RiccatiCoeffs {
            b1, b2, b3, theta, ..
        } = coeffs;
        if theta <= 0.0 {
            return Err(Error::DomainError {
                what: "theta (repeated Riccati root)",
                value: theta,
            });
        }
        // Take the cancellation-free one of theta -/+ b2 and recover the other from m p = -4 b1 b3.
        let (m, p) = if b2 <= 0.0 {
            let m = theta - b2;
            (m, -4.0 * b1 * b3 / m)
        } else {
            let p = theta + b2;
            (-4.0 * b1 * b3 / p, p)
        };
        let lx_xbar = d.lambda_x * d.xbar;
        Ok(AffineKernel {
            coeffs,
            m,
            p,
            c2: 4.0 * lx_xbar * b1 / theta,
            lx_xbar,
            sx2: d.sigma_x * d.sigma_x,
            mu: d.mu,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.coeffs.gamma_eff
    }

    /// `(exp(-theta tau / 2), 2 theta - (b2 + theta)(1 - exp(-theta tau)))`.
    pub fn denominator(&self, tau: f64) -> Result<(f64, f64)> {
        let th = self.coeffs.theta;
        let q = (-0.5 * th * tau).exp();
        let den = 2.0 * th + self.p * (-th * tau).exp_m1();
        if !(den > 0.0) {
            return Err(Error::DomainError {
                what: "Riccati denominator 2 theta - (b2 + theta)(1 - exp(-theta tau))",
                value: den,
            });
        }
        Ok((q, den))
    }

    /// (A1, A2) at tau.
    pub fn a12(&self, tau: f64) -> Result<(f64, f64)> {
        let (_, den) = self.denominator(tau)?;
        let th = self.coeffs.theta;
        let one_minus_e = -(-th * tau).exp_m1();
        let one_minus_q = -(-0.5 * th * tau).exp_m1();
        Ok((
            2.0 * self.coeffs.b1 * one_minus_e / den,
            self.c2 * one_minus_q * one_minus_q / den,
        ))
    }

    pub fn a1(&self, tau: f64) -> Result<f64> {
        self.a12(tau).map(|(a1, _)| a1)
    }

    pub fn a2(&self, tau: f64) -> Result<f64> {
        self.a12(tau).map(|(_, a2)| a2)
    }

    /// `ln((m+p)/(m+p q^2)) / p`, continuous through p = 0.
    fn log_ratio_over_p(&self, q: f64) -> f64 {
        let (m, p) = (self.m, self.p);
        let q2 = q * q;
        if p == 0.0 {
            return (1.0 - q2) / m;
        }
        (p * (1.0 - q2) / (m + p * q2)).ln_1p() / p
    }

    /// `integral over [q, 1] of du / (m + p u^2)`.
    fn k0(&self, q: f64) -> f64 {
        let (m, p) = (self.m, self.p);
        if p == 0.0 {
            return (1.0 - q) / m;
        }
        let s = -p / m;
        if s > 0.0 {
            let a = s.sqrt();
            if m > 0.0 {
                (a.atanh() - (a * q).atanh()) / (m * a)
            } else {
                // a > 1 here and m + p u^2 keeps one sign on [q, 1].
                (((1.0 + a) * (1.0 - a * q)) / ((1.0 - a) * (1.0 + a * q)))
                    .abs()
                    .ln()
                    / (2.0 * m * a)
            }
        } else {
            let a = (-s).sqrt();
            (a.atan() - (a * q).atan()) / (m * a)
        }
    }

    /// A3 at tau by the closed form.
    pub fn a3(&self, tau: f64) -> Result<f64> {
        if tau == 0.0 {
            return Ok(0.0);
        }
        let (q, den) = self.denominator(tau)?;
        let (m, p) = (self.m, self.p);
        let th = self.coeffs.theta;
        let g = self.gamma();
        let half_th_tau = 0.5 * th * tau;
        let lr = self.log_ratio_over_p(q);
        let q1 = 0.5 * lr;
        let k0 = self.k0(q);

        let j1 = 2.0 * self.coeffs.b1 * tau / m - 4.0 * self.coeffs.b1 / m * lr;
        let j2 = self.c2 * (2.0 / th) * (half_th_tau / m + (m - p) / m * q1 - 2.0 * k0);
        let j22 = if self.sx2 == 0.0 || p == 0.0 {
            0.0
        } else {
            let q2 = q * q;
            let p1 = (1.0 - q2) / (2.0 * den * (m + p));
            let p0 = 1.0 / (2.0 * m * (m + p)) - q / (2.0 * m * den) + k0 / (2.0 * m);
            let bracket = half_th_tau / (m * m)
                + (-m / p + 6.0 - p / m) * p1
                + 4.0 * (m - p) / p * p0
                + (1.0 / p - p / (m * m)) * q1
                - 4.0 * k0 / p;
            self.c2 * self.c2 * (2.0 / th) * bracket
        };
        let a3 = self.sx2 / (2.0 * g) * j22
            + self.lx_xbar * j2
            + 0.5 * self.sx2 * j1
            + (g - 1.0) * self.mu * tau;
        if !a3.is_finite() {
            return Err(Error::DomainError {
                what: "A3 closed form",
                value: a3,
            });
        }
        Ok(a3)
    }

    pub fn coefficients(&self, tau: f64) -> Result<KernelCoefficients> {
        let (a1, a2) = self.a12(tau)?;
        Ok(KernelCoefficients {
            a1,
            a2,
            a3: self.a3(tau)?,
            tau,
            gamma_eff: self.gamma(),
        })
    }

    /// `A1 x^2 / 2 + A2 x + A3`.
    pub fn exponent(&self, x: f64, tau: f64) -> Result<f64> {
        let k = self.coefficients(tau)?;
        Ok(0.5 * k.a1 * x * x + k.a2 * x + k.a3)
    }
}

#[allow(non_snake_case)]
pub fn A_coeffs(tau: f64, gamma_eff: f64, d: &DerivedParams) -> Result<KernelCoefficients> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau", "must be non-negative"));
    }
    AffineKernel::new(gamma_eff, d)?.coefficients(tau)
}

/// H kernel of the given order. Order 0 carries the extra `(1-g)(mu+r) tau` term.
pub struct HKernel {
    order: u32,
    gamma: f64,
    kernel: AffineKernel,
    drift: f64,
}

impl HKernel {
    pub fn new(order: u32, gamma: f64, d: &DerivedParams) -> Result<Self> {
        let gamma_eff = if order == 0 {
            gamma
        } else {
            gamma / order as f64
        };
        Ok(HKernel {
            order,
            gamma,
            kernel: AffineKernel::new(gamma_eff, d)?,
            drift: if order == 0 {
                (1.0 - gamma) * (d.mu + d.r)
            } else {
                0.0
            },
        })
    }

    pub fn affine(&self) -> &AffineKernel {
        &self.kernel
    }

    pub fn log_value(&self, x: f64, tau: f64) -> Result<f64> {
        let scale = self.order.max(1) as f64 / self.gamma;
        Ok(scale * (self.kernel.exponent(x, tau)? + self.drift * tau))
    }

    pub fn value(&self, x: f64, tau: f64) -> Result<f64> {
        self.log_value(x, tau).map(f64::exp)
    }
}

#[allow(non_snake_case)]
pub fn kernel_H(order: u32, x: f64, tau: f64, gamma: f64, d: &DerivedParams) -> Result<f64> {
    HKernel::new(order, gamma, d)?.value(x, tau)
}

/// `(a_{i,1}, a_{i,2})` of the constant-rate kernels.
pub fn a_i(order: u32, gamma: f64, d: &DerivedParams) -> (f64, f64) {
    let ge = gamma / 2f64.powi(order as i32 - 1);
    ((1.0 - ge) / ge, (ge - 1.0) * d.mu)
}

/// Growth rate k_i with `h_i(tau) = exp(k_i tau)`.
pub fn h_rate(order: u32, gamma: f64, d: &DerivedParams) -> f64 {
    assert!(order >= 1, "h kernels start at order 1");
    let (a1, a2) = a_i(order, gamma, d);
    let th = d.theta_sharpe;
    2f64.powi(order as i32 - 1) / gamma * (0.5 * a1 * th * th + a2)
}

pub fn kernel_h(order: u32, tau: f64, gamma: f64, d: &DerivedParams) -> f64 {
    (h_rate(order, gamma, d) * tau).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive, EpidemicParams};
    use crate::quadrature::quadrature;

    fn table() -> DerivedParams {
        derive(&EpidemicParams::default()).unwrap()
    }

    #[test]
    fn riccati_reference_values() {
        let c = riccati_coeffs(-1.0, &table()).unwrap();
        assert_eq!(c.b1, -2.0);
        assert!((c.b2 + 12.083443).abs() < 1e-5);
        assert!((c.b3 + 6.949871).abs() < 1e-5);
        assert!((c.theta - 9.508450).abs() < 1e-5);
        assert!((c.theta * c.theta - (c.b2 * c.b2 - 4.0 * c.b1 * c.b3)).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_x_collapses_discriminant() {
        let d = DerivedParams {
            sigma_x: 0.0,
            ..table()
        };
        let c = riccati_coeffs(-1.0, &d).unwrap();
        assert_eq!(c.b3, 0.0);
        assert_eq!(c.theta, c.b2.abs());
        let k = AffineKernel::new(-1.0, &d).unwrap();
        assert!(k.a3(3.0).unwrap().is_finite());
    }

    #[test]
    fn negative_discriminant_rejected() {
        // b1 b3 > 0 needs gamma < 0 and large sigma_x with weak mean reversion.
        let d = DerivedParams {
            sigma_x: 3.0,
            lambda_x: 6.0,
            ..table()
        };
        let r = riccati_coeffs(-1.0, &d);
        assert!(matches!(r, Err(Error::NegativeDiscriminant { .. })), "{r:?}");
    }

    #[test]
    fn kernels_vanish_at_zero() {
        let k = A_coeffs(0.0, -2.0, &table()).unwrap();
        assert_eq!((k.a1, k.a2, k.a3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn a3_reference_values() {
        // Independent ODE integration (RK45, rtol 1e-12).
        let d = table();
        for (g, tau, want) in [
            (-1.0, 1.0, -1.2108787469594624),
            (-1.0, 21.0, -26.734865822096435),
            (-2.0, 21.0, -32.14720728860886),
            (-5.0, 21.0, -50.98132949810158),
        ] {
            let got = AffineKernel::new(g, &d).unwrap().a3(tau).unwrap();
            assert!((got - want).abs() < 1e-9, "g={g} tau={tau}: {got} vs {want}");
        }
    }

    #[test]
    fn a3_matches_quadrature_off_table() {
        // Exercise the atan branch (p/m > 0) and the m < 0 branch.
        for (sx, lx, xb) in [(0.8, 0.5, 0.7), (-0.3, 2.0, -1.2), (1.5, 0.3, 0.4)] {
            let d = DerivedParams {
                sigma_x: sx,
                lambda_x: lx,
                xbar: xb,
                ..table()
            };
            for g in [-0.5, -3.0] {
                let Ok(k) = AffineKernel::new(g, &d) else { continue };
                for tau in [0.3, 2.0, 7.0] {
                    let Ok(a3) = k.a3(tau) else { continue };
                    let integrand = |s: f64| {
                        let (a1, a2) = k.a12(s).unwrap();
                        sx * sx / (2.0 * g) * a2 * a2 + lx * xb * a2 + 0.5 * sx * sx * a1
                            + (g - 1.0) * d.mu
                    };
                    let q = quadrature(integrand, 0.0, tau, 1e-12).unwrap();
                    assert!((a3 - q).abs() < 1e-9, "sx={sx} g={g} tau={tau}: {a3} vs {q}");
                }
            }
        }
    }

    #[test]
    fn small_tau_slope() {
        let d = table();
        let h = 1e-7;
        for g in [-1.0, -5.0] {
            let a1 = AffineKernel::new(g, &d).unwrap().a1(h).unwrap();
            assert!((a1 / h - (1.0 - g) / g).abs() < 1e-5);
        }
    }

    #[test]
    fn h_kernels_start_at_one() {
        let d = table();
        for x in [-2.0, 0.0, 1.5] {
            assert_eq!(kernel_H(1, x, 0.0, -1.0, &d).unwrap(), 1.0);
            assert_eq!(kernel_H(2, x, 0.0, -3.0, &d).unwrap(), 1.0);
        }
        for i in 1..5 {
            assert_eq!(kernel_h(i, 0.0, -2.0, &d), 1.0);
        }
    }

    #[test]
    fn a_i_reference_values() {
        let d = table();
        assert_eq!(a_i(1, -1.0, &d).0, -2.0);
        assert_eq!(a_i(2, -1.0, &d).0, -3.0);
    }
}
