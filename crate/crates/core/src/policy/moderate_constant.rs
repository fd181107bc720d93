//! Moderate-infection regime with a constant treatment rate.
//!
//! `I(t) = sum_i Z^{2^{i-1}/g} S^{2^{i-1}-1} g_i(t) eps^i` with `g_1(t) = h_1(T-t)` and
//! `g_{i+1}(t) = -(b^2 2^{i-1} / (2 sS^2 g)) int_t^T g_i(s)^2 exp(k_{i+1}(s-t)) ds`,
//! where `h_i(tau) = exp(k_i tau)`.

use crate::error::{Error, Result};
use crate::kernels::h_rate;
use crate::params::{DerivedParams, EpidemicParams};
use crate::policy::moderate_ou::{check_time, normalization_root};
use crate::quadrature::{try_integrate, Tolerance};

/// Highest order served: closed forms up to 3, one recursion step beyond.
pub const MAX_G_ORDER: u32 = 4;

/// Which statement of the first-order constant-rate correction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alpha1Form {
    /// `Z^{1/g} S g2 (b-r) / (h1 g sigma^2)`.
    #[default]
    Appendix,
    /// `Z^{1/g} S (b-r) / (h1 g2 g sigma^2)`.
    Theorem,
}

impl std::str::FromStr for Alpha1Form {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "appendix" => Ok(Alpha1Form::Appendix),
            "theorem" => Ok(Alpha1Form::Theorem),
            other => Err(format!("unknown alpha1 form {other:?} (theorem|appendix)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantControl {
    pub alpha0: f64,
    pub alpha1: f64,
}

impl ConstantControl {
    /// `alpha0 + eps alpha1` (order 2) or `alpha0` (order 1), unclamped.
    pub fn combined(&self, epsilon: f64, order: u8) -> f64 {
        if order >= 2 {
            self.alpha0 + epsilon * self.alpha1
        } else {
            self.alpha0
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModerateConstant {
    gamma: f64,
    horizon: f64,
    sigma: f64,
    theta: f64,
    epsilon: f64,
    s0: f64,
    /// `b^2 / (2 sS^2)`.
    coupling: f64,
    k: [f64; MAX_G_ORDER as usize + 1],
}

impl ModerateConstant {
    pub fn new(p: &EpidemicParams, d: &DerivedParams) -> Result<Self> {
        if !(p.sigma_s > 0.0) {
            return Err(Error::invalid(
                "sigma_S",
                "must be positive in the moderate-infection regime",
            ));
        }
        if !(p.gamma < 0.0) {
            return Err(Error::invalid("gamma", "gamma must be negative"));
        }
        let mut k = [0.0; MAX_G_ORDER as usize + 1];
        for (i, ki) in k.iter_mut().enumerate().skip(1) {
            *ki = h_rate(i as u32, p.gamma, d);
        }
        Ok(ModerateConstant {
            gamma: p.gamma,
            horizon: p.horizon,
            sigma: p.sigma,
            theta: d.theta_sharpe,
            epsilon: p.epsilon,
            s0: p.s0,
            coupling: p.beta * p.beta / (2.0 * p.sigma_s * p.sigma_s),
            k,
        })
    }

    pub fn rate(&self, order: u32) -> f64 {
        self.k[order as usize]
    }

    fn check_order(order: u32) -> Result<()> {
        if !(1..=MAX_G_ORDER).contains(&order) {
            return Err(Error::invalid(
                "order",
                format!("g_i is available for 1 <= i <= {MAX_G_ORDER}"),
            ));
        }
        Ok(())
    }

    /// `gamma (2 k1 - k2)`, the g2 denominator.
    fn den2(&self) -> f64 {
        self.gamma * (2.0 * self.k[1] - self.k[2])
    }

    /// g_i(t): closed forms for i <= 3, the recursion above.
    pub fn g_i(&self, order: u32, t: f64) -> Result<f64> {
        Self::check_order(order)?;
        check_time(t, self.horizon)?;
        let tau = self.horizon - t;
        let [_, k1, k2, k3, _] = self.k;
        Ok(match order {
            1 => (k1 * tau).exp(),
            2 => self.coupling * ((k2 * tau).exp() - (2.0 * k1 * tau).exp()) / self.den2(),
            3 => {
                let c = self.coupling / self.den2();
                let terms = [(1.0, 2.0 * k2), (-2.0, k2 + 2.0 * k1), (1.0, 4.0 * k1)];
                let sum: f64 = terms
                    .iter()
                    .map(|&(cj, kj)| cj * exp_difference_quotient(k3, kj, tau))
                    .sum();
                -2.0 * self.coupling / self.gamma * c * c * sum
            }
            _ => return self.g_i_recursion(order, t),
        })
    }

    /// g_i(t) by quadrature of the recursion over g_{i-1}.
    pub fn g_i_recursion(&self, order: u32, t: f64) -> Result<f64> {
        Self::check_order(order)?;
        check_time(t, self.horizon)?;
        if order == 1 {
            return self.g_i(1, t);
        }
        let i = order - 1;
        let scale = -self.coupling * 2f64.powi(i as i32 - 1) / self.gamma;
        let k_next = self.k[order as usize];
        let inner = |s: f64| -> Result<f64> {
            let gi = self.g_i(i, s)?;
            Ok(gi * gi * (k_next * (s - t)).exp())
        };
        let est = try_integrate(inner, t, self.horizon, Tolerance::relative(1e-13))?;
        Ok(scale * est.value)
    }

    pub fn h1(&self, tau: f64) -> f64 {
        (self.k[1] * tau).exp()
    }

    pub fn alpha0(&self) -> f64 {
        self.theta / (self.gamma * self.sigma)
    }

    /// Both terms of the constant-rate control at `w = Z^{1/gamma}`.
    pub fn control_from(&self, w: f64, s: f64, t: f64, form: Alpha1Form) -> Result<ConstantControl> {
        let alpha0 = self.alpha0();
        let h1 = self.h1(self.horizon - t);
        let g2 = self.g_i(2, t)?;
        let alpha1 = match form {
            Alpha1Form::Appendix => w * s * g2 * alpha0 / h1,
            Alpha1Form::Theorem => {
                if g2 == 0.0 {
                    return Err(Error::DomainError {
                        what: "g2 in the theorem form of alpha1",
                        value: g2,
                    });
                }
                w * s * alpha0 / (h1 * g2)
            }
        };
        Ok(ConstantControl { alpha0, alpha1 })
    }

    pub fn z0(&self) -> Result<f64> {
        let w = normalization_root(self.h1(self.horizon), self.g_i(2, 0.0)?, self.epsilon, self.s0)?;
        Ok(w.powf(self.gamma))
    }

    /// `w h1(T) + eps w^2 S0 g2(0) - 1` at `w = z^{1/gamma}`.
    pub fn normalization_residual(&self, z: f64) -> Result<f64> {
        let w = z.powf(1.0 / self.gamma);
        Ok(w * self.h1(self.horizon) + self.epsilon * w * w * self.s0 * self.g_i(2, 0.0)? - 1.0)
    }
}

/// `(exp(a tau) - exp(b tau)) / (a - b)`, continuous as `a -> b`.
fn exp_difference_quotient(a: f64, b: f64, tau: f64) -> f64 {
    let diff = a - b;
    if diff == 0.0 {
        return tau * (a * tau).exp();
    }
    (b * tau).exp() * (diff * tau).exp_m1() / diff
}

pub fn g_i_constant(order: u32, t: f64, p: &EpidemicParams, d: &DerivedParams) -> Result<f64> {
    ModerateConstant::new(p, d)?.g_i(order, t)
}

pub fn alpha_moderate_constant(
    z: f64,
    s: f64,
    t: f64,
    form: Alpha1Form,
    p: &EpidemicParams,
    d: &DerivedParams,
) -> Result<ConstantControl> {
    let m = ModerateConstant::new(p, d)?;
    m.control_from(z.powf(1.0 / p.gamma), s, t, form)
}

pub fn z0_moderate_const(p: &EpidemicParams, d: &DerivedParams) -> Result<f64> {
    ModerateConstant::new(p, d)?.z0()
}
