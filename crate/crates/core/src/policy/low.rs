//! Low-infection regime: the clamped constant control and its dual.

use crate::params::{derive, EpidemicParams};
use crate::Result;

/// Optimal constant treatment share, clamped to [0, 1].
pub fn alpha_low_constant(p: &EpidemicParams) -> Result<f64> {
    let d = derive(p)?;
    Ok(alpha_from_nu(p, d.r - d.b, 0.0).clamp(0.0, 1.0))
}

/// Unconstrained control of the dual problem at penalty `nu`.
pub fn alpha_from_nu(p: &EpidemicParams, r_minus_b: f64, nu: f64) -> f64 {
    (r_minus_b - nu) / (p.sigma * p.sigma * p.gamma.abs())
}

/// Support function of the control set [0, 1].
pub fn support(nu: f64) -> f64 {
    nu.max(0.0)
}

/// `-((1+rho)/2)(theta + nu/sigma)^2 + delta(nu)` with `rho = (1-gamma)/gamma`.
pub fn dual_objective(p: &EpidemicParams, theta: f64, nu: f64) -> f64 {
    let rho = (1.0 - p.gamma) / p.gamma;
    let z = theta + nu / p.sigma;
    -0.5 * (1.0 + rho) * z * z + support(nu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub nu: f64,
    pub alpha: f64,
}

/// Closed-form minimizer of the dual objective.
///
/// Three branches: `r-b < 0` gives `nu = r-b`; `r-b > sigma^2|gamma|` gives
/// `nu = r-b - sigma^2|gamma|`; in between the minimum sits on the kink `nu = 0`.
pub fn dual_nu(p: &EpidemicParams) -> Result<DualSolution> {
    let d = derive(p)?;
    let rb = d.r - d.b;
    let cap = p.sigma * p.sigma * p.gamma.abs();
    let (nu, alpha) = if rb < 0.0 {
        (rb, 0.0)
    } else if rb > cap {
        (rb - cap, 1.0)
    } else {
        (0.0, rb / cap)
    };
    Ok(DualSolution { nu, alpha })
}
