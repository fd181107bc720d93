//! Moderate-infection regime with an Ornstein–Uhlenbeck treatment rate.
//!
//! The second-order term `g` solves `(d/dt + L^{g/2}) g = b^2/(2 sS^2 g) H1(X, T-t)^2`
//! with `g(X, T) = 0`. Its bond-price representation is
//! `g = -int_t^T H2(X, tau-t) E^tau[u(X_tau, tau)] dtau`, where under the
//! tau-forward measure X is Gaussian with mean `x M(tau-t) + F1(tau-t)` and
//! variance `sx^2 F2(tau-t)`. The forward drift comes from `P(t, tau) = H2`,
//! so M and the moments use the kernels at `gamma/2`.

use crate::error::{Error, Result};
use crate::kernels::AffineKernel;
use crate::params::{DerivedParams, EpidemicParams};
use crate::quadrature::{kronrod_rule, try_integrate, Tolerance};

/// Relative tolerance of the outer tau integral.
pub const G_REL_TOL: f64 = 1e-12;

/// Intervals of the cumulative forward-moment table.
const MOMENT_TABLE_INTERVALS: usize = 8192;

/// Integrand node `exp(p x^2 + q x + r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticExp {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl QuadraticExp {
    pub fn value(&self, x: f64) -> f64 {
        (self.p * x * x + self.q * x + self.r).exp()
    }

    /// (value, d value / dx).
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let v = self.value(x);
        (v, v * (2.0 * self.p * x + self.q))
    }
}

/// Cumulative integrals `F1(d) = int_0^d M(w)(lx X + b3' A2'(w)) dw` and
/// `F2(d) = int_0^d M(w)^2 dw`, tabulated on a grid uniform in `s = ln(1 + d/d0)`
/// (fine where M varies fastest) and read back by cubic Hermite interpolation in s.
#[derive(Debug, Clone)]
struct MomentTable {
    step: f64,
    f1: Vec<f64>,
    f2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// Lag scale of the table grid.
const MOMENT_LAG_SCALE: f64 = 0.05;

impl MomentTable {
    fn build(len: f64, integrands: impl Fn(f64) -> Result<(f64, f64)>) -> Result<Self> {
        let n = MOMENT_TABLE_INTERVALS;
        let d0 = MOMENT_LAG_SCALE;
        let step = (len / d0).ln_1p() / n as f64;
        let lag = |k: usize| d0 * (k as f64 * step).exp_m1();
        let mut f1 = Vec::with_capacity(n + 1);
        let mut f2 = Vec::with_capacity(n + 1);
        let mut d1 = Vec::with_capacity(n + 1);
        let mut d2 = Vec::with_capacity(n + 1);
        let (mut c1, mut c2) = (0.0, 0.0);
        for k in 0..=n {
            let w = lag(k);
            let (i1, i2) = integrands(w)?;
            let jac = w + d0;
            f1.push(c1);
            f2.push(c2);
            d1.push(i1 * jac);
            d2.push(i2 * jac);
            if k < n {
                for (x, wt) in kronrod_rule(w, lag(k + 1)) {
                    let (i1, i2) = integrands(x)?;
                    c1 += wt * i1;
                    c2 += wt * i2;
                }
            }
        }
        Ok(MomentTable {
            step,
            f1,
            f2,
            d1,
            d2,
        })
    }

    fn eval(&self, delta: f64) -> (f64, f64) {
        let n = self.f1.len() - 1;
        let pos = ((delta / MOMENT_LAG_SCALE).max(0.0).ln_1p() / self.step).max(0.0);
        let k = (pos.floor() as usize).min(n - 1);
        let s = pos - k as f64;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let h = self.step;
        let herm = |f: &[f64], d: &[f64]| {
            h00 * f[k] + h10 * h * d[k] + h01 * f[k + 1] + h11 * h * d[k + 1]
        };
        (herm(&self.f1, &self.d1), herm(&self.f2, &self.d2))
    }
}

/// Everything the OU expansion controls need at one gamma.
#[derive(Debug, Clone)]
pub struct ModerateOu {
    gamma: f64,
    horizon: f64,
    sigma: f64,
    sigma_x: f64,
    epsilon: f64,
    s0: f64,
    x0: f64,
    full: AffineKernel,
    half: AffineKernel,
    /// `ln(b^2 / (2 sS^2 |g|))`, the log of the (positive) integrand prefactor.
    log_prefactor: f64,
    moments: MomentTable,
}

/// `M(d) = 2 th' exp(-th' d/2) / (2 th' - (b2' + th')(1 - exp(-th' d)))` at gamma/2.
fn m_tilde_at(half: &AffineKernel, delta: f64) -> Result<f64> {
    let (q, den) = half.denominator(delta)?;
    Ok(2.0 * half.coeffs.theta * q / den)
}

impl ModerateOu {
    pub fn new(p: &EpidemicParams, d: &DerivedParams) -> Result<Self> {
        if !(p.sigma_s > 0.0) {
            return Err(Error::invalid(
                "sigma_S",
                "must be positive in the moderate-infection regime",
            ));
        }
        if d.sigma_x > 0.0 {
            log::warn!(
                "sigma_x = {} > 0: the moderate OU expansion is stated for sigma_x < 0",
                d.sigma_x
            );
        }
        let full = AffineKernel::new(p.gamma, d)?;
        let half = AffineKernel::new(0.5 * p.gamma, d)?;
        let lx_xbar = d.lambda_x * d.xbar;
        let b3h = half.coeffs.b3;
        let moments = MomentTable::build(p.horizon, |w| {
            let m = m_tilde_at(&half, w)?;
            let a2 = half.a2(w)?;
            Ok((m * (lx_xbar + b3h * a2), m * m))
        })?;
        Ok(ModerateOu {
            gamma: p.gamma,
            horizon: p.horizon,
            sigma: p.sigma,
            sigma_x: d.sigma_x,
            epsilon: p.epsilon,
            s0: p.s0,
            x0: d.x0,
            full,
            half,
            log_prefactor: (p.beta * p.beta / (2.0 * p.sigma_s * p.sigma_s * p.gamma.abs())).ln(),
            moments,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Kernel A at gamma.
    pub fn kernel(&self) -> &AffineKernel {
        &self.full
    }

    /// Kernel A at gamma/2.
    pub fn half_kernel(&self) -> &AffineKernel {
        &self.half
    }

    pub fn m_tilde(&self, t: f64, tau: f64) -> Result<f64> {
        m_tilde_at(&self.half, tau - t)
    }

    /// `(F1, F2)` at lag `tau - t` from the table.
    pub fn moment_integrals(&self, delta: f64) -> (f64, f64) {
        self.moments.eval(delta)
    }

    /// Forward-measure mean of X(tau) given X(t) = x.
    pub fn m_y(&self, x: f64, t: f64, tau: f64) -> Result<f64> {
        let delta = tau - t;
        Ok(x * m_tilde_at(&self.half, delta)? + self.moments.eval(delta).0)
    }

    /// Forward-measure variance of X(tau) given X(t).
    pub fn v_y(&self, t: f64, tau: f64) -> f64 {
        self.sigma_x * self.sigma_x * self.moments.eval(tau - t).1
    }

    /// log H1(x, tau).
    pub fn log_h1(&self, x: f64, tau: f64) -> Result<f64> {
        Ok(self.full.exponent(x, tau)? / self.gamma)
    }

    /// The g integrand at (t, tau) as a quadratic exponential in x.
    pub fn node(&self, t: f64, tau: f64) -> Result<QuadraticExp> {
        let g = self.gamma;
        let delta = tau - t;
        let u = (self.horizon - tau).max(0.0);
        let kh = self.half.coefficients(delta)?;
        let kf = self.full.coefficients(u)?;
        let a = kf.a1 / g;
        let bb = 2.0 * kf.a2 / g;
        let c0 = 2.0 * kf.a3 / g;
        let mt = m_tilde_at(&self.half, delta)?;
        let (f1, f2) = self.moments.eval(delta);
        let v = self.sigma_x * self.sigma_x * f2;
        let den = 1.0 - 2.0 * a * v;
        if !(den > 0.0) {
            return Err(Error::ValidityConditionViolated { tau, margin: den });
        }
        Ok(QuadraticExp {
            p: kh.a1 / g + a * mt * mt / den,
            q: 2.0 * kh.a2 / g + (2.0 * a * f1 + bb) * mt / den,
            r: 2.0 * kh.a3 / g
                + c0
                + (a * f1 * f1 + bb * f1 + 0.5 * bb * bb * v) / den
                - 0.5 * den.ln()
                + self.log_prefactor,
        })
    }

    fn integral(&self, x: f64, t: f64, slope: bool) -> Result<f64> {
        check_time(t, self.horizon)?;
        let est = try_integrate(
            |tau| {
                let (v, dv) = self.node(t, tau)?.value_and_slope(x);
                Ok(if slope { dv } else { v })
            },
            t,
            self.horizon,
            Tolerance::relative(G_REL_TOL),
        )?;
        Ok(est.value)
    }

    pub fn g(&self, x: f64, t: f64) -> Result<f64> {
        self.integral(x, t, false)
    }

    pub fn dg_dx(&self, x: f64, t: f64) -> Result<f64> {
        self.integral(x, t, true)
    }

    /// Zeroth-order control, unclamped.
    pub fn alpha0(&self, x: f64, t: f64) -> Result<f64> {
        alpha0_with(&self.full, self.sigma, self.sigma_x, x, self.horizon - t)
    }

    /// First-order correction given `w = Z^{1/gamma}` and precomputed g, dg/dX.
    pub fn alpha1_from(&self, w: f64, s: f64, x: f64, t: f64, g: f64, gx: f64) -> Result<f64> {
        let (a1, a2) = self.full.a12(self.horizon - t)?;
        let h1 = self.log_h1(x, self.horizon - t)?.exp();
        let gm = self.gamma;
        let sx = self.sigma_x;
        Ok(w * s / (h1 * self.sigma) * (g * x / gm - sx * gx + sx * g / gm * (a1 * x + a2)))
    }

    pub fn alpha1(&self, z: f64, s: f64, x: f64, t: f64) -> Result<f64> {
        let g = self.g(x, t)?;
        let gx = self.dg_dx(x, t)?;
        self.alpha1_from(z.powf(1.0 / self.gamma), s, x, t, g, gx)
    }

    /// The bracket whose sign, times sign(sigma), gives the sign of alpha1.
    pub fn alpha1_sign_expression(&self, x: f64, t: f64) -> Result<f64> {
        let (a1, a2) = self.full.a12(self.horizon - t)?;
        let g = self.g(x, t)?;
        let gx = self.dg_dx(x, t)?;
        let sx = self.sigma_x;
        Ok(g / self.gamma * (x + sx * (a1 * x + a2)) - sx * gx)
    }

    /// Z(0) from the truncated normalization `eps w H1 + eps^2 w^2 S0 g = eps`, `w = Z^{1/gamma}`.
    pub fn z0(&self) -> Result<f64> {
        let h1 = self.log_h1(self.x0, self.horizon)?.exp();
        let g = self.g(self.x0, 0.0)?;
        Ok(normalization_root(h1, g, self.epsilon, self.s0)?.powf(self.gamma))
    }

    /// `eps w H1 + eps^2 w^2 S0 g - eps` at `w = z^{1/gamma}`.
    pub fn normalization_residual(&self, z: f64) -> Result<f64> {
        let h1 = self.log_h1(self.x0, self.horizon)?.exp();
        let g = self.g(self.x0, 0.0)?;
        let w = z.powf(1.0 / self.gamma);
        let e = self.epsilon;
        Ok(e * w * h1 + e * e * w * w * self.s0 * g - e)
    }
}

pub(crate) fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::invalid("t", format!("must lie in [0, {horizon}], got {t}")));
    }
    Ok(())
}

/// Positive root w of `eps S g w^2 + h w - 1 = 0`, in the cancellation-free form.
pub fn normalization_root(h: f64, g: f64, epsilon: f64, s: f64) -> Result<f64> {
    let disc = h * h + 4.0 * epsilon * s * g;
    if disc < 0.0 {
        return Err(Error::NegativeQuadraticDiscriminant { discriminant: disc });
    }
    Ok(2.0 / (h + disc.sqrt()))
}

fn alpha0_with(k: &AffineKernel, sigma: f64, sigma_x: f64, x: f64, tau: f64) -> Result<f64> {
    let g = k.gamma();
    let (a1, a2) = k.a12(tau)?;
    Ok(x / (g * sigma) - sigma_x / (g * sigma) * (a1 * x + a2))
}

/// Zeroth-order OU control (shared by the low and moderate regimes), unclamped.
pub fn alpha0_ou(x: f64, t: f64, p: &EpidemicParams, d: &DerivedParams) -> Result<f64> {
    check_time(t, p.horizon)?;
    let k = AffineKernel::new(p.gamma, d)?;
    alpha0_with(&k, p.sigma, d.sigma_x, x, p.horizon - t)
}

pub fn m_tilde(t: f64, tau: f64, gamma: f64, d: &DerivedParams) -> Result<f64> {
    if tau < t {
        return Err(Error::invalid("tau", "must not precede t"));
    }
    m_tilde_at(&AffineKernel::new(0.5 * gamma, d)?, tau - t)
}

pub fn g_moderate(x: f64, t: f64, p: &EpidemicParams, d: &DerivedParams) -> Result<f64> {
    ModerateOu::new(p, d)?.g(x, t)
}

#[allow(non_snake_case)]
pub fn dg_dX(x: f64, t: f64, p: &EpidemicParams, d: &DerivedParams) -> Result<f64> {
    ModerateOu::new(p, d)?.dg_dx(x, t)
}

pub fn alpha1_ou(
    z: f64,
    s: f64,
    x: f64,
    t: f64,
    p: &EpidemicParams,
    d: &DerivedParams,
) -> Result<f64> {
    ModerateOu::new(p, d)?.alpha1(z, s, x, t)
}

pub fn z0_moderate_ou(p: &EpidemicParams, d: &DerivedParams) -> Result<f64> {
    ModerateOu::new(p, d)?.z0()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive;
    use crate::quadrature::integrate;

    fn setup(gamma: f64) -> (EpidemicParams, DerivedParams, ModerateOu) {
        let p = EpidemicParams {
            sigma_s: 0.05,
            ..EpidemicParams::default().with_gamma(gamma)
        };
        let d = derive(&p).unwrap();
        let m = ModerateOu::new(&p, &d).unwrap();
        (p, d, m)
    }

    #[test]
    fn requires_transmission_noise() {
        let p = EpidemicParams::default();
        let d = derive(&p).unwrap();
        assert!(ModerateOu::new(&p, &d).is_err());
    }

    #[test]
    fn m_tilde_limits() {
        let (_, d, m) = setup(-1.0);
        assert_eq!(m.m_tilde(3.0, 3.0).unwrap(), 1.0);
        let k = AffineKernel::new(-0.5, &d).unwrap();
        let th = k.coeffs.theta;
        let far = m_tilde(0.0, 50.0, -1.0, &d).unwrap();
        let direct = 2.0 * th * (-0.5 * th * 50.0).exp() / (2.0 * th - (k.coeffs.b2 + th));
        assert!((far / direct - 1.0).abs() < 1e-12);
        let mut prev = 1.0;
        for i in 1..=2100 {
            let v = m.m_tilde(0.0, i as f64 * 0.01).unwrap();
            assert!(v.is_finite() && v > 0.0 && v <= prev);
            prev = v;
        }
    }

    #[test]
    fn moment_table_matches_direct_quadrature() {
        let (_, d, m) = setup(-1.0);
        let half = *m.half_kernel();
        let lx = d.lambda_x * d.xbar;
        for delta in [0.003, 0.1, 0.77, 5.0, 20.999] {
            let f1 = integrate(
                |w| {
                    let mt = m_tilde_at(&half, w).unwrap();
                    mt * (lx + half.coeffs.b3 * half.a2(w).unwrap())
                },
                0.0,
                delta,
                Tolerance::absolute(1e-14),
            )
            .unwrap()
            .value;
            let f2 = integrate(
                |w| m_tilde_at(&half, w).unwrap().powi(2),
                0.0,
                delta,
                Tolerance::absolute(1e-14),
            )
            .unwrap()
            .value;
            let (t1, t2) = m.moment_integrals(delta);
            assert!((t1 - f1).abs() < 1e-13, "F1({delta}): {t1} vs {f1}");
            assert!((t2 - f2).abs() < 1e-13, "F2({delta}): {t2} vs {f2}");
        }
    }

    #[test]
    fn g_vanishes_at_horizon_and_is_positive() {
        let (p, d, m) = setup(-1.0);
        assert_eq!(m.g(d.x0, p.horizon).unwrap(), 0.0);
        assert_eq!(m.dg_dx(d.x0, p.horizon).unwrap(), 0.0);
        for t in [0.0, 5.0, 20.0] {
            for x in [-2.0, d.xbar, 0.0, 1.0] {
                assert!(m.g(x, t).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn g_solves_its_pde() {
        // (d/dt + L^{g/2}) g = b^2/(2 sS^2 g) H1^2, checked by finite differences.
        let (p, d, m) = setup(-1.0);
        let gh = 0.5 * p.gamma;
        let sx = d.sigma_x;
        for (x, t) in [(0.0, 3.0), (-1.0, 10.0), (0.5, 15.0)] {
            let h = 1e-3;
            let g0 = m.g(x, t).unwrap();
            let gt = (m.g(x, t + h).unwrap() - m.g(x, t - h).unwrap()) / (2.0 * h);
            let gp = m.g(x + h, t).unwrap();
            let gn = m.g(x - h, t).unwrap();
            let gx = (gp - gn) / (2.0 * h);
            let gxx = (gp - 2.0 * g0 + gn) / (h * h);
            let drift = ((gh - 1.0) / gh * sx - d.lambda_x) * x + d.lambda_x * d.xbar;
            let rate = x * x * 0.5 / gh * (1.0 / gh - 1.0) + d.mu * (1.0 - 1.0 / gh);
            let lhs = gt + 0.5 * sx * sx * gxx + drift * gx + rate * g0;
            let h1 = m.log_h1(x, p.horizon - t).unwrap().exp();
            let rhs = p.beta * p.beta / (2.0 * p.sigma_s * p.sigma_s * p.gamma) * h1 * h1;
            assert!(((lhs - rhs) / rhs).abs() < 1e-4, "x={x} t={t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn alpha0_boundaries() {
        let (p, d, m) = setup(-1.0);
        let x = 0.7;
        assert_eq!(m.alpha0(x, p.horizon).unwrap(), x / (p.gamma * p.sigma));
        assert_eq!(m.alpha0(0.0, p.horizon).unwrap(), 0.0);
        let (a1, a2) = m.kernel().a12(p.horizon).unwrap();
        let xb = d.xbar;
        let direct = xb / (p.gamma * p.sigma) - d.sigma_x / (p.gamma * p.sigma) * (a1 * xb + a2);
        let got = alpha0_ou(xb, 0.0, &p, &d).unwrap();
        assert!((got - direct).abs() < 1e-15);
        let inner = xb - d.sigma_x * (a1 * xb + a2);
        assert_eq!(got.signum(), (-inner).signum());
    }

    #[test]
    fn alpha1_vanishes_at_horizon() {
        let (p, d, m) = setup(-1.0);
        assert_eq!(m.alpha1(2.0, 0.9, d.x0, p.horizon).unwrap(), 0.0);
    }

    #[test]
    fn z0_normalization_and_small_epsilon_limit() {
        let (p, d, m) = setup(-1.0);
        let z = m.z0().unwrap();
        assert!(m.normalization_residual(z).unwrap().abs() <= 1e-6 * p.epsilon);

        let tiny = EpidemicParams {
            epsilon: 1e-6,
            s0: 1.0 - 1e-6,
            ..p
        };
        let m = ModerateOu::new(&tiny, &d).unwrap();
        let limit = m.log_h1(d.x0, p.horizon).unwrap().exp().powf(-p.gamma);
        assert!((m.z0().unwrap() / limit - 1.0).abs() < 1e-4);
    }

    #[test]
    fn normalization_root_degenerate_g() {
        let w = normalization_root(3.0, 0.0, 0.01, 0.99).unwrap();
        assert_eq!(w, 1.0 / 3.0);
        assert!(normalization_root(1.0, -1e6, 0.5, 1.0).is_err());
    }
}
