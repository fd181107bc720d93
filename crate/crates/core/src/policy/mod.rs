//! Optimal treatment controls and their evaluation along a path.

pub mod gtable;
pub mod low;
pub mod moderate_constant;
pub mod moderate_ou;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::AffineKernel;
use crate::params::{DerivedParams, EpidemicParams};

pub use gtable::GTable;
pub use low::{alpha_low_constant, dual_nu, DualSolution};
pub use moderate_constant::{
    alpha_moderate_constant, g_i_constant, z0_moderate_const, Alpha1Form, ConstantControl,
    ModerateConstant,
};
pub use moderate_ou::{
    alpha0_ou, alpha1_ou, dg_dX, g_moderate, m_tilde, z0_moderate_ou, ModerateOu, QuadraticExp,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    NoTreatment,
    FullTreatment,
    FixedConstant(f64),
    /// Clamped constant control of the low-infection regime.
    LowConstantOptimal,
    /// Zeroth-order OU control.
    LowOuZeroOrder,
    /// `alpha0 + eps alpha1` (order 2) or `alpha0` (order 1) with an OU rate.
    ModerateOuExpansion { order: u8 },
    /// Same expansion with a constant rate.
    ModerateConstantExpansion { order: u8, form: Alpha1Form },
}

impl PolicySpec {
    /// Replaces the expansion order and alpha1 form where they apply.
    pub fn with_expansion(self, order: u8, form: Alpha1Form) -> Self {
        match self {
            PolicySpec::ModerateOuExpansion { .. } => PolicySpec::ModerateOuExpansion { order },
            PolicySpec::ModerateConstantExpansion { .. } => {
                PolicySpec::ModerateConstantExpansion { order, form }
            }
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicySpec::FixedConstant(a) if !(0.0..=1.0).contains(&a) => {
                Err(Error::invalid("policy", format!("fixed level {a} outside [0, 1]")))
            }
            PolicySpec::ModerateOuExpansion { order }
            | PolicySpec::ModerateConstantExpansion { order, .. }
                if !(1..=2).contains(&order) =>
            {
                Err(Error::invalid("expansion order", "must be 1 or 2"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::NoTreatment => write!(f, "none"),
            PolicySpec::FullTreatment => write!(f, "full"),
            PolicySpec::FixedConstant(a) => write!(f, "fixed-{a}"),
            PolicySpec::LowConstantOptimal => write!(f, "low-constant"),
            PolicySpec::LowOuZeroOrder => write!(f, "low-ou"),
            PolicySpec::ModerateOuExpansion { order } => write!(f, "moderate-ou-o{order}"),
            PolicySpec::ModerateConstantExpansion { order, form } => {
                let form = match form {
                    Alpha1Form::Appendix => "appendix",
                    Alpha1Form::Theorem => "theorem",
                };
                write!(f, "moderate-constant-o{order}-{form}")
            }
        }
    }
}

impl FromStr for PolicySpec {
    type Err = String;

    /// Accepts `none`, `full`, `fixed-<level>`, `low-constant`, `low-ou`,
    /// `moderate-ou` and `moderate-constant`, plus the suffixed forms `Display` writes.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let spec = match s {
            "none" => PolicySpec::NoTreatment,
            "full" => PolicySpec::FullTreatment,
            "low-constant" => PolicySpec::LowConstantOptimal,
            "low-ou" => PolicySpec::LowOuZeroOrder,
            "moderate-ou" => PolicySpec::ModerateOuExpansion { order: 2 },
            "moderate-constant" => PolicySpec::ModerateConstantExpansion {
                order: 2,
                form: Alpha1Form::Appendix,
            },
            _ => {
                if let Some(level) = s.strip_prefix("fixed-") {
                    let a: f64 = level.parse().map_err(|_| format!("bad level in {s:?}"))?;
                    PolicySpec::FixedConstant(a)
                } else if let Some(rest) = s.strip_prefix("moderate-ou-o") {
                    let order = rest.parse().map_err(|_| format!("bad order in {s:?}"))?;
                    PolicySpec::ModerateOuExpansion { order }
                } else if let Some(rest) = s.strip_prefix("moderate-constant-o") {
                    let (order, form) = rest.split_once('-').ok_or(format!("bad policy {s:?}"))?;
                    PolicySpec::ModerateConstantExpansion {
                        order: order.parse().map_err(|_| format!("bad order in {s:?}"))?,
                        form: form.parse()?,
                    }
                } else {
                    return Err(format!(
                        "unknown policy {s:?} (none, full, fixed-<level>, low-constant, low-ou, moderate-ou, moderate-constant)"
                    ));
                }
            }
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

/// Auxiliary process of the expansion controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionState {
    pub z: f64,
    pub terms_used: u32,
}

/// What drives `d ln Z`: the OU state or the constant market price of risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZDriver {
    TreatmentState,
    Constant(f64),
}

/// State a control is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub ln_z: f64,
}

#[derive(Debug, Clone)]
enum Rule {
    Constant(f64),
    LowOu {
        kernel: AffineKernel,
        sigma: f64,
        sigma_x: f64,
        horizon: f64,
    },
    ModerateOu {
        model: Box<ModerateOu>,
        table: Box<GTable>,
        order: u8,
        epsilon: f64,
    },
    ModerateConstant {
        model: ModerateConstant,
        order: u8,
        form: Alpha1Form,
        epsilon: f64,
    },
}

/// A policy with everything it needs precomputed; shared read-only across paths.
#[derive(Debug, Clone)]
pub struct Controller {
    spec: PolicySpec,
    rule: Rule,
    expansion: Option<(ExpansionState, ZDriver)>,
    gamma: f64,
}

impl Controller {
    pub fn new(spec: PolicySpec, p: &EpidemicParams, d: &DerivedParams) -> Result<Self> {
        spec.validate()?;
        let mut expansion = None;
        let rule = match spec {
            PolicySpec::NoTreatment => Rule::Constant(0.0),
            PolicySpec::FullTreatment => Rule::Constant(1.0),
            PolicySpec::FixedConstant(a) => Rule::Constant(a),
            PolicySpec::LowConstantOptimal => Rule::Constant(alpha_low_constant(p)?),
            PolicySpec::LowOuZeroOrder => {
                let kernel = AffineKernel::new(p.gamma, d)?;
                // the denominator is monotone in tau and positive at 0, so T covers the horizon
                kernel.denominator(p.horizon)?;
                Rule::LowOu {
                    kernel,
                    sigma: p.sigma,
                    sigma_x: d.sigma_x,
                    horizon: p.horizon,
                }
            }
            PolicySpec::ModerateOuExpansion { order } => {
                let model = ModerateOu::new(p, d)?;
                let table = GTable::build(&model, d.xbar, gtable::ROW_SPACING)?;
                let z = model.z0()?;
                expansion = Some((ExpansionState { z, terms_used: 2 }, ZDriver::TreatmentState));
                Rule::ModerateOu {
                    model: Box::new(model),
                    table: Box::new(table),
                    order,
                    epsilon: p.epsilon,
                }
            }
            PolicySpec::ModerateConstantExpansion { order, form } => {
                let model = ModerateConstant::new(p, d)?;
                let z = model.z0()?;
                expansion = Some((
                    ExpansionState { z, terms_used: 2 },
                    ZDriver::Constant(d.theta_sharpe),
                ));
                Rule::ModerateConstant {
                    model,
                    order,
                    form,
                    epsilon: p.epsilon,
                }
            }
        };
        Ok(Controller {
            spec,
            rule,
            expansion,
            gamma: p.gamma,
        })
    }

    pub fn spec(&self) -> PolicySpec {
        self.spec
    }

    /// Initial expansion state and Z driver, for expansion policies.
    pub fn expansion(&self) -> Option<(ExpansionState, ZDriver)> {
        self.expansion
    }

    /// Unclamped control.
    pub fn evaluate(&self, input: &ControlInput) -> Result<f64> {
        match &self.rule {
            Rule::Constant(a) => Ok(*a),
            Rule::LowOu {
                kernel,
                sigma,
                sigma_x,
                horizon,
            } => {
                let g = kernel.gamma();
                let (a1, a2) = kernel.a12((horizon - input.t).max(0.0))?;
                let x = input.x;
                Ok(x / (g * sigma) - sigma_x / (g * sigma) * (a1 * x + a2))
            }
            Rule::ModerateOu {
                model,
                table,
                order,
                epsilon,
            } => {
                let t = input.t.min(model.horizon());
                let a0 = model.alpha0(input.x, t)?;
                if *order < 2 {
                    return Ok(a0);
                }
                let (g, gx) = table.eval(input.x, t);
                let w = (input.ln_z / self.gamma).exp();
                let a1 = model.alpha1_from(w, input.s, input.x, t, g, gx)?;
                Ok(a0 + epsilon * a1)
            }
            Rule::ModerateConstant {
                model,
                order,
                form,
                epsilon,
            } => {
                let w = (input.ln_z / self.gamma).exp();
                let c = model.control_from(w, input.s, input.t, *form)?;
                Ok(c.combined(*epsilon, *order))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive;

    #[test]
    fn names_round_trip() {
        let specs = [
            PolicySpec::NoTreatment,
            PolicySpec::FullTreatment,
            PolicySpec::FixedConstant(0.25),
            PolicySpec::LowConstantOptimal,
            PolicySpec::LowOuZeroOrder,
            PolicySpec::ModerateOuExpansion { order: 1 },
            PolicySpec::ModerateConstantExpansion {
                order: 2,
                form: Alpha1Form::Theorem,
            },
        ];
        for s in specs {
            assert_eq!(s.to_string().parse::<PolicySpec>().unwrap(), s);
        }
        assert!("fixed-1.5".parse::<PolicySpec>().is_err());
        assert!("moderate-ou-o3".parse::<PolicySpec>().is_err());
        assert!("bogus".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn zeroth_order_reductions() {
        // With sigma_x = 0 the OU control at t = T is x/(g sigma); at x = (b-r)/sigma it is the constant-rate alpha0.
        let p = EpidemicParams {
            sigma_k: 0.0,
            sigma_s: 0.05,
            ..EpidemicParams::default()
        };
        let d = derive(&p).unwrap();
        let x = d.theta_sharpe;
        let ou = alpha0_ou(x, p.horizon, &p, &d).unwrap();
        assert_eq!(ou, x / (p.gamma * p.sigma));
        let c = alpha_moderate_constant(1.0, 1.0, p.horizon, Alpha1Form::Appendix, &p, &d).unwrap();
        assert_eq!(c.alpha0, ou);
    }

    #[test]
    fn low_ou_controller_matches_free_function() {
        let p = EpidemicParams::default();
        let d = derive(&p).unwrap();
        let c = Controller::new(PolicySpec::LowOuZeroOrder, &p, &d).unwrap();
        let input = ControlInput {
            t: 3.0,
            s: 0.99,
            x: -0.2,
            ln_z: 0.0,
        };
        assert_eq!(
            c.evaluate(&input).unwrap(),
            alpha0_ou(-0.2, 3.0, &p, &d).unwrap()
        );
    }
}
