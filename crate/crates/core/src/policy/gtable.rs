//! Precomputed g and dg/dX for path simulation.
//!
//! Each row fixes t and stores the quadrature nodes of the tau integral as
//! quadratic exponentials in x, so evaluating g at any x costs one exp per node.
//! Node placement comes from an adaptive pass at a reference x.

use rayon::prelude::*;

use crate::error::Result;
use crate::policy::moderate_ou::{ModerateOu, QuadraticExp};
use crate::quadrature::{adaptive_partition, kronrod_rule, Tolerance};

/// Default spacing of table rows in t (weeks).
pub const ROW_SPACING: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct GTable {
    spacing: f64,
    rows: Vec<Vec<QuadraticExp>>,
}

impl GTable {
    pub fn build(model: &ModerateOu, reference_x: f64, spacing: f64) -> Result<Self> {
        let horizon = model.horizon();
        let n = (horizon / spacing).ceil().max(1.0) as usize;
        let spacing = horizon / n as f64;
        let rows = (0..=n)
            .into_par_iter()
            .map(|k| {
                let t = if k == n { horizon } else { k as f64 * spacing };
                let parts = adaptive_partition(
                    |tau| Ok(model.node(t, tau)?.value(reference_x)),
                    t,
                    horizon,
                    Tolerance::relative(1e-9),
                )?;
                let mut nodes = Vec::with_capacity(parts.len() * 15);
                for (lo, hi) in parts {
                    for (tau, w) in kronrod_rule(lo, hi) {
                        let mut e = model.node(t, tau)?;
                        e.r += w.ln();
                        nodes.push(e);
                    }
                }
                Ok(nodes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GTable { spacing, rows })
    }

    fn row_eval(&self, k: usize, x: f64) -> (f64, f64) {
        self.rows[k]
            .iter()
            .map(|e| e.value_and_slope(x))
            .fold((0.0, 0.0), |(a, b), (v, s)| (a + v, b + s))
    }

    /// (g, dg/dX) at (x, t), interpolated between rows (log-linear in g).
    pub fn eval(&self, x: f64, t: f64) -> (f64, f64) {
        let last = self.rows.len() - 1;
        let pos = (t / self.spacing).clamp(0.0, last as f64);
        let k = (pos.floor() as usize).min(last.saturating_sub(1));
        let s = pos - k as f64;
        if last == 0 {
            return self.row_eval(0, x);
        }
        let (g0, d0) = self.row_eval(k, x);
        let (g1, d1) = self.row_eval(k + 1, x);
        let g = if g0 > 0.0 && g1 > 0.0 {
            (g0.ln() * (1.0 - s) + g1.ln() * s).exp()
        } else {
            g0 * (1.0 - s) + g1 * s
        };
        (g, d0 * (1.0 - s) + d1 * s)
    }
}
