//! Euler–Maruyama simulation of the controlled epidemic and Monte-Carlo utility.
//!
//! Every path owns a ChaCha8 stream `(base_seed, path_index)` and draws `dB2` then
//! `dB1` at every step, so paths are reproducible in isolation and policies
//! compared on the same seed see the same noise.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{DerivedParams, EpidemicParams};
use crate::policy::{alpha_low_constant, ControlInput, Controller, PolicySpec, ZDriver};

/// How the treatment recovery rate K1 evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TreatmentRate {
    /// `K1 = kbar1`, so `X = Xbar` throughout.
    #[default]
    Constant,
    /// Mean-reverting K1 started at `K1_0`.
    Ou,
}

impl fmt::Display for TreatmentRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreatmentRate::Constant => "constant",
            TreatmentRate::Ou => "ou",
        })
    }
}

impl FromStr for TreatmentRate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "constant" => Ok(TreatmentRate::Constant),
            "ou" => Ok(TreatmentRate::Ou),
            other => Err(format!("unknown treatment rate {other:?} (constant|ou)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimulationModel {
    pub treatment_rate: TreatmentRate,
    /// Hold S at 1 (the low-infection approximation) instead of simulating it.
    pub freeze_susceptible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub t: f64,
    pub s: f64,
    pub i: f64,
    pub x: f64,
    pub z: f64,
    pub alpha_applied: f64,
    pub alpha_unclamped: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub terminal_i_mean: f64,
    pub clamp_fraction: f64,
}

/// Cross-path statistics of I and the applied control on the simulation grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub i_mean: Vec<f64>,
    pub i_p05: Vec<f64>,
    pub i_p95: Vec<f64>,
    /// Mean control over paths still running; 0 once all have stopped.
    pub alpha_mean: Vec<f64>,
}

/// Drift of `H0(t) I(t)` as the time-averaged relative increment per week.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleEstimate {
    pub drift: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl MartingaleEstimate {
    pub fn within(&self, n_se: f64) -> bool {
        self.drift.abs() <= n_se * self.std_error
    }
}

/// `-I^{1-gamma}/(1-gamma)`.
pub fn utility(i: f64, gamma: f64) -> f64 {
    -i.powf(1.0 - gamma) / (1.0 - gamma)
}

pub fn path_rng(base_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(path_index);
    rng
}

#[derive(Debug, Clone, Copy)]
struct Live {
    step: usize,
    s: f64,
    i: f64,
    x: f64,
    ln_z: f64,
    alpha: f64,
    alpha_unclamped: f64,
    stopped: bool,
    clamped_steps: u64,
    /// Running sum of `M(k+1)/M(k) - 1` for `M = H0 I`, when tracked.
    h0_sum: f64,
}

#[derive(Debug, Clone, Copy)]
struct StepNoise {
    db2: f64,
}

/// Shared, read-only simulation setup.
struct Stepper<'a> {
    controller: &'a Controller,
    p: &'a EpidemicParams,
    d: &'a DerivedParams,
    model: SimulationModel,
    driver: Option<ZDriver>,
    n_steps: usize,
    dt: f64,
    sqrt_dt: f64,
}

impl<'a> Stepper<'a> {
    fn new(
        controller: &'a Controller,
        p: &'a EpidemicParams,
        d: &'a DerivedParams,
        model: SimulationModel,
    ) -> Result<Self> {
        if !(p.dt > 0.0 && p.dt < p.horizon) {
            return Err(Error::invalid("dt", "must satisfy 0 < dt < T"));
        }
        let n_steps = (p.horizon / p.dt).round().max(1.0) as usize;
        let dt = p.horizon / n_steps as f64;
        Ok(Stepper {
            controller,
            p,
            d,
            model,
            driver: controller.expansion().map(|(_, drv)| drv),
            n_steps,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    fn time(&self, step: usize) -> f64 {
        if step == self.n_steps {
            self.p.horizon
        } else {
            step as f64 * self.dt
        }
    }

    fn start(&self) -> Live {
        let x = match self.model.treatment_rate {
            TreatmentRate::Constant => self.d.xbar,
            TreatmentRate::Ou => self.d.x0,
        };
        let ln_z = self
            .controller
            .expansion()
            .map_or(0.0, |(state, _)| state.z.ln());
        Live {
            step: 0,
            s: if self.model.freeze_susceptible { 1.0 } else { self.p.s0 },
            i: self.p.epsilon,
            x,
            ln_z,
            alpha: 0.0,
            alpha_unclamped: 0.0,
            stopped: false,
            clamped_steps: 0,
            h0_sum: 0.0,
        }
    }

    fn state(&self, l: &Live) -> PathState {
        PathState {
            t: self.time(l.step),
            s: l.s,
            i: l.i,
            x: l.x,
            z: l.ln_z.exp(),
            alpha_applied: l.alpha,
            alpha_unclamped: l.alpha_unclamped,
        }
    }

    /// Evaluates the control at the current state and advances one step.
    fn advance(&self, l: &mut Live, rng: &mut ChaCha8Rng, path: u64) -> Result<StepNoise> {
        let t = self.time(l.step);
        let (p, d) = (self.p, self.d);
        let step = l.step;
        let non_finite = || Error::NonFiniteState { path, step, t };

        let raw = self.controller.evaluate(&ControlInput {
            t,
            s: l.s,
            x: l.x,
            ln_z: l.ln_z,
        })?;
        if !raw.is_finite() {
            return Err(non_finite());
        }
        let alpha = raw.clamp(0.0, 1.0);
        if alpha != raw {
            l.clamped_steps += 1;
        }
        l.alpha = alpha;
        l.alpha_unclamped = raw;

        let z2: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let (db2, db1) = (self.sqrt_dt * z2, self.sqrt_dt * z1);
        let dt = self.dt;
        let (s, i, x) = (l.s, l.i, l.x);
        let root_si = (s.max(0.0) * i.max(0.0)).sqrt();
        let noise_s = p.sigma_s * root_si * db1;

        let di = (p.beta * s - d.mu + alpha * p.sigma * x) * i * dt + alpha * p.sigma * i * db2
            - noise_s;
        let i_next = i + di;

        if let Some(driver) = self.driver {
            let lam = match driver {
                ZDriver::TreatmentState => x,
                ZDriver::Constant(theta) => theta,
            };
            let shock = p.beta * root_si / p.sigma_s;
            l.ln_z += (-d.mu + 0.5 * lam * lam + 0.5 * shock * shock) * dt - shock * db1
                + lam * db2;
        }
        if !self.model.freeze_susceptible {
            l.s = s - p.beta * s * i * dt + noise_s;
        }
        if self.model.treatment_rate == TreatmentRate::Ou {
            l.x = x + d.lambda_x * (d.xbar - x) * dt - d.sigma_x * db2;
        }
        l.step += 1;

        if !(i_next.is_finite() && l.s.is_finite() && l.x.is_finite() && l.ln_z.is_finite()) {
            return Err(non_finite());
        }
        if i_next <= 0.0 || i_next >= 1.0 {
            l.stopped = true;
            l.i = i_next.clamp(0.0, 1.0);
        } else {
            l.i = i_next;
        }
        if !self.model.freeze_susceptible {
            l.s = l.s.clamp(0.0, 1.0 - l.i);
        }
        Ok(StepNoise { db2 })
    }

    fn finished(&self, l: &Live) -> bool {
        l.stopped || l.step >= self.n_steps
    }
}

/// One path under `policy` with the default model, seeded by `seed`.
pub fn simulate_path(
    policy: PolicySpec,
    p: &EpidemicParams,
    d: &DerivedParams,
    seed: u64,
) -> Result<Vec<PathState>> {
    let controller = Controller::new(policy, p, d)?;
    simulate_path_with(&controller, p, d, SimulationModel::default(), seed, 0)
}

/// Path `path_index` of the ensemble keyed by `base_seed`.
pub fn simulate_path_with(
    controller: &Controller,
    p: &EpidemicParams,
    d: &DerivedParams,
    model: SimulationModel,
    base_seed: u64,
    path_index: u64,
) -> Result<Vec<PathState>> {
    let stepper = Stepper::new(controller, p, d, model)?;
    let mut rng = path_rng(base_seed, path_index);
    let mut live = stepper.start();
    let mut out = Vec::with_capacity(stepper.n_steps + 1);
    while !stepper.finished(&live) {
        let before = live;
        stepper.advance(&mut live, &mut rng, path_index)?;
        out.push(PathState {
            alpha_applied: live.alpha,
            alpha_unclamped: live.alpha_unclamped,
            ..stepper.state(&before)
        });
    }
    out.push(stepper.state(&live));
    Ok(out)
}

pub fn expected_utility(
    policy: PolicySpec,
    p: &EpidemicParams,
    d: &DerivedParams,
    n_paths: usize,
    base_seed: u64,
) -> Result<UtilityEstimate> {
    let controller = Controller::new(policy, p, d)?;
    let (u, _) = run_ensemble(
        &controller,
        p,
        d,
        SimulationModel::default(),
        n_paths,
        base_seed,
        false,
    )?;
    Ok(u)
}

/// Simulates `n_paths` paths in lockstep; with `record` also returns the
/// per-step mean and 5%/95% quantiles of I and the mean applied control.
pub fn run_ensemble(
    controller: &Controller,
    p: &EpidemicParams,
    d: &DerivedParams,
    model: SimulationModel,
    n_paths: usize,
    base_seed: u64,
    record: bool,
) -> Result<(UtilityEstimate, Option<Trajectory>)> {
    if n_paths < 2 {
        return Err(Error::invalid("n_paths", "need at least 2 paths"));
    }
    let stepper = Stepper::new(controller, p, d, model)?;
    let (lives, errors, traj) = if record {
        lockstep(&stepper, n_paths, base_seed)
    } else {
        let (lives, errors) = (0..n_paths as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = path_rng(base_seed, k);
                let mut l = stepper.start();
                let mut err = None;
                while !stepper.finished(&l) {
                    if let Err(e) = stepper.advance(&mut l, &mut rng, k) {
                        err = Some(e);
                        break;
                    }
                }
                (l, err)
            })
            .unzip();
        (lives, errors, None)
    };

    let aborted: Vec<Error> = errors.into_iter().flatten().collect();
    let count = aborted.len();
    if let Some(first) = aborted.into_iter().next() {
        return Err(Error::PathsAborted {
            count,
            total: n_paths,
            first: Box::new(first),
        });
    }

    let gamma = p.gamma;
    let utilities: Vec<f64> = lives.iter().map(|l| utility(l.i, gamma)).collect();
    let (mean, std_error) = mean_and_se(&utilities);
    let terminal_i_mean = lives.iter().map(|l| l.i).sum::<f64>() / n_paths as f64;
    let clamped: u64 = lives.iter().map(|l| l.clamped_steps).sum();
    let steps: usize = lives.iter().map(|l| l.step).sum();
    Ok((
        UtilityEstimate {
            mean,
            std_error,
            n_paths,
            terminal_i_mean,
            clamp_fraction: if steps > 0 {
                clamped as f64 / steps as f64
            } else {
                0.0
            },
        },
        traj,
    ))
}

/// All paths advanced one step at a time, recording cross-path statistics.
fn lockstep(stepper: &Stepper, n_paths: usize, base_seed: u64) -> (Vec<Live>, Vec<Option<Error>>, Option<Trajectory>) {
    let mut rngs: Vec<ChaCha8Rng> = (0..n_paths as u64).map(|k| path_rng(base_seed, k)).collect();
    let mut lives = vec![stepper.start(); n_paths];
    let mut errors: Vec<Option<Error>> = (0..n_paths).map(|_| None).collect();
    let mut tr = Trajectory::default();
    let mut scratch = Vec::with_capacity(n_paths);
    for step in 0..=stepper.n_steps {
        tr.t.push(stepper.time(step));
        record_slice(&mut tr, &lives, &errors, &mut scratch);
        if step == stepper.n_steps {
            break;
        }
        lives
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(errors.par_iter_mut())
            .enumerate()
            .for_each(|(k, ((l, rng), err))| {
                if err.is_none() && !stepper.finished(l) {
                    if let Err(e) = stepper.advance(l, rng, k as u64) {
                        *err = Some(e);
                    }
                }
            });
        // Mean control applied over [t_k, t_k+1) by the paths that took this step.
        let (sum, n) = lives
            .iter()
            .zip(&errors)
            .filter(|(l, e)| e.is_none() && l.step == step + 1)
            .fold((0.0, 0usize), |(s, n), (l, _)| (s + l.alpha, n + 1));
        tr.alpha_mean.push(if n > 0 { sum / n as f64 } else { 0.0 });
    }
    let last = tr.alpha_mean.last().copied().unwrap_or(0.0);
    tr.alpha_mean.push(last);
    (lives, errors, Some(tr))
}

fn record_slice(tr: &mut Trajectory, lives: &[Live], errors: &[Option<Error>], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend(
        lives
            .iter()
            .zip(errors)
            .filter(|(_, e)| e.is_none())
            .map(|(l, _)| l.i),
    );
    let n = scratch.len().max(1) as f64;
    tr.i_mean.push(scratch.iter().sum::<f64>() / n);
    tr.i_p05.push(quantile(scratch, 0.05));
    tr.i_p95.push(quantile(scratch, 0.95));
}

/// Linearly interpolated sample quantile (reorders `v`).
pub fn quantile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut a, upper) = v.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return a;
    }
    let b = upper.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// Sample mean and `std / sqrt(n)`, summed in index order.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Martingale check at the optimal constant control.
pub fn martingale_check(
    p: &EpidemicParams,
    d: &DerivedParams,
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleEstimate> {
    martingale_check_at(p, d, alpha_low_constant(p)?, n_paths, seed)
}

/// Relative drift of `H0(t) I(t)` with `H0(t) = exp(-r t - theta B2(t) - theta^2 t/2)`,
/// in the low-infection constant-rate setting (S = 1, X = Xbar) under a fixed `alpha`.
/// Each path contributes `(1/T) sum_k (M(k+1)/M(k) - 1)` up to its stopping time.
pub fn martingale_check_at(
    p: &EpidemicParams,
    d: &DerivedParams,
    alpha: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleEstimate> {
    if p.sigma_s != 0.0 {
        return Err(Error::invalid(
            "sigma_S",
            "the martingale check needs the low-infection setting sigma_S = 0",
        ));
    }
    if n_paths < 2 {
        return Err(Error::invalid("n_paths", "need at least 2 paths"));
    }
    let controller = Controller::new(PolicySpec::FixedConstant(alpha.clamp(0.0, 1.0)), p, d)?;
    let model = SimulationModel {
        treatment_rate: TreatmentRate::Constant,
        freeze_susceptible: true,
    };
    let stepper = Stepper::new(&controller, p, d, model)?;
    let theta = d.theta_sharpe;
    let h_drift = (-d.r - 0.5 * theta * theta) * stepper.dt;
    let per_path = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, k);
            let mut l = stepper.start();
            while !stepper.finished(&l) {
                let i0 = l.i;
                let noise = stepper.advance(&mut l, &mut rng, k)?;
                let h_ratio = (h_drift - theta * noise.db2).exp();
                l.h0_sum += h_ratio * l.i / i0 - 1.0;
            }
            Ok(l.h0_sum / p.horizon)
        })
        .collect::<Vec<Result<f64>>>();
    let mut values = Vec::with_capacity(n_paths);
    let mut failures = Vec::new();
    for r in per_path {
        match r {
            Ok(v) => values.push(v),
            Err(e) => failures.push(e),
        }
    }
    let count = failures.len();
    if let Some(first) = failures.into_iter().next() {
        return Err(Error::PathsAborted {
            count,
            total: n_paths,
            first: Box::new(first),
        });
    }
    let (drift, std_error) = mean_and_se(&values);
    Ok(MartingaleEstimate {
        drift,
        std_error,
        n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive;

    fn quiet() -> EpidemicParams {
        EpidemicParams {
            sigma_k: 0.0,
            sigma_s: 0.0,
            horizon: 1.0,
            ..EpidemicParams::default()
        }
    }

    #[test]
    fn untreated_deterministic_path_is_exponential() {
        let p = quiet();
        let d = derive(&p).unwrap();
        let c = Controller::new(PolicySpec::NoTreatment, &p, &d).unwrap();
        let model = SimulationModel {
            freeze_susceptible: true,
            ..SimulationModel::default()
        };
        let path = simulate_path_with(&c, &p, &d, model, 7, 0).unwrap();
        let end = path.last().unwrap();
        assert_eq!(end.t, 1.0);
        let exact = p.epsilon * d.r.exp();
        assert!((end.i / exact - 1.0).abs() < 1e-3);
        assert!((end.i - 0.0074949).abs() < 1e-6);
    }

    #[test]
    fn full_treatment_deterministic_path() {
        // a vanishing sigma leaves sigma Xbar = b - r in the drift and no noise
        let p = EpidemicParams {
            sigma: 1e-9,
            ..quiet()
        };
        let d = derive(&p).unwrap();
        let c = Controller::new(PolicySpec::FullTreatment, &p, &d).unwrap();
        let model = SimulationModel {
            freeze_susceptible: true,
            ..SimulationModel::default()
        };
        let end = *simulate_path_with(&c, &p, &d, model, 1, 0).unwrap().last().unwrap();
        let exact = p.epsilon * (d.b * p.horizon).exp();
        assert!((end.i / exact - 1.0).abs() < 1e-3, "{} vs {exact}", end.i);
    }

    #[test]
    fn seeded_paths_repeat() {
        let p = EpidemicParams {
            horizon: 2.0,
            sigma_s: 0.05,
            ..EpidemicParams::default()
        };
        let d = derive(&p).unwrap();
        let a = simulate_path(PolicySpec::LowConstantOptimal, &p, &d, 11).unwrap();
        let b = simulate_path(PolicySpec::LowConstantOptimal, &p, &d, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(PolicySpec::LowConstantOptimal, &p, &d, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ensemble_matches_single_paths() {
        let p = EpidemicParams {
            horizon: 1.0,
            dt: 0.01,
            sigma_s: 0.05,
            ..EpidemicParams::default()
        };
        let d = derive(&p).unwrap();
        let c = Controller::new(PolicySpec::FixedConstant(0.5), &p, &d).unwrap();
        let model = SimulationModel {
            treatment_rate: TreatmentRate::Ou,
            freeze_susceptible: false,
        };
        let (u, tr) = run_ensemble(&c, &p, &d, model, 8, 5, true).unwrap();
        let tr = tr.unwrap();
        assert_eq!(tr.t.len(), 101);
        assert_eq!(tr.alpha_mean.len(), 101);
        let mut ends = Vec::new();
        for k in 0..8 {
            let path = simulate_path_with(&c, &p, &d, model, 5, k).unwrap();
            ends.push(path.last().unwrap().i);
        }
        let mean_i = ends.iter().sum::<f64>() / 8.0;
        assert!((u.terminal_i_mean - mean_i).abs() < 1e-15);
        assert!((tr.i_mean[100] - mean_i).abs() < 1e-15);
        assert!(tr.alpha_mean.iter().all(|&a| a == 0.5));
        let (plain, none) = run_ensemble(&c, &p, &d, model, 8, 5, false).unwrap();
        assert!(none.is_none());
        assert_eq!(plain, u);
    }

    #[test]
    fn degenerate_utility_has_zero_error() {
        let p = EpidemicParams {
            sigma_k: 0.0,
            sigma_s: 0.0,
            ..EpidemicParams::default()
        };
        let d = derive(&p).unwrap();
        let u = expected_utility(PolicySpec::NoTreatment, &p, &d, 4, 3).unwrap();
        assert_eq!(u.std_error, 0.0);
        assert_eq!(u.clamp_fraction, 0.0);
        assert!(u.mean < 0.0 && u.mean >= -0.5);
    }

    #[test]
    fn rejects_single_path() {
        let p = EpidemicParams::default();
        let d = derive(&p).unwrap();
        assert!(expected_utility(PolicySpec::NoTreatment, &p, &d, 1, 0).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&mut v, 0.5), 3.0);
        assert_eq!(quantile(&mut v, 0.0), 1.0);
        assert_eq!(quantile(&mut v, 1.0), 5.0);
        assert!((quantile(&mut v, 0.05) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn untreated_martingale_is_driftless() {
        let p = EpidemicParams {
            horizon: 2.0,
            ..EpidemicParams::default()
        };
        let d = derive(&p).unwrap();
        let m = martingale_check_at(&p, &d, 0.0, 400, 9).unwrap();
        assert!(m.within(3.0), "{m:?}");
    }
}
