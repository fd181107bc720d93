//! Policy comparison runs, weekly data input and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{derive, EpidemicParams};
use crate::policy::{Alpha1Form, Controller, PolicySpec};
use crate::simulate::{run_ensemble, SimulationModel, Trajectory, TreatmentRate, UtilityEstimate};
use crate::verify::{format_float, run_suite, write_reports, ResidualReport, SuiteOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Slack allowed on `infected + susceptible + removed = 1`.
pub const PROPORTION_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeeklyRecord {
    pub week_start: NaiveDate,
    pub infected_prop: f64,
    pub susceptible_prop: f64,
    pub removed_prop: f64,
}

/// Reads `week_start,infected_prop,susceptible_prop,removed_prop`; one empty
/// proportion per row is filled in from the other two.
pub fn load_weekly_data(path: impl AsRef<Path>) -> Result<Vec<WeeklyRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_weekly_data(&text, path)
}

pub fn parse_weekly_data(text: &str, origin: &Path) -> Result<Vec<WeeklyRecord>> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let want = ["week_start", "infected_prop", "susceptible_prop", "removed_prop"];
    if header.iter().collect::<Vec<_>>() != want {
        return Err(parse_err(1, format!("header must be {}", want.join(","))));
    }
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let week_start = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("week_start {:?}: {e}", &rec[0])))?;
        let mut props = [None; 3];
        for (j, slot) in props.iter_mut().enumerate() {
            let field = &rec[j + 1];
            if field.is_empty() {
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("{}: not a number: {field:?}", want[j + 1])))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(line, format!("{} = {v} outside [0, 1]", want[j + 1])));
            }
            *slot = Some(v);
        }
        let [i, s, r] = match props {
            [Some(i), Some(s), Some(r)] => {
                let sum = i + s + r;
                if (sum - 1.0).abs() > PROPORTION_SLACK {
                    return Err(parse_err(line, format!("proportions sum to {sum}, not 1")));
                }
                [i, s, r]
            }
            [None, Some(s), Some(r)] => [1.0 - s - r, s, r],
            [Some(i), None, Some(r)] => [i, 1.0 - i - r, r],
            [Some(i), Some(s), None] => [i, s, 1.0 - i - s],
            _ => return Err(parse_err(line, "at least two proportions are required".into())),
        };
        if [i, s, r].iter().any(|v| *v < -PROPORTION_SLACK) {
            return Err(parse_err(line, "derived proportion is negative".into()));
        }
        out.push(WeeklyRecord {
            week_start,
            infected_prop: i.max(0.0),
            susceptible_prop: s.max(0.0),
            removed_prop: r.max(0.0),
        });
    }
    if out.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(out)
}

/// Initial state from the first weekly record.
pub fn apply_data(p: &EpidemicParams, data: &[WeeklyRecord]) -> Result<EpidemicParams> {
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("data", "no records"))?;
    let q = EpidemicParams {
        epsilon: first.infected_prop,
        s0: first.susceptible_prop,
        ..*p
    };
    q.validate()?;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub seed: u64,
    pub dt: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub treatment_rate: TreatmentRate,
    pub config_hash: String,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub policy: PolicySpec,
    pub gamma: f64,
    pub utility: UtilityEstimate,
    pub trajectory: Trajectory,
    pub metadata: RunMetadata,
}

#[derive(Debug, Clone)]
pub struct ComparisonOptions {
    pub gammas: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Added to the baseline none/full/low-constant set.
    pub extra_policies: Vec<PolicySpec>,
    pub expansion_order: Option<u8>,
    pub alpha1_form: Alpha1Form,
    pub treatment_rate: TreatmentRate,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            gammas: vec![-1.0, -5.0],
            n_paths: 1000,
            seed: 42,
            extra_policies: Vec::new(),
            expansion_order: None,
            alpha1_form: Alpha1Form::default(),
            treatment_rate: TreatmentRate::Constant,
        }
    }
}

pub const BASELINE_POLICIES: [PolicySpec; 3] = [
    PolicySpec::NoTreatment,
    PolicySpec::FullTreatment,
    PolicySpec::LowConstantOptimal,
];

impl ComparisonOptions {
    /// Baseline policies plus the extras, expansion settings applied, duplicates dropped.
    pub fn policies(&self) -> Vec<PolicySpec> {
        let mut out: Vec<PolicySpec> = Vec::new();
        for spec in BASELINE_POLICIES.iter().chain(&self.extra_policies) {
            let spec = match self.expansion_order {
                Some(order) => spec.with_expansion(order, self.alpha1_form),
                None => match *spec {
                    PolicySpec::ModerateConstantExpansion { order, .. } => {
                        spec.with_expansion(order, self.alpha1_form)
                    }
                    other => other,
                },
            };
            if !out.contains(&spec) {
                out.push(spec);
            }
        }
        out
    }
}

/// Runs every (gamma, policy) pair; results ordered by gamma then policy.
pub fn run_comparison(
    p: &EpidemicParams,
    data: Option<&[WeeklyRecord]>,
    opts: &ComparisonOptions,
) -> Result<Vec<ExperimentResult>> {
    if opts.gammas.is_empty() {
        return Err(Error::invalid("gammas", "need at least one risk aversion"));
    }
    if let Some(g) = opts.gammas.iter().find(|g| !(**g < 0.0)) {
        return Err(Error::invalid("gammas", format!("gamma must be negative, got {g}")));
    }
    let base = match data {
        Some(records) => apply_data(p, records)?,
        None => *p,
    };
    let policies = opts.policies();
    for spec in &policies {
        spec.validate()?;
    }
    let model = SimulationModel {
        treatment_rate: opts.treatment_rate,
        freeze_susceptible: false,
    };
    let jobs: Vec<(f64, PolicySpec)> = opts
        .gammas
        .iter()
        .flat_map(|&g| policies.iter().map(move |&s| (g, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(gamma, policy)| {
            let pg = base.with_gamma(gamma);
            pg.validate()?;
            let d = derive(&pg)?;
            let controller = Controller::new(policy, &pg, &d)?;
            let (utility, trajectory) =
                run_ensemble(&controller, &pg, &d, model, opts.n_paths, opts.seed, true)?;
            log::info!(
                "gamma={gamma} {policy}: utility {:e} +- {:e}",
                utility.mean,
                utility.std_error
            );
            Ok(ExperimentResult {
                policy,
                gamma,
                utility,
                trajectory: trajectory.unwrap_or_default(),
                metadata: RunMetadata {
                    seed: opts.seed,
                    dt: pg.dt,
                    n_paths: opts.n_paths,
                    horizon: pg.horizon,
                    treatment_rate: opts.treatment_rate,
                    config_hash: pg.config_hash(),
                    version: VERSION,
                },
            })
        })
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

fn finish(path: &Path, w: csv::Writer<std::io::BufWriter<fs::File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    inner.flush().map_err(io_err(path))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| io_err(path)(std::io::Error::other(e))
}

pub fn trajectory_file_name(policy: PolicySpec, gamma: f64) -> String {
    format!("trajectory_{policy}_{gamma}.csv")
}

/// Writes `summary.csv` and one trajectory file per result; returns the paths written.
pub fn write_comparison(out_dir: &Path, results: &[ExperimentResult]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let summary = out_dir.join("summary.csv");
    let mut w = csv_writer(&summary)?;
    let e = csv_io(&summary);
    w.write_record([
        "policy",
        "gamma",
        "utility_mean",
        "utility_se",
        "terminal_I_mean",
        "clamp_fraction",
        "seed",
        "dt",
        "n_paths",
        "T",
        "treatment_rate",
        "config_hash",
        "version",
    ])
    .map_err(&e)?;
    for r in results {
        let m = &r.metadata;
        w.write_record([
            r.policy.to_string(),
            format_float(r.gamma),
            format_float(r.utility.mean),
            format_float(r.utility.std_error),
            format_float(r.utility.terminal_i_mean),
            format_float(r.utility.clamp_fraction),
            m.seed.to_string(),
            format_float(m.dt),
            m.n_paths.to_string(),
            format_float(m.horizon),
            m.treatment_rate.to_string(),
            m.config_hash.clone(),
            m.version.to_string(),
        ])
        .map_err(&e)?;
    }
    finish(&summary, w)?;
    written.push(summary.clone());

    for r in results {
        let path = out_dir.join(trajectory_file_name(r.policy, r.gamma));
        let mut w = csv_writer(&path)?;
        let e = csv_io(&path);
        w.write_record([
            "t",
            "I_mean",
            "I_p05",
            "I_p95",
            "alpha_mean",
            "seed",
            "dt",
            "n_paths",
            "config_hash",
        ])
        .map_err(&e)?;
        let tr = &r.trajectory;
        let m = &r.metadata;
        let (seed, dt, n) = (m.seed.to_string(), format_float(m.dt), m.n_paths.to_string());
        for k in 0..tr.t.len() {
            w.write_record([
                format_float(tr.t[k]),
                format_float(tr.i_mean[k]),
                format_float(tr.i_p05[k]),
                format_float(tr.i_p95[k]),
                format_float(tr.alpha_mean[k]),
                seed.clone(),
                dt.clone(),
                n.clone(),
                m.config_hash.clone(),
            ])
            .map_err(&e)?;
        }
        finish(&path, w)?;
        written.push(path.clone());
    }
    Ok(written)
}

pub const VERIFICATION_FILE: &str = "verification.csv";

/// Runs the oracle suite and writes `verification.csv` into `out_dir`.
pub fn run_verification(
    p: &EpidemicParams,
    out_dir: &Path,
    opts: &SuiteOptions,
) -> Result<Vec<ResidualReport>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let reports = run_suite(p, opts);
    write_reports(&out_dir.join(VERIFICATION_FILE), &reports)?;
    Ok(reports)
}
