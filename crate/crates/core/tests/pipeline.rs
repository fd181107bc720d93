use std::fs;

use sir_control::experiment::{trajectory_file_name, write_comparison, VERIFICATION_FILE};
use sir_control::{
    load_config, load_weekly_data, run_comparison, run_verification, ComparisonOptions,
    EpidemicParams, Error, PolicySpec, SuiteOptions, TreatmentRate,
};

fn short() -> EpidemicParams {
    EpidemicParams {
        horizon: 2.0,
        dt: 0.01,
        ..EpidemicParams::default()
    }
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "# shorter run\ngamma = -2\nT=3\nepsilon=0.02\n").unwrap();
    let p = load_config(&path).unwrap();
    assert_eq!(p.gamma, -2.0);
    assert_eq!(p.horizon, 3.0);
    assert_eq!(p.s0, 0.98);
    assert_eq!(p.beta, EpidemicParams::default().beta);

    fs::write(&path, "gamma=0.5\n").unwrap();
    assert!(matches!(load_config(&path), Err(Error::InvalidParameter { .. })));
    fs::write(&path, "colour=3\n").unwrap();
    assert!(matches!(load_config(&path), Err(Error::Parse { line: 1, .. })));
    assert!(load_config(dir.path().join("missing.cfg")).is_err());
}

#[test]
fn comparison_writes_summary_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("weekly.csv");
    fs::write(
        &data,
        "week_start,infected_prop,susceptible_prop,removed_prop\n2020-06-07,0.02,0.95,\n",
    )
    .unwrap();
    let records = load_weekly_data(&data).unwrap();
    let opts = ComparisonOptions {
        gammas: vec![-1.0, -5.0],
        n_paths: 16,
        seed: 3,
        extra_policies: vec![PolicySpec::FixedConstant(0.5), PolicySpec::NoTreatment],
        treatment_rate: TreatmentRate::Ou,
        ..ComparisonOptions::default()
    };
    let results = run_comparison(&short(), Some(&records), &opts).unwrap();
    assert_eq!(results.len(), 8);
    for r in &results {
        assert_eq!(r.trajectory.t.len(), 201);
        assert!((r.trajectory.i_mean[0] - 0.02).abs() < 1e-15);
        assert_eq!(r.metadata.treatment_rate, TreatmentRate::Ou);
        assert!(r.utility.mean < 0.0);
    }

    let out = dir.path().join("out");
    let written = write_comparison(&out, &results).unwrap();
    assert_eq!(written.len(), 9);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,gamma,utility_mean,utility_se,terminal_I_mean,clamp_fraction,seed,dt,n_paths,T,treatment_rate,config_hash,version"
    );
    assert_eq!(lines.count(), 8);
    let traj = fs::read_to_string(out.join(trajectory_file_name(PolicySpec::FixedConstant(0.5), -5.0))).unwrap();
    assert!(traj.starts_with("t,I_mean,I_p05,I_p95,alpha_mean,seed,dt,n_paths,config_hash\n"));
    assert_eq!(traj.lines().count(), 202);
    assert!(traj.lines().skip(1).all(|l| l.split(',').nth(4) == Some("0.5")));
}

#[test]
fn comparison_rejects_bad_options() {
    let p = short();
    let no_gammas = ComparisonOptions {
        gammas: vec![],
        ..ComparisonOptions::default()
    };
    assert!(run_comparison(&p, None, &no_gammas).is_err());
    let positive = ComparisonOptions {
        gammas: vec![0.5],
        n_paths: 4,
        ..ComparisonOptions::default()
    };
    assert!(run_comparison(&p, None, &positive).is_err());
    // moderate controls divide by the transmission volatility
    let moderate = ComparisonOptions {
        gammas: vec![-1.0],
        n_paths: 4,
        extra_policies: vec![PolicySpec::ModerateOuExpansion { order: 2 }],
        ..ComparisonOptions::default()
    };
    assert!(run_comparison(&p, None, &moderate).is_err());
}

#[test]
fn moderate_controls_run_with_transmission_noise() {
    let p = EpidemicParams {
        sigma_s: 0.05,
        ..short()
    };
    let opts = ComparisonOptions {
        gammas: vec![-2.0],
        n_paths: 8,
        extra_policies: vec![
            PolicySpec::ModerateOuExpansion { order: 2 },
            "moderate-constant".parse().unwrap(),
        ],
        expansion_order: Some(1),
        ..ComparisonOptions::default()
    };
    let results = run_comparison(&p, None, &opts).unwrap();
    let names: Vec<String> = results.iter().map(|r| r.policy.to_string()).collect();
    assert_eq!(
        names,
        ["none", "full", "low-constant", "moderate-ou-o1", "moderate-constant-o1-appendix"]
    );
    for r in &results {
        assert!(r.trajectory.alpha_mean.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn verification_writes_one_row_per_check() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SuiteOptions {
        hjb_grid: (200, 40),
        g_draws: 2_000,
        martingale_paths: 200,
        ..SuiteOptions::default()
    };
    let reports = run_verification(&EpidemicParams::default(), dir.path(), &opts).unwrap();
    let text = fs::read_to_string(dir.path().join(VERIFICATION_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "check_name,grid_spec,tolerance,max_abs_residual,passed");
    assert_eq!(lines.count(), reports.len());
    let names: Vec<&str> = reports.iter().map(|r| r.check_name.as_str()).collect();
    for prefix in ["riccati_residuals", "a3_quadrature", "h1_pde_residual", "dual_nu", "hjb_fd_low_constant"] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix} missing");
    }
    let kernel_rows: Vec<_> = reports
        .iter()
        .filter(|r| r.check_name.starts_with("riccati") || r.check_name.starts_with("a3_"))
        .collect();
    assert!(kernel_rows.iter().all(|r| r.passed));
    assert!(reports
        .iter()
        .filter(|r| r.check_name.starts_with("g_mc_oracle"))
        .all(|r| r.grid_spec.contains("reference sigma_S=0.05")));
}
