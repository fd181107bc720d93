pub mod error;
pub mod experiment;
pub mod kernels;
pub mod params;
pub mod policy;
pub mod quadrature;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::{riccati_coeffs, AffineKernel, HKernel, KernelCoefficients, RiccatiCoeffs};
pub use params::{derive, load_config, DerivedParams, EpidemicParams};
pub use policy::{Alpha1Form, Controller, ExpansionState, PolicySpec};
pub use simulate::{
    expected_utility, martingale_check, simulate_path, MartingaleEstimate, PathState, SimulationModel,
    Trajectory, TreatmentRate, UtilityEstimate,
};
pub use experiment::{
    load_weekly_data, run_comparison, run_verification, ComparisonOptions, ExperimentResult, WeeklyRecord,
};
pub use verify::{ResidualReport, SuiteOptions};
