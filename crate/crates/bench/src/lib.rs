//! Shared fixtures for the criterion benches.

use sir_control::{derive, DerivedParams, EpidemicParams};

/// Default parameters at the given gamma, with their derived symbols.
pub fn table_at(gamma: f64) -> (EpidemicParams, DerivedParams) {
    let p = EpidemicParams::default().with_gamma(gamma);
    let d = derive(&p).expect("table parameters are valid");
    (p, d)
}
