//! The estimate → bounds → gap pipeline shared by `estimate`, `bounds` and `certify`.

use serde::{Deserialize, Serialize};
use tracelogdet::bounds::{bounds_report, BoundsReport, Verdict};
use tracelogdet::estimators::{estimate_from_traces, EstimateReport};
use tracelogdet::solver::SolveConfig;
use tracelogdet::spectra::SpectrumStats;
use tracelogdet::Result;

use crate::input::{InputDescriptor, Loaded};

/// `k_{0:m}` from the first `m` traces, with `log det` filled in.
pub fn estimate_stage(input: &Loaded, m: usize) -> Result<EstimateReport> {
    estimate_from_traces(&input.traces.truncated(m)?, m)
}

/// All bounds from the first `max(m, k)` traces.
pub fn bounds_stage(input: &Loaded, k: usize, floor: Option<f64>, estimate: &EstimateReport) -> Result<BoundsReport> {
    bounds_report(&input.traces, k, floor, estimate, &SolveConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedReport {
    pub input: InputDescriptor,
    pub m: usize,
    pub k: usize,
    pub floor: Option<f64>,
    pub estimate: EstimateReport,
    pub bounds: BoundsReport,
    /// `log det` interval; the lower end is `null` without a floor.
    pub interval: (Option<f64>, f64),
    pub verdict: Verdict,
    /// `K'(0)` after clipping `GM/AM` into `[L, U]`.
    pub clipped_kprime0: f64,
    pub clipped_logdet: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SpectrumStats>,
    pub warnings: Vec<String>,
}

pub fn certify(input: &Loaded, m: usize, k: usize, floor: Option<f64>) -> Result<CertifiedReport> {
    let estimate = estimate_stage(input, m)?;
    let bounds = bounds_stage(input, k, floor, &estimate)?;
    Ok(assemble(input, m, k, floor, estimate, bounds))
}

/// Combines the two stages; `certify` is exactly this.
pub fn assemble(input: &Loaded, m: usize, k: usize, floor: Option<f64>, estimate: EstimateReport, bounds: BoundsReport) -> CertifiedReport {
    let n = input.traces.n() as f64;
    let clipped_kprime0 = bounds.gap.clipped.ln();
    let interval = match bounds.logdet_interval {
        Some((lo, hi)) => (Some(lo), hi),
        None => (None, bounds.logdet_upper),
    };
    CertifiedReport {
        input: input.descriptor.clone(),
        m,
        k,
        floor,
        interval,
        verdict: bounds.verdict,
        clipped_kprime0,
        clipped_logdet: n * (input.traces.am().ln() + clipped_kprime0),
        truth: input.truth(),
        warnings: bounds.warnings.clone(),
        estimate,
        bounds,
    }
}
