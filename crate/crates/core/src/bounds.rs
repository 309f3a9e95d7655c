//! Guaranteed bounds on `GM/AM` and the certified log-determinant interval.
//!
//! Closed forms (Maclaurin, Rodin, last slope, the `k = 2` floor bound) need no
//! solver; the `k`-trace bounds for `k ≥ 3` come from [`crate::solver`]. Upper
//! bounds hold for every spectrum with the given moments. Lower bounds need a
//! floor `r ≤ λ_min / AM`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::EstimateReport;
use crate::moments::{newton_maclaurin, normalize, NormalizedMoments, SymmetricMeans, TracePowers};
use crate::solver::{solve, Atom, AtomicMeasure, Sense, SolveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperKind {
    Maclaurin,
    Rodin,
    LastSlope,
    /// `min{Rodin, E_4^{1/4}, U_LS,4}`.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSense {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    EstimateInside,
    ClippedToUpper,
    ClippedToLower,
    NoLowerBound,
}

/// Rodin's finite-`n` bound `exp(((n-1) log(1-d) + log(1+(n-1)d)) / n)` with
/// `d = sqrt((M_2-1)/(n-1))`; `n` may be fractional.
pub fn rodin(m2: f64, n: f64) -> Result<f64> {
    if !(m2.is_finite() && m2 >= 1.0) {
        return Err(invalid(format!("M_2 = {m2} must be at least 1")));
    }
    if m2 == 1.0 {
        return Ok(1.0);
    }
    if n <= 1.0 {
        return Err(invalid(format!("M_2 = {m2} > 1 is impossible with n = {n}")));
    }
    let d = ((m2 - 1.0) / (n - 1.0)).sqrt();
    if d >= 1.0 {
        return Err(invalid(format!("M_2 = {m2} exceeds n = {n}")));
    }
    Ok((((n - 1.0) * (-d).ln_1p() + ((n - 1.0) * d).ln_1p()) / n).exp())
}

fn need_order(sm: Option<&SymmetricMeans>, m: usize) -> Result<&SymmetricMeans> {
    let sm = sm.ok_or_else(|| invalid("symmetric means required"))?;
    if m == 0 || m > sm.order() {
        return Err(invalid(format!("order {m} needs log E up to {m}, have {}", sm.order())));
    }
    Ok(sm)
}

/// Closed-form upper bound on `GM/AM`.
///
/// `sm` is needed for every kind but Rodin, `m2` for Rodin and the combined
/// bound (which fixes `m = 4`).
pub fn closed_form_upper(kind: UpperKind, sm: Option<&SymmetricMeans>, m2: Option<f64>, n: usize, m: usize) -> Result<f64> {
    match kind {
        UpperKind::Maclaurin => {
            let sm = need_order(sm, m)?;
            Ok((sm.log_e(m) / m as f64).exp())
        }
        UpperKind::Rodin => rodin(m2.ok_or_else(|| invalid("Rodin needs M_2"))?, n as f64),
        UpperKind::LastSlope => {
            let sm = need_order(sm, m)?;
            if n < m {
                return Err(invalid(format!("order {m} exceeds n = {n}")));
            }
            Ok(((sm.log_e(m) + (n - m) as f64 * sm.slope(m)) / n as f64).exp())
        }
        UpperKind::Combined => {
            let r = closed_form_upper(UpperKind::Rodin, sm, m2, n, 4)?;
            let mac = closed_form_upper(UpperKind::Maclaurin, sm, m2, n, 4)?;
            let ls = closed_form_upper(UpperKind::LastSlope, sm, m2, n, 4)?;
            Ok(r.min(mac).min(ls))
        }
    }
}

/// Two-atom measure at `r` and `x_2` matching `M_1 = 1` and `M_2`.
fn lower_k2_measure(m2: f64, r: f64) -> Result<(f64, f64)> {
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid(format!("floor r = {r} must be positive")));
    }
    if !(m2.is_finite() && m2 >= 1.0) {
        return Err(invalid(format!("M_2 = {m2} must be at least 1")));
    }
    if m2 > 1.0 && r >= 1.0 {
        return Err(Error::Infeasible { tol: 0.0, best: r - 1.0 });
    }
    let v = m2 - 1.0;
    let w1 = v / ((r - 1.0).powi(2) + v);
    Ok((w1, (1.0 - w1 * r) / (1.0 - w1)))
}

/// `L_2(r) = r^{w_1} x_2^{1 - w_1}`.
pub fn lower_k2_closed(m2: f64, r: f64) -> Result<f64> {
    let (w1, x2) = lower_k2_measure(m2, r)?;
    if w1 == 0.0 {
        return Ok(1.0);
    }
    Ok((w1 * r.ln() + (1.0 - w1) * x2.ln()).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KtraceBound {
    pub value: f64,
    pub witness: AtomicMeasure,
    /// Produced by a closed form rather than the solver.
    pub closed_form: bool,
}

fn measure(atoms: &[(f64, f64)]) -> Result<AtomicMeasure> {
    AtomicMeasure::new(atoms.iter().filter(|a| a.1 > 0.0).map(|&(x, w)| Atom { x, w }).collect())
}

/// `U_k` or `L_k(r)` from the first `k` moments.
///
/// At `k = 2` the upper bound is Rodin's finite-`n` form and the lower bound the
/// two-atom closed form; other orders solve the measure program.
pub fn ktrace_bound(sense: BoundSense, nm: &NormalizedMoments, k: usize, r: Option<f64>, cfg: &SolveConfig) -> Result<KtraceBound> {
    if k == 0 || k > nm.order() {
        return Err(invalid(format!("order k = {k} must lie in 1..={}", nm.order())));
    }
    if sense == BoundSense::Lower && r.is_none() {
        return Err(invalid("lower bound needs a floor r"));
    }
    if k == 2 {
        let m2 = nm.get(2);
        let (value, atoms) = match sense {
            BoundSense::Upper => {
                let n = nm.n() as f64;
                let value = rodin(m2, n)?;
                let d = if m2 == 1.0 { 0.0 } else { ((m2 - 1.0) / (n - 1.0)).sqrt() };
                (value, vec![(1.0 - d, (n - 1.0) / n), (1.0 + (n - 1.0) * d, 1.0 / n)])
            }
            BoundSense::Lower => {
                let r = r.expect("checked above");
                let (w1, x2) = lower_k2_measure(m2, r)?;
                (lower_k2_closed(m2, r)?, vec![(r, w1), (x2, 1.0 - w1)])
            }
        };
        let atoms = if m2 == 1.0 { vec![(1.0, 1.0)] } else { atoms };
        return Ok(KtraceBound {
            value,
            witness: measure(&atoms)?,
            closed_form: true,
        });
    }
    solver_bound(sense, nm, k, r, cfg)
}

/// [`ktrace_bound`] without the `k = 2` closed forms.
pub fn solver_bound(sense: BoundSense, nm: &NormalizedMoments, k: usize, r: Option<f64>, cfg: &SolveConfig) -> Result<KtraceBound> {
    if k == 0 || k > nm.order() {
        return Err(invalid(format!("order k = {k} must lie in 1..={}", nm.order())));
    }
    let s = match sense {
        BoundSense::Upper => Sense::Max,
        BoundSense::Lower => Sense::Min,
    };
    let sol = solve(s, &nm.values()[..k], r, cfg)?;
    Ok(KtraceBound {
        value: sol.objective.exp(),
        witness: sol.witness,
        closed_form: false,
    })
}

/// `n (log AM + log L)` to `n (log AM + log U)`; the lower end is `-∞` without `L`.
pub fn certified_interval(p1: f64, n: usize, u: f64, l: Option<f64>) -> Result<(f64, f64)> {
    if !(p1 > 0.0 && u > 0.0) || n == 0 {
        return Err(invalid("need p_1 > 0, U > 0 and n > 0"));
    }
    if let Some(l) = l {
        if !(l > 0.0 && l <= u) {
            return Err(invalid(format!("need 0 < L <= U, got L = {l}, U = {u}")));
        }
    }
    let nf = n as f64;
    let log_am = (p1 / nf).ln();
    let hi = nf * (log_am + u.ln());
    let lo = l.map_or(f64::NEG_INFINITY, |l| nf * (log_am + l.ln()));
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDiagnostic {
    /// Estimate of `GM/AM` after clipping to `[L, U]`.
    pub clipped: f64,
    pub verdict: Verdict,
    /// `U - L`, absent without a lower bound.
    pub width: Option<f64>,
}

/// Clips the estimate of `GM/AM` to the closed interval `[lo, hi]`.
///
/// Without `lo` the estimate is still clipped from above; otherwise it is kept
/// and the verdict is [`Verdict::NoLowerBound`].
pub fn gap_diagnostic(estimate: &EstimateReport, lo: Option<f64>, hi: f64) -> Result<GapDiagnostic> {
    if lo.is_some_and(|l| l > hi) {
        return Err(invalid("interval endpoints out of order"));
    }
    let g = estimate.gm_over_am_hat;
    let (clipped, verdict) = if g > hi {
        (hi, Verdict::ClippedToUpper)
    } else {
        match lo {
            None => (g, Verdict::NoLowerBound),
            Some(l) if g < l => (l, Verdict::ClippedToLower),
            Some(_) => (g, Verdict::EstimateInside),
        }
    };
    Ok(GapDiagnostic {
        clipped,
        verdict,
        width: lo.map(|l| hi - l),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub upper: BTreeMap<String, f64>,
    pub lower: BTreeMap<String, f64>,
    #[serde(rename = "U_best")]
    pub u_best: f64,
    #[serde(rename = "L_best")]
    pub l_best: Option<f64>,
    pub floor_r: Option<f64>,
    /// Certified `log det` interval; needs a lower bound.
    pub logdet_interval: Option<(f64, f64)>,
    /// Upper end of the `log det` interval, available without a floor.
    pub logdet_upper: f64,
    pub verdict: Verdict,
    pub gap: GapDiagnostic,
    pub warnings: Vec<String>,
}

/// Every bound available from the traces at order `k`, the interval and the
/// clipping verdict for `estimate`.
///
/// Maclaurin and last-slope bounds are reported for each order `2..=m` whose
/// Newton identities are numerically reliable; orders that lose too many digits
/// are left out.
pub fn bounds_report(tp: &TracePowers, k: usize, r: Option<f64>, estimate: &EstimateReport, cfg: &SolveConfig) -> Result<BoundsReport> {
    let nm = normalize(tp);
    let n = tp.n();
    if k == 0 || k > nm.order() {
        return Err(invalid(format!("order k = {k} must lie in 1..={}", nm.order())));
    }
    let mut upper = BTreeMap::new();
    let mut lower = BTreeMap::new();

    let mut warnings = Vec::new();
    let m = nm.order().min(n);
    let mut sm = None;
    for order in (1..=m).rev() {
        match newton_maclaurin(&nm.power_sums()[..order], n) {
            Ok(s) => {
                sm = Some(s);
                break;
            }
            Err(e @ Error::Cancellation { .. }) if order == m => {
                warnings.push(format!("{e}; Maclaurin and last-slope bounds use lower orders"));
            }
            Err(_) => {}
        }
    }
    if let Some(sm) = &sm {
        for j in 2..=sm.order() {
            upper.insert(format!("maclaurin_{j}"), closed_form_upper(UpperKind::Maclaurin, Some(sm), None, n, j)?);
            upper.insert(format!("last_slope_{j}"), closed_form_upper(UpperKind::LastSlope, Some(sm), None, n, j)?);
        }
    }
    if nm.order() >= 2 {
        let m2 = nm.get(2);
        upper.insert("rodin".into(), closed_form_upper(UpperKind::Rodin, None, Some(m2), n, 2)?);
        if let Some(r) = r {
            lower.insert("k2_closed".into(), lower_k2_closed(m2, r)?);
        }
    }
    // k >= 3 here, so Rodin is always available if the solver gives up
    if k != 2 {
        let mut attempt = |sense, floor, side: &mut BTreeMap<String, f64>| match ktrace_bound(sense, &nm, k, floor, cfg) {
            Ok(b) => {
                side.insert(format!("ktrace_{k}"), b.value);
                Ok(())
            }
            Err(e @ (Error::Infeasible { .. } | Error::SolverStalled { .. })) => {
                warnings.push(format!("{sense:?} k-trace bound at k = {k} dropped: {e}"));
                Ok(())
            }
            Err(e) => Err(e),
        };
        attempt(BoundSense::Upper, None, &mut upper)?;
        if r.is_some() {
            attempt(BoundSense::Lower, r, &mut lower)?;
        }
    }

    let u_best = upper.values().copied().fold(1.0, f64::min);
    let l_best = lower.values().copied().reduce(f64::max).map(|l| l.min(u_best));
    let gap = gap_diagnostic(estimate, l_best, u_best)?;
    let (lo, hi) = certified_interval(tp.get(1), n, u_best, l_best)?;
    if r.is_none() {
        warnings.push("no spectral floor given; lower bound omitted".into());
    }
    Ok(BoundsReport {
        upper,
        lower,
        u_best,
        l_best,
        floor_r: r,
        logdet_interval: l_best.map(|_| (lo, hi)),
        logdet_upper: hi,
        verdict: gap.verdict,
        gap,
        warnings,
    })
}
