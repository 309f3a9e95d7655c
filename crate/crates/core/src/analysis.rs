//! When interpolation of `K` can be trusted: Taylor radius, saturation on
//! `{1, κ}`, and pairs of spectra that share moments but not `E[log X]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::k0m_estimate;
use crate::moments::CumulantSamples;
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusFamily {
    TwoPoint,
    LogUniform,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub family: RadiusFamily,
    pub kappa: f64,
    /// Weight on the larger atom of a two-point spectrum.
    pub p: Option<f64>,
    pub radius: f64,
    /// Largest integer node inside the radius.
    pub safe_order: usize,
}

/// Radius of convergence of the Taylor series of `K` at 0.
///
/// Two-point spectra with weight `p` on the top atom: `sqrt(log²((1-p)/p) + π²) / log κ`
/// (`p` defaults to ½). Log-uniform on `[1, κ]`: `2π / log κ`. Uniform:
/// `sqrt(1 + (2π / log κ)²)`.
pub fn taylor_radius(family: RadiusFamily, kappa: f64, p: Option<f64>) -> Result<RadiusReport> {
    if !(kappa.is_finite() && kappa > 1.0) {
        return Err(invalid(format!("kappa = {kappa} must exceed 1")));
    }
    let lk = kappa.ln();
    let (radius, p) = match family {
        RadiusFamily::TwoPoint => {
            let p = p.unwrap_or(0.5);
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("two-point weight p = {p} must lie in (0, 1)")));
            }
            (((1.0 - p) / p).ln().hypot(PI) / lk, Some(p))
        }
        RadiusFamily::LogUniform => (2.0 * PI / lk, None),
        RadiusFamily::Uniform => ((2.0 * PI / lk).hypot(1.0), None),
    };
    Ok(RadiusReport {
        family,
        kappa,
        p,
        radius,
        safe_order: radius.floor() as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub kappa: f64,
    pub m: usize,
    pub estimate: f64,
    pub truth: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationScan {
    pub rows: Vec<SaturationRow>,
    /// First `κ` (in scan order) with `|rel_error| > 50%`, per order.
    pub first_failure: BTreeMap<usize, Option<f64>>,
}

/// `K(0..=m)` of the equal-weight spectrum `{1, κ}`.
fn two_point_cumulants(kappa: f64, m: usize) -> Result<CumulantSamples> {
    let lo = (2.0 / (1.0 + kappa)).ln();
    let hi = (2.0 * kappa / (1.0 + kappa)).ln();
    let mut k: Vec<f64> = (0..=m)
        .map(|t| {
            let (a, b) = (t as f64 * lo, t as f64 * hi);
            // log((e^a + e^b) / 2) without overflow
            let top = a.max(b);
            top + ((a - top).exp() + (b - top).exp()).ln() - std::f64::consts::LN_2
        })
        .collect();
    k[0] = 0.0;
    k[1] = 0.0;
    CumulantSamples::new(k)
}

fn rel_error(estimate: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        if estimate == 0.0 {
            0.0
        } else {
            estimate.signum() * f64::INFINITY
        }
    } else {
        (estimate - truth) / truth.abs()
    }
}

/// Exact-moment `k_{0:m}` against `log(2√κ / (1 + κ))` on `{1, κ}`.
pub fn saturation_scan(kappas: &[f64], orders: &[usize]) -> Result<SaturationScan> {
    if let Some(k) = kappas.iter().find(|k| !(k.is_finite() && **k >= 1.0)) {
        return Err(invalid(format!("kappa = {k} must be at least 1")));
    }
    let mut rows = Vec::with_capacity(kappas.len() * orders.len());
    let mut first_failure: BTreeMap<usize, Option<f64>> = orders.iter().map(|&m| (m, None)).collect();
    for &kappa in kappas {
        let truth = (2.0 * kappa.sqrt() / (1.0 + kappa)).ln();
        for &m in orders {
            let estimate = k0m_estimate(&two_point_cumulants(kappa, m)?, m)?.kprime0_hat;
            let rel_error = rel_error(estimate, truth);
            if rel_error.abs() > 0.5 {
                first_failure.entry(m).and_modify(|f| {
                    f.get_or_insert(kappa);
                });
            }
            rows.push(SaturationRow {
                kappa,
                m,
                estimate,
                truth,
                rel_error,
            });
        }
    }
    Ok(SaturationScan { rows, first_failure })
}

/// Derivative at 0 of the Lagrange basis on `{0} ∪ nodes`, one weight per node.
pub fn node_derivative_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    if nodes.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(invalid("nodes must be positive"));
    }
    for (i, a) in nodes.iter().enumerate() {
        if nodes[..i].contains(a) {
            return Err(invalid(format!("node {a} repeated")));
        }
    }
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(j, &tj)| {
            let mut w = 1.0 / tj;
            for (i, &ti) in nodes.iter().enumerate() {
                if i != j {
                    w *= -ti / (tj - ti);
                }
            }
            w
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonidentPair {
    pub support: Vec<f64>,
    pub nodes: Vec<f64>,
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
    /// `Σ (w⁺ - w⁻) log x`.
    pub delta_logmean: f64,
    /// Perturbation size actually used.
    pub eps: f64,
    /// Largest `ε` keeping both weight vectors nonnegative.
    pub eps_max: f64,
}

impl NonidentPair {
    pub fn log_means(&self) -> (f64, f64) {
        let lm = |w: &[f64]| compensated_sum(w.iter().zip(&self.support).map(|(w, x)| w * x.ln()));
        (lm(&self.w_plus), lm(&self.w_minus))
    }

    /// `Σ w x^t` for both members.
    pub fn moments(&self, t: f64) -> (f64, f64) {
        let mom = |w: &[f64]| compensated_sum(w.iter().zip(&self.support).map(|(w, x)| w * x.powf(t)));
        (mom(&self.w_plus), mom(&self.w_minus))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Removes the components along `basis` (orthonormal), twice for stability.
fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    }
}

/// Mean-one weights, positive on every support point: the average over all
/// pairs straddling 1 of the two-atom mean-one measure on the pair.
fn mean_one_base(x: &[f64]) -> Result<Vec<f64>> {
    let mut w = vec![0.0; x.len()];
    let mut count = 0usize;
    for (i, &a) in x.iter().enumerate() {
        if a == 1.0 {
            w[i] += 1.0;
            count += 1;
        }
        for (j, &b) in x.iter().enumerate() {
            if a < 1.0 && b > 1.0 {
                let wa = (b - 1.0) / (b - a);
                w[i] += wa;
                w[j] += 1.0 - wa;
                count += 1;
            }
        }
    }
    if count == 0 || w.iter().any(|v| *v <= 0.0) {
        return Err(invalid("support must have points on both sides of 1"));
    }
    Ok(w.into_iter().map(|v| v / count as f64).collect())
}

/// Two measures on `support` with equal `Σ w x^t` for `t ∈ {0, 1} ∪ nodes` but
/// different `E[log X]`.
///
/// The perturbation direction is the projection of `log x` onto the null space
/// of the moment rows, so the log-mean gap is as large as possible for a given
/// `ε`. `eps` is shrunk to the largest value keeping both weight vectors
/// nonnegative; pass `f64::INFINITY` to get that maximum.
pub fn nonidentifiable_pair(support: &[f64], nodes: &[f64], eps: f64) -> Result<NonidentPair> {
    if support.len() < nodes.len() + 3 {
        return Err(invalid(format!("need at least {} support points for {} nodes", nodes.len() + 3, nodes.len())));
    }
    if support.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(invalid("support points must be positive"));
    }
    for (i, a) in support.iter().enumerate() {
        if support[..i].contains(a) {
            return Err(invalid(format!("support point {a} repeated")));
        }
    }
    if nodes.iter().any(|t| !(t.is_finite() && *t > 0.0 && *t != 1.0)) {
        return Err(invalid("nodes must be positive and differ from 1"));
    }
    if !(eps >= 0.0) {
        return Err(invalid(format!("eps = {eps} must be nonnegative")));
    }

    let rows: Vec<Vec<f64>> = [0.0, 1.0]
        .iter()
        .chain(nodes)
        .map(|&t| support.iter().map(|x| x.powf(t)).collect())
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for row in &rows {
        let mut q = row.clone();
        project_out(&mut q, &basis);
        let norm = dot(&q, &q).sqrt();
        let scale = dot(row, row).sqrt();
        if norm <= 1e-12 * scale {
            continue;
        }
        q.iter_mut().for_each(|v| *v /= norm);
        basis.push(q);
    }

    let logs: Vec<f64> = support.iter().map(|x| x.ln()).collect();
    let mut v = logs.clone();
    project_out(&mut v, &basis);
    let gain = dot(&v, &logs);
    let vnorm = dot(&v, &v).sqrt();
    if !(vnorm > 1e-12 * dot(&logs, &logs).sqrt()) {
        return Err(Error::Degenerate("null space is orthogonal to log x; choose another support".into()));
    }
    v.iter_mut().for_each(|c| *c /= vnorm);
    for row in &rows {
        let scale = dot(row, row).sqrt();
        let r = dot(row, &v).abs();
        if r > 1e-12 * scale {
            return Err(Error::Degenerate(format!("null vector residual {r:e} too large")));
        }
    }

    let w0 = mean_one_base(support)?;
    let eps_max = w0
        .iter()
        .zip(&v)
        .filter(|(_, c)| **c != 0.0)
        .map(|(w, c)| w / c.abs())
        .fold(f64::INFINITY, f64::min);
    let eps = eps.min(eps_max);
    let shift = |s: f64| -> Vec<f64> { w0.iter().zip(&v).map(|(w, c)| (w + s * eps * c).max(0.0)).collect() };
    Ok(NonidentPair {
        support: support.to_vec(),
        nodes: nodes.to_vec(),
        w_plus: shift(1.0),
        w_minus: shift(-1.0),
        delta_logmean: 2.0 * eps * gain / vnorm,
        eps,
        eps_max,
    })
}
