//! Trace powers, normalized moments, CGF samples, Maclaurin means and Box-Cox samples.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{binomial, compensated_sum};

/// Largest relative error tolerated in an elementary symmetric polynomial.
pub const CANCELLATION_TOL: f64 = 1e-6;

/// `(n, p_1..p_m)` with `p_k = tr(A^k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePowers {
    n: usize,
    p: Vec<f64>,
}

impl TracePowers {
    pub fn new(n: usize, p: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        if p.is_empty() {
            return Err(invalid("need at least p_1"));
        }
        if let Some((k, v)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("p_{} = {v} is not positive and finite", k + 1)));
        }
        Ok(Self { n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Highest available power.
    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// `p_k`, 1-based.
    pub fn get(&self, k: usize) -> f64 {
        self.p[k - 1]
    }

    pub fn am(&self) -> f64 {
        self.p[0] / self.n as f64
    }

    /// Keeps `p_1..p_m` only.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m() {
            return Err(invalid(format!("cannot truncate {} traces to {m}", self.m())));
        }
        Ok(Self {
            n: self.n,
            p: self.p[..m].to_vec(),
        })
    }
}

/// `M_k = n^{k-1} p_k / p_1^k`, the moments of `X = λ/AM`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMoments {
    n: usize,
    m: Vec<f64>,
}

impl NormalizedMoments {
    /// Builds from `M_1..M_k` directly; `M_1` must be 1.
    pub fn new(n: usize, moments: Vec<f64>) -> Result<Self> {
        if moments.is_empty() {
            return Err(invalid("need at least M_1"));
        }
        if (moments[0] - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("M_1 must be 1, got {}", moments[0])));
        }
        if let Some(v) = moments.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("moment {v} is not positive and finite")));
        }
        let mut m = moments;
        m[0] = 1.0;
        Ok(Self { n, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.m.len()
    }

    /// `M_1..M_m`.
    pub fn values(&self) -> &[f64] {
        &self.m
    }

    /// `M_k` with `M_0 = 1`.
    pub fn get(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.m[k - 1]
        }
    }

    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.order() {
            return Err(invalid(format!("cannot truncate {} moments to {k}", self.order())));
        }
        Ok(Self {
            n: self.n,
            m: self.m[..k].to_vec(),
        })
    }

    /// Power sums `q_k = n M_k` of the normalized spectrum.
    pub fn power_sums(&self) -> Vec<f64> {
        self.m.iter().map(|v| self.n as f64 * v).collect()
    }
}

/// `K(0..m)` with `K(0) = K(1) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantSamples {
    k: Vec<f64>,
}

impl CumulantSamples {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.len() < 2 || k[0] != 0.0 || k[1] != 0.0 {
            return Err(invalid("cumulant samples must start with K(0) = K(1) = 0"));
        }
        Ok(Self { k })
    }

    /// `K(0..m)`.
    pub fn values(&self) -> &[f64] {
        &self.k
    }

    pub fn get(&self, t: usize) -> f64 {
        self.k[t]
    }

    /// Highest sampled index.
    pub fn max_index(&self) -> usize {
        self.k.len() - 1
    }
}

/// Log Maclaurin means `log E_k`, `E_k = e_k / C(n, k)`, and their slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMeans {
    n: usize,
    log_e: Vec<f64>,
    slopes: Vec<f64>,
}

impl SymmetricMeans {
    fn from_log_e(n: usize, log_e: Vec<f64>) -> Self {
        let slopes = (0..log_e.len())
            .map(|i| if i == 0 { log_e[0] } else { log_e[i] - log_e[i - 1] })
            .collect();
        Self { n, log_e, slopes }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.log_e.len()
    }

    /// `log E_k`, 1-based.
    pub fn log_e(&self, k: usize) -> f64 {
        self.log_e[k - 1]
    }

    /// `s_k = log E_k - log E_{k-1}` with `E_0 = 1`, 1-based.
    pub fn slope(&self, k: usize) -> f64 {
        self.slopes[k - 1]
    }

    pub fn log_e_values(&self) -> &[f64] {
        &self.log_e
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }
}

pub fn normalize(tp: &TracePowers) -> NormalizedMoments {
    let n = tp.n as f64;
    let am = tp.am();
    let mut m: Vec<f64> = (1..=tp.m())
        .map(|k| (tp.get(k) / n) / am.powi(k as i32))
        .collect();
    m[0] = 1.0;
    NormalizedMoments { n: tp.n, m }
}

pub fn cumulants(nm: &NormalizedMoments) -> CumulantSamples {
    let mut k = Vec::with_capacity(nm.order() + 1);
    k.push(0.0);
    k.push(0.0);
    k.extend(nm.m[1..].iter().map(|v| v.ln()));
    CumulantSamples { k }
}

/// Elementary symmetric means from power sums via Newton's identities.
///
/// Fails with [`Error::Cancellation`] when an `e_k` comes out nonpositive or its
/// propagated relative error bound exceeds [`CANCELLATION_TOL`].
pub fn newton_maclaurin(q: &[f64], n: usize) -> Result<SymmetricMeans> {
    let m = q.len();
    if m == 0 {
        return Err(invalid("need at least one power sum"));
    }
    if m > n {
        return Err(invalid(format!("order {m} exceeds n = {n}")));
    }
    if let Some(v) = q.iter().find(|v| !v.is_finite()) {
        return Err(invalid(format!("power sum {v} is not finite")));
    }
    let unit = f64::EPSILON / 2.0;
    let mut e = vec![1.0f64];
    let mut rel = vec![0.0f64];
    let mut log_e = Vec::with_capacity(m);
    for k in 1..=m {
        let terms: Vec<f64> = (1..=k)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * e[k - j] * q[j - 1]
            })
            .collect();
        let sum = compensated_sum(terms.iter().copied());
        let ek = sum / k as f64;
        let spread = compensated_sum(
            (1..=k).map(|j| terms[j - 1].abs() * (rel[k - j] + 2.0 * unit)),
        );
        let bound = spread / sum.abs() + unit;
        if !(ek > 0.0) || !ek.is_finite() || bound > CANCELLATION_TOL {
            return Err(Error::Cancellation {
                order: k,
                loss: if sum == 0.0 { f64::INFINITY } else { bound },
            });
        }
        e.push(ek);
        rel.push(bound);
        log_e.push(ek.ln() - log_binomial(n, k));
    }
    Ok(SymmetricMeans::from_log_e(n, log_e))
}

/// Maclaurin means from explicit values via the product expansion, which has no
/// cancellation for positive inputs.
pub fn maclaurin_from_values(x: &[f64], m: usize) -> Result<SymmetricMeans> {
    let n = x.len();
    if m == 0 || m > n {
        return Err(invalid(format!("order {m} must lie in 1..={n}")));
    }
    if x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("values must be positive and finite"));
    }
    // E_k^{(i)} = ((i-k) E_k^{(i-1)} + k x_i E_{k-1}^{(i-1)}) / i keeps everything O(1)
    let mut big_e = vec![0.0f64; m + 1];
    big_e[0] = 1.0;
    for (idx, xi) in x.iter().enumerate() {
        let i = (idx + 1) as f64;
        for k in (1..=m.min(idx + 1)).rev() {
            let kf = k as f64;
            big_e[k] = ((i - kf) * big_e[k] + kf * xi * big_e[k - 1]) / i;
        }
    }
    let log_e = big_e[1..].iter().map(|v| v.ln()).collect();
    Ok(SymmetricMeans::from_log_e(n, log_e))
}

fn log_binomial(n: usize, k: usize) -> f64 {
    match binomial(n as u64, k as u64) {
        Some(c) => (c as f64).ln(),
        None => compensated_sum((0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln())),
    }
}

/// `μ_2..μ_order` of `X` about its mean 1.
pub fn central_moments(nm: &NormalizedMoments, order: usize) -> Result<Vec<f64>> {
    if order < 2 || order > nm.order() {
        return Err(invalid(format!("central moment order {order} must lie in 2..={}", nm.order())));
    }
    Ok((2..=order)
        .map(|k| {
            compensated_sum((0..=k).map(|j| {
                let c = binomial(k as u64, j as u64).expect("small binomial") as f64;
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * c * nm.get(j)
            }))
        })
        .collect())
}

/// `(e^z - 1) / z`, accurate near zero.
pub(crate) fn exprel(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut acc = term;
        for i in 2..30 {
            term = term * z / i as f64;
            acc += term;
            if term.norm() < 1e-17 * acc.norm() {
                break;
            }
        }
        acc
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `G(k) = Re[(M_k^α - 1)/α]` for `k = 0..m`.
pub fn boxcox_samples(nm: &NormalizedMoments, alpha: Complex64) -> Result<Vec<f64>> {
    if alpha == Complex64::new(0.0, 0.0) || !alpha.is_finite() {
        return Err(invalid("Box-Cox parameter must be finite and nonzero"));
    }
    let mut g = vec![0.0, 0.0];
    g.extend(nm.m[1..].iter().map(|v| {
        let l = v.ln();
        (exprel(alpha * l) * l).re
    }));
    Ok(g)
}
