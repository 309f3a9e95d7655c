//! Point estimators of `K'(0) = log(GM/AM)`.
//!
//! The `k_{0:m}` estimator differentiates the Lagrange interpolant of `K` through
//! the integer nodes `0..m` at the origin. The weights have the closed form
//! `w_j = (-1)^{j-1} C(m, j) / j` and `w_0 = -H_m`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::moments::{boxcox_samples, cumulants, CumulantSamples, NormalizedMoments, TracePowers};
use crate::numeric::{binomial, compensated_sum, gcd, harmonic};

pub const MAX_ORDER: usize = 64;

/// Box-Cox parameters used by [`cv_diagnostic`] besides the log transform.
pub const CV_ALPHAS: [f64; 2] = [-0.3, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub m: usize,
    pub w0: f64,
    /// `w_1..w_m`.
    pub w: Vec<f64>,
}

impl WeightVector {
    /// `w_j` for `j = 0..=m`.
    pub fn get(&self, j: usize) -> f64 {
        if j == 0 {
            self.w0
        } else {
            self.w[j - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    K0m,
    LognormalClosed,
    Latane,
    Boxcox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: EstimateMethod,
    pub m: usize,
    pub kprime0_hat: f64,
    pub gm_over_am_hat: f64,
    #[serde(default)]
    pub logdet_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Complex64>,
}

impl EstimateReport {
    fn new(method: EstimateMethod, m: usize, kprime0_hat: f64) -> Self {
        Self {
            method,
            m,
            kprime0_hat,
            gm_over_am_hat: kprime0_hat.exp(),
            logdet_hat: None,
            alpha: None,
        }
    }

    /// Fills `logdet_hat = n (log AM + K̂'(0))`.
    pub fn with_scale(mut self, n: usize, am: f64) -> Self {
        self.logdet_hat = Some(n as f64 * (am.ln() + self.kprime0_hat));
        self
    }
}

/// Exact `w_j` as a reduced fraction `(numerator, denominator)`.
pub fn weight_fraction(m: usize, j: usize) -> Result<(i128, u128)> {
    if !(2..=MAX_ORDER).contains(&m) || j == 0 || j > m {
        return Err(invalid(format!("weight index ({m}, {j}) out of range")));
    }
    let c = u128::from(binomial(m as u64, j as u64).expect("binomials up to m = 64 fit in u64"));
    let g = gcd(c, j as u128);
    let num = (c / g) as i128;
    Ok((if j % 2 == 1 { num } else { -num }, j as u128 / g))
}

pub fn lagrange_weights(m: usize) -> Result<WeightVector> {
    if !(2..=MAX_ORDER).contains(&m) {
        return Err(invalid(format!("order m = {m} must lie in 2..={MAX_ORDER}")));
    }
    let w = (1..=m)
        .map(|j| {
            let (num, den) = weight_fraction(m, j).expect("validated range");
            num as f64 / den as f64
        })
        .collect();
    Ok(WeightVector {
        m,
        w0: -harmonic(m),
        w,
    })
}

/// `Σ_{j=2..m} w_j K(j)`; `K(0)` and `K(1)` vanish.
pub fn k0m_estimate(k: &CumulantSamples, m: usize) -> Result<EstimateReport> {
    if m > k.max_index() {
        return Err(invalid(format!("order {m} needs K up to {m}, have {}", k.max_index())));
    }
    let w = lagrange_weights(m)?;
    let est = compensated_sum((2..=m).map(|j| w.get(j) * k.get(j)));
    Ok(EstimateReport::new(EstimateMethod::K0m, m, est))
}

/// Normalize, take logs and apply `k_{0:m}`, with `logdet_hat` filled.
pub fn estimate_from_traces(tp: &TracePowers, m: usize) -> Result<EstimateReport> {
    if m > tp.m() {
        return Err(invalid(format!("order {m} needs {m} traces, have {}", tp.m())));
    }
    let k = cumulants(&crate::moments::normalize(tp));
    Ok(k0m_estimate(&k, m)?.with_scale(tp.n(), tp.am()))
}

/// `GM ≈ p_1² / (n sqrt(n p_2))`, exact for lognormal spectra.
pub fn lognormal_closed_form(p1: f64, p2: f64, n: usize) -> Result<EstimateReport> {
    if !(p1 > 0.0 && p2 > 0.0 && p1.is_finite() && p2.is_finite()) {
        return Err(invalid("traces must be positive and finite"));
    }
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let nf = n as f64;
    let am = p1 / nf;
    let gm = p1 * p1 / (nf * (nf * p2).sqrt());
    let mut r = EstimateReport::new(EstimateMethod::LognormalClosed, 2, (gm / am).ln());
    r.gm_over_am_hat = gm / am;
    r.logdet_hat = Some(nf * gm.ln());
    Ok(r)
}

/// Truncated Taylor series of `E[log X]` about the mean: `Σ (-1)^{k-1} μ_k / k`.
pub fn latane_estimate(mu: &[f64], order: usize) -> Result<EstimateReport> {
    if order < 2 || order - 1 > mu.len() {
        return Err(invalid(format!("order {order} needs μ_2..μ_{order}")));
    }
    let est = compensated_sum((2..=order).map(|k| {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sign * mu[k - 2] / k as f64
    }));
    Ok(EstimateReport::new(EstimateMethod::Latane, order, est))
}

/// `k_{0:m}` applied to Box-Cox samples `G(0..m)`.
///
/// The general contract divides by `f'(1)`; for `f_α(z) = (z^α - 1)/α` that is 1.
pub fn transform_estimate(g: &[f64], alpha: Complex64, m: usize) -> Result<EstimateReport> {
    if alpha == Complex64::new(0.0, 0.0) {
        return Err(invalid("use k0m_estimate for the log transform"));
    }
    if g.len() < m + 1 || g.len() < 2 || g[0] != 0.0 || g[1] != 0.0 {
        return Err(invalid(format!("need G(0..{m}) with G(0) = G(1) = 0")));
    }
    let w = lagrange_weights(m)?;
    let est = compensated_sum((2..=m).map(|j| w.get(j) * g[j]));
    let mut r = EstimateReport::new(EstimateMethod::Boxcox, m, est);
    r.alpha = Some(alpha);
    Ok(r)
}

/// Box-Cox estimate straight from normalized moments.
pub fn boxcox_estimate(nm: &NormalizedMoments, alpha: Complex64, m: usize) -> Result<EstimateReport> {
    let g = boxcox_samples(&nm.truncated(m)?, alpha)?;
    transform_estimate(&g, alpha, m)
}

/// Coefficient of variation (%) of the estimates at `α = -0.3, 0, +0.3`.
///
/// Uses the population standard deviation of the three values.
pub fn cv_diagnostic(nm: &NormalizedMoments, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(invalid("CV diagnostic needs m ≥ 2"));
    }
    let nm = nm.truncated(m)?;
    let mut est = vec![k0m_estimate(&cumulants(&nm), m)?.kprime0_hat];
    for a in CV_ALPHAS {
        est.push(boxcox_estimate(&nm, Complex64::new(a, 0.0), m)?.kprime0_hat);
    }
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    if mean == 0.0 {
        if est.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        return Err(Error::Undefined("CV with zero mean estimate".into()));
    }
    let var = est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / est.len() as f64;
    Ok(100.0 * var.sqrt() / mean.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{central_moments, normalize};
    use crate::spectra::{exact_stats, generate, trace_powers, Spectrum, SpectrumFamily};
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn rational_weight(m: i64, j: i64) -> Ratio<i128> {
        let mut c: i128 = 1;
        for i in 0..j {
            c = c * (m - i) as i128 / (i + 1) as i128;
        }
        let sign = if j % 2 == 1 { 1 } else { -1 };
        Ratio::new(sign * c, j as i128)
    }

    #[test]
    fn weight_examples() {
        let w = lagrange_weights(4).unwrap();
        assert_eq!(w.w, vec![4.0, -3.0, 4.0 / 3.0, -0.25]);
        assert_eq!(w.w0, -25.0 / 12.0);
        let w = lagrange_weights(2).unwrap();
        assert_eq!(w.w, vec![2.0, -0.5]);
        assert_eq!(w.w0, -1.5);
        let w = lagrange_weights(8).unwrap();
        assert_eq!(w.get(2), -14.0);
        assert_eq!(w.get(8), -0.125);
        assert!(lagrange_weights(1).is_err());
        assert!(lagrange_weights(65).is_err());
        assert!(lagrange_weights(64).is_ok());
    }

    #[test]
    fn fractions_match_rational_oracle() {
        for m in 2..=20i64 {
            for j in 1..=m {
                let (num, den) = weight_fraction(m as usize, j as usize).unwrap();
                let want = rational_weight(m, j);
                assert_eq!((num, den as i128), (*want.numer(), *want.denom()));
            }
        }
    }

    #[test]
    fn k0m_examples() {
        let k = CumulantSamples::new(vec![0.0; 6]).unwrap();
        assert_eq!(k0m_estimate(&k, 5).unwrap().kprime0_hat, 0.0);

        let s = Spectrum::custom(vec![1.0, 4.0]).unwrap();
        let r = estimate_from_traces(&trace_powers(&s, 2).unwrap(), 2).unwrap();
        assert!((r.kprime0_hat + 0.5 * 1.36f64.ln()).abs() < 1e-15);
        assert!((r.kprime0_hat + 0.153_742_349_873_980_36).abs() < 1e-12);

        assert!(k0m_estimate(&k, 6).is_err());
    }

    #[test]
    fn geometric_k04_error() {
        let s = generate(SpectrumFamily::Geometric, 1024, 100.0, None).unwrap();
        let truth = exact_stats(&s).kprime0;
        let r = estimate_from_traces(&trace_powers(&s, 4).unwrap(), 4).unwrap();
        let err = 100.0 * (r.kprime0_hat - truth) / truth.abs();
        assert!((err - 5.6).abs() < 0.1, "{err}");
        let logdet = exact_stats(&s).logdet;
        assert!((r.logdet_hat.unwrap() - logdet).abs() / logdet.abs() < 0.2);
    }

    #[test]
    fn lognormal_closed_examples() {
        let r = lognormal_closed_form(4.0, 16.0, 1).unwrap();
        assert!((r.logdet_hat.unwrap().exp() - 4.0).abs() < 1e-14);
        let r = lognormal_closed_form(7.0 * 2.5, 7.0 * 6.25, 7).unwrap();
        assert!(r.kprime0_hat.abs() < 1e-15);
        assert!((r.logdet_hat.unwrap() - 7.0 * 2.5f64.ln()).abs() < 1e-13);
        // population lognormal σ = 0.5: M_2 = e^{σ²}, AM normalized to 1
        let n = 1000usize;
        let p2 = n as f64 * 0.25f64.exp();
        let r = lognormal_closed_form(n as f64, p2, n).unwrap();
        assert!((r.gm_over_am_hat - (-0.125f64).exp()).abs() < 1e-14);
        assert!((r.gm_over_am_hat - 0.882_496_902_584_595).abs() < 1e-12);
    }

    #[test]
    fn latane_examples() {
        assert!((latane_estimate(&[0.2], 2).unwrap().kprime0_hat + 0.1).abs() < 1e-16);
        assert_eq!(latane_estimate(&[0.0; 5], 6).unwrap().kprime0_hat, 0.0);
        assert!(latane_estimate(&[0.2], 3).is_err());
    }

    #[test]
    fn latane_diverges_on_geometric() {
        let s = generate(SpectrumFamily::Geometric, 1024, 100.0, None).unwrap();
        let truth = exact_stats(&s).kprime0;
        let nm = normalize(&trace_powers(&s, 12).unwrap());
        let mu = central_moments(&nm, 12).unwrap();
        let e12 = (latane_estimate(&mu, 12).unwrap().kprime0_hat - truth).abs();
        assert!(e12 > 1e3, "{e12}");
    }

    #[test]
    fn transform_examples() {
        let s = Spectrum::custom(vec![3.0; 5]).unwrap();
        let nm = normalize(&trace_powers(&s, 4).unwrap());
        let r = boxcox_estimate(&nm, Complex64::new(1.0, 0.0), 4).unwrap();
        assert_eq!(r.kprime0_hat, 0.0);
        assert_eq!(r.alpha, Some(Complex64::new(1.0, 0.0)));

        let s = generate(SpectrumFamily::Geometric, 256, 30.0, None).unwrap();
        let nm = normalize(&trace_powers(&s, 6).unwrap());
        let base = k0m_estimate(&cumulants(&nm), 6).unwrap().kprime0_hat;
        for a in [Complex64::new(1e-6, 0.0), Complex64::new(0.0, 1e-6), Complex64::new(-1e-6, 0.0)] {
            let r = boxcox_estimate(&nm, a, 6).unwrap();
            assert!((r.kprime0_hat - base).abs() < 1e-6);
        }
    }

    #[test]
    fn complex_boxcox_on_two_point() {
        let s = generate(SpectrumFamily::TwoPoint, 1024, 100.0, None).unwrap();
        let truth = exact_stats(&s).kprime0;
        let nm = normalize(&trace_powers(&s, 4).unwrap());
        let r = boxcox_estimate(&nm, Complex64::new(0.0, 1.3), 4).unwrap();
        let err = 100.0 * (r.kprime0_hat - truth) / truth.abs();
        assert!(err.abs() < 1.0, "{err}");
    }

    #[test]
    fn cv_examples() {
        let s = Spectrum::custom(vec![2.0; 8]).unwrap();
        let nm = normalize(&trace_powers(&s, 4).unwrap());
        assert_eq!(cv_diagnostic(&nm, 4).unwrap(), 0.0);

        let tp = |fam| trace_powers(&generate(fam, 1024, 10.0, None).unwrap(), 4).unwrap();
        let cv = cv_diagnostic(&normalize(&tp(SpectrumFamily::TwoPoint)), 4).unwrap();
        assert!(cv > 20.0, "{cv}");
        let cv = cv_diagnostic(&normalize(&tp(SpectrumFamily::Geometric)), 4).unwrap();
        assert!(cv < 10.0, "{cv}");
    }

    fn lognormal_moments(sigma: f64, m: usize) -> NormalizedMoments {
        let s2 = sigma * sigma;
        let v = (1..=m)
            .map(|k| {
                let k = k as f64;
                (-s2 * k / 2.0 + s2 * k * k / 2.0).exp()
            })
            .collect();
        NormalizedMoments::new(1 << 20, v).unwrap()
    }

    #[test]
    fn lognormal_exactness() {
        for sigma in [0.25, 0.5, 1.0] {
            let nm = lognormal_moments(sigma, 8);
            for m in 2..=8 {
                let est = k0m_estimate(&cumulants(&nm), m).unwrap().kprime0_hat;
                assert!((est + sigma * sigma / 2.0).abs() < 1e-10, "σ={sigma} m={m}");
            }
        }
    }

    proptest! {
        #[test]
        fn weight_identities(m in 2usize..=20) {
            // exact in rationals
            let frac: Vec<Ratio<i128>> = (1..=m)
                .map(|j| {
                    let (num, den) = weight_fraction(m, j).unwrap();
                    Ratio::new(num, den as i128)
                })
                .collect();
            let h: Ratio<i128> = (1..=m as i128).map(|k| Ratio::new(1, k)).sum();
            prop_assert_eq!(frac.iter().sum::<Ratio<i128>>(), h);
            let lin: Ratio<i128> = frac.iter().enumerate().map(|(i, v)| v * (i as i128 + 1)).sum();
            prop_assert_eq!(lin, Ratio::from_integer(1));

            // in floating point, up to the rounding of the weights themselves
            let w = lagrange_weights(m).unwrap();
            let l1: f64 = w.w.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v.abs()).sum();
            let tol = 1e-12 * l1.max(1.0);
            let sum = compensated_sum(w.w.iter().copied());
            prop_assert!((sum - harmonic(m)).abs() < tol);
            let lin = compensated_sum(w.w.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v));
            prop_assert!((lin - 1.0).abs() < tol);
            prop_assert!((w.w0 + sum).abs() < tol);
        }

        #[test]
        fn moment_form_equivalence(x in prop::collection::vec(0.1f64..10.0, 2..30), m in 2usize..=8) {
            let s = Spectrum::custom(x).unwrap();
            let nm = normalize(&trace_powers(&s, m).unwrap());
            let est = k0m_estimate(&cumulants(&nm), m).unwrap();
            let w = lagrange_weights(m).unwrap();
            let prod: f64 = (2..=m).map(|j| nm.get(j).powf(w.get(j))).product();
            prop_assert!((est.gm_over_am_hat - prod).abs() <= 1e-12 * prod.max(1.0) * 10.0);
        }

        #[test]
        fn k02_is_lognormal_closed_form(x in prop::collection::vec(0.1f64..10.0, 2..30)) {
            let s = Spectrum::custom(x).unwrap();
            let tp = trace_powers(&s, 2).unwrap();
            let k = cumulants(&normalize(&tp));
            let a = k0m_estimate(&k, 2).unwrap().kprime0_hat;
            let b = lognormal_closed_form(tp.get(1), tp.get(2), tp.n()).unwrap().kprime0_hat;
            prop_assert!((a + 0.5 * k.get(2)).abs() < 1e-15);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn plugin_continuity(kappa in 2.0f64..200.0, m in 2usize..=8, signs in prop::collection::vec(any::<bool>(), 8)) {
            let s = generate(SpectrumFamily::Geometric, 128, kappa, None).unwrap();
            let tp = trace_powers(&s, m).unwrap();
            let bumped: Vec<f64> = tp.p().iter().zip(&signs)
                .map(|(p, up)| p * if *up { 1.0 + 1e-9 } else { 1.0 - 1e-9 })
                .collect();
            let tq = TracePowers::new(tp.n(), bumped).unwrap();
            let a = estimate_from_traces(&tp, m).unwrap().kprime0_hat;
            let b = estimate_from_traces(&tq, m).unwrap().kprime0_hat;
            prop_assert!((a - b).abs() <= 1e-6);
        }

        #[test]
        fn scale_invariance(x in prop::collection::vec(0.1f64..10.0, 2..30), c in 1e-3f64..1e3, m in 2usize..=6) {
            let s = Spectrum::custom(x).unwrap();
            let a = estimate_from_traces(&trace_powers(&s, m).unwrap(), m).unwrap().kprime0_hat;
            let t = trace_powers(&s.scaled(c).unwrap(), m).unwrap();
            let b = estimate_from_traces(&t, m).unwrap().kprime0_hat;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
