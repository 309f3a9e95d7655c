//! Multiplicative trace noise `p̂_k = p_k (1 + ε_k)` and its effect on `k_{0:m}`.
//!
//! To first order the estimate picks up `Σ_{k≥2} w_k ε_k + (m-1) ε_1`, so its
//! standard deviation is `α_m η` with `α_m = sqrt(‖w‖² + (m-1)²)`. The log
//! adds a second-order bias `(η²/2)(1 - H_m)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{estimate_from_traces, lagrange_weights};
use crate::moments::TracePowers;
use crate::numeric::{compensated_sum, harmonic};
use crate::spectra::{exact_stats, trace_powers, Spectrum};

/// Draws with `ε ≤ -1 + TRUNCATION_MARGIN` are redrawn.
pub const TRUNCATION_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Relative standard deviation of each `ε_k`.
    pub eta: f64,
    pub seed: u64,
    pub distribution: NoiseDistribution,
}

impl NoiseSpec {
    pub fn gaussian(eta: f64, seed: u64) -> Self {
        Self {
            eta,
            seed,
            distribution: NoiseDistribution::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub traces: TracePowers,
    /// Draws rejected for making a trace nonpositive.
    pub truncated: usize,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && (0.0..0.5).contains(&eta)) {
        return Err(invalid(format!("noise level eta = {eta} must lie in [0, 0.5)")));
    }
    Ok(())
}

fn perturb_with(tp: &TracePowers, eta: f64, rng: &mut ChaCha8Rng) -> Result<Perturbed> {
    let mut truncated = 0;
    let p = tp
        .p()
        .iter()
        .map(|pk| {
            loop {
                let z: f64 = rng.sample(StandardNormal);
                let eps = eta * z;
                if eps > -1.0 + TRUNCATION_MARGIN {
                    return pk * (1.0 + eps);
                }
                truncated += 1;
            }
        })
        .collect();
    Ok(Perturbed {
        traces: TracePowers::new(tp.n(), p)?,
        truncated,
    })
}

/// Independent `ε_k ~ N(0, η²)` for each trace, seeded by `ns.seed`.
pub fn perturb(tp: &TracePowers, ns: &NoiseSpec) -> Result<Perturbed> {
    check_eta(ns.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ns.seed);
    perturb_with(tp, ns.eta, &mut rng)
}

/// `(η²/2)(1 - H_m)`.
pub fn noise_bias(m: usize, eta: f64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("order m must be at least 1"));
    }
    Ok(0.5 * eta * eta * (1.0 - harmonic(m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTheory {
    pub m: usize,
    pub eta: f64,
    /// `‖w‖₂` over `k = 2..m`.
    pub weight_norm: f64,
    pub alpha: f64,
    /// Predicted standard deviation `α_m η`.
    pub sd_pred: f64,
    pub bias_noise: f64,
    /// `|b_m| / α_m`.
    pub crossover_eta: Option<f64>,
    /// `sqrt(b_m² + α_m² η²)`.
    pub rmse_pred: Option<f64>,
}

pub fn weight_norm(m: usize) -> Result<f64> {
    let w = lagrange_weights(m)?;
    Ok(compensated_sum(w.w[1..].iter().map(|v| v * v)).sqrt())
}

pub fn theory(m: usize, eta: f64, b_m: Option<f64>) -> Result<NoiseTheory> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(invalid(format!("noise level eta = {eta} must be nonnegative")));
    }
    let weight_norm = weight_norm(m)?;
    let tail = (m - 1) as f64;
    let alpha = (weight_norm * weight_norm + tail * tail).sqrt();
    Ok(NoiseTheory {
        m,
        eta,
        weight_norm,
        alpha,
        sd_pred: alpha * eta,
        bias_noise: noise_bias(m, eta)?,
        crossover_eta: b_m.map(|b| b.abs() / alpha),
        rmse_pred: b_m.map(|b| b.hypot(alpha * eta)),
    })
}

/// `argmin_m sqrt(b_m² + α_m² η²)`, ties to the smaller `m`.
pub fn optimal_order(bias_by_m: &BTreeMap<usize, f64>, eta: f64) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&m, &b) in bias_by_m {
        let rmse = theory(m, eta, Some(b))?.rmse_pred.expect("bias given");
        if best.is_none_or(|(_, r)| rmse < r) {
            best = Some((m, rmse));
        }
    }
    best.map(|(m, _)| m).ok_or_else(|| invalid("no orders to choose from"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightNormFit {
    pub c: f64,
    pub a: f64,
    pub r2: f64,
}

/// Least squares for `log ‖w‖ = log c + m log 2 - a log m`.
pub fn fit_weight_norms(ms: &[usize], norms: &[f64]) -> Result<WeightNormFit> {
    if ms.len() != norms.len() || ms.len() < 3 {
        return Err(invalid("need at least three (m, norm) pairs"));
    }
    if norms.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("norms must be positive"));
    }
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = ms.iter().zip(norms).map(|(&m, v)| v.ln() - m as f64 * std::f64::consts::LN_2).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let logs: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / k;
    let ss_tot: f64 = logs.iter().map(|l| (l - mean_log).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(WeightNormFit {
        c: intercept.exp(),
        a: -slope,
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// [`fit_weight_norms`] on the actual weights for `m` in `lo..=hi`.
pub fn weight_norm_fit(lo: usize, hi: usize) -> Result<WeightNormFit> {
    if lo < 6 || hi > 24 || hi < lo + 2 {
        return Err(invalid(format!("fit range {lo}..={hi} must lie in 6..=24 with 3+ points")));
    }
    let ms: Vec<usize> = (lo..=hi).collect();
    let norms = ms.iter().map(|&m| weight_norm(m)).collect::<Result<Vec<_>>>()?;
    fit_weight_norms(&ms, &norms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub trials: usize,
    /// Mean of `K̂'(0) - K'(0)`.
    pub bias: f64,
    /// Population standard deviation of `K̂'(0)`.
    pub sd: f64,
    pub rmse: f64,
    /// Rejected noise draws across all trials.
    pub truncations: usize,
}

/// Trial `t` draws from stream `t` of the generator seeded with `seed`, so the
/// result does not depend on how trials are scheduled.
pub fn monte_carlo(s: &Spectrum, m: usize, eta: f64, trials: usize, seed: u64) -> Result<NoiseStats> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    check_eta(eta)?;
    let tp = trace_powers(s, m)?;
    let truth = exact_stats(s).kprime0;
    let runs = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let noisy = perturb_with(&tp, eta, &mut rng)?;
            let est = estimate_from_traces(&noisy.traces, m)?;
            Ok((est.kprime0_hat - truth, noisy.truncated))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;

    let nf = trials as f64;
    let bias = compensated_sum(runs.iter().map(|r| r.0)) / nf;
    let var = compensated_sum(runs.iter().map(|r| (r.0 - bias).powi(2))) / nf;
    let mse = compensated_sum(runs.iter().map(|r| r.0 * r.0)) / nf;
    Ok(NoiseStats {
        trials,
        bias,
        sd: var.sqrt(),
        rmse: mse.sqrt(),
        truncations: runs.iter().map(|r| r.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::weight_fraction;
    use crate::spectra::{generate, SpectrumFamily};
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn tp() -> TracePowers {
        TracePowers::new(4, vec![10.0, 30.0, 100.0, 354.0]).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let out = perturb(&tp(), &NoiseSpec::gaussian(0.0, 9)).unwrap();
        assert_eq!(out.traces, tp());
        assert_eq!(out.truncated, 0);
    }

    #[test]
    fn perturb_is_seeded() {
        let a = perturb(&tp(), &NoiseSpec::gaussian(0.1, 5)).unwrap();
        let b = perturb(&tp(), &NoiseSpec::gaussian(0.1, 5)).unwrap();
        let c = perturb(&tp(), &NoiseSpec::gaussian(0.1, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(perturb(&tp(), &NoiseSpec::gaussian(0.5, 5)).is_err());
    }

    #[test]
    fn perturbed_traces_are_unbiased() {
        let trials = 100_000;
        let p2 = tp().get(2);
        let eta = 0.05;
        let draws: Vec<f64> = (0..trials)
            .map(|t| perturb(&tp(), &NoiseSpec::gaussian(eta, t)).unwrap().traces.get(2))
            .collect();
        let mean = draws.iter().sum::<f64>() / trials as f64;
        let se = p2 * eta / (trials as f64).sqrt();
        assert!((mean - p2).abs() < 3.0 * se, "{mean} vs {p2}");
    }

    #[test]
    fn noise_bias_examples() {
        assert_eq!(noise_bias(1, 0.3).unwrap(), 0.0);
        assert_eq!(noise_bias(5, 0.0).unwrap(), 0.0);
        let b = noise_bias(4, 0.01).unwrap();
        assert!((b - 5e-5 * (-13.0 / 12.0)).abs() < 1e-18);
    }

    #[test]
    fn alpha_matches_rational_weights() {
        for m in 2..=8 {
            let mut sq = Ratio::new(0i128, 1);
            for j in 2..=m {
                let (num, den) = weight_fraction(m, j).unwrap();
                let w = Ratio::new(num, den as i128);
                sq += w * w;
            }
            sq += Ratio::from_integer(((m - 1) * (m - 1)) as i128);
            let exact = (*sq.numer() as f64 / *sq.denom() as f64).sqrt();
            assert!((theory(m, 0.0, None).unwrap().alpha - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_table() {
        let norms = [0.50, 1.54, 3.29, 6.14, 10.78, 18.49, 31.61];
        let alphas = [1.12, 2.52, 4.45, 7.33, 11.88, 19.44, 32.38];
        let sds = [0.011, 0.025, 0.045, 0.073, 0.119, 0.194, 0.324];
        for m in 2..=8 {
            let t = theory(m, 0.01, None).unwrap();
            assert!((t.weight_norm - norms[m - 2]).abs() <= 0.005 + 1e-12, "m={m}");
            assert!((t.alpha - alphas[m - 2]).abs() <= 0.005 + 1e-12, "m={m}");
            assert!((t.sd_pred - sds[m - 2]).abs() <= 0.0005 + 1e-12, "m={m}");
        }
        assert!((theory(2, 0.0, None).unwrap().alpha - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn theory_with_bias() {
        let t = theory(4, 0.01, Some(-0.03)).unwrap();
        assert!((t.crossover_eta.unwrap() - 0.03 / t.alpha).abs() < 1e-15);
        assert!((t.rmse_pred.unwrap() - (0.03f64.powi(2) + (t.alpha * 0.01).powi(2)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn optimal_order_limits() {
        let biases: BTreeMap<usize, f64> = [(2, 0.3), (3, 0.1), (4, 0.04), (5, -0.02), (6, -0.05)].into();
        assert_eq!(optimal_order(&biases, 0.0).unwrap(), 5);
        assert_eq!(optimal_order(&biases, 10.0).unwrap(), 2);
        let tie: BTreeMap<usize, f64> = [(3, 0.1), (4, -0.1)].into();
        assert_eq!(optimal_order(&tie, 0.0).unwrap(), 3);
        assert!(optimal_order(&BTreeMap::new(), 0.0).is_err());
    }

    #[test]
    fn fit_recovers_its_own_model() {
        let ms: Vec<usize> = (6..=20).collect();
        let norms: Vec<f64> = ms.iter().map(|&m| 1.7 * 2f64.powi(m as i32) / (m as f64).powf(1.25)).collect();
        let f = fit_weight_norms(&ms, &norms).unwrap();
        assert!((f.a - 1.25).abs() < 1e-12 && (f.c - 1.7).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_on_actual_weights() {
        let f = weight_norm_fit(6, 20).unwrap();
        assert!((1.25..=1.35).contains(&f.a), "a = {}", f.a);
        assert!(f.r2 >= 0.9999);
        assert!(weight_norm_fit(2, 20).is_err());
    }

    #[test]
    fn zero_noise_monte_carlo_is_interpolation_bias() {
        let s = generate(SpectrumFamily::Geometric, 256, 100.0, None).unwrap();
        let st = monte_carlo(&s, 4, 0.0, 8, 1).unwrap();
        let b = estimate_from_traces(&trace_powers(&s, 4).unwrap(), 4).unwrap().kprime0_hat - exact_stats(&s).kprime0;
        assert_eq!(st.sd, 0.0);
        assert!((st.bias - b).abs() < 1e-15);
    }

    #[test]
    fn parallel_matches_serial() {
        let s = generate(SpectrumFamily::Geometric, 256, 100.0, None).unwrap();
        let par = monte_carlo(&s, 4, 0.02, 64, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let ser = pool.install(|| monte_carlo(&s, 4, 0.02, 64, 11).unwrap());
        assert_eq!(par, ser);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn rmse_decomposes(eta in 0.0f64..0.2, seed in any::<u64>()) {
            let s = generate(SpectrumFamily::Uniform, 64, 10.0, None).unwrap();
            let st = monte_carlo(&s, 3, eta, 50, seed).unwrap();
            prop_assert!((st.rmse.powi(2) - st.bias.powi(2) - st.sd.powi(2)).abs() < 1e-12);
        }

        #[test]
        fn alpha_increases(m in 2usize..30) {
            prop_assert!(theory(m + 1, 0.0, None).unwrap().alpha > theory(m, 0.0, None).unwrap().alpha);
        }
    }
}
