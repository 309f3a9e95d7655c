//! Regenerates the experiment tables as CSV.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use clap::ValueEnum;
use num_complex::Complex64;
use rayon::prelude::*;
use tracelogdet::analysis::{saturation_scan, taylor_radius, RadiusFamily};
use tracelogdet::bounds::{ktrace_bound, lower_k2_closed, BoundSense};
use tracelogdet::estimators::{boxcox_estimate, estimate_from_traces, k0m_estimate};
use tracelogdet::moments::{cumulants, newton_maclaurin, normalize};
use tracelogdet::noise::{monte_carlo, optimal_order, theory, weight_norm, weight_norm_fit};
use tracelogdet::solver::SolveConfig;
use tracelogdet::spectra::{exact_stats, generate, trace_powers, Spectrum, SpectrumFamily};
use tracelogdet::Result;

use crate::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    K0mErrors,
    OptimalM,
    BoundsComparison,
    Alpha,
    Asymptotic,
    Saturation,
    RadiusScan,
    NoiseCrossover,
    BoxcoxSweep,
}

pub const N: usize = 1024;
pub const K0M_KAPPAS: [f64; 9] = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
pub const OPTIMAL_KAPPAS: [f64; 10] = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 5000.0];
pub const K0M_ORDERS: [usize; 9] = [2, 3, 4, 5, 6, 7, 8, 16, 32];
/// Orders whose errors differ by less than this (percentage points) are ties.
pub const TIE_PP: f64 = 0.3;

pub fn reproduce(target: Target, seed: u64, trials: usize) -> Result<Table> {
    match target {
        Target::K0mErrors => k0m_errors(),
        Target::OptimalM => optimal_m(),
        Target::BoundsComparison => bounds_comparison(seed),
        Target::Alpha => alpha(),
        Target::Asymptotic => asymptotic(),
        Target::Saturation => saturation(),
        Target::RadiusScan => radius_scan(),
        Target::NoiseCrossover => noise_crossover(seed, trials),
        Target::BoxcoxSweep => boxcox_sweep(seed),
    }
}

/// `100 (K̂'(0) - K'(0)) / |K'(0)|`.
pub fn rel_error_pct(estimate: f64, truth: f64) -> f64 {
    100.0 * (estimate - truth) / truth.abs()
}

fn spectrum(family: SpectrumFamily, kappa: f64, seed: u64) -> Result<Spectrum> {
    generate(family, N, kappa, family.is_random().then_some(seed))
}

/// k_{0:m} relative errors (%) on the geometric spectrum for each order.
fn geometric_errors(kappa: f64) -> Result<Vec<(usize, f64, f64, f64)>> {
    let s = spectrum(SpectrumFamily::Geometric, kappa, 0)?;
    let truth = exact_stats(&s).kprime0;
    let tp = trace_powers(&s, K0M_ORDERS[K0M_ORDERS.len() - 1])?;
    K0M_ORDERS
        .iter()
        .map(|&m| {
            let est = estimate_from_traces(&tp.truncated(m)?, m)?.kprime0_hat;
            Ok((m, truth, est, rel_error_pct(est, truth)))
        })
        .collect()
}

fn k0m_errors() -> Result<Table> {
    let mut t = Table::new(&["kappa", "m", "kprime0", "estimate", "rel_error_pct"]);
    for kappa in K0M_KAPPAS {
        for (m, truth, est, err) in geometric_errors(kappa)? {
            t.push(vec![kappa.into(), m.into(), truth.into(), est.into(), err.into()]);
        }
    }
    Ok(t)
}

fn optimal_m() -> Result<Table> {
    let mut t = Table::new(&["kappa", "m_star", "abs_error_pct", "ties"]);
    for kappa in OPTIMAL_KAPPAS {
        let errs = geometric_errors(kappa)?;
        let &(m_star, _, _, best) = errs
            .iter()
            .min_by(|a, b| a.3.abs().total_cmp(&b.3.abs()))
            .expect("orders");
        let ties: Vec<String> = errs
            .iter()
            .filter(|e| e.0 != m_star && e.3.abs() - best.abs() < TIE_PP)
            .map(|e| e.0.to_string())
            .collect();
        t.push(vec![kappa.into(), m_star.into(), best.abs().into(), ties.join(";").into()]);
    }
    Ok(t)
}

/// Gap of an upper bound on `GM/AM`, % of `|K'(0)|`.
pub fn upper_gap_pct(u: f64, truth: f64) -> f64 {
    100.0 * (u.ln() - truth) / truth.abs()
}

pub fn lower_gap_pct(l: f64, truth: f64) -> f64 {
    100.0 * (truth - l.ln()) / truth.abs()
}

pub struct ComparisonRow {
    pub family: SpectrumFamily,
    pub k04_error_pct: f64,
    pub u: [f64; 3],
    pub ls: f64,
    pub l: [f64; 3],
}

/// Gaps at `k = 2, 4, 8` and the order-4 last-slope gap, `κ = 100`, `n = 1024`.
pub fn comparison_row(family: SpectrumFamily, seed: u64) -> Result<ComparisonRow> {
    let cfg = SolveConfig::default();
    let s = spectrum(family, 100.0, seed)?;
    let truth = exact_stats(&s).kprime0;
    let r = s.normalized()[0];
    let tp = trace_powers(&s, 8)?;
    let nm = normalize(&tp);
    let est = estimate_from_traces(&tp.truncated(4)?, 4)?.kprime0_hat;
    let sm = newton_maclaurin(&nm.power_sums()[..4], N)?;
    let ls = (sm.log_e(4) + (N - 4) as f64 * sm.slope(4)) / N as f64;
    let mut u = [0.0; 3];
    let mut l = [0.0; 3];
    for (i, k) in [2, 4, 8].into_iter().enumerate() {
        u[i] = upper_gap_pct(ktrace_bound(BoundSense::Upper, &nm, k, None, &cfg)?.value, truth);
        let lo = if k == 2 { lower_k2_closed(nm.get(2), r)? } else { ktrace_bound(BoundSense::Lower, &nm, k, Some(r), &cfg)?.value };
        l[i] = lower_gap_pct(lo, truth);
    }
    Ok(ComparisonRow {
        family,
        k04_error_pct: rel_error_pct(est, truth),
        u,
        ls: 100.0 * (ls - truth) / truth.abs(),
        l,
    })
}

fn bounds_comparison(seed: u64) -> Result<Table> {
    let mut t = Table::new(&["family", "k04_error_pct", "U2", "U4", "U8", "LS", "L2", "L4", "L8"]);
    let rows = SpectrumFamily::BENCHMARK
        .par_iter()
        .map(|&f| comparison_row(f, seed))
        .collect::<Result<Vec<_>>>()?;
    for r in rows {
        let mut row: Vec<Cell> = vec![r.family.name().into(), r.k04_error_pct.into()];
        row.extend(r.u.iter().map(|&v| Cell::from(v)));
        row.push(r.ls.into());
        row.extend(r.l.iter().map(|&v| Cell::from(v)));
        t.push(row);
    }
    Ok(t)
}

fn alpha() -> Result<Table> {
    let mut t = Table::new(&["m", "weight_norm", "alpha", "sd_eta_1pct"]);
    for m in 2..=8 {
        let th = theory(m, 0.01, None)?;
        t.push(vec![m.into(), th.weight_norm.into(), th.alpha.into(), th.sd_pred.into()]);
    }
    Ok(t)
}

/// Fit range for the weight-norm asymptotics.
pub const FIT_RANGE: (usize, usize) = (6, 20);

fn asymptotic() -> Result<Table> {
    let fit = weight_norm_fit(FIT_RANGE.0, FIT_RANGE.1)?;
    let c_theory = 2.0 / PI.powf(0.25);
    let mut t = Table::new(&["parameter", "theoretical", "fitted", "rel_error_pct"]);
    t.push(vec!["a".into(), 1.25.into(), fit.a.into(), (100.0 * (fit.a / 1.25 - 1.0)).into()]);
    t.push(vec!["c".into(), c_theory.into(), fit.c.into(), (100.0 * (fit.c / c_theory - 1.0)).into()]);
    t.push(vec!["r2".into(), Cell::Empty, fit.r2.into(), Cell::Empty]);
    let m = FIT_RANGE.1;
    let normalized = weight_norm(m)? * (m as f64).powf(1.25) / 2f64.powi(m as i32);
    t.push(vec![format!("c_at_m{m}").into(), c_theory.into(), normalized.into(), (100.0 * (normalized / c_theory - 1.0)).into()]);
    Ok(t)
}

fn saturation() -> Result<Table> {
    let kappas: Vec<f64> = (1..=8).map(|e| 10f64.powi(e)).collect();
    let orders: Vec<usize> = (2..=8).collect();
    let scan = saturation_scan(&kappas, &orders)?;
    let mut t = Table::new(&["kappa", "m", "estimate", "truth", "rel_error"]);
    for r in scan.rows {
        t.push(vec![r.kappa.into(), r.m.into(), r.estimate.into(), r.truth.into(), r.rel_error.into()]);
    }
    Ok(t)
}

fn radius_scan() -> Result<Table> {
    let kappas = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1e3, 1e4, 1e6];
    let families = [
        (RadiusFamily::TwoPoint, "two_point"),
        (RadiusFamily::LogUniform, "log_uniform"),
        (RadiusFamily::Uniform, "uniform"),
    ];
    let mut t = Table::new(&["kappa", "family", "radius", "safe_order"]);
    for kappa in kappas {
        for (f, name) in families {
            let r = taylor_radius(f, kappa, None)?;
            t.push(vec![kappa.into(), name.into(), r.radius.into(), r.safe_order.into()]);
        }
    }
    Ok(t)
}

pub const CROSSOVER_ORDERS: [usize; 4] = [3, 4, 5, 6];
pub const CROSSOVER_ETAS: [f64; 8] = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1];

/// Noise-free `b_m` on geometric `κ = 100`, `m = 2..=8`.
pub fn geometric_biases() -> Result<BTreeMap<usize, f64>> {
    let s = spectrum(SpectrumFamily::Geometric, 100.0, 0)?;
    let truth = exact_stats(&s).kprime0;
    let tp = trace_powers(&s, 8)?;
    (2..=8)
        .map(|m| Ok((m, estimate_from_traces(&tp.truncated(m)?, m)?.kprime0_hat - truth)))
        .collect()
}

fn noise_crossover(seed: u64, trials: usize) -> Result<Table> {
    let s = spectrum(SpectrumFamily::Geometric, 100.0, 0)?;
    let biases = geometric_biases()?;
    let mut t = Table::new(&[
        "m", "eta", "interp_bias", "alpha", "crossover_eta", "rmse_pred", "mc_rmse", "mc_sd", "optimal_m",
    ]);
    for eta in CROSSOVER_ETAS {
        let best = optimal_order(&biases, eta)?;
        for m in CROSSOVER_ORDERS {
            let b = biases[&m];
            let th = theory(m, eta, Some(b))?;
            let mc = monte_carlo(&s, m, eta, trials, seed)?;
            t.push(vec![
                m.into(),
                eta.into(),
                b.into(),
                th.alpha.into(),
                th.crossover_eta.into(),
                th.rmse_pred.into(),
                mc.rmse.into(),
                mc.sd.into(),
                best.into(),
            ]);
        }
    }
    Ok(t)
}

pub const BOXCOX_KAPPAS: [f64; 8] = [5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[h - 1] + v[h])
    } else {
        v[h]
    }
}

/// Median over `κ` of `|relative error|` (%) of real Box-Cox estimates, per `α`.
fn boxcox_errors(family: SpectrumFamily, m: usize, alphas: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut errs = vec![Vec::new(); alphas.len()];
    for kappa in BOXCOX_KAPPAS {
        let s = spectrum(family, kappa, seed)?;
        let truth = exact_stats(&s).kprime0;
        let nm = normalize(&trace_powers(&s, m)?);
        for (i, &a) in alphas.iter().enumerate() {
            let est = if a == 0.0 {
                k0m_estimate(&cumulants(&nm), m)?.kprime0_hat
            } else {
                boxcox_estimate(&nm, Complex64::new(a, 0.0), m)?.kprime0_hat
            };
            errs[i].push(rel_error_pct(est, truth).abs());
        }
    }
    Ok(errs.into_iter().map(median).collect())
}

fn boxcox_sweep(seed: u64) -> Result<Table> {
    // α = 0 is the log transform itself
    let alphas: Vec<f64> = (-10..=10).map(|i| i as f64 / 10.0).collect();
    let log_idx = 10;
    let mut t = Table::new(&["family", "m", "best_alpha", "best_error_pct", "log_error_pct"]);
    for family in SpectrumFamily::BENCHMARK {
        for m in [4, 6] {
            let errs = boxcox_errors(family, m, &alphas, seed)?;
            let (i, best) = errs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("alphas");
            t.push(vec![family.name().into(), m.into(), alphas[i].into(), (*best).into(), errs[log_idx].into()]);
        }
    }
    Ok(t)
}
