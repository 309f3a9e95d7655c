//! Moment-constrained extremal atomic measures.
//!
//! Solves `max` or `min` of `Σ w_i log x_i` subject to `Σ w_i x_i^j = M_j`,
//! `j = 0..=k`, over measures with at most `k + 1` atoms. The min problem keeps
//! one atom pinned at the floor `r` and all others in `[r, cap]`; the max problem
//! keeps atoms in `[atom_floor, cap]`. The cap is `cap_factor · M_k^{1/k}`.
//!
//! Each restart runs an augmented-Lagrangian loop whose subproblems are solved
//! by BFGS over unconstrained coordinates (sigmoid boxes for atoms, softmax for
//! weights), followed by a Gauss-Newton feasibility polish and Newton refinement
//! of the KKT system. The multipliers define a polynomial that must stay on one
//! side of `log x` over the box; where it does not, an atom is inserted and the
//! restart continues. One extra candidate is built from the Gauss-type rule
//! (nodes fixed at the floor and/or cap) that the moments determine.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub restarts: usize,
    /// BFGS iteration cap for each augmented-Lagrangian subproblem.
    pub max_iter: usize,
    /// Largest acceptable moment residual, see [`scaled_residual`].
    pub tol_feas: f64,
    /// Objective change below which the outer loop is considered stalled.
    pub tol_opt: f64,
    pub seed: u64,
    pub atom_floor: f64,
    pub cap_factor: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 500,
            tol_feas: 1e-8,
            tol_opt: 1e-9,
            seed: 0,
            atom_floor: 1e-12,
            cap_factor: 1e3,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(invalid("restarts and max_iter must be positive"));
        }
        let tols = [self.tol_feas, self.tol_opt, self.atom_floor];
        if tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(invalid("solver tolerances must be positive"));
        }
        if !(self.cap_factor.is_finite() && self.cap_factor > 1.0) {
            return Err(invalid("cap factor must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub w: f64,
}

/// Finitely supported probability measure on `(0, ∞)`, atoms sorted by location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("measure needs at least one atom"));
        }
        if atoms.iter().any(|a| !(a.x.is_finite() && a.x > 0.0 && a.w.is_finite() && a.w >= 0.0)) {
            return Err(invalid("atoms need positive locations and nonnegative weights"));
        }
        let total = compensated_sum(atoms.iter().map(|a| a.w));
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        Ok(Self { atoms })
    }

    pub fn point_mass(x: f64) -> Self {
        Self {
            atoms: vec![Atom { x, w: 1.0 }],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `∫ x^j dμ`.
    pub fn moment(&self, j: usize) -> f64 {
        compensated_sum(self.atoms.iter().map(|a| a.w * a.x.powi(j as i32)))
    }

    /// `∫ log x dμ`.
    pub fn log_mean(&self) -> f64 {
        compensated_sum(self.atoms.iter().filter(|a| a.w > 0.0).map(|a| a.w * a.x.ln()))
    }
}

/// `max_j |∫ x^j dμ - M_j|` over `j = 1..=k`, with `moments = M_1..M_k`.
pub fn moment_residual(mu: &AtomicMeasure, moments: &[f64]) -> f64 {
    moments
        .iter()
        .enumerate()
        .map(|(i, m)| (mu.moment(i + 1) - m).abs())
        .fold(0.0, f64::max)
}

/// `max_j |∫ x^j dμ - M_j| / max(1, M_j)`.
///
/// High moments of spread-out spectra reach `1e12` and beyond, where no `f64`
/// witness gets within an absolute `1e-8`; feasibility is judged on this scale.
pub fn scaled_residual(mu: &AtomicMeasure, moments: &[f64]) -> f64 {
    moments
        .iter()
        .enumerate()
        .map(|(i, m)| (mu.moment(i + 1) - m).abs() / m.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// `∫ log x dμ*`.
    pub objective: f64,
    pub witness: AtomicMeasure,
    /// [`scaled_residual`] of the witness.
    pub residual: f64,
    /// Moments forced a point mass at 1.
    pub degenerate: bool,
    /// Restart that produced the witness.
    pub restart: usize,
    pub cap: f64,
}

/// Relative distance from the box edge at which an atom is snapped onto it.
const SNAP: f64 = 1e-7;

pub fn solve(sense: Sense, moments: &[f64], r: Option<f64>, cfg: &SolveConfig) -> Result<Solution> {
    cfg.validate()?;
    let k = moments.len();
    if k == 0 {
        return Err(invalid("need at least M_1"));
    }
    if moments.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(invalid("moments must be positive and finite"));
    }
    if (moments[0] - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("M_1 must be 1, got {}", moments[0])));
    }
    let floor = match (sense, r) {
        (Sense::Min, None) => return Err(invalid("min sense needs a floor r")),
        (Sense::Min, Some(r)) if !(r.is_finite() && r > 0.0) => {
            return Err(invalid(format!("floor r = {r} must be positive")))
        }
        (Sense::Min, Some(r)) => Some(r),
        (Sense::Max, _) => None,
    };
    let cap = cfg.cap_factor * moments[k - 1].powf(1.0 / k as f64);

    let point_mass = k == 1 && sense == Sense::Max || k >= 2 && moments[1] - 1.0 <= 4.0 * f64::EPSILON;
    if point_mass {
        if floor.is_some_and(|r| r > 1.0) {
            return Err(Error::Infeasible {
                tol: cfg.tol_feas,
                best: f64::INFINITY,
            });
        }
        let witness = AtomicMeasure::point_mass(1.0);
        let residual = scaled_residual(&witness, moments);
        return Ok(Solution {
            objective: 0.0,
            witness,
            residual,
            degenerate: k >= 2,
            restart: 0,
            cap,
        });
    }
    if let Some(r) = floor {
        if r >= 1.0 {
            return Err(Error::Infeasible {
                tol: cfg.tol_feas,
                best: r - 1.0,
            });
        }
    }

    let problem = Problem::new(sense, moments, floor, cap, cfg);
    let runs: Vec<Option<Candidate>> = (0..=cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            if restart == cfg.restarts {
                problem.canonical()
            } else {
                problem.run(restart)
            }
        })
        .collect();

    let finite: Vec<(usize, &Candidate)> = runs
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
        .collect();
    if finite.is_empty() {
        return Err(Error::SolverStalled {
            restarts: cfg.restarts,
        });
    }
    let best_residual = finite.iter().map(|(_, c)| c.residual).fold(f64::INFINITY, f64::min);
    let sign = match sense {
        Sense::Max => -1.0,
        Sense::Min => 1.0,
    };
    let best = finite
        .into_iter()
        .filter(|(_, c)| c.residual <= cfg.tol_feas)
        .min_by(|(i, a), (j, b)| (sign * a.objective).total_cmp(&(sign * b.objective)).then(i.cmp(j)));
    let Some((restart, cand)) = best else {
        return Err(Error::Infeasible {
            tol: cfg.tol_feas,
            best: best_residual,
        });
    };
    Ok(Solution {
        objective: cand.objective,
        witness: AtomicMeasure::new(cand.atoms.clone())?,
        residual: cand.residual,
        degenerate: false,
        restart,
        cap,
    })
}

#[derive(Debug, Clone)]
struct Candidate {
    objective: f64,
    atoms: Vec<Atom>,
    residual: f64,
}

struct Problem<'a> {
    sense: Sense,
    moments: &'a [f64],
    k: usize,
    pinned: Option<f64>,
    free: usize,
    lo: f64,
    hi: f64,
    cap: f64,
    cfg: &'a SolveConfig,
}

/// Coordinates decoded into atoms.
struct Decoded {
    log_x: Vec<f64>,
    w: Vec<f64>,
    /// `d log x_i / d y_i` for the free atoms.
    dlog: Vec<f64>,
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<'a> Problem<'a> {
    fn new(sense: Sense, moments: &'a [f64], floor: Option<f64>, cap: f64, cfg: &'a SolveConfig) -> Self {
        let k = moments.len();
        let (pinned, free, lo) = match floor {
            Some(r) => (Some(r), k, r.ln()),
            None => (None, k + 1, cfg.atom_floor.ln()),
        };
        Self {
            sense,
            moments,
            k,
            pinned,
            free,
            lo,
            hi: cap.ln(),
            cap,
            cfg,
        }
    }

    fn n_atoms(&self) -> usize {
        self.free + usize::from(self.pinned.is_some())
    }

    fn sign(&self) -> f64 {
        match self.sense {
            Sense::Max => -1.0,
            Sense::Min => 1.0,
        }
    }

    fn decode(&self, theta: &[f64]) -> Decoded {
        let span = self.hi - self.lo;
        let mut log_x = Vec::with_capacity(self.n_atoms());
        let mut dlog = Vec::with_capacity(self.free);
        for y in &theta[..self.free] {
            let s = sigmoid(*y);
            log_x.push(self.lo + span * s);
            dlog.push(span * s * (1.0 - s));
        }
        if let Some(r) = self.pinned {
            log_x.push(r.ln());
        }
        Decoded {
            log_x,
            w: softmax(&theta[self.free..]),
            dlog,
        }
    }

    fn encode(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let span = self.hi - self.lo;
        let mut theta: Vec<f64> = x[..self.free].iter().map(|v| logit((v.ln() - self.lo) / span)).collect();
        theta.extend(w.iter().map(|v| v.max(1e-300).ln()));
        theta
    }

    /// Scaled constraint values `Σ w x^j / M_j - 1`.
    fn constraints(&self, d: &Decoded) -> Vec<f64> {
        (1..=self.k)
            .map(|j| {
                let s = compensated_sum(d.w.iter().zip(&d.log_x).map(|(w, lx)| w * (j as f64 * lx).exp()));
                s / self.moments[j - 1] - 1.0
            })
            .collect()
    }

    /// Augmented Lagrangian value and gradient.
    fn lagrangian(&self, theta: &[f64], lambda: &[f64], rho: f64, grad: &mut [f64]) -> f64 {
        let d = self.decode(theta);
        let c = self.constraints(&d);
        let s = self.sign();
        let obj = s * compensated_sum(d.w.iter().zip(&d.log_x).map(|(w, lx)| w * lx));
        let mu: Vec<f64> = (0..self.k).map(|j| -lambda[j] + rho * c[j]).collect();
        let value = obj + (0..self.k).map(|j| -lambda[j] * c[j] + 0.5 * rho * c[j] * c[j]).sum::<f64>();

        let na = self.n_atoms();
        let mut g = vec![0.0; na];
        let mut dg = vec![0.0; na];
        for i in 0..na {
            let lx = d.log_x[i];
            let mut gi = s * lx;
            let mut dgi = s;
            for j in 1..=self.k {
                let t = (j as f64 * lx).exp() / self.moments[j - 1];
                gi += mu[j - 1] * t;
                dgi += mu[j - 1] * j as f64 * t;
            }
            g[i] = gi;
            dg[i] = dgi;
        }
        let mean_g: f64 = d.w.iter().zip(&g).map(|(w, v)| w * v).sum();
        for i in 0..self.free {
            grad[i] = d.w[i] * dg[i] * d.dlog[i];
        }
        for i in 0..na {
            grad[self.free + i] = d.w[i] * (g[i] - mean_g);
        }
        value
    }

    fn start(&self, restart: usize) -> Vec<f64> {
        let na = self.n_atoms();
        let m2 = self.moments.get(1).copied().unwrap_or(1.0);
        let spread = m2.ln().sqrt().max(0.05);
        let top = self.moments[self.k - 1].powf(1.0 / self.k as f64).max(1.0 + spread);
        let bottom = match self.pinned {
            Some(r) => r * (1.0 + 1e-3),
            None => (1.0 / top).max(self.lo.exp() * 10.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(restart as u64);
        let f = self.free as f64;
        let (x, w): (Vec<f64>, Vec<f64>) = match restart {
            0 => (
                (0..self.free).map(|i| bottom + (top - bottom) * (i as f64 + 0.5) / f).collect(),
                vec![1.0 / na as f64; na],
            ),
            1 => (
                (0..self.free)
                    .map(|i| bottom * (top / bottom).powf((i as f64 + 0.5) / f))
                    .collect(),
                vec![1.0 / na as f64; na],
            ),
            _ => {
                let x = (0..self.free)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (2.0 * spread * z).exp().clamp(bottom, self.cap * 0.5)
                    })
                    .collect();
                let e: Vec<f64> = (0..na).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = e.iter().sum();
                (x, e.iter().map(|v| v / total).collect())
            }
        };
        self.encode(&x, &w)
    }

    fn run(&self, restart: usize) -> Option<Candidate> {
        let mut theta = self.start(restart);
        let mut best: Option<Candidate> = None;
        for _ in 0..EXCHANGE_ROUNDS {
            let ok = self.augmented_lagrangian(&mut theta);
            if !ok {
                break;
            }
            let d = self.decode(&theta);
            let atoms = d
                .log_x
                .iter()
                .zip(&d.w)
                .map(|(lx, w)| Atom { x: lx.exp(), w: *w })
                .collect();
            let fin = self.finish(atoms);
            let Some((cand, pts, dual)) = fin else {
                break;
            };
            if best.as_ref().is_none_or(|b| self.better(&cand, b)) {
                best = Some(cand);
            }
            let Some(x_new) = dual.and_then(|l| self.dual_violation(&l)) else {
                break;
            };
            theta = self.reseed(pts, x_new);
        }
        best
    }

    /// Candidate built from the principal representation the moments determine:
    /// a Gauss-type rule with nodes fixed at the cap and/or the floor.
    fn canonical(&self) -> Option<Candidate> {
        let k = self.k;
        let m: Vec<f64> = targets(self.moments);
        let valid = |nodes: &Vec<Atom>| nodes.iter().all(|a| a.x > 0.0 && a.w >= 0.0 && a.x.is_finite() && a.w.is_finite());
        let principal = match (self.sense, k % 2) {
            (Sense::Max, 1) => gauss_rule(&m, k.div_ceil(2)),
            (Sense::Max, _) => radau_rule(&m, k / 2 + 1, self.cap),
            (Sense::Min, 0) => radau_rule(&m, k / 2 + 1, self.lo.exp()),
            (Sense::Min, _) => lobatto_rule(&m, k.div_ceil(2) + 1, self.lo.exp(), self.cap),
        };
        if let Some(fin) = principal.filter(valid).and_then(|n| self.finish(n)) {
            return Some(fin.0);
        }
        // Moments of a measure with few atoms make the recurrence break down;
        // that measure is then the only feasible point and a short Gauss rule finds it.
        (1..=k / 2).find_map(|s| gauss_rule(&m, s).filter(valid).and_then(|n| self.finish(n)).map(|f| f.0))
    }

    /// Outer augmented-Lagrangian loop; `false` if the iterates blew up.
    fn augmented_lagrangian(&self, theta: &mut [f64]) -> bool {
        let mut lambda = vec![0.0; self.k];
        let mut rho = 10.0;
        let mut prev_viol = f64::INFINITY;
        let mut prev_obj = f64::NAN;
        for _ in 0..60 {
            bfgs(theta, self.cfg.max_iter, |t, g| self.lagrangian(t, &lambda, rho, g));
            if theta.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let d = self.decode(theta);
            let c = self.constraints(&d);
            let viol = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let obj: f64 = d.w.iter().zip(&d.log_x).map(|(w, lx)| w * lx).sum();
            if viol < 1e-11 && (obj - prev_obj).abs() < self.cfg.tol_opt {
                break;
            }
            prev_obj = obj;
            for j in 0..self.k {
                lambda[j] -= rho * c[j];
            }
            if viol > 0.25 * prev_viol {
                rho = (rho * 10.0).min(1e10);
            }
            prev_viol = viol;
        }
        true
    }

    fn better(&self, a: &Candidate, b: &Candidate) -> bool {
        let (fa, fb) = (a.residual <= self.cfg.tol_feas, b.residual <= self.cfg.tol_feas);
        if fa != fb {
            return fa;
        }
        if !fa {
            return a.residual < b.residual;
        }
        match self.sense {
            Sense::Max => a.objective > b.objective,
            Sense::Min => a.objective < b.objective,
        }
    }

    /// Snap atoms to the box edges, merge, prune, polish feasibility and refine
    /// the KKT point. Also returns the polished atoms and the scaled multipliers.
    fn finish(&self, atoms: Vec<Atom>) -> Option<(Candidate, Vec<PolishAtom>, Option<Vec<f64>>)> {
        let lo_x = self.lo.exp();
        let mut pts: Vec<PolishAtom> = atoms
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let pinned = self.pinned.is_some() && i == self.free;
                let at_cap = (self.hi - a.x.ln()) < SNAP * (self.hi - self.lo);
                let at_lo = (a.x.ln() - self.lo) < SNAP * (self.hi - self.lo);
                let (x, fixed) = if pinned {
                    (lo_x, true)
                } else if at_cap {
                    (self.cap, true)
                } else if at_lo && self.pinned.is_some() {
                    (lo_x, true)
                } else {
                    (a.x, false)
                };
                PolishAtom { x, w: a.w, fixed }
            })
            .collect();
        merge_close(&mut pts);
        self.prune(&mut pts);
        if pts.is_empty() {
            return None;
        }
        polish(&mut pts, self.moments, self.lo, self.hi, self.cfg.tol_feas);

        let before = self.candidate(&pts)?;
        let mut refined = pts.clone();
        let mut dual = None;
        if let Some(l) = kkt_refine(&mut refined, self.moments, self.lo, self.hi) {
            self.prune(&mut refined);
            polish(&mut refined, self.moments, self.lo, self.hi, self.cfg.tol_feas);
            if let Some(after) = self.candidate(&refined) {
                let no_worse = match self.sense {
                    Sense::Max => after.objective >= before.objective - 1e-12,
                    Sense::Min => after.objective <= before.objective + 1e-12,
                };
                if after.residual <= self.cfg.tol_feas && no_worse {
                    dual = Some(l);
                    return Some((after, refined, dual));
                }
            }
        }
        if dual.is_none() {
            dual = stationarity_multipliers(&pts, self.moments);
        }
        Some((before, pts, dual))
    }

    fn prune(&self, pts: &mut Vec<PolishAtom>) {
        let k = self.k as i32;
        let floor = self.cfg.atom_floor;
        let pinned = self.pinned.map(|r| r.ln());
        pts.retain(|a| a.w * a.x.powi(k).max(1.0) >= floor || (a.fixed && Some(a.x.ln()) == pinned));
        merge_close(pts);
    }

    fn candidate(&self, pts: &[PolishAtom]) -> Option<Candidate> {
        let total = compensated_sum(pts.iter().map(|a| a.w));
        let atoms: Vec<Atom> = pts.iter().map(|a| Atom { x: a.x, w: a.w / total }).collect();
        if atoms.is_empty() || atoms.iter().any(|a| !(a.x.is_finite() && a.w.is_finite())) {
            return None;
        }
        let mu = AtomicMeasure { atoms };
        let residual = scaled_residual(&mu, self.moments);
        Some(Candidate {
            objective: mu.log_mean(),
            atoms: mu.atoms,
            residual,
        })
    }

    /// Location where the dual polynomial fails to bound `log x` on the
    /// wrong side, if any.
    fn dual_violation(&self, lambda: &[f64]) -> Option<f64> {
        let lo = match self.sense {
            Sense::Max => self.lo.max(-20.0),
            Sense::Min => self.lo,
        };
        let steps = 4000;
        let s = self.sign();
        let mut worst = (DUAL_TOL, None);
        for i in 0..=steps {
            let lx = lo + (self.hi - lo) * i as f64 / steps as f64;
            let p = dual_poly(lambda, self.moments, lx);
            // max: need log x <= P(x); min: need log x >= P(x)
            let gap = -s * (lx - p);
            if gap > worst.0 {
                worst = (gap, Some(lx.exp()));
            }
        }
        worst.1
    }

    /// Warm start for another round with an extra atom at `x_new`.
    fn reseed(&self, mut pts: Vec<PolishAtom>, x_new: f64) -> Vec<f64> {
        let k = self.k as i32;
        let scale = self.moments[self.k - 1];
        let w_new = 1e-3 * (scale / x_new.powi(k)).min(1.0);
        let pinned_x = self.pinned.map(|r| r.ln());
        let mut pinned_w = None;
        if let Some(lr) = pinned_x {
            if let Some(pos) = pts.iter().position(|a| a.fixed && a.x.ln() == lr) {
                pinned_w = Some(pts.remove(pos).w);
            }
        }
        while pts.len() >= self.free {
            let (pos, _) = pts
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1.w * a.1.x.powi(k).max(1.0)).total_cmp(&(b.1.w * b.1.x.powi(k).max(1.0))))
                .expect("nonempty");
            pts.remove(pos);
        }
        pts.push(PolishAtom { x: x_new, w: w_new, fixed: false });
        let filler = pts.iter().copied().max_by(|a, b| a.w.total_cmp(&b.w)).expect("nonempty");
        while pts.len() < self.free {
            pts.push(PolishAtom { w: 1e-8, ..filler });
        }
        let mut x: Vec<f64> = pts.iter().map(|a| a.x.clamp(self.lo.exp(), self.cap)).collect();
        let mut w: Vec<f64> = pts.iter().map(|a| a.w).collect();
        if self.pinned.is_some() {
            x.push(self.lo.exp());
            w.push(pinned_w.unwrap_or(1e-3));
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        self.encode(&x, &w)
    }
}

/// Recurrence coefficients `α_0..α_{na-1}` and `β_1..β_nb` of the orthonormal
/// polynomials for the moment sequence `m` (with `m[0] = 1`), by the Stieltjes
/// procedure on monomial coefficients.
fn recurrence(m: &[f64], na: usize, nb: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let inner = |p: &[f64], q: &[f64]| -> Option<f64> {
        let mut s = 0.0;
        for (a, pa) in p.iter().enumerate() {
            for (b, qb) in q.iter().enumerate() {
                s += pa * qb * m.get(a + b)?;
            }
        }
        Some(s)
    };
    let mut prev: Vec<f64> = Vec::new();
    let mut cur = vec![1.0 / m[0].sqrt()];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    for j in 0..na.max(nb) {
        let mut xq = vec![0.0];
        xq.extend_from_slice(&cur);
        let a = if j < na { inner(&xq, &cur)? } else { 0.0 };
        if j < na {
            alpha.push(a);
        }
        if j >= nb {
            continue;
        }
        let mut r = xq;
        for (i, c) in cur.iter().enumerate() {
            r[i] -= a * c;
        }
        if let Some(b) = beta.last() {
            for (i, c) in prev.iter().enumerate() {
                r[i] -= b * c;
            }
        }
        let nrm = inner(&r, &r)?;
        if !(nrm > 0.0) {
            return None;
        }
        let b = nrm.sqrt();
        beta.push(b);
        prev = cur;
        cur = r.into_iter().map(|v| v / b).collect();
    }
    Some((alpha, beta))
}

/// Nodes and weights from a Jacobi matrix (Golub-Welsch).
fn jacobi_rule(alpha: &[f64], beta: &[f64]) -> Option<Vec<Atom>> {
    let s = alpha.len();
    let mut j = DMatrix::<f64>::zeros(s, s);
    for i in 0..s {
        j[(i, i)] = alpha[i];
        if i + 1 < s {
            j[(i, i + 1)] = beta[i];
            j[(i + 1, i)] = beta[i];
        }
    }
    if j.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::try_new(j, f64::EPSILON, 1000)?;
    let mut atoms: Vec<Atom> = (0..s)
        .map(|i| Atom {
            x: eig.eigenvalues[i],
            w: eig.eigenvectors[(0, i)].powi(2),
        })
        .collect();
    atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
    Some(atoms)
}

/// Last component of `(J - ξ I)^{-1} e_last` for the leading block `J`.
fn shifted_last(alpha: &[f64], beta: &[f64], xi: f64) -> Option<f64> {
    let s = alpha.len();
    let mut a = DMatrix::<f64>::zeros(s, s);
    for i in 0..s {
        a[(i, i)] = alpha[i] - xi;
        if i + 1 < s {
            a[(i, i + 1)] = beta[i];
            a[(i + 1, i)] = beta[i];
        }
    }
    let mut e = DVector::zeros(s);
    e[s - 1] = 1.0;
    let x = a.lu().solve(&e)?;
    Some(x[s - 1]).filter(|v| v.is_finite())
}

fn gauss_rule(m: &[f64], s: usize) -> Option<Vec<Atom>> {
    let (alpha, beta) = recurrence(m, s, s - 1)?;
    jacobi_rule(&alpha, &beta)
}

/// `s`-node rule with one node fixed at `xi`.
fn radau_rule(m: &[f64], s: usize, xi: f64) -> Option<Vec<Atom>> {
    let (mut alpha, beta) = recurrence(m, s - 1, s - 1)?;
    let b = beta[s - 2];
    let d = shifted_last(&alpha, &beta[..s - 2], xi)?;
    alpha.push(xi + b * b * d);
    jacobi_rule(&alpha, &beta)
}

/// `s`-node rule with nodes fixed at `a < b`.
fn lobatto_rule(m: &[f64], s: usize, a: f64, b: f64) -> Option<Vec<Atom>> {
    let (mut alpha, mut beta) = recurrence(m, s - 1, s - 2)?;
    let ga = shifted_last(&alpha, &beta, a)?;
    let gb = shifted_last(&alpha, &beta, b)?;
    // [1 -ga; 1 -gb] [α; β²] = [a; b]
    let det = ga - gb;
    let b2 = (b - a) / det;
    let last = a + ga * b2;
    if !(b2 > 0.0 && b2.is_finite()) {
        return None;
    }
    alpha.push(last);
    beta.push(b2.sqrt());
    jacobi_rule(&alpha, &beta)
}

/// Relative distance below which two atoms are merged.
const MERGE: f64 = 1e-7;

/// Rounds of local solve followed by a dual-certificate check.
const EXCHANGE_ROUNDS: usize = 4;

/// Certificate violation that triggers another exchange round.
const DUAL_TOL: f64 = 1e-9;

/// `P(x) = Σ_j λ_j x^j / M_j` at `log x = lx`, with `M_0 = 1`.
fn dual_poly(lambda: &[f64], moments: &[f64], lx: f64) -> f64 {
    lambda
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let m = if j == 0 { 1.0 } else { moments[j - 1] };
            l * (j as f64 * lx).exp() / m
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct PolishAtom {
    x: f64,
    w: f64,
    fixed: bool,
}

fn merge_close(pts: &mut Vec<PolishAtom>) {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut out: Vec<PolishAtom> = Vec::with_capacity(pts.len());
    for p in pts.drain(..) {
        match out.last_mut() {
            Some(q) if (p.x - q.x).abs() <= MERGE * q.x => {
                let w = p.w + q.w;
                if !q.fixed {
                    q.x = if p.fixed { p.x } else { (p.x * p.w + q.x * q.w) / w.max(f64::MIN_POSITIVE) };
                }
                q.fixed |= p.fixed;
                q.w = w;
            }
            _ => out.push(p),
        }
    }
    *pts = out;
}

fn targets(moments: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(moments.iter().copied()).collect()
}

/// SVD with an iteration cap; `None` if it fails to converge.
fn bounded_svd(a: DMatrix<f64>) -> Option<SVD<f64, Dyn, Dyn>> {
    SVD::try_new(a, true, true, f64::EPSILON, 500)
}

/// Solves `A x = b` after row and column equilibration.
fn equilibrated_solve(mut a: DMatrix<f64>, mut b: DVector<f64>) -> Option<DVector<f64>> {
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    for i in 0..a.nrows() {
        let s = a.row(i).amax();
        if s > 0.0 {
            a.row_mut(i).scale_mut(1.0 / s);
            b[i] /= s;
        }
    }
    let mut col_scale = vec![1.0; a.ncols()];
    for (j, c) in col_scale.iter_mut().enumerate() {
        let s = a.column(j).amax();
        if s > 0.0 {
            *c = 1.0 / s;
            a.column_mut(j).scale_mut(*c);
        }
    }
    let y = bounded_svd(a)?.solve(&b, 1e-15).ok()?;
    let out = DVector::from_iterator(y.len(), y.iter().zip(&col_scale).map(|(v, c)| v * c));
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Least-squares multipliers from the stationarity conditions at the atoms.
fn stationarity_multipliers(pts: &[PolishAtom], moments: &[f64]) -> Option<Vec<f64>> {
    let k = moments.len();
    let target = targets(moments);
    let rows: Vec<(usize, bool)> = pts
        .iter()
        .enumerate()
        .flat_map(|(i, a)| std::iter::once((i, false)).chain((!a.fixed).then_some((i, true))))
        .collect();
    let mut a = DMatrix::zeros(rows.len(), k + 1);
    let mut b = DVector::zeros(rows.len());
    for (r, &(i, deriv)) in rows.iter().enumerate() {
        let x = pts[i].x;
        for j in 0..=k {
            let t = x.powi(j as i32) / target[j];
            a[(r, j)] = if deriv { j as f64 * t } else { t };
        }
        b[r] = if deriv { 1.0 } else { x.ln() };
    }
    equilibrated_solve(a, b).map(|v| v.iter().copied().collect())
}

/// Newton's method on the KKT system in `(log x_free, log w, λ)`.
///
/// Free atoms that leave `[lo, hi]` (in log space) are fixed at the edge.
/// Returns the multipliers of the scaled constraints on success.
fn kkt_refine(pts: &mut Vec<PolishAtom>, moments: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    let k = moments.len();
    let target = targets(moments);
    let mut lambda = stationarity_multipliers(pts, moments)?;
    let residual = |pts: &[PolishAtom], lambda: &[f64]| -> Vec<f64> {
        let mut f = Vec::new();
        for a in pts {
            let lx = a.x.ln();
            f.push(lx - dual_poly(lambda, moments, lx));
        }
        for a in pts.iter().filter(|a| !a.fixed) {
            let d: f64 = (1..=k).map(|j| j as f64 * lambda[j] * a.x.powi(j as i32) / target[j]).sum();
            f.push(1.0 - d);
        }
        for j in 0..=k {
            f.push(compensated_sum(pts.iter().map(|a| a.w * a.x.powi(j as i32))) / target[j] - 1.0);
        }
        f
    };
    let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut f = residual(pts, &lambda);
    for _ in 0..60 {
        let current = norm(&f);
        if current < 1e-14 {
            break;
        }
        let free: Vec<usize> = (0..pts.len()).filter(|&i| !pts[i].fixed).collect();
        let na = pts.len();
        let (nf, nl) = (free.len(), k + 1);
        let dim = nf + na + nl;
        if f.len() != dim {
            return None;
        }
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (i, a) in pts.iter().enumerate() {
            let t: Vec<f64> = (0..=k).map(|j| a.x.powi(j as i32) / target[j]).collect();
            let d1: f64 = (1..=k).map(|j| j as f64 * lambda[j] * t[j]).sum();
            let d2: f64 = (1..=k).map(|j| (j * j) as f64 * lambda[j] * t[j]).sum();
            if let Some(c) = free.iter().position(|&q| q == i) {
                jac[(i, c)] = 1.0 - d1;
                jac[(na + c, c)] = -d2;
                for j in 0..=k {
                    jac[(na + nf + j, c)] = j as f64 * a.w * t[j];
                }
            }
            for j in 0..=k {
                jac[(i, nf + na + j)] = -t[j];
                jac[(na + nf + j, nf + i)] = a.w * t[j];
            }
            if let Some(c) = free.iter().position(|&q| q == i) {
                for j in 0..=k {
                    jac[(na + c, nf + na + j)] = -(j as f64) * t[j];
                }
            }
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|v| -v));
        let step = equilibrated_solve(jac, rhs)?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut trial = pts.clone();
            let mut trial_lambda = lambda.clone();
            let mut hit_edge = false;
            for (c, &i) in free.iter().enumerate() {
                let lx = trial[i].x.ln() + t * step[c];
                if lx >= hi || lx <= lo {
                    trial[i].x = if lx >= hi { hi.exp() } else { lo.exp() };
                    trial[i].fixed = true;
                    hit_edge = true;
                } else {
                    trial[i].x = lx.exp();
                }
            }
            for (i, a) in trial.iter_mut().enumerate() {
                a.w *= (t * step[nf + i]).clamp(-30.0, 30.0).exp();
            }
            for j in 0..=k {
                trial_lambda[j] += t * step[nf + na + j];
            }
            if hit_edge {
                merge_close(&mut trial);
                *pts = trial;
                lambda = stationarity_multipliers(pts, moments)?;
                f = residual(pts, &lambda);
                moved = true;
                break;
            }
            let ft = residual(&trial, &trial_lambda);
            if norm(&ft) < current {
                *pts = trial;
                lambda = trial_lambda;
                f = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (norm(&f) < 1e-10).then_some(lambda)
}

/// Minimum-norm Gauss-Newton steps on `Σ w_i x_i^j = M_j`, `j = 0..=k`, in
/// `(log x_free, log w)`.
fn polish(pts: &mut [PolishAtom], moments: &[f64], lo: f64, hi: f64, tol: f64) {
    let k = moments.len();
    let target = targets(moments);
    let residual = |pts: &[PolishAtom]| -> Vec<f64> {
        (0..=k)
            .map(|j| compensated_sum(pts.iter().map(|a| a.w * a.x.powi(j as i32))) - target[j])
            .collect()
    };
    let free: Vec<usize> = (0..pts.len()).filter(|&i| !pts[i].fixed).collect();
    let cols = free.len() + pts.len();
    let mut res = residual(pts);
    let norm = |r: &[f64]| r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for _ in 0..40 {
        let current = norm(&res);
        if current <= tol * 1e-3 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(k + 1, cols);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for j in 0..=k {
            let scale = 1.0 / target[j];
            for (c, &i) in free.iter().enumerate() {
                jac[(j, c)] = scale * j as f64 * pts[i].w * pts[i].x.powi(j as i32);
            }
            for (i, a) in pts.iter().enumerate() {
                jac[(j, free.len() + i)] = scale * a.w * a.x.powi(j as i32);
            }
            rhs[j] = -scale * res[j];
        }
        if jac.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            break;
        }
        let Some(Ok(step)) = bounded_svd(jac).map(|svd| svd.solve(&rhs, 1e-14)) else {
            break;
        };
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..30 {
            let mut trial = pts.to_vec();
            for (c, &i) in free.iter().enumerate() {
                let lx = (trial[i].x.ln() + t * step[c]).clamp(lo, hi);
                trial[i].x = lx.exp();
            }
            for (i, a) in trial.iter_mut().enumerate() {
                a.w *= (t * step[free.len() + i]).clamp(-50.0, 50.0).exp();
            }
            let r = residual(&trial);
            if norm(&r) < current {
                pts.copy_from_slice(&trial);
                res = r;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// Dense BFGS with Armijo backtracking.
fn bfgs<F>(x: &mut [f64], max_iter: usize, mut f: F)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    if !fx.is_finite() {
        return;
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut g_new = vec![0.0; n];
    let mut stall = 0;
    for iter in 0..max_iter {
        let gnorm = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if gnorm < 1e-12 {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&h * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            h.fill_with_identity();
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        let mut t = if iter == 0 { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut trial = vec![0.0; n];
        let mut f_trial = f64::INFINITY;
        let mut found = false;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + t * dir[i];
            }
            f_trial = f(&trial, &mut g_new);
            if f_trial.is_finite() && f_trial <= fx + 1e-4 * t * slope {
                found = true;
                break;
            }
            t *= 0.5;
        }
        if !found {
            break;
        }
        let s = DVector::from_iterator(n, (0..n).map(|i| trial[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| g_new[i] - g[i]));
        let sy = s.dot(&y);
        let improvement = fx - f_trial;
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        fx = f_trial;
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        if improvement <= 1e-16 * fx.abs().max(1e-300) {
            stall += 1;
            if stall >= 5 {
                break;
            }
        } else {
            stall = 0;
        }
    }
}
