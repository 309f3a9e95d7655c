//! Benchmark spectrum families, exact ground-truth statistics and trace powers.
//!
//! Every generated family is scaled so that `λ_min = 1` and `λ_max = κ`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::moments::TracePowers;
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumFamily {
    Geometric,
    Uniform,
    Lognormal,
    TwoPoint,
    Bimodal,
    Clustered,
    Custom,
}

impl SpectrumFamily {
    /// The six generated benchmark families, in table order.
    pub const BENCHMARK: [SpectrumFamily; 6] = [
        SpectrumFamily::Geometric,
        SpectrumFamily::Uniform,
        SpectrumFamily::Lognormal,
        SpectrumFamily::TwoPoint,
        SpectrumFamily::Bimodal,
        SpectrumFamily::Clustered,
    ];

    pub fn is_random(self) -> bool {
        matches!(self, SpectrumFamily::Lognormal | SpectrumFamily::Clustered)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectrumFamily::Geometric => "geometric",
            SpectrumFamily::Uniform => "uniform",
            SpectrumFamily::Lognormal => "lognormal",
            SpectrumFamily::TwoPoint => "two_point",
            SpectrumFamily::Bimodal => "bimodal",
            SpectrumFamily::Clustered => "clustered",
            SpectrumFamily::Custom => "custom",
        }
    }
}

impl fmt::Display for SpectrumFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpectrumFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fam = match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "geometric" => SpectrumFamily::Geometric,
            "uniform" => SpectrumFamily::Uniform,
            "lognormal" => SpectrumFamily::Lognormal,
            "two_point" | "twopoint" => SpectrumFamily::TwoPoint,
            "bimodal" => SpectrumFamily::Bimodal,
            "clustered" => SpectrumFamily::Clustered,
            "custom" => SpectrumFamily::Custom,
            other => return Err(invalid(format!("unknown spectrum family '{other}'"))),
        };
        Ok(fam)
    }
}

/// An explicit positive spectrum, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    family: SpectrumFamily,
    kappa: f64,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumStats {
    pub am: f64,
    pub gm: f64,
    /// `log(GM/AM)`, the target `K'(0)`.
    pub kprime0: f64,
    pub logdet: f64,
    pub kappa: f64,
}

impl Spectrum {
    /// Wraps user-supplied eigenvalues as a `custom` spectrum.
    pub fn custom(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("spectrum must have at least one eigenvalue"));
        }
        if let Some(bad) = eigenvalues.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("eigenvalue {bad} is not a positive finite number")));
        }
        eigenvalues.sort_by(f64::total_cmp);
        let kappa = eigenvalues[eigenvalues.len() - 1] / eigenvalues[0];
        Ok(Self {
            eigenvalues,
            family: SpectrumFamily::Custom,
            kappa,
            seed: None,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn family(&self) -> SpectrumFamily {
        self.family
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Returns the spectrum with every eigenvalue multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid("scale factor must be positive and finite"));
        }
        Ok(Self {
            eigenvalues: self.eigenvalues.iter().map(|v| v * c).collect(),
            ..self.clone()
        })
    }

    /// Eigenvalues divided by their arithmetic mean.
    pub fn normalized(&self) -> Vec<f64> {
        let am = compensated_sum(self.eigenvalues.iter().copied()) / self.n() as f64;
        self.eigenvalues.iter().map(|v| v / am).collect()
    }
}

pub fn generate(family: SpectrumFamily, n: usize, kappa: f64, seed: Option<u64>) -> Result<Spectrum> {
    if n < 2 {
        return Err(invalid(format!("n must be at least 2, got {n}")));
    }
    if !(kappa.is_finite() && kappa > 1.0) {
        return Err(invalid(format!("kappa must be a finite number > 1, got {kappa}")));
    }
    if family == SpectrumFamily::Custom {
        return Err(invalid("custom spectra are built from explicit eigenvalues"));
    }
    let seed = if family.is_random() {
        Some(seed.ok_or_else(|| invalid(format!("family {family} requires a seed")))?)
    } else {
        None
    };
    let last = (n - 1) as f64;
    let mut eigenvalues: Vec<f64> = match family {
        SpectrumFamily::Geometric => (0..n).map(|i| kappa.powf(i as f64 / last)).collect(),
        SpectrumFamily::Uniform => (0..n).map(|i| 1.0 + (kappa - 1.0) * i as f64 / last).collect(),
        SpectrumFamily::TwoPoint => {
            let mut v = vec![1.0; n];
            v[n - 1] = kappa;
            v
        }
        SpectrumFamily::Bimodal => (0..n).map(|i| if i < n / 2 { 1.0 } else { kappa }).collect(),
        SpectrumFamily::Lognormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_default());
            let sigma = kappa.ln() / 4.0;
            let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
            let logs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            rescale_logs(logs, kappa)?
        }
        SpectrumFamily::Clustered => {
            if n % 4 != 0 {
                return Err(invalid(format!("clustered spectra need n divisible by 4, got {n}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_default());
            let jitter = Uniform::new_inclusive(0.99, 1.01).map_err(|e| invalid(e.to_string()))?;
            let logs: Vec<f64> = (0..n)
                .map(|i| {
                    let centre = kappa.powf((i / (n / 4)) as f64 / 3.0);
                    (centre * jitter.sample(&mut rng)).ln()
                })
                .collect();
            rescale_logs(logs, kappa)?
        }
        SpectrumFamily::Custom => unreachable!(),
    };
    eigenvalues.sort_by(f64::total_cmp);
    eigenvalues[0] = 1.0;
    eigenvalues[n - 1] = kappa;
    Ok(Spectrum {
        eigenvalues,
        family,
        kappa,
        seed,
    })
}

/// Monotone log-affine map of `logs` onto `[0, log κ]`, exponentiated.
fn rescale_logs(mut logs: Vec<f64>, kappa: f64) -> Result<Vec<f64>> {
    logs.sort_by(f64::total_cmp);
    let (lo, hi) = (logs[0], logs[logs.len() - 1]);
    if hi - lo <= 0.0 {
        return Err(Error::Degenerate("random draws collapsed to a single value".into()));
    }
    let span = kappa.ln();
    Ok(logs.into_iter().map(|z| ((z - lo) / (hi - lo) * span).exp()).collect())
}

pub fn exact_stats(s: &Spectrum) -> SpectrumStats {
    let n = s.n() as f64;
    let am = compensated_sum(s.eigenvalues.iter().copied()) / n;
    let logdet = compensated_sum(s.eigenvalues.iter().map(|v| v.ln()));
    let mean_log = logdet / n;
    SpectrumStats {
        am,
        gm: mean_log.exp(),
        kprime0: mean_log - am.ln(),
        logdet,
        kappa: s.kappa,
    }
}

/// `p_k = Σ λ_i^k` for `k = 1..=m`, with compensated accumulation.
pub fn trace_powers(s: &Spectrum, m: usize) -> Result<TracePowers> {
    if m == 0 {
        return Err(invalid("need at least one trace power"));
    }
    let lmax = s.eigenvalues[s.n() - 1];
    if !lmax.powi(m as i32).is_finite() {
        return Err(Error::Overflow { power: m, value: lmax });
    }
    let p = (1..=m)
        .map(|k| compensated_sum(s.eigenvalues.iter().map(|v| v.powi(k as i32))))
        .collect();
    TracePowers::new(s.n(), p)
}

/// On-disk spectrum description; eigenvalues are optional on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub family: SpectrumFamily,
    pub n: usize,
    pub kappa: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
}

impl SpectrumFile {
    pub fn from_spectrum(s: &Spectrum) -> Self {
        Self {
            family: s.family,
            n: s.n(),
            kappa: s.kappa,
            seed: s.seed,
            eigenvalues: Some(s.eigenvalues.clone()),
        }
    }

    /// Rebuilds the spectrum, regenerating eigenvalues for named families.
    pub fn into_spectrum(self) -> Result<Spectrum> {
        match (self.family, self.eigenvalues) {
            (SpectrumFamily::Custom, Some(eigs)) => {
                let s = Spectrum::custom(eigs)?;
                if s.n() != self.n {
                    return Err(invalid(format!("n = {} but {} eigenvalues given", self.n, s.n())));
                }
                Ok(s)
            }
            (SpectrumFamily::Custom, None) => Err(invalid("custom spectrum file needs eigenvalues")),
            (family, _) => generate(family, self.n, self.kappa, self.seed),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spectrum serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("bad spectrum JSON: {e}")))
    }
}
