//! Spectrum and trace inputs.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use tracelogdet::moments::TracePowers;
use tracelogdet::spectra::{exact_stats, generate, trace_powers, Spectrum, SpectrumFamily, SpectrumFile, SpectrumStats};

use crate::CliError;

/// Where the spectrum comes from: a named family or a spectrum JSON file.
#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    /// geometric, uniform, lognormal, two_point, bimodal or clustered.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Required for lognormal and clustered.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spectrum JSON file instead of --family.
    #[arg(long, conflicts_with = "family")]
    pub spectrum: Option<PathBuf>,
}

/// A spectrum source, or a traces CSV.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    /// Traces CSV (`n,k,p_k`) instead of a spectrum.
    #[arg(long, conflicts_with_all = ["family", "spectrum"])]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDescriptor {
    Spectrum {
        family: SpectrumFamily,
        n: usize,
        kappa: f64,
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    Traces {
        path: String,
        n: usize,
        m: usize,
    },
}

/// Traces ready for estimation, with the spectrum when it is known.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub descriptor: InputDescriptor,
    pub traces: TracePowers,
    pub spectrum: Option<Spectrum>,
}

impl Loaded {
    pub fn truth(&self) -> Option<SpectrumStats> {
        self.spectrum.as_ref().map(exact_stats)
    }

    /// `λ_min / AM` when the spectrum is known.
    pub fn exact_floor(&self) -> Option<f64> {
        self.spectrum.as_ref().map(|s| s.normalized()[0])
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(text)
}

impl SpectrumArgs {
    pub fn load(&self) -> Result<(Spectrum, Option<String>), CliError> {
        if let Some(path) = &self.spectrum {
            let file = SpectrumFile::from_json(&read_file(path)?)?;
            return Ok((file.into_spectrum()?, Some(path.display().to_string())));
        }
        let family: SpectrumFamily = self
            .family
            .as_deref()
            .ok_or_else(|| CliError::Usage("give --family or --spectrum".into()))?
            .parse()?;
        let kappa = self.kappa.ok_or_else(|| CliError::Usage("--kappa is required with --family".into()))?;
        Ok((generate(family, self.n, kappa, self.seed)?, None))
    }
}

impl InputArgs {
    /// Traces `p_1..p_m`; a spectrum is expanded to `m` powers.
    pub fn load(&self, m: usize) -> Result<Loaded, CliError> {
        if let Some(path) = &self.traces {
            let tp = read_traces(&read_file(path)?)?;
            if tp.m() < m {
                return Err(CliError::Usage(format!("{} has traces up to k = {}, need {m}", path.display(), tp.m())));
            }
            let tp = tp.truncated(m)?;
            return Ok(Loaded {
                descriptor: InputDescriptor::Traces {
                    path: path.display().to_string(),
                    n: tp.n(),
                    m: tp.m(),
                },
                traces: tp,
                spectrum: None,
            });
        }
        let (s, path) = self.spectrum.load()?;
        Ok(Loaded {
            descriptor: InputDescriptor::Spectrum {
                family: s.family(),
                n: s.n(),
                kappa: s.kappa(),
                seed: s.seed(),
                path,
            },
            traces: trace_powers(&s, m)?,
            spectrum: Some(s),
        })
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    n: usize,
    k: usize,
    p_k: f64,
}

/// Parses `n,k,p_k` rows; `k` must cover `1..=m` exactly once.
pub fn read_traces(text: &str) -> Result<TracePowers, CliError> {
    let bad = |msg: String| CliError::Usage(format!("bad traces CSV: {msg}"));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<TraceRow> = rdr.deserialize().collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))?;
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    rows.sort_by_key(|r| r.k);
    let n = rows[0].n;
    for (i, r) in rows.iter().enumerate() {
        if r.n != n {
            return Err(bad(format!("mixed n ({} and {})", n, r.n)));
        }
        if r.k != i + 1 {
            return Err(bad(format!("k must run 1..={} without gaps", rows.len())));
        }
    }
    Ok(TracePowers::new(n, rows.iter().map(|r| r.p_k).collect())?)
}

/// Writes `n,k,p_k` at full (round-trip) precision.
pub fn write_traces<W: Write>(tp: &TracePowers, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "k", "p_k"])?;
    for (i, p) in tp.p().iter().enumerate() {
        w.write_record([tp.n().to_string(), (i + 1).to_string(), format!("{p:e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traces_round_trip_exactly() {
        let s = generate(SpectrumFamily::Geometric, 1024, 100.0, None).unwrap();
        let tp = trace_powers(&s, 8).unwrap();
        let mut buf = Vec::new();
        write_traces(&tp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,k,p_k\n1024,1,"));
        assert_eq!(read_traces(&text).unwrap(), tp);
    }

    #[test]
    fn rows_may_come_in_any_order() {
        let tp = read_traces("n,k,p_k\n3,2,14\n3,1,6\n3,3,36\n").unwrap();
        assert_eq!(tp.p(), &[6.0, 14.0, 36.0]);
    }

    #[test]
    fn rejects_gaps_and_mixed_n() {
        assert!(read_traces("n,k,p_k\n3,1,6\n3,3,36\n").is_err());
        assert!(read_traces("n,k,p_k\n3,1,6\n4,2,14\n").is_err());
        assert!(read_traces("n,k,p_k\n").is_err());
        assert!(read_traces("n,k,p_k\n3,1,-6\n").is_err());
    }
}
