//! Text artifacts: sample parsing and deterministic CSV/JSON writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back reproduces the exact values. CSV files start with `#` comment
//! lines recording the version, flags and seed; JSON documents carry the same
//! information under a top-level `provenance` key.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{DeconvError, Result};
use crate::grid::Grid;
use crate::objective::ThetaEstimate;
use crate::path::DeconvPath;
use crate::select::SelectionReport;
use crate::simulate::BenchResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Flags in the order they should be printed.
    pub flags: Vec<(String, String)>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, flags: Vec<(String, String)>, seed: Option<u64>) -> Self {
        Provenance {
            tool: "deconv".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            flags,
            seed,
        }
    }

    pub fn header(&self) -> String {
        let mut out = format!("# {} {} {}\n", self.tool, self.version, self.command);
        let flags: Vec<String> = self.flags.iter().map(|(k, v)| format!("--{k} {v}")).collect();
        let _ = writeln!(out, "# flags: {}", flags.join(" "));
        match self.seed {
            Some(seed) => {
                let _ = writeln!(out, "# seed: {seed}");
            }
            None => out.push_str("# seed: none\n"),
        }
        out
    }
}

/// Shortest decimal string that parses back to exactly `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Reads one number per line. Blank lines and `#` comments are skipped;
/// errors cite the 1-based line number.
pub fn parse_samples(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| DeconvError::Parse {
            line: i + 1,
            message: format!("cannot parse {line:?} as a number"),
        })?;
        if !value.is_finite() {
            return Err(DeconvError::Parse {
                line: i + 1,
                message: format!("non-finite value {line:?}"),
            });
        }
        out.push(value);
    }
    if out.is_empty() {
        return Err(DeconvError::NoData);
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

pub fn samples_csv(prov: &Provenance, y: &[f64]) -> String {
    let mut out = prov.header();
    for v in y {
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out
}

pub fn grid_csv(prov: &Provenance, grid: &Grid) -> String {
    let mut out = prov.header();
    out.push_str("midpoint,count\n");
    for (x, c) in grid.midpoints().iter().zip(grid.counts()) {
        let _ = writeln!(out, "{},{c}", fmt_f64(*x));
    }
    out
}

pub fn estimate_csv(prov: &Provenance, grid: &Grid, est: &ThetaEstimate) -> String {
    let mut out = prov.header();
    out.push_str("midpoint,f_hat,m_hat\n");
    for ((x, f), m) in grid.midpoints().iter().zip(&est.f_hat).zip(&est.m_hat) {
        let _ = writeln!(out, "{},{},{}", fmt_f64(*x), fmt_f64(*f), fmt_f64(*m));
    }
    out
}

/// An estimate file read back: midpoints and density values.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub midpoints: Vec<f64>,
    pub f_hat: Vec<f64>,
}

impl EstimateTable {
    /// The grid implied by the midpoints (counts are zero).
    pub fn grid(&self) -> Result<Grid> {
        if self.midpoints.len() < 2 {
            return Err(DeconvError::InvalidGrid("estimate needs at least two midpoints".into()));
        }
        let width = (self.midpoints[self.midpoints.len() - 1] - self.midpoints[0]) / (self.midpoints.len() - 1) as f64;
        Grid::new(self.midpoints.clone(), width, vec![0; self.midpoints.len()])
    }
}

/// Parses an estimate CSV with header `midpoint,f_hat,m_hat`.
pub fn parse_estimate_csv(text: &str) -> Result<EstimateTable> {
    let mut header_seen = false;
    let mut table = EstimateTable {
        midpoints: Vec::new(),
        f_hat: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            if fields != ["midpoint", "f_hat", "m_hat"] {
                return Err(DeconvError::Parse {
                    line: i + 1,
                    message: format!("expected header midpoint,f_hat,m_hat, found {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 3 {
            return Err(DeconvError::Parse {
                line: i + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DeconvError::Parse {
                line: i + 1,
                message: format!("cannot parse {s:?} as a number"),
            })
        };
        table.midpoints.push(num(fields[0])?);
        table.f_hat.push(num(fields[1])?);
    }
    if !header_seen || table.midpoints.is_empty() {
        return Err(DeconvError::NoData);
    }
    Ok(table)
}

pub fn path_csv(prov: &Provenance, path: &DeconvPath) -> String {
    let mut out = prov.header();
    out.push_str("tau,midpoint,f_hat,m_hat\n");
    for entry in &path.entries {
        let tau = fmt_f64(entry.tau);
        for ((x, f), m) in path.grid.midpoints().iter().zip(&entry.estimate.f_hat).zip(&entry.estimate.m_hat) {
            let _ = writeln!(out, "{tau},{},{},{}", fmt_f64(*x), fmt_f64(*f), fmt_f64(*m));
        }
    }
    out
}

pub fn means_csv(prov: &Provenance, y: &[f64], mu_hat: &[f64]) -> String {
    let mut out = prov.header();
    out.push_str("y,mu_hat\n");
    for (a, b) in y.iter().zip(mu_hat) {
        let _ = writeln!(out, "{},{}", fmt_f64(*a), fmt_f64(*b));
    }
    out
}

/// One row per replicate plus `mean` and `std_error` rows.
pub fn bench_csv(prov: &Provenance, bench: &BenchResult) -> String {
    let mut out = prov.header();
    out.push_str("seed,mse95,mse99,means_mse,chosen_tau,modes,raw_mass,error\n");
    for r in &bench.replicates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.seed,
            fmt_f64(r.mse95),
            fmt_f64(r.mse99),
            fmt_f64(r.means_mse),
            fmt_f64(r.chosen_tau),
            r.modes.len(),
            fmt_f64(r.raw_mass),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    let _ = writeln!(
        out,
        "mean,{},{},{},,,,",
        fmt_f64(bench.mse95.mean),
        fmt_f64(bench.mse99.mean),
        fmt_f64(bench.means_mse.mean)
    );
    let _ = writeln!(
        out,
        "std_error,{},{},{},,,,",
        fmt_f64(bench.mse95.std_error),
        fmt_f64(bench.mse99.std_error),
        fmt_f64(bench.means_mse.std_error)
    );
    out
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with a `provenance` key merged into the top-level object.
pub fn to_json<T: Serialize>(prov: &Provenance, body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Document { provenance: prov, body }).map_err(|e| DeconvError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct PathSummaryRow {
    pub tau: f64,
    pub converged: bool,
    pub objective: f64,
    pub nll: f64,
    pub penalty_norm: f64,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub raw_mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub order: usize,
    pub norm: crate::objective::Norm,
    pub bins: usize,
    pub width: f64,
    pub n: u64,
    pub converged: usize,
    pub entries: Vec<PathSummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionReport>,
}

/// Per-`τ` summary of a path; `selection` scores are attached when the
/// report was computed on this path.
pub fn path_summary(path: &DeconvPath, selection: Option<&SelectionReport>) -> PathSummary {
    let scores = selection.filter(|s| s.scores.len() == path.entries.len());
    let entries = path
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d = &e.estimate.diagnostics;
            PathSummaryRow {
                tau: e.tau,
                converged: d.converged,
                objective: d.objective,
                nll: d.nll,
                penalty_norm: e.penalty_norm,
                iterations: d.iterations,
                inner_iterations: d.inner_iterations,
                raw_mass: d.raw_mass,
                score: scores.map(|s| s.scores[i].score),
                message: d.message.clone(),
            }
        })
        .collect();
    PathSummary {
        order: path.order,
        norm: path.norm,
        bins: path.grid.len(),
        width: path.grid.width(),
        n: path.grid.n(),
        converged: path.converged_count(),
        entries,
        selection: selection.cloned(),
    }
}
