//! Result files. Every CSV starts with `#` comment lines carrying the
//! provenance; JSON documents embed it as a field.

use std::io::Write;

use serde::Serialize;

use crate::analysis::ExperimentResult;
use crate::error::{Error, Result};
use crate::meanfield::NonlinearFlow;
use crate::ssa::{ReplicaSummary, Trajectory};

/// What produced a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64, command: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), seed, command: command.into() }
    }

    fn write_header<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# command={}", self.command)?;
        writeln!(out, "# config_hash={}", self.config_hash)?;
        writeln!(out, "# seed={}", self.seed)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes serializable rows as CSV below the provenance header.
pub fn write_rows<W: Write, T: Serialize>(mut out: W, prov: &Provenance, rows: &[T]) -> Result<()> {
    prov.write_header(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    grid: f64,
    value: f64,
    half_width: f64,
}

/// `grid,value,half_width`; the fit and metadata go to the JSON summary.
pub fn write_experiment_csv<W: Write>(out: W, prov: &Provenance, r: &ExperimentResult) -> Result<()> {
    let rows: Vec<CurveRow> = r
        .grid
        .iter()
        .zip(&r.values)
        .zip(&r.half_widths)
        .map(|((&grid, &value), &half_width)| CurveRow { grid, value, half_width })
        .collect();
    write_rows(out, prov, &rows)
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

/// Pretty JSON `{provenance, result}` with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, prov: &Provenance, result: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &Document { provenance: prov, result })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct FlowRow {
    t: f64,
    k: usize,
    mass: f64,
}

/// Long format `t,k,mass`.
pub fn write_flow_long<W: Write>(out: W, prov: &Provenance, flow: &NonlinearFlow) -> Result<()> {
    let mut rows = vec![];
    for (&t, u) in flow.times.iter().zip(&flow.dists) {
        rows.extend(u.mass().iter().enumerate().map(|(k, &mass)| FlowRow { t, k, mass }));
    }
    write_rows(out, prov, &rows)
}

#[derive(Serialize)]
struct FlowSummaryRow {
    t: f64,
    mean: f64,
    exp_moment: f64,
}

/// `t,mean,exp_moment` with `exp_moment = Σ e^{δi} u_t(i)`.
pub fn write_flow_summary<W: Write>(out: W, prov: &Provenance, flow: &NonlinearFlow, delta: f64) -> Result<()> {
    let rows: Vec<FlowSummaryRow> = flow
        .times
        .iter()
        .zip(&flow.means)
        .zip(flow.exp_moments(delta))
        .map(|((&t, &mean), exp_moment)| FlowSummaryRow { t, mean, exp_moment })
        .collect();
    write_rows(out, prov, &rows)
}

#[derive(Serialize)]
struct PathRow {
    replica: usize,
    t: f64,
    i: usize,
    x: u64,
}

/// Long format `replica,t,i,x`.
pub fn write_trajectories<W: Write>(out: W, prov: &Provenance, runs: &[Trajectory]) -> Result<()> {
    let mut rows = vec![];
    for (replica, tr) in runs.iter().enumerate() {
        for (&t, s) in tr.record_times.iter().zip(&tr.states) {
            rows.extend(s.values().iter().enumerate().map(|(i, &x)| PathRow { replica, t, i, x }));
        }
    }
    write_rows(out, prov, &rows)
}

#[derive(Serialize)]
struct MarginalRow {
    t: f64,
    mean: f64,
    mean_half_width: f64,
    k: u64,
    pooled_count: u64,
}

/// Pooled occupation counts per record time, with the mean of `M^N_t`.
pub fn write_marginals<W: Write>(out: W, prov: &Provenance, s: &ReplicaSummary) -> Result<()> {
    let mut rows = vec![];
    for (j, &t) in s.times.iter().enumerate() {
        for (&k, &c) in s.pooled[j].counts() {
            rows.push(MarginalRow {
                t,
                mean: s.mean[j].mean,
                mean_half_width: s.mean[j].half_width,
                k,
                pooled_count: c,
            });
        }
    }
    write_rows(out, prov, &rows)
}
