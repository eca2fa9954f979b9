//! Ingestion of externally measured traces from delimited text.
//!
//! The file declares nothing about the instrument, so the caller supplies
//! a schema: which columns hold what, and the acquisition metadata a bare
//! CSV cannot carry. The time axis must be uniform; the grid step is
//! inferred from it and the trace is re-based to start at t = 0.

use std::path::Path;

use crate::brillouin::{PulseScheme, SamplingGrid};
use crate::error::{Error, Result};
use crate::simulator::{BgsMap, GainTrace};

/// Column layout and metadata for a single-trace file.
#[derive(Debug, Clone)]
pub struct TraceSchema {
    /// Zero-based column of the time axis, seconds.
    pub time_col: usize,
    /// Zero-based column of the gain samples.
    pub gain_col: usize,
    pub has_header: bool,
    pub pulse: PulseScheme,
    pub group_velocity_m_per_s: f64,
    /// Whether the instrument output is already scaled to a unit plateau.
    pub normalized: bool,
}

/// Metadata for a sweep-matrix file: first column time in seconds, one
/// gain column per probe frequency, frequencies (Hz) in the header row.
#[derive(Debug, Clone)]
pub struct MapSchema {
    pub base_bfs_hz: f64,
    pub linewidth_hz: f64,
    pub fiber_length_m: f64,
    pub fiber_start_m: f64,
    pub pulse: PulseScheme,
    pub group_velocity_m_per_s: f64,
}

fn ingest_err(row: usize, message: impl Into<String>) -> Error {
    Error::Ingest {
        row,
        message: message.into(),
    }
}

fn split_row(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_cell(cell: &str, row: usize, what: &str) -> Result<f64> {
    cell.parse()
        .map_err(|_| ingest_err(row, format!("{what} {cell:?} is not a number")))
}

/// Checks the time axis is strictly increasing and uniform to 1%, and
/// returns the inferred step. Row numbers are 1-based file rows. The
/// nominal step is the median of the observed steps, so one glitched row
/// is reported rather than corrupting the reference it is judged against.
fn uniform_dt(times: &[(usize, f64)]) -> Result<f64> {
    if times.len() < 2 {
        return Err(ingest_err(
            times.last().map_or(0, |t| t.0),
            "need at least two samples to infer a time step",
        ));
    }
    let mut steps: Vec<f64> = times.windows(2).map(|p| p[1].1 - p[0].1).collect();
    steps.sort_by(f64::total_cmp);
    let dt = steps[steps.len() / 2];
    if !(dt > 0.0) {
        return Err(ingest_err(
            times[times.len() - 1].0,
            format!("time axis does not advance (median step {dt:.3e} s)"),
        ));
    }
    for pair in times.windows(2) {
        let (row, step) = (pair[1].0, pair[1].1 - pair[0].1);
        if !(step > 0.0) {
            return Err(ingest_err(
                row,
                format!("time goes backwards ({:.6e} s after {:.6e} s)", pair[1].1, pair[0].1),
            ));
        }
        if (step - dt).abs() > 0.01 * dt {
            return Err(ingest_err(
                row,
                format!(
                    "time step {step:.4e} s deviates more than 1% from the uniform {dt:.4e} s"
                ),
            ));
        }
    }
    let n = times.len();
    Ok((times[n - 1].1 - times[0].1) / (n - 1) as f64)
}

fn data_rows(text: &str, skip_header: bool) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .skip(usize::from(skip_header))
}

/// Reads a delimited two-column (or wider) file as one gain trace.
pub fn ingest_trace(path: impl AsRef<Path>, schema: &TraceSchema) -> Result<GainTrace> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let need = schema.time_col.max(schema.gain_col) + 1;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (row, line) in data_rows(&text, schema.has_header) {
        let cells = split_row(line);
        if cells.len() < need {
            return Err(ingest_err(
                row,
                format!("{} columns, schema needs {need}", cells.len()),
            ));
        }
        times.push((row, parse_cell(cells[schema.time_col], row, "time value")?));
        samples.push(parse_cell(cells[schema.gain_col], row, "gain value")?);
    }
    let dt = uniform_dt(&times)?;
    Ok(GainTrace {
        grid: SamplingGrid {
            dt_s: dt,
            group_velocity_m_per_s: schema.group_velocity_m_per_s,
            n_samples: samples.len(),
        },
        samples,
        pulse: schema.pulse,
        probe_offset_hz: 0.0,
        normalized: schema.normalized,
        seed: None,
    })
}

/// Reads a sweep-matrix file as a gain map. The header row names the
/// frequency axis: `time_s, <freq_hz>, <freq_hz>, ...`.
pub fn ingest_map(path: impl AsRef<Path>, schema: &MapSchema) -> Result<BgsMap> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut rows = data_rows(&text, false);
    let (header_row, header) = rows
        .next()
        .ok_or_else(|| ingest_err(0, "file holds no rows"))?;
    let cells = split_row(header);
    if cells.len() < 2 {
        return Err(ingest_err(
            header_row,
            "header row must name the time column and at least one frequency",
        ));
    }
    let freq_axis_hz: Vec<f64> = cells[1..]
        .iter()
        .map(|c| parse_cell(c, header_row, "header frequency"))
        .collect::<Result<_>>()?;
    let n_channels = freq_axis_hz.len();

    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_channels];
    for (row, line) in rows {
        let cells = split_row(line);
        if cells.len() != n_channels + 1 {
            return Err(ingest_err(
                row,
                format!("{} columns, header promises {}", cells.len(), n_channels + 1),
            ));
        }
        times.push((row, parse_cell(cells[0], row, "time value")?));
        for (ci, cell) in cells[1..].iter().enumerate() {
            columns[ci].push(parse_cell(cell, row, "gain value")?);
        }
    }
    let dt = uniform_dt(&times)?;
    let grid = SamplingGrid {
        dt_s: dt,
        group_velocity_m_per_s: schema.group_velocity_m_per_s,
        n_samples: times.len(),
    };
    let traces = columns
        .into_iter()
        .zip(&freq_axis_hz)
        .map(|(samples, freq)| GainTrace {
            samples,
            grid,
            pulse: schema.pulse,
            probe_offset_hz: freq - schema.base_bfs_hz,
            normalized: true,
            seed: None,
        })
        .collect();
    let map = BgsMap {
        traces,
        freq_axis_hz,
        base_bfs_hz: schema.base_bfs_hz,
        linewidth_hz: schema.linewidth_hz,
        fiber_length_m: schema.fiber_length_m,
        fiber_start_m: schema.fiber_start_m,
        pulse: schema.pulse,
        seed: None,
    };
    map.validate()?;
    Ok(map)
}
