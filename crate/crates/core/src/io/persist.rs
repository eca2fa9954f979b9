//! Gain-map persistence: a human-readable text header followed by the
//! samples as little-endian 64-bit floats, channel-major. Monte Carlo runs
//! produce maps far too large for delimited text, but the header keeps
//! axes, pulse metadata, provenance hash and seeds inspectable with a
//! pager. Floats in the header print in shortest round-trip form, so a
//! write/read cycle is bitwise lossless.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::brillouin::{PulseScheme, SamplingGrid};
use crate::error::{Error, Result};
use crate::simulator::{BgsMap, GainTrace};

const MAGIC: &str = "botda-bgs 1";

/// Everything the header records; obtainable without touching the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct BgsHeader {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub trace_seeds: Vec<Option<u64>>,
    pub base_bfs_hz: f64,
    pub linewidth_hz: f64,
    pub fiber_length_m: f64,
    pub fiber_start_m: f64,
    pub pulse: PulseScheme,
    pub dt_s: f64,
    pub group_velocity_m_per_s: f64,
    pub n_samples: usize,
    pub normalized: bool,
    pub freq_axis_hz: Vec<f64>,
    pub payload_bytes: u64,
}

impl BgsHeader {
    pub fn n_channels(&self) -> usize {
        self.freq_axis_hz.len()
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

/// Writes a map with its provenance hash. The file appears atomically: the
/// payload goes to a temporary in the same directory and is renamed over
/// the target, so concurrent readers never see a half-written map.
pub fn write_bgs(path: impl AsRef<Path>, map: &BgsMap, config_hash: Option<&str>) -> Result<()> {
    map.validate()?;
    let normalized = map.traces[0].normalized;
    if map.traces.iter().any(|t| t.normalized != normalized) {
        return Err(Error::Contract(
            "cannot persist a map mixing normalized and raw traces".into(),
        ));
    }
    let grid = map.grid();
    let mut header = String::new();
    let mut put = |line: String| {
        header.push_str(&line);
        header.push('\n');
    };
    put(MAGIC.to_string());
    put(format!("config_hash {}", config_hash.unwrap_or("none")));
    put(format!(
        "seed {}",
        map.seed.map_or("none".to_string(), |s| s.to_string())
    ));
    put(format!(
        "trace_seeds {}",
        map.traces
            .iter()
            .map(|t| t.seed.map_or("-".to_string(), |s| s.to_string()))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    put(format!("base_bfs_hz {:?}", map.base_bfs_hz));
    put(format!("linewidth_hz {:?}", map.linewidth_hz));
    put(format!("fiber_length_m {:?}", map.fiber_length_m));
    put(format!("fiber_start_m {:?}", map.fiber_start_m));
    match map.pulse {
        PulseScheme::Single { width_s } => put(format!("pulse single {width_s:?}")),
        PulseScheme::Pair {
            width_long_s,
            width_short_s,
        } => put(format!("pulse pair {width_long_s:?} {width_short_s:?}")),
    }
    put(format!("dt_s {:?}", grid.dt_s));
    put(format!(
        "group_velocity_m_per_s {:?}",
        grid.group_velocity_m_per_s
    ));
    put(format!("n_samples {}", grid.n_samples));
    put(format!("normalized {normalized}"));
    let mut axis = String::from("freq_axis_hz");
    for f in &map.freq_axis_hz {
        write!(axis, " {f:?}").expect("string write");
    }
    put(axis);
    let payload_bytes = map.n_channels() as u64 * grid.n_samples as u64 * 8;
    put(format!("payload {payload_bytes}"));

    let mut bytes = Vec::with_capacity(header.len() + payload_bytes as usize);
    bytes.extend_from_slice(header.as_bytes());
    for t in &map.traces {
        for s in &t.samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
    }

    let dir = path.as_ref().parent().unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::fs::write(tmp.path(), &bytes)?;
    tmp.persist(path.as_ref())
        .map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_f64(token: &str, key: &str) -> Result<f64> {
    token
        .parse()
        .map_err(|_| corrupt(format!("header field {key} has non-numeric value {token:?}")))
}

fn read_header(reader: &mut impl BufRead) -> Result<BgsHeader> {
    let mut line = String::new();
    let next_line = |reader: &mut dyn BufRead, line: &mut String| -> Result<String> {
        line.clear();
        let n = reader.read_line(line)?;
        if n == 0 {
            return Err(corrupt("header ended before the payload marker"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(reader, &mut line)? != MAGIC {
        return Err(corrupt(format!("not a gain-map file (expected {MAGIC:?})")));
    }

    let mut config_hash = None;
    let mut seed = None;
    let mut trace_seeds = Vec::new();
    let mut base_bfs_hz = None;
    let mut linewidth_hz = None;
    let mut fiber_length_m = None;
    let mut fiber_start_m = None;
    let mut pulse = None;
    let mut dt_s = None;
    let mut group_velocity = None;
    let mut n_samples = None;
    let mut normalized = None;
    let mut freq_axis = None;

    loop {
        let text = next_line(reader, &mut line)?;
        let (key, rest) = text.split_once(' ').unwrap_or((text.as_str(), ""));
        match key {
            "config_hash" => config_hash = (rest != "none").then(|| rest.to_string()),
            "seed" => {
                seed = if rest == "none" {
                    None
                } else {
                    Some(rest.parse().map_err(|_| corrupt("bad seed"))?)
                }
            }
            "trace_seeds" => {
                trace_seeds = rest
                    .split_whitespace()
                    .map(|t| {
                        if t == "-" {
                            Ok(None)
                        } else {
                            t.parse().map(Some).map_err(|_| corrupt("bad trace seed"))
                        }
                    })
                    .collect::<Result<_>>()?;
            }
            "base_bfs_hz" => base_bfs_hz = Some(parse_f64(rest, key)?),
            "linewidth_hz" => linewidth_hz = Some(parse_f64(rest, key)?),
            "fiber_length_m" => fiber_length_m = Some(parse_f64(rest, key)?),
            "fiber_start_m" => fiber_start_m = Some(parse_f64(rest, key)?),
            "pulse" => {
                let mut parts = rest.split_whitespace();
                pulse = Some(match parts.next() {
                    Some("single") => PulseScheme::Single {
                        width_s: parse_f64(
                            parts.next().ok_or_else(|| corrupt("pulse single needs a width"))?,
                            "pulse",
                        )?,
                    },
                    Some("pair") => PulseScheme::Pair {
                        width_long_s: parse_f64(
                            parts.next().ok_or_else(|| corrupt("pulse pair needs two widths"))?,
                            "pulse",
                        )?,
                        width_short_s: parse_f64(
                            parts.next().ok_or_else(|| corrupt("pulse pair needs two widths"))?,
                            "pulse",
                        )?,
                    },
                    other => return Err(corrupt(format!("unknown pulse kind {other:?}"))),
                });
            }
            "dt_s" => dt_s = Some(parse_f64(rest, key)?),
            "group_velocity_m_per_s" => group_velocity = Some(parse_f64(rest, key)?),
            "n_samples" => {
                n_samples = Some(rest.parse().map_err(|_| corrupt("bad n_samples"))?)
            }
            "normalized" => {
                normalized = Some(rest.parse().map_err(|_| corrupt("bad normalized flag"))?)
            }
            "freq_axis_hz" => {
                freq_axis = Some(
                    rest.split_whitespace()
                        .map(|t| parse_f64(t, key))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            "payload" => {
                let payload_bytes: u64 =
                    rest.parse().map_err(|_| corrupt("bad payload length"))?;
                let missing = |name: &str| corrupt(format!("header is missing {name}"));
                let header = BgsHeader {
                    config_hash,
                    seed,
                    trace_seeds,
                    base_bfs_hz: base_bfs_hz.ok_or_else(|| missing("base_bfs_hz"))?,
                    linewidth_hz: linewidth_hz.ok_or_else(|| missing("linewidth_hz"))?,
                    fiber_length_m: fiber_length_m.ok_or_else(|| missing("fiber_length_m"))?,
                    fiber_start_m: fiber_start_m.ok_or_else(|| missing("fiber_start_m"))?,
                    pulse: pulse.ok_or_else(|| missing("pulse"))?,
                    dt_s: dt_s.ok_or_else(|| missing("dt_s"))?,
                    group_velocity_m_per_s: group_velocity
                        .ok_or_else(|| missing("group_velocity_m_per_s"))?,
                    n_samples: n_samples.ok_or_else(|| missing("n_samples"))?,
                    normalized: normalized.ok_or_else(|| missing("normalized"))?,
                    freq_axis_hz: freq_axis.ok_or_else(|| missing("freq_axis_hz"))?,
                    payload_bytes,
                };
                if header.trace_seeds.len() != header.n_channels() {
                    return Err(corrupt(format!(
                        "{} trace seeds for {} channels",
                        header.trace_seeds.len(),
                        header.n_channels()
                    )));
                }
                let expected = header.n_channels() as u64 * header.n_samples as u64 * 8;
                if payload_bytes != expected {
                    return Err(corrupt(format!(
                        "payload length {payload_bytes} does not match {} channels x {} samples",
                        header.n_channels(),
                        header.n_samples
                    )));
                }
                return Ok(header);
            }
            other => return Err(corrupt(format!("unknown header field {other:?}"))),
        }
    }
}

/// Reads only the header: axes and metadata without loading the samples.
pub fn inspect_bgs(path: impl AsRef<Path>) -> Result<BgsHeader> {
    let file = std::fs::File::open(path.as_ref())?;
    read_header(&mut BufReader::new(file))
}

pub fn read_bgs(path: impl AsRef<Path>) -> Result<BgsMap> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut reader = BufReader::new(file);
    let header = read_header(&mut reader)?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() as u64 != header.payload_bytes {
        return Err(corrupt(format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            header.payload_bytes
        )));
    }

    let grid = SamplingGrid {
        dt_s: header.dt_s,
        group_velocity_m_per_s: header.group_velocity_m_per_s,
        n_samples: header.n_samples,
    };
    let traces = header
        .freq_axis_hz
        .iter()
        .enumerate()
        .map(|(ci, freq)| {
            let start = ci * header.n_samples * 8;
            let samples = payload[start..start + header.n_samples * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            GainTrace {
                samples,
                grid,
                pulse: header.pulse,
                probe_offset_hz: freq - header.base_bfs_hz,
                normalized: header.normalized,
                seed: header.trace_seeds[ci],
            }
        })
        .collect();

    let map = BgsMap {
        traces,
        freq_axis_hz: header.freq_axis_hz,
        base_bfs_hz: header.base_bfs_hz,
        linewidth_hz: header.linewidth_hz,
        fiber_length_m: header.fiber_length_m,
        fiber_start_m: header.fiber_start_m,
        pulse: header.pulse,
        seed: header.seed,
    };
    map.validate()?;
    Ok(map)
}
