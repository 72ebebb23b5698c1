//! Plain-text trace files: a `#` header carrying the schema version, column
//! names, units and a JSON parameter echo, then one tab-separated sample per
//! line. Floats are written in shortest round-trip form, so reading a file
//! back reproduces the trace exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{AngularRate, Detection, EchoTrace, SweepDirection, SweepTrace};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "rewgm-trace";

#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Echo(EchoTrace),
    Sweep(SweepTrace),
}

impl From<EchoTrace> for Trace {
    fn from(t: EchoTrace) -> Self {
        Trace::Echo(t)
    }
}

impl From<SweepTrace> for Trace {
    fn from(t: SweepTrace) -> Self {
        Trace::Sweep(t)
    }
}

/// A trace plus the free-form parameters stored with it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub trace: Trace,
    pub parameters: BTreeMap<String, Value>,
}

fn columns(trace: &Trace) -> (&'static str, &'static str, &'static str) {
    match trace {
        Trace::Echo(t) if t.detection == Detection::Heterodyne => ("echo", "time, re, im", "s, arb, arb"),
        Trace::Echo(_) => ("echo", "time, intensity", "s, arb"),
        Trace::Sweep(_) => ("sweep", "laser_detuning, transmission, branch_count", "rad/s, dimensionless, count"),
    }
}

/// Writes `trace` to `path`. `parameters` are echoed into the header next to
/// the trace's own metadata.
pub fn emit_trace(trace: &Trace, parameters: &BTreeMap<String, Value>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    write_trace(trace, parameters, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace(trace: &Trace, parameters: &BTreeMap<String, Value>, w: &mut impl Write) -> Result<()> {
    let (kind, cols, units) = columns(trace);
    let mut meta = parameters.clone();
    match trace {
        Trace::Echo(t) => {
            meta.insert("detection".into(), Value::from(t.detection.to_string()));
            if let Some(lo) = t.lo_offset {
                meta.insert("lo_offset".into(), Value::from(lo.0));
            }
        }
        Trace::Sweep(t) => {
            meta.insert("direction".into(), Value::from(t.direction.to_string()));
        }
    }
    writeln!(w, "# {MAGIC} schema_version: {TRACE_SCHEMA_VERSION}")?;
    writeln!(w, "# kind: {kind}")?;
    writeln!(w, "# columns: {cols}")?;
    writeln!(w, "# units: {units}")?;
    writeln!(w, "# parameters: {}", serde_json::to_string(&meta).map_err(|e| Error::Parse(e.to_string()))?)?;
    match trace {
        Trace::Echo(t) => {
            for (time, a) in t.times.iter().zip(&t.amplitudes) {
                match t.detection {
                    Detection::Heterodyne => writeln!(w, "{time:?}\t{:?}\t{:?}", a.re, a.im)?,
                    Detection::Direct => writeln!(w, "{time:?}\t{:?}", a.re)?,
                }
            }
        }
        Trace::Sweep(t) => {
            for ((x, y), b) in t.laser_detunings.iter().zip(&t.transmission).zip(&t.branch_count) {
                writeln!(w, "{x:?}\t{y:?}\t{b}")?;
            }
        }
    }
    Ok(())
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix("# ")?.strip_prefix(key)?.strip_prefix(": ")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("line {line}: bad number `{s}`")))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceFile> {
    let path = path.as_ref();
    let reader = BufReader::with_capacity(1 << 20, File::open(path)?);
    parse_trace(reader).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn parse_trace(reader: impl BufRead) -> Result<TraceFile> {
    let mut lines = reader.lines();
    let mut header = Vec::new();
    for _ in 0..5 {
        header.push(lines.next().ok_or_else(|| Error::Parse("truncated header".into()))??);
    }
    let version = header[0]
        .strip_prefix(&format!("# {MAGIC} schema_version: "))
        .ok_or_else(|| Error::Parse("not a trace file".into()))?;
    if version.trim() != TRACE_SCHEMA_VERSION.to_string() {
        return Err(Error::Parse(format!("unsupported trace schema version {version}")));
    }
    let kind = header_value(&header[1], "kind").ok_or_else(|| Error::Parse("missing kind".into()))?;
    let params_json = header_value(&header[4], "parameters").ok_or_else(|| Error::Parse("missing parameters".into()))?;
    let mut parameters: BTreeMap<String, Value> =
        serde_json::from_str(params_json).map_err(|e| Error::Parse(format!("parameters: {e}")))?;

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut branch = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if cols.is_empty() {
            cols = vec![Vec::new(); fields.len()];
        }
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!("line {}: expected {} columns", i + 6, cols.len())));
        }
        if kind == "sweep" {
            cols[0].push(parse_f64(fields[0], i + 6)?);
            cols[1].push(parse_f64(fields[1], i + 6)?);
            branch.push(fields[2].trim().parse::<u8>().map_err(|_| Error::Parse(format!("line {}: bad count", i + 6)))?);
        } else {
            for (c, f) in cols.iter_mut().zip(&fields) {
                c.push(parse_f64(f, i + 6)?);
            }
        }
    }

    let trace = match kind {
        "sweep" => {
            let direction = match parameters.remove("direction").as_ref().and_then(Value::as_str) {
                Some("forward") => SweepDirection::Forward,
                Some("reverse") => SweepDirection::Reverse,
                other => return Err(Error::Parse(format!("bad sweep direction {other:?}"))),
            };
            let mut cols = cols.into_iter();
            let xs = cols.next().unwrap_or_default();
            let ys = cols.next().unwrap_or_default();
            Trace::Sweep(SweepTrace::new(xs, ys, direction, branch)?)
        }
        "echo" => {
            let detection = match parameters.remove("detection").as_ref().and_then(Value::as_str) {
                Some("heterodyne") => Detection::Heterodyne,
                Some("direct") => Detection::Direct,
                other => return Err(Error::Parse(format!("bad detection {other:?}"))),
            };
            let lo = parameters.remove("lo_offset").and_then(|v| v.as_f64()).map(AngularRate);
            let times = cols.first().cloned().unwrap_or_default();
            let amps: Vec<Complex64> = match detection {
                Detection::Heterodyne if cols.len() == 3 => {
                    cols[1].iter().zip(&cols[2]).map(|(&re, &im)| Complex64::new(re, im)).collect()
                }
                Detection::Direct if cols.len() == 2 => cols[1].iter().map(|&v| Complex64::new(v, 0.0)).collect(),
                _ if cols.is_empty() => Vec::new(),
                _ => return Err(Error::Parse("column count does not match detection mode".into())),
            };
            Trace::Echo(EchoTrace::new(times, amps, detection, lo)?)
        }
        other => return Err(Error::Parse(format!("unknown trace kind `{other}`"))),
    };
    Ok(TraceFile { trace, parameters })
}

/// A two-column (x, y) data series, optionally tagged with the fit model
/// that reduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub model: Option<String>,
    pub columns: [String; 2],
    pub units: [String; 2],
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(model: Option<&str>, columns: [&str; 2], units: [&str; 2], points: Vec<(f64, f64)>) -> Self {
        Series {
            model: model.map(str::to_string),
            columns: columns.map(str::to_string),
            units: units.map(str::to_string),
            points,
        }
    }
}

pub fn write_series(series: &Series, w: &mut impl Write) -> Result<()> {
    writeln!(w, "# rewgm-series schema_version: {TRACE_SCHEMA_VERSION}")?;
    if let Some(m) = &series.model {
        writeln!(w, "# model: {m}")?;
    }
    writeln!(w, "# columns: {}, {}", series.columns[0], series.columns[1])?;
    writeln!(w, "# units: {}, {}", series.units[0], series.units[1])?;
    for (x, y) in &series.points {
        writeln!(w, "{x:?}\t{y:?}")?;
    }
    Ok(())
}

pub fn emit_series(series: &Series, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_series(series, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a delimited (x, y) file. Fields may be separated by tabs, commas or
/// spaces; `#` lines are header, and `# model:`, `# columns:` and `# units:`
/// are picked up when present.
pub fn parse_series(reader: impl BufRead) -> Result<Series> {
    let mut s = Series::new(None, ["x", "y"], ["", ""], Vec::new());
    let pair = |v: &str| -> [String; 2] {
        let mut it = v.splitn(2, ',').map(|p| p.trim().to_string());
        [it.next().unwrap_or_default(), it.next().unwrap_or_default()]
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if t.starts_with('#') {
            if let Some(m) = header_value(t, "model") {
                s.model = Some(m.trim().to_string());
            } else if let Some(c) = header_value(t, "columns") {
                s.columns = pair(c);
            } else if let Some(u) = header_value(t, "units") {
                s.units = pair(u);
            }
            continue;
        }
        let fields: Vec<&str> = t.split([',', '\t', ' ']).filter(|f| !f.is_empty()).collect();
        if fields.len() != 2 {
            return Err(Error::Parse(format!("line {}: expected two fields, got {}", i + 1, fields.len())));
        }
        s.points.push((parse_f64(fields[0], i + 1)?, parse_f64(fields[1], i + 1)?));
    }
    Ok(s)
}

pub fn read_series(path: impl AsRef<Path>) -> Result<Series> {
    let path = path.as_ref();
    parse_series(BufReader::new(File::open(path)?)).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round_trip(trace: Trace, params: BTreeMap<String, Value>) -> TraceFile {
        let mut buf = Vec::new();
        write_trace(&trace, &params, &mut buf).unwrap();
        parse_trace(buf.as_slice()).unwrap()
    }

    #[test]
    fn sweep_header_names_units() {
        let t = SweepTrace::new(vec![-1.0, 0.5], vec![0.8, 0.3], SweepDirection::Forward, vec![1, 3]).unwrap();
        let mut buf = Vec::new();
        write_trace(&t.into(), &BTreeMap::new(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# units: rad/s, dimensionless, count"));
        assert!(text.starts_with("# rewgm-trace schema_version: 1"));
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(parse_trace("hello\n".as_bytes()).is_err());
        let bad = "# rewgm-trace schema_version: 99\n# kind: sweep\n# columns: x\n# units: x\n# parameters: {}\n";
        assert!(parse_trace(bad.as_bytes()).is_err());
    }

    #[test]
    fn direct_trace_round_trips() {
        let t = EchoTrace::new(
            vec![0.0, 1e-7, 2e-7],
            vec![Complex64::new(0.1, 0.0), Complex64::new(1.0 / 3.0, 0.0), Complex64::new(0.0, 0.0)],
            Detection::Direct,
            None,
        )
        .unwrap();
        let back = round_trip(t.clone().into(), BTreeMap::new());
        assert_eq!(back.trace, Trace::Echo(t));
    }

    #[test]
    fn series_round_trip_and_loose_delimiters() {
        let s = Series::new(Some("amp_2pe"), ["delay", "amplitude"], ["s", "arb"], vec![(0.0, 1.0), (1e-5, 0.1 + 0.2)]);
        let mut buf = Vec::new();
        write_series(&s, &mut buf).unwrap();
        assert_eq!(parse_series(buf.as_slice()).unwrap(), s);
        let loose = parse_series("# model: hole\n1, 2\n3 4\n5\t6\n".as_bytes()).unwrap();
        assert_eq!(loose.model.as_deref(), Some("hole"));
        assert_eq!(loose.points, vec![(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)]);
        assert!(parse_series("1 2 3\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn heterodyne_trace_round_trips(
            samples in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 0..60),
            lo in 1.0f64..1e9,
            note in "[a-zA-Z0-9 ]{0,20}",
        ) {
            let times: Vec<f64> = (0..samples.len()).map(|i| i as f64 * 1.3e-9 + 1e-6).collect();
            let amps = samples.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let t = EchoTrace::new(times, amps, Detection::Heterodyne, Some(AngularRate(lo))).unwrap();
            let params = BTreeMap::from([("note".to_string(), Value::from(note)), ("tau".to_string(), Value::from(1.5e-5))]);
            let back = round_trip(t.clone().into(), params.clone());
            prop_assert_eq!(back.trace, Trace::Echo(t));
            prop_assert_eq!(back.parameters, params);
        }

        #[test]
        fn sweep_trace_round_trips(values in proptest::collection::vec((0.0f64..1.0, 0u8..4), 1..60), reverse: bool) {
            let n = values.len();
            let mut xs: Vec<f64> = (0..n).map(|i| -3.0 + i as f64 * 0.173_205_080_756_887_7).collect();
            if reverse {
                xs.reverse();
            }
            let dir = if reverse { SweepDirection::Reverse } else { SweepDirection::Forward };
            let t = SweepTrace::new(xs, values.iter().map(|v| v.0).collect(), dir, values.iter().map(|v| v.1).collect()).unwrap();
            prop_assert_eq!(round_trip(t.clone().into(), BTreeMap::new()).trace, Trace::Sweep(t));
        }
    }
}
