//! CSV and JSON serialization for datasets, reports and weight tables.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{AteEstimate, IDENTITY_TOL};
use crate::simulation::McRow;
use crate::smoothers::{SmoothingMatrix, WeightSummary};

/// Library version stamped into reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a dataset with header `x1,...,xd,d,y`.
pub fn read_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_csv_dataset(file)
}

pub fn parse_csv_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => return Err(malformed(1, "empty file")),
    };
    let width = header.len();
    let d = width.saturating_sub(2);
    let expected: Vec<String> = (1..=d)
        .map(|p| format!("x{p}"))
        .chain(["d".to_string(), "y".to_string()])
        .collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(malformed(
            1,
            &format!("header must be x1,...,xd,d,y with d >= 1, found '{}'", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut cov = Vec::new();
    let mut arms = Vec::new();
    let mut y = Vec::new();
    for (k, rec) in records.enumerate() {
        let fallback_line = k + 2;
        let rec = rec.map_err(|e| csv_error(e, fallback_line))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(malformed(line, &format!("expected {width} fields, found {}", rec.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            if cell.is_empty() {
                return Err(malformed(line, &format!("missing value in column {}", expected[c])));
            }
        }
        for c in 0..d {
            cov.push(real(&rec[c], line, &expected[c])?);
        }
        let flag = real(&rec[d], line, "d")?;
        let arm = if flag == 0.0 {
            Arm::Control
        } else if flag == 1.0 {
            Arm::Treated
        } else {
            return Err(malformed(line, "treatment must be 0 or 1"));
        };
        arms.push(arm);
        y.push(real(&rec[d + 1], line, "y")?);
    }
    Dataset::from_parts(d, cov, arms, y)
}

fn real(cell: &str, line: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(malformed(line, &format!("non-finite value '{cell}' in column {column}"))),
        Err(_) => Err(malformed(line, &format!("'{cell}' in column {column} is not a number"))),
    }
}

fn malformed(line: usize, message: &str) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    malformed(line, &e.to_string())
}

fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    File::create(path.as_ref()).map(BufWriter::new).map_err(|e| Error::io(&path, e))
}

pub fn write_csv_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(&path)?;
    write_csv_dataset_to(ds, &mut w).map_err(|e| Error::io(&path, e))
}

pub fn write_csv_dataset_to<W: Write>(ds: &Dataset, w: &mut W) -> std::io::Result<()> {
    let head: Vec<String> = (1..=ds.d()).map(|p| format!("x{p}")).collect();
    writeln!(w, "{},d,y", head.join(","))?;
    for (x, flag, y) in ds.rows() {
        let cells: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{},{flag},{}", cells.join(","), fmt_f64(y))?;
    }
    w.flush()
}

/// Pretty JSON that writes every float with 17 significant digits.
struct Formatter17 {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for Formatter17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        Formatter17 {
            inner: serde_json::ser::PrettyFormatter::new(),
        },
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = to_json_string(value)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub d: usize,
    pub n0: usize,
    pub n1: usize,
    /// SHA-256 of the stored values.
    pub fingerprint: String,
}

impl DatasetInfo {
    pub fn of(ds: &Dataset) -> Self {
        DatasetInfo {
            n: ds.n(),
            d: ds.d(),
            n0: ds.n0(),
            n1: ds.n1(),
            fingerprint: ds.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub direct: f64,
    pub reassembled: f64,
    pub abs_diff: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn of(est: &AteEstimate) -> Self {
        let c = &est.components;
        let scale = [
            1.0,
            est.tau_hat,
            c.tau_reg,
            c.treated_residual_term,
            c.control_residual_term,
            c.unnormalized_bias_term,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
        let reassembled = c.reassemble();
        IdentityCheck {
            direct: est.tau_hat,
            reassembled,
            abs_diff: (est.tau_hat - reassembled).abs(),
            tolerance: IDENTITY_TOL * scale,
        }
    }

    pub fn verify(&self) -> Result<()> {
        if self.abs_diff <= self.tolerance {
            Ok(())
        } else {
            Err(Error::Consistency {
                direct: self.direct,
                reassembled: self.reassembled,
                diff: self.abs_diff,
            })
        }
    }
}

/// An estimate with enough provenance to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub version: String,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub estimate: AteEstimate,
    pub identity: IdentityCheck,
    pub wall_time_seconds: f64,
}

impl EstimateReport {
    pub fn new(config: RunConfig, ds: &Dataset, estimate: AteEstimate, wall_time_seconds: f64) -> Self {
        EstimateReport {
            version: VERSION.into(),
            config,
            dataset: DatasetInfo::of(ds),
            identity: IdentityCheck::of(&estimate),
            estimate,
            wall_time_seconds,
        }
    }
}

/// Re-verifies the AIPW identity against the stored components, then writes
/// pretty JSON.
pub fn write_report(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    IdentityCheck::of(&report.estimate).verify()?;
    write_json(report, path)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EstimateReport> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `i,j,w` rows with 1-based unit indices, in row order.
pub fn write_weights_csv(sm: &SmoothingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(&path)?;
    write_weights_to(sm, &mut w).map_err(|e| Error::io(&path, e))
}

pub fn write_weights_to<W: Write>(sm: &SmoothingMatrix, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "i,j,w")?;
    for (i, j, v) in sm.triplets() {
        writeln!(w, "{},{},{}", i + 1, j + 1, fmt_f64(v))?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsReport {
    pub version: String,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub summary: WeightSummary,
}

/// Per-replication Monte Carlo rows; failed replications leave the numeric
/// cells empty and carry the error text.
pub fn write_rows_csv<'a>(rows: impl IntoIterator<Item = &'a McRow>, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let to_err = |e: csv::Error| Error::Malformed {
        line: 0,
        message: format!("writing rows: {e}"),
    };
    w.write_record(["n", "replication", "seed", "tau_hat", "sigma2_hat", "covered", "redraws", "error"])
        .map_err(to_err)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        w.write_record([
            r.n.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            opt(r.tau_hat),
            opt(r.sigma2_hat),
            r.covered.map(|c| (c as u8).to_string()).unwrap_or_default(),
            r.redraws.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_ate;
    use crate::outcome::AdjusterSpec;

    #[test]
    fn minimal_file() {
        let ds = parse_csv_dataset("x1,d,y\n0.2,1,3.0\n0.7,0,1.0\n".as_bytes()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.x(0), &[0.2]);
        assert_eq!(ds.arm(1), Arm::Control);
        assert_eq!(ds.y(0), 3.0);
    }

    #[test]
    fn bad_treatment_names_line() {
        let e = parse_csv_dataset("x1,d,y\n0.2,2,3.0\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("treatment must be 0 or 1 (line 2)"), "{e}");
    }

    #[test]
    fn rejects_missing_cells_and_bad_header() {
        let e = parse_csv_dataset("x1,d,y\n0.2,1,3\n0.5,,1\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(parse_csv_dataset("x2,d,y\n0.2,1,3\n".as_bytes()).is_err());
        assert!(parse_csv_dataset("x1,d,y\n0.2,1\n".as_bytes()).is_err());
        assert!(parse_csv_dataset("x1,d,y\nnan,1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = crate::load_dataset(vec![
            (vec![0.1 + 0.2, 1.0 / 3.0], 1, -1e-300),
            (vec![std::f64::consts::PI, 7.0], 0, 123456789.123456789),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv_dataset_to(&ds, &mut buf).unwrap();
        let back = parse_csv_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn report_round_trip() {
        let ds = crate::load_dataset((0..30).map(|i| {
            let x = i as f64 / 29.0;
            (vec![x], (i % 2) as u8, x * x + 0.1 * (i % 3) as f64)
        }))
        .unwrap();
        let cfg = crate::parse_config(r#"{"smoother":{"type":"wnn","M":3}}"#).unwrap();
        let est = estimate_ate(&ds, &cfg.smoother.clone().unwrap(), &AdjusterSpec::default(), 0)
            .unwrap()
            .0;
        let rep = EstimateReport::new(cfg, &ds, est, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_report(&rep, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), rep);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"tau_hat\": "));
    }

    #[test]
    fn tampered_report_is_refused() {
        let ds = crate::load_dataset(vec![(vec![0.2], 1, 3.0), (vec![0.7], 0, 1.0)]).unwrap();
        let sm = SmoothingMatrix::from_rows(&ds, vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![false; 2]).unwrap();
        let mut est = crate::estimate_ate_direct(&ds, &sm, &crate::zero_adjuster()).unwrap();
        est.tau_hat += 1e-6;
        let rep = EstimateReport::new(crate::parse_config(r#"{"smoother":{"type":"wnn"}}"#).unwrap(), &ds, est, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let e = write_report(&rep, dir.path().join("r.json")).unwrap_err();
        assert_eq!(e.kind(), crate::ErrorKind::Consistency);
    }

    #[test]
    fn seventeen_digits() {
        let s = to_json_string(&vec![0.1f64, 1.0 / 3.0]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0]);
    }
}
