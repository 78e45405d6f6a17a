//! File formats.
//!
//! * Trajectory CSV: header `t,u_0..,d_0..,x_0..,y_0..` (absent groups are
//!   omitted), one row per step, plus a JSON sidecar next to it (same stem,
//!   `.json`) holding dimensions and metadata.
//! * Observer realization and existence report: JSON, matrices row-major.
//! * Scenario and estimate time series: CSV.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! gives bit-identical values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Tolerance};
use crate::microgrid::ScenarioResult;
use crate::trajectory::{Metadata, Trajectory};
use crate::uio::{ExistenceReport, RealizationDims, UioRealization};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidData(format!("line {line}: cannot parse number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::InvalidData(format!("line {line}: non-finite value {s:?}")));
    }
    Ok(v)
}

/// `foo.csv` -> `foo.json`
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub md: usize,
    pub len: usize,
    pub has_d: bool,
    #[serde(flatten)]
    pub meta: Metadata,
    pub digest: String,
}

fn group_header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}_{i}"))
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = traj.offline_unknown_input();
    let mut header = vec!["t".to_string()];
    header.extend(group_header("u", traj.m()));
    if d.is_some() {
        header.extend(group_header("d", traj.md()));
    }
    header.extend(group_header("x", traj.n()));
    header.extend(group_header("y", traj.p()));
    w.write_record(&header)?;
    for t in 0..traj.len() {
        let mut row = vec![t.to_string()];
        let mut push = |m: &Mat| row.extend(m.column(t).iter().map(|&v| fmt_f64(v)));
        push(traj.u());
        if let Some(d) = d {
            push(d);
        }
        push(traj.x());
        push(traj.y());
        w.write_record(&row)?;
    }
    w.flush()?;

    let sidecar = TrajectorySidecar {
        n: traj.n(),
        m: traj.m(),
        p: traj.p(),
        md: traj.md(),
        len: traj.len(),
        has_d: d.is_some(),
        meta: traj.meta.clone(),
        digest: traj.digest(),
    };
    write_json(&sidecar, &sidecar_path(path))
}

/// Column indices of each signal group in a header.
#[derive(Debug, Default)]
struct Columns {
    u: Vec<usize>,
    d: Vec<usize>,
    x: Vec<usize>,
    y: Vec<usize>,
}

fn parse_header(header: &csv::StringRecord) -> Result<Columns> {
    let mut cols = Columns::default();
    for (idx, name) in header.iter().enumerate() {
        let name = name.trim();
        if name == "t" {
            continue;
        }
        let (prefix, num) = name
            .split_once('_')
            .ok_or_else(|| Error::InvalidData(format!("unexpected column {name:?}")))?;
        let group = match prefix {
            "u" => &mut cols.u,
            "d" => &mut cols.d,
            "x" => &mut cols.x,
            "y" => &mut cols.y,
            _ => return Err(Error::InvalidData(format!("unexpected column {name:?}"))),
        };
        let i: usize = num
            .parse()
            .map_err(|_| Error::InvalidData(format!("bad column index in {name:?}")))?;
        if i != group.len() {
            return Err(Error::InvalidData(format!("column {name:?} out of order")));
        }
        group.push(idx);
    }
    Ok(cols)
}

struct RawSignals {
    cols: Columns,
    rows: Vec<Vec<f64>>,
}

impl RawSignals {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let cols = parse_header(r.headers()?)?;
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let vals = rec
                .iter()
                .map(|s| parse_f64(s, line))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        Ok(Self { cols, rows })
    }

    fn signal(&self, idx: &[usize]) -> Mat {
        Mat::from_fn(idx.len(), self.rows.len(), |i, t| self.rows[t][idx[i]])
    }
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let raw = RawSignals::read(path)?;
    let sidecar: Option<TrajectorySidecar> = {
        let sp = sidecar_path(path);
        if sp.exists() {
            Some(read_json(&sp)?)
        } else {
            None
        }
    };
    if raw.cols.x.is_empty() {
        return Err(Error::InvalidData("trajectory file has no state columns".into()));
    }
    let u = raw.signal(&raw.cols.u);
    let x = raw.signal(&raw.cols.x);
    let y = raw.signal(&raw.cols.y);
    let traj = if raw.cols.d.is_empty() {
        let md = sidecar.as_ref().map_or(0, |s| s.md);
        Trajectory::with_declared_md(u, x, y, md)?
    } else {
        Trajectory::new(u, Some(raw.signal(&raw.cols.d)), x, y)?
    };
    match sidecar {
        Some(s) => {
            if (s.n, s.m, s.p, s.len) != (traj.n(), traj.m(), traj.p(), traj.len()) {
                return Err(Error::InvalidData(format!(
                    "sidecar dimensions (n={}, m={}, p={}, len={}) disagree with CSV",
                    s.n, s.m, s.p, s.len
                )));
            }
            if s.digest != traj.digest() {
                return Err(Error::InvalidData(format!(
                    "{} does not match the digest recorded in its sidecar",
                    path.display()
                )));
            }
            Ok(traj.with_meta(s.meta))
        }
        None => Ok(traj),
    }
}

/// Recent data for the estimator: known inputs and outputs, plus the true
/// state when the file carries it. Unknown-input columns are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineData {
    pub u: Mat,
    pub y: Mat,
    pub x: Option<Mat>,
}

impl OnlineData {
    pub fn v(&self) -> Mat {
        crate::trajectory::stack_signals(&self.u, &self.y)
    }
    pub fn len(&self) -> usize {
        self.y.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_online(path: &Path) -> Result<OnlineData> {
    let raw = RawSignals::read(path)?;
    let x = (!raw.cols.x.is_empty()).then(|| raw.signal(&raw.cols.x));
    Ok(OnlineData {
        u: raw.signal(&raw.cols.u),
        y: raw.signal(&raw.cols.y),
        x,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl From<&Mat> for MatrixJson {
    fn from(m: &Mat) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixJson {
    pub fn to_mat(&self) -> Result<Mat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidData(format!(
                "matrix declares {}x{} but holds {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(Mat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationFile {
    pub dims: RealizationDims,
    pub a_uio: MatrixJson,
    pub b_uio: MatrixJson,
    pub d_uio: MatrixJson,
    pub gain: MatrixJson,
    pub tolerance: Tolerance,
    pub source_digest: String,
    pub report: Option<ExistenceReport>,
}

impl RealizationFile {
    pub fn new(r: &UioRealization, report: Option<&ExistenceReport>) -> Self {
        Self {
            dims: r.dims,
            a_uio: (&r.a_uio).into(),
            b_uio: (&r.b_uio).into(),
            d_uio: (&r.d_uio).into(),
            gain: (&r.gain).into(),
            tolerance: r.tolerance,
            source_digest: r.source_digest.clone(),
            report: report.cloned(),
        }
    }

    pub fn realization(&self) -> Result<UioRealization> {
        let (n, q) = (self.dims.n, self.dims.v_dim());
        let r = UioRealization {
            a_uio: self.a_uio.to_mat()?,
            b_uio: self.b_uio.to_mat()?,
            d_uio: self.d_uio.to_mat()?,
            gain: self.gain.to_mat()?,
            dims: self.dims,
            tolerance: self.tolerance,
            source_digest: self.source_digest.clone(),
        };
        let shapes = [
            ("a_uio", r.a_uio.shape(), (n, n)),
            ("b_uio", r.b_uio.shape(), (n, q)),
            ("d_uio", r.d_uio.shape(), (n, q)),
            ("gain", r.gain.shape(), (n, 2 * q + n)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        Ok(r)
    }
}

pub fn write_realization(r: &UioRealization, report: Option<&ExistenceReport>, path: &Path) -> Result<()> {
    write_json(&RealizationFile::new(r, report), path)
}

pub fn read_realization(path: &Path) -> Result<UioRealization> {
    read_json::<RealizationFile>(path)?.realization()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// `t, x_0.., xhat_0.., r_0.., attacked`
pub fn write_scenario_csv(res: &ScenarioResult, path: &Path) -> Result<()> {
    let n = res.estimates.nrows();
    let p = res.residuals.nrows();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(group_header("x", n));
    header.extend(group_header("xhat", n));
    header.extend(group_header("r", p));
    header.push("attacked".into());
    w.write_record(&header)?;
    for t in 0..res.steps() {
        let mut row = vec![t.to_string()];
        row.extend(res.truth.x().column(t).iter().map(|&v| fmt_f64(v)));
        row.extend(res.estimates.column(t).iter().map(|&v| fmt_f64(v)));
        row.extend(res.residuals.column(t).iter().map(|&v| fmt_f64(v)));
        row.push(if res.attacked(t) { "1" } else { "0" }.into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, xhat_0..` and, when the true state is known, `e_0..` with `e = x - xhat`.
pub fn write_estimates_csv(estimates: &Mat, truth: Option<&Mat>, path: &Path) -> Result<()> {
    let n = estimates.nrows();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(group_header("xhat", n));
    if truth.is_some() {
        header.extend(group_header("e", n));
    }
    w.write_record(&header)?;
    for t in 0..estimates.ncols() {
        let mut row = vec![t.to_string()];
        row.extend(estimates.column(t).iter().map(|&v| fmt_f64(v)));
        if let Some(x) = truth {
            row.extend((x.column(t) - estimates.column(t)).iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read back the `xhat_*` columns of an estimates file.
pub fn read_estimates_csv(path: &Path) -> Result<Mat> {
    let mut r = csv::Reader::from_path(path)?;
    let idx: Vec<usize> = r
        .headers()?
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("xhat_"))
        .map(|(i, _)| i)
        .collect();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = idx
            .iter()
            .map(|&i| parse_f64(rec.get(i).unwrap_or(""), k + 2))
            .collect::<Result<Vec<_>>>()?;
        cols.push(DVector::from_vec(vals));
    }
    if cols.is_empty() {
        return Ok(Mat::zeros(idx.len(), 0));
    }
    Ok(Mat::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Tolerance;
    use crate::lti::{random_experiment, random_minimal_system, rng_from_seed};
    use crate::uio::synthesize_from_trajectory;
    use proptest::prelude::*;

    fn sample(seed: u64) -> Trajectory {
        let mut rng = rng_from_seed(seed);
        let sys = random_minimal_system(3, 1, 2, 1, &mut rng, &Tolerance::default()).unwrap();
        random_experiment(&sys, 25, seed).unwrap()
    }

    #[test]
    fn trajectory_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        let t = sample(3);
        write_trajectory(&t, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.digest(), t.digest());
        let side: TrajectorySidecar = read_json(&sidecar_path(&path)).unwrap();
        assert_eq!(side.meta.seed, Some(3));
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("t,u_0,d_0,x_0,x_1,x_2,y_0,y_1\n"));
    }

    #[test]
    fn absent_groups_are_omitted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("online.csv");
        let t = sample(4);
        let blind = Trajectory::with_declared_md(Mat::zeros(0, t.len()), t.x().clone(), t.y().clone(), 1).unwrap();
        write_trajectory(&blind, &path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("t,x_0,x_1,x_2,y_0,y_1\n"));
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.md(), 1);
        assert!(back.offline_unknown_input().is_none());
    }

    #[test]
    fn online_reader_skips_unknown_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let t = sample(5);
        write_trajectory(&t, &path).unwrap();
        let online = read_online(&path).unwrap();
        assert_eq!(online.v(), t.v());
        assert_eq!(online.x.as_ref(), Some(t.x()));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x_0,q_0\n0,1,2\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::InvalidData(_))));
        std::fs::write(&path, "t,x_0,y_0\n0,1,nan\n1,2,3\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::InvalidData(_))));
        std::fs::write(&path, "t,x_1,y_0\n0,1,2\n1,2,3\n").unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn realization_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("uio.json");
        let (r, report) = synthesize_from_trajectory(&sample(6), &Tolerance::default()).unwrap();
        write_realization(&r, Some(&report), &path).unwrap();
        assert_eq!(read_realization(&path).unwrap(), r);
        let file: RealizationFile = read_json(&path).unwrap();
        assert_eq!(file.report.unwrap(), report);
    }

    #[test]
    fn matrix_json_is_row_major() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&m);
        assert_eq!(j.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(j.to_mat().unwrap(), m);
        let bad = MatrixJson { rows: 2, cols: 2, data: vec![1.0] };
        assert!(bad.to_mat().is_err());
    }

    proptest! {
        #[test]
        fn float_text_roundtrip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            prop_assert_eq!(parse_f64(&fmt_f64(v), 1).unwrap().to_bits(), v.to_bits());
        }
    }
}
