//! Evaluation reports: fixed-column CSV rows, aggregate summary, persistence.

use std::path::Path;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "meas_id,mean_err,std_err,swd,psnr,residual,nfe,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub meas_id: u64,
    pub mean_err: f64,
    pub std_err: f64,
    pub swd: f64,
    pub psnr: f64,
    pub residual: f64,
    pub nfe: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// f64 that serializes non-finite values as the strings "inf" / "-inf" so
/// the PSNR sentinel survives JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsonNum(pub f64);

impl Serialize for JsonNum {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub mean_err: f64,
    pub std_err: f64,
    pub swd: f64,
    pub psnr: f64,
    pub residual: f64,
    pub nfe: f64,
    pub wall_ms: f64,
}

impl Serialize for ColumnStats {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ColumnStats", 7)?;
        st.serialize_field("mean_err", &JsonNum(self.mean_err))?;
        st.serialize_field("std_err", &JsonNum(self.std_err))?;
        st.serialize_field("swd", &JsonNum(self.swd))?;
        st.serialize_field("psnr", &JsonNum(self.psnr))?;
        st.serialize_field("residual", &JsonNum(self.residual))?;
        st.serialize_field("nfe", &JsonNum(self.nfe))?;
        st.serialize_field("wall_ms", &JsonNum(self.wall_ms))?;
        st.end()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub rows: usize,
    pub mean: ColumnStats,
    pub std: ColumnStats,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl EvalRow {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.meas_id,
            fmt_f64(self.mean_err),
            fmt_f64(self.std_err),
            fmt_f64(self.swd),
            fmt_f64(self.psnr),
            fmt_f64(self.residual),
            self.nfe,
            fmt_f64(self.wall_ms),
        )
    }

    fn columns(&self) -> [f64; 7] {
        [
            self.mean_err,
            self.std_err,
            self.swd,
            self.psnr,
            self.residual,
            self.nfe as f64,
            self.wall_ms,
        ]
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> Summary {
        let n = self.rows.len();
        let mut mean = [0.0f64; 7];
        for row in &self.rows {
            for (m, c) in mean.iter_mut().zip(row.columns()) {
                *m += c;
            }
        }
        if n > 0 {
            for m in &mut mean {
                *m /= n as f64;
            }
        }
        let mut var = [0.0f64; 7];
        if n > 1 {
            for row in &self.rows {
                for (v, (m, c)) in var.iter_mut().zip(mean.iter().zip(row.columns())) {
                    let d = c - m;
                    *v += d * d;
                }
            }
            for v in &mut var {
                *v = (*v / (n as f64 - 1.0)).sqrt();
            }
        }
        let pack = |a: [f64; 7]| ColumnStats {
            mean_err: a[0],
            std_err: a[1],
            swd: a[2],
            psnr: a[3],
            residual: a[4],
            nfe: a[5],
            wall_ms: a[6],
        };
        Summary {
            rows: n,
            mean: pack(mean),
            std: pack(var),
        }
    }
}

fn parse_f64(field: &str) -> Result<f64> {
    match field {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => field
            .parse()
            .map_err(|_| Error::Parameter(format!("bad float field {field:?}"))),
    }
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join("report.csv");
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        other => {
            return Err(Error::Parameter(format!(
                "unexpected report header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parameter(format!("bad report row: {line:?}")));
        }
        rows.push(EvalRow {
            meas_id: f[0]
                .parse()
                .map_err(|_| Error::Parameter(format!("bad meas_id {:?}", f[0])))?,
            mean_err: parse_f64(f[1])?,
            std_err: parse_f64(f[2])?,
            swd: parse_f64(f[3])?,
            psnr: parse_f64(f[4])?,
            residual: parse_f64(f[5])?,
            nfe: f[6]
                .parse()
                .map_err(|_| Error::Parameter(format!("bad nfe {:?}", f[6])))?,
            wall_ms: parse_f64(f[7])?,
        });
    }
    Ok(EvalReport { rows })
}

/// Writes `report.csv`, `summary.json` and a `config.json` echo of the
/// configuration that produced the report. Byte output is a pure function of
/// the inputs.
pub fn emit_report<C: Serialize>(report: &EvalReport, dir: &Path, config_echo: &C) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write("report.csv", report.to_csv())?;
    let mut summary = serde_json::to_string_pretty(&report.summary())?;
    summary.push('\n');
    write("summary.json", summary)?;
    let mut echo = serde_json::to_string_pretty(config_echo)?;
    echo.push('\n');
    write("config.json", echo)?;
    Ok(())
}
