//! Serialized performance records and roofline tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use mrhs_core::field::Layout;
use mrhs_core::perf::{roofline_rows, PerfRecord, RooflineInputs, RooflineRow, ROOFLINE_COLUMNS};

use crate::error::{Error, Result};

/// Serde mirror of [`PerfRecord`] with the layout as its number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRecordJson {
    pub b: usize,
    pub layout: u8,
    pub sites: usize,
    pub seconds: f64,
    pub flops: f64,
    pub bytes: f64,
    pub gflops: f64,
    pub ai: f64,
}

impl From<&PerfRecord> for PerfRecordJson {
    fn from(r: &PerfRecord) -> Self {
        Self {
            b: r.b,
            layout: r.layout.number(),
            sites: r.sites,
            seconds: r.seconds,
            flops: r.flops,
            bytes: r.bytes,
            gflops: r.gflops,
            ai: r.ai,
        }
    }
}

impl TryFrom<&PerfRecordJson> for PerfRecord {
    type Error = Error;

    fn try_from(r: &PerfRecordJson) -> Result<Self> {
        if r.b == 0 {
            return Err(Error::Config("perf record with b = 0".into()));
        }
        Ok(PerfRecord {
            b: r.b,
            layout: Layout::from_number(r.layout)?,
            sites: r.sites,
            seconds: r.seconds,
            flops: r.flops,
            bytes: r.bytes,
            gflops: r.gflops,
            ai: r.ai,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineRowJson {
    pub b: usize,
    pub layout: u8,
    pub ai: f64,
    pub gflops: f64,
    pub theor_gflops: f64,
    pub arch_eff: f64,
    pub model_violation: bool,
}

impl From<&RooflineRow> for RooflineRowJson {
    fn from(r: &RooflineRow) -> Self {
        Self {
            b: r.b,
            layout: r.layout.number(),
            ai: r.ai,
            gflops: r.gflops,
            theor_gflops: r.theor_gflops,
            arch_eff: r.arch_eff,
            model_violation: r.violates_model(),
        }
    }
}

pub fn parse_runs(json: &str) -> Result<Vec<PerfRecord>> {
    let recs: Vec<PerfRecordJson> = serde_json::from_str(json).map_err(|e| Error::Config(format!("runs: {e}")))?;
    recs.iter().map(PerfRecord::try_from).collect()
}

pub fn runs_json(runs: &[PerfRecord]) -> Result<String> {
    let recs: Vec<PerfRecordJson> = runs.iter().map(PerfRecordJson::from).collect();
    Ok(serde_json::to_string_pretty(&recs)?)
}

pub fn roofline(runs: &[PerfRecord], inputs: &RooflineInputs) -> Vec<RooflineRow> {
    roofline_rows(runs, inputs)
}

/// Header line plus one line per row.
pub fn roofline_csv(rows: &[RooflineRow]) -> String {
    let mut s = ROOFLINE_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.b,
            r.layout.number(),
            r.ai,
            r.gflops,
            r.theor_gflops,
            r.arch_eff
        )
        .expect("string write");
    }
    s
}

pub fn roofline_json(rows: &[RooflineRow]) -> Result<String> {
    let rows: Vec<RooflineRowJson> = rows.iter().map(RooflineRowJson::from).collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// `iter,rhs,relnorm` lines of a residual history.
pub fn history_csv(history: &[Vec<f64>]) -> String {
    let mut s = String::from("iter,rhs,relnorm\n");
    for (n, row) in history.iter().enumerate() {
        for (i, r) in row.iter().enumerate() {
            writeln!(s, "{},{i},{r:e}", n + 1).expect("string write");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrhs_core::perf::theoretical_perf;

    fn inputs() -> RooflineInputs {
        RooflineInputs {
            stream_triad_bw: 155e9,
            stream_copy_bw: 140e9,
        }
    }

    #[test]
    fn empty_table_has_header() {
        assert_eq!(roofline_csv(&roofline(&[], &inputs())), "b,layout,ai,gflops,theor_gflops,arch_eff\n");
        assert_eq!(roofline_json(&[]).unwrap().trim(), "[]");
    }

    #[test]
    fn half_of_theoretical() {
        let mut r = PerfRecord::from_timing(1, Layout::ColumnMajor, 256, 1.0);
        r.gflops = theoretical_perf(155e9, 1) * 1e-9 / 2.0;
        let rows = roofline(&[r], &inputs());
        assert!((rows[0].arch_eff - 0.5).abs() < 1e-15);
        let csv = roofline_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,1,"));
    }

    #[test]
    fn sweep_cardinality_and_violation_flag() {
        let runs: Vec<PerfRecord> = [1, 2, 4, 8, 16]
            .iter()
            .flat_map(|&b| {
                [Layout::ColumnMajor, Layout::RowMajor].map(|l| PerfRecord::from_timing(b, l, 256, 1e-6))
            })
            .collect();
        let rows = roofline(&runs, &inputs());
        assert_eq!(rows.len(), 10);
        let json = roofline_json(&rows).unwrap();
        assert!(json.contains("\"model_violation\": true"));
    }

    #[test]
    fn runs_roundtrip() {
        let runs = vec![
            PerfRecord::from_timing(1, Layout::ColumnMajor, 256, 0.1),
            PerfRecord::from_timing(8, Layout::RowMajor, 256, 0.2),
        ];
        assert_eq!(parse_runs(&runs_json(&runs).unwrap()).unwrap(), runs);
        assert!(parse_runs("[{\"b\":1}]").is_err());
    }

    #[test]
    fn history_lines() {
        let csv = history_csv(&[vec![0.5, 0.25], vec![0.1, 0.01]]);
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().nth(3).unwrap(), "2,0,1e-1");
    }
}
