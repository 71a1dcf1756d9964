//! Session traces and their CSV / JSON-lines forms.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::mpcc::CostTerms;

pub const CSV_HEADER: [&str; 17] = [
    "t", "pen_x", "pen_y", "est_x", "est_y", "mag_x", "mag_y", "alpha", "theta", "s_x", "s_y",
    "fa_x", "fa_y", "fth_x", "fth_y", "cost", "solve_ms",
];

/// One control tick. Positions in m, forces in N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub pen: [f64; 2],
    pub estimate: [f64; 2],
    pub magnet: [f64; 2],
    pub alpha: f64,
    pub theta: f64,
    pub setpoint: [f64; 2],
    pub force: [f64; 2],
    pub desired_force: [f64; 2],
    pub cost: f64,
    #[serde(default)]
    pub terms: CostTerms,
    pub solve_ms: f64,
}

impl TraceRow {
    pub fn pen(&self) -> Vec2 {
        Vec2::new(self.pen[0], self.pen[1])
    }

    pub fn magnet(&self) -> Vec2 {
        Vec2::new(self.magnet[0], self.magnet[1])
    }

    pub fn setpoint(&self) -> Vec2 {
        Vec2::new(self.setpoint[0], self.setpoint[1])
    }

    fn csv_fields(&self) -> [f64; 17] {
        [
            self.t,
            self.pen[0],
            self.pen[1],
            self.estimate[0],
            self.estimate[1],
            self.magnet[0],
            self.magnet[1],
            self.alpha,
            self.theta,
            self.setpoint[0],
            self.setpoint[1],
            self.force[0],
            self.force[1],
            self.desired_force[0],
            self.desired_force[1],
            self.cost,
            self.solve_ms,
        ]
    }

    fn from_csv_fields(f: &[f64; 17]) -> Self {
        TraceRow {
            t: f[0],
            pen: [f[1], f[2]],
            estimate: [f[3], f[4]],
            magnet: [f[5], f[6]],
            alpha: f[7],
            theta: f[8],
            setpoint: [f[9], f[10]],
            force: [f[11], f[12]],
            desired_force: [f[13], f[14]],
            cost: f[15],
            terms: CostTerms::default(),
            solve_ms: f[16],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unexpected csv header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}, column `{column}`: {detail}")]
    Field {
        row: usize,
        column: &'static str,
        detail: String,
    },
    #[error("time must strictly increase (row {0})")]
    NonMonotonicTime(usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionTrace {
    pub rows: Vec<TraceRow>,
}

impl SessionTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks that `t` strictly increases.
    pub fn validate(&self) -> Result<(), TraceError> {
        for (i, w) in self.rows.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(TraceError::NonMonotonicTime(i + 1));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(row.csv_fields().iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, TraceError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(TraceError::Header(header));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut f = [0.0; 17];
            for (j, name) in CSV_HEADER.iter().enumerate() {
                let raw = rec.get(j).unwrap_or("");
                f[j] = raw.parse().map_err(|e: std::num::ParseFloatError| TraceError::Field {
                    row: i + 1,
                    column: name,
                    detail: e.to_string(),
                })?;
            }
            rows.push(TraceRow::from_csv_fields(&f));
        }
        Ok(SessionTrace { rows })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for row in &self.rows {
            serde_json::to_writer(&mut out, row).map_err(|e| TraceError::Json { line: 0, source: e })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(&line).map_err(|e| TraceError::Json {
                line: i + 1,
                source: e,
            })?);
        }
        Ok(SessionTrace { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> TraceRow {
        TraceRow {
            t,
            pen: [0.1, 0.2],
            estimate: [0.1, 0.2000001],
            magnet: [0.11, 0.19],
            alpha: 0.25,
            theta: 0.03,
            setpoint: [0.12, 0.2],
            force: [0.01, -0.02],
            desired_force: [0.03, 0.0],
            cost: -0.3,
            terms: CostTerms {
                lag: 1.0,
                ..Default::default()
            },
            solve_ms: 0.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let trace = SessionTrace {
            rows: vec![row(0.0), row(0.01)],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,pen_x,pen_y,est_x,est_y,mag_x,mag_y,alpha,theta,s_x,s_y,fa_x,fa_y,fth_x,fth_y,cost,solve_ms\n"));
        let back = SessionTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows[1].pen, trace.rows[1].pen);
        assert_eq!(back.rows[0].cost, -0.3);
    }

    #[test]
    fn jsonl_round_trip_keeps_terms() {
        let trace = SessionTrace {
            rows: vec![row(0.0), row(0.01)],
        };
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let back = SessionTrace::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn rejects_bad_csv() {
        let bad = "t,pen_x\n0,1\n";
        assert!(matches!(SessionTrace::read_csv(bad.as_bytes()), Err(TraceError::Header(_))));
        let mut buf = Vec::new();
        SessionTrace { rows: vec![row(0.0)] }.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("0.25", "abc");
        match SessionTrace::read_csv(text.as_bytes()) {
            Err(TraceError::Field { row, column, .. }) => assert_eq!((row, column), (1, "alpha")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn time_must_increase() {
        let t = SessionTrace {
            rows: vec![row(0.0), row(0.0)],
        };
        assert!(matches!(t.validate(), Err(TraceError::NonMonotonicTime(1))));
        assert!(SessionTrace::default().validate().is_ok());
    }
}
