//! Field-scan CSV files and fit reports.
//!
//! A scan file has the header `distance_m,bz_t`: in-plane distance from the
//! electromagnet axis (m) and vertical flux density (T), one reading per row.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::em::{FieldFit, FieldSample, MU0};

pub const SCAN_HEADER: [&str; 2] = ["distance_m", "bz_t"];

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("scan file is empty")]
    Empty,
    #[error("expected header `distance_m,bz_t`, found `{0}`")]
    Header(String),
    #[error("row {row}, column {column}: {detail}")]
    Field {
        /// 1-based data row, not counting the header.
        row: usize,
        column: &'static str,
        detail: String,
    },
    #[error("row {row}: expected 2 columns, found {found}")]
    Width { row: usize, found: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn read_scan<R: Read>(input: R) -> Result<Vec<FieldSample>, ScanError> {
    let mut r = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header.get(0) == Some("")) {
        return Err(ScanError::Empty);
    }
    if header.iter().ne(SCAN_HEADER) {
        return Err(ScanError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != 2 {
            return Err(ScanError::Width { row, found: rec.len() });
        }
        let mut v = [0.0f64; 2];
        for (j, column) in SCAN_HEADER.into_iter().enumerate() {
            let raw = &rec[j];
            v[j] = raw.parse().map_err(|e: std::num::ParseFloatError| ScanError::Field {
                row,
                column,
                detail: format!("`{raw}`: {e}"),
            })?;
            if !v[j].is_finite() {
                return Err(ScanError::Field {
                    row,
                    column,
                    detail: format!("`{raw}` is not finite"),
                });
            }
        }
        samples.push(FieldSample {
            distance: v[0],
            bz: v[1],
        });
    }
    if samples.is_empty() {
        return Err(ScanError::Empty);
    }
    Ok(samples)
}

pub fn write_scan<W: Write>(samples: &[FieldSample], out: W) -> Result<(), ScanError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCAN_HEADER)?;
    for s in samples {
        w.write_record([s.distance.to_string(), s.bz.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Fit result with the constants converted to model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub c1: f64,
    pub c2: f64,
    /// Vertical dipole separation `h = C2` (cm).
    pub h_cm: f64,
    /// Full-power electromagnet dipole `|C1| 4 pi / mu0` (A m^2).
    pub m_m: f64,
    pub polarity: f64,
    pub rms_residual: f64,
    pub iterations: usize,
    pub samples: usize,
}

impl FitReport {
    pub fn new(fit: &FieldFit, samples: usize) -> Self {
        FitReport {
            c1: fit.c1,
            c2: fit.c2,
            h_cm: fit.separation() * 100.0,
            m_m: fit.electromagnet_dipole(MU0),
            polarity: fit.polarity(),
            rms_residual: fit.rms_residual,
            iterations: fit.iterations,
            samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{fit_dipole, synthetic_scan};

    #[test]
    fn round_trip_and_fit() {
        let scan = synthetic_scan(-1.276e-7, 2.713e-2, 0.06, 31);
        let mut buf = Vec::new();
        write_scan(&scan, &mut buf).unwrap();
        let back = read_scan(buf.as_slice()).unwrap();
        assert_eq!(back, scan);
        let report = FitReport::new(&fit_dipole(&back).unwrap(), back.len());
        assert_eq!(format!("{:.2}", report.h_cm), "2.71");
        assert!((report.m_m - 1.276).abs() < 1e-3);
        assert_eq!(report.polarity, -1.0);
    }

    #[test]
    fn errors_name_row_and_column() {
        assert!(matches!(read_scan("".as_bytes()), Err(ScanError::Empty)));
        assert!(matches!(read_scan("distance_m,bz_t\n".as_bytes()), Err(ScanError::Empty)));
        assert!(matches!(read_scan("d,b\n1,2\n".as_bytes()), Err(ScanError::Header(_))));
        let err = read_scan("distance_m,bz_t\n0.0,1e-3\n0.01,abc\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "row 2, column bz_t: `abc`: invalid float literal");
        assert!(matches!(
            read_scan("distance_m,bz_t\n0.0\n".as_bytes()),
            Err(ScanError::Width { row: 1, found: 1 })
        ));
    }
}
