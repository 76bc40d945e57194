use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::filter::FilterCase;
use crate::error::{Error, Result};

pub const PREDICTION_HEADER: &str = "video_id,frame_idx,x_px,y_px,confidence,fit_converged,filter_case";

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub video_id: String,
    pub frame_idx: usize,
    pub x_px: f64,
    pub y_px: f64,
    pub confidence: f64,
    pub fit_converged: bool,
    pub filter_case: FilterCase,
}

pub fn write_predictions<W: Write>(w: W, rows: &[PredictionRow]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let fail = |e: csv::Error| Error::InvalidInput(format!("writing predictions: {e}"));
    writer.write_record(PREDICTION_HEADER.split(',')).map_err(fail)?;
    for row in rows {
        writer.serialize(row).map_err(fail)?;
    }
    writer.flush().map_err(|e| fail(e.into()))
}

/// Reads a predictions file; row numbers in errors count the header as 1.
pub fn read_predictions<R: Read>(r: R) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = reader
        .headers()
        .map_err(|e| Error::LabelRow {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != PREDICTION_HEADER {
        return Err(Error::LabelRow {
            row: 1,
            message: format!("expected header `{PREDICTION_HEADER}`, found `{header}`"),
        });
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::LabelRow {
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![
            PredictionRow {
                video_id: "v1".into(),
                frame_idx: 5,
                x_px: 100.0,
                y_px: 60.0,
                confidence: 0.875,
                fit_converged: true,
                filter_case: FilterCase::None,
            },
            PredictionRow {
                video_id: "v1".into(),
                frame_idx: 10,
                x_px: 0.0,
                y_px: 3.0,
                confidence: 0.1,
                fit_converged: false,
                filter_case: FilterCase::Border,
            },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(PREDICTION_HEADER));
        assert!(text.contains("v1,10,0.0,3.0,0.1,false,border"), "{text}");
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_predictions(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{PREDICTION_HEADER}\n"));
    }
}
