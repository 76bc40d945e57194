use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LABEL_HEIGHT, LABEL_WIDTH};
use crate::error::{Error, Result};
use crate::frame::Point;

pub const LABEL_HEADER: &str = "video_id,frame_idx,annotator_id,x_px,y_px";

/// One annotator's point label for one frame. `position == None` records that
/// the junction is not visible in the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub video_id: String,
    pub frame_idx: usize,
    pub annotator_id: String,
    pub position: Option<Point>,
}

impl LabelRecord {
    fn sort_key(&self) -> (&str, usize, &str) {
        (&self.video_id, self.frame_idx, &self.annotator_id)
    }
}

fn check_field(value: &str, what: &str, row: usize) -> Result<()> {
    if value.is_empty() || value.contains([',', '"', '\n', '\r']) {
        return Err(Error::LabelRow {
            row,
            message: format!("invalid {what} `{value}`"),
        });
    }
    Ok(())
}

fn parse_coord(cell: &str, bound: f64, axis: &str, row: usize) -> Result<f64> {
    let fail = |message: String| Error::LabelRow { row, message };
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| fail(format!("{axis} `{cell}` is not a number")))?;
    if !(v.is_finite() && (0.0..bound).contains(&v)) {
        return Err(fail(format!("{axis} = {v} outside [0, {bound})")));
    }
    Ok(v)
}

/// Parses label CSV text. Row numbers in errors count the header as row 1.
pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::LabelRow {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != LABEL_HEADER {
        return Err(Error::LabelRow {
            row: 1,
            message: format!("expected header `{LABEL_HEADER}`, found `{header}`"),
        });
    }

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::LabelRow {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != 5 {
            return Err(Error::LabelRow {
                row,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let video_id = rec[0].to_string();
        let annotator_id = rec[2].to_string();
        check_field(&video_id, "video_id", row)?;
        check_field(&annotator_id, "annotator_id", row)?;
        let frame_idx = rec[1].trim().parse().map_err(|_| Error::LabelRow {
            row,
            message: format!("frame_idx `{}` is not a non-negative integer", &rec[1]),
        })?;
        let position = match (rec[3].trim(), rec[4].trim()) {
            ("", "") => None,
            ("", _) | (_, "") => {
                return Err(Error::LabelRow {
                    row,
                    message: "x_px and y_px must both be set or both be empty".into(),
                })
            }
            (x, y) => Some(Point::new(
                parse_coord(x, LABEL_WIDTH, "x_px", row)?,
                parse_coord(y, LABEL_HEIGHT, "y_px", row)?,
            )),
        };
        out.push(LabelRecord {
            video_id,
            frame_idx,
            annotator_id,
            position,
        });
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Writes records in the canonical form read by [`parse_labels`]: LF line
/// endings and shortest round-trip decimals.
pub fn write_labels_to<W: Write>(mut w: W, records: &[LabelRecord]) -> std::io::Result<()> {
    writeln!(w, "{LABEL_HEADER}")?;
    for r in records {
        match r.position {
            Some(p) => writeln!(
                w,
                "{},{},{},{:?},{:?}",
                r.video_id, r.frame_idx, r.annotator_id, p.x, p.y
            )?,
            None => writeln!(w, "{},{},{},,", r.video_id, r.frame_idx, r.annotator_id)?,
        }
    }
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, records: &[LabelRecord]) -> Result<()> {
    let path = path.as_ref();
    for (i, r) in records.iter().enumerate() {
        check_field(&r.video_id, "video_id", i + 2)?;
        check_field(&r.annotator_id, "annotator_id", i + 2)?;
    }
    let mut buf = Vec::new();
    write_labels_to(&mut buf, records).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
