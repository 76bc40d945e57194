use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::LabelRecord;
use crate::error::{Error, Result};
use crate::frame::Point;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub video_id: String,
    pub frame_idx: usize,
}

impl FrameKey {
    pub fn new(video_id: impl Into<String>, frame_idx: usize) -> Self {
        Self {
            video_id: video_id.into(),
            frame_idx,
        }
    }
}

/// Present specialist positions of one frame, ordered by annotator id.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub key: FrameKey,
    pub annotators: Vec<String>,
    pub points: Vec<Point>,
}

/// Groups label records by frame, dropping "not visible" entries and the
/// annotators listed in `exclude` (for example a ground-truth column).
pub fn group_by_frame(records: &[LabelRecord], exclude: &[&str]) -> Vec<FrameLabels> {
    let mut frames: BTreeMap<FrameKey, Vec<(String, Point)>> = BTreeMap::new();
    for r in records {
        if exclude.contains(&r.annotator_id.as_str()) {
            continue;
        }
        if let Some(p) = r.position {
            frames
                .entry(FrameKey::new(r.video_id.clone(), r.frame_idx))
                .or_default()
                .push((r.annotator_id.clone(), p));
        }
    }
    frames
        .into_iter()
        .map(|(key, mut v)| {
            v.sort_by(|a, b| a.0.cmp(&b.0));
            let (annotators, points) = v.into_iter().unzip();
            FrameLabels {
                key,
                annotators,
                points,
            }
        })
        .collect()
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    Point::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    )
}

/// Reference label of a frame: the coordinate-wise mean of its specialists.
pub fn reference_label(points: &[Point]) -> Result<Point> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "reference label needs at least 2 specialists, got {}",
            points.len()
        )));
    }
    Ok(centroid(points))
}

pub fn reference_labels(frames: &[FrameLabels]) -> Result<Vec<Point>> {
    frames
        .iter()
        .map(|f| {
            reference_label(&f.points).map_err(|e| match e {
                Error::InvalidInput(m) => {
                    Error::InvalidInput(format!("{} frame {}: {m}", f.key.video_id, f.key.frame_idx))
                }
                other => other,
            })
        })
        .collect()
}

/// Distance of each specialist to the mean of the other `N - 1`.
pub fn leave_one_out_distances(points: &[Point]) -> Result<Vec<f64>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "leave-one-out deviation needs at least 3 specialists, got {n}"
        )));
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let m = (n - 1) as f64;
    Ok(points
        .iter()
        .map(|p| p.distance(&Point::new((sx - p.x) / m, (sy - p.y) / m)))
        .collect())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample (n - 1) standard deviation; zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Agreement statistics of the specialists on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAgreement {
    pub key: FrameKey,
    pub reference: Point,
    /// Distance of each specialist to the reference, in annotator order.
    pub distances: Vec<f64>,
    /// Leave-one-out distances, in annotator order.
    pub loo_distances: Vec<f64>,
    /// Mean leave-one-out distance.
    pub loo_deviation: f64,
    /// Sample SD of `distances`.
    pub sigma: f64,
}

pub fn frame_agreement(frame: &FrameLabels) -> Result<FrameAgreement> {
    let loo = leave_one_out_distances(&frame.points)
        .map_err(|e| Error::InvalidInput(format!("{} frame {}: {e}", frame.key.video_id, frame.key.frame_idx)))?;
    let reference = centroid(&frame.points);
    let distances: Vec<f64> = frame.points.iter().map(|p| p.distance(&reference)).collect();
    Ok(FrameAgreement {
        key: frame.key.clone(),
        reference,
        sigma: sample_sd(&distances),
        loo_deviation: mean(&loo),
        loo_distances: loo,
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialistSpread {
    /// Mean over frames of the per-frame leave-one-out deviation.
    pub mean_deviation: f64,
    /// Sample SD over frames of the per-frame leave-one-out deviation.
    pub sd_deviation: f64,
    /// Mean over frames of the per-frame specialist SD.
    pub sigma_bar: f64,
}

/// Per-frame agreement and its aggregate over all given frames.
pub fn loo_specialist_deviation(frames: &[FrameLabels]) -> Result<(Vec<FrameAgreement>, SpecialistSpread)> {
    let per_frame = frames.iter().map(frame_agreement).collect::<Result<Vec<_>>>()?;
    Ok((per_frame.clone(), spread(&per_frame)))
}

pub fn spread(frames: &[FrameAgreement]) -> SpecialistSpread {
    if frames.is_empty() {
        return SpecialistSpread {
            mean_deviation: 0.0,
            sd_deviation: 0.0,
            sigma_bar: 0.0,
        };
    }
    let dev: Vec<f64> = frames.iter().map(|f| f.loo_deviation).collect();
    let sig: Vec<f64> = frames.iter().map(|f| f.sigma).collect();
    SpecialistSpread {
        mean_deviation: mean(&dev),
        sd_deviation: sample_sd(&dev),
        sigma_bar: mean(&sig),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn reference_examples() {
        let r = reference_label(&pts(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0)])).unwrap();
        assert_eq!(r, Point::new(1.0, 1.0));
        assert_eq!(
            reference_label(&pts(&[(50.0, 50.0); 4])).unwrap(),
            Point::new(50.0, 50.0)
        );
        let r = reference_label(&pts(&[(10.0, 0.0), (20.0, 0.0), (30.0, 0.0), (40.0, 0.0)])).unwrap();
        assert_eq!(r, Point::new(25.0, 0.0));
        assert!(reference_label(&pts(&[(1.0, 1.0)])).is_err());
    }

    #[test]
    fn loo_examples() {
        assert!(leave_one_out_distances(&pts(&[(3.0, 3.0); 4]))
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));
        let square = leave_one_out_distances(&pts(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0)])).unwrap();
        for d in &square {
            assert!((d - 4.0 / 3.0 * 2f64.sqrt()).abs() < 1e-12);
            assert!((d - 1.88562).abs() < 1e-5);
        }
        let delta = 6.0;
        let d = leave_one_out_distances(&pts(&[(delta, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)])).unwrap();
        assert!((d[0] - delta).abs() < 1e-12);
        assert!(d[1..].iter().all(|v| (v - delta / 3.0).abs() < 1e-12));
        assert!((mean(&d) - delta / 2.0).abs() < 1e-12);
        assert!(leave_one_out_distances(&pts(&[(0.0, 0.0), (1.0, 1.0)])).is_err());
    }

    #[test]
    fn grouping_skips_absent_and_excluded() {
        let rec = |v: &str, f, a: &str, p: Option<(f64, f64)>| LabelRecord {
            video_id: v.into(),
            frame_idx: f,
            annotator_id: a.into(),
            position: p.map(|(x, y)| Point::new(x, y)),
        };
        let records = vec![
            rec("v", 0, "S2", Some((2.0, 2.0))),
            rec("v", 0, "S1", Some((1.0, 1.0))),
            rec("v", 0, "GT", Some((9.0, 9.0))),
            rec("v", 5, "S1", None),
            rec("v", 5, "S2", Some((3.0, 3.0))),
        ];
        let frames = group_by_frame(&records, &["GT"]);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].annotators, vec!["S1", "S2"]);
        assert_eq!(frames[1].points, pts(&[(3.0, 3.0)]));
    }
}
