use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::agreement::{frame_agreement, group_by_frame, mean, sample_sd, spread, FrameAgreement, FrameKey};
use super::icc::{icc_a_k, Icc};
use super::stats::{
    bland_altman, breakdown, default_tolerance_grid, error_stats_from_distances, tolerance_curve, Breakdown,
    ErrorStats, Grouping, TolerancePoint,
};
use crate::dataio::{DatasetManifest, LabelRecord, VideoEntry, LABEL_HEIGHT, LABEL_WIDTH};
use crate::error::{Error, Result};
use crate::frame::Point;
use crate::localizer::{filter_specialist_frame, FilterCase, PredictionRow};

/// Specialists needed on every evaluated frame.
pub const MIN_SPECIALISTS: usize = 3;
/// Rows needed before an ICC is reported.
pub const MIN_ICC_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    /// Annotators in the label file that are not specialists (ground truth).
    pub exclude_annotators: Vec<String>,
    pub tolerance_grid: Vec<f64>,
    /// Extent of the label grid in pixels, used to normalize Bland-Altman means.
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            exclude_annotators: vec!["GT".into()],
            tolerance_grid: default_tolerance_grid(),
            image_width: LABEL_WIDTH,
            image_height: LABEL_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub video_id: String,
    pub frame_idx: usize,
    pub case: FilterCase,
}

pub const LEDGER_HEADER: &str = "video_id,frame_idx,filter_case";

pub fn write_ledger<W: std::io::Write>(mut w: W, ledger: &[LedgerEntry]) -> std::io::Result<()> {
    writeln!(w, "{LEDGER_HEADER}")?;
    for e in ledger {
        writeln!(w, "{},{},{}", e.video_id, e.frame_idx, e.case)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub border: usize,
    pub low_confidence_pad: usize,
    pub specialist_inconsistent: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.border + self.low_confidence_pad + self.specialist_inconsistent
    }

    /// Exclusions by the prediction-side rules only.
    pub fn prediction_side(&self) -> usize {
        self.border + self.low_confidence_pad
    }

    pub fn get(&self, case: FilterCase) -> usize {
        match case {
            FilterCase::None => 0,
            FilterCase::Border => self.border,
            FilterCase::LowConfidencePad => self.low_confidence_pad,
            FilterCase::SpecialistInconsistent => self.specialist_inconsistent,
        }
    }

    fn add(&mut self, case: FilterCase) {
        match case {
            FilterCase::None => {}
            FilterCase::Border => self.border += 1,
            FilterCase::LowConfidencePad => self.low_confidence_pad += 1,
            FilterCase::SpecialistInconsistent => self.specialist_inconsistent += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: if values.is_empty() { 0.0 } else { mean(values) },
            sd: sample_sd(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAgreement {
    pub bias_mm: f64,
    pub loa_low_mm: f64,
    pub loa_high_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanAxes {
    pub x: AxisAgreement,
    pub y: AxisAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistFold {
    pub annotator: String,
    pub n: usize,
    pub rmse_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Predictions received.
    pub n_predictions: usize,
    /// Frames kept after the error-case filters.
    pub n_frames: usize,
    pub exclusions: ExclusionCounts,
    /// Mean specialist spread over all candidate frames, used by the filter.
    pub sigma_bar_filter_px: f64,
    /// Mean specialist spread over kept frames, used for the tolerance axis.
    pub sigma_bar_px: f64,
    /// Model against reference labels.
    pub model: ErrorStats,
    /// RMSE of each held-out specialist against the mean of the others.
    pub specialist_folds: Vec<SpecialistFold>,
    pub specialist_rmse_mm: MeanSd,
    /// Per-frame mean leave-one-out specialist deviation.
    pub specialist_deviation_mm: MeanSd,
    /// `None` when fewer than five frames carry every specialist.
    pub icc: Option<Icc>,
    pub icc_rows: usize,
    pub bland_altman: BlandAltmanAxes,
    pub tolerance_curve: Vec<TolerancePoint>,
    pub breakdowns: Vec<Breakdown>,
}

/// One kept frame with everything the figures need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedFrame {
    pub key: FrameKey,
    pub muscle: String,
    pub movement: String,
    pub instrument: String,
    pub pixel_spacing_mm: f64,
    pub prediction: Point,
    pub agreement: FrameAgreement,
    pub annotators: Vec<String>,
    pub model_distance_px: f64,
}

impl EvaluatedFrame {
    pub fn model_distance_mm(&self) -> f64 {
        self.model_distance_px * self.pixel_spacing_mm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub ledger: Vec<LedgerEntry>,
    pub frames: Vec<EvaluatedFrame>,
    pub options: EvaluateOptions,
}

fn group_value(entry: &VideoEntry, grouping: Grouping) -> String {
    match grouping {
        Grouping::Muscle => format!("{:?}", entry.muscle),
        Grouping::Movement => format!("{:?}", entry.movement),
        Grouping::Instrument => entry.instrument.to_string(),
    }
}

fn frame_group(frame: &EvaluatedFrame, grouping: Grouping) -> &str {
    match grouping {
        Grouping::Muscle => &frame.muscle,
        Grouping::Movement => &frame.movement,
        Grouping::Instrument => &frame.instrument,
    }
}

/// Takes the border and pad verdicts from each row's `filter_case`, adds the
/// specialist-inconsistency filter, then computes every
/// agreement statistic over the kept frames. Predictions are processed in
/// key order, so the input order does not matter. Every predicted frame must
/// carry at least three specialist labels; labelled frames without a
/// prediction are ignored.
pub fn evaluate(
    predictions: &[PredictionRow],
    labels: &[LabelRecord],
    manifest: &DatasetManifest,
    options: &EvaluateOptions,
) -> Result<Evaluation> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions to evaluate".into()));
    }
    let mut preds: Vec<&PredictionRow> = predictions.iter().collect();
    preds.sort_by(|a, b| (&a.video_id, a.frame_idx).cmp(&(&b.video_id, b.frame_idx)));
    if let Some(w) = preds
        .windows(2)
        .find(|w| w[0].video_id == w[1].video_id && w[0].frame_idx == w[1].frame_idx)
    {
        return Err(Error::InvalidInput(format!(
            "duplicate prediction for {} frame {}",
            w[0].video_id, w[0].frame_idx
        )));
    }

    let exclude: Vec<&str> = options.exclude_annotators.iter().map(String::as_str).collect();
    let by_key: BTreeMap<FrameKey, _> = group_by_frame(labels, &exclude)
        .into_iter()
        .map(|f| (f.key.clone(), f))
        .collect();

    struct Candidate<'a> {
        row: &'a PredictionRow,
        entry: &'a VideoEntry,
        agreement: FrameAgreement,
        annotators: Vec<String>,
        points: Vec<Point>,
    }
    let mut candidates = Vec::with_capacity(preds.len());
    for row in &preds {
        let key = FrameKey::new(row.video_id.clone(), row.frame_idx);
        let entry = manifest
            .entry(&row.video_id)
            .ok_or_else(|| Error::InvalidInput(format!("video `{}` is not in the manifest", row.video_id)))?;
        let frame = by_key
            .get(&key)
            .filter(|f| f.points.len() >= MIN_SPECIALISTS)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} frame {} has fewer than {MIN_SPECIALISTS} specialist labels",
                    row.video_id, row.frame_idx
                ))
            })?;
        candidates.push(Candidate {
            row,
            entry,
            agreement: frame_agreement(frame)?,
            annotators: frame.annotators.clone(),
            points: frame.points.clone(),
        });
    }

    let all_agreements: Vec<FrameAgreement> = candidates.iter().map(|c| c.agreement.clone()).collect();
    let sigma_bar_filter = spread(&all_agreements).sigma_bar;

    let mut ledger = Vec::new();
    let mut exclusions = ExclusionCounts::default();
    let mut frames = Vec::new();
    for c in candidates {
        let position = Point::new(c.row.x_px, c.row.y_px);
        // border and pad verdicts were made at prediction time, in the grid the map lived in
        let mut case = c.row.filter_case;
        if case == FilterCase::None && sigma_bar_filter > 0.0 {
            case = filter_specialist_frame(&c.points, &c.agreement.reference, sigma_bar_filter)?.case;
        }
        if case != FilterCase::None {
            exclusions.add(case);
            ledger.push(LedgerEntry {
                video_id: c.row.video_id.clone(),
                frame_idx: c.row.frame_idx,
                case,
            });
            continue;
        }
        frames.push(EvaluatedFrame {
            key: c.agreement.key.clone(),
            muscle: group_value(c.entry, Grouping::Muscle),
            movement: group_value(c.entry, Grouping::Movement),
            instrument: group_value(c.entry, Grouping::Instrument),
            pixel_spacing_mm: c.entry.pixel_spacing_mm,
            prediction: position,
            model_distance_px: position.distance(&c.agreement.reference),
            agreement: c.agreement,
            annotators: c.annotators,
        });
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput("every predicted frame was excluded".into()));
    }

    let report = build_report(
        predictions.len(),
        exclusions,
        sigma_bar_filter,
        &frames,
        manifest,
        options,
    )?;
    Ok(Evaluation {
        report,
        ledger,
        frames,
        options: options.clone(),
    })
}

fn build_report(
    n_predictions: usize,
    exclusions: ExclusionCounts,
    sigma_bar_filter_px: f64,
    frames: &[EvaluatedFrame],
    manifest: &DatasetManifest,
    options: &EvaluateOptions,
) -> Result<EvaluationReport> {
    let agreements: Vec<FrameAgreement> = frames.iter().map(|f| f.agreement.clone()).collect();
    let sigma_bar_px = spread(&agreements).sigma_bar;

    let model_mm: Vec<f64> = frames.iter().map(EvaluatedFrame::model_distance_mm).collect();
    let model = error_stats_from_distances(&model_mm)?;

    // one fold per specialist: held-out specialist against the mean of the rest
    let mut fold_distances: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for f in frames {
        for (a, d) in f.annotators.iter().zip(&f.agreement.loo_distances) {
            fold_distances
                .entry(a.clone())
                .or_default()
                .push(d * f.pixel_spacing_mm);
        }
    }
    let specialist_folds = fold_distances
        .iter()
        .map(|(a, d)| {
            Ok(SpecialistFold {
                annotator: a.clone(),
                n: d.len(),
                rmse_mm: error_stats_from_distances(d)?.rmse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let specialist_rmse_mm = MeanSd::of(&specialist_folds.iter().map(|f| f.rmse_mm).collect::<Vec<_>>());
    let deviations: Vec<f64> = frames
        .iter()
        .map(|f| f.agreement.loo_deviation * f.pixel_spacing_mm)
        .collect();
    let specialist_deviation_mm = MeanSd::of(&deviations);

    // ICC over frames labelled by every specialist
    let all: BTreeSet<&String> = frames.iter().flat_map(|f| &f.annotators).collect();
    let rows: Vec<Vec<f64>> = frames
        .iter()
        .filter(|f| f.annotators.len() == all.len())
        .map(|f| f.agreement.distances.iter().map(|d| d * f.pixel_spacing_mm).collect())
        .collect();
    let icc = if rows.len() >= MIN_ICC_ROWS && all.len() >= 2 {
        Some(icc_a_k(&rows)?)
    } else {
        None
    };

    let axis = |pick: fn(&Point) -> f64| -> Result<AxisAgreement> {
        let m: Vec<f64> = frames
            .iter()
            .map(|f| pick(&f.prediction) * f.pixel_spacing_mm)
            .collect();
        let r: Vec<f64> = frames
            .iter()
            .map(|f| pick(&f.agreement.reference) * f.pixel_spacing_mm)
            .collect();
        let ba = bland_altman(&m, &r, 1.0)?;
        Ok(AxisAgreement {
            bias_mm: ba.bias,
            loa_low_mm: ba.loa_low,
            loa_high_mm: ba.loa_high,
        })
    };
    let bland_altman = BlandAltmanAxes {
        x: axis(|p| p.x)?,
        y: axis(|p| p.y)?,
    };

    let model_px: Vec<f64> = frames.iter().map(|f| f.model_distance_px).collect();
    let specialist_px: Vec<Vec<f64>> = {
        let mut by: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
        for f in frames {
            for (a, d) in f.annotators.iter().zip(&f.agreement.loo_distances) {
                by.entry(a).or_default().push(*d);
            }
        }
        by.into_values().collect()
    };
    let tolerance_curve = tolerance_curve(&model_px, &specialist_px, sigma_bar_px, &options.tolerance_grid)?;

    let breakdowns = Grouping::ALL
        .into_iter()
        .map(|g| {
            let entries: Vec<(String, f64)> = frames
                .iter()
                .map(|f| (frame_group(f, g).to_string(), f.model_distance_mm()))
                .collect();
            let known: Vec<String> = manifest.entries.iter().map(|e| group_value(e, g)).collect();
            breakdown(g, &entries, &known)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvaluationReport {
        n_predictions,
        n_frames: frames.len(),
        exclusions,
        sigma_bar_filter_px,
        sigma_bar_px,
        model,
        specialist_folds,
        specialist_rmse_mm,
        specialist_deviation_mm,
        icc,
        icc_rows: rows.len(),
        bland_altman,
        tolerance_curve,
        breakdowns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Instrument, Movement, Muscle, SubjectGroup};
    use crate::imaging::CropSpec;

    fn manifest() -> DatasetManifest {
        let entry = |id: &str, instrument| VideoEntry {
            video_id: id.into(),
            instrument,
            movement: Movement::MVC,
            muscle: Muscle::MG,
            subject_group: SubjectGroup::Healthy,
            frame_dir: id.into(),
            pixel_spacing_mm: 0.5,
            crop: CropSpec::full(128, 64),
            stride: 1,
        };
        DatasetManifest::new(vec![
            entry("a", Instrument::SyntheticA),
            entry("b", Instrument::SyntheticB),
        ])
    }

    fn labels_at(video: &str, idx: usize, p: Point) -> Vec<LabelRecord> {
        ["S1", "S2", "S3", "S4"]
            .iter()
            .map(|s| LabelRecord {
                video_id: video.into(),
                frame_idx: idx,
                annotator_id: s.to_string(),
                position: Some(p),
            })
            .collect()
    }

    fn row(video: &str, idx: usize, p: Point) -> PredictionRow {
        PredictionRow {
            video_id: video.into(),
            frame_idx: idx,
            x_px: p.x,
            y_px: p.y,
            confidence: 0.9,
            fit_converged: true,
            filter_case: FilterCase::None,
        }
    }

    #[test]
    fn perfect_model_has_zero_error() {
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for i in 0..8 {
            let p = Point::new(40.0 + i as f64, 50.0);
            labels.extend(labels_at(if i % 2 == 0 { "a" } else { "b" }, i, p));
            preds.push(row(if i % 2 == 0 { "a" } else { "b" }, i, p));
        }
        let ev = evaluate(&preds, &labels, &manifest(), &EvaluateOptions::default()).unwrap();
        let r = &ev.report;
        assert_eq!(r.n_frames, 8);
        assert_eq!((r.model.rmse, r.model.mae, r.model.sem), (0.0, 0.0, 0.0));
        assert!(r.tolerance_curve.iter().all(|p| p.model_pct == 100.0));
        assert!(ev.ledger.is_empty());
        let inst = &r.breakdowns[2];
        assert_eq!(inst.grouping, Grouping::Instrument);
        assert_eq!(inst.groups["SyntheticA"].n, 4);
    }

    #[test]
    fn order_of_predictions_does_not_matter() {
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for i in 0..10 {
            let p = Point::new(30.0 + 3.0 * i as f64, 40.0);
            let mut l = labels_at("a", i, p);
            l[0].position = Some(Point::new(p.x + 1.0 + i as f64 * 0.1, p.y));
            labels.extend(l);
            preds.push(row("a", i, Point::new(p.x + 0.5 * i as f64, p.y - 1.0)));
        }
        let sorted = evaluate(&preds, &labels, &manifest(), &EvaluateOptions::default()).unwrap();
        preds.reverse();
        preds.swap(2, 7);
        let shuffled = evaluate(&preds, &labels, &manifest(), &EvaluateOptions::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&sorted).unwrap(),
            serde_json::to_string(&shuffled).unwrap()
        );
        assert!(sorted.report.icc.is_some());
    }

    #[test]
    fn missing_coverage_is_an_error() {
        let labels = labels_at("a", 0, Point::new(50.0, 50.0));
        let preds = vec![row("a", 0, Point::new(50.0, 50.0)), row("a", 1, Point::new(50.0, 50.0))];
        assert!(evaluate(&preds, &labels, &manifest(), &EvaluateOptions::default()).is_err());
        let preds = vec![row("zz", 0, Point::new(50.0, 50.0))];
        assert!(evaluate(&preds, &labels, &manifest(), &EvaluateOptions::default()).is_err());
    }
}
