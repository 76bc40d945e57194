//! Glue between datasets on disk and the network: synthetic datasets with
//! simulated specialists, training pairs in the network grid, and per-frame
//! prediction mapped back to label coordinates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    frame_file_name, read_frame_png, sample_frames, save_manifest, synth_phantom, write_frame_png, write_labels,
    DatasetManifest, Instrument, LabelRecord, Movement, Muscle, PhantomPreset, SubjectGroup, VideoEntry, LABEL_HEIGHT,
    LABEL_WIDTH, SYNTHETIC_PIXEL_SPACING_MM,
};
use crate::error::{Error, Result};
use crate::frame::{Frame, Point};
use crate::heatmap::{label_variance_for, make_soft_label_with_variance};
use crate::imaging::{crop_resize_to, normalize, CropSpec};
use crate::localizer::{filter_prediction, locate, FilterVerdict, Prediction, PredictionRow};
use crate::metrics::{centroid, FrameKey};
use crate::network::{forward, ModelWeights};
use crate::rng::{keyed, stream_rng};
use crate::trainer::{CurriculumStage, TrainingPair};

/// Annotator id of the generator's exact junction position.
pub const GROUND_TRUTH_ID: &str = "GT";
/// Simulated specialists of synthetic datasets.
pub const SPECIALIST_IDS: [&str; 4] = ["S1", "S2", "S3", "S4"];
/// Per-axis SD of the simulated specialists, in label pixels.
pub const SPECIALIST_NOISE_PX: f64 = 1.5;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.csv";

/// Maps a label-grid point (256 x 128) into a `width x height` grid with
/// pixel centres aligned.
pub fn label_to_grid(p: Point, width: usize, height: usize) -> Point {
    Point::new(
        (p.x + 0.5) * width as f64 / LABEL_WIDTH - 0.5,
        (p.y + 0.5) * height as f64 / LABEL_HEIGHT - 0.5,
    )
}

/// Inverse of [`label_to_grid`].
pub fn grid_to_label(p: Point, width: usize, height: usize) -> Point {
    Point::new(
        (p.x + 0.5) * LABEL_WIDTH / width as f64 - 0.5,
        (p.y + 0.5) * LABEL_HEIGHT / height as f64 - 0.5,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_domain: usize,
    pub domains: Vec<Instrument>,
    /// Phantom size in pixels (2:1).
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub specialist_noise_px: f64,
}

impl SynthSpec {
    pub fn new(n_per_domain: usize, domains: Vec<Instrument>, width: usize, height: usize, seed: u64) -> Self {
        Self {
            n_per_domain,
            domains,
            width,
            height,
            seed,
            specialist_noise_px: SPECIALIST_NOISE_PX,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_per_domain == 0 {
            return Err(Error::InvalidInput("n_per_domain must be at least 1".into()));
        }
        if self.domains.is_empty() {
            return Err(Error::InvalidInput("at least one domain is required".into()));
        }
        for d in &self.domains {
            if PhantomPreset::from_instrument(*d).is_none() {
                return Err(Error::InvalidInput(format!("no phantom preset for instrument {d}")));
            }
        }
        if self.width != 2 * self.height || self.width as f64 > LABEL_WIDTH {
            return Err(Error::InvalidInput(format!(
                "phantom size {}x{} must be 2:1 and at most 256x128",
                self.width, self.height
            )));
        }
        if !(self.specialist_noise_px >= 0.0 && self.specialist_noise_px.is_finite()) {
            return Err(Error::InvalidInput("specialist noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Writes one video per domain (`<domain>/frame_%06d.png`), `labels.csv`
/// with the exact position under `GT` plus noisy specialists, and
/// `manifest.json`. Output depends only on the spec.
pub fn synthesize(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut entries = Vec::new();
    let mut labels = Vec::new();
    let crop = CropSpec::full(spec.width as u32, spec.height as u32);
    let noise = Normal::new(0.0, spec.specialist_noise_px.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for domain in &spec.domains {
        let preset = PhantomPreset::from_instrument(*domain).expect("validated");
        let video_id = domain.as_str().to_string();
        let dir = out_dir.join(&video_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..spec.n_per_domain {
            let phantom_seed = keyed(spec.seed, "synth", &[*domain as u64, i as u64]);
            let params = preset.params(phantom_seed, spec.width, spec.height);
            let (frame, _) = synth_phantom(&params)?;
            write_frame_png(dir.join(frame_file_name(i)), &frame)?;
            let truth = crop.to_resized(params.junction(), LABEL_WIDTH as usize, LABEL_HEIGHT as usize);
            labels.push(LabelRecord {
                video_id: video_id.clone(),
                frame_idx: i,
                annotator_id: GROUND_TRUTH_ID.into(),
                position: Some(truth),
            });
            let mut rng = stream_rng(spec.seed, "specialists", &[*domain as u64, i as u64]);
            for s in SPECIALIST_IDS {
                let (dx, dy) = if spec.specialist_noise_px > 0.0 {
                    (noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                // quarter-pixel labels, kept inside the label grid
                let q = |v: f64, hi: f64| ((v * 4.0).round() / 4.0).clamp(0.0, hi - 0.25);
                labels.push(LabelRecord {
                    video_id: video_id.clone(),
                    frame_idx: i,
                    annotator_id: s.into(),
                    position: Some(Point::new(q(truth.x + dx, LABEL_WIDTH), q(truth.y + dy, LABEL_HEIGHT))),
                });
            }
        }
        entries.push(VideoEntry {
            video_id: video_id.clone(),
            instrument: *domain,
            movement: Movement::MVC,
            muscle: Muscle::MG,
            subject_group: SubjectGroup::Healthy,
            frame_dir: video_id,
            pixel_spacing_mm: SYNTHETIC_PIXEL_SPACING_MM,
            crop,
            stride: 1,
        });
    }
    let mut manifest = DatasetManifest::new(entries);
    manifest.labels = Some(LABELS_FILE.into());
    labels
        .sort_by(|a, b| (&a.video_id, a.frame_idx, &a.annotator_id).cmp(&(&b.video_id, b.frame_idx, &b.annotator_id)));
    write_labels(out_dir.join(LABELS_FILE), &labels)?;
    save_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    manifest.base_dir = out_dir.to_path_buf();
    Ok(manifest)
}

/// Which labels become training targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// One annotator's labels.
    Annotator(String),
    /// Coordinate mean of every annotator except the ground truth.
    SpecialistMean,
}

impl TargetSource {
    pub fn parse(s: &str) -> Self {
        if s == "mean" {
            TargetSource::SpecialistMean
        } else {
            TargetSource::Annotator(s.to_string())
        }
    }
}

/// Target position per labelled frame; `None` marks a frame labelled as
/// "junction not visible".
pub fn target_positions(labels: &[LabelRecord], source: &TargetSource) -> BTreeMap<FrameKey, Option<Point>> {
    let mut out: BTreeMap<FrameKey, Vec<Option<Point>>> = BTreeMap::new();
    for r in labels {
        let wanted = match source {
            TargetSource::Annotator(a) => &r.annotator_id == a,
            TargetSource::SpecialistMean => r.annotator_id != GROUND_TRUTH_ID,
        };
        if wanted {
            out.entry(FrameKey::new(r.video_id.clone(), r.frame_idx))
                .or_default()
                .push(r.position);
        }
    }
    out.into_iter()
        .map(|(k, v)| {
            let present: Vec<Point> = v.into_iter().flatten().collect();
            (k, (!present.is_empty()).then(|| centroid(&present)))
        })
        .collect()
}

pub fn frame_path(manifest: &DatasetManifest, entry: &VideoEntry, idx: usize) -> PathBuf {
    manifest.frame_dir(entry).join(frame_file_name(idx))
}

/// Reads a frame and crops and resizes it to the network grid.
pub fn load_frame(
    manifest: &DatasetManifest,
    entry: &VideoEntry,
    idx: usize,
    width: usize,
    height: usize,
) -> Result<Frame> {
    let raw = read_frame_png(frame_path(manifest, entry, idx))?;
    entry.crop.check_within(raw.width(), raw.height())?;
    crop_resize_to(&raw, &entry.crop, width, height)
}

/// Training pairs of every labelled, sampled frame of the videos recorded
/// with `domain`, in (video, frame) order.
pub fn training_pairs(
    manifest: &DatasetManifest,
    labels: &[LabelRecord],
    domain: Instrument,
    width: usize,
    height: usize,
    source: &TargetSource,
) -> Result<Vec<TrainingPair>> {
    let targets = target_positions(labels, source);
    let variance = label_variance_for(width);
    let mut out = Vec::new();
    for entry in manifest.entries.iter().filter(|e| e.instrument == domain) {
        for idx in sample_frames(entry, &manifest.base_dir, entry.stride)? {
            let Some(target) = targets.get(&FrameKey::new(entry.video_id.clone(), idx)) else {
                continue;
            };
            let frame = load_frame(manifest, entry, idx, width, height)?;
            let position = target.map(|p| {
                let g = label_to_grid(p, width, height);
                Point::new(g.x.clamp(0.0, width as f64 - 1.0), g.y.clamp(0.0, height as f64 - 1.0))
            });
            out.push(TrainingPair {
                frame,
                target: make_soft_label_with_variance(position, width, height, variance)?,
            });
        }
    }
    Ok(out)
}

/// Cumulative curriculum: stage `i` trains on the domains `sequence[..=i]`.
pub fn curriculum_stages(
    manifest: &DatasetManifest,
    labels: &[LabelRecord],
    sequence: &[Instrument],
    width: usize,
    height: usize,
    source: &TargetSource,
) -> Result<Vec<CurriculumStage>> {
    let mut per_domain = BTreeMap::new();
    for d in sequence {
        if per_domain.contains_key(d) {
            return Err(Error::InvalidInput(format!(
                "domain {d} appears twice in the stage sequence"
            )));
        }
        let pairs = training_pairs(manifest, labels, *d, width, height, source)?;
        if pairs.is_empty() {
            return Err(Error::InvalidInput(format!("no labelled frames for domain {d}")));
        }
        per_domain.insert(*d, pairs);
    }
    Ok((0..sequence.len())
        .map(|i| CurriculumStage {
            stage_id: i + 1,
            domains: sequence[..=i].to_vec(),
            dataset: sequence[..=i]
                .iter()
                .flat_map(|d| per_domain[d].iter().cloned())
                .collect(),
        })
        .collect())
}

/// Localizes the junction in a network-grid frame and applies the
/// prediction-side filters.
pub fn predict_frame(weights: &ModelWeights<f32>, frame: &Frame) -> Result<(Prediction, FilterVerdict)> {
    let map = forward(weights, &normalize(frame))?;
    let pred = locate(&map);
    let verdict = filter_prediction(&pred, map.width(), map.height());
    Ok((pred, verdict))
}

/// Prediction file row with the position mapped back to label coordinates.
pub fn prediction_row(
    key: &FrameKey,
    pred: &Prediction,
    verdict: &FilterVerdict,
    width: usize,
    height: usize,
) -> PredictionRow {
    let p = grid_to_label(pred.position, width, height);
    PredictionRow {
        video_id: key.video_id.clone(),
        frame_idx: key.frame_idx,
        x_px: p.x,
        y_px: p.y,
        confidence: pred.confidence,
        fit_converged: pred.fit_converged,
        filter_case: verdict.case,
    }
}

/// Every sampled frame of the manifest (optionally restricted to some
/// instruments), in (video, frame) order.
pub fn frame_keys(manifest: &DatasetManifest, domains: Option<&[Instrument]>) -> Result<Vec<(usize, FrameKey)>> {
    let mut out = Vec::new();
    for (i, entry) in manifest.entries.iter().enumerate() {
        if domains.is_some_and(|d| !d.contains(&entry.instrument)) {
            continue;
        }
        for idx in sample_frames(entry, &manifest.base_dir, entry.stride)? {
            out.push((i, FrameKey::new(entry.video_id.clone(), idx)));
        }
    }
    out.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{load_labels, load_manifest};

    #[test]
    fn grid_mapping_round_trips() {
        let p = Point::new(100.25, 60.5);
        let g = label_to_grid(p, 128, 64);
        assert!((g.x - 49.875).abs() < 1e-12 && (g.y - 30.0).abs() < 1e-12);
        let back = grid_to_label(g, 128, 64);
        assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
        assert_eq!(label_to_grid(p, 256, 128), p);
    }

    #[test]
    fn synth_writes_frames_labels_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(3, vec![Instrument::SyntheticA, Instrument::SyntheticB], 64, 32, 5);
        let m = synthesize(&spec, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        let loaded = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.entries, m.entries);
        let labels = load_labels(dir.path().join(LABELS_FILE)).unwrap();
        assert_eq!(labels.len(), 2 * 3 * 5);
        let keys = frame_keys(&loaded, None).unwrap();
        assert_eq!(keys.len(), 6);
        let pairs = training_pairs(
            &loaded,
            &labels,
            Instrument::SyntheticB,
            64,
            32,
            &TargetSource::parse("GT"),
        )
        .unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.target.max() > 0.9));

        let again = tempfile::tempdir().unwrap();
        synthesize(&spec, again.path()).unwrap();
        for name in [LABELS_FILE, MANIFEST_FILE, "SyntheticA/frame_000002.png"] {
            assert_eq!(
                std::fs::read(dir.path().join(name)).unwrap(),
                std::fs::read(again.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn specialist_mean_target() {
        let rec = |a: &str, x: f64| LabelRecord {
            video_id: "v".into(),
            frame_idx: 0,
            annotator_id: a.into(),
            position: Some(Point::new(x, 10.0)),
        };
        let labels = vec![rec("GT", 0.0), rec("S1", 10.0), rec("S2", 20.0)];
        let t = target_positions(&labels, &TargetSource::SpecialistMean);
        assert_eq!(t[&FrameKey::new("v", 0)], Some(Point::new(15.0, 10.0)));
        let t = target_positions(&labels, &TargetSource::parse("GT"));
        assert_eq!(t[&FrameKey::new("v", 0)], Some(Point::new(0.0, 10.0)));
    }
}
