//! Dataset manifests, specialist label files, frame directories and the
//! synthetic phantom generator used in place of clinical recordings.

mod frames;
mod labels;
mod manifest;
mod phantom;

pub use frames::{frame_file_name, list_frame_indices, read_frame_png, sample_frames, select_strided, write_frame_png};
pub use labels::{load_labels, parse_labels, write_labels, write_labels_to, LabelRecord, LABEL_HEADER};
pub use manifest::{
    load_manifest, parse_manifest, save_manifest, DatasetManifest, Instrument, Movement, Muscle, SubjectGroup,
    VideoEntry, MANIFEST_SCHEMA_VERSION, SYNTHETIC_PIXEL_SPACING_MM,
};
pub use phantom::{band_mask, synth_phantom, PhantomParams, PhantomPreset, JUNCTION_MARGIN};

/// Label coordinates live in the resized network grid.
pub const LABEL_WIDTH: f64 = 256.0;
pub const LABEL_HEIGHT: f64 = 128.0;
