use std::path::Path;

use super::manifest::VideoEntry;
use crate::error::{Error, Result};
use crate::frame::Frame;

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn parse_frame_file_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

/// Sorted indices of the `frame_%06d.png` files present in `dir`.
pub fn list_frame_indices(dir: impl AsRef<Path>) -> Result<Vec<usize>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(idx) = entry.file_name().to_str().and_then(parse_frame_file_name) {
            out.push(idx);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Indices `{0, stride, 2*stride, ...}` that are present in `available`.
pub fn select_strided(available: &[usize], stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    let mut out: Vec<usize> = available.iter().copied().filter(|i| i % stride == 0).collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Frames of `entry` selected for labeling at the given stride.
pub fn sample_frames(entry: &VideoEntry, base_dir: &Path, stride: usize) -> Result<Vec<usize>> {
    let dir = base_dir.join(&entry.frame_dir);
    let available = list_frame_indices(&dir)?;
    if available.is_empty() {
        return Err(Error::InvalidInput(format!("no frames in {}", dir.display())));
    }
    select_strided(&available, stride)
}

/// Reads an 8-bit grayscale PNG into a frame with intensities in [0, 1].
pub fn read_frame_png(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Frame::new(w as usize, h as usize, data)
}

/// Writes a frame as 8-bit grayscale PNG, clamping intensities to [0, 1].
pub fn write_frame_png(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer(
        path,
        &bytes,
        frame.width() as u32,
        frame.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Instrument, Movement, Muscle, SubjectGroup};
    use crate::imaging::CropSpec;

    #[test]
    fn stride_enumeration() {
        let all: Vec<usize> = (0..23).collect();
        assert_eq!(select_strided(&all, 5).unwrap(), vec![0, 5, 10, 15, 20]);
        assert_eq!(select_strided(&all, 1).unwrap(), all);
        // 10 s at 25 fps
        let clip: Vec<usize> = (0..250).collect();
        assert_eq!(select_strided(&clip, 5).unwrap().len(), 50);
        assert!(select_strided(&all, 0).is_err());
    }

    #[test]
    fn strided_output_is_increasing_subset() {
        let avail = vec![0, 2, 3, 5, 10, 11, 15, 40];
        let got = select_strided(&avail, 5).unwrap();
        assert_eq!(got, vec![0, 5, 10, 15, 40]);
        assert!(got.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn frame_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("v1");
        std::fs::create_dir(&frames).unwrap();
        for i in 0..12 {
            let f = Frame::filled(4, 2, i as f32 / 11.0);
            write_frame_png(frames.join(frame_file_name(i)), &f).unwrap();
        }
        std::fs::write(frames.join("notes.txt"), "x").unwrap();
        let entry = VideoEntry {
            video_id: "v1".into(),
            instrument: Instrument::SyntheticA,
            movement: Movement::MVC,
            muscle: Muscle::MG,
            subject_group: SubjectGroup::Healthy,
            frame_dir: "v1".into(),
            pixel_spacing_mm: 0.15,
            crop: CropSpec::full(4, 2),
            stride: 5,
        };
        assert_eq!(sample_frames(&entry, dir.path(), 5).unwrap(), vec![0, 5, 10]);
        let back = read_frame_png(frames.join(frame_file_name(11))).unwrap();
        assert_eq!(back.dims(), (4, 2));
        assert_eq!(back.get(0, 0), 1.0);

        let empty = VideoEntry {
            frame_dir: "nothing".into(),
            ..entry
        };
        std::fs::create_dir(dir.path().join("nothing")).unwrap();
        assert!(sample_frames(&empty, dir.path(), 1).is_err());
    }
}
