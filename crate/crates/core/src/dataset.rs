//! Dataset access: a directory of 8-bit grayscale images plus one annotation
//! file, one line per image:
//!
//! ```text
//! filename cx cy a b theta
//! ```
//!
//! Fields are whitespace-separated decimals, theta in radians. The same
//! grammar is written by the synthetic generator and read back by training
//! and evaluation.

use std::cell::Cell;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::{Ellipse, GrayImage};

/// Name of the annotation index inside a dataset directory.
pub const ANNOTATION_FILE: &str = "annotations.txt";

/// A deterministically re-iterable stream of annotated frames.
///
/// Every visit of a sample (with or without its image) bumps the read
/// counter, so `sample_reads` after a full training run equals
/// `passes * len`.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples read so far across all passes.
    fn sample_reads(&self) -> u64;

    /// One pass over the annotations only.
    fn visit_annotations(&self, f: &mut dyn FnMut(&Ellipse)) -> Result<()>;

    /// One pass over (image, annotation) pairs.
    fn visit_samples(&self, f: &mut dyn FnMut(&GrayImage, &Ellipse) -> Result<()>) -> Result<()>;
}

/// Dataset held fully in memory; used by tests and the timing harness.
pub struct MemoryDataset {
    samples: Vec<(GrayImage, Ellipse)>,
    reads: Cell<u64>,
}

impl MemoryDataset {
    pub fn new(samples: Vec<(GrayImage, Ellipse)>) -> Self {
        Self {
            samples,
            reads: Cell::new(0),
        }
    }

    pub fn samples(&self) -> &[(GrayImage, Ellipse)] {
        &self.samples
    }
}

impl Dataset for MemoryDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_reads(&self) -> u64 {
        self.reads.get()
    }

    fn visit_annotations(&self, f: &mut dyn FnMut(&Ellipse)) -> Result<()> {
        for (_, e) in &self.samples {
            self.reads.set(self.reads.get() + 1);
            f(e);
        }
        Ok(())
    }

    fn visit_samples(&self, f: &mut dyn FnMut(&GrayImage, &Ellipse) -> Result<()>) -> Result<()> {
        for (img, e) in &self.samples {
            self.reads.set(self.reads.get() + 1);
            f(img, e)?;
        }
        Ok(())
    }
}

/// Dataset backed by a directory; images are decoded on every pass so memory
/// stays bounded by one frame.
pub struct DirDataset {
    dir: PathBuf,
    entries: Vec<(String, Ellipse)>,
    reads: Cell<u64>,
}

impl DirDataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let ann_path = dir.join(ANNOTATION_FILE);
        let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, ellipse) = parse_annotation_line(line).map_err(|msg| Error::Annotation {
                path: ann_path.clone(),
                line: idx + 1,
                message: msg,
            })?;
            entries.push((name, ellipse));
        }
        Ok(Self {
            dir,
            entries,
            reads: Cell::new(0),
        })
    }

    pub fn entries(&self) -> &[(String, Ellipse)] {
        &self.entries
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn load_image(&self, name: &str) -> Result<GrayImage> {
        load_gray(&self.dir.join(name))
    }
}

impl Dataset for DirDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn sample_reads(&self) -> u64 {
        self.reads.get()
    }

    fn visit_annotations(&self, f: &mut dyn FnMut(&Ellipse)) -> Result<()> {
        for (_, e) in &self.entries {
            self.reads.set(self.reads.get() + 1);
            f(e);
        }
        Ok(())
    }

    fn visit_samples(&self, f: &mut dyn FnMut(&GrayImage, &Ellipse) -> Result<()>) -> Result<()> {
        for (name, e) in &self.entries {
            self.reads.set(self.reads.get() + 1);
            let img = self.load_image(name)?;
            f(&img, e)?;
        }
        Ok(())
    }
}

/// Parses one `filename cx cy a b theta` line.
pub fn parse_annotation_line(line: &str) -> std::result::Result<(String, Ellipse), String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, got {}", fields.len()));
    }
    let mut nums = [0f64; 5];
    for (i, field) in fields[1..].iter().enumerate() {
        nums[i] = field
            .parse::<f64>()
            .map_err(|_| format!("bad number {field:?}"))?;
    }
    let ellipse = Ellipse::new(nums[0], nums[1], nums[2], nums[3], nums[4])
        .map_err(|e| e.to_string())?;
    Ok((fields[0].to_string(), ellipse))
}

/// Formats an annotation line; `{}` float formatting round-trips exactly
/// through `parse_annotation_line`.
pub fn format_annotation_line(name: &str, e: &Ellipse) -> String {
    format!("{name} {} {} {} {} {}", e.cx, e.cy, e.a, e.b, e.theta)
}

/// Loads any image the `image` crate can decode and converts it to 8-bit
/// grayscale.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::ImageFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let luma = img.to_luma8();
    Ok(GrayImage::new(
        luma.width(),
        luma.height(),
        luma.into_raw(),
    ))
}

/// Writes an image; the format follows the file extension (`.pgm` by
/// convention in generated datasets).
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    image::save_buffer(
        path,
        img.pixels(),
        img.width(),
        img.height(),
        image::ColorType::L8,
    )
    .map_err(|e| Error::ImageFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_line_round_trip() {
        let e = Ellipse::new(96.125, 72.0625, 10.5, 8.25, 0.7853981633974483).unwrap();
        let line = format_annotation_line("frame_00001_0.pgm", &e);
        let (name, parsed) = parse_annotation_line(&line).unwrap();
        assert_eq!(name, "frame_00001_0.pgm");
        assert_eq!(parsed, e);
    }

    #[test]
    fn annotation_line_rejects_garbage() {
        assert!(parse_annotation_line("a b c").is_err());
        assert!(parse_annotation_line("f 1 2 3 4 x").is_err());
        assert!(parse_annotation_line("f 1 2 0 4 0").is_err());
    }

    #[test]
    fn memory_dataset_counts_reads() {
        let e = Ellipse::new(8.0, 8.0, 3.0, 3.0, 0.0).unwrap();
        let ds = MemoryDataset::new(vec![(GrayImage::filled(16, 16, 10), e); 4]);
        ds.visit_annotations(&mut |_| {}).unwrap();
        ds.visit_samples(&mut |_, _| Ok(())).unwrap();
        assert_eq!(ds.sample_reads(), 8);
    }

    #[test]
    fn dir_dataset_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 16 + y) as u8);
        save_gray(&tmp.path().join("f0.pgm"), &img).unwrap();
        let e = Ellipse::new(8.0, 8.0, 3.0, 2.0, 0.5).unwrap();
        std::fs::write(
            tmp.path().join(ANNOTATION_FILE),
            format_annotation_line("f0.pgm", &e) + "\n",
        )
        .unwrap();

        let ds = DirDataset::open(tmp.path()).unwrap();
        assert_eq!(ds.len(), 1);
        let mut seen = Vec::new();
        ds.visit_samples(&mut |img, ann| {
            seen.push((img.clone(), *ann));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].0, img);
        assert_eq!(seen[0].1, e);
        assert_eq!(ds.sample_reads(), 1);
    }

    #[test]
    fn dir_dataset_missing_annotations() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            DirDataset::open(tmp.path()),
            Err(Error::Io { .. })
        ));
    }
}
