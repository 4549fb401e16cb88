//! Deterministic synthetic eye frames with exact ground truth, plus the
//! augmentation recipe used to expand training data.
//!
//! Rendering is layered: sclera fill, iris disk, pupil ellipse, intensity
//! gradient, then an optional eyelid occlusion line. The returned annotation
//! is always the geometric pupil ellipse, independent of occlusion.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::dataset::{format_annotation_line, save_gray, ANNOTATION_FILE};
use crate::error::{Error, Result};
use crate::geom::{rasterize, round_away, Ellipse, GrayImage};

/// Straight occlusion line hanging from the top of the frame: pixels above
/// `y = coverage * height + slope * (x - width/2)` take the sclera value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyelidLine {
    pub slope: f64,
    /// Fraction of the frame height covered at the horizontal center.
    pub coverage: f64,
}

/// Full description of one rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    pub pupil: Ellipse,
    pub pupil_intensity: u8,
    pub iris_intensity: u8,
    pub iris_radius: f64,
    pub sclera_intensity: u8,
    pub gradient_angle: f64,
    pub gradient_magnitude: f64,
    pub eyelid: Option<EyelidLine>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 192,
            height: 144,
            pupil: Ellipse::new(96.0, 72.0, 10.0, 10.0, 0.0).expect("valid default pupil"),
            pupil_intensity: 10,
            iris_intensity: 80,
            iris_radius: 24.0,
            sclera_intensity: 180,
            gradient_angle: 0.0,
            gradient_magnitude: 0.0,
            eyelid: None,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidScene("zero frame dimension".into()));
        }
        if self.pupil_intensity > 40 {
            return Err(Error::InvalidScene(format!(
                "pupil intensity {} above 40",
                self.pupil_intensity
            )));
        }
        if !(self.pupil_intensity < self.iris_intensity
            && self.iris_intensity < self.sclera_intensity)
        {
            return Err(Error::InvalidScene(
                "dark-pupil ordering pupil < iris < sclera violated".into(),
            ));
        }
        if !(self.iris_radius > 0.0) {
            return Err(Error::InvalidScene("iris radius must be positive".into()));
        }
        let (cx, cy) = self.pupil.center();
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return Err(Error::InvalidScene(format!(
                "pupil center ({cx}, {cy}) outside the {}x{} frame",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Renders a scene and returns the frame with its exact pupil annotation.
pub fn render(params: &SceneParams) -> Result<(GrayImage, Ellipse)> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let (cx, cy) = params.pupil.center();
    let pupil_mask = rasterize(&params.pupil, w, h);
    let iris_r2 = params.iris_radius * params.iris_radius;

    let (sin_g, cos_g) = params.gradient_angle.sin_cos();
    // Projection extent of the frame onto the gradient direction.
    let corners = [
        (0.0, 0.0),
        (w as f64, 0.0),
        (0.0, h as f64),
        (w as f64, h as f64),
    ];
    let projections: Vec<f64> = corners.iter().map(|&(x, y)| x * cos_g + y * sin_g).collect();
    let proj_min = projections.iter().cloned().fold(f64::INFINITY, f64::min);
    let proj_max = projections.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let proj_span = (proj_max - proj_min).max(1e-9);

    let img = GrayImage::from_fn(w, h, |px, py| {
        let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
        let mut value = params.sclera_intensity as i32;
        let (dx, dy) = (fx - cx, fy - cy);
        if dx * dx + dy * dy <= iris_r2 {
            value = params.iris_intensity as i32;
        }
        if pupil_mask.get(px, py) {
            value = params.pupil_intensity as i32;
        }
        if params.gradient_magnitude != 0.0 {
            let t = (fx * cos_g + fy * sin_g - proj_min) / proj_span;
            value += round_away(params.gradient_magnitude * (t - 0.5)) as i32;
        }
        if let Some(lid) = params.eyelid {
            let line = lid.coverage * h as f64 + lid.slope * (fx - w as f64 / 2.0);
            if fy < line {
                value = params.sclera_intensity as i32;
            }
        }
        value.clamp(0, 255) as u8
    });
    Ok((img, params.pupil))
}

/// Augmentation magnitudes; defaults are the standard recipe. All ranges can
/// be overridden individually, and zeroing them yields the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Per-pixel noise amplitude cap, as a fraction of the intensity range.
    pub noise_max_frac: f64,
    /// Reflection patch strength cap, as a fraction of the intensity range.
    pub reflection_max_frac: f64,
    /// Additive intensity offset range.
    pub contrast_range: (i32, i32),
    /// Integer shift range per axis, in pixels.
    pub shift_range: (i32, i32),
    /// Zoom factor range about the image center.
    pub zoom_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_max_frac: 0.20,
            reflection_max_frac: 0.20,
            contrast_range: (-40, 40),
            shift_range: (-10, 10),
            zoom_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// Configuration that leaves the sample untouched.
    pub fn identity() -> Self {
        Self {
            noise_max_frac: 0.0,
            reflection_max_frac: 0.0,
            contrast_range: (0, 0),
            shift_range: (0, 0),
            zoom_range: (1.0, 1.0),
        }
    }
}

/// An augmented sample. `off_frame` flags truths whose center left the
/// frame; callers skip those.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: GrayImage,
    pub truth: Ellipse,
    pub off_frame: bool,
}

fn secondary_scene(rng: &mut impl Rng, width: u32, height: u32) -> SceneParams {
    let margin = (width.min(height) / 4).max(1) as f64;
    let cx = rng.gen_range(margin..width as f64 - margin);
    let cy = rng.gen_range(margin..height as f64 - margin);
    let a = rng.gen_range(6.0..14.0);
    SceneParams {
        width,
        height,
        pupil: Ellipse::new(cx, cy, a, a, 0.0).expect("valid secondary pupil"),
        pupil_intensity: rng.gen_range(0..=20),
        iris_intensity: rng.gen_range(60..=100),
        iris_radius: a + rng.gen_range(6.0..=14.0),
        sclera_intensity: rng.gen_range(150..=220),
        gradient_angle: rng.gen_range(0.0..std::f64::consts::TAU),
        gradient_magnitude: rng.gen_range(0.0..30.0),
        eyelid: None,
    }
}

/// Applies noise, reflection, contrast, shift and zoom, each with an
/// independently sampled magnitude, transforming the annotation exactly
/// alongside the pixels.
pub fn augment(
    img: &GrayImage,
    truth: &Ellipse,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Augmented {
    let (w, h) = (img.width(), img.height());
    let mut image = img.clone();
    let mut truth = *truth;

    // Per-pixel uniform noise up to an image-level amplitude.
    let noise_cap = cfg.noise_max_frac * 255.0;
    if noise_cap > 0.0 {
        let level = round_away(rng.gen_range(0.0..=noise_cap)) as i32;
        if level > 0 {
            for p in image.pixels_mut() {
                let delta = rng.gen_range(-level..=level);
                *p = (*p as i32 + delta).clamp(0, 255) as u8;
            }
        }
    }

    // Additive reflection patch taken from a second rendered scene.
    if cfg.reflection_max_frac > 0.0 {
        let strength = rng.gen_range(0.0..=cfg.reflection_max_frac);
        let second = render(&secondary_scene(rng, w, h)).expect("secondary scene renders");
        let pw = rng.gen_range(w / 8..=w / 3).max(1);
        let ph = rng.gen_range(h / 8..=h / 3).max(1);
        let px0 = rng.gen_range(0..w.saturating_sub(pw).max(1));
        let py0 = rng.gen_range(0..h.saturating_sub(ph).max(1));
        if strength > 0.0 {
            let pixels = image.pixels_mut();
            for y in py0..(py0 + ph).min(h) {
                for x in px0..(px0 + pw).min(w) {
                    let idx = y as usize * w as usize + x as usize;
                    let add = round_away(second.0.get(x, y) as f64 * strength) as i32;
                    pixels[idx] = (pixels[idx] as i32 + add).clamp(0, 255) as u8;
                }
            }
        }
    }

    // Additive contrast offset.
    let offset = rng.gen_range(cfg.contrast_range.0..=cfg.contrast_range.1);
    if offset != 0 {
        image = image.shifted(offset);
    }

    // Integer shift with edge-replicated fill; the truth moves identically.
    let dx = rng.gen_range(cfg.shift_range.0..=cfg.shift_range.1);
    let dy = rng.gen_range(cfg.shift_range.0..=cfg.shift_range.1);
    if (dx, dy) != (0, 0) {
        let src = image.clone();
        image = GrayImage::from_fn(w, h, |x, y| {
            let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as u32;
            let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as u32;
            src.get(sx, sy)
        });
        truth = truth.translated(dx as f64, dy as f64);
    }

    // Zoom about the image center, nearest-neighbor resample; axes and
    // center scale exactly.
    let factor = rng.gen_range(cfg.zoom_range.0..=cfg.zoom_range.1);
    if factor != 1.0 {
        let (ccx, ccy) = (w as f64 / 2.0, h as f64 / 2.0);
        let src = image.clone();
        image = GrayImage::from_fn(w, h, |x, y| {
            let sx = (x as f64 + 0.5 - ccx) / factor + ccx;
            let sy = (y as f64 + 0.5 - ccy) / factor + ccy;
            let ix = round_away(sx - 0.5).clamp(0, w as i64 - 1) as u32;
            let iy = round_away(sy - 0.5).clamp(0, h as i64 - 1) as u32;
            src.get(ix, iy)
        });
        truth = Ellipse {
            cx: ccx + (truth.cx - ccx) * factor,
            cy: ccy + (truth.cy - ccy) * factor,
            a: truth.a * factor,
            b: truth.b * factor,
            theta: truth.theta,
        };
    }

    let off_frame =
        truth.cx < 0.0 || truth.cy < 0.0 || truth.cx >= w as f64 || truth.cy >= h as f64;
    Augmented {
        image,
        truth,
        off_frame,
    }
}

/// Scene randomizer: pupil centers come from a fixed position grid and the
/// shape from a small family, while intensities, gradient and eyelid vary
/// continuously. Every field can be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSampler {
    pub width: u32,
    pub height: u32,
    pub center_x_values: Vec<f64>,
    pub center_y_values: Vec<f64>,
    /// Pupil shape family as (a, b, theta) triples.
    pub pupil_shapes: Vec<(f64, f64, f64)>,
    pub pupil_intensity: (u8, u8),
    pub iris_intensity: (u8, u8),
    pub sclera_intensity: (u8, u8),
    /// Iris radius is the pupil semi-major axis plus this range.
    pub iris_radius_extra: (f64, f64),
    pub gradient_magnitude: (f64, f64),
    pub eyelid_probability: f64,
    pub eyelid_slope: (f64, f64),
    pub eyelid_coverage: (f64, f64),
}

impl Default for SceneSampler {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Self {
            width: 192,
            height: 144,
            center_x_values: vec![64.0, 80.0, 96.0, 112.0, 128.0],
            center_y_values: vec![48.0, 60.0, 72.0, 84.0, 96.0],
            // Pairwise landmark Chebyshev distance >= 2, so family members
            // stay distinct entries under the merge tolerance.
            pupil_shapes: vec![
                (9.0, 9.0, 0.0),
                (12.0, 12.0, 0.0),
                (11.0, 8.8, 0.0),
                (11.0, 8.8, FRAC_PI_2),
            ],
            pupil_intensity: (6, 14),
            iris_intensity: (75, 90),
            sclera_intensity: (155, 200),
            iris_radius_extra: (8.0, 18.0),
            gradient_magnitude: (0.0, 25.0),
            eyelid_probability: 0.2,
            eyelid_slope: (-0.3, 0.3),
            eyelid_coverage: (0.05, 0.22),
        }
    }
}

impl SceneSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> SceneParams {
        let cx = self.center_x_values[rng.gen_range(0..self.center_x_values.len())];
        let cy = self.center_y_values[rng.gen_range(0..self.center_y_values.len())];
        let (a, b, theta) = self.pupil_shapes[rng.gen_range(0..self.pupil_shapes.len())];
        let pupil = Ellipse::new(cx, cy, a, b, theta).expect("sampler shape is valid");
        let eyelid = if rng.gen_range(0.0..1.0) < self.eyelid_probability {
            Some(EyelidLine {
                slope: rng.gen_range(self.eyelid_slope.0..=self.eyelid_slope.1),
                coverage: rng.gen_range(self.eyelid_coverage.0..=self.eyelid_coverage.1),
            })
        } else {
            None
        };
        SceneParams {
            width: self.width,
            height: self.height,
            pupil,
            pupil_intensity: rng.gen_range(self.pupil_intensity.0..=self.pupil_intensity.1),
            iris_intensity: rng.gen_range(self.iris_intensity.0..=self.iris_intensity.1),
            iris_radius: a + rng.gen_range(self.iris_radius_extra.0..=self.iris_radius_extra.1),
            sclera_intensity: rng.gen_range(self.sclera_intensity.0..=self.sclera_intensity.1),
            gradient_angle: rng.gen_range(0.0..std::f64::consts::TAU),
            gradient_magnitude: rng
                .gen_range(self.gradient_magnitude.0..=self.gradient_magnitude.1),
            eyelid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub scenes: usize,
    pub frames: usize,
    /// Augmented variants whose truth left the frame and were replaced by
    /// the unaugmented sample.
    pub off_frame_fallbacks: usize,
}

/// Writes `scenes * variants` frames plus the annotation file. Variant 0 of
/// each scene is the unaugmented render. Fully reproducible: scene `i` uses
/// an rng seeded with `seed ^ i`, so generation may be partitioned by scene
/// index without changing the output.
pub fn make_dataset(
    out_dir: impl AsRef<Path>,
    scenes: usize,
    variants: usize,
    sampler: &SceneSampler,
    aug: &AugmentConfig,
    seed: u64,
) -> Result<DatasetSummary> {
    let out_dir = out_dir.as_ref();
    if scenes == 0 || variants == 0 {
        return Err(Error::InvalidScene("need at least one scene and variant".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut annotations = String::new();
    let mut summary = DatasetSummary {
        scenes,
        frames: 0,
        off_frame_fallbacks: 0,
    };
    for i in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        let params = sampler.sample(&mut rng);
        let (img, truth) = render(&params)?;
        for v in 0..variants {
            let (frame, ann) = if v == 0 {
                (img.clone(), truth)
            } else {
                let aug_sample = augment(&img, &truth, aug, &mut rng);
                if aug_sample.off_frame {
                    summary.off_frame_fallbacks += 1;
                    (img.clone(), truth)
                } else {
                    (aug_sample.image, aug_sample.truth)
                }
            };
            let name = format!("frame_{i:05}_{v}.pgm");
            save_gray(&out_dir.join(&name), &frame)?;
            let _ = writeln!(annotations, "{}", format_annotation_line(&name, &ann));
            summary.frames += 1;
        }
    }
    let ann_path = out_dir.join(ANNOTATION_FILE);
    fs::write(&ann_path, annotations).map_err(|e| Error::io(&ann_path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::geom::quantize_center;
    use std::collections::BTreeSet;

    fn base_scene() -> SceneParams {
        SceneParams {
            pupil: Ellipse::new(96.0, 72.0, 10.0, 10.0, 0.0).unwrap(),
            pupil_intensity: 0,
            iris_intensity: 80,
            sclera_intensity: 200,
            ..SceneParams::default()
        }
    }

    #[test]
    fn pupil_pixels_stay_dark() {
        let (img, truth) = render(&base_scene()).unwrap();
        let mask = rasterize(&truth, img.width(), img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                if mask.get(x, y) {
                    assert!(img.get(x, y) <= 80);
                }
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let scene = SceneParams {
            gradient_magnitude: 20.0,
            gradient_angle: 1.0,
            eyelid: Some(EyelidLine {
                slope: 0.1,
                coverage: 0.15,
            }),
            ..base_scene()
        };
        assert_eq!(render(&scene).unwrap(), render(&scene).unwrap());
    }

    #[test]
    fn mean_inside_below_mean_outside() {
        let scene = SceneParams {
            gradient_magnitude: 15.0,
            gradient_angle: 0.7,
            ..base_scene()
        };
        let (img, truth) = render(&scene).unwrap();
        let mask = rasterize(&truth, img.width(), img.height());
        let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if mask.get(x, y) {
                    sum_in += img.get(x, y) as u64;
                    n_in += 1;
                } else {
                    sum_out += img.get(x, y) as u64;
                    n_out += 1;
                }
            }
        }
        assert!((sum_in as f64 / n_in as f64) < (sum_out as f64 / n_out as f64));
    }

    #[test]
    fn render_rejects_center_outside() {
        let scene = SceneParams {
            pupil: Ellipse::new(-5.0, 72.0, 10.0, 10.0, 0.0).unwrap(),
            ..SceneParams::default()
        };
        assert!(render(&scene).is_err());
    }

    #[test]
    fn render_rejects_bad_intensity_order() {
        let scene = SceneParams {
            pupil_intensity: 30,
            iris_intensity: 20,
            ..SceneParams::default()
        };
        assert!(render(&scene).is_err());
    }

    #[test]
    fn identity_augmentation_is_identity() {
        let (img, truth) = render(&base_scene()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&img, &truth, &AugmentConfig::identity(), &mut rng);
        assert_eq!(out.image, img);
        assert_eq!(out.truth, truth);
        assert!(!out.off_frame);
    }

    #[test]
    fn shift_moves_truth_exactly() {
        let (img, truth) = render(&base_scene()).unwrap();
        let cfg = AugmentConfig {
            shift_range: (3, 3),
            ..AugmentConfig::identity()
        };
        // The two shift draws both come from the degenerate range (3, 3).
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&img, &truth, &cfg, &mut rng);
        assert_eq!(out.truth.cx, truth.cx + 3.0);
        assert_eq!(out.truth.cy, truth.cy + 3.0);
        assert_eq!(out.truth.a, truth.a);
        assert!(!out.off_frame);
    }

    #[test]
    fn zoom_scales_truth_exactly() {
        let (img, truth) = render(&base_scene()).unwrap();
        let cfg = AugmentConfig {
            zoom_range: (1.2, 1.2),
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&img, &truth, &cfg, &mut rng);
        assert_eq!(out.truth.a, truth.a * 1.2);
        assert_eq!(out.truth.b, truth.b * 1.2);
        assert_eq!(out.truth.cx, 96.0 + (truth.cx - 96.0) * 1.2);
    }

    #[test]
    fn off_frame_shift_is_flagged() {
        let scene = SceneParams {
            pupil: Ellipse::new(4.0, 4.0, 3.0, 3.0, 0.0).unwrap(),
            iris_radius: 8.0,
            ..SceneParams::default()
        };
        let (img, truth) = render(&scene).unwrap();
        let cfg = AugmentConfig {
            shift_range: (-10, -10),
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&img, &truth, &cfg, &mut rng);
        assert!(out.off_frame);
    }

    #[test]
    fn default_sampler_uses_grid_centers() {
        let tmp = tempfile::tempdir().unwrap();
        make_dataset(
            tmp.path(),
            500,
            1,
            &SceneSampler::default(),
            &AugmentConfig::default(),
            7,
        )
        .unwrap();
        let ds = crate::dataset::DirDataset::open(tmp.path()).unwrap();
        assert_eq!(ds.len(), 500);
        let centers: BTreeSet<(i32, i32)> = ds
            .entries()
            .iter()
            .map(|(_, e)| quantize_center(e))
            .collect();
        assert_eq!(centers.len(), 25);
    }

    #[test]
    fn make_dataset_is_reproducible() {
        let tmp_a = tempfile::tempdir().unwrap();
        let tmp_b = tempfile::tempdir().unwrap();
        for dir in [tmp_a.path(), tmp_b.path()] {
            make_dataset(
                dir,
                10,
                2,
                &SceneSampler::default(),
                &AugmentConfig::default(),
                42,
            )
            .unwrap();
        }
        let mut names: Vec<_> = std::fs::read_dir(tmp_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 21); // 20 frames + annotations
        for name in names {
            let a = std::fs::read(tmp_a.path().join(&name)).unwrap();
            let b = std::fs::read(tmp_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between runs");
        }
    }
}
