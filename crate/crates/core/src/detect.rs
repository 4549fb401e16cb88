//! The weighted-argmin detector.
//!
//! Every (position, ellipse) entry of the trained shape distribution is a
//! candidate. The detector extracts the eight landmark differences at the
//! candidate (memoized per frame), scores them against each prototype with
//! weighted L1 distance, and returns the global minimum. Exact score ties
//! fall back to the entry with higher training mass, then scan order.

use crate::error::{Error, Result};
use crate::features::{downscale, extract, extract_uncached, DiffCache, DifferenceVector};
use crate::geom::{rasterize, Ellipse, EllipseMask, GrayImage, LANDMARK_COUNT, MIN_IMAGE_DIM};
use crate::model::{DifferenceSet, LandmarkWeights, PupilModel};

pub use crate::train::MIN_VALID_LANDMARKS;

/// Relative tolerance under which two candidate scores count as an exact tie.
const SCORE_TIE_REL_TOL: f64 = 1e-9;

/// One detector answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub ellipse: Ellipse,
    /// The matched search-area position; equals the quantized ellipse center.
    pub position: (i32, i32),
    /// Weighted L1 distance to the best prototype, in summed-intensity units.
    pub score: f64,
    pub prototype_index: usize,
    pub valid_landmarks: usize,
    /// Training mass of the matched entry.
    pub probability: f64,
}

/// Scores an observation against every prototype of one entry. Weights are
/// renormalized over the valid landmarks so partial candidates compare on
/// the same scale as full ones. Returns the minimal score and its prototype
/// index (ties pick the lowest index), or `None` when fewer than `min_valid`
/// landmarks are valid.
pub fn score(
    obs: &DifferenceVector,
    prototypes: &[DifferenceSet],
    weights: &[LandmarkWeights],
    min_valid: usize,
) -> Option<(f64, usize)> {
    if obs.valid_count() < min_valid {
        return None;
    }
    let mut best: Option<(f64, usize)> = None;
    for (j, (proto, w)) in prototypes.iter().zip(weights.iter()).enumerate() {
        let mut wsum = 0.0;
        for k in 0..LANDMARK_COUNT {
            if obs.valid[k] {
                wsum += w[k];
            }
        }
        let mut s = 0.0;
        for k in 0..LANDMARK_COUNT {
            if obs.valid[k] {
                s += (proto.values[k] as f64 - obs.values[k] as f64).abs() * (w[k] / wsum);
            }
        }
        if best.map_or(true, |(bs, _)| s < bs) {
            best = Some((s, j));
        }
    }
    best
}

fn scores_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCORE_TIE_REL_TOL * a.abs().max(b.abs())
}

struct Candidate {
    pos_idx: usize,
    entry_idx: usize,
    score: f64,
    prototype_index: usize,
    valid_landmarks: usize,
    probability: f64,
}

/// True when `challenger` beats the incumbent `best`. Positions are scanned
/// in (y, x) order and entries in id order, so on a full tie the incumbent
/// (earlier in scan order) wins; a tied challenger only takes over with
/// strictly higher probability.
fn challenger_wins(challenger: &Candidate, best: &Candidate) -> bool {
    if scores_tie(challenger.score, best.score) {
        challenger.probability > best.probability
    } else {
        challenger.score < best.score
    }
}

fn check_image(img: &GrayImage, model: &PupilModel) -> Result<()> {
    if img.width() < MIN_IMAGE_DIM || img.height() < MIN_IMAGE_DIM {
        return Err(Error::InvalidImage(format!(
            "{}x{} below the {MIN_IMAGE_DIM} pixel minimum",
            img.width(),
            img.height()
        )));
    }
    let f = model.config.downscale_factor;
    if img.width() < f || img.height() < f {
        return Err(Error::BadDownscale {
            factor: f,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

fn run_detect(img: &GrayImage, model: &PupilModel, memoized: bool) -> Result<Option<Detection>> {
    check_image(img, model)?;
    let bsi = downscale(img, model.config.downscale_factor)?;
    let mut cache = DiffCache::new();
    let mut best: Option<Candidate> = None;
    for (pi, pos) in model.shapes.positions.iter().enumerate() {
        // Centers outside the image are skipped, not errors; a model trained
        // on larger frames stays usable on crops.
        if pos.x < 0
            || pos.y < 0
            || pos.x >= img.width() as i32
            || pos.y >= img.height() as i32
        {
            continue;
        }
        for (ei, entry) in pos.entries.iter().enumerate() {
            let obs = if memoized {
                extract(
                    &bsi,
                    (pos.x, pos.y),
                    &entry.landmarks,
                    model.config.radial_step,
                    &mut cache,
                )
            } else {
                extract_uncached(
                    &bsi,
                    (pos.x, pos.y),
                    &entry.landmarks,
                    model.config.radial_step,
                )
            };
            let Some((s, j)) = score(
                &obs,
                &model.diffsets.prototypes[pi][ei],
                &model.weights.weights[pi][ei],
                MIN_VALID_LANDMARKS,
            ) else {
                continue;
            };
            let candidate = Candidate {
                pos_idx: pi,
                entry_idx: ei,
                score: s,
                prototype_index: j,
                valid_landmarks: obs.valid_count(),
                probability: entry.probability,
            };
            if best.as_ref().map_or(true, |b| challenger_wins(&candidate, b)) {
                best = Some(candidate);
            }
        }
    }
    Ok(best.map(|c| {
        let pos = &model.shapes.positions[c.pos_idx];
        let entry = &pos.entries[c.entry_idx];
        Detection {
            ellipse: entry.ellipse,
            position: (pos.x, pos.y),
            score: c.score,
            prototype_index: c.prototype_index,
            valid_landmarks: c.valid_landmarks,
            probability: c.probability,
        }
    }))
}

/// Finds the best candidate over the whole search area. Returns `None` only
/// when no candidate was scorable (never thresholds internally).
pub fn detect(img: &GrayImage, model: &PupilModel) -> Result<Option<Detection>> {
    run_detect(img, model, true)
}

/// Verification twin of [`detect`]: identical contract and tie-breaking, but
/// every difference is recomputed naively with no memoization. Must return a
/// bit-identical [`Detection`].
pub fn detect_oracle(img: &GrayImage, model: &PupilModel) -> Result<Option<Detection>> {
    run_detect(img, model, false)
}

/// Segmentation mask of a detection at the given raster size.
pub fn segment(det: &Detection, width: u32, height: u32) -> EllipseMask {
    rasterize(&det.ellipse, width, height)
}
