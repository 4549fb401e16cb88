//! The trained detector model: shape distribution, difference-set prototypes
//! and per-landmark feature weights, all keyed by the same
//! (position, ellipse) universe.

use crate::error::{Error, Result};
use crate::geom::{quantize_center, Ellipse, LandmarkSet, LANDMARK_COUNT};

/// Maximum difference-set prototypes per (position, ellipse) entry.
pub const MAX_PROTOTYPES: usize = 5;

/// Per-prototype landmark weight vector, normalized to sum to one.
pub type LandmarkWeights = [f64; LANDMARK_COUNT];

/// Feature geometry shared between training and detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Block-sum downscale factor used for every image.
    pub downscale_factor: u32,
    /// Inner/outer sample distance along the landmark normal, in downscaled
    /// pixels.
    pub radial_step: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            downscale_factor: 2,
            radial_step: 1.0,
        }
    }
}

/// One quantized ellipse observed at a position: its mean parameters, its
/// identifying landmark offsets, and its share of the training mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEntry {
    pub ellipse: Ellipse,
    pub landmarks: LandmarkSet,
    /// Joint probability of (this ellipse, this position) over the whole
    /// training set.
    pub probability: f64,
    pub count: u64,
}

/// All shape entries anchored at one integer position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionShapes {
    pub x: i32,
    pub y: i32,
    pub entries: Vec<ShapeEntry>,
}

/// The reduced conditional shape distribution: for every integer position in
/// the search area, the ellipses seen there with their empirical mass.
/// Positions are sorted by (y, x); entry index within a position is the
/// ellipse id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeDistribution {
    pub positions: Vec<PositionShapes>,
}

impl ShapeDistribution {
    pub fn entry_count(&self) -> usize {
        self.positions.iter().map(|p| p.entries.len()).sum()
    }

    pub fn total_probability(&self) -> f64 {
        self.positions
            .iter()
            .flat_map(|p| p.entries.iter())
            .map(|e| e.probability)
            .sum()
    }

    pub fn find_position(&self, x: i32, y: i32) -> Option<&PositionShapes> {
        self.positions
            .binary_search_by(|p| (p.y, p.x).cmp(&(y, x)))
            .ok()
            .map(|i| &self.positions[i])
    }

    /// Index pair of the entry a ground-truth ellipse resolves to: same
    /// quantized center, all eight landmark offsets within the merge
    /// tolerance. Entries are scanned in stored (mass) order.
    pub fn resolve(&self, e: &Ellipse, tolerance: i32) -> Option<(usize, usize)> {
        let (x, y) = quantize_center(e);
        let pos_idx = self
            .positions
            .binary_search_by(|p| (p.y, p.x).cmp(&(y, x)))
            .ok()?;
        let offsets = crate::geom::ellipse_landmarks(e).points;
        let pos = &self.positions[pos_idx];
        pos.entries
            .iter()
            .position(|entry| within_tolerance(&entry.landmarks.points, &offsets, tolerance))
            .map(|entry_idx| (pos_idx, entry_idx))
    }
}

/// Chebyshev proximity of two landmark offset sets at every landmark.
pub(crate) fn within_tolerance(
    a: &[(i32, i32); LANDMARK_COUNT],
    b: &[(i32, i32); LANDMARK_COUNT],
    tolerance: i32,
) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|(p, q)| (p.0 - q.0).abs() <= tolerance && (p.1 - q.1).abs() <= tolerance)
}

/// One appearance prototype: eight landmark differences plus how many
/// training observations clustered into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceSet {
    pub values: [i32; LANDMARK_COUNT],
    pub member_count: u64,
}

/// Difference-set prototypes, aligned index-for-index with
/// [`ShapeDistribution`]: `prototypes[pos][entry]` lists 1..=5 prototypes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DifferenceSets {
    pub prototypes: Vec<Vec<Vec<DifferenceSet>>>,
}

/// Per-prototype landmark weights, aligned index-for-index with
/// [`DifferenceSets`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureWeights {
    pub weights: Vec<Vec<Vec<LandmarkWeights>>>,
}

/// Serialized aggregate of everything the detector needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilModel {
    pub config: ModelConfig,
    pub shapes: ShapeDistribution,
    pub diffsets: DifferenceSets,
    pub weights: FeatureWeights,
}

const PROBABILITY_SUM_TOL: f64 = 1e-9;

impl PupilModel {
    /// Checks the cross-table invariants: aligned key universes, probability
    /// mass summing to one, 1..=5 prototypes per entry, weight vectors
    /// summing to one.
    pub fn validate(&self) -> Result<()> {
        if self.config.downscale_factor < 1 {
            return Err(Error::InvalidModel("downscale factor must be >= 1".into()));
        }
        if !(self.config.radial_step.is_finite() && self.config.radial_step > 0.0) {
            return Err(Error::InvalidModel("radial step must be positive".into()));
        }
        if self.shapes.positions.is_empty() {
            return Err(Error::InvalidModel("empty shape distribution".into()));
        }
        if self.diffsets.prototypes.len() != self.shapes.positions.len()
            || self.weights.weights.len() != self.shapes.positions.len()
        {
            return Err(Error::InvalidModel("table position counts differ".into()));
        }
        let mut prev_key: Option<(i32, i32)> = None;
        for (pi, pos) in self.shapes.positions.iter().enumerate() {
            let key = (pos.y, pos.x);
            if let Some(prev) = prev_key {
                if key <= prev {
                    return Err(Error::InvalidModel("positions not sorted by (y, x)".into()));
                }
            }
            prev_key = Some(key);
            if pos.entries.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "position ({}, {}) has no entries",
                    pos.x, pos.y
                )));
            }
            let dsets = &self.diffsets.prototypes[pi];
            let wsets = &self.weights.weights[pi];
            if dsets.len() != pos.entries.len() || wsets.len() != pos.entries.len() {
                return Err(Error::InvalidModel(format!(
                    "entry counts differ at ({}, {})",
                    pos.x, pos.y
                )));
            }
            for (ei, entry) in pos.entries.iter().enumerate() {
                if quantize_center(&entry.ellipse) != (pos.x, pos.y) {
                    return Err(Error::InvalidModel(format!(
                        "entry center does not quantize to its key ({}, {})",
                        pos.x, pos.y
                    )));
                }
                let protos = &dsets[ei];
                if protos.is_empty() || protos.len() > MAX_PROTOTYPES {
                    return Err(Error::InvalidModel(format!(
                        "entry ({}, {}, {ei}) has {} prototypes",
                        pos.x,
                        pos.y,
                        protos.len()
                    )));
                }
                if wsets[ei].len() != protos.len() {
                    return Err(Error::InvalidModel(format!(
                        "weights misaligned at ({}, {}, {ei})",
                        pos.x, pos.y
                    )));
                }
                for w in &wsets[ei] {
                    let sum: f64 = w.iter().sum();
                    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
                        return Err(Error::InvalidModel(format!(
                            "weight vector sums to {sum} at ({}, {}, {ei})",
                            pos.x, pos.y
                        )));
                    }
                    if w.iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::InvalidModel(format!(
                            "non-positive weight at ({}, {}, {ei})",
                            pos.x, pos.y
                        )));
                    }
                }
            }
        }
        let total = self.shapes.total_probability();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "shape probabilities sum to {total}"
            )));
        }
        Ok(())
    }
}
