//! Pass 1: collecting quantized shape statistics and reducing them into the
//! shape distribution.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::{ellipse_landmarks, quantize_center, Ellipse, LANDMARK_COUNT};
use crate::model::{within_tolerance, PositionShapes, ShapeDistribution, ShapeEntry};

use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct RawKey {
    x: i32,
    y: i32,
    offsets: [(i32, i32); LANDMARK_COUNT],
}

#[derive(Debug, Clone, Default)]
struct RawStats {
    count: u64,
    sum_cx: f64,
    sum_cy: f64,
    sum_a: f64,
    sum_b: f64,
    sum_theta: f64,
}

impl RawStats {
    fn absorb(&mut self, other: &RawStats) {
        self.count += other.count;
        self.sum_cx += other.sum_cx;
        self.sum_cy += other.sum_cy;
        self.sum_a += other.sum_a;
        self.sum_b += other.sum_b;
        self.sum_theta += other.sum_theta;
    }
}

/// Raw pass-1 accumulator: counts per (quantized center, quantized landmark
/// offsets) key, O(1) per annotation.
#[derive(Debug, Default)]
pub struct RawShapeCounts {
    map: BTreeMap<RawKey, RawStats>,
    /// Annotations rejected because a semi-axis was below one pixel.
    pub skipped: u64,
    /// Annotations accepted.
    pub accepted: u64,
}

impl RawShapeCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, e: &Ellipse) {
        if e.a < 1.0 || e.b < 1.0 {
            self.skipped += 1;
            return;
        }
        let (x, y) = quantize_center(e);
        let offsets = ellipse_landmarks(e).points;
        let stats = self.map.entry(RawKey { x, y, offsets }).or_default();
        stats.count += 1;
        stats.sum_cx += e.cx;
        stats.sum_cy += e.cy;
        stats.sum_a += e.a;
        stats.sum_b += e.b;
        stats.sum_theta += e.theta;
        self.accepted += 1;
    }

    pub fn distinct_keys(&self) -> usize {
        self.map.len()
    }
}

/// Accumulates a stream of annotations into raw shape counts.
pub fn pass1_shapes<'a>(annotations: impl IntoIterator<Item = &'a Ellipse>) -> RawShapeCounts {
    let mut counts = RawShapeCounts::new();
    for e in annotations {
        counts.observe(e);
    }
    counts
}

/// Greedy shape merging: per position, keys are taken in descending count
/// order (lexicographic offsets break ties) and any later key within
/// Chebyshev distance `merge_tolerance` at all eight landmarks is absorbed
/// into the first kept key it matches. Merged ellipse parameters are the
/// count-weighted mean over all absorbed members; the kept key's offsets
/// stay the entry's identity so retained entries remain pairwise separated.
pub fn reduce_shapes(raw: &RawShapeCounts, cfg: &TrainConfig) -> Result<ShapeDistribution> {
    if raw.map.is_empty() {
        return Err(Error::NoTrainingShapes);
    }

    struct Kept {
        offsets: [(i32, i32); LANDMARK_COUNT],
        stats: RawStats,
    }

    // BTreeMap iteration groups keys by (x, y) already.
    let mut positions: Vec<((i32, i32), Vec<Kept>)> = Vec::new();
    let mut group: Vec<(&RawKey, &RawStats)> = Vec::new();

    let flush = |group: &mut Vec<(&RawKey, &RawStats)>,
                     positions: &mut Vec<((i32, i32), Vec<Kept>)>| {
        if group.is_empty() {
            return;
        }
        group.sort_by(|a, b| b.1.count.cmp(&a.1.count).then(a.0.offsets.cmp(&b.0.offsets)));
        let mut kept: Vec<Kept> = Vec::new();
        for (key, stats) in group.iter() {
            match kept
                .iter_mut()
                .find(|k| within_tolerance(&k.offsets, &key.offsets, cfg.merge_tolerance))
            {
                Some(k) => k.stats.absorb(stats),
                None => kept.push(Kept {
                    offsets: key.offsets,
                    stats: (*stats).clone(),
                }),
            }
        }
        let (x, y) = (group[0].0.x, group[0].0.y);
        positions.push(((x, y), kept));
        group.clear();
    };

    for (key, stats) in &raw.map {
        if let Some((prev, _)) = group.last() {
            if (prev.x, prev.y) != (key.x, key.y) {
                flush(&mut group, &mut positions);
            }
        }
        group.push((key, stats));
    }
    flush(&mut group, &mut positions);

    // Drop under-supported entries, then build the distribution.
    let mut total: u64 = 0;
    for (_, kept) in &mut positions {
        kept.retain(|k| k.stats.count >= cfg.min_count);
        kept.sort_by(|a, b| b.stats.count.cmp(&a.stats.count).then(a.offsets.cmp(&b.offsets)));
        total += kept.iter().map(|k| k.stats.count).sum::<u64>();
    }
    positions.retain(|(_, kept)| !kept.is_empty());
    if positions.is_empty() || total == 0 {
        return Err(Error::NoTrainingShapes);
    }

    let mut out = ShapeDistribution::default();
    positions.sort_by_key(|&((x, y), _)| (y, x));
    for ((x, y), kept) in positions {
        let mut entries = Vec::with_capacity(kept.len());
        for k in kept {
            let n = k.stats.count as f64;
            let ellipse = Ellipse::new(
                k.stats.sum_cx / n,
                k.stats.sum_cy / n,
                k.stats.sum_a / n,
                k.stats.sum_b / n,
                k.stats.sum_theta / n,
            )?;
            // Landmark offsets keep the dominant key's identity; normals come
            // from the merged mean ellipse.
            let mut landmarks = ellipse_landmarks(&ellipse);
            landmarks.points = k.offsets;
            entries.push(ShapeEntry {
                ellipse,
                landmarks,
                probability: k.stats.count as f64 / total as f64,
                count: k.stats.count,
            });
        }
        out.positions.push(PositionShapes { x, y, entries });
    }
    Ok(out)
}
