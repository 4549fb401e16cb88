//! Three-pass statistical training.
//!
//! Pass 1 collects the quantized shape distribution from annotations alone.
//! Pass 2 extracts landmark difference vectors per shape entry and reduces
//! them to at most five prototypes via mean shift. Pass 3 weights each
//! landmark by how reliably its difference sign agrees with the matched
//! prototype. Each pass reads every sample exactly once, so training cost is
//! linear in the dataset.

mod meanshift;
mod shapes;

pub use meanshift::mean_shift;
pub use shapes::{pass1_shapes, reduce_shapes, RawShapeCounts};

use std::time::Instant;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{downscale, extract, DiffCache};
use crate::geom::{GrayImage, LANDMARK_COUNT, MIN_IMAGE_DIM};
use crate::model::{
    DifferenceSets, FeatureWeights, LandmarkWeights, ModelConfig, PositionShapes, PupilModel,
    ShapeDistribution, MAX_PROTOTYPES,
};

/// Minimum valid landmarks for an observation or candidate to be usable.
pub const MIN_VALID_LANDMARKS: usize = 5;

/// Raw accumulator clamp applied before weight normalization.
const EPSILON_RAW: f64 = 1e-3;

/// Training configuration. `max_clusters` and `merge_tolerance` are fixed
/// constants of the method; they are exposed for reports but rejected by
/// [`train`] if altered.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub downscale_factor: u32,
    pub radial_step: f64,
    /// Flat-kernel bandwidth in summed-intensity units.
    pub mean_shift_bandwidth: f64,
    pub max_clusters: usize,
    pub merge_tolerance: i32,
    /// Post-normalization weight floor.
    pub weight_floor: f64,
    /// Entries with fewer pass-1 observations are pruned.
    pub min_count: u64,
    pub min_valid: usize,
}

impl TrainConfig {
    /// Defaults for a given downscale factor; the bandwidth scales with the
    /// block area (5% of the maximum block sum) so clustering behaves the
    /// same at every factor.
    pub fn for_factor(factor: u32) -> Self {
        Self {
            downscale_factor: factor,
            radial_step: 1.0,
            mean_shift_bandwidth: 0.05 * 255.0 * (factor * factor) as f64,
            max_clusters: MAX_PROTOTYPES,
            merge_tolerance: 1,
            weight_floor: 1e-3 / LANDMARK_COUNT as f64,
            min_count: 1,
            min_valid: MIN_VALID_LANDMARKS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.downscale_factor < 1 {
            return Err(Error::InvalidConfig("downscale factor must be >= 1".into()));
        }
        if !(self.radial_step > 0.0) {
            return Err(Error::InvalidConfig("radial step must be positive".into()));
        }
        if !(self.mean_shift_bandwidth > 0.0) {
            return Err(Error::BadBandwidth(self.mean_shift_bandwidth));
        }
        if self.max_clusters != MAX_PROTOTYPES {
            return Err(Error::InvalidConfig(format!(
                "max_clusters is fixed at {MAX_PROTOTYPES}"
            )));
        }
        if self.merge_tolerance != 1 {
            return Err(Error::InvalidConfig("merge_tolerance is fixed at 1".into()));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor * (LANDMARK_COUNT as f64) < 1.0) {
            return Err(Error::InvalidConfig("weight floor out of range".into()));
        }
        if self.min_valid < 1 || self.min_valid > LANDMARK_COUNT {
            return Err(Error::InvalidConfig("min_valid out of range".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            downscale_factor: self.downscale_factor,
            radial_step: self.radial_step,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_factor(2)
    }
}

/// Raw pass-2 output: difference observations per shape entry, aligned with
/// the shape distribution.
#[derive(Debug, Default)]
pub struct DiffObservations {
    pub buckets: Vec<Vec<Vec<[i32; LANDMARK_COUNT]>>>,
    pub skipped: u64,
}

fn check_frame(img: &GrayImage, expected: &mut Option<(u32, u32)>) -> Result<()> {
    if img.width() < MIN_IMAGE_DIM || img.height() < MIN_IMAGE_DIM {
        return Err(Error::InvalidImage(format!(
            "{}x{} below the {MIN_IMAGE_DIM} pixel minimum",
            img.width(),
            img.height()
        )));
    }
    match *expected {
        None => {
            *expected = Some((img.width(), img.height()));
            Ok(())
        }
        Some(dims) if dims == (img.width(), img.height()) => Ok(()),
        Some(dims) => Err(Error::InvalidImage(format!(
            "frame size {}x{} differs from {}x{} seen earlier",
            img.width(),
            img.height(),
            dims.0,
            dims.1
        ))),
    }
}

/// Pass 2: per sample, resolve its annotation to a shape entry and append
/// the extracted difference vector to that entry's bucket. Samples that do
/// not resolve, or with fewer than `min_valid` valid landmarks, are skipped.
pub fn pass2_diffs(
    dataset: &dyn Dataset,
    shapes: &ShapeDistribution,
    cfg: &TrainConfig,
) -> Result<DiffObservations> {
    let mut obs = DiffObservations {
        buckets: shapes
            .positions
            .iter()
            .map(|p| vec![Vec::new(); p.entries.len()])
            .collect(),
        skipped: 0,
    };
    let mut dims = None;
    dataset.visit_samples(&mut |img, ann| {
        check_frame(img, &mut dims)?;
        let Some((pi, ei)) = shapes.resolve(ann, cfg.merge_tolerance) else {
            obs.skipped += 1;
            return Ok(());
        };
        let pos = &shapes.positions[pi];
        let bsi = downscale(img, cfg.downscale_factor)?;
        let mut cache = DiffCache::new();
        let dv = extract(
            &bsi,
            (pos.x, pos.y),
            &pos.entries[ei].landmarks,
            cfg.radial_step,
            &mut cache,
        );
        if dv.valid_count() < cfg.min_valid {
            obs.skipped += 1;
            return Ok(());
        }
        obs.buckets[pi][ei].push(dv.values);
        Ok(())
    })?;
    Ok(obs)
}

/// Pass 3: weight every landmark of every prototype by sign agreement with
/// the observations that match it. Samples are scored over their valid
/// landmarks only; a zero difference counts as a match only against a zero
/// prototype entry.
pub fn pass3_weights(
    dataset: &dyn Dataset,
    shapes: &ShapeDistribution,
    diffsets: &DifferenceSets,
    cfg: &TrainConfig,
) -> Result<(FeatureWeights, u64)> {
    let mut accum: Vec<Vec<Vec<[i64; LANDMARK_COUNT]>>> = diffsets
        .prototypes
        .iter()
        .map(|pos| {
            pos.iter()
                .map(|protos| vec![[0i64; LANDMARK_COUNT]; protos.len()])
                .collect()
        })
        .collect();
    let mut skipped = 0u64;
    let mut dims = None;
    dataset.visit_samples(&mut |img, ann| {
        check_frame(img, &mut dims)?;
        let Some((pi, ei)) = shapes.resolve(ann, cfg.merge_tolerance) else {
            skipped += 1;
            return Ok(());
        };
        let pos = &shapes.positions[pi];
        let bsi = downscale(img, cfg.downscale_factor)?;
        let mut cache = DiffCache::new();
        let dv = extract(
            &bsi,
            (pos.x, pos.y),
            &pos.entries[ei].landmarks,
            cfg.radial_step,
            &mut cache,
        );
        if dv.valid_count() == 0 {
            skipped += 1;
            return Ok(());
        }
        let protos = &diffsets.prototypes[pi][ei];
        let mut best_j = 0usize;
        let mut best_dist = i64::MAX;
        for (j, proto) in protos.iter().enumerate() {
            let mut dist = 0i64;
            for k in 0..LANDMARK_COUNT {
                if dv.valid[k] {
                    dist += (proto.values[k] as i64 - dv.values[k] as i64).abs();
                }
            }
            if dist < best_dist {
                best_dist = dist;
                best_j = j;
            }
        }
        let proto = &protos[best_j];
        for k in 0..LANDMARK_COUNT {
            if dv.valid[k] {
                let delta = if proto.values[k].signum() == dv.values[k].signum() {
                    1
                } else {
                    -1
                };
                accum[pi][ei][best_j][k] += delta;
            }
        }
        Ok(())
    })?;

    let weights = FeatureWeights {
        weights: accum
            .into_iter()
            .map(|pos| {
                pos.into_iter()
                    .map(|entry| {
                        entry
                            .into_iter()
                            .map(|raw| normalize_weights(&raw, cfg.weight_floor))
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    Ok((weights, skipped))
}

/// Clamps raw sign-agreement accumulators to `EPSILON_RAW` and maps them to
/// a weight vector that sums to one with every component at least
/// `weight_floor`.
fn normalize_weights(raw: &[i64; LANDMARK_COUNT], weight_floor: f64) -> LandmarkWeights {
    let clamped: Vec<f64> = raw.iter().map(|&a| (a as f64).max(EPSILON_RAW)).collect();
    let sum: f64 = clamped.iter().sum();
    let scale = 1.0 - LANDMARK_COUNT as f64 * weight_floor;
    let mut out = [0f64; LANDMARK_COUNT];
    for (dst, c) in out.iter_mut().zip(clamped.iter()) {
        *dst = weight_floor + scale * (c / sum);
    }
    out
}

/// Per-pass counters and timings, serializable as a key:value report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub samples: usize,
    pub sample_reads: u64,
    pub pass1_skipped: u64,
    pub pass2_skipped: u64,
    pub pass3_skipped: u64,
    pub raw_shape_keys: usize,
    pub dropped_entries: usize,
    pub positions: usize,
    pub entries: usize,
    pub prototypes: usize,
    pub pass1_micros: u64,
    pub reduce_micros: u64,
    pub pass2_micros: u64,
    pub cluster_micros: u64,
    pub pass3_micros: u64,
    pub total_micros: u64,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("samples", self.samples.to_string());
        kv("sample_reads", self.sample_reads.to_string());
        kv("pass1_skipped", self.pass1_skipped.to_string());
        kv("pass2_skipped", self.pass2_skipped.to_string());
        kv("pass3_skipped", self.pass3_skipped.to_string());
        kv("raw_shape_keys", self.raw_shape_keys.to_string());
        kv("dropped_entries", self.dropped_entries.to_string());
        kv("positions", self.positions.to_string());
        kv("entries", self.entries.to_string());
        kv("prototypes", self.prototypes.to_string());
        kv("pass1_micros", self.pass1_micros.to_string());
        kv("reduce_micros", self.reduce_micros.to_string());
        kv("pass2_micros", self.pass2_micros.to_string());
        kv("cluster_micros", self.cluster_micros.to_string());
        kv("pass3_micros", self.pass3_micros.to_string());
        kv("total_micros", self.total_micros.to_string());
        s
    }
}

/// Runs the full three-pass pipeline and assembles a validated model.
///
/// Entries that receive no pass-2 observations (their landmark support never
/// clears `min_valid`) are dropped and the remaining probability mass is
/// renormalized, so every entry in the returned model carries 1..=5
/// prototypes.
pub fn train(dataset: &dyn Dataset, cfg: &TrainConfig) -> Result<(PupilModel, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = TrainReport {
        samples: dataset.len(),
        ..Default::default()
    };
    let t_start = Instant::now();

    let t = Instant::now();
    let mut raw = RawShapeCounts::new();
    dataset.visit_annotations(&mut |e| raw.observe(e))?;
    report.pass1_micros = t.elapsed().as_micros() as u64;
    report.pass1_skipped = raw.skipped;
    report.raw_shape_keys = raw.distinct_keys();

    let t = Instant::now();
    let shapes = reduce_shapes(&raw, cfg)?;
    report.reduce_micros = t.elapsed().as_micros() as u64;

    let t = Instant::now();
    let obs = pass2_diffs(dataset, &shapes, cfg)?;
    report.pass2_micros = t.elapsed().as_micros() as u64;
    report.pass2_skipped = obs.skipped;

    // Cluster each bucket; entries with no observations are dropped and the
    // shape mass renormalized.
    let t = Instant::now();
    let mut kept_positions: Vec<PositionShapes> = Vec::new();
    let mut kept_prototypes: Vec<Vec<Vec<crate::model::DifferenceSet>>> = Vec::new();
    let mut kept_count_total: u64 = 0;
    for (pos, buckets) in shapes.positions.iter().zip(obs.buckets.iter()) {
        let mut entries = Vec::new();
        let mut protos = Vec::new();
        for (entry, bucket) in pos.entries.iter().zip(buckets.iter()) {
            if bucket.is_empty() {
                report.dropped_entries += 1;
                continue;
            }
            let sets = mean_shift(bucket, cfg.mean_shift_bandwidth, cfg.max_clusters)?;
            kept_count_total += entry.count;
            entries.push(entry.clone());
            protos.push(sets);
        }
        if !entries.is_empty() {
            kept_positions.push(PositionShapes {
                x: pos.x,
                y: pos.y,
                entries,
            });
            kept_prototypes.push(protos);
        }
    }
    if kept_positions.is_empty() {
        return Err(Error::NoTrainingShapes);
    }
    for pos in &mut kept_positions {
        for entry in &mut pos.entries {
            entry.probability = entry.count as f64 / kept_count_total as f64;
        }
    }
    let shapes = ShapeDistribution {
        positions: kept_positions,
    };
    let diffsets = DifferenceSets {
        prototypes: kept_prototypes,
    };
    report.cluster_micros = t.elapsed().as_micros() as u64;

    let t = Instant::now();
    let (weights, pass3_skipped) = pass3_weights(dataset, &shapes, &diffsets, cfg)?;
    report.pass3_micros = t.elapsed().as_micros() as u64;
    report.pass3_skipped = pass3_skipped;

    let model = PupilModel {
        config: cfg.model_config(),
        shapes,
        diffsets,
        weights,
    };
    model.validate()?;

    report.positions = model.shapes.positions.len();
    report.entries = model.shapes.entry_count();
    report.prototypes = model
        .diffsets
        .prototypes
        .iter()
        .flat_map(|p| p.iter())
        .map(|protos| protos.len())
        .sum();
    report.sample_reads = dataset.sample_reads();
    report.total_micros = t_start.elapsed().as_micros() as u64;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MemoryDataset;
    use crate::geom::Ellipse;
    use crate::synth::{render, SceneParams};

    fn scene(cx: f64, cy: f64, r: f64) -> SceneParams {
        SceneParams {
            pupil: Ellipse::new(cx, cy, r, r, 0.0).unwrap(),
            ..SceneParams::default()
        }
    }

    fn fixed_scene_dataset(n: usize) -> MemoryDataset {
        let (img, truth) = render(&scene(96.0, 72.0, 10.0)).unwrap();
        MemoryDataset::new(vec![(img, truth); n])
    }

    #[test]
    fn train_single_scene_smoke() {
        let ds = fixed_scene_dataset(50);
        let (model, report) = train(&ds, &TrainConfig::default()).unwrap();
        assert_eq!(model.shapes.entry_count(), 1);
        assert_eq!(model.diffsets.prototypes[0][0].len(), 1);
        assert_eq!(report.sample_reads, 150);
        assert_eq!(report.entries, 1);
        // All observations identical: every valid landmark agrees in sign, so
        // the weights are uniform.
        for w in &model.weights.weights[0][0][0] {
            assert!((w - 0.125).abs() < 1e-9);
        }
    }

    #[test]
    fn train_is_deterministic() {
        let ds1 = fixed_scene_dataset(20);
        let ds2 = fixed_scene_dataset(20);
        let (m1, _) = train(&ds1, &TrainConfig::default()).unwrap();
        let (m2, _) = train(&ds2, &TrainConfig::default()).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let ds = MemoryDataset::new(Vec::new());
        assert!(matches!(
            train(&ds, &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn train_rejects_tampered_constants() {
        let ds = fixed_scene_dataset(3);
        let mut cfg = TrainConfig::default();
        cfg.max_clusters = 7;
        assert!(train(&ds, &cfg).is_err());
        let mut cfg = TrainConfig::default();
        cfg.merge_tolerance = 2;
        assert!(train(&ds, &cfg).is_err());
    }

    #[test]
    fn pass2_counts_unresolved_samples() {
        let (img, truth) = render(&scene(96.0, 72.0, 10.0)).unwrap();
        let far = Ellipse::new(30.0, 30.0, 10.0, 10.0, 0.0).unwrap();
        let ds = MemoryDataset::new(vec![(img.clone(), truth), (img, far)]);
        let raw = pass1_shapes([&truth]);
        let shapes = reduce_shapes(&raw, &TrainConfig::default()).unwrap();
        let obs = pass2_diffs(&ds, &shapes, &TrainConfig::default()).unwrap();
        assert_eq!(obs.skipped, 1);
        assert_eq!(obs.buckets[0][0].len(), 1);
    }

    #[test]
    fn pass2_additive_offsets_give_identical_observations() {
        let (img, truth) = render(&scene(96.0, 72.0, 10.0)).unwrap();
        let mut samples = Vec::new();
        for c in 0..30 {
            samples.push((img.shifted(c), truth));
        }
        let ds = MemoryDataset::new(samples);
        let raw = pass1_shapes([&truth]);
        let shapes = reduce_shapes(&raw, &TrainConfig::default()).unwrap();
        let obs = pass2_diffs(&ds, &shapes, &TrainConfig::default()).unwrap();
        let bucket = &obs.buckets[0][0];
        assert_eq!(bucket.len(), 30);
        assert!(bucket.iter().all(|v| v == &bucket[0]));
    }

    #[test]
    fn weight_normalization_examples() {
        let floor = 1e-3 / 8.0;
        // Equal accumulators -> exactly uniform.
        let w = normalize_weights(&[5; 8], floor);
        for v in &w {
            assert!((v - 0.125).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // One landmark always disagreeing pins it to the floor while the
        // others split the rest.
        let w = normalize_weights(&[-20, 20, 20, 20, 20, 20, 20, 20], floor);
        assert!(w[0] >= floor && w[0] < 2.0 * floor);
        for v in &w[1..] {
            assert!((v - 1.0 / 7.0).abs() < 0.01);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Zero samples -> uniform.
        let w = normalize_weights(&[0; 8], floor);
        for v in &w {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupted_landmark_gets_lower_weight() {
        // Half the samples flip the sign of landmark 3 (a reflection-style
        // corruption); its weight must end below the mean of the others.
        let (img, truth) = render(&scene(96.0, 72.0, 10.0)).unwrap();
        let mut corrupted = img.clone();
        {
            let lms = crate::geom::ellipse_landmarks(&truth);
            let (cx, cy) = crate::geom::quantize_center(&truth);
            let (dx, dy) = lms.points[3];
            let (nx, ny) = lms.normals[3];
            // Saturate exactly landmark 3's inner sample block (factor 2).
            let ix = crate::geom::round_away((cx + dx) as f64 / 2.0 - nx) as u32;
            let iy = crate::geom::round_away((cy + dy) as f64 / 2.0 - ny) as u32;
            for y in iy * 2..iy * 2 + 2 {
                for x in ix * 2..ix * 2 + 2 {
                    corrupted.pixels_mut()[y as usize * 192 + x as usize] = 255;
                }
            }
        }
        let mut samples = Vec::new();
        for i in 0..40 {
            let frame = if i % 2 == 0 { img.clone() } else { corrupted.clone() };
            samples.push((frame, truth));
        }
        let ds = MemoryDataset::new(samples);
        // One fat cluster, so clean and corrupted observations share a
        // prototype and the sign disagreements accumulate on it.
        let cfg = TrainConfig {
            mean_shift_bandwidth: 10_000.0,
            ..TrainConfig::default()
        };
        let (model, _) = train(&ds, &cfg).unwrap();
        let w = &model.weights.weights[0][0][0];
        let others: f64 = w
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != 3)
            .map(|(_, v)| v)
            .sum::<f64>()
            / 7.0;
        assert!(
            w[3] < others,
            "corrupted landmark weight {} not below mean {}",
            w[3],
            others
        );
    }
}
