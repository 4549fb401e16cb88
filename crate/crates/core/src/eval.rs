//! Segmentation metrics, cumulative curves, spatial grid maps and the
//! single-core timing harness.

use std::time::Instant;

use crate::detect::{detect, Detection};
use crate::error::{Error, Result};
use crate::geom::{rasterize, Ellipse, GrayImage};
use crate::model::PupilModel;

/// Outcome for one evaluated frame. `center_error` is infinite and `iou`
/// zero when there was no detection; such frames are excluded from metric
/// means and reported through the failure rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_id: String,
    pub truth: Ellipse,
    pub detection: Option<Detection>,
    pub iou: f64,
    pub center_error: f64,
    pub detect_time_us: u64,
}

/// Which per-frame metric a curve or grid map aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Euclidean center error in pixels; lower is better, curves count
    /// `value <= threshold`.
    CenterError,
    /// Mask intersection over union; higher is better, curves count
    /// `value >= threshold`.
    Iou,
}

impl Metric {
    fn of(self, r: &FrameResult) -> Option<f64> {
        if r.detection.is_none() {
            return None;
        }
        match self {
            Metric::CenterError => Some(r.center_error),
            Metric::Iou => Some(r.iou),
        }
    }
}

/// Mask IoU of two ellipses rasterized at the same frame size. Two empty
/// masks give 0.
pub fn iou(truth: &Ellipse, det: &Ellipse, width: u32, height: u32) -> f64 {
    let a = rasterize(truth, width, height);
    let b = rasterize(det, width, height);
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.bits().iter().zip(b.bits().iter()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Sub-pixel Euclidean distance between ellipse centers.
pub fn center_error(truth: &Ellipse, det: &Ellipse) -> f64 {
    ((truth.cx - det.cx).powi(2) + (truth.cy - det.cy).powi(2)).sqrt()
}

/// Runs the detector over annotated frames and collects per-frame results.
pub fn evaluate_frames<'a>(
    model: &PupilModel,
    frames: impl IntoIterator<Item = (String, &'a GrayImage, Ellipse)>,
) -> Result<Vec<FrameResult>> {
    let mut results = Vec::new();
    for (frame_id, img, truth) in frames {
        let start = Instant::now();
        let detection = detect(img, model)?;
        let detect_time_us = start.elapsed().as_micros() as u64;
        let (iou_v, err) = match &detection {
            Some(d) => (
                iou(&truth, &d.ellipse, img.width(), img.height()),
                center_error(&truth, &d.ellipse),
            ),
            None => (0.0, f64::INFINITY),
        };
        results.push(FrameResult {
            frame_id,
            truth,
            detection,
            iou: iou_v,
            center_error: err,
            detect_time_us,
        });
    }
    Ok(results)
}

/// Fraction of frames with no detection.
pub fn failure_rate(results: &[FrameResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.detection.is_none()).count() as f64 / results.len() as f64
}

pub fn default_error_thresholds() -> Vec<f64> {
    (0..=15).map(|t| t as f64).collect()
}

pub fn default_iou_thresholds() -> Vec<f64> {
    (0..=20).map(|t| t as f64 * 0.05).collect()
}

/// Cumulative curve rows `(threshold, fraction)`. Error metrics count frames
/// at or below the threshold, IoU counts frames at or above it; the
/// denominator is all frames, so failures depress the curve but never
/// satisfy a threshold.
pub fn cumulative_curve(
    results: &[FrameResult],
    metric: Metric,
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let n = results.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = results
                .iter()
                .filter_map(|r| metric.of(r))
                .filter(|&v| match metric {
                    Metric::CenterError => v <= t,
                    Metric::Iou => v >= t,
                })
                .count();
            (t, hits as f64 / n)
        })
        .collect())
}

pub fn curve_to_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in curve {
        s.push_str(&format!("{t},{f}\n"));
    }
    s
}

pub const GRID_CELLS: usize = 10;

/// Center errors are clipped here before grid averaging.
pub const GRID_ERROR_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridCell {
    /// Frames whose truth center fell in this cell.
    pub count: usize,
    /// Mean metric over detected frames in the cell; absent when no frame
    /// (or no detection) landed here.
    pub mean: Option<f64>,
}

/// Mean metric over a 10x10 partition of the image space, keyed by the
/// ground-truth center.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub metric: Metric,
    pub cells: [[GridCell; GRID_CELLS]; GRID_CELLS],
}

impl GridMap {
    pub fn total_count(&self) -> usize {
        self.cells
            .iter()
            .flat_map(|row| row.iter())
            .map(|c| c.count)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell_x,cell_y,count,mean\n");
        for cy in 0..GRID_CELLS {
            for cx in 0..GRID_CELLS {
                let cell = self.cells[cy][cx];
                match cell.mean {
                    Some(m) => s.push_str(&format!("{cx},{cy},{},{m}\n", cell.count)),
                    None => s.push_str(&format!("{cx},{cy},{},\n", cell.count)),
                }
            }
        }
        s
    }
}

fn grid_cell_of(truth: &Ellipse, width: u32, height: u32) -> (usize, usize) {
    let cx = ((GRID_CELLS as f64 * truth.cx / width as f64).floor() as i64)
        .clamp(0, GRID_CELLS as i64 - 1) as usize;
    let cy = ((GRID_CELLS as f64 * truth.cy / height as f64).floor() as i64)
        .clamp(0, GRID_CELLS as i64 - 1) as usize;
    (cx, cy)
}

/// Per-cell means over the truth-center grid. Center-error values are
/// clipped at [`GRID_ERROR_CLIP`] before averaging; IoU values are not.
pub fn grid_map(
    results: &[FrameResult],
    metric: Metric,
    width: u32,
    height: u32,
) -> Result<GridMap> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut counts = [[0usize; GRID_CELLS]; GRID_CELLS];
    let mut sums = [[0f64; GRID_CELLS]; GRID_CELLS];
    let mut detected = [[0usize; GRID_CELLS]; GRID_CELLS];
    for r in results {
        let (cx, cy) = grid_cell_of(&r.truth, width, height);
        counts[cy][cx] += 1;
        if let Some(v) = metric.of(r) {
            let v = match metric {
                Metric::CenterError => v.min(GRID_ERROR_CLIP),
                Metric::Iou => v,
            };
            sums[cy][cx] += v;
            detected[cy][cx] += 1;
        }
    }
    let mut cells = [[GridCell::default(); GRID_CELLS]; GRID_CELLS];
    for cy in 0..GRID_CELLS {
        for cx in 0..GRID_CELLS {
            cells[cy][cx] = GridCell {
                count: counts[cy][cx],
                mean: (detected[cy][cx] > 0).then(|| sums[cy][cx] / detected[cy][cx] as f64),
            };
        }
    }
    Ok(GridMap { metric, cells })
}

/// Timing report for single-threaded detection, microseconds per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub repetitions: usize,
    pub timed_calls: usize,
    pub warmup_calls: usize,
    pub median_us: u64,
    pub p95_us: u64,
    pub mean_us: f64,
    pub min_us: u64,
    pub max_us: u64,
    /// Single-core latency envelope this detector is designed against, for
    /// comparison in reports; never gated here.
    pub reference_ms: f64,
}

/// Calls trimmed from the front of the measurement sequence.
pub const BENCH_WARMUP_CALLS: usize = 10;

/// Reference single-core envelope recorded alongside measurements.
pub const BENCH_REFERENCE_MS: f64 = 0.9;

impl BenchReport {
    pub fn to_text(&self) -> String {
        format!(
            "frames: {}\nrepetitions: {}\ntimed_calls: {}\nwarmup_calls: {}\nmedian_us: {}\np95_us: {}\nmean_us: {:.2}\nmin_us: {}\nmax_us: {}\nreference_ms: {}\n",
            self.frames,
            self.repetitions,
            self.timed_calls,
            self.warmup_calls,
            self.median_us,
            self.p95_us,
            self.mean_us,
            self.min_us,
            self.max_us,
            self.reference_ms,
        )
    }
}

/// Times `detect` over the frames, single-threaded, excluding the first
/// [`BENCH_WARMUP_CALLS`] calls. Needs at least 100 frames.
pub fn bench(model: &PupilModel, frames: &[GrayImage], repetitions: usize) -> Result<BenchReport> {
    if frames.len() < 100 {
        return Err(Error::NotEnoughFrames {
            needed: 100,
            got: frames.len(),
        });
    }
    let repetitions = repetitions.max(1);
    let mut times = Vec::with_capacity(frames.len() * repetitions);
    for _ in 0..repetitions {
        for img in frames {
            let start = Instant::now();
            let _ = detect(img, model)?;
            times.push(start.elapsed().as_micros() as u64);
        }
    }
    let timed: Vec<u64> = times.iter().skip(BENCH_WARMUP_CALLS).copied().collect();
    let mut sorted = timed.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok(BenchReport {
        frames: frames.len(),
        repetitions,
        timed_calls: n,
        warmup_calls: BENCH_WARMUP_CALLS,
        median_us: sorted[n / 2],
        p95_us: sorted[(n * 95 / 100).min(n - 1)],
        mean_us: sorted.iter().sum::<u64>() as f64 / n as f64,
        min_us: sorted[0],
        max_us: sorted[n - 1],
        reference_ms: BENCH_REFERENCE_MS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Detection;

    fn ellipse(cx: f64, cy: f64, r: f64) -> Ellipse {
        Ellipse::new(cx, cy, r, r, 0.0).unwrap()
    }

    fn result_with_error(err: f64, truth: Ellipse) -> FrameResult {
        let det = Detection {
            ellipse: truth.translated(err, 0.0),
            position: (0, 0),
            score: 1.0,
            prototype_index: 0,
            valid_landmarks: 8,
            probability: 1.0,
        };
        FrameResult {
            frame_id: String::new(),
            truth,
            detection: Some(det),
            iou: 0.5,
            center_error: err,
            detect_time_us: 0,
        }
    }

    #[test]
    fn iou_identical_is_one() {
        let e = ellipse(50.0, 50.0, 10.0);
        assert_eq!(iou(&e, &e, 100, 100), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = ellipse(20.0, 20.0, 5.0);
        let b = ellipse(80.0, 80.0, 5.0);
        assert_eq!(iou(&a, &b, 100, 100), 0.0);
    }

    #[test]
    fn iou_concentric_circles_area_ratio() {
        let a = ellipse(50.0, 50.0, 10.0);
        let b = ellipse(50.0, 50.0, 5.0);
        let v = iou(&a, &b, 100, 100);
        assert!((v - 0.25).abs() <= 0.02, "iou {v}");
    }

    #[test]
    fn iou_is_symmetric() {
        let a = Ellipse::new(48.0, 52.0, 9.0, 7.0, 0.4).unwrap();
        let b = Ellipse::new(53.0, 50.0, 11.0, 8.0, 1.2).unwrap();
        assert_eq!(iou(&a, &b, 100, 100), iou(&b, &a, 100, 100));
    }

    #[test]
    fn center_error_examples() {
        assert_eq!(center_error(&ellipse(0.0, 0.0, 5.0), &ellipse(0.0, 0.0, 9.0)), 0.0);
        assert_eq!(center_error(&ellipse(0.0, 0.0, 5.0), &ellipse(3.0, 4.0, 5.0)), 5.0);
    }

    #[test]
    fn curve_all_zero_errors() {
        let truth = ellipse(50.0, 50.0, 10.0);
        let results: Vec<_> = (0..4).map(|_| result_with_error(0.0, truth)).collect();
        let curve =
            cumulative_curve(&results, Metric::CenterError, &default_error_thresholds()).unwrap();
        assert!(curve.iter().all(|&(_, f)| f == 1.0));
    }

    #[test]
    fn curve_partial_fraction() {
        let truth = ellipse(50.0, 50.0, 10.0);
        let results: Vec<_> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&e| result_with_error(e, truth))
            .collect();
        let curve = cumulative_curve(&results, Metric::CenterError, &[1.0]).unwrap();
        assert_eq!(curve[0], (1.0, 0.5));
    }

    #[test]
    fn curve_error_monotone_and_iou_antitone() {
        let truth = ellipse(50.0, 50.0, 10.0);
        let mut results: Vec<_> = (0..20)
            .map(|i| result_with_error(i as f64 * 0.7, truth))
            .collect();
        results[7].detection = None;
        results[7].center_error = f64::INFINITY;
        results[7].iou = 0.0;
        let err_curve =
            cumulative_curve(&results, Metric::CenterError, &default_error_thresholds()).unwrap();
        for w in err_curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        let iou_curve =
            cumulative_curve(&results, Metric::Iou, &default_iou_thresholds()).unwrap();
        for w in iou_curve.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
        assert!(cumulative_curve(&[], Metric::Iou, &[0.5]).is_err());
    }

    #[test]
    fn grid_map_single_cell() {
        let truth = ellipse(5.0, 5.0, 3.0);
        let results: Vec<_> = (0..3).map(|_| result_with_error(1.0, truth)).collect();
        let map = grid_map(&results, Metric::CenterError, 100, 100).unwrap();
        let occupied: usize = map
            .cells
            .iter()
            .flat_map(|r| r.iter())
            .filter(|c| c.count > 0)
            .count();
        assert_eq!(occupied, 1);
        assert_eq!(map.total_count(), 3);
        assert_eq!(map.cells[0][0].count, 3);
    }

    #[test]
    fn grid_map_clips_errors() {
        let truth = ellipse(5.0, 5.0, 3.0);
        let results = vec![result_with_error(25.0, truth)];
        let map = grid_map(&results, Metric::CenterError, 100, 100).unwrap();
        assert_eq!(map.cells[0][0].mean, Some(10.0));
    }

    #[test]
    fn grid_map_zero_error_everywhere() {
        let mut results = Vec::new();
        for gx in 0..10 {
            for gy in 0..10 {
                let truth = ellipse(gx as f64 * 10.0 + 5.0, gy as f64 * 10.0 + 5.0, 3.0);
                results.push(result_with_error(0.0, truth));
            }
        }
        let map = grid_map(&results, Metric::CenterError, 100, 100).unwrap();
        for row in &map.cells {
            for cell in row {
                assert_eq!(cell.mean, Some(0.0));
                assert_eq!(cell.count, 1);
            }
        }
    }

    #[test]
    fn csv_outputs_have_headers() {
        let truth = ellipse(50.0, 50.0, 10.0);
        let results = vec![result_with_error(1.0, truth)];
        let curve = cumulative_curve(&results, Metric::CenterError, &[0.0, 1.0]).unwrap();
        assert!(curve_to_csv(&curve).starts_with("threshold,fraction\n"));
        let map = grid_map(&results, Metric::Iou, 100, 100).unwrap();
        let csv = map.to_csv();
        assert!(csv.starts_with("cell_x,cell_y,count,mean\n"));
        assert_eq!(csv.lines().count(), 101);
    }
}
