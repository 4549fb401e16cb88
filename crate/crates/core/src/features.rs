//! Block-sum image downscaling and the elliptical-landmark difference
//! extractor.
//!
//! A feature is the signed difference between two downscaled block sums that
//! straddle the pupil boundary at a landmark: one sampled a radial step
//! inside the ellipse, one a radial step outside, both along the boundary
//! normal. Differences cancel any constant intensity offset exactly, which is
//! what makes the detector invariant to additive illumination shifts.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{round_away, GrayImage, LandmarkSet, LANDMARK_COUNT};

/// Exact integer block sums of an image downscaled by an integer factor.
///
/// Entry `(x, y)` is the sum of the `factor x factor` source block with its
/// top-left corner at `(x * factor, y * factor)`. Trailing rows/columns that
/// do not fill a whole block are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSumImage {
    width: u32,
    height: u32,
    factor: u32,
    sums: Vec<u32>,
}

impl BlockSumImage {
    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn factor(&self) -> u32 {
        self.factor
    }

    #[inline]
    pub fn sum_at(&self, x: u32, y: u32) -> u32 {
        self.sums[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    fn index(&self, x: i64, y: i64) -> Option<u32> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(y as u32 * self.width + x as u32)
        }
    }
}

/// Computes exact block sums; `factor` 1 reproduces the source pixels.
pub fn downscale(img: &GrayImage, factor: u32) -> Result<BlockSumImage> {
    if factor < 1 || img.width() < factor || img.height() < factor {
        return Err(Error::BadDownscale {
            factor,
            width: img.width(),
            height: img.height(),
        });
    }
    let width = img.width() / factor;
    let height = img.height() / factor;
    let mut sums = vec![0u32; width as usize * height as usize];
    for by in 0..height {
        for bx in 0..width {
            let mut sum = 0u32;
            for sy in 0..factor {
                for sx in 0..factor {
                    sum += img.get(bx * factor + sx, by * factor + sy) as u32;
                }
            }
            sums[by as usize * width as usize + bx as usize] = sum;
        }
    }
    Ok(BlockSumImage {
        width,
        height,
        factor,
        sums,
    })
}

/// The eight landmark differences observed for one (position, ellipse)
/// candidate. `valid[k]` is false when either sample of landmark `k` fell
/// outside the downscaled image; its value is 0 by convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceVector {
    pub values: [i32; LANDMARK_COUNT],
    pub valid: [bool; LANDMARK_COUNT],
}

impl DifferenceVector {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Per-frame memo of computed differences, keyed on the (inner, outer)
/// downscaled index pair. Overlapping candidates within one frame share
/// work; a repeated key never re-reads image memory.
#[derive(Debug, Default)]
pub struct DiffCache {
    map: HashMap<u64, i32>,
    lookups: u64,
    computed: u64,
}

impl DiffCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total cached difference requests this frame.
    pub fn lookups(&self) -> u64 {
        self.lookups
    }

    /// Differences actually computed from image memory (cache misses).
    pub fn computed(&self) -> u64 {
        self.computed
    }
}

#[inline]
fn sample_indices(
    bsi: &BlockSumImage,
    center: (i32, i32),
    offset: (i32, i32),
    normal: (f64, f64),
    radial_step: f64,
) -> Option<(u32, u32)> {
    let s = bsi.factor() as f64;
    let px = (center.0 + offset.0) as f64 / s;
    let py = (center.1 + offset.1) as f64 / s;
    let inner = (
        round_away(px - radial_step * normal.0),
        round_away(py - radial_step * normal.1),
    );
    let outer = (
        round_away(px + radial_step * normal.0),
        round_away(py + radial_step * normal.1),
    );
    let inner_idx = bsi.index(inner.0, inner.1)?;
    let outer_idx = bsi.index(outer.0, outer.1)?;
    Some((inner_idx, outer_idx))
}

/// Uncached landmark difference: inner block sum minus outer block sum along
/// the boundary normal. Out-of-bounds samples yield `(0, false)`.
pub fn landmark_diff_uncached(
    bsi: &BlockSumImage,
    center: (i32, i32),
    offset: (i32, i32),
    normal: (f64, f64),
    radial_step: f64,
) -> (i32, bool) {
    match sample_indices(bsi, center, offset, normal, radial_step) {
        Some((inner, outer)) => {
            let value = bsi.sums[inner as usize] as i32 - bsi.sums[outer as usize] as i32;
            (value, true)
        }
        None => (0, false),
    }
}

/// Memoized landmark difference; identical to [`landmark_diff_uncached`] in
/// value, but repeated (inner, outer) pairs within a frame hit the cache.
pub fn landmark_diff(
    bsi: &BlockSumImage,
    center: (i32, i32),
    offset: (i32, i32),
    normal: (f64, f64),
    radial_step: f64,
    cache: &mut DiffCache,
) -> (i32, bool) {
    match sample_indices(bsi, center, offset, normal, radial_step) {
        Some((inner, outer)) => {
            cache.lookups += 1;
            let key = (inner as u64) << 32 | outer as u64;
            let value = *cache.map.entry(key).or_insert_with(|| {
                cache.computed += 1;
                bsi.sums[inner as usize] as i32 - bsi.sums[outer as usize] as i32
            });
            (value, true)
        }
        None => (0, false),
    }
}

/// Applies [`landmark_diff`] to all eight landmarks of `lms` in order.
pub fn extract(
    bsi: &BlockSumImage,
    center: (i32, i32),
    lms: &LandmarkSet,
    radial_step: f64,
    cache: &mut DiffCache,
) -> DifferenceVector {
    let mut values = [0i32; LANDMARK_COUNT];
    let mut valid = [false; LANDMARK_COUNT];
    for k in 0..LANDMARK_COUNT {
        let (v, ok) = landmark_diff(bsi, center, lms.points[k], lms.normals[k], radial_step, cache);
        values[k] = v;
        valid[k] = ok;
    }
    DifferenceVector { values, valid }
}

/// Cache-free twin of [`extract`]; used by the verification detector.
pub fn extract_uncached(
    bsi: &BlockSumImage,
    center: (i32, i32),
    lms: &LandmarkSet,
    radial_step: f64,
) -> DifferenceVector {
    let mut values = [0i32; LANDMARK_COUNT];
    let mut valid = [false; LANDMARK_COUNT];
    for k in 0..LANDMARK_COUNT {
        let (v, ok) =
            landmark_diff_uncached(bsi, center, lms.points[k], lms.normals[k], radial_step);
        values[k] = v;
        valid[k] = ok;
    }
    DifferenceVector { values, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{ellipse_landmarks, rasterize, Ellipse};
    use proptest::prelude::*;

    #[test]
    fn downscale_2x2_block() {
        let img = GrayImage::new(2, 2, vec![10, 20, 30, 40]);
        let bsi = downscale(&img, 2).unwrap();
        assert_eq!((bsi.width(), bsi.height()), (1, 1));
        assert_eq!(bsi.sum_at(0, 0), 100);
    }

    #[test]
    fn downscale_factor_one_is_identity() {
        let img = GrayImage::from_fn(5, 4, |x, y| (x * 7 + y * 3) as u8);
        let bsi = downscale(&img, 1).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(bsi.sum_at(x, y), img.get(x, y) as u32);
            }
        }
    }

    #[test]
    fn downscale_drops_partial_blocks() {
        let img = GrayImage::filled(5, 5, 7);
        let bsi = downscale(&img, 2).unwrap();
        assert_eq!((bsi.width(), bsi.height()), (2, 2));
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(bsi.sum_at(x, y), 28);
            }
        }
    }

    #[test]
    fn downscale_rejects_bad_factor() {
        let img = GrayImage::filled(4, 4, 0);
        assert!(downscale(&img, 0).is_err());
        assert!(downscale(&img, 5).is_err());
    }

    #[test]
    fn uniform_image_has_zero_differences() {
        let img = GrayImage::filled(32, 32, 120);
        let bsi = downscale(&img, 2).unwrap();
        let e = Ellipse::new(16.0, 16.0, 5.0, 5.0, 0.0).unwrap();
        let lms = ellipse_landmarks(&e);
        let mut cache = DiffCache::new();
        let dv = extract(&bsi, (16, 16), &lms, 1.0, &mut cache);
        assert_eq!(dv.values, [0; 8]);
        assert_eq!(dv.valid, [true; 8]);
    }

    #[test]
    fn dark_disk_on_bright_field() {
        // Disk of intensity 0 on a 200 background; landmark samples that land
        // fully inside/outside see block sums 0 and 800 at factor 2.
        let e = Ellipse::new(32.0, 32.0, 10.0, 10.0, 0.0).unwrap();
        let mask = rasterize(&e, 64, 64);
        let img = GrayImage::from_fn(64, 64, |x, y| if mask.get(x, y) { 0 } else { 200 });
        let bsi = downscale(&img, 2).unwrap();
        // Landmark on the right boundary, normal +x: inner at (32+10)/2 - 1 =
        // block x=20 (fully dark), outer block x=22 (fully bright).
        let (v, ok) = landmark_diff_uncached(&bsi, (32, 32), (10, 0), (1.0, 0.0), 1.0);
        assert!(ok);
        assert_eq!(v, -800);
    }

    #[test]
    fn out_of_bounds_landmark_is_invalid() {
        let img = GrayImage::filled(32, 32, 50);
        let bsi = downscale(&img, 2).unwrap();
        let (v, ok) = landmark_diff_uncached(&bsi, (31, 16), (2, 0), (1.0, 0.0), 1.0);
        assert_eq!((v, ok), (0, false));
    }

    #[test]
    fn extract_flags_invalid_at_corner() {
        let img = GrayImage::filled(32, 32, 50);
        let bsi = downscale(&img, 2).unwrap();
        let e = Ellipse::new(1.0, 1.0, 8.0, 8.0, 0.0).unwrap();
        let lms = ellipse_landmarks(&e);
        let mut cache = DiffCache::new();
        let dv = extract(&bsi, (1, 1), &lms, 1.0, &mut cache);
        assert!(dv.valid.iter().any(|&v| !v));
    }

    #[test]
    fn cache_avoids_recomputation() {
        let img = GrayImage::from_fn(32, 32, |x, y| ((x * 13 + y * 29) % 251) as u8);
        let bsi = downscale(&img, 2).unwrap();
        let e = Ellipse::new(16.0, 16.0, 6.0, 6.0, 0.0).unwrap();
        let lms = ellipse_landmarks(&e);
        let mut cache = DiffCache::new();
        let first = extract(&bsi, (16, 16), &lms, 1.0, &mut cache);
        let computed_after_first = cache.computed();
        let second = extract(&bsi, (16, 16), &lms, 1.0, &mut cache);
        assert_eq!(first, second);
        assert_eq!(cache.computed(), computed_after_first);
        assert_eq!(cache.lookups(), 16);
    }

    #[test]
    fn warm_and_fresh_cache_agree() {
        let img = GrayImage::from_fn(48, 48, |x, y| ((x * 3 + y * 11) % 200) as u8);
        let bsi = downscale(&img, 2).unwrap();
        let mut warm = DiffCache::new();
        for r in [4.0f64, 5.0, 6.0] {
            let e = Ellipse::new(24.0, 24.0, r, r, 0.0).unwrap();
            let lms = ellipse_landmarks(&e);
            let warm_dv = extract(&bsi, (24, 24), &lms, 1.0, &mut warm);
            let fresh_dv = extract(&bsi, (24, 24), &lms, 1.0, &mut DiffCache::new());
            assert_eq!(warm_dv, fresh_dv);
            assert_eq!(warm_dv, extract_uncached(&bsi, (24, 24), &lms, 1.0));
        }
    }

    proptest! {
        #[test]
        fn additive_shift_cancels(
            seed in 0u64..1000,
            offset in 1i32..60,
        ) {
            let img = GrayImage::from_fn(32, 32, |x, y| {
                ((x as u64 * 31 + y as u64 * 17 + seed * 7) % 180) as u8
            });
            let shifted = img.shifted(offset);
            let bsi = downscale(&img, 2).unwrap();
            let bsi_shifted = downscale(&shifted, 2).unwrap();
            let e = Ellipse::new(16.0, 16.0, 6.0, 4.0, 0.7).unwrap();
            let lms = ellipse_landmarks(&e);
            let a = extract_uncached(&bsi, (16, 16), &lms, 1.0);
            let b = extract_uncached(&bsi_shifted, (16, 16), &lms, 1.0);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn factor_one_matches_raw_pixel_differences(seed in 0u64..1000) {
            let img = GrayImage::from_fn(20, 20, |x, y| {
                ((x as u64 * 41 + y as u64 * 13 + seed) % 256) as u8
            });
            let bsi = downscale(&img, 1).unwrap();
            let (v, ok) = landmark_diff_uncached(&bsi, (10, 10), (4, 0), (1.0, 0.0), 1.0);
            prop_assert!(ok);
            let expected = img.get(13, 10) as i32 - img.get(15, 10) as i32;
            prop_assert_eq!(v, expected);
        }
    }
}
