//! Geometry primitives shared by the whole pipeline: grayscale rasters,
//! pupil ellipses, the eight boundary landmarks and binary masks.

use crate::error::{Error, Result};

/// Number of boundary landmarks per ellipse.
pub const LANDMARK_COUNT: usize = 8;

/// Minimum width/height for images entering training or detection.
pub const MIN_IMAGE_DIM: u32 = 16;

/// The one rounding rule used everywhere: round half away from zero.
///
/// Landmark offsets, center quantization and downscaled sampling all go
/// through this function so the behaviour is fixed in a single place.
#[inline]
pub fn round_away(x: f64) -> i64 {
    // f64::round is round-half-away-from-zero.
    x.round() as i64
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// Panics if `pixels.len() != width * height`.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(
            pixels.len(),
            width as usize * height as usize,
            "pixel buffer does not match {width}x{height}"
        );
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    /// Adds a constant to every pixel, saturating at the [0, 255] bounds.
    pub fn shifted(&self, offset: i32) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|&p| (p as i32 + offset).clamp(0, 255) as u8)
            .collect();
        Self::new(self.width, self.height, pixels)
    }

    pub fn intensity_range(&self) -> (u8, u8) {
        let mut lo = u8::MAX;
        let mut hi = u8::MIN;
        for &p in &self.pixels {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }
}

/// Pupil ellipse: sub-pixel center, semi-axes `a >= b > 0`, rotation
/// `theta` normalized to `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Builds a valid ellipse. Swaps the axes (rotating by 90 degrees) when
    /// `b > a` and wraps `theta` into `[0, pi)`.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && a.is_finite() && b.is_finite() && theta.is_finite())
        {
            return Err(Error::InvalidEllipse("non-finite parameter".into()));
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::InvalidEllipse(format!(
                "semi-axes must be positive, got a={a}, b={b}"
            )));
        }
        let (a, b, theta) = if b > a {
            (b, a, theta + std::f64::consts::FRAC_PI_2)
        } else {
            (a, b, theta)
        };
        let mut theta = theta.rem_euclid(std::f64::consts::PI);
        if theta >= std::f64::consts::PI {
            theta = 0.0;
        }
        Ok(Self { cx, cy, a, b, theta })
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    /// Translates the center by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

/// Eight integer boundary offsets relative to the ellipse center, ordered by
/// parametric angle `k * 45deg`, with the outward unit normal at each point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkSet {
    pub points: [(i32, i32); LANDMARK_COUNT],
    pub normals: [(f64, f64); LANDMARK_COUNT],
}

/// Normals are quantized to this step so stored models do not depend on the
/// platform's last-bit trig behaviour.
const NORMAL_QUANTUM: f64 = 1e-6;

fn quantize_normal(v: f64) -> f64 {
    (v / NORMAL_QUANTUM).round() * NORMAL_QUANTUM
}

/// Boundary points of `e` at parametric angles `k * 45deg`, before rounding.
pub(crate) fn continuous_landmarks(e: &Ellipse) -> [(f64, f64); LANDMARK_COUNT] {
    let (st, ct) = e.theta.sin_cos();
    let mut out = [(0.0, 0.0); LANDMARK_COUNT];
    for (k, point) in out.iter_mut().enumerate() {
        let t = k as f64 * std::f64::consts::FRAC_PI_4;
        let (x, y) = (e.a * t.cos(), e.b * t.sin());
        *point = (ct * x - st * y, st * x + ct * y);
    }
    out
}

/// Rounds the parametric boundary points of `e` to integer offsets and
/// attaches the outward boundary normal at each of the eight angles.
pub fn ellipse_landmarks(e: &Ellipse) -> LandmarkSet {
    let (st, ct) = e.theta.sin_cos();
    let mut points = [(0, 0); LANDMARK_COUNT];
    let mut normals = [(0.0, 0.0); LANDMARK_COUNT];
    for (k, (point, rounded)) in continuous_landmarks(e).iter().zip(points.iter_mut()).enumerate() {
        *rounded = (round_away(point.0) as i32, round_away(point.1) as i32);
        let t = k as f64 * std::f64::consts::FRAC_PI_4;
        // Gradient of the implicit ellipse equation, scaled: (b cos t, a sin t).
        let (nx, ny) = (e.b * t.cos(), e.a * t.sin());
        let len = (nx * nx + ny * ny).sqrt();
        let (nx, ny) = (nx / len, ny / len);
        let (rx, ry) = (ct * nx - st * ny, st * nx + ct * ny);
        normals[k] = (quantize_normal(rx), quantize_normal(ry));
    }
    LandmarkSet { points, normals }
}

/// Rounded ellipse center; the anchor position used throughout training and
/// detection.
#[inline]
pub fn quantize_center(e: &Ellipse) -> (i32, i32) {
    (round_away(e.cx) as i32, round_away(e.cy) as i32)
}

/// Binary per-pixel inside mask of an ellipse over a raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EllipseMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl EllipseMask {
    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of inside pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Rasterizes `e` over a `width x height` grid. A pixel `(px, py)` is inside
/// iff its center `(px + 0.5, py + 0.5)`, rotated by `-theta` about the
/// ellipse center, satisfies `(x/a)^2 + (y/b)^2 <= 1`.
pub fn rasterize(e: &Ellipse, width: u32, height: u32) -> EllipseMask {
    let mut bits = vec![false; width as usize * height as usize];
    let (st, ct) = e.theta.sin_cos();
    // The ellipse is contained in the disk of radius a about its center.
    let x0 = (e.cx - e.a - 1.0).floor().max(0.0) as u32;
    let y0 = (e.cy - e.a - 1.0).floor().max(0.0) as u32;
    let x1 = ((e.cx + e.a + 1.0).ceil().max(0.0) as u32).min(width);
    let y1 = ((e.cy + e.a + 1.0).ceil().max(0.0) as u32).min(height);
    let inv_a2 = 1.0 / (e.a * e.a);
    let inv_b2 = 1.0 / (e.b * e.b);
    for py in y0..y1 {
        let dy = py as f64 + 0.5 - e.cy;
        let row = py as usize * width as usize;
        for px in x0..x1 {
            let dx = px as f64 + 0.5 - e.cx;
            let u = ct * dx + st * dy;
            let v = -st * dx + ct * dy;
            if u * u * inv_a2 + v * v * inv_b2 <= 1.0 {
                bits[row + px as usize] = true;
            }
        }
    }
    EllipseMask {
        width,
        height,
        bits,
    }
}
