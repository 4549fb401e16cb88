//! Versioned binary model files with exact roundtrip.
//!
//! Layout (all integers little-endian, floats IEEE 754 binary64):
//!
//! ```text
//! magic            4 bytes  "SPUP"
//! version          u32      currently 1
//! config           u32 downscale factor, f64 radial step, u32 rounding rule
//! shape table      u64 position count, then per position:
//!                  i32 x, i32 y, u32 entry count, then per entry:
//!                  f64 cx, cy, a, b, theta; f64 probability; u64 count;
//!                  8 x (i32 dx, i32 dy); 8 x (f64 nx, f64 ny)
//! diff table       same position/entry walk; per entry: u32 prototype
//!                  count, then per prototype 8 x i32 values, u64 members
//! weight table     same walk; per entry: u32 prototype count, then per
//!                  prototype 8 x f64 weights
//! checksum         u64      FNV-1a 64 over all preceding bytes
//! ```
//!
//! Tables are written in sorted (y, x) key order, so a given model always
//! serializes to the same bytes. See `docs/model-format.md` for an annotated
//! hex example.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Ellipse, LandmarkSet, LANDMARK_COUNT};
use crate::model::{
    DifferenceSet, DifferenceSets, FeatureWeights, ModelConfig, PositionShapes, PupilModel,
    ShapeDistribution, ShapeEntry,
};

pub const MODEL_MAGIC: [u8; 4] = *b"SPUP";
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Identifier of the round-half-away-from-zero rule used by this codebase.
pub const ROUNDING_RULE_ID: u32 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Serializes a model to its canonical byte layout.
pub fn to_bytes(model: &PupilModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.config.downscale_factor.to_le_bytes());
    out.extend_from_slice(&model.config.radial_step.to_le_bytes());
    out.extend_from_slice(&ROUNDING_RULE_ID.to_le_bytes());

    let positions = &model.shapes.positions;
    out.extend_from_slice(&(positions.len() as u64).to_le_bytes());
    for pos in positions {
        out.extend_from_slice(&pos.x.to_le_bytes());
        out.extend_from_slice(&pos.y.to_le_bytes());
        out.extend_from_slice(&(pos.entries.len() as u32).to_le_bytes());
        for entry in &pos.entries {
            for v in [
                entry.ellipse.cx,
                entry.ellipse.cy,
                entry.ellipse.a,
                entry.ellipse.b,
                entry.ellipse.theta,
                entry.probability,
            ] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&entry.count.to_le_bytes());
            for (dx, dy) in entry.landmarks.points {
                out.extend_from_slice(&dx.to_le_bytes());
                out.extend_from_slice(&dy.to_le_bytes());
            }
            for (nx, ny) in entry.landmarks.normals {
                out.extend_from_slice(&nx.to_le_bytes());
                out.extend_from_slice(&ny.to_le_bytes());
            }
        }
    }

    out.extend_from_slice(&(positions.len() as u64).to_le_bytes());
    for (pi, pos) in positions.iter().enumerate() {
        out.extend_from_slice(&pos.x.to_le_bytes());
        out.extend_from_slice(&pos.y.to_le_bytes());
        out.extend_from_slice(&(pos.entries.len() as u32).to_le_bytes());
        for protos in &model.diffsets.prototypes[pi] {
            out.extend_from_slice(&(protos.len() as u32).to_le_bytes());
            for proto in protos {
                for v in proto.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&proto.member_count.to_le_bytes());
            }
        }
    }

    out.extend_from_slice(&(positions.len() as u64).to_le_bytes());
    for (pi, pos) in positions.iter().enumerate() {
        out.extend_from_slice(&pos.x.to_le_bytes());
        out.extend_from_slice(&pos.y.to_le_bytes());
        out.extend_from_slice(&(pos.entries.len() as u32).to_le_bytes());
        for wsets in &model.weights.weights[pi] {
            out.extend_from_slice(&(wsets.len() as u32).to_le_bytes());
            for w in wsets {
                for v in w {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

/// Writes the model file; byte-deterministic for a given model.
pub fn save(model: &PupilModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.bytes.len() {
            return Err(Error::InvalidModel("table data truncated".into()));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.off == self.bytes.len()
    }
}

/// Parses a model from canonical bytes, verifying magic, version, checksum
/// and every model invariant before returning.
pub fn from_bytes(bytes: &[u8]) -> Result<PupilModel> {
    // magic + version + checksum is the minimum conceivable file.
    if bytes.len() < 16 {
        return Err(Error::ChecksumMismatch);
    }
    if bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(Error::ChecksumMismatch);
    }

    let mut r = Reader {
        bytes: body,
        off: 8,
    };
    let downscale_factor = r.u32()?;
    let radial_step = r.f64()?;
    let rounding_rule = r.u32()?;
    if rounding_rule != ROUNDING_RULE_ID {
        return Err(Error::InvalidModel(format!(
            "unknown rounding rule id {rounding_rule}"
        )));
    }

    let n_positions = r.u64()? as usize;
    let mut shapes = ShapeDistribution::default();
    for _ in 0..n_positions {
        let x = r.i32()?;
        let y = r.i32()?;
        let n_entries = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let cx = r.f64()?;
            let cy = r.f64()?;
            let a = r.f64()?;
            let b = r.f64()?;
            let theta = r.f64()?;
            let probability = r.f64()?;
            let count = r.u64()?;
            let mut points = [(0i32, 0i32); LANDMARK_COUNT];
            for p in points.iter_mut() {
                *p = (r.i32()?, r.i32()?);
            }
            let mut normals = [(0f64, 0f64); LANDMARK_COUNT];
            for n in normals.iter_mut() {
                *n = (r.f64()?, r.f64()?);
            }
            entries.push(ShapeEntry {
                ellipse: Ellipse { cx, cy, a, b, theta },
                landmarks: LandmarkSet { points, normals },
                probability,
                count,
            });
        }
        shapes.positions.push(PositionShapes { x, y, entries });
    }

    let n_diff_positions = r.u64()? as usize;
    let mut diffsets = DifferenceSets::default();
    for pi in 0..n_diff_positions {
        let x = r.i32()?;
        let y = r.i32()?;
        let n_entries = r.u32()? as usize;
        if shapes
            .positions
            .get(pi)
            .map_or(true, |p| (p.x, p.y) != (x, y) || p.entries.len() != n_entries)
        {
            return Err(Error::InvalidModel("diff table misaligned".into()));
        }
        let mut pos_protos = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let n_protos = r.u32()? as usize;
            let mut protos = Vec::with_capacity(n_protos);
            for _ in 0..n_protos {
                let mut values = [0i32; LANDMARK_COUNT];
                for v in values.iter_mut() {
                    *v = r.i32()?;
                }
                let member_count = r.u64()?;
                protos.push(DifferenceSet {
                    values,
                    member_count,
                });
            }
            pos_protos.push(protos);
        }
        diffsets.prototypes.push(pos_protos);
    }

    let n_weight_positions = r.u64()? as usize;
    let mut weights = FeatureWeights::default();
    for pi in 0..n_weight_positions {
        let x = r.i32()?;
        let y = r.i32()?;
        let n_entries = r.u32()? as usize;
        if shapes
            .positions
            .get(pi)
            .map_or(true, |p| (p.x, p.y) != (x, y) || p.entries.len() != n_entries)
        {
            return Err(Error::InvalidModel("weight table misaligned".into()));
        }
        let mut pos_weights = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let n_protos = r.u32()? as usize;
            let mut wsets = Vec::with_capacity(n_protos);
            for _ in 0..n_protos {
                let mut w = [0f64; LANDMARK_COUNT];
                for v in w.iter_mut() {
                    *v = r.f64()?;
                }
                wsets.push(w);
            }
            pos_weights.push(wsets);
        }
        weights.weights.push(pos_weights);
    }

    if !r.done() {
        return Err(Error::InvalidModel("trailing bytes after tables".into()));
    }

    let model = PupilModel {
        config: ModelConfig {
            downscale_factor,
            radial_step,
        },
        shapes,
        diffsets,
        weights,
    };
    model.validate()?;
    Ok(model)
}

/// Loads and validates a model file.
pub fn load(path: impl AsRef<Path>) -> Result<PupilModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
