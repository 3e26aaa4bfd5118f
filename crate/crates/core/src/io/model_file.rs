//! The `CCNF` model file.
//!
//! All numbers are little-endian. Layout:
//!
//! ```text
//! magic "CCNF" | u16 version
//! Aabb: min xyz, max xyz (6 × f64)
//! shading: u8 SH degree | f64 density shift
//! density field, then color field:
//!     u32 channels | u32 res x | u32 res y | u32 res z | u32 groups
//!     per group: u32 vec | u32 mat
//! occupancy: u8 present, and if 1: u32 res x | u32 res y | u32 res z | f64 threshold | u32 dilation
//! payload: per field S, Ux, Uy, Uz, Uxy, Uyz, Uxz as f32
//!          occupancy bits, 8 cells per byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Aabb, DecomposedField, RankCount, RankLayout};
use crate::model::FieldPair;
use crate::render::OccupancyGrid;
use crate::shading::ShadingConfig;

pub const MAGIC: &[u8; 4] = b"CCNF";
pub const VERSION: u16 = 1;

const FIXED_HEADER: u64 = 4 + 2 + 6 * 8 + 1 + 8 + 1;
const FIELD_DESCRIPTOR: u64 = 5 * 4;
const GROUP_ENTRY: u64 = 2 * 4;
const OCCUPANCY_DESCRIPTOR: u64 = 3 * 4 + 8 + 4;

/// Header bytes for a pair of layouts, with or without occupancy.
pub fn header_size(density: &RankLayout, color: &RankLayout, occupancy: bool) -> u64 {
    FIXED_HEADER
        + 2 * FIELD_DESCRIPTOR
        + GROUP_ENTRY * (density.num_groups() + color.num_groups()) as u64
        + if occupancy { OCCUPANCY_DESCRIPTOR } else { 0 }
}

/// Parameter count of one field with the given shape.
pub fn field_parameter_count(channels: usize, resolution: [usize; 3], rank: RankCount) -> u64 {
    let [x, y, z] = resolution.map(|v| v as u64);
    channels as u64 * rank.total() as u64 + rank.vec as u64 * (x + y + z) + rank.mat as u64 * (x * y + y * z + x * z)
}

/// Exact file size of `model`: header + 4 bytes per parameter +
/// `ceil(cells / 8)` occupancy bytes.
pub fn serialized_size<T: crate::Real>(model: &FieldPair<T>) -> u64 {
    serialized_size_with(model, model.color.layout())
}

/// File size `model` would have with its color layout replaced by `color`.
pub fn serialized_size_with<T: crate::Real>(model: &FieldPair<T>, color: &RankLayout) -> u64 {
    let d = &model.density;
    let c = &model.color;
    let params = field_parameter_count(d.channels(), d.resolution(), d.layout().total())
        + field_parameter_count(c.channels(), c.resolution(), color.total());
    let occ = model.occupancy.as_ref().map_or(0, |g| g.cell_count().div_ceil(8) as u64);
    header_size(d.layout(), color, model.occupancy.is_some()) + 4 * params + occ
}

pub fn to_bytes(model: &FieldPair) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_size(model) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in model.aabb.min.iter().chain(&model.aabb.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(model.shading.sh_degree as u8);
    out.extend_from_slice(&model.shading.density_shift.to_le_bytes());
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    for f in [&model.density, &model.color] {
        u32le(&mut out, f.channels());
        for n in f.resolution() {
            u32le(&mut out, n);
        }
        u32le(&mut out, f.layout().num_groups());
        for g in f.layout().groups() {
            u32le(&mut out, g.vec);
            u32le(&mut out, g.mat);
        }
    }
    match &model.occupancy {
        None => out.push(0),
        Some(g) => {
            out.push(1);
            for n in g.resolution() {
                u32le(&mut out, n);
            }
            out.extend_from_slice(&g.threshold().to_le_bytes());
            u32le(&mut out, g.dilation());
        }
    }
    for f in [&model.density, &model.color] {
        for t in f.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(g) = &model.occupancy {
        out.extend_from_slice(g.bits());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("{what} too large")))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

struct FieldHeader {
    channels: usize,
    resolution: [usize; 3],
    layout: RankLayout,
}

pub fn from_bytes(buf: &[u8]) -> Result<FieldPair> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a CCNF model".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version > VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let mut corners = [0.0; 6];
    for c in &mut corners {
        *c = r.f64("bounding box")?;
    }
    let aabb = Aabb::new([corners[0], corners[1], corners[2]], [corners[3], corners[4], corners[5]])
        .map_err(|e| Error::Format(e.to_string()))?;
    let degree = r.u8("shading")? as usize;
    let shift = r.f64("shading")?;
    let shading = ShadingConfig::new(degree, shift).map_err(|e| Error::Format(e.to_string()))?;
    let mut headers = Vec::with_capacity(2);
    for name in ["density", "color"] {
        let channels = r.u32(name)?;
        let resolution = [r.u32(name)?, r.u32(name)?, r.u32(name)?];
        let n = r.u32(name)?;
        if n as u64 * GROUP_ENTRY > buf.len() as u64 {
            return Err(Error::Format(format!("{name} group count {n} exceeds the file size")));
        }
        let groups = (0..n)
            .map(|_| Ok(RankCount::new(r.u32(name)?, r.u32(name)?)))
            .collect::<Result<Vec<_>>>()?;
        let layout = RankLayout::new(groups).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        headers.push(FieldHeader {
            channels,
            resolution,
            layout,
        });
    }
    let occupancy = match r.u8("occupancy flag")? {
        0 => None,
        1 => Some(([r.u32("occupancy")?, r.u32("occupancy")?, r.u32("occupancy")?], r.f64("occupancy")?, r.u32("occupancy")?)),
        v => return Err(Error::Format(format!("bad occupancy flag {v}"))),
    };
    // the payload length is fully determined by the header
    let mut payload = 0u64;
    for h in &headers {
        payload += 4 * field_parameter_count(h.channels, h.resolution, h.layout.total());
    }
    if let Some((res, _, _)) = occupancy {
        payload += (res.iter().map(|&n| n as u64).product::<u64>()).div_ceil(8);
    }
    let expected = r.pos as u64 + payload;
    if buf.len() as u64 != expected {
        return Err(Error::Format(format!(
            "file is {} bytes, header declares {expected}",
            buf.len()
        )));
    }
    let mut fields = Vec::with_capacity(2);
    for (h, name) in headers.into_iter().zip(["density", "color"]) {
        let template = DecomposedField::<f32>::zeros(h.channels, h.resolution, h.layout.clone())
            .map_err(|e| Error::Format(format!("{name}: {e}")))?;
        let lens = template.tensors().map(|t| t.len());
        let weights = r.f32s(lens[0], name)?;
        let vec = [r.f32s(lens[1], name)?, r.f32s(lens[2], name)?, r.f32s(lens[3], name)?];
        let mat = [r.f32s(lens[4], name)?, r.f32s(lens[5], name)?, r.f32s(lens[6], name)?];
        fields.push(DecomposedField::from_parts(h.channels, h.resolution, h.layout, weights, vec, mat)?);
    }
    let occupancy = match occupancy {
        None => None,
        Some((res, threshold, dilation)) => {
            let bits = r.take(res.iter().product::<usize>().div_ceil(8), "occupancy bits")?.to_vec();
            Some(
                OccupancyGrid::from_bits(res, threshold, dilation, bits)
                    .ok_or_else(|| Error::Format("bad occupancy grid".into()))?,
            )
        }
    };
    let color = fields.pop().unwrap();
    let density = fields.pop().unwrap();
    FieldPair::new(aabb, shading, density, color, occupancy).map_err(|e| Error::Format(e.to_string()))
}

/// Writes `bytes` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_model(model: &FieldPair, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FieldPair> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::build_occupancy;
    use rand::SeedableRng;

    fn model(occupancy: bool) -> FieldPair {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let l = |g: &[(usize, usize)]| RankLayout::new(g.iter().map(|&(v, m)| RankCount::new(v, m)).collect()).unwrap();
        let mut m = FieldPair::init_random(
            Aabb::new([-1.0, -0.5, -0.25], [1.0, 0.5, 0.75]).unwrap(),
            [5, 4, 3],
            l(&[(2, 1)]),
            l(&[(2, 0), (0, 1), (1, 2)]),
            ShadingConfig::new(1, -10.0).unwrap(),
            &mut rng,
        )
        .unwrap();
        if occupancy {
            m.occupancy = Some(build_occupancy(&m, [3, 5, 7], 1e-6, 1));
        }
        m
    }

    #[test]
    fn round_trip_is_exact() {
        for occ in [false, true] {
            let m = model(occ);
            let bytes = to_bytes(&m);
            assert_eq!(bytes.len() as u64, serialized_size(&m));
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = to_bytes(&model(true));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut newer = bytes.clone();
        newer[4..6].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(from_bytes(&newer), Err(Error::Version { .. })));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(from_bytes(&longer), Err(Error::Format(_))));
        assert!(from_bytes(&bytes[..3]).is_err());
    }

    #[test]
    fn atomic_save_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ccnf");
        let m = model(false);
        save_model(&m, &p).unwrap();
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1, "{names:?}");
    }

    #[test]
    fn truncation_shrinks_by_four_bytes_per_parameter() {
        let m = model(false);
        let mut t = m.clone();
        t.color = m.color.truncate(&crate::Keep::Prefix(RankCount::new(2, 0))).unwrap();
        let dropped = (m.parameter_count() - t.parameter_count()) as u64;
        let dropped_groups = (m.color.layout().num_groups() - t.color.layout().num_groups()) as u64;
        assert_eq!(serialized_size(&m) - serialized_size(&t), 4 * dropped + 8 * dropped_groups);
        assert_eq!(to_bytes(&t).len() as u64, serialized_size(&t));
    }
}
