//! Core 3D grid types with physical spacing, bit-exact `.vgrid` file I/O,
//! cropping/pasting, integer-factor downsampling and bounding-box
//! arithmetic.
//!
//! All values are immutable after construction and all operations are pure.
//! Linear memory layout matches the file payload: channel slowest, then z,
//! then y, with x fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::NodeId;

const MAGIC: &[u8; 6] = b"VGRD1\n";

#[derive(Error, Debug)]
pub enum GridError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a .vgrid file)")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} values, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: String },
    #[error("data length {got} does not match dims {dims:?} x {channels} channels")]
    DataLength { dims: [usize; 3], channels: usize, got: usize },
    #[error("spacing components must be positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),
    #[error("downsample factor must be >= 1")]
    BadFactor,
    #[error("expansion factor must be >= 1")]
    BadExpansion,
    #[error("empty foreground")]
    EmptyForeground,
    #[error("box {bbox:?} not contained in dims {dims:?}")]
    BoxOutOfBounds { bbox: BoundingBox, dims: [usize; 3] },
    #[error("shape mismatch: patch dims {patch:?} vs box extents {expected:?}")]
    ShapeMismatch { patch: [usize; 3], expected: [usize; 3] },
    #[error("channel map must be a bijection onto background plus the leaf set")]
    BadChannelMap,
}

/// Half-open voxel-index box `[lo, hi)` on each axis.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> BoundingBox {
        for a in 0..3 {
            assert!(lo[a] <= hi[a], "box lo must not exceed hi");
        }
        BoundingBox { lo, hi }
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    pub fn volume(&self) -> usize {
        let e = self.extents();
        e[0] * e[1] * e[2]
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn fits_in(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.hi[a] <= dims[a])
    }

    /// Scale each axis interval by `m` about its center (length becomes
    /// `m * length`, rounded outward) and clamp to `[0, dim)`.
    pub fn expanded(&self, m: usize, dims: [usize; 3]) -> Result<BoundingBox, GridError> {
        if m < 1 {
            return Err(GridError::BadExpansion);
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = self.lo[a] as i64;
            let h = self.hi[a] as i64;
            let m = m as i64;
            // center +/- m*len/2 with outward rounding, in halves.
            let lo2 = (l + h) - m * (h - l); // 2 * new_lo
            let hi2 = (l + h) + m * (h - l); // 2 * new_hi
            let new_lo = lo2.div_euclid(2); // floor
            let new_hi = (hi2 + 1).div_euclid(2); // ceil
            lo[a] = new_lo.clamp(0, dims[a] as i64) as usize;
            hi[a] = new_hi.clamp(0, dims[a] as i64) as usize;
        }
        Ok(BoundingBox { lo, hi })
    }
}

fn check_spacing(spacing: [f64; 3]) -> Result<(), GridError> {
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(GridError::BadSpacing(spacing));
    }
    Ok(())
}

fn linear(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    (z * dims[1] + y) * dims[0] + x
}

/// Integer class labels on a 3D grid with physical spacing in mm/voxel.
#[derive(Clone, PartialEq, Debug)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<NodeId>,
}

/// One real value per voxel (image intensities, soft masks).
#[derive(Clone, PartialEq, Debug)]
pub struct ScalarField {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

/// Real-valued per-class scores: channel 0 is background, channel `c > 0`
/// maps to a leaf class through the stored channel map. Held at f64
/// precision in memory; stored at f32 precision on disk.
#[derive(Clone, PartialEq, Debug)]
pub struct LogitField {
    dims: [usize; 3],
    spacing: [f64; 3],
    channel_map: Vec<NodeId>,
    data: Vec<f64>,
}

impl LabelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        data: Vec<NodeId>,
    ) -> Result<LabelVolume, GridError> {
        check_spacing(spacing)?;
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(GridError::DataLength { dims, channels: 1, got: data.len() });
        }
        Ok(LabelVolume { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> LabelVolume {
        LabelVolume::new(dims, spacing, vec![NodeId::BACKGROUND; dims[0] * dims[1] * dims[2]])
            .expect("lengths match by construction")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[NodeId] {
        &self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> NodeId {
        self.data[linear(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: NodeId) {
        let i = linear(self.dims, x, y, z);
        self.data[i] = v;
    }

    /// Majority-vote downsampling; ties go to the smallest id. Edge blocks
    /// may be partial. Spacing is multiplied by the factor.
    pub fn downsample(&self, factor: usize) -> Result<LabelVolume, GridError> {
        if factor < 1 {
            return Err(GridError::BadFactor);
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let od = self.dims.map(|d| d.div_ceil(factor));
        let mut out = Vec::with_capacity(od[0] * od[1] * od[2]);
        let mut counts: Vec<(NodeId, u32)> = Vec::with_capacity(factor * factor * factor);
        for oz in 0..od[2] {
            for oy in 0..od[1] {
                for ox in 0..od[0] {
                    counts.clear();
                    for z in oz * factor..((oz + 1) * factor).min(self.dims[2]) {
                        for y in oy * factor..((oy + 1) * factor).min(self.dims[1]) {
                            for x in ox * factor..((ox + 1) * factor).min(self.dims[0]) {
                                let v = self.get(x, y, z);
                                match counts.iter_mut().find(|(id, _)| *id == v) {
                                    Some((_, c)) => *c += 1,
                                    None => counts.push((v, 1)),
                                }
                            }
                        }
                    }
                    // Highest count wins; ties resolve to the smallest id.
                    counts.sort_unstable_by(|a, b| a.0.cmp(&b.0));
                    let mut best = counts[0];
                    for &(id, c) in &counts[1..] {
                        if c > best.1 {
                            best = (id, c);
                        }
                    }
                    out.push(best.0);
                }
            }
        }
        LabelVolume::new(od, self.spacing.map(|s| s * factor as f64), out)
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<LabelVolume, GridError> {
        if !bbox.fits_in(self.dims) {
            return Err(GridError::BoxOutOfBounds { bbox: *bbox, dims: self.dims });
        }
        let e = bbox.extents();
        let mut data = Vec::with_capacity(e[0] * e[1] * e[2]);
        for z in bbox.lo[2]..bbox.hi[2] {
            for y in bbox.lo[1]..bbox.hi[1] {
                let row = linear(self.dims, bbox.lo[0], y, z);
                data.extend_from_slice(&self.data[row..row + e[0]]);
            }
        }
        LabelVolume::new(e, self.spacing, data)
    }
}

/// Write `patch` into a copy of `dest` at `bbox`, leaving everything outside
/// the box unchanged.
pub fn paste_back(
    dest: &LabelVolume,
    patch: &LabelVolume,
    bbox: &BoundingBox,
) -> Result<LabelVolume, GridError> {
    if !bbox.fits_in(dest.dims) {
        return Err(GridError::BoxOutOfBounds { bbox: *bbox, dims: dest.dims });
    }
    if patch.dims != bbox.extents() {
        return Err(GridError::ShapeMismatch { patch: patch.dims, expected: bbox.extents() });
    }
    let mut out = dest.clone();
    let e = bbox.extents();
    for z in 0..e[2] {
        for y in 0..e[1] {
            let src = linear(patch.dims, 0, y, z);
            let dst = linear(dest.dims, bbox.lo[0], bbox.lo[1] + y, bbox.lo[2] + z);
            out.data[dst..dst + e[0]].copy_from_slice(&patch.data[src..src + e[0]]);
        }
    }
    Ok(out)
}

/// Tightest box containing all nonzero voxels.
pub fn foreground_bbox(labels: &LabelVolume) -> Result<BoundingBox, GridError> {
    let mut lo = labels.dims;
    let mut hi = [0usize; 3];
    let mut any = false;
    for z in 0..labels.dims[2] {
        for y in 0..labels.dims[1] {
            for x in 0..labels.dims[0] {
                if !labels.get(x, y, z).is_background() {
                    any = true;
                    let p = [x, y, z];
                    for a in 0..3 {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a] + 1);
                    }
                }
            }
        }
    }
    if !any {
        return Err(GridError::EmptyForeground);
    }
    Ok(BoundingBox { lo, hi })
}

impl ScalarField {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        data: Vec<f32>,
    ) -> Result<ScalarField, GridError> {
        check_spacing(spacing)?;
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(GridError::DataLength { dims, channels: 1, got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(ScalarField { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> ScalarField {
        ScalarField::new(dims, spacing, vec![0.0; dims[0] * dims[1] * dims[2]])
            .expect("lengths match by construction")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear(self.dims, x, y, z)]
    }

    /// Block-mean downsampling; partial edge blocks average their actual
    /// voxels. Spacing is multiplied by the factor.
    pub fn downsample(&self, factor: usize) -> Result<ScalarField, GridError> {
        if factor < 1 {
            return Err(GridError::BadFactor);
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let od = self.dims.map(|d| d.div_ceil(factor));
        let mut out = Vec::with_capacity(od[0] * od[1] * od[2]);
        for oz in 0..od[2] {
            for oy in 0..od[1] {
                for ox in 0..od[0] {
                    let mut sum = 0.0f64;
                    let mut n = 0u32;
                    for z in oz * factor..((oz + 1) * factor).min(self.dims[2]) {
                        for y in oy * factor..((oy + 1) * factor).min(self.dims[1]) {
                            for x in ox * factor..((ox + 1) * factor).min(self.dims[0]) {
                                sum += self.get(x, y, z) as f64;
                                n += 1;
                            }
                        }
                    }
                    out.push((sum / n as f64) as f32);
                }
            }
        }
        ScalarField::new(od, self.spacing.map(|s| s * factor as f64), out)
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<ScalarField, GridError> {
        if !bbox.fits_in(self.dims) {
            return Err(GridError::BoxOutOfBounds { bbox: *bbox, dims: self.dims });
        }
        let e = bbox.extents();
        let mut data = Vec::with_capacity(e[0] * e[1] * e[2]);
        for z in bbox.lo[2]..bbox.hi[2] {
            for y in bbox.lo[1]..bbox.hi[1] {
                let row = linear(self.dims, bbox.lo[0], y, z);
                data.extend_from_slice(&self.data[row..row + e[0]]);
            }
        }
        ScalarField::new(e, self.spacing, data)
    }
}

impl LogitField {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        channel_map: Vec<NodeId>,
        data: Vec<f64>,
    ) -> Result<LogitField, GridError> {
        check_spacing(spacing)?;
        if channel_map.is_empty() || channel_map[0] != NodeId::BACKGROUND {
            return Err(GridError::BadChannelMap);
        }
        let mut seen = channel_map.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(GridError::BadChannelMap);
        }
        let n = dims[0] * dims[1] * dims[2] * channel_map.len();
        if data.len() != n {
            return Err(GridError::DataLength { dims, channels: channel_map.len(), got: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(LogitField { dims, spacing, channel_map, data })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], channel_map: Vec<NodeId>) -> LogitField {
        let n = dims[0] * dims[1] * dims[2] * channel_map.len();
        LogitField::new(dims, spacing, channel_map, vec![0.0; n])
            .expect("lengths match by construction")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn channels(&self) -> usize {
        self.channel_map.len()
    }

    pub fn channel_map(&self) -> &[NodeId] {
        &self.channel_map
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The contiguous plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.voxel_count() + linear(self.dims, x, y, z)]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f64) {
        let i = c * self.voxel_count() + linear(self.dims, x, y, z);
        self.data[i] = v;
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<LogitField, GridError> {
        if !bbox.fits_in(self.dims) {
            return Err(GridError::BoxOutOfBounds { bbox: *bbox, dims: self.dims });
        }
        let e = bbox.extents();
        let n = e[0] * e[1] * e[2];
        let mut data = Vec::with_capacity(n * self.channels());
        for c in 0..self.channels() {
            let plane = self.channel(c);
            for z in bbox.lo[2]..bbox.hi[2] {
                for y in bbox.lo[1]..bbox.hi[1] {
                    let row = linear(self.dims, bbox.lo[0], y, z);
                    data.extend_from_slice(&plane[row..row + e[0]]);
                }
            }
        }
        LogitField::new(e, self.spacing, self.channel_map.clone(), data)
    }
}

/// Any of the three grid kinds, as loaded from a `.vgrid` file.
#[derive(Debug)]
pub enum VGrid {
    Labels(LabelVolume),
    Scalar(ScalarField),
    Logits(LogitField),
}

#[derive(Serialize, Deserialize)]
struct VgridHeader {
    dims: [usize; 3],
    channels: usize,
    dtype: String,
    spacing_mm: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    channel_map: Option<Vec<u16>>,
}

fn write_header<W: Write>(w: &mut W, header: &VgridHeader) -> Result<(), GridError> {
    let bytes = serde_json::to_vec(header).expect("header serialization is infallible");
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(bytes.len() as u32)?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Serialize a value to the `.vgrid` binary format. Round trips are
/// bit-exact for labels and f32 scalars; logit fields are written at f32
/// precision.
pub fn save_vgrid(value: &VGrid, path: &Path) -> Result<(), GridError> {
    let mut w = BufWriter::new(File::create(path)?);
    match value {
        VGrid::Labels(v) => {
            let header = VgridHeader {
                dims: v.dims,
                channels: 1,
                dtype: "u16".into(),
                spacing_mm: v.spacing,
                channel_map: None,
            };
            write_header(&mut w, &header)?;
            for id in &v.data {
                w.write_u16::<LittleEndian>(id.0)?;
            }
        }
        VGrid::Scalar(v) => {
            let header = VgridHeader {
                dims: v.dims,
                channels: 1,
                dtype: "f32".into(),
                spacing_mm: v.spacing,
                channel_map: None,
            };
            write_header(&mut w, &header)?;
            for x in &v.data {
                w.write_f32::<LittleEndian>(*x)?;
            }
        }
        VGrid::Logits(v) => {
            let header = VgridHeader {
                dims: v.dims,
                channels: v.channels(),
                dtype: "f32".into(),
                spacing_mm: v.spacing,
                channel_map: Some(v.channel_map.iter().map(|id| id.0).collect()),
            };
            write_header(&mut w, &header)?;
            for x in &v.data {
                w.write_f32::<LittleEndian>(*x as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_labels(v: &LabelVolume, path: &Path) -> Result<(), GridError> {
    save_vgrid(&VGrid::Labels(v.clone()), path)
}

pub fn save_scalar(v: &ScalarField, path: &Path) -> Result<(), GridError> {
    save_vgrid(&VGrid::Scalar(v.clone()), path)
}

pub fn save_logits(v: &LogitField, path: &Path) -> Result<(), GridError> {
    save_vgrid(&VGrid::Logits(v.clone()), path)
}

/// Load any `.vgrid` file, dispatching on dtype and channel count.
pub fn load_vgrid(path: &Path) -> Result<VGrid, GridError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Err(GridError::BadMagic);
    }
    let header_len = r.read_u32::<LittleEndian>()? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| GridError::BadHeader("header shorter than declared".into()))?;
    let header: VgridHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| GridError::BadHeader(e.to_string()))?;
    let n = header.dims[0] * header.dims[1] * header.dims[2] * header.channels;
    match header.dtype.as_str() {
        "u16" => {
            if header.channels != 1 {
                return Err(GridError::BadHeader("u16 grids must have one channel".into()));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                match r.read_u16::<LittleEndian>() {
                    Ok(v) => data.push(NodeId(v)),
                    Err(_) => return Err(GridError::Truncated { expected: n, got: i }),
                }
            }
            expect_eof(&mut r, n)?;
            Ok(VGrid::Labels(LabelVolume::new(header.dims, header.spacing_mm, data)?))
        }
        "f32" => {
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                match r.read_f32::<LittleEndian>() {
                    Ok(v) => data.push(v),
                    Err(_) => return Err(GridError::Truncated { expected: n, got: i }),
                }
            }
            expect_eof(&mut r, n)?;
            if header.channels == 1 && header.channel_map.is_none() {
                Ok(VGrid::Scalar(ScalarField::new(header.dims, header.spacing_mm, data)?))
            } else {
                let map = header
                    .channel_map
                    .ok_or_else(|| {
                        GridError::BadHeader("multi-channel grid requires channel_map".into())
                    })?
                    .into_iter()
                    .map(NodeId)
                    .collect::<Vec<_>>();
                if map.len() != header.channels {
                    return Err(GridError::BadHeader(
                        "channel_map length disagrees with channels".into(),
                    ));
                }
                let data64 = data.into_iter().map(|v| v as f64).collect();
                Ok(VGrid::Logits(LogitField::new(header.dims, header.spacing_mm, map, data64)?))
            }
        }
        other => Err(GridError::BadHeader(format!("unknown dtype {other:?}"))),
    }
}

fn expect_eof<R: Read>(r: &mut R, expected: usize) -> Result<(), GridError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(GridError::Truncated { expected, got: expected + 1 }),
    }
}

pub fn load_labels(path: &Path) -> Result<LabelVolume, GridError> {
    match load_vgrid(path)? {
        VGrid::Labels(v) => Ok(v),
        VGrid::Scalar(_) | VGrid::Logits(_) => {
            Err(GridError::DtypeMismatch { expected: "u16", found: "f32".into() })
        }
    }
}

pub fn load_scalar(path: &Path) -> Result<ScalarField, GridError> {
    match load_vgrid(path)? {
        VGrid::Scalar(v) => Ok(v),
        VGrid::Labels(_) => Err(GridError::DtypeMismatch { expected: "f32", found: "u16".into() }),
        VGrid::Logits(_) => {
            Err(GridError::DtypeMismatch { expected: "f32 x1", found: "f32 multi-channel".into() })
        }
    }
}

pub fn load_logits(path: &Path) -> Result<LogitField, GridError> {
    match load_vgrid(path)? {
        VGrid::Logits(v) => Ok(v),
        VGrid::Labels(_) => Err(GridError::DtypeMismatch { expected: "f32", found: "u16".into() }),
        VGrid::Scalar(_) => Err(GridError::DtypeMismatch {
            expected: "f32 multi-channel",
            found: "f32 x1".into(),
        }),
    }
}
