//! Hard evaluation metrics: Dice overlap, normalized surface distance at a
//! physical tolerance, topology-preserving 3D skeletonization, and the
//! centerline precision/sensitivity family (clDice, cl-X-Dice).
//!
//! The centerline scores combine skeletons (S) and volumes (V) of the
//! prediction (P) and label (L). The composite Q-sets are interpreted as
//! plain voxel sets of their subscripted structures, with composite
//! subscripts taken as unions (`Q_spvp = S_P ∪ V_P`, `Q_slvl = S_L ∪ V_L`)
//! and `U` the whole grid; under this reading a perfect prediction scores 1
//! and all values stay in `[0, 1]`. The interpretation is isolated behind
//! [`tprec`]/[`tsens`] so it can be swapped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{NodeId, SemanticTree, TreeError};
use crate::volume::LabelVolume;

#[derive(Error, Debug)]
pub enum MetricError {
    #[error("mask dims {a:?} and {b:?} differ")]
    DimMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("spacings {a:?} and {b:?} differ")]
    SpacingMismatch { a: [f64; 3], b: [f64; 3] },
    #[error("skeleton is not contained in its volume")]
    SkeletonOutsideVolume,
    #[error("label {0} is not a leaf of the tree")]
    UnknownLabel(NodeId),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A binary voxel mask. Spacing is supplied separately by the operations
/// that need physical units.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BinaryMask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> BinaryMask {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        BinaryMask { dims, data }
    }

    pub fn zeros(dims: [usize; 3]) -> BinaryMask {
        BinaryMask::new(dims, vec![false; dims[0] * dims[1] * dims[2]])
    }

    /// Voxels equal to `id` in a label volume.
    pub fn from_class(labels: &LabelVolume, id: NodeId) -> BinaryMask {
        BinaryMask::new(labels.dims(), labels.data().iter().map(|&v| v == id).collect())
    }

    /// All nonzero voxels of a label volume.
    pub fn from_foreground(labels: &LabelVolume) -> BinaryMask {
        BinaryMask::new(labels.dims(), labels.data().iter().map(|v| !v.is_background()).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = (z * self.dims[1] + y) * self.dims[0] + x;
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn get_i(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return false;
        }
        self.get(x, y, z)
    }
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<(), MetricError> {
    if a.dims != b.dims {
        return Err(MetricError::DimMismatch { a: a.dims, b: b.dims });
    }
    Ok(())
}

/// Dice similarity coefficient `2|P∩R| / (|P|+|R|)`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64, MetricError> {
    check_dims(pred, reference)?;
    let mut inter = 0u64;
    let mut total = 0u64;
    for (p, r) in pred.data.iter().zip(&reference.data) {
        inter += (*p && *r) as u64;
        total += *p as u64 + *r as u64;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

const FACE_OFFSETS: [[i64; 3]; 6] =
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// Boundary voxels: foreground voxels with at least one face neighbor of
/// opposite value, the volume border counting as background.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let d = mask.dims;
    let mut out = BinaryMask::zeros(d);
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if !mask.get(x, y, z) {
                    continue;
                }
                let b = FACE_OFFSETS
                    .iter()
                    .any(|o| !mask.get_i(x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]));
                if b {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// 1D lower-envelope pass of the exact squared Euclidean distance
/// transform; `step` is the physical sample distance along this axis.
fn dt_1d(f: &[f64], step: f64, d: &mut [f64]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        let xq = q as f64 * step;
        while let Some(&p) = v.last() {
            let xp = p as f64 * step;
            let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * xq - 2.0 * xp);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        } else {
            let p = *v.last().unwrap();
            let xp = p as f64 * step;
            let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * xq - 2.0 * xp);
            z.push(s);
        }
        v.push(q);
    }
    if v.is_empty() {
        d.copy_from_slice(f);
        return;
    }
    let mut k = 0;
    for q in 0..n {
        let xq = q as f64 * step;
        while k + 1 < v.len() && z[k + 1] < xq {
            k += 1;
        }
        let xp = v[k] as f64 * step;
        d[q] = (xq - xp) * (xq - xp) + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in mm²) from every voxel center to the
/// nearest set voxel center, honoring anisotropic spacing. Source voxels get
/// 0; an empty source leaves the whole field at infinity.
pub fn distance_transform_sq(mask: &BinaryMask, spacing: [f64; 3]) -> Vec<f64> {
    let [w, h, d] = mask.dims;
    let mut field: Vec<f64> =
        mask.data.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();

    // Pass along x for every (y, z) row.
    field.par_chunks_mut(w).for_each(|row| {
        let f = row.to_vec();
        dt_1d(&f, spacing[0], row);
    });

    // Pass along y, slab by slab.
    let mut after_y = vec![0.0f64; field.len()];
    after_y
        .par_chunks_mut(w * h)
        .zip(field.par_chunks(w * h))
        .for_each(|(oslab, islab)| {
            let mut f = vec![0.0f64; h];
            let mut dcol = vec![0.0f64; h];
            for x in 0..w {
                for y in 0..h {
                    f[y] = islab[y * w + x];
                }
                dt_1d(&f, spacing[1], &mut dcol);
                for y in 0..h {
                    oslab[y * w + x] = dcol[y];
                }
            }
        });

    // Pass along z, pillar by pillar.
    let mut out = after_y.clone();
    let mut f = vec![0.0f64; d];
    let mut dcol = vec![0.0f64; d];
    for y in 0..h {
        for x in 0..w {
            for z in 0..d {
                f[z] = after_y[(z * h + y) * w + x];
            }
            dt_1d(&f, spacing[2], &mut dcol);
            for z in 0..d {
                out[(z * h + y) * w + x] = dcol[z];
            }
        }
    }
    out
}

/// Normalized surface distance: the fraction of boundary voxels (of either
/// mask) lying within `tau` millimetres of the other mask's boundary. Both
/// boundaries empty scores 1.
pub fn nsd(
    pred: &BinaryMask,
    reference: &BinaryMask,
    spacing: [f64; 3],
    tau_mm: f64,
) -> Result<f64, MetricError> {
    check_dims(pred, reference)?;
    let bp = boundary(pred);
    let br = boundary(reference);
    let np = bp.count();
    let nr = br.count();
    if np == 0 && nr == 0 {
        return Ok(1.0);
    }
    let tau2 = tau_mm * tau_mm;
    let mut close = 0u64;
    if np > 0 {
        let dist_r = distance_transform_sq(&br, spacing);
        close += bp.data.iter().zip(&dist_r).filter(|(b, d)| **b && **d <= tau2).count() as u64;
    }
    if nr > 0 {
        let dist_p = distance_transform_sq(&bp, spacing);
        close += br.data.iter().zip(&dist_p).filter(|(b, d)| **b && **d <= tau2).count() as u64;
    }
    Ok(close as f64 / (np + nr) as f64)
}

// 3x3x3 neighborhood bookkeeping for the simple-point test. Cells are
// indexed (dz+1)*9 + (dy+1)*3 + (dx+1); the center is 13.
const CENTER: usize = 13;

fn cell_offset(i: usize) -> [i64; 3] {
    [(i % 3) as i64 - 1, ((i / 3) % 3) as i64 - 1, (i / 9) as i64 - 1]
}

fn is_n18(i: usize) -> bool {
    let o = cell_offset(i);
    let m = o[0].abs() + o[1].abs() + o[2].abs();
    (1..=2).contains(&m)
}

fn is_face(i: usize) -> bool {
    let o = cell_offset(i);
    o[0].abs() + o[1].abs() + o[2].abs() == 1
}

fn load_neighborhood(mask: &BinaryMask, x: usize, y: usize, z: usize) -> [bool; 27] {
    let mut nb = [false; 27];
    for (i, slot) in nb.iter_mut().enumerate() {
        let o = cell_offset(i);
        *slot = mask.get_i(x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
    }
    nb
}

/// Number of 26-connected foreground components in the neighborhood,
/// excluding the center.
fn fg_components_26(nb: &[bool; 27]) -> usize {
    let mut seen = [false; 27];
    let mut components = 0;
    for start in 0..27 {
        if start == CENTER || !nb[start] || seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let oi = cell_offset(i);
            for j in 0..27 {
                if j == CENTER || seen[j] || !nb[j] {
                    continue;
                }
                let oj = cell_offset(j);
                let d =
                    [(oi[0] - oj[0]).abs(), (oi[1] - oj[1]).abs(), (oi[2] - oj[2]).abs()];
                if d.iter().copied().max().unwrap() == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

/// Number of 6-connected background components of the 18-neighborhood that
/// touch a face neighbor of the center.
fn bg_components_6(nb: &[bool; 27]) -> usize {
    let mut seen = [false; 27];
    let mut components = 0;
    for start in 0..27 {
        if !is_face(start) || nb[start] || seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let oi = cell_offset(i);
            for j in 0..27 {
                if seen[j] || nb[j] || !is_n18(j) {
                    continue;
                }
                let oj = cell_offset(j);
                let d = (oi[0] - oj[0]).abs() + (oi[1] - oj[1]).abs() + (oi[2] - oj[2]).abs();
                if d == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

/// A foreground voxel is simple when deleting it preserves local topology:
/// exactly one 26-connected foreground component around it and exactly one
/// 6-connected background component among the 18-neighbors touching a face.
fn is_simple(mask: &BinaryMask, x: usize, y: usize, z: usize) -> bool {
    let nb = load_neighborhood(mask, x, y, z);
    fg_components_26(&nb) == 1 && bg_components_6(&nb) == 1
}

fn neighbor_count_26(mask: &BinaryMask, x: usize, y: usize, z: usize) -> usize {
    let nb = load_neighborhood(mask, x, y, z);
    nb.iter().enumerate().filter(|&(i, &v)| i != CENTER && v).count()
}

/// Topology-preserving thinning: iterated directional boundary peeling with
/// a 26-neighborhood simple-point test and a fixed scan order. Endpoints
/// (voxels with exactly one foreground neighbor) are kept so open curves
/// survive. The result is contained in the input, preserves the number of
/// connected components, and re-running it is the identity.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut m = mask.clone();
    let d = m.dims;
    let mut candidates: Vec<[usize; 3]> = Vec::new();
    loop {
        let mut changed = false;
        for dir in FACE_OFFSETS {
            candidates.clear();
            for z in 0..d[2] {
                for y in 0..d[1] {
                    for x in 0..d[0] {
                        if !m.get(x, y, z) {
                            continue;
                        }
                        // Border point for this peel direction.
                        if m.get_i(x as i64 + dir[0], y as i64 + dir[1], z as i64 + dir[2]) {
                            continue;
                        }
                        if neighbor_count_26(&m, x, y, z) == 1 {
                            continue;
                        }
                        if is_simple(&m, x, y, z) {
                            candidates.push([x, y, z]);
                        }
                    }
                }
            }
            // Sequential re-check so voxels marked in parallel cannot break
            // connectivity when removed together.
            for &[x, y, z] in &candidates {
                if neighbor_count_26(&m, x, y, z) != 1 && is_simple(&m, x, y, z) {
                    m.set(x, y, z, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}

/// Number of 26-connected foreground components in a mask.
pub fn connected_components_26(mask: &BinaryMask) -> usize {
    let d = mask.dims;
    let mut seen = vec![false; mask.data.len()];
    let idx = |x: usize, y: usize, z: usize| (z * d[1] + y) * d[0] + x;
    let mut components = 0;
    let mut stack = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if !mask.get(x, y, z) || seen[idx(x, y, z)] {
                    continue;
                }
                components += 1;
                seen[idx(x, y, z)] = true;
                stack.push([x as i64, y as i64, z as i64]);
                while let Some([cx, cy, cz]) = stack.pop() {
                    for dz in -1..=1i64 {
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                let (nx, ny, nz) = (cx + dx, cy + dy, cz + dz);
                                if mask.get_i(nx, ny, nz)
                                    && !seen[idx(nx as usize, ny as usize, nz as usize)]
                                {
                                    seen[idx(nx as usize, ny as usize, nz as usize)] = true;
                                    stack.push([nx, ny, nz]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    components
}

fn count_and(a: &BinaryMask, b: &BinaryMask) -> u64 {
    a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count() as u64
}

fn contained_in(inner: &BinaryMask, outer: &BinaryMask) -> bool {
    inner.data.iter().zip(&outer.data).all(|(i, o)| !*i || *o)
}

/// Topological precision under the documented Q-set interpretation:
/// `|S_P ∩ V_L| / (|S_P ∩ (U − S_L)| + |S_P ∩ (S_L ∪ V_L)|)`, with 0/0 = 1.
pub fn tprec(
    s_p: &BinaryMask,
    s_l: &BinaryMask,
    v_l: &BinaryMask,
    v_p: &BinaryMask,
) -> Result<f64, MetricError> {
    check_dims(s_p, s_l)?;
    check_dims(s_p, v_l)?;
    check_dims(s_p, v_p)?;
    if !contained_in(s_p, v_p) || !contained_in(s_l, v_l) {
        return Err(MetricError::SkeletonOutsideVolume);
    }
    let num = count_and(s_p, v_l);
    let mut outside_sl = 0u64;
    let mut in_union = 0u64;
    for i in 0..s_p.data.len() {
        if s_p.data[i] {
            if !s_l.data[i] {
                outside_sl += 1;
            }
            if s_l.data[i] || v_l.data[i] {
                in_union += 1;
            }
        }
    }
    let den = outside_sl + in_union;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Topological sensitivity: the symmetric swap of [`tprec`], measuring how
/// much of the label skeleton the predicted volume captures.
pub fn tsens(
    s_l: &BinaryMask,
    s_p: &BinaryMask,
    v_p: &BinaryMask,
    v_l: &BinaryMask,
) -> Result<f64, MetricError> {
    tprec(s_l, s_p, v_p, v_l)
}

/// The full centerline score family for one volume pair. Skeletons are
/// computed internally with [`skeletonize`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TopologyScores {
    pub tprec: f64,
    pub tsens: f64,
    pub cl_x_dice: f64,
    /// Classic centerline precision `|S_P ∩ V_L| / |S_P|`.
    pub cldice_tprec: f64,
    /// Classic centerline sensitivity `|S_L ∩ V_P| / |S_L|`.
    pub cldice_tsens: f64,
    pub cl_dice: f64,
}

fn harmonic(p: f64, s: f64) -> f64 {
    if p + s == 0.0 {
        0.0
    } else {
        2.0 * p * s / (p + s)
    }
}

/// cl-X-Dice: harmonic mean of [`tprec`] and [`tsens`], plus the classic
/// clDice for reference.
pub fn cl_x_dice(v_p: &BinaryMask, v_l: &BinaryMask) -> Result<TopologyScores, MetricError> {
    check_dims(v_p, v_l)?;
    let s_p = skeletonize(v_p);
    let s_l = skeletonize(v_l);
    let tp = tprec(&s_p, &s_l, v_l, v_p)?;
    let ts = tsens(&s_l, &s_p, v_p, v_l)?;
    let sp_count = s_p.count() as f64;
    let sl_count = s_l.count() as f64;
    let cldice_tprec = if sp_count == 0.0 { 1.0 } else { count_and(&s_p, v_l) as f64 / sp_count };
    let cldice_tsens = if sl_count == 0.0 { 1.0 } else { count_and(&s_l, v_p) as f64 / sl_count };
    Ok(TopologyScores {
        tprec: tp,
        tsens: ts,
        cl_x_dice: harmonic(tp, ts),
        cldice_tprec,
        cldice_tsens,
        cl_dice: harmonic(cldice_tprec, cldice_tsens),
    })
}

/// Per-class metrics of one evaluated case.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub id: u16,
    pub name: String,
    pub dsc: f64,
    /// `None` when both masks are empty: there is no boundary to compare.
    pub nsd: Option<f64>,
    pub pred_voxels: u64,
    pub ref_voxels: u64,
}

/// Per-case multi-class report: per-leaf-class DSC/NSD, macro averages over
/// classes present in either volume, and foreground topology scores.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub case_id: String,
    pub tolerance_mm: f64,
    pub per_class: Vec<ClassMetrics>,
    pub mean_dsc: f64,
    pub mean_nsd: f64,
    pub tprec: f64,
    pub tsens: f64,
    pub cl_x_dice: f64,
    pub cl_dice: f64,
}

/// Evaluate a predicted label volume against a reference: per-leaf-class DSC
/// and NSD, their macro averages, and foreground centerline scores. Classes
/// absent from both volumes keep the 1.0 convention but are excluded from
/// the macro averages.
pub fn evaluate_case(
    pred: &LabelVolume,
    reference: &LabelVolume,
    tree: &SemanticTree,
    tau_mm: f64,
    case_id: &str,
) -> Result<MetricReport, MetricError> {
    if pred.dims() != reference.dims() {
        return Err(MetricError::DimMismatch { a: pred.dims(), b: reference.dims() });
    }
    if pred.spacing() != reference.spacing() {
        return Err(MetricError::SpacingMismatch { a: pred.spacing(), b: reference.spacing() });
    }
    for vol in [pred, reference] {
        for &v in vol.data() {
            if !v.is_background() && !tree.leaves().contains(&v) {
                return Err(MetricError::UnknownLabel(v));
            }
        }
    }
    let spacing = pred.spacing();
    let leaves: Vec<NodeId> = tree.leaves().to_vec();
    let per_class: Vec<ClassMetrics> = leaves
        .par_iter()
        .map(|&id| {
            let pm = BinaryMask::from_class(pred, id);
            let rm = BinaryMask::from_class(reference, id);
            let pred_voxels = pm.count() as u64;
            let ref_voxels = rm.count() as u64;
            let dsc = dice(&pm, &rm).expect("dims checked");
            let nsd_val = if pred_voxels == 0 && ref_voxels == 0 {
                None
            } else {
                Some(nsd(&pm, &rm, spacing, tau_mm).expect("dims checked"))
            };
            ClassMetrics {
                id: id.0,
                name: tree.name(id).expect("leaf in tree").to_string(),
                dsc,
                nsd: nsd_val,
                pred_voxels,
                ref_voxels,
            }
        })
        .collect();

    let present: Vec<&ClassMetrics> =
        per_class.iter().filter(|c| c.pred_voxels + c.ref_voxels > 0).collect();
    let (mean_dsc, mean_nsd) = if present.is_empty() {
        (1.0, 1.0)
    } else {
        let n = present.len() as f64;
        (
            present.iter().map(|c| c.dsc).sum::<f64>() / n,
            present.iter().map(|c| c.nsd.unwrap_or(1.0)).sum::<f64>() / n,
        )
    };

    let scores =
        cl_x_dice(&BinaryMask::from_foreground(pred), &BinaryMask::from_foreground(reference))?;
    Ok(MetricReport {
        case_id: case_id.to_string(),
        tolerance_mm: tau_mm,
        per_class,
        mean_dsc,
        mean_nsd,
        tprec: scores.tprec,
        tsens: scores.tsens,
        cl_x_dice: scores.cl_x_dice,
        cl_dice: scores.cl_dice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(dims: [usize; 3], set: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::zeros(dims);
        for &[x, y, z] in set {
            m.set(x, y, z, true);
        }
        m
    }

    #[test]
    fn dice_basic_cases() {
        let a = mask_from([3, 3, 1], &[[0, 0, 0], [1, 0, 0]]);
        let b = mask_from([3, 3, 1], &[[1, 0, 0], [2, 0, 0], [2, 1, 0]]);
        // |P|=2, |R|=3, overlap 1 -> 2/5.
        assert_eq!(dice(&a, &b).unwrap(), 0.4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let e = BinaryMask::zeros([3, 3, 1]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(matches!(
            dice(&a, &BinaryMask::zeros([2, 2, 1])),
            Err(MetricError::DimMismatch { .. })
        ));
    }

    #[test]
    fn boundary_counts_border_as_background() {
        // A full 2x2x2 block: every voxel touches the border, all boundary.
        let m = BinaryMask::new([2, 2, 2], vec![true; 8]);
        assert_eq!(boundary(&m).count(), 8);
        // A 3x3x3 solid in a 5x5x5 grid: the center voxel is interior.
        let mut m = BinaryMask::zeros([5, 5, 5]);
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    m.set(x, y, z, true);
                }
            }
        }
        let b = boundary(&m);
        assert_eq!(b.count(), 26);
        assert!(!b.get(2, 2, 2));
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let m = mask_from([4, 3, 2], &[[0, 0, 0], [3, 2, 1]]);
        let spacing = [1.0, 2.0, 0.5];
        let dt = distance_transform_sq(&m, spacing);
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let mut best = f64::INFINITY;
                    for &[sx, sy, sz] in &[[0usize, 0, 0], [3, 2, 1]] {
                        let dx = (x as f64 - sx as f64) * spacing[0];
                        let dy = (y as f64 - sy as f64) * spacing[1];
                        let dz = (z as f64 - sz as f64) * spacing[2];
                        best = best.min(dx * dx + dy * dy + dz * dz);
                    }
                    assert_eq!(dt[(z * 3 + y) * 4 + x], best, "at ({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn nsd_identity_and_separation() {
        let m = mask_from([4, 4, 4], &[[1, 1, 1], [2, 1, 1]]);
        assert_eq!(nsd(&m, &m, [1.0; 3], 2.0).unwrap(), 1.0);
        // Two blobs 20 mm apart see nothing within 2 mm.
        let a = mask_from([30, 2, 2], &[[0, 0, 0]]);
        let b = mask_from([30, 2, 2], &[[20, 0, 0]]);
        assert_eq!(nsd(&a, &b, [1.0; 3], 2.0).unwrap(), 0.0);
        // Empty vs empty has no boundaries to compare.
        let e = BinaryMask::zeros([4, 4, 4]);
        assert_eq!(nsd(&e, &e, [1.0; 3], 2.0).unwrap(), 1.0);
        // Empty vs nonempty finds nothing.
        assert_eq!(nsd(&e, &m, [1.0; 3], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn nsd_shifted_cube_within_tolerance() {
        // 3x3x3 cube and the same cube shifted by one voxel at 1 mm spacing.
        let mut a = BinaryMask::zeros([6, 6, 6]);
        let mut b = BinaryMask::zeros([6, 6, 6]);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    a.set(x, y, z, true);
                    b.set(x + 1, y, z, true);
                }
            }
        }
        assert_eq!(nsd(&a, &b, [1.0; 3], 2.0).unwrap(), 1.0);
    }

    #[test]
    fn skeleton_fixed_points() {
        // A 1-voxel-wide path is already skeletal.
        let path =
            mask_from([5, 1, 1], &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]]);
        assert_eq!(skeletonize(&path), path);
        // A single isolated voxel survives.
        let dot = mask_from([3, 3, 3], &[[1, 1, 1]]);
        assert_eq!(skeletonize(&dot), dot);
        // Empty stays empty.
        let e = BinaryMask::zeros([3, 3, 3]);
        assert_eq!(skeletonize(&e), e);
    }

    #[test]
    fn skeleton_of_solid_tube_is_a_thin_spanning_curve() {
        // Solid 5x5x21 tube embedded in a 9x9x25 grid.
        let mut m = BinaryMask::zeros([9, 9, 25]);
        for z in 2..23 {
            for y in 2..7 {
                for x in 2..7 {
                    m.set(x, y, z, true);
                }
            }
        }
        let s = skeletonize(&m);
        assert!(s.count() > 0);
        assert!(contained_in(&s, &m));
        assert_eq!(connected_components_26(&s), 1);
        // Spans the long axis.
        let mut zmin = usize::MAX;
        let mut zmax = 0;
        for z in 0..25 {
            for y in 0..9 {
                for x in 0..9 {
                    if s.get(x, y, z) {
                        zmin = zmin.min(z);
                        zmax = zmax.max(z);
                    }
                }
            }
        }
        assert!(zmax - zmin >= 16, "skeleton z-extent {zmin}..{zmax}");
        // Thin: roughly one voxel per slice.
        assert!(s.count() <= 30, "skeleton has {} voxels", s.count());
        // Idempotent.
        assert_eq!(skeletonize(&s), s);
    }

    #[test]
    fn skeleton_preserves_component_count() {
        let mut m = BinaryMask::zeros([12, 5, 5]);
        for x in 0..4 {
            for y in 1..4 {
                m.set(x, y, 2, true);
            }
        }
        for x in 7..11 {
            for y in 1..4 {
                m.set(x, y, 2, true);
            }
        }
        assert_eq!(connected_components_26(&m), 2);
        let s = skeletonize(&m);
        assert_eq!(connected_components_26(&s), 2);
    }

    #[test]
    fn tprec_tsens_perfect_and_disjoint() {
        let v = mask_from([5, 2, 2], &[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let s = mask_from([5, 2, 2], &[[1, 0, 0]]);
        assert_eq!(tprec(&s, &s, &v, &v).unwrap(), 1.0);
        assert_eq!(tsens(&s, &s, &v, &v).unwrap(), 1.0);
        // Disjoint prediction skeleton scores zero precision.
        let s_p = mask_from([5, 2, 2], &[[4, 1, 1]]);
        let v_p = mask_from([5, 2, 2], &[[4, 1, 1]]);
        assert_eq!(tprec(&s_p, &s, &v, &v_p).unwrap(), 0.0);
        // Empty-empty convention.
        let e = BinaryMask::zeros([5, 2, 2]);
        assert_eq!(tprec(&e, &e, &e, &e).unwrap(), 1.0);
        // Containment violation is an error.
        assert!(matches!(tprec(&s_p, &s, &v, &e), Err(MetricError::SkeletonOutsideVolume)));
    }

    #[test]
    fn cl_x_dice_identity_and_miss() {
        let mut v = BinaryMask::zeros([9, 5, 5]);
        for x in 1..8 {
            for y in 1..4 {
                for z in 1..4 {
                    v.set(x, y, z, true);
                }
            }
        }
        let scores = cl_x_dice(&v, &v).unwrap();
        assert_eq!(scores.cl_x_dice, 1.0);
        assert_eq!(scores.cl_dice, 1.0);
        let e = BinaryMask::zeros([9, 5, 5]);
        let scores = cl_x_dice(&e, &v).unwrap();
        assert_eq!(scores.cl_x_dice, 0.0);
    }

    #[test]
    fn gap_penalized_harder_than_dice() {
        // Intact 1-voxel tube vs the same tube with a gap in the middle.
        let dims = [21, 5, 5];
        let mut intact = BinaryMask::zeros(dims);
        for x in 0..21 {
            intact.set(x, 2, 2, true);
        }
        let mut gappy = intact.clone();
        gappy.set(10, 2, 2, false);
        let d = dice(&gappy, &intact).unwrap();
        let scores = cl_x_dice(&gappy, &intact).unwrap();
        assert!(
            scores.cl_x_dice < d,
            "cl_x_dice {} should fall below dice {}",
            scores.cl_x_dice,
            d
        );
    }
}
