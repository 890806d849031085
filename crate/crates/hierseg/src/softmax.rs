//! Fractal softmax: recursive max-lifting of leaf logits up the semantic
//! tree followed by an independent softmax at every level, together with a
//! verifier for the hierarchical probability constraints and hard decoding.
//!
//! Lifting computes, for every non-leaf node, the per-voxel maximum over its
//! children's scores; the background score passes upward unchanged so each
//! level normalizes over a complete `|V_l| + 1` simplex. Because the parent
//! numerator dominates each child's and the coarser level's denominator
//! never exceeds the finer one's, parent probabilities dominate child
//! probabilities at every voxel — the property the verifier checks
//! numerically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{NodeId, SemanticTree, TreeError};
use crate::volume::{self, GridError, LabelVolume, LogitField, VGrid};

#[derive(Error, Debug)]
pub enum SoftmaxError {
    #[error("leaf channel map does not match the tree leaf set")]
    ChannelMapMismatch,
    #[error("non-finite logit encountered")]
    NonFinite,
    #[error("pyramid level {level} channel map does not match the tree")]
    LevelMismatch { level: usize },
    #[error("probabilities at level {level} violate the simplex invariant at voxel {voxel}")]
    NotASimplex { level: usize, voxel: usize },
    #[error("pyramid has no levels")]
    EmptyPyramid,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One level of the pyramid: per-channel probability planes (and, when the
/// pyramid was produced by [`fractal_softmax`], the lifted logits).
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub channel_map: Vec<NodeId>,
    /// Channel-major planes, `channels * voxels` values.
    pub probs: Vec<f64>,
    pub logits: Option<Vec<f64>>,
}

/// Per-level probability fields produced by fractal softmax, coarsest level
/// first. Every voxel's channel values are nonnegative and sum to one at
/// every level.
#[derive(Clone, Debug)]
pub struct ProbabilityPyramid {
    dims: [usize; 3],
    spacing: [f64; 3],
    levels: Vec<PyramidLevel>,
}

impl ProbabilityPyramid {
    /// Assemble a pyramid from per-level channel maps and probability
    /// planes, validating the simplex invariant (tolerance 1e-6).
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        levels: Vec<PyramidLevel>,
    ) -> Result<ProbabilityPyramid, SoftmaxError> {
        if levels.is_empty() {
            return Err(SoftmaxError::EmptyPyramid);
        }
        let n = dims[0] * dims[1] * dims[2];
        for (li, level) in levels.iter().enumerate() {
            let c = level.channel_map.len();
            for vox in 0..n {
                let mut sum = 0.0;
                for ch in 0..c {
                    let p = level.probs[ch * n + vox];
                    if !(p >= 0.0) {
                        return Err(SoftmaxError::NotASimplex { level: li + 1, voxel: vox });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(SoftmaxError::NotASimplex { level: li + 1, voxel: vox });
                }
            }
        }
        Ok(ProbabilityPyramid { dims, spacing, levels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Level `l` (1-based, 1 = coarsest).
    pub fn level(&self, l: usize) -> &PyramidLevel {
        &self.levels[l - 1]
    }
}

/// Re-index arbitrary leaf channel order to the tree's ascending leaf order,
/// background first. Errors if the map is not a bijection onto the leaf set.
fn leaf_logits_ascending(
    tree: &SemanticTree,
    leaf: &LogitField,
) -> Result<Vec<f64>, SoftmaxError> {
    let want = tree.leaf_channel_map();
    let have = leaf.channel_map();
    if have.len() != want.len() {
        return Err(SoftmaxError::ChannelMapMismatch);
    }
    let n = leaf.voxel_count();
    let mut out = vec![0.0; want.len() * n];
    for (dst, id) in want.iter().enumerate() {
        let src = have
            .iter()
            .position(|x| x == id)
            .ok_or(SoftmaxError::ChannelMapMismatch)?;
        out[dst * n..(dst + 1) * n].copy_from_slice(leaf.channel(src));
    }
    Ok(out)
}

/// Argmax routing recorded during a lift, used to backroute gradients and to
/// guard finite differences near ties.
pub struct LiftTrace {
    /// `winners[l-1]` covers level `l` in `1..L`: for each foreground
    /// channel (0-based within the level) and voxel, the winning child
    /// channel index at level `l+1`.
    pub winners: Vec<Vec<u32>>,
    /// Margin between the winning child and the runner-up (`f64::INFINITY`
    /// for single-child nodes).
    pub margins: Vec<Vec<f64>>,
}

pub struct LiftedLogits {
    /// Per level `1..=L`, channel-major logit planes in ascending-id channel
    /// order (background first).
    pub levels: Vec<Vec<f64>>,
    /// Channel maps per level.
    pub channel_maps: Vec<Vec<NodeId>>,
}

/// Recursively lift leaf logits up the tree: each parent's score is the
/// per-voxel maximum over its children's, the background channel passing
/// upward unchanged. Returns per-level logits, coarsest first.
pub fn lift_logits(tree: &SemanticTree, leaf: &LogitField) -> Result<LiftedLogits, SoftmaxError> {
    let (lifted, _) = lift_logits_traced(tree, leaf)?;
    Ok(lifted)
}

/// As [`lift_logits`], additionally recording argmax routing and margins.
pub fn lift_logits_traced(
    tree: &SemanticTree,
    leaf: &LogitField,
) -> Result<(LiftedLogits, LiftTrace), SoftmaxError> {
    if leaf.data().iter().any(|v| !v.is_finite()) {
        return Err(SoftmaxError::NonFinite);
    }
    let depth = tree.depth();
    let n = leaf.voxel_count();
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut channel_maps: Vec<Vec<NodeId>> = Vec::with_capacity(depth);
    for l in 1..=depth {
        channel_maps.push(tree.level_channel_map(l)?);
    }
    levels[depth - 1] = leaf_logits_ascending(tree, leaf)?;

    let mut winners: Vec<Vec<u32>> = vec![Vec::new(); depth.saturating_sub(1)];
    let mut margins: Vec<Vec<f64>> = vec![Vec::new(); depth.saturating_sub(1)];

    for l in (1..depth).rev() {
        // Build level l from level l+1.
        let child_map = &channel_maps[l];
        let this_map = &channel_maps[l - 1];
        let child_logits = std::mem::take(&mut levels[l]);
        let mut this_logits = vec![0.0; this_map.len() * n];
        let mut this_winners = vec![0u32; (this_map.len() - 1) * n];
        let mut this_margins = vec![0.0f64; (this_map.len() - 1) * n];

        // Background passes through unchanged.
        this_logits[..n].copy_from_slice(&child_logits[..n]);

        for (ci, &v) in this_map.iter().enumerate().skip(1) {
            let kids = tree.subclasses(v)?;
            let kid_channels: Vec<usize> = kids
                .iter()
                .map(|k| child_map.iter().position(|x| x == k).expect("child in next level"))
                .collect();
            for vox in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                let mut win = 0u32;
                for &kc in &kid_channels {
                    let val = child_logits[kc * n + vox];
                    if val > best {
                        second = best;
                        best = val;
                        win = kc as u32;
                    } else if val > second {
                        second = val;
                    }
                }
                this_logits[ci * n + vox] = best;
                this_winners[(ci - 1) * n + vox] = win;
                this_margins[(ci - 1) * n + vox] =
                    if kid_channels.len() == 1 { f64::INFINITY } else { best - second };
            }
        }
        levels[l] = child_logits;
        levels[l - 1] = this_logits;
        winners[l - 1] = this_winners;
        margins[l - 1] = this_margins;
    }

    Ok((LiftedLogits { levels, channel_maps }, LiftTrace { winners, margins }))
}

/// Numerically stable per-voxel softmax over channel-major planes, written
/// into `probs`.
pub(crate) fn softmax_planes(logits: &[f64], channels: usize, n: usize, probs: &mut [f64]) {
    for vox in 0..n {
        let mut max = f64::NEG_INFINITY;
        for c in 0..channels {
            max = max.max(logits[c * n + vox]);
        }
        let mut sum = 0.0;
        for c in 0..channels {
            let e = (logits[c * n + vox] - max).exp();
            probs[c * n + vox] = e;
            sum += e;
        }
        for c in 0..channels {
            probs[c * n + vox] /= sum;
        }
    }
}

/// Apply fractal softmax: lift leaf logits to every level and normalize each
/// level independently.
pub fn fractal_softmax(
    tree: &SemanticTree,
    leaf: &LogitField,
) -> Result<ProbabilityPyramid, SoftmaxError> {
    let lifted = lift_logits(tree, leaf)?;
    let n = leaf.voxel_count();
    let mut levels = Vec::with_capacity(lifted.levels.len());
    for (logits, map) in lifted.levels.into_iter().zip(lifted.channel_maps) {
        let channels = map.len();
        let mut probs = vec![0.0; logits.len()];
        softmax_planes(&logits, channels, n, &mut probs);
        levels.push(PyramidLevel { channel_map: map, probs, logits: Some(logits) });
    }
    ProbabilityPyramid::new(leaf.dims(), leaf.spacing(), levels)
}

/// Count and worst excess of one constraint family.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ViolationStat {
    pub count: u64,
    /// Largest violation margin (amount by which the constraint was
    /// exceeded) among voxels beyond tolerance; 0 when `count` is 0.
    pub worst_margin: f64,
}

impl ViolationStat {
    fn record(&mut self, margin: f64) {
        self.count += 1;
        if margin > self.worst_margin {
            self.worst_margin = margin;
        }
    }
}

/// Violation counts for the hierarchical probability constraints.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ConstraintReport {
    /// Parent/child ordering: `p_child <= p_parent` for adjacent levels.
    pub positive_child_parent: ViolationStat,
    /// Ancestor/descendant ordering across any pair of levels.
    pub negative_descendant_ancestor: ViolationStat,
    /// Sibling exclusivity: `p_v + p_u <= 1` within a level.
    pub exclusivity: ViolationStat,
    /// Background must not lose mass towards coarser levels.
    pub background_monotone: ViolationStat,
    pub tolerance: f64,
}

impl ConstraintReport {
    pub fn total_violations(&self) -> u64 {
        self.positive_child_parent.count
            + self.negative_descendant_ancestor.count
            + self.exclusivity.count
            + self.background_monotone.count
    }

    pub fn worst_margin(&self) -> f64 {
        self.positive_child_parent
            .worst_margin
            .max(self.negative_descendant_ancestor.worst_margin)
            .max(self.exclusivity.worst_margin)
            .max(self.background_monotone.worst_margin)
    }
}

/// Verify the probability-ordering constraints on a pyramid. Violations are
/// data, not errors: the report carries a count and the worst margin per
/// constraint family.
pub fn check_constraints(
    pyr: &ProbabilityPyramid,
    tree: &SemanticTree,
    tol: f64,
) -> Result<ConstraintReport, SoftmaxError> {
    let depth = tree.depth();
    if pyr.depth() != depth {
        return Err(SoftmaxError::LevelMismatch { level: pyr.depth().min(depth) });
    }
    for l in 1..=depth {
        if pyr.level(l).channel_map != tree.level_channel_map(l)? {
            return Err(SoftmaxError::LevelMismatch { level: l });
        }
    }
    let n = pyr.voxel_count();
    let mut report = ConstraintReport { tolerance: tol, ..Default::default() };

    // Ancestor/descendant ordering for every level pair; adjacent pairs also
    // feed the parent/child statistic.
    for la in 1..depth {
        for ld in la + 1..=depth {
            let map_d = &pyr.level(ld).channel_map;
            let map_a = &pyr.level(la).channel_map;
            let ancestor_channel: Vec<usize> = map_d
                .iter()
                .skip(1)
                .map(|&v| {
                    let anc = tree.ancestor_at_level(v, la).expect("leaf depth covers level");
                    map_a.iter().position(|x| *x == anc).expect("ancestor in level map")
                })
                .collect();
            let pd = &pyr.level(ld).probs;
            let pa = &pyr.level(la).probs;
            for (ci, &ac) in ancestor_channel.iter().enumerate() {
                let c = ci + 1;
                for vox in 0..n {
                    let margin = pd[c * n + vox] - pa[ac * n + vox];
                    if margin > tol {
                        report.negative_descendant_ancestor.record(margin);
                        if ld == la + 1 {
                            report.positive_child_parent.record(margin);
                        }
                    }
                }
            }
        }
    }

    // Sibling exclusivity within each level: p_v + p_u <= 1 for distinct
    // channels. Scanning sorted per-voxel probabilities catches all
    // violating pairs without the full quadratic sweep in the common case.
    let mut sorted: Vec<f64> = Vec::new();
    for l in 1..=depth {
        let level = pyr.level(l);
        let channels = level.channel_map.len();
        if channels < 2 {
            continue;
        }
        for vox in 0..n {
            sorted.clear();
            sorted.extend((0..channels).map(|c| level.probs[c * n + vox]));
            sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
            'outer: for i in 0..channels - 1 {
                for j in i + 1..channels {
                    let margin = sorted[i] + sorted[j] - 1.0;
                    if margin > tol {
                        report.exclusivity.record(margin);
                    } else {
                        if j == i + 1 {
                            break 'outer;
                        }
                        break;
                    }
                }
            }
        }
    }

    // Background monotonicity towards the root.
    for l in 1..depth {
        let coarse = &pyr.level(l).probs;
        let fine = &pyr.level(l + 1).probs;
        for vox in 0..n {
            let margin = fine[vox] - coarse[vox];
            if margin > tol {
                report.background_monotone.record(margin);
            }
        }
    }

    Ok(report)
}

/// Hard decode: per level, the argmax channel at every voxel, ties broken to
/// the smallest id. With a tie-free leaf argmax the per-level decodes form a
/// root-to-leaf consistent labeling.
pub fn decode(pyr: &ProbabilityPyramid, _tree: &SemanticTree) -> Vec<LabelVolume> {
    let n = pyr.voxel_count();
    let mut out = Vec::with_capacity(pyr.depth());
    for l in 1..=pyr.depth() {
        let level = pyr.level(l);
        let channels = level.channel_map.len();
        let mut data = vec![NodeId::BACKGROUND; n];
        for (vox, slot) in data.iter_mut().enumerate() {
            let mut best_c = 0usize;
            let mut best = level.probs[vox];
            for c in 1..channels {
                let p = level.probs[c * n + vox];
                // Strict improvement keeps the earliest (smallest-id) channel
                // on ties; channel maps are ascending by construction.
                if p > best {
                    best = p;
                    best_c = c;
                }
            }
            *slot = level.channel_map[best_c];
        }
        out.push(LabelVolume::new(pyr.dims(), pyr.spacing(), data).expect("shape preserved"));
    }
    out
}

fn level_path(prefix: &Path, l: usize) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!("_l{l}.vgrid"));
    prefix.with_file_name(name)
}

/// Write one `.vgrid` per level, `<prefix>_l<l>.vgrid`, carrying the level's
/// probabilities and channel map.
pub fn save_pyramid(pyr: &ProbabilityPyramid, prefix: &Path) -> Result<(), SoftmaxError> {
    for l in 1..=pyr.depth() {
        let level = pyr.level(l);
        let field = LogitField::new(
            pyr.dims(),
            pyr.spacing(),
            level.channel_map.clone(),
            level.probs.clone(),
        )?;
        volume::save_logits(&field, &level_path(prefix, l))?;
    }
    Ok(())
}

/// Load a pyramid written by [`save_pyramid`], reading consecutive levels
/// until the next file is missing.
pub fn load_pyramid(prefix: &Path) -> Result<ProbabilityPyramid, SoftmaxError> {
    let mut levels = Vec::new();
    let mut dims = None;
    let mut spacing = [1.0; 3];
    for l in 1.. {
        let path = level_path(prefix, l);
        if !path.exists() {
            break;
        }
        let field = match volume::load_vgrid(&path)? {
            VGrid::Logits(f) => f,
            _ => {
                return Err(SoftmaxError::Grid(GridError::DtypeMismatch {
                    expected: "f32 multi-channel",
                    found: "other".into(),
                }))
            }
        };
        dims = Some(field.dims());
        spacing = field.spacing();
        levels.push(PyramidLevel {
            channel_map: field.channel_map().to_vec(),
            probs: field.data().to_vec(),
            logits: None,
        });
    }
    match dims {
        Some(d) => ProbabilityPyramid::new(d, spacing, levels),
        None => Err(SoftmaxError::EmptyPyramid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_hierarchy;

    fn chain_tree() -> SemanticTree {
        parse_hierarchy(
            r#"{"classes":[
                {"id":10,"name":"Artery","parent":null},
                {"id":1,"name":"Aorta","parent":10},
                {"id":2,"name":"Branch","parent":10}
            ]}"#,
        )
        .unwrap()
    }

    fn single_voxel_logits(tree: &SemanticTree, values: &[f64]) -> LogitField {
        LogitField::new([1, 1, 1], [1.0; 3], tree.leaf_channel_map(), values.to_vec()).unwrap()
    }

    #[test]
    fn lift_takes_child_max() {
        let tree = chain_tree();
        // Channels: bg, Aorta(1), Branch(2).
        let leaf = single_voxel_logits(&tree, &[0.0, 2.0, 1.0]);
        let lifted = lift_logits(&tree, &leaf).unwrap();
        // Level 1: bg passes through, Artery takes max(2, 1).
        assert_eq!(lifted.levels[0], vec![0.0, 2.0]);
        assert_eq!(lifted.channel_maps[0], vec![NodeId(0), NodeId(10)]);
    }

    #[test]
    fn single_level_tree_lift_is_identity() {
        let tree = parse_hierarchy(
            r#"{"classes":[{"id":1,"name":"A","parent":null},{"id":2,"name":"B","parent":null}]}"#,
        )
        .unwrap();
        let leaf = single_voxel_logits(&tree, &[0.5, -1.0, 3.0]);
        let lifted = lift_logits(&tree, &leaf).unwrap();
        assert_eq!(lifted.levels.len(), 1);
        assert_eq!(lifted.levels[0], vec![0.5, -1.0, 3.0]);
    }

    #[test]
    fn chain_probabilities_match_hand_softmax() {
        let tree = chain_tree();
        let leaf = single_voxel_logits(&tree, &[0.0, 2.0, 1.0]);
        let pyr = fractal_softmax(&tree, &leaf).unwrap();
        let p2 = &pyr.level(2).probs;
        // softmax(0, 2, 1)
        let z: f64 = 1.0 + 2.0f64.exp() + 1.0f64.exp();
        assert!((p2[0] - 1.0 / z).abs() < 1e-12);
        assert!((p2[1] - 2.0f64.exp() / z).abs() < 1e-12);
        assert!((p2[2] - 1.0f64.exp() / z).abs() < 1e-12);
        assert!((p2[0] - 0.0900).abs() < 5e-5);
        assert!((p2[1] - 0.6652).abs() < 5e-5);
        assert!((p2[2] - 0.2447).abs() < 5e-5);
        let p1 = &pyr.level(1).probs;
        let z1: f64 = 1.0 + 2.0f64.exp();
        assert!((p1[0] - 1.0 / z1).abs() < 1e-12);
        assert!((p1[1] - 2.0f64.exp() / z1).abs() < 1e-12);
        assert!((p1[0] - 0.1192).abs() < 5e-5);
        assert!((p1[1] - 0.8808).abs() < 5e-5);
    }

    #[test]
    fn uniform_logits_give_uniform_leaf_probs() {
        let tree = chain_tree();
        let leaf = single_voxel_logits(&tree, &[0.7, 0.7, 0.7]);
        let pyr = fractal_softmax(&tree, &leaf).unwrap();
        for c in 0..3 {
            assert!((pyr.level(2).probs[c] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_map_mismatch_rejected() {
        let tree = chain_tree();
        let bad = LogitField::new(
            [1, 1, 1],
            [1.0; 3],
            vec![NodeId(0), NodeId(1), NodeId(9)],
            vec![0.0; 3],
        )
        .unwrap();
        assert!(matches!(
            fractal_softmax(&tree, &bad),
            Err(SoftmaxError::ChannelMapMismatch)
        ));
    }

    #[test]
    fn fractal_output_satisfies_constraints() {
        let tree = chain_tree();
        let leaf = single_voxel_logits(&tree, &[0.3, -1.2, 2.4]);
        let pyr = fractal_softmax(&tree, &leaf).unwrap();
        let report = check_constraints(&pyr, &tree, 1e-9).unwrap();
        assert_eq!(report.total_violations(), 0);
    }

    #[test]
    fn constructed_violation_detected() {
        let tree = chain_tree();
        // Level 1 (bg, Artery) = (0.5, 0.5); level 2 (bg, Aorta, Branch) =
        // (0.05, 0.9, 0.05): Aorta (0.9) exceeds its parent (0.5) by 0.4.
        let levels = vec![
            PyramidLevel {
                channel_map: vec![NodeId(0), NodeId(10)],
                probs: vec![0.5, 0.5],
                logits: None,
            },
            PyramidLevel {
                channel_map: vec![NodeId(0), NodeId(1), NodeId(2)],
                probs: vec![0.05, 0.9, 0.05],
                logits: None,
            },
        ];
        let pyr = ProbabilityPyramid::new([1, 1, 1], [1.0; 3], levels).unwrap();
        let report = check_constraints(&pyr, &tree, 1e-9).unwrap();
        assert_eq!(report.positive_child_parent.count, 1);
        assert!((report.positive_child_parent.worst_margin - 0.4).abs() < 1e-12);
        // p_child > p_parent also violates exclusivity? 0.9 + 0.05 <= 1, no.
        assert_eq!(report.exclusivity.count, 0);
    }

    #[test]
    fn uniform_pyramid_has_no_exclusivity_violation() {
        let tree = parse_hierarchy(
            r#"{"classes":[{"id":1,"name":"A","parent":null}]}"#,
        )
        .unwrap();
        let pyr = ProbabilityPyramid::new(
            [1, 1, 1],
            [1.0; 3],
            vec![PyramidLevel {
                channel_map: vec![NodeId(0), NodeId(1)],
                probs: vec![0.5, 0.5],
                logits: None,
            }],
        )
        .unwrap();
        let report = check_constraints(&pyr, &tree, 1e-9).unwrap();
        assert_eq!(report.exclusivity.count, 0);
    }

    #[test]
    fn decode_follows_argmax_with_hierarchical_consistency() {
        let tree = chain_tree();
        let leaf = single_voxel_logits(&tree, &[0.0, 2.0, 1.0]);
        let pyr = fractal_softmax(&tree, &leaf).unwrap();
        let decoded = decode(&pyr, &tree);
        assert_eq!(decoded[1].data(), &[NodeId(1)]); // Aorta at the leaf level
        assert_eq!(decoded[0].data(), &[NodeId(10)]); // Artery at level 1
        // Background-dominant logits decode to background at every level.
        let leaf = single_voxel_logits(&tree, &[5.0, 1.0, 0.0]);
        let pyr = fractal_softmax(&tree, &leaf).unwrap();
        for lv in decode(&pyr, &tree) {
            assert_eq!(lv.data(), &[NodeId::BACKGROUND]);
        }
    }

    #[test]
    fn pyramid_roundtrip_through_vgrid_files() {
        let tree = chain_tree();
        let leaf = LogitField::new(
            [2, 1, 1],
            [1.0; 3],
            tree.leaf_channel_map(),
            vec![0.0, 1.0, 2.0, -1.0, 1.0, 0.5],
        )
        .unwrap();
        let pyr = fractal_softmax(&tree, &leaf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("pyr");
        save_pyramid(&pyr, &prefix).unwrap();
        let loaded = load_pyramid(&prefix).unwrap();
        assert_eq!(loaded.depth(), 2);
        assert_eq!(loaded.level(1).channel_map, pyr.level(1).channel_map);
        // f32 storage: values agree to f32 precision.
        for l in 1..=2 {
            for (a, b) in loaded.level(l).probs.iter().zip(&pyr.level(l).probs) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
