//! The semantic class hierarchy `T = (V, E)`.
//!
//! Nodes are anatomical classes, edges denote superclass relations. Levels
//! are numbered `1..=L` from the coarsest foreground classes down to the
//! leaves; background (id 0) is a virtual class present at every level and
//! is never a tree node. After construction the tree is depth-normalized:
//! every leaf sits at depth exactly `L`, shallower original leaves having
//! gained pass-through alias descendants so that each level partitions the
//! leaf set.

use std::collections::HashMap;

use serde::Deserialize;
use thiserror::Error;

use crate::volume::LabelVolume;

/// Identifier of a class. `0` is reserved for background at every level and
/// never names a tree node.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, serde::Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const BACKGROUND: NodeId = NodeId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for NodeId {
    fn from(v: u16) -> Self {
        NodeId(v)
    }
}

#[derive(Error, Debug)]
pub enum TreeError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("id 0 is reserved for background and cannot be used by node or parent")]
    IdZeroUsed,
    #[error("node {node} references unknown parent {parent}")]
    DanglingParent { node: NodeId, parent: NodeId },
    #[error("cycle detected through node {0}")]
    Cycle(NodeId),
    #[error("empty hierarchy")]
    Empty,
    #[error("unknown node id {0}")]
    UnknownId(NodeId),
    #[error("background has no tree node")]
    Background,
    #[error("level {level} outside 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error("node {node} lies above level {level} and has no ancestor there")]
    NodeAboveLevel { node: NodeId, level: usize },
    #[error("voxel value {0} is not a known leaf class")]
    NotALeaf(NodeId),
    #[error("node id space exhausted while inserting alias nodes")]
    IdSpaceExhausted,
    #[error("malformed hierarchy document: {0}")]
    Document(String),
}

#[derive(Clone, Debug)]
struct Node {
    id: NodeId,
    name: String,
    parent: Option<NodeId>,
    /// For pass-through nodes inserted by depth normalization: the original
    /// node whose probability they carry.
    alias_of: Option<NodeId>,
}

/// Validated, depth-normalized class hierarchy.
///
/// Immutable after construction; all queries are cheap lookups. Child lists
/// and level sets are ordered by ascending id so that every downstream
/// consumer sees a deterministic channel order.
#[derive(Clone, Debug)]
pub struct SemanticTree {
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    children: HashMap<NodeId, Vec<NodeId>>,
    depth_of: HashMap<NodeId, usize>,
    /// `levels[l-1]` is `V_l`, ascending ids.
    levels: Vec<Vec<NodeId>>,
}

#[derive(Deserialize)]
struct ClassDecl {
    id: u32,
    name: String,
    parent: Option<u32>,
}

#[derive(Deserialize)]
struct HierarchyDoc {
    classes: Vec<ClassDecl>,
}

/// Parse a hierarchy document (UTF-8 JSON `{"classes":[{"id":..,"name":..,
/// "parent":..|null},..]}`) into a validated, depth-normalized tree.
///
/// Parents may be declared after their children; references are resolved
/// once the whole document has been read.
pub fn parse_hierarchy(text: &str) -> Result<SemanticTree, TreeError> {
    let doc: HierarchyDoc =
        serde_json::from_str(text).map_err(|e| TreeError::Document(e.to_string()))?;
    let mut nodes = Vec::with_capacity(doc.classes.len());
    for decl in doc.classes {
        if decl.id == 0 || decl.parent == Some(0) {
            return Err(TreeError::IdZeroUsed);
        }
        if decl.id > u16::MAX as u32 {
            return Err(TreeError::Document(format!(
                "node id {} exceeds the u16 label range",
                decl.id
            )));
        }
        if let Some(p) = decl.parent {
            if p > u16::MAX as u32 {
                return Err(TreeError::Document(format!(
                    "parent id {} exceeds the u16 label range",
                    p
                )));
            }
        }
        nodes.push(Node {
            id: NodeId(decl.id as u16),
            name: decl.name,
            parent: decl.parent.map(|p| NodeId(p as u16)),
            alias_of: None,
        });
    }
    SemanticTree::from_nodes(nodes)?.normalize_depths()
}

/// The example hierarchy shipped with the crate: 23 leaf vessel classes of
/// the aorta grouped under trunk/branch intermediate nodes.
///
/// The intermediate grouping (aortic zones versus arch/visceral/iliac branch
/// groups) is an approximate reconstruction of common anatomical practice,
/// not an authoritative ontology.
pub fn aorta_hierarchy_json() -> &'static str {
    include_str!("../assets/aorta_hierarchy.json")
}

impl SemanticTree {
    fn from_nodes(nodes: Vec<Node>) -> Result<SemanticTree, TreeError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(TreeError::DuplicateId(n.id));
            }
        }
        // Parent resolution + cycle detection via parent-chain walking.
        for n in &nodes {
            if let Some(p) = n.parent {
                if !index.contains_key(&p) {
                    return Err(TreeError::DanglingParent { node: n.id, parent: p });
                }
            }
        }
        let mut depth_of: HashMap<NodeId, usize> = HashMap::with_capacity(nodes.len());
        for n in &nodes {
            if depth_of.contains_key(&n.id) {
                continue;
            }
            let mut chain = Vec::new();
            let mut cur = n.id;
            let base = loop {
                if let Some(&d) = depth_of.get(&cur) {
                    break d;
                }
                if chain.contains(&cur) {
                    return Err(TreeError::Cycle(cur));
                }
                chain.push(cur);
                match nodes[index[&cur]].parent {
                    Some(p) => cur = p,
                    None => break 0,
                }
            };
            for (k, id) in chain.iter().rev().enumerate() {
                depth_of.insert(*id, base + k + 1);
            }
        }
        let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for n in &nodes {
            children.entry(n.id).or_default();
            if let Some(p) = n.parent {
                children.entry(p).or_default().push(n.id);
            }
        }
        for c in children.values_mut() {
            c.sort_unstable();
        }
        let depth = depth_of.values().copied().max().unwrap_or(0);
        let mut levels = vec![Vec::new(); depth];
        for n in &nodes {
            levels[depth_of[&n.id] - 1].push(n.id);
        }
        for l in &mut levels {
            l.sort_unstable();
        }
        Ok(SemanticTree { nodes, index, children, depth_of, levels })
    }

    /// Insert pass-through alias descendants under every original leaf that
    /// sits shallower than the maximum depth, so that all leaves end up at
    /// depth exactly `L`. Aliases keep their source's name, get fresh ids
    /// (allocated past the current maximum) and carry their source's score
    /// unchanged through the max-lift. Returns the tree unchanged if depths
    /// are already uniform.
    pub fn normalize_depths(self) -> Result<SemanticTree, TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        let depth = self.depth();
        let shallow: Vec<NodeId> = self
            .levels
            .iter()
            .take(depth - 1)
            .flatten()
            .copied()
            .filter(|id| self.children[id].is_empty())
            .collect();
        if shallow.is_empty() {
            return Ok(self);
        }
        let mut next_id = self.nodes.iter().map(|n| n.id.0).max().unwrap() as u32 + 1;
        let mut nodes = self.nodes.clone();
        for src in shallow {
            let mut parent = src;
            let name = self.name(src).unwrap().to_string();
            for _ in self.depth_of[&src]..depth {
                if next_id > u16::MAX as u32 {
                    return Err(TreeError::IdSpaceExhausted);
                }
                let alias = NodeId(next_id as u16);
                next_id += 1;
                nodes.push(Node {
                    id: alias,
                    name: name.clone(),
                    parent: Some(parent),
                    alias_of: Some(src),
                });
                parent = alias;
            }
        }
        SemanticTree::from_nodes(nodes)
    }

    /// Tree depth `L` (levels are `1..=L`).
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// The level set `V_l`, ascending ids.
    pub fn level(&self, l: usize) -> Result<&[NodeId], TreeError> {
        if l < 1 || l > self.depth() {
            return Err(TreeError::LevelOutOfRange { level: l, depth: self.depth() });
        }
        Ok(&self.levels[l - 1])
    }

    /// The leaf set `V_L`, ascending ids.
    pub fn leaves(&self) -> &[NodeId] {
        &self.levels[self.depth() - 1]
    }

    pub fn name(&self, id: NodeId) -> Result<&str, TreeError> {
        let i = self.lookup(id)?;
        Ok(&self.nodes[i].name)
    }

    pub fn parent(&self, id: NodeId) -> Result<Option<NodeId>, TreeError> {
        let i = self.lookup(id)?;
        Ok(self.nodes[i].parent)
    }

    /// Depth of a node, 1-based.
    pub fn depth_of(&self, id: NodeId) -> Result<usize, TreeError> {
        self.lookup(id)?;
        Ok(self.depth_of[&id])
    }

    /// For alias nodes inserted by depth normalization: the original node
    /// whose probability the alias carries.
    pub fn alias_source(&self, id: NodeId) -> Result<Option<NodeId>, TreeError> {
        let i = self.lookup(id)?;
        Ok(self.nodes[i].alias_of)
    }

    fn lookup(&self, id: NodeId) -> Result<usize, TreeError> {
        if id.is_background() {
            return Err(TreeError::Background);
        }
        self.index.get(&id).copied().ok_or(TreeError::UnknownId(id))
    }

    /// Direct children `C_v` at the next level, ascending ids. Empty for a
    /// leaf.
    pub fn subclasses(&self, v: NodeId) -> Result<&[NodeId], TreeError> {
        self.lookup(v)?;
        Ok(&self.children[&v])
    }

    /// The unique ancestor of `v` in `V_l`. Background maps to background at
    /// every level; a node queried at its own level maps to itself.
    pub fn ancestor_at_level(&self, v: NodeId, l: usize) -> Result<NodeId, TreeError> {
        if l < 1 || l > self.depth() {
            return Err(TreeError::LevelOutOfRange { level: l, depth: self.depth() });
        }
        if v.is_background() {
            return Ok(NodeId::BACKGROUND);
        }
        self.lookup(v)?;
        let mut cur = v;
        loop {
            let d = self.depth_of[&cur];
            if d == l {
                return Ok(cur);
            }
            if d < l {
                return Err(TreeError::NodeAboveLevel { node: v, level: l });
            }
            cur = self.nodes[self.index[&cur]].parent.expect("depth > 1 implies a parent");
        }
    }

    /// Channel map for level `l`: background first, then `V_l` ascending.
    pub fn level_channel_map(&self, l: usize) -> Result<Vec<NodeId>, TreeError> {
        let mut map = Vec::with_capacity(self.level(l)?.len() + 1);
        map.push(NodeId::BACKGROUND);
        map.extend_from_slice(self.level(l)?);
        Ok(map)
    }

    /// Channel map for the leaf level: background first, then `V_L`
    /// ascending.
    pub fn leaf_channel_map(&self) -> Vec<NodeId> {
        self.level_channel_map(self.depth()).expect("depth >= 1")
    }

    /// Replace every voxel's leaf label by its level-`l` ancestor. Shape and
    /// spacing are preserved; background stays background.
    pub fn project_labels(&self, labels: &LabelVolume, l: usize) -> Result<LabelVolume, TreeError> {
        if l < 1 || l > self.depth() {
            return Err(TreeError::LevelOutOfRange { level: l, depth: self.depth() });
        }
        // Per-id lookup table; labels are u16 so a dense table is cheap.
        let mut table: Vec<Option<NodeId>> = vec![None; u16::MAX as usize + 1];
        table[0] = Some(NodeId::BACKGROUND);
        for &leaf in self.leaves() {
            table[leaf.0 as usize] = Some(self.ancestor_at_level(leaf, l)?);
        }
        let mut out = Vec::with_capacity(labels.data().len());
        for &v in labels.data() {
            match table[v.0 as usize] {
                Some(a) => out.push(a),
                None => return Err(TreeError::NotALeaf(v)),
            }
        }
        Ok(LabelVolume::new(labels.dims(), labels.spacing(), out)
            .expect("projection preserves shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Artery with two leaf children, the smallest nontrivial tree.
    pub(crate) fn chain_doc() -> &'static str {
        r#"{"classes":[
            {"id":10,"name":"Artery","parent":null},
            {"id":1,"name":"Aorta","parent":10},
            {"id":2,"name":"Branch","parent":10}
        ]}"#
    }

    #[test]
    fn parses_three_node_chain() {
        let t = parse_hierarchy(chain_doc()).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.level(1).unwrap(), &[NodeId(10)]);
        assert_eq!(t.level(2).unwrap(), &[NodeId(1), NodeId(2)]);
        assert_eq!(t.leaves(), &[NodeId(1), NodeId(2)]);
    }

    #[test]
    fn shipped_aorta_hierarchy_has_23_leaves() {
        let t = parse_hierarchy(aorta_hierarchy_json()).unwrap();
        assert_eq!(t.leaves().len(), 23);
        // Already uniform-depth: no aliases.
        assert!(t.leaves().iter().all(|&id| t.alias_source(id).unwrap().is_none()));
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let doc = r#"{"classes":[{"id":3,"name":"X","parent":3}]}"#;
        assert!(matches!(parse_hierarchy(doc), Err(TreeError::Cycle(NodeId(3)))));
    }

    #[test]
    fn two_node_cycle_detected() {
        let doc = r#"{"classes":[
            {"id":1,"name":"A","parent":2},
            {"id":2,"name":"B","parent":1}
        ]}"#;
        assert!(matches!(parse_hierarchy(doc), Err(TreeError::Cycle(_))));
    }

    #[test]
    fn duplicate_id_rejected() {
        let doc = r#"{"classes":[
            {"id":1,"name":"A","parent":null},
            {"id":1,"name":"B","parent":null}
        ]}"#;
        assert!(matches!(parse_hierarchy(doc), Err(TreeError::DuplicateId(NodeId(1)))));
    }

    #[test]
    fn id_zero_rejected() {
        let doc = r#"{"classes":[{"id":0,"name":"bg","parent":null}]}"#;
        assert!(matches!(parse_hierarchy(doc), Err(TreeError::IdZeroUsed)));
        let doc = r#"{"classes":[{"id":1,"name":"A","parent":0}]}"#;
        assert!(matches!(parse_hierarchy(doc), Err(TreeError::IdZeroUsed)));
    }

    #[test]
    fn dangling_parent_rejected() {
        let doc = r#"{"classes":[{"id":1,"name":"A","parent":9}]}"#;
        assert!(matches!(
            parse_hierarchy(doc),
            Err(TreeError::DanglingParent { node: NodeId(1), parent: NodeId(9) })
        ));
    }

    #[test]
    fn forward_parent_reference_resolves() {
        let doc = r#"{"classes":[
            {"id":2,"name":"Leaf","parent":7},
            {"id":7,"name":"Root","parent":null}
        ]}"#;
        let t = parse_hierarchy(doc).unwrap();
        assert_eq!(t.parent(NodeId(2)).unwrap(), Some(NodeId(7)));
    }

    #[test]
    fn empty_hierarchy_rejected() {
        assert!(matches!(parse_hierarchy(r#"{"classes":[]}"#), Err(TreeError::Empty)));
    }

    #[test]
    fn shallow_leaf_gains_alias_descendants() {
        // Depth-3 tree with one leaf stuck at depth 1.
        let doc = r#"{"classes":[
            {"id":1,"name":"Deep","parent":null},
            {"id":2,"name":"Mid","parent":1},
            {"id":3,"name":"Leaf","parent":2},
            {"id":4,"name":"Shallow","parent":null}
        ]}"#;
        let t = parse_hierarchy(doc).unwrap();
        assert_eq!(t.depth(), 3);
        // Two aliases inserted under node 4 (depth 1 -> depth 3).
        let aliases: Vec<NodeId> = t
            .leaves()
            .iter()
            .copied()
            .filter(|&id| t.alias_source(id).unwrap().is_some())
            .collect();
        assert_eq!(aliases.len(), 1);
        let deep_alias = aliases[0];
        assert_eq!(t.alias_source(deep_alias).unwrap(), Some(NodeId(4)));
        assert_eq!(t.name(deep_alias).unwrap(), "Shallow");
        assert_eq!(t.ancestor_at_level(deep_alias, 1).unwrap(), NodeId(4));
        // The intermediate alias is also named after the source.
        let mid = t.parent(deep_alias).unwrap().unwrap();
        assert_eq!(t.alias_source(mid).unwrap(), Some(NodeId(4)));
        assert_eq!(t.depth_of(mid).unwrap(), 2);
    }

    #[test]
    fn uniform_tree_unchanged_by_normalization() {
        let t = parse_hierarchy(chain_doc()).unwrap();
        let n_before = t.num_nodes();
        let t = t.normalize_depths().unwrap();
        assert_eq!(t.num_nodes(), n_before);
    }

    #[test]
    fn subclasses_queries() {
        let t = parse_hierarchy(chain_doc()).unwrap();
        assert_eq!(t.subclasses(NodeId(10)).unwrap(), &[NodeId(1), NodeId(2)]);
        assert!(t.subclasses(NodeId(1)).unwrap().is_empty());
        assert!(matches!(t.subclasses(NodeId::BACKGROUND), Err(TreeError::Background)));
        assert!(matches!(t.subclasses(NodeId(99)), Err(TreeError::UnknownId(NodeId(99)))));
    }

    #[test]
    fn ancestor_queries() {
        let t = parse_hierarchy(chain_doc()).unwrap();
        assert_eq!(t.ancestor_at_level(NodeId(1), 1).unwrap(), NodeId(10));
        assert_eq!(t.ancestor_at_level(NodeId(1), 2).unwrap(), NodeId(1));
        assert_eq!(t.ancestor_at_level(NodeId::BACKGROUND, 1).unwrap(), NodeId::BACKGROUND);
        assert_eq!(t.ancestor_at_level(NodeId::BACKGROUND, 2).unwrap(), NodeId::BACKGROUND);
        assert!(matches!(
            t.ancestor_at_level(NodeId(1), 3),
            Err(TreeError::LevelOutOfRange { level: 3, depth: 2 })
        ));
        assert!(matches!(
            t.ancestor_at_level(NodeId(10), 2),
            Err(TreeError::NodeAboveLevel { .. })
        ));
    }

    #[test]
    fn project_labels_to_level_one() {
        let t = parse_hierarchy(chain_doc()).unwrap();
        let labels = LabelVolume::new(
            [3, 1, 1],
            [1.0; 3],
            vec![NodeId(1), NodeId(2), NodeId::BACKGROUND],
        )
        .unwrap();
        let p = t.project_labels(&labels, 1).unwrap();
        assert_eq!(p.data(), &[NodeId(10), NodeId(10), NodeId::BACKGROUND]);
        // l = L is the identity.
        let p2 = t.project_labels(&labels, 2).unwrap();
        assert_eq!(p2.data(), labels.data());
    }

    #[test]
    fn project_rejects_non_leaf_labels() {
        let t = parse_hierarchy(chain_doc()).unwrap();
        let labels = LabelVolume::new([1, 1, 1], [1.0; 3], vec![NodeId(10)]).unwrap();
        assert!(matches!(t.project_labels(&labels, 1), Err(TreeError::NotALeaf(NodeId(10)))));
    }

    #[test]
    fn level_partition_property() {
        let t = parse_hierarchy(aorta_hierarchy_json()).unwrap();
        for l in 1..t.depth() {
            let mut union: Vec<NodeId> = Vec::new();
            for &v in t.level(l).unwrap() {
                let kids = t.subclasses(v).unwrap();
                for k in kids {
                    assert!(!union.contains(k), "child sets must be disjoint");
                }
                union.extend_from_slice(kids);
            }
            union.sort_unstable();
            assert_eq!(union.as_slice(), t.level(l + 1).unwrap());
        }
    }

    #[test]
    fn ancestor_chain_consistency() {
        let t = parse_hierarchy(aorta_hierarchy_json()).unwrap();
        for &leaf in t.leaves() {
            for l in 1..t.depth() {
                let a = t.ancestor_at_level(leaf, l).unwrap();
                let b = t.ancestor_at_level(leaf, l + 1).unwrap();
                assert_eq!(t.parent(b).unwrap(), Some(a));
                assert!(t.level(l).unwrap().contains(&a));
            }
        }
    }
}
