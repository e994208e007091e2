//! Ordered ternary trees (chronicles) indexing the multilinear terms of the
//! iterated reduction.
//!
//! Node ids are dense and assigned in chronicle order: the root is `0` with
//! children `1, 2, 3`, and growing a terminal node appends its three children.
//! A chronicle is fully described by its growth code: for each step
//! `j = 2..J`, the left-to-right position of the grown terminal among the
//! `2j − 1` terminals of `𝒯_{j−1}`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Default cap on enumerated generations; `c_7 = 135135` chronicles is past any
/// composition the engine can evaluate.
pub const J_ENUM_MAX: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Node {
    parent: Option<NodeId>,
    children: Option<[NodeId; 3]>,
    /// 1-based position among the parent's children (0 for the root).
    slot: u8,
    conj: bool,
    /// Generation whose projection contains this node as a child (1 for the root).
    created: usize,
}

/// A single ternary tree: node set, parent map and ordered children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub nodes: Vec<NodeId>,
    pub parent: BTreeMap<NodeId, NodeId>,
    pub children: BTreeMap<NodeId, [NodeId; 3]>,
    pub root: NodeId,
}

impl Tree {
    pub fn terminal_count(&self) -> usize {
        self.nodes.len() - self.children.len()
    }
}

/// A chronicle `𝒯₁ ⊂ … ⊂ 𝒯_J` stored as its final tree plus the generation roots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderedTree {
    nodes: Vec<Node>,
    roots: Vec<NodeId>,
    code: Vec<usize>,
}

/// The one-generation tree `π_j(𝒯_J)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationView {
    pub j: usize,
    pub root: NodeId,
    pub children: [NodeId; 3],
    /// Children of `r^{(j)}` that are terminal in `𝒯_J`.
    pub essential_terminals: Vec<NodeId>,
}

impl GenerationView {
    pub fn subtree_nodes(&self) -> [NodeId; 4] {
        [self.root, self.children[0], self.children[1], self.children[2]]
    }
}

impl OrderedTree {
    /// The single first-generation tree.
    pub fn first() -> Self {
        let mut t = Self {
            nodes: vec![Node {
                parent: None,
                children: None,
                slot: 0,
                conj: false,
                created: 1,
            }],
            roots: Vec::new(),
            code: Vec::new(),
        };
        t.grow_node(0);
        t
    }

    /// Builds a chronicle from its growth code (`code.len() = J − 1`).
    pub fn from_growth_code(code: &[usize]) -> Result<Self> {
        let mut t = Self::first();
        for &c in code {
            t = t.grow(c)?;
        }
        Ok(t)
    }

    /// Next-generation chronicle obtained by growing the terminal at left-to-right position `pos`.
    pub fn grow(&self, pos: usize) -> Result<Self> {
        let terminals = self.terminals();
        let &node = terminals.get(pos).ok_or_else(|| {
            Error::OutOfRange(format!(
                "terminal position {pos} in a tree with {} terminals",
                terminals.len()
            ))
        })?;
        let mut t = self.clone();
        t.grow_node(node);
        t.code.push(pos);
        Ok(t)
    }

    fn grow_node(&mut self, id: NodeId) {
        let j = self.roots.len() + 1;
        let c = self.nodes[id].conj;
        let base = self.nodes.len();
        for (k, conj) in [c, !c, c].into_iter().enumerate() {
            self.nodes.push(Node {
                parent: Some(id),
                children: None,
                slot: k as u8 + 1,
                conj,
                created: j,
            });
        }
        self.nodes[id].children = Some([base, base + 1, base + 2]);
        self.roots.push(id);
    }

    /// Number of generations `J`.
    pub fn generations(&self) -> usize {
        self.roots.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> std::ops::Range<NodeId> {
        0..self.nodes.len()
    }

    pub fn growth_code(&self) -> &[usize] {
        &self.code
    }

    /// `r^{(j)}`, 1-based.
    pub fn root_of(&self, j: usize) -> NodeId {
        self.roots[j - 1]
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn children(&self, id: NodeId) -> Option<[NodeId; 3]> {
        self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// 1-based child position of `id` within its parent (0 for the root).
    pub fn slot(&self, id: NodeId) -> usize {
        self.nodes[id].slot as usize
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_none()
    }

    pub fn is_conjugated(&self, id: NodeId) -> bool {
        self.nodes[id].conj
    }

    /// Generation `j` with `r^{(j)} = id`, if `id` is non-terminal.
    pub fn generation_of_root(&self, id: NodeId) -> Option<usize> {
        self.roots.iter().position(|&r| r == id).map(|k| k + 1)
    }

    /// Generation whose projection lists `id` among its four nodes as a child.
    pub fn created_in(&self, id: NodeId) -> usize {
        self.nodes[id].created
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(id))
        }
    }

    /// Terminal nodes of `𝒯_J` in left-to-right planar order.
    pub fn terminals(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(2 * self.generations() + 1);
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            match self.nodes[id].children {
                Some([a, b, c]) => stack.extend([c, b, a]),
                None => out.push(id),
            }
        }
        out
    }

    /// The intermediate tree `𝒯_j` of the chronicle.
    pub fn tree_at(&self, j: usize) -> Result<Tree> {
        if j == 0 || j > self.generations() {
            return Err(Error::OutOfRange(format!(
                "generation {j} of a {}-generation chronicle",
                self.generations()
            )));
        }
        let grown: BTreeSet<NodeId> = self.roots[..j].iter().copied().collect();
        let mut nodes = vec![0];
        let mut parent = BTreeMap::new();
        let mut children = BTreeMap::new();
        for &r in &grown {
            let ch = self.nodes[r].children.expect("roots are grown");
            children.insert(r, ch);
            for c in ch {
                parent.insert(c, r);
                nodes.push(c);
            }
        }
        nodes.sort_unstable();
        Ok(Tree {
            nodes,
            parent,
            children,
            root: 0,
        })
    }

    pub fn projection(&self, j: usize) -> Result<GenerationView> {
        if j == 0 || j > self.generations() {
            return Err(Error::OutOfRange(format!(
                "projection {j} of a {}-generation chronicle",
                self.generations()
            )));
        }
        let root = self.roots[j - 1];
        let children = self.nodes[root].children.expect("roots are grown");
        let essential_terminals = children.iter().copied().filter(|&c| self.is_terminal(c)).collect();
        Ok(GenerationView {
            j,
            root,
            children,
            essential_terminals,
        })
    }

    /// Order (1, 2 or 3) of `p^{(j)} = r^{(j+1)}` as a child of its parent root.
    pub fn order_of(&self, j: usize) -> Result<usize> {
        if j == 0 || j >= self.generations() {
            return Err(Error::OutOfRange(format!(
                "order of p^({j}) needs 1 <= j <= {}",
                self.generations().saturating_sub(1)
            )));
        }
        Ok(self.slot(self.roots[j]))
    }

    /// Path from the root `r^{(1)}` to `a`, both included.
    pub fn shortest_path(&self, a: NodeId) -> Result<Vec<NodeId>> {
        self.check(a)?;
        let mut path = vec![a];
        let mut cur = a;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Generations `j` with `r^{(j)}` on the path from the root to the terminal `p`.
    pub fn path_generation_set(&self, p: NodeId) -> Result<BTreeSet<usize>> {
        self.check(p)?;
        if !self.is_terminal(p) {
            return Err(Error::NotTerminal(p));
        }
        Ok(self
            .shortest_path(p)?
            .into_iter()
            .filter_map(|id| self.generation_of_root(id))
            .collect())
    }

    /// Breadth-first path on the undirected node graph; used to cross-check
    /// [`OrderedTree::shortest_path`].
    pub fn bfs_path(&self, a: NodeId) -> Result<Vec<NodeId>> {
        self.check(a)?;
        let n = self.nodes.len();
        let mut prev = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            let mut nbrs: Vec<NodeId> = self.nodes[x].children.map(|c| c.to_vec()).unwrap_or_default();
            nbrs.extend(self.nodes[x].parent);
            for y in nbrs {
                if !seen[y] {
                    seen[y] = true;
                    prev[y] = x;
                    queue.push_back(y);
                }
            }
        }
        let mut path = vec![a];
        let mut cur = a;
        while cur != 0 {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        Ok(path)
    }

    pub fn to_json_node(&self) -> JsonNode {
        self.json_node(0)
    }

    fn json_node(&self, id: NodeId) -> JsonNode {
        let node = &self.nodes[id];
        JsonNode {
            children: node
                .children
                .map(|c| c.iter().map(|&k| self.json_node(k)).collect())
                .unwrap_or_default(),
            gen: self.generation_of_root(id).unwrap_or(node.created),
            conj: node.conj,
        }
    }

    /// Rebuilds a chronicle from its nested JSON form.
    pub fn from_json_node(root: &JsonNode) -> Result<Self> {
        // Collect (generation, path of child slots) for every non-terminal node.
        fn walk(n: &JsonNode, path: &mut Vec<usize>, out: &mut Vec<(usize, Vec<usize>)>) -> Result<()> {
            match n.children.len() {
                0 => Ok(()),
                3 => {
                    out.push((n.gen, path.clone()));
                    for (k, c) in n.children.iter().enumerate() {
                        path.push(k);
                        walk(c, path, out)?;
                        path.pop();
                    }
                    Ok(())
                }
                k => Err(Error::InvalidInput(format!("node with {k} children"))),
            }
        }
        let mut grown = Vec::new();
        walk(root, &mut Vec::new(), &mut grown)?;
        grown.sort();
        let mut t = Self::first();
        for (expect_gen, (gen, path)) in grown.iter().enumerate() {
            if *gen != expect_gen + 1 {
                return Err(Error::InvalidInput(format!("generation labels are not 1..J: {gen}")));
            }
            if *gen == 1 {
                if !path.is_empty() {
                    return Err(Error::InvalidInput("generation 1 must be the root".into()));
                }
                continue;
            }
            let mut id = 0;
            for &k in path {
                id = t.nodes[id]
                    .children
                    .ok_or_else(|| Error::InvalidInput("generation order inconsistent with nesting".into()))?[k];
            }
            let pos = t
                .terminals()
                .iter()
                .position(|&x| x == id)
                .ok_or_else(|| Error::InvalidInput("grown node is not terminal at its generation".into()))?;
            t = t.grow(pos)?;
        }
        if t.to_json_node() != *root {
            return Err(Error::InvalidInput(
                "conjugation or generation flags inconsistent".into(),
            ));
        }
        Ok(t)
    }
}

/// Nested JSON form of a chronicle. `gen` is `j` for `r^{(j)}` and the generation
/// that created the node for terminals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonNode {
    pub children: Vec<JsonNode>,
    pub gen: usize,
    pub conj: bool,
}

/// `c_J = 1·3·5·…·(2J − 1)`.
pub fn chronicle_count(j: usize) -> u64 {
    (1..=j as u64).map(|k| 2 * k - 1).product()
}

/// All chronicles of generation `J`, in lexicographic order of growth code.
pub fn enumerate_ordered_trees(j: usize) -> Result<Vec<OrderedTree>> {
    enumerate_ordered_trees_with_limit(j, J_ENUM_MAX)
}

pub fn enumerate_ordered_trees_with_limit(j: usize, limit: usize) -> Result<Vec<OrderedTree>> {
    if j == 0 {
        return Err(Error::InvalidArgument("generation must be at least 1".into()));
    }
    if j > limit {
        return Err(Error::ResourceLimit(format!(
            "enumerating generation {j} exceeds the limit {limit} ({} chronicles)",
            chronicle_count(j)
        )));
    }
    let mut level = vec![OrderedTree::first()];
    for step in 2..=j {
        let width = 2 * step - 1;
        let mut next = Vec::with_capacity(level.len() * width);
        for t in &level {
            for pos in 0..width {
                next.push(t.grow(pos)?);
            }
        }
        level = next;
    }
    Ok(level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_chronicle(t: &OrderedTree) {
        let j = t.generations();
        assert_eq!(t.node_count(), 3 * j + 1);
        assert_eq!(t.terminals().len(), 2 * j + 1);
        for k in 1..=j {
            let tk = t.tree_at(k).unwrap();
            assert_eq!(tk.nodes.len(), 3 * k + 1);
            assert_eq!(tk.children.len(), k);
            assert_eq!(tk.terminal_count(), 2 * k + 1);
            if k >= 2 {
                // r^{(k)} = p^{(k−1)} is a terminal of 𝒯_{k−1}.
                let prev = t.tree_at(k - 1).unwrap();
                let r = t.root_of(k);
                assert!(prev.nodes.contains(&r) && !prev.children.contains_key(&r));
            }
        }
        let mut seen = BTreeSet::new();
        for k in 1..=j {
            for x in t.projection(k).unwrap().essential_terminals {
                assert!(seen.insert(x));
            }
        }
        assert_eq!(seen, t.terminals().into_iter().collect());
        for id in t.node_ids() {
            if let Some(ch) = t.children(id) {
                let c = t.is_conjugated(id);
                assert_eq!(ch.map(|x| t.is_conjugated(x)), [c, !c, c]);
            }
        }
    }

    #[test]
    fn counts_are_double_factorials() {
        for (j, expect) in [(1, 1), (2, 3), (3, 15), (4, 105), (5, 945), (6, 10395)] {
            let trees = enumerate_ordered_trees(j).unwrap();
            assert_eq!(trees.len(), expect);
            assert_eq!(chronicle_count(j), expect as u64);
            let distinct: std::collections::HashSet<_> = trees.iter().collect();
            assert_eq!(distinct.len(), expect);
        }
        assert!(matches!(enumerate_ordered_trees(7), Err(Error::ResourceLimit(_))));
        assert!(enumerate_ordered_trees(0).is_err());
    }

    #[test]
    fn chronicle_invariants_hold() {
        for j in 1..=4 {
            for t in enumerate_ordered_trees(j).unwrap() {
                check_chronicle(&t);
            }
        }
    }

    #[test]
    fn displayed_third_generation_trees() {
        // r^{(2)} is the third child of the root and r^{(3)} the third child of r^{(2)}.
        let t = OrderedTree::from_growth_code(&[2, 4]).unwrap();
        let p3 = t.projection(3).unwrap();
        assert_eq!(t.parent(p3.root), Some(t.root_of(2)));
        assert_eq!(t.slot(p3.root), 3);
        assert_eq!(t.order_of(1).unwrap(), 3);
        assert_eq!(t.order_of(2).unwrap(), 3);
        // r^{(2)} under the first child, r^{(3)} the third child of the root.
        let t = OrderedTree::from_growth_code(&[0, 4]).unwrap();
        assert_eq!(t.parent(t.root_of(3)), Some(0));
        assert_eq!(t.order_of(1).unwrap(), 1);
        assert_eq!(t.order_of(2).unwrap(), 3);
        assert_eq!(t.projection(1).unwrap().root, 0);
    }

    #[test]
    fn orders_of_constant_growth() {
        // Growing the first child each time keeps the grown node leftmost.
        let left = OrderedTree::from_growth_code(&[0, 0, 0]).unwrap();
        assert!((1..=3).all(|j| left.order_of(j).unwrap() == 1));
        // The third child of the last root is the last terminal at every step.
        let right = OrderedTree::from_growth_code(&[2, 4, 6]).unwrap();
        assert!((1..=3).all(|j| right.order_of(j).unwrap() == 3));
        assert!(left.order_of(4).is_err());
        assert!(left.order_of(0).is_err());
    }

    #[test]
    fn order_multiset_matches_recount() {
        // Oracle: rebuild every J=3 chronicle from raw parent/slot bookkeeping and
        // read off the slot of each grown node.
        let mut expected = BTreeMap::new();
        for a in 0..3 {
            for b in 0..5 {
                // Planar terminal lists maintained by hand as (parent, slot) labels.
                let mut terms: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (0, 3)];
                let g2 = terms[a];
                terms.splice(a..=a, [(2, 1), (2, 2), (2, 3)]);
                let g3 = terms[b];
                *expected.entry((g2.1, g3.1)).or_insert(0) += 1;
            }
        }
        let mut actual = BTreeMap::new();
        for t in enumerate_ordered_trees(3).unwrap() {
            *actual
                .entry((t.order_of(1).unwrap(), t.order_of(2).unwrap()))
                .or_insert(0) += 1;
        }
        assert_eq!(actual, expected);
    }

    #[test]
    fn paths_and_generation_sets() {
        let t1 = OrderedTree::first();
        assert_eq!(t1.shortest_path(0).unwrap(), vec![0]);
        for p in t1.terminals() {
            assert_eq!(t1.path_generation_set(p).unwrap(), BTreeSet::from([1]));
        }
        for t in enumerate_ordered_trees(2).unwrap() {
            assert_eq!(t.shortest_path(t.root_of(2)).unwrap(), vec![0, t.root_of(2)]);
        }
        let chain = OrderedTree::from_growth_code(&[1, 3, 5]).unwrap();
        let deepest = chain.children(chain.root_of(4)).unwrap()[0];
        assert_eq!(chain.path_generation_set(deepest).unwrap(), (1..=4).collect());
        assert!(matches!(chain.path_generation_set(0), Err(Error::NotTerminal(0))));
        assert!(matches!(chain.shortest_path(99), Err(Error::UnknownNode(99))));
    }

    #[test]
    fn paths_match_bfs_and_avoid_later_roots() {
        for t in enumerate_ordered_trees(4).unwrap() {
            for a in t.node_ids() {
                let path = t.shortest_path(a).unwrap();
                assert_eq!(path, t.bfs_path(a).unwrap());
                if let Some(j) = t.generation_of_root(a) {
                    for &x in &path[..path.len() - 1] {
                        assert!(t.generation_of_root(x).is_some_and(|g| g < j));
                    }
                }
                if t.is_terminal(a) {
                    let set = t.path_generation_set(a).unwrap();
                    assert!(set.contains(&1));
                    let from_path: BTreeSet<usize> = path.iter().filter_map(|&x| t.generation_of_root(x)).collect();
                    assert_eq!(set, from_path);
                }
            }
        }
    }

    #[test]
    fn json_round_trip() {
        for t in enumerate_ordered_trees(3).unwrap() {
            let text = serde_json::to_string(&t.to_json_node()).unwrap();
            let node: JsonNode = serde_json::from_str(&text).unwrap();
            assert_eq!(OrderedTree::from_json_node(&node).unwrap(), t);
        }
    }
}
