//! Loop-nest tree shared by the featurizer, the environment, and execution.
//!
//! Iterator nodes of adjacent computations are merged when the computations
//! agree on an outer-loop prefix (same iterator names and bounds). Merged
//! loops execute fused: their bodies interleave per shared iteration, in
//! program order. Computation nodes are always leaves.

use super::Program;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Iter {
        name: String,
        lower: i64,
        upper: i64,
        level: usize,
    },
    Comp {
        comp: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AstNode {
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ast {
    pub nodes: Vec<AstNode>,
    pub roots: Vec<NodeId>,
}

/// A root-to-leaf iterator path plus the computations hanging directly off
/// its innermost node. Branches partition the computation leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub index: usize,
    pub path: Vec<NodeId>,
    pub comps: Vec<usize>,
}

impl Branch {
    pub fn depth(&self) -> usize {
        self.path.len()
    }
}

impl Ast {
    pub fn node(&self, id: NodeId) -> &AstNode {
        &self.nodes[id]
    }

    pub fn is_comp(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].kind, NodeKind::Comp { .. })
    }

    /// Parent-child pairs in construction order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (id, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                out.push((id, c));
            }
        }
        out.sort_unstable();
        out
    }

    /// Path of iterator nodes from a root down to (and including) `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            path.push(n);
            cur = self.nodes[n].parent;
        }
        path.reverse();
        path
    }

    /// Leaf node of computation `comp`.
    pub fn comp_leaf(&self, comp: usize) -> NodeId {
        self.nodes
            .iter()
            .position(|n| matches!(n.kind, NodeKind::Comp { comp: c } if c == comp))
            .expect("computation has a leaf node")
    }

    /// Computation indices of all leaves under `id`, in program order.
    pub fn comps_under(&self, id: NodeId) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_comps(id, &mut out);
        out
    }

    fn collect_comps(&self, id: NodeId, out: &mut Vec<usize>) {
        match self.nodes[id].kind {
            NodeKind::Comp { comp } => out.push(comp),
            NodeKind::Iter { .. } => {
                for &c in &self.nodes[id].children {
                    self.collect_comps(c, out);
                }
            }
        }
    }

    /// Whether iterator node `id` lies on the path of computation `comp`.
    pub fn is_ancestor_of_comp(&self, id: NodeId, comp: usize) -> bool {
        let leaf = self.comp_leaf(comp);
        let mut cur = self.nodes[leaf].parent;
        while let Some(n) = cur {
            if n == id {
                return true;
            }
            cur = self.nodes[n].parent;
        }
        false
    }

    /// Iterator path (node ids, outermost first) of a computation.
    pub fn comp_path(&self, comp: usize) -> Vec<NodeId> {
        let leaf = self.comp_leaf(comp);
        let mut path = self.path_to(leaf);
        path.pop();
        path
    }

    /// Number of loop levels two computations share (identical AST nodes).
    pub fn shared_prefix_depth(&self, a: usize, b: usize) -> usize {
        let pa = self.comp_path(a);
        let pb = self.comp_path(b);
        pa.iter().zip(&pb).take_while(|(x, y)| x == y).count()
    }
}

/// Builds the merged loop tree of a program. Merging is a fold over the
/// computations in program order: each nest descends into the most recently
/// created sibling when that sibling is an identical iterator, otherwise a
/// fresh node is appended, which keeps leaf order equal to program order.
pub fn build_ast(program: &Program) -> Ast {
    let mut ast = Ast::default();
    for (ci, comp) in program.computations.iter().enumerate() {
        let mut parent: Option<NodeId> = None;
        for (level, it) in comp.nest.iter().enumerate() {
            let siblings = match parent {
                Some(p) => &ast.nodes[p].children,
                None => &ast.roots,
            };
            let reuse = siblings.last().copied().filter(|&last| {
                matches!(
                    &ast.nodes[last].kind,
                    NodeKind::Iter { name, lower, upper, level: l }
                        if *name == it.name && *lower == it.lower && *upper == it.upper && *l == level
                )
            });
            parent = Some(match reuse {
                Some(id) => id,
                None => {
                    let id = ast.nodes.len();
                    ast.nodes.push(AstNode {
                        kind: NodeKind::Iter {
                            name: it.name.clone(),
                            lower: it.lower,
                            upper: it.upper,
                            level,
                        },
                        parent,
                        children: Vec::new(),
                    });
                    match parent {
                        Some(p) => ast.nodes[p].children.push(id),
                        None => ast.roots.push(id),
                    }
                    id
                }
            });
        }
        let leaf = ast.nodes.len();
        ast.nodes.push(AstNode {
            kind: NodeKind::Comp { comp: ci },
            parent,
            children: Vec::new(),
        });
        let p = parent.expect("computations sit inside at least one loop");
        ast.nodes[p].children.push(leaf);
    }
    ast
}

/// Enumerates branches left to right, i.e. by the program-order position of
/// each branch's first computation. Indices are contiguous from 0.
pub fn enumerate_branches(ast: &Ast) -> Vec<Branch> {
    let mut by_parent: Vec<(NodeId, Vec<usize>)> = Vec::new();
    for (id, node) in ast.nodes.iter().enumerate() {
        if let NodeKind::Comp { comp } = node.kind {
            let parent = node.parent.expect("leaf has an iterator parent");
            match by_parent.iter_mut().find(|(p, _)| *p == parent) {
                Some((_, comps)) => comps.push(comp),
                None => by_parent.push((parent, vec![comp])),
            }
            let _ = id;
        }
    }
    by_parent
        .into_iter()
        .enumerate()
        .map(|(index, (parent, comps))| Branch {
            index,
            path: ast.path_to(parent),
            comps,
        })
        .collect()
}
