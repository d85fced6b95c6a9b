//! Graph observations: the node-feature matrix `X` and edge list `E` the
//! policy consumes.
//!
//! Every AST node gets one fixed-width row. The first column separates
//! iterator rows from computation rows; iterator rows carry the focus tag,
//! the five transformation tags and bound metadata, computation rows carry
//! the write/read access-matrix blocks, the read count and an operator
//! histogram. Blocks belonging to the other node kind are exactly zero.

use crate::ir::{access_matrix, Ast, Branch, Caps, IrError, NodeId, NodeKind, Program};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterTags {
    pub parallelized: bool,
    pub reversed: bool,
    pub skewed: bool,
    pub tiled: bool,
    pub unrolled: bool,
}

pub type TagMap = HashMap<NodeId, IterTags>;

/// Field offsets inside one feature row. The width is fixed per model; with
/// default caps it comes to 176 (167 used, zero padding to a 16 multiple).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub caps: Caps,
    pub width: usize,
    kind: usize,
    focus: usize,
    tags: usize,
    lower: usize,
    extent: usize,
    level: usize,
    write_block: usize,
    read_blocks: usize,
    read_count: usize,
    op_hist: usize,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self::for_caps(Caps::default())
    }
}

impl FeatureLayout {
    pub fn for_caps(caps: Caps) -> Self {
        let block = caps.max_rank * (caps.max_depth + 1);
        let kind = 0;
        let focus = 1;
        let tags = 2;
        let lower = tags + 5;
        let extent = lower + 1;
        let level = extent + 1;
        let write_block = level + 1;
        let read_blocks = write_block + block;
        let read_count = read_blocks + caps.max_reads * block;
        let op_hist = read_count + 1;
        let used = op_hist + 6;
        let width = used.next_multiple_of(16);
        FeatureLayout {
            caps,
            width,
            kind,
            focus,
            tags,
            lower,
            extent,
            level,
            write_block,
            read_blocks,
            read_count,
            op_hist,
        }
    }

    fn block_size(&self) -> usize {
        self.caps.max_rank * (self.caps.max_depth + 1)
    }
}

/// The RL state: node features, undirected edges (stored once per AST
/// parent-child pair) and the node count.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphObservation {
    pub x: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
}

impl GraphObservation {
    pub fn node_count(&self) -> usize {
        self.x.len()
    }
}

fn fill_access_block(
    row: &mut [f64],
    base: usize,
    layout: &FeatureLayout,
    matrix: &[Vec<i64>],
    depth: usize,
) {
    let cols = layout.caps.max_depth + 1;
    for (r, mrow) in matrix.iter().enumerate() {
        for c in 0..depth {
            row[base + r * cols + c] = mrow[c] as f64;
        }
        row[base + r * cols + layout.caps.max_depth] = mrow[depth] as f64;
    }
}

/// Builds the observation for one targeted branch. Focus tags are 1 exactly
/// on the branch's iterator nodes; transformation tags mirror what the
/// episode has applied to each iterator so far.
pub fn featurize(
    program: &Program,
    ast: &Ast,
    branches: &[Branch],
    branch_index: usize,
    tags: &TagMap,
    layout: &FeatureLayout,
) -> Result<GraphObservation, IrError> {
    program.validate(&layout.caps)?;
    let branch = branches
        .get(branch_index)
        .ok_or_else(|| IrError::Invalid(format!("branch {branch_index} out of range")))?;
    let mut x = Vec::with_capacity(ast.nodes.len());
    for (id, node) in ast.nodes.iter().enumerate() {
        let mut row = vec![0.0f64; layout.width];
        match &node.kind {
            NodeKind::Iter {
                lower,
                upper,
                level,
                ..
            } => {
                row[layout.kind] = 0.0;
                row[layout.focus] = f64::from(branch.path.contains(&id));
                let t = tags.get(&id).copied().unwrap_or_default();
                for (k, on) in [t.parallelized, t.reversed, t.skewed, t.tiled, t.unrolled]
                    .into_iter()
                    .enumerate()
                {
                    row[layout.tags + k] = f64::from(on);
                }
                row[layout.lower] = *lower as f64 / 1024.0;
                row[layout.extent] = ((upper - lower) as f64).log2() / 10.0;
                row[layout.level] = *level as f64 / layout.caps.max_depth as f64;
            }
            NodeKind::Comp { comp } => {
                let c = &program.computations[*comp];
                row[layout.kind] = 1.0;
                fill_access_block(
                    &mut row,
                    layout.write_block,
                    layout,
                    &access_matrix(&c.write, c.depth()),
                    c.depth(),
                );
                for (ri, read) in c.reads.iter().enumerate() {
                    fill_access_block(
                        &mut row,
                        layout.read_blocks + ri * layout.block_size(),
                        layout,
                        &access_matrix(read, c.depth()),
                        c.depth(),
                    );
                }
                row[layout.read_count] = c.reads.len() as f64 / layout.caps.max_reads as f64;
                for (k, n) in c.expr.op_histogram().into_iter().enumerate() {
                    row[layout.op_hist + k] = f64::from(n);
                }
            }
        }
        x.push(row);
    }
    Ok(GraphObservation {
        x,
        edges: ast.edges(),
    })
}
