//! Core program representation: affine loop nests over tensors.
//!
//! A [`Program`] is an ordered list of [`Computation`]s, each of which is a
//! rectangular loop nest writing one tensor element per iteration. Subscripts
//! are affine forms of the surrounding iterators, so every access can be
//! summarized by an integer access matrix (one row per subscript, one column
//! per iterator plus a constant column).
//!
//! Computations that share an identical outer-loop prefix (same iterator
//! names and bounds, and adjacent in program order) execute fused under the
//! shared loops; [`ast::build_ast`] merges those prefixes into shared
//! iterator nodes.

mod ast;
mod parse;
mod print;

pub use ast::{build_ast, enumerate_branches, Ast, AstNode, Branch, NodeId, NodeKind};
pub use parse::parse_program;
pub use print::serialize_program;

use thiserror::Error;

/// Hard limits on program shape. The feature layout and the action catalogue
/// are sized against these, so they default to the values both assume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    pub max_depth: usize,
    pub max_rank: usize,
    pub max_reads: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_depth: 5,
            max_rank: 5,
            max_reads: 4,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: non-affine subscript")]
    NonAffine { line: usize, col: usize },
    #[error("{line}:{col}: undeclared buffer `{name}`")]
    UndeclaredBuffer { line: usize, col: usize, name: String },
    #[error("program has no computations")]
    NoComputations,
    #[error("buffer `{buffer}`: rank {rank} exceeds cap {cap}")]
    RankExceeded { buffer: String, rank: usize, cap: usize },
    #[error("computation `{comp}`: nest depth {depth} exceeds cap {cap}")]
    DepthExceeded { comp: String, depth: usize, cap: usize },
    #[error("computation `{comp}`: {reads} read accesses exceed cap {cap}")]
    ReadsExceeded { comp: String, reads: usize, cap: usize },
    #[error("computation `{comp}`: access to `{buffer}` has {got} subscripts, buffer rank is {want}")]
    SubscriptArity { comp: String, buffer: String, got: usize, want: usize },
    #[error("invalid program: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemKind {
    Int,
    Float,
}

/// Declared tensor storage. Extents are compile-time constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Buffer {
    pub name: String,
    pub dims: Vec<i64>,
    pub kind: ElemKind,
}

impl Buffer {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product::<i64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides, one per dimension.
    pub fn strides(&self) -> Vec<i64> {
        let mut strides = vec![1i64; self.dims.len()];
        for d in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.dims[d + 1];
        }
        strides
    }
}

/// One loop of a computation's nest. `upper` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IterVar {
    pub name: String,
    pub lower: i64,
    pub upper: i64,
    pub level: usize,
}

impl IterVar {
    pub fn extent(&self) -> i64 {
        self.upper - self.lower
    }
}

/// An affine function of a computation's iterators: `coeffs . x + constant`,
/// with coefficients ordered outermost-first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AffineForm {
    pub coeffs: Vec<i64>,
    pub constant: i64,
}

impl AffineForm {
    pub fn constant_only(depth: usize, constant: i64) -> Self {
        AffineForm {
            coeffs: vec![0; depth],
            constant,
        }
    }

    pub fn eval(&self, point: &[i64]) -> i64 {
        debug_assert_eq!(point.len(), self.coeffs.len());
        self.coeffs
            .iter()
            .zip(point)
            .map(|(c, x)| c * x)
            .sum::<i64>()
            + self.constant
    }
}

/// A read or write of a buffer with one affine subscript per buffer dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Access {
    pub buffer: usize,
    pub subscripts: Vec<AffineForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl BinOp {
    pub const ALL: [BinOp; 6] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Min,
        BinOp::Max,
    ];
}

/// Right-hand side of a statement. Reads are stored out-of-line on the
/// computation (deduplicated, in order of first appearance) and referenced
/// by index.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Read(usize),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Histogram over the six operators, in [`BinOp::ALL`] order.
    pub fn op_histogram(&self) -> [u32; 6] {
        let mut h = [0u32; 6];
        self.count_ops(&mut h);
        h
    }

    fn count_ops(&self, h: &mut [u32; 6]) {
        if let Expr::Bin(op, a, b) = self {
            h[*op as usize] += 1;
            a.count_ops(h);
            b.count_ops(h);
        }
    }
}

/// A loop nest with a single statement in its body.
#[derive(Debug, Clone, PartialEq)]
pub struct Computation {
    pub id: String,
    pub nest: Vec<IterVar>,
    pub write: Access,
    pub reads: Vec<Access>,
    pub expr: Expr,
}

impl Computation {
    pub fn depth(&self) -> usize {
        self.nest.len()
    }

    /// Number of iterations of the nest's rectangular domain.
    pub fn domain_size(&self) -> i64 {
        self.nest.iter().map(IterVar::extent).product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub name: String,
    pub buffers: Vec<Buffer>,
    pub computations: Vec<Computation>,
}

impl Program {
    pub fn buffer_index(&self, name: &str) -> Option<usize> {
        self.buffers.iter().position(|b| b.name == name)
    }

    /// Checks the structural invariants that parsing promises and that every
    /// downstream module relies on.
    pub fn validate(&self, caps: &Caps) -> Result<(), IrError> {
        if self.computations.is_empty() {
            return Err(IrError::NoComputations);
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.buffers {
            if !seen.insert(&b.name) {
                return Err(IrError::Invalid(format!("duplicate buffer `{}`", b.name)));
            }
            if b.dims.is_empty() || b.rank() > caps.max_rank {
                return Err(IrError::RankExceeded {
                    buffer: b.name.clone(),
                    rank: b.rank(),
                    cap: caps.max_rank,
                });
            }
            if b.dims.iter().any(|&d| d <= 0) {
                return Err(IrError::Invalid(format!(
                    "buffer `{}` has a non-positive extent",
                    b.name
                )));
            }
        }
        for c in &self.computations {
            if c.nest.is_empty() || c.depth() > caps.max_depth {
                return Err(IrError::DepthExceeded {
                    comp: c.id.clone(),
                    depth: c.depth(),
                    cap: caps.max_depth,
                });
            }
            for (lvl, it) in c.nest.iter().enumerate() {
                if it.level != lvl {
                    return Err(IrError::Invalid(format!(
                        "computation `{}`: iterator `{}` has level {}, expected {}",
                        c.id, it.name, it.level, lvl
                    )));
                }
                if it.upper <= it.lower {
                    return Err(IrError::Invalid(format!(
                        "computation `{}`: iterator `{}` has empty range {}..{}",
                        c.id, it.name, it.lower, it.upper
                    )));
                }
            }
            if c.reads.len() > caps.max_reads {
                return Err(IrError::ReadsExceeded {
                    comp: c.id.clone(),
                    reads: c.reads.len(),
                    cap: caps.max_reads,
                });
            }
            let kind = self.buffers[c.write.buffer].kind;
            for acc in std::iter::once(&c.write).chain(&c.reads) {
                let buf = self.buffers.get(acc.buffer).ok_or_else(|| {
                    IrError::Invalid(format!("computation `{}`: dangling buffer index", c.id))
                })?;
                if acc.subscripts.len() != buf.rank() {
                    return Err(IrError::SubscriptArity {
                        comp: c.id.clone(),
                        buffer: buf.name.clone(),
                        got: acc.subscripts.len(),
                        want: buf.rank(),
                    });
                }
                if buf.kind != kind {
                    return Err(IrError::Invalid(format!(
                        "computation `{}`: mixes {:?} and {:?} buffers",
                        c.id, kind, buf.kind
                    )));
                }
                for s in &acc.subscripts {
                    if s.coeffs.len() != c.depth() {
                        return Err(IrError::Invalid(format!(
                            "computation `{}`: subscript coefficient width mismatch",
                            c.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The matrix representation of an access relation: row `r` holds the
/// iterator coefficients (outermost first) of subscript `r`, followed by the
/// constant term. Shape is `rank x (depth + 1)`.
pub fn access_matrix(access: &Access, depth: usize) -> Vec<Vec<i64>> {
    access
        .subscripts
        .iter()
        .map(|s| {
            debug_assert!(s.coeffs.len() <= depth);
            let mut row = vec![0i64; depth + 1];
            row[..s.coeffs.len()].copy_from_slice(&s.coeffs);
            row[depth] = s.constant;
            row
        })
        .collect()
}
