//! Schedules and their structural application to loop nests.
//!
//! A schedule is an ordered list of branch-scoped transformations. Applying
//! one to a program yields a [`ScheduledNest`] per computation: an
//! accumulated unimodular matrix over the original iteration vector plus a
//! loop-dimension list describing the executed order (with tile splits,
//! parallel flags and the innermost unroll factor).
//!
//! Application here is purely structural; whether a transformation preserves
//! dependences is the legality module's business. Structural violations are
//! reported distinctly so the environment can log them apart from
//! dependence-illegal actions.

use crate::ir::{Ast, Branch, NodeId, Program};
use crate::matrix::{identity, mat_mul, IMat};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transformation {
    Interchange { i: usize, j: usize },
    Reversal { i: usize },
    Skewing { i: usize, j: usize, factor: i64 },
    Parallelization { i: usize },
    Tiling { i: usize, j: usize, tx: i64, ty: i64 },
    Unrolling { factor: i64 },
}

impl fmt::Display for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transformation::Interchange { i, j } => write!(f, "I({i},{j})"),
            Transformation::Reversal { i } => write!(f, "R({i})"),
            Transformation::Skewing { i, j, factor } => write!(f, "S({i},{j},{factor})"),
            Transformation::Parallelization { i } => write!(f, "P({i})"),
            Transformation::Tiling { i, j, tx, ty } => write!(f, "T({i},{j},{tx},{ty})"),
            Transformation::Unrolling { factor } => write!(f, "U({factor})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScheduleStep {
    pub branch: usize,
    pub transform: Transformation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Schedule(pub Vec<ScheduleStep>);

impl Schedule {
    pub fn empty() -> Self {
        Schedule(Vec::new())
    }

    pub fn push(&mut self, branch: usize, transform: Transformation) {
        self.0.push(ScheduleStep { branch, transform });
    }

    pub fn extended(&self, branch: usize, transform: Transformation) -> Self {
        let mut next = self.clone();
        next.push(branch, transform);
        next
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Stable, injective text form of a schedule. This string is the exchange
/// format used by the memo store and the CLI.
pub fn canonical_key(schedule: &Schedule) -> String {
    if schedule.0.is_empty() {
        return "∅".to_string();
    }
    schedule
        .0
        .iter()
        .map(|s| format!("B{}:{}", s.branch, s.transform))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructuralError {
    #[error("loop level {level} out of range (nest has {dims} loops)")]
    LevelOutOfRange { level: usize, dims: usize },
    #[error("level {level} is a tile loop; affine transforms need original loops")]
    NotAPointDim { level: usize },
    #[error("tiling requires adjacent levels, got ({i},{j})")]
    NonAdjacentTiling { i: usize, j: usize },
    #[error("nest already has a parallel loop")]
    SecondParallel,
    #[error("branch index {branch} out of range ({count} branches)")]
    BadBranch { branch: usize, count: usize },
    #[error("transformation spans loops not shared by all affected computations")]
    SharedPrefixConflict,
    #[error("{0}")]
    BadParameter(String),
}

/// A schedule application error, tagged with the failing step.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("step {step}: {source}")]
pub struct ApplyError {
    pub step: usize,
    #[source]
    pub source: StructuralError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimKind {
    /// One whole dimension of the transformed space `y = M x`.
    Point { y: usize },
    /// Block index of a tiled `y` dimension.
    TileOuter { y: usize, size: i64 },
    /// In-block offset of a tiled `y` dimension.
    TileInner { y: usize, size: i64 },
}

impl DimKind {
    pub fn y(&self) -> usize {
        match *self {
            DimKind::Point { y } | DimKind::TileOuter { y, .. } | DimKind::TileInner { y, .. } => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopDim {
    pub kind: DimKind,
    pub parallel: bool,
}

/// The scheduled loop structure of one computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledNest {
    pub comp: usize,
    pub lowers: Vec<i64>,
    pub uppers: Vec<i64>,
    /// `y = matrix . x` maps original iterations to the transformed space.
    pub matrix: IMat,
    /// Executed loop order, outermost first.
    pub dims: Vec<LoopDim>,
    pub unroll: i64,
    tiled: bool,
}

impl ScheduledNest {
    pub fn identity(program: &Program, comp: usize) -> Self {
        let c = &program.computations[comp];
        ScheduledNest {
            comp,
            lowers: c.nest.iter().map(|it| it.lower).collect(),
            uppers: c.nest.iter().map(|it| it.upper).collect(),
            matrix: identity(c.depth()),
            dims: (0..c.depth())
                .map(|y| LoopDim {
                    kind: DimKind::Point { y },
                    parallel: false,
                })
                .collect(),
            unroll: 1,
            tiled: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.lowers.len()
    }

    pub fn domain_size(&self) -> i64 {
        self.lowers
            .iter()
            .zip(&self.uppers)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn is_identity(&self) -> bool {
        !self.tiled
            && self.unroll == 1
            && self.matrix == identity(self.depth())
            && self.dims.iter().all(|d| !d.parallel)
    }

    pub fn has_parallel(&self) -> bool {
        self.dims.iter().any(|d| d.parallel)
    }

    pub fn parallel_position(&self) -> Option<usize> {
        self.dims.iter().position(|d| d.parallel)
    }

    /// Inclusive bounds of transformed dimension `y_k` over the original box.
    pub fn y_bounds(&self, k: usize) -> (i64, i64) {
        let mut lo = 0i64;
        let mut hi = 0i64;
        for (c, coef) in self.matrix[k].iter().enumerate() {
            let a = coef * self.lowers[c];
            let b = coef * (self.uppers[c] - 1);
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    }

    /// Number of index values the loop at `pos` enumerates.
    pub fn dim_extent(&self, pos: usize) -> i64 {
        match self.dims[pos].kind {
            DimKind::Point { y } => {
                let (lo, hi) = self.y_bounds(y);
                hi - lo + 1
            }
            DimKind::TileOuter { y, size } => {
                let (lo, hi) = self.y_bounds(y);
                (hi - lo + 1 + size - 1) / size
            }
            DimKind::TileInner { size, .. } => size,
        }
    }

    /// Tile bands as `(tx, ty)` pairs, one per applied tiling.
    pub fn tile_bands(&self) -> Vec<(i64, i64)> {
        let mut bands = Vec::new();
        let mut i = 0;
        while i < self.dims.len() {
            if let (DimKind::TileOuter { size: tx, .. }, Some(LoopDim { kind: DimKind::TileOuter { size: ty, .. }, .. })) =
                (self.dims[i].kind, self.dims.get(i + 1).copied())
            {
                bands.push((tx, ty));
                i += 2;
            } else {
                i += 1;
            }
        }
        bands
    }

    /// Order in which `y` dimensions are first enumerated (tile pairs count
    /// at their outer position). This is the basis legality checks use.
    pub fn y_order(&self) -> Vec<usize> {
        let mut seen = vec![false; self.depth()];
        let mut order = Vec::new();
        for d in &self.dims {
            let y = d.kind.y();
            if !seen[y] {
                seen[y] = true;
                order.push(y);
            }
        }
        order
    }

    fn require_point(&self, level: usize) -> Result<usize, StructuralError> {
        match self.dims.get(level) {
            None => Err(StructuralError::LevelOutOfRange {
                level,
                dims: self.dims.len(),
            }),
            Some(LoopDim {
                kind: DimKind::Point { y },
                ..
            }) => Ok(*y),
            Some(_) => Err(StructuralError::NotAPointDim { level }),
        }
    }

    /// Applies one transformation at current-nest level indices.
    pub fn apply(&mut self, t: &Transformation) -> Result<(), StructuralError> {
        match *t {
            Transformation::Interchange { i, j } => {
                if i >= j {
                    return Err(StructuralError::BadParameter(format!(
                        "interchange needs i < j, got ({i},{j})"
                    )));
                }
                let ya = self.require_point(i)?;
                let yb = self.require_point(j)?;
                self.matrix.swap(ya, yb);
                // keep dims canonical: position i now enumerates what row i
                // holds, so the descriptors are unchanged
                let _ = (ya, yb);
            }
            Transformation::Reversal { i } => {
                let y = self.require_point(i)?;
                for v in &mut self.matrix[y] {
                    *v = -*v;
                }
            }
            Transformation::Skewing { i, j, factor } => {
                if i >= j {
                    return Err(StructuralError::BadParameter(format!(
                        "skewing needs i < j, got ({i},{j})"
                    )));
                }
                if factor < 1 {
                    return Err(StructuralError::BadParameter(format!(
                        "skew factor must be >= 1, got {factor}"
                    )));
                }
                let ya = self.require_point(i)?;
                let yb = self.require_point(j)?;
                let src = self.matrix[ya].clone();
                for (dst, s) in self.matrix[yb].iter_mut().zip(src) {
                    *dst += factor * s;
                }
            }
            Transformation::Tiling { i, j, tx, ty } => {
                if j != i + 1 {
                    return Err(StructuralError::NonAdjacentTiling { i, j });
                }
                for &s in &[tx, ty] {
                    if s < 2 || (s & (s - 1)) != 0 {
                        return Err(StructuralError::BadParameter(format!(
                            "tile sizes must be powers of two >= 2, got {s}"
                        )));
                    }
                }
                let ya = self.require_point(i)?;
                let yb = self.require_point(j)?;
                let pa = self.dims[i].parallel;
                let pb = self.dims[j].parallel;
                self.dims[i] = LoopDim {
                    kind: DimKind::TileOuter { y: ya, size: tx },
                    parallel: pa,
                };
                self.dims[j] = LoopDim {
                    kind: DimKind::TileOuter { y: yb, size: ty },
                    parallel: pb,
                };
                self.dims.insert(
                    j + 1,
                    LoopDim {
                        kind: DimKind::TileInner { y: ya, size: tx },
                        parallel: false,
                    },
                );
                self.dims.insert(
                    j + 2,
                    LoopDim {
                        kind: DimKind::TileInner { y: yb, size: ty },
                        parallel: false,
                    },
                );
                self.tiled = true;
            }
            Transformation::Parallelization { i } => {
                if i >= self.dims.len() {
                    return Err(StructuralError::LevelOutOfRange {
                        level: i,
                        dims: self.dims.len(),
                    });
                }
                if self.has_parallel() {
                    return Err(StructuralError::SecondParallel);
                }
                self.dims[i].parallel = true;
            }
            Transformation::Unrolling { factor } => {
                if factor < 2 || (factor & (factor - 1)) != 0 {
                    return Err(StructuralError::BadParameter(format!(
                        "unroll factor must be a power of two >= 2, got {factor}"
                    )));
                }
                let innermost = self.dims.len() - 1;
                let extent = self.dim_extent(innermost);
                self.unroll = factor.min(extent);
            }
        }
        Ok(())
    }
}

/// Affine transforms are only composable into the matrix while the nest is
/// untiled; afterwards they would have to act on floor-divided loops.
fn irs_allowed(nest: &ScheduledNest, t: &Transformation) -> Result<(), StructuralError> {
    let affine = matches!(
        t,
        Transformation::Interchange { .. }
            | Transformation::Reversal { .. }
            | Transformation::Skewing { .. }
    );
    if affine && nest.tiled {
        return Err(StructuralError::NotAPointDim { level: 0 });
    }
    Ok(())
}

/// Current-nest levels a transformation touches, given the targeted branch.
pub fn targeted_levels(branch: &Branch, t: &Transformation, dims_len: usize) -> Vec<usize> {
    match *t {
        Transformation::Interchange { i, j }
        | Transformation::Skewing { i, j, .. }
        | Transformation::Tiling { i, j, .. } => vec![i, j],
        Transformation::Reversal { i } | Transformation::Parallelization { i } => vec![i],
        Transformation::Unrolling { .. } => {
            let _ = branch;
            vec![dims_len.saturating_sub(1)]
        }
    }
}

/// The AST iterator nodes a transformation acts on, resolved through the
/// branch computations' current loop structure.
pub fn targeted_nodes(
    branch: &Branch,
    nest: &ScheduledNest,
    t: &Transformation,
) -> Result<Vec<NodeId>, StructuralError> {
    let mut nodes = Vec::new();
    for level in targeted_levels(branch, t, nest.dims.len()) {
        let dim = nest
            .dims
            .get(level)
            .ok_or(StructuralError::LevelOutOfRange {
                level,
                dims: nest.dims.len(),
            })?;
        let y = dim.kind.y();
        let node = *branch
            .path
            .get(y)
            .ok_or(StructuralError::LevelOutOfRange {
                level: y,
                dims: branch.path.len(),
            })?;
        if !nodes.contains(&node) {
            nodes.push(node);
        }
    }
    Ok(nodes)
}

/// The whole scheduled form of a program: one nest per computation, in
/// program order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledProgram {
    pub nests: Vec<ScheduledNest>,
}

impl ScheduledProgram {
    pub fn identity(program: &Program) -> Self {
        ScheduledProgram {
            nests: (0..program.computations.len())
                .map(|c| ScheduledNest::identity(program, c))
                .collect(),
        }
    }

    /// Applies one branch-scoped transformation. The affected set is every
    /// computation under a targeted iterator node; for coherence each
    /// targeted node must be an ancestor of all of them (otherwise the
    /// action would tear a shared loop apart).
    pub fn apply_step(
        &mut self,
        ast: &Ast,
        branches: &[Branch],
        step: &ScheduleStep,
    ) -> Result<(), StructuralError> {
        let branch = branches.get(step.branch).ok_or(StructuralError::BadBranch {
            branch: step.branch,
            count: branches.len(),
        })?;
        let probe = &self.nests[branch.comps[0]];
        irs_allowed(probe, &step.transform)?;
        let nodes = targeted_nodes(branch, probe, &step.transform)?;
        let mut affected: Vec<usize> = Vec::new();
        if matches!(step.transform, Transformation::Unrolling { .. }) {
            // an unroll annotates the branch's own statements; deeper
            // branches hanging off the same prefix keep their own innermost
            affected.extend_from_slice(&branch.comps);
        } else {
            for &n in &nodes {
                for c in ast.comps_under(n) {
                    if !affected.contains(&c) {
                        affected.push(c);
                    }
                }
            }
        }
        affected.sort_unstable();
        for &n in &nodes {
            for &c in &affected {
                if !ast.is_ancestor_of_comp(n, c) {
                    return Err(StructuralError::SharedPrefixConflict);
                }
            }
        }
        let mut staged: Vec<(usize, ScheduledNest)> = Vec::new();
        for &c in &affected {
            let mut nest = self.nests[c].clone();
            irs_allowed(&nest, &step.transform)?;
            nest.apply(&step.transform)?;
            staged.push((c, nest));
        }
        for (c, nest) in staged {
            self.nests[c] = nest;
        }
        Ok(())
    }
}

/// Applies a whole schedule from scratch. The first structural violation
/// aborts with its step index.
pub fn apply_schedule(
    program: &Program,
    ast: &Ast,
    branches: &[Branch],
    schedule: &Schedule,
) -> Result<ScheduledProgram, ApplyError> {
    let mut sp = ScheduledProgram::identity(program);
    for (idx, step) in schedule.0.iter().enumerate() {
        sp.apply_step(ast, branches, step)
            .map_err(|source| ApplyError { step: idx, source })?;
    }
    Ok(sp)
}

/// The unimodular matrix of a single affine transformation at a given depth.
pub fn unimodular_matrix(t: &Transformation, depth: usize) -> Result<IMat, StructuralError> {
    let check = |lvl: usize| {
        if lvl >= depth {
            Err(StructuralError::LevelOutOfRange {
                level: lvl,
                dims: depth,
            })
        } else {
            Ok(())
        }
    };
    let mut m = identity(depth);
    match *t {
        Transformation::Interchange { i, j } => {
            check(i)?;
            check(j)?;
            m.swap(i, j);
        }
        Transformation::Reversal { i } => {
            check(i)?;
            m[i][i] = -1;
        }
        Transformation::Skewing { i, j, factor } => {
            check(i)?;
            check(j)?;
            m[j][i] = factor;
        }
        _ => {
            return Err(StructuralError::BadParameter(format!(
                "{t} has no unimodular matrix"
            )))
        }
    }
    Ok(m)
}

/// Ordered product of per-step matrices for the affine steps of a schedule,
/// later steps multiplied from the left.
pub fn composed_matrix(schedule: &[Transformation], depth: usize) -> Result<IMat, StructuralError> {
    let mut m = identity(depth);
    for t in schedule {
        m = mat_mul(&unimodular_matrix(t, depth)?, &m);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_ast, enumerate_branches, parse_program};
    use crate::matrix::det;

    fn two_d(extents: (i64, i64)) -> Program {
        parse_program(&format!(
            "buffer A[{0}][{1}] float;\nbuffer B[{0}][{1}] float;\n\
             for i in 0..{0} {{ for j in 0..{1} {{ A[i][j] = B[i][j] + 1.0; }} }}",
            extents.0, extents.1
        ))
        .unwrap()
    }

    fn apply_all(p: &Program, ts: &[Transformation]) -> ScheduledProgram {
        let ast = build_ast(p);
        let branches = enumerate_branches(&ast);
        let mut s = Schedule::empty();
        for t in ts {
            s.push(0, *t);
        }
        apply_schedule(p, &ast, &branches, &s).unwrap()
    }

    #[test]
    fn unimodular_matrices_match_definitions() {
        let i = unimodular_matrix(&Transformation::Interchange { i: 0, j: 1 }, 2).unwrap();
        assert_eq!(i, vec![vec![0, 1], vec![1, 0]]);
        let r = unimodular_matrix(&Transformation::Reversal { i: 0 }, 2).unwrap();
        assert_eq!(r, vec![vec![-1, 0], vec![0, 1]]);
        let s = unimodular_matrix(
            &Transformation::Skewing {
                i: 0,
                j: 1,
                factor: 1,
            },
            2,
        )
        .unwrap();
        assert_eq!(s, vec![vec![1, 0], vec![1, 1]]);
        for m in [&i, &r, &s] {
            assert_eq!(det(m).abs(), 1);
        }
    }

    #[test]
    fn level_out_of_range_is_reported() {
        let err = unimodular_matrix(&Transformation::Reversal { i: 4 }, 2).unwrap_err();
        assert!(matches!(err, StructuralError::LevelOutOfRange { .. }));
    }

    #[test]
    fn tiling_exact_division() {
        let p = two_d((128, 128));
        let sp = apply_all(
            &p,
            &[Transformation::Tiling {
                i: 0,
                j: 1,
                tx: 32,
                ty: 32,
            }],
        );
        let nest = &sp.nests[0];
        let extents: Vec<i64> = (0..nest.dims.len()).map(|p| nest.dim_extent(p)).collect();
        assert_eq!(extents, vec![4, 4, 32, 32]);
    }

    #[test]
    fn tiling_partial_tiles_use_ceil() {
        let p = two_d((100, 128));
        let sp = apply_all(
            &p,
            &[Transformation::Tiling {
                i: 0,
                j: 1,
                tx: 32,
                ty: 32,
            }],
        );
        let nest = &sp.nests[0];
        let extents: Vec<i64> = (0..nest.dims.len()).map(|p| nest.dim_extent(p)).collect();
        assert_eq!(extents, vec![4, 4, 32, 32]);
    }

    #[test]
    fn unrolling_records_capped_factor() {
        let p = two_d((128, 128));
        let sp = apply_all(&p, &[Transformation::Unrolling { factor: 4 }]);
        assert_eq!(sp.nests[0].unroll, 4);
        let extents: Vec<i64> = (0..2).map(|q| sp.nests[0].dim_extent(q)).collect();
        assert_eq!(extents, vec![128, 128]);

        let small = two_d((128, 2));
        let sp = apply_all(&small, &[Transformation::Unrolling { factor: 32 }]);
        assert_eq!(sp.nests[0].unroll, 2);
    }

    #[test]
    fn parallel_after_tiling_flags_outer_tile_loop() {
        let p = two_d((128, 128));
        let sp = apply_all(
            &p,
            &[
                Transformation::Tiling {
                    i: 0,
                    j: 1,
                    tx: 32,
                    ty: 32,
                },
                Transformation::Parallelization { i: 0 },
            ],
        );
        let nest = &sp.nests[0];
        assert_eq!(nest.parallel_position(), Some(0));
        assert!(matches!(
            nest.dims[0].kind,
            DimKind::TileOuter { y: 0, size: 32 }
        ));
    }

    #[test]
    fn second_parallelization_is_structural() {
        let p = two_d((16, 16));
        let ast = build_ast(&p);
        let branches = enumerate_branches(&ast);
        let mut s = Schedule::empty();
        s.push(0, Transformation::Parallelization { i: 0 });
        s.push(0, Transformation::Parallelization { i: 1 });
        let err = apply_schedule(&p, &ast, &branches, &s).unwrap_err();
        assert_eq!(err.step, 1);
        assert_eq!(err.source, StructuralError::SecondParallel);
    }

    #[test]
    fn affine_after_tiling_is_structural() {
        let p = two_d((64, 64));
        let ast = build_ast(&p);
        let branches = enumerate_branches(&ast);
        let mut s = Schedule::empty();
        s.push(
            0,
            Transformation::Tiling {
                i: 0,
                j: 1,
                tx: 32,
                ty: 32,
            },
        );
        s.push(0, Transformation::Interchange { i: 0, j: 1 });
        let err = apply_schedule(&p, &ast, &branches, &s).unwrap_err();
        assert_eq!(err.step, 1);
    }

    #[test]
    fn empty_schedule_is_identity() {
        let p = two_d((16, 16));
        let ast = build_ast(&p);
        let branches = enumerate_branches(&ast);
        let sp = apply_schedule(&p, &ast, &branches, &Schedule::empty()).unwrap();
        assert!(sp.nests[0].is_identity());
    }

    #[test]
    fn matrix_composition_is_ordered_product() {
        let p = two_d((16, 16));
        let steps = [
            Transformation::Skewing {
                i: 0,
                j: 1,
                factor: 2,
            },
            Transformation::Interchange { i: 0, j: 1 },
            Transformation::Reversal { i: 0 },
        ];
        let sp = apply_all(&p, &steps);
        let expect = composed_matrix(&steps, 2).unwrap();
        assert_eq!(sp.nests[0].matrix, expect);
    }

    #[test]
    fn replaying_a_schedule_is_deterministic() {
        let p = two_d((64, 32));
        let steps = [
            Transformation::Interchange { i: 0, j: 1 },
            Transformation::Tiling {
                i: 0,
                j: 1,
                tx: 8,
                ty: 8,
            },
            Transformation::Parallelization { i: 0 },
            Transformation::Unrolling { factor: 4 },
        ];
        assert_eq!(apply_all(&p, &steps), apply_all(&p, &steps));
    }

    #[test]
    fn canonical_key_format() {
        assert_eq!(canonical_key(&Schedule::empty()), "∅");
        let mut s = Schedule::empty();
        s.push(0, Transformation::Parallelization { i: 0 });
        assert_eq!(canonical_key(&s), "B0:P(0)");
        s.push(
            1,
            Transformation::Tiling {
                i: 0,
                j: 1,
                tx: 32,
                ty: 64,
            },
        );
        s.push(
            0,
            Transformation::Skewing {
                i: 0,
                j: 1,
                factor: 2,
            },
        );
        assert_eq!(canonical_key(&s), "B0:P(0);B1:T(0,1,32,64);B0:S(0,1,2)");
    }

    #[test]
    fn distinct_schedules_have_distinct_keys() {
        let a = Schedule(vec![
            ScheduleStep {
                branch: 0,
                transform: Transformation::Parallelization { i: 0 },
            },
            ScheduleStep {
                branch: 0,
                transform: Transformation::Unrolling { factor: 2 },
            },
        ]);
        let b = Schedule(vec![
            ScheduleStep {
                branch: 0,
                transform: Transformation::Unrolling { factor: 2 },
            },
            ScheduleStep {
                branch: 0,
                transform: Transformation::Parallelization { i: 0 },
            },
        ]);
        assert_ne!(canonical_key(&a), canonical_key(&b));
    }

    #[test]
    fn shared_prefix_action_needs_common_ancestors() {
        // c0 and c1 share the i loop; interchanging i with c0's private j
        // would tear the shared loop apart, so it is rejected.
        let p = parse_program(
            "buffer A[8][8] float;\nbuffer B[8][8] float;\n\
             for i in 0..8 { for j in 0..8 { A[i][j] = 1.0; } }\n\
             for i in 0..8 { for k in 0..8 { B[i][k] = 2.0; } }",
        )
        .unwrap();
        let ast = build_ast(&p);
        let branches = enumerate_branches(&ast);
        assert_eq!(branches.len(), 2);
        let mut s = Schedule::empty();
        s.push(0, Transformation::Interchange { i: 0, j: 1 });
        let err = apply_schedule(&p, &ast, &branches, &s).unwrap_err();
        assert_eq!(err.source, StructuralError::SharedPrefixConflict);

        // parallelizing the shared loop is fine and flags both computations
        let mut s = Schedule::empty();
        s.push(0, Transformation::Parallelization { i: 0 });
        let sp = apply_schedule(&p, &ast, &branches, &s).unwrap();
        assert!(sp.nests[0].has_parallel());
        assert!(sp.nests[1].has_parallel());
    }
}
