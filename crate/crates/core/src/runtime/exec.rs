//! Execution of scheduled programs.
//!
//! A plan is a tree of loops built from the per-computation loop structures;
//! computations sharing an AST prefix share the corresponding loop nodes, so
//! their bodies interleave per shared iteration exactly like the source
//! text. Each body maps the transformed point `y` back to original
//! coordinates through the inverse unimodular matrix and skips points
//! outside the original box (skewed covers and partial tiles).

use crate::ir::{Ast, ElemKind, Expr, IrError, Program};
use crate::matrix::{inverse_unimodular, IMat};
use crate::transforms::{DimKind, ScheduledProgram};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("computation `{comp}` at {point:?}: subscript {index} of `{buffer}` out of bounds")]
    OutOfBounds {
        comp: String,
        buffer: String,
        point: Vec<i64>,
        index: i64,
    },
    #[error("computation `{comp}` at {point:?}: integer division by zero")]
    DivisionByZero { comp: String, point: Vec<i64> },
    #[error("measurement failed: {0}")]
    MeasureFailure(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BufferData {
    F(Vec<f64>),
    I(Vec<i64>),
}

/// Flat storage for every buffer of a program.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferStore {
    pub data: Vec<BufferData>,
}

impl BufferStore {
    pub fn zeroed(program: &Program) -> Self {
        BufferStore {
            data: program
                .buffers
                .iter()
                .map(|b| match b.kind {
                    ElemKind::Float => BufferData::F(vec![0.0; b.len()]),
                    ElemKind::Int => BufferData::I(vec![0; b.len()]),
                })
                .collect(),
        }
    }

    /// Deterministic pseudo-random fill, seeded per buffer.
    pub fn filled(program: &Program, seed: u64) -> Self {
        let mut store = Self::zeroed(program);
        for (bi, data) in store.data.iter_mut().enumerate() {
            let mut state = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(bi as u64 + 1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            match data {
                BufferData::F(v) => {
                    for x in v.iter_mut() {
                        *x = ((next() % 2000) as f64 - 1000.0) / 128.0;
                    }
                }
                BufferData::I(v) => {
                    for x in v.iter_mut() {
                        *x = (next() % 200) as i64 - 100;
                    }
                }
            }
        }
        store
    }

    /// Largest relative elementwise difference between two stores.
    pub fn max_rel_diff(&self, other: &BufferStore) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            match (a, b) {
                (BufferData::F(x), BufferData::F(y)) => {
                    for (u, v) in x.iter().zip(y) {
                        let denom = u.abs().max(v.abs()).max(1.0);
                        worst = worst.max((u - v).abs() / denom);
                    }
                }
                (BufferData::I(x), BufferData::I(y)) => {
                    if x != y {
                        return f64::INFINITY;
                    }
                }
                _ => return f64::INFINITY,
            }
        }
        worst
    }
}

struct CompiledAccess {
    buffer: usize,
    coeffs: Vec<Vec<i64>>,
    consts: Vec<i64>,
    strides: Vec<i64>,
    dims: Vec<i64>,
}

impl CompiledAccess {
    fn linear_index(&self, x: &[i64]) -> Result<usize, i64> {
        let mut idx = 0i64;
        for r in 0..self.coeffs.len() {
            let mut s = self.consts[r];
            for (c, v) in self.coeffs[r].iter().zip(x) {
                s += c * v;
            }
            if s < 0 || s >= self.dims[r] {
                return Err(s);
            }
            idx += s * self.strides[r];
        }
        Ok(idx as usize)
    }
}

struct CompExec {
    id: String,
    kind: ElemKind,
    inv: IMat,
    exact_cover: bool,
    lowers: Vec<i64>,
    uppers: Vec<i64>,
    write: CompiledAccess,
    reads: Vec<CompiledAccess>,
    expr: Expr,
    unroll: i64,
}

enum PlanLoopKind {
    Point { lo: i64 },
    TileOuter { size: i64, lo: i64 },
    TileInner { hi: i64 },
}

struct LoopNode {
    kind: PlanLoopKind,
    count: i64,
    y: usize,
    parallel: bool,
    members: Vec<usize>,
    children: Vec<ExecNode>,
}

enum ExecNode {
    Loop(LoopNode),
    Body { comp: usize },
}

pub struct ExecPlan {
    roots: Vec<ExecNode>,
    comps: Vec<CompExec>,
    depth_max: usize,
}

/// Whether every row and column holds exactly one entry of magnitude 1, in
/// which case the transformed bounding box is exact and no point guard is
/// needed.
fn is_signed_permutation(m: &IMat) -> bool {
    let n = m.len();
    let mut col_seen = vec![false; n];
    for row in m {
        let mut found = 0;
        for (c, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            if v.abs() != 1 || col_seen[c] {
                return false;
            }
            col_seen[c] = true;
            found += 1;
        }
        if found != 1 {
            return false;
        }
    }
    true
}

pub fn build_plan(program: &Program, ast: &Ast, sp: &ScheduledProgram) -> ExecPlan {
    let comps: Vec<CompExec> = sp
        .nests
        .iter()
        .map(|nest| {
            let c = &program.computations[nest.comp];
            let compile = |acc: &crate::ir::Access| {
                let buf = &program.buffers[acc.buffer];
                CompiledAccess {
                    buffer: acc.buffer,
                    coeffs: acc.subscripts.iter().map(|s| s.coeffs.clone()).collect(),
                    consts: acc.subscripts.iter().map(|s| s.constant).collect(),
                    strides: buf.strides(),
                    dims: buf.dims.clone(),
                }
            };
            CompExec {
                id: c.id.clone(),
                kind: program.buffers[c.write.buffer].kind,
                inv: inverse_unimodular(&nest.matrix),
                exact_cover: is_signed_permutation(&nest.matrix),
                lowers: nest.lowers.clone(),
                uppers: nest.uppers.clone(),
                write: compile(&c.write),
                reads: c.reads.iter().map(compile).collect(),
                expr: c.expr.clone(),
                unroll: nest.unroll,
            }
        })
        .collect();

    // number of leading loop positions two adjacent computations share
    let prefix_limit = |a: usize, b: usize| -> usize {
        let s = ast.shared_prefix_depth(a, b);
        sp.nests[a]
            .dims
            .iter()
            .take_while(|d| d.kind.y() < s)
            .count()
    };

    fn build_nodes(
        sp: &ScheduledProgram,
        order: &[usize],
        pos: usize,
        prefix_limit: &dyn Fn(usize, usize) -> usize,
    ) -> Vec<ExecNode> {
        let mut nodes = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && prefix_limit(order[end - 1], order[end]) > pos {
                end += 1;
            }
            let run = &order[start..end];
            let first = &sp.nests[run[0]];
            if run.len() == 1 && pos == first.dims.len() {
                nodes.push(ExecNode::Body { comp: run[0] });
            } else {
                let dim = first.dims[pos];
                debug_assert!(run
                    .iter()
                    .all(|&c| sp.nests[c].dims[pos].kind == dim.kind));
                let y = dim.kind.y();
                let (ylo, yhi) = first.y_bounds(y);
                let (kind, count) = match dim.kind {
                    DimKind::Point { .. } => (PlanLoopKind::Point { lo: ylo }, yhi - ylo + 1),
                    DimKind::TileOuter { size, .. } => (
                        PlanLoopKind::TileOuter { size, lo: ylo },
                        (yhi - ylo + size) / size,
                    ),
                    DimKind::TileInner { size, .. } => {
                        (PlanLoopKind::TileInner { hi: yhi }, size)
                    }
                };
                nodes.push(ExecNode::Loop(LoopNode {
                    kind,
                    count,
                    y,
                    parallel: dim.parallel,
                    members: run.to_vec(),
                    children: build_nodes(sp, run, pos + 1, prefix_limit),
                }));
            }
            start = end;
        }
        nodes
    }

    let order: Vec<usize> = (0..sp.nests.len()).collect();
    let roots = build_nodes(sp, &order, 0, &prefix_limit);
    let depth_max = sp
        .nests
        .iter()
        .map(|n| n.depth())
        .max()
        .unwrap_or(0);
    ExecPlan {
        roots,
        comps,
        depth_max,
    }
}

/// Raw pointers into the buffer store so parallel lanes can share it.
/// Legality guarantees parallel iterations write disjoint cells.
#[derive(Clone, Copy)]
struct RawBuf {
    f: *mut f64,
    i: *mut i64,
    len: usize,
}

struct RawStore {
    bufs: Vec<RawBuf>,
}

unsafe impl Send for RawStore {}
unsafe impl Sync for RawStore {}

impl RawStore {
    fn new(store: &mut BufferStore) -> Self {
        RawStore {
            bufs: store
                .data
                .iter_mut()
                .map(|d| match d {
                    BufferData::F(v) => RawBuf {
                        f: v.as_mut_ptr(),
                        i: std::ptr::null_mut(),
                        len: v.len(),
                    },
                    BufferData::I(v) => RawBuf {
                        f: std::ptr::null_mut(),
                        i: v.as_mut_ptr(),
                        len: v.len(),
                    },
                })
                .collect(),
        }
    }

    #[inline]
    fn read_f(&self, buf: usize, idx: usize) -> f64 {
        debug_assert!(idx < self.bufs[buf].len);
        unsafe { *self.bufs[buf].f.add(idx) }
    }

    #[inline]
    fn write_f(&self, buf: usize, idx: usize, v: f64) {
        debug_assert!(idx < self.bufs[buf].len);
        unsafe { *self.bufs[buf].f.add(idx) = v }
    }

    #[inline]
    fn read_i(&self, buf: usize, idx: usize) -> i64 {
        debug_assert!(idx < self.bufs[buf].len);
        unsafe { *self.bufs[buf].i.add(idx) }
    }

    #[inline]
    fn write_i(&self, buf: usize, idx: usize, v: i64) {
        debug_assert!(idx < self.bufs[buf].len);
        unsafe { *self.bufs[buf].i.add(idx) = v }
    }
}

#[derive(Clone)]
struct ExecState {
    /// Transformed coordinates per computation, indexed by `y`.
    ys: Vec<Vec<i64>>,
    /// Tile base values per computation and `y` dimension.
    bases: Vec<Vec<i64>>,
    x: Vec<i64>,
}

pub type ExecLog = Vec<(usize, Vec<i64>)>;

struct ExecCtx<'a> {
    plan: &'a ExecPlan,
    store: &'a RawStore,
    lanes: usize,
}

fn eval_f(
    ctx: &ExecCtx,
    ce: &CompExec,
    expr: &Expr,
    x: &[i64],
) -> Result<f64, RuntimeError> {
    match expr {
        Expr::Const(v) => Ok(*v),
        Expr::Read(r) => {
            let acc = &ce.reads[*r];
            match acc.linear_index(x) {
                Ok(idx) => Ok(ctx.store.read_f(acc.buffer, idx)),
                Err(bad) => Err(oob(ctx, ce, acc, x, bad)),
            }
        }
        Expr::Bin(op, a, b) => {
            let l = eval_f(ctx, ce, a, x)?;
            let r = eval_f(ctx, ce, b, x)?;
            Ok(match op {
                crate::ir::BinOp::Add => l + r,
                crate::ir::BinOp::Sub => l - r,
                crate::ir::BinOp::Mul => l * r,
                crate::ir::BinOp::Div => l / r,
                crate::ir::BinOp::Min => l.min(r),
                crate::ir::BinOp::Max => l.max(r),
            })
        }
    }
}

fn eval_i(
    ctx: &ExecCtx,
    ce: &CompExec,
    expr: &Expr,
    x: &[i64],
) -> Result<i64, RuntimeError> {
    match expr {
        Expr::Const(v) => Ok(*v as i64),
        Expr::Read(r) => {
            let acc = &ce.reads[*r];
            match acc.linear_index(x) {
                Ok(idx) => Ok(ctx.store.read_i(acc.buffer, idx)),
                Err(bad) => Err(oob(ctx, ce, acc, x, bad)),
            }
        }
        Expr::Bin(op, a, b) => {
            let l = eval_i(ctx, ce, a, x)?;
            let r = eval_i(ctx, ce, b, x)?;
            Ok(match op {
                crate::ir::BinOp::Add => l + r,
                crate::ir::BinOp::Sub => l - r,
                crate::ir::BinOp::Mul => l * r,
                crate::ir::BinOp::Div => {
                    if r == 0 {
                        return Err(RuntimeError::DivisionByZero {
                            comp: ce.id.clone(),
                            point: x.to_vec(),
                        });
                    }
                    l / r
                }
                crate::ir::BinOp::Min => l.min(r),
                crate::ir::BinOp::Max => l.max(r),
            })
        }
    }
}

fn oob(ctx: &ExecCtx, ce: &CompExec, acc: &CompiledAccess, x: &[i64], bad: i64) -> RuntimeError {
    let _ = ctx;
    RuntimeError::OutOfBounds {
        comp: ce.id.clone(),
        buffer: format!("buffer#{}", acc.buffer),
        point: x.to_vec(),
        index: bad,
    }
}

fn run_body(
    ctx: &ExecCtx,
    comp: usize,
    state: &mut ExecState,
    log: &mut Option<&mut ExecLog>,
) -> Result<(), RuntimeError> {
    let ce = &ctx.plan.comps[comp];
    let depth = ce.lowers.len();
    let y = &state.ys[comp];
    state.x.clear();
    for r in 0..depth {
        let mut v = 0i64;
        for (c, &coef) in ce.inv[r].iter().enumerate() {
            v += coef * y[c];
        }
        state.x.push(v);
    }
    if !ce.exact_cover {
        for r in 0..depth {
            if state.x[r] < ce.lowers[r] || state.x[r] >= ce.uppers[r] {
                return Ok(()); // outside the original box: guard miss
            }
        }
    }
    if let Some(log) = log {
        log.push((comp, state.x.clone()));
    }
    match ce.kind {
        ElemKind::Float => {
            let v = eval_f(ctx, ce, &ce.expr, &state.x)?;
            match ce.write.linear_index(&state.x) {
                Ok(idx) => ctx.store.write_f(ce.write.buffer, idx, v),
                Err(bad) => return Err(oob(ctx, ce, &ce.write, &state.x, bad)),
            }
        }
        ElemKind::Int => {
            let v = eval_i(ctx, ce, &ce.expr, &state.x)?;
            match ce.write.linear_index(&state.x) {
                Ok(idx) => ctx.store.write_i(ce.write.buffer, idx, v),
                Err(bad) => return Err(oob(ctx, ce, &ce.write, &state.x, bad)),
            }
        }
    }
    Ok(())
}

fn set_loop_value(node: &LoopNode, state: &mut ExecState, step: i64) {
    match node.kind {
        PlanLoopKind::Point { lo } => {
            for &m in &node.members {
                state.ys[m][node.y] = lo + step;
            }
        }
        PlanLoopKind::TileOuter { size, lo } => {
            for &m in &node.members {
                state.bases[m][node.y] = lo + step * size;
            }
        }
        PlanLoopKind::TileInner { .. } => {
            for &m in &node.members {
                state.ys[m][node.y] = state.bases[m][node.y] + step;
            }
        }
    }
}

fn tile_guard_ok(node: &LoopNode, state: &ExecState) -> bool {
    match node.kind {
        PlanLoopKind::TileInner { hi } => state.ys[node.members[0]][node.y] <= hi,
        _ => true,
    }
}

fn run_node(
    ctx: &ExecCtx,
    node: &ExecNode,
    state: &mut ExecState,
    log: &mut Option<&mut ExecLog>,
) -> Result<(), RuntimeError> {
    match node {
        ExecNode::Body { comp } => run_body(ctx, *comp, state, log),
        ExecNode::Loop(l) => {
            if l.parallel && ctx.lanes > 1 && log.is_none() && l.count > 1 {
                return run_parallel(ctx, l, state);
            }
            // an unrolled innermost loop runs in fixed-size blocks
            let unroll = match (&l.children[..], &l.kind) {
                ([ExecNode::Body { comp }], PlanLoopKind::Point { .. } | PlanLoopKind::TileInner { .. }) => {
                    ctx.plan.comps[*comp].unroll.max(1)
                }
                _ => 1,
            };
            let mut v = 0i64;
            if unroll > 1 {
                while v + unroll <= l.count {
                    for k in 0..unroll {
                        set_loop_value(l, state, v + k);
                        if tile_guard_ok(l, state) {
                            for ch in &l.children {
                                run_node(ctx, ch, state, log)?;
                            }
                        }
                    }
                    v += unroll;
                }
            }
            while v < l.count {
                set_loop_value(l, state, v);
                if tile_guard_ok(l, state) {
                    for ch in &l.children {
                        run_node(ctx, ch, state, log)?;
                    }
                }
                v += 1;
            }
            Ok(())
        }
    }
}

fn run_parallel(ctx: &ExecCtx, l: &LoopNode, state: &ExecState) -> Result<(), RuntimeError> {
    let lanes = ctx.lanes.min(l.count as usize).max(1);
    let chunk = (l.count as usize).div_ceil(lanes);
    let result = std::sync::Mutex::new(Ok(()));
    std::thread::scope(|scope| {
        for lane in 0..lanes {
            let start = (lane * chunk) as i64;
            let stop = ((lane + 1) * chunk).min(l.count as usize) as i64;
            if start >= stop {
                break;
            }
            let mut local = state.clone();
            let result = &result;
            scope.spawn(move || {
                let mut log = None;
                for v in start..stop {
                    set_loop_value(l, &mut local, v);
                    if tile_guard_ok(l, &local) {
                        for ch in &l.children {
                            if let Err(e) = run_node(ctx, ch, &mut local, &mut log) {
                                *result.lock().unwrap() = Err(e);
                                return;
                            }
                        }
                    }
                }
            });
        }
    });
    result.into_inner().unwrap()
}

fn fresh_state(plan: &ExecPlan, nests: usize) -> ExecState {
    let widths: Vec<usize> = plan.comps.iter().map(|c| c.lowers.len()).collect();
    let _ = nests;
    ExecState {
        ys: widths.iter().map(|&w| vec![0; w]).collect(),
        bases: widths.iter().map(|&w| vec![0; w]).collect(),
        x: Vec::with_capacity(plan.depth_max),
    }
}

fn run_plan(
    plan: &ExecPlan,
    store: &mut BufferStore,
    lanes: usize,
    mut log: Option<&mut ExecLog>,
) -> Result<(), RuntimeError> {
    let raw = RawStore::new(store);
    let ctx = ExecCtx {
        plan,
        store: &raw,
        lanes,
    };
    let mut state = fresh_state(plan, plan.comps.len());
    for node in &plan.roots {
        run_node(&ctx, node, &mut state, &mut log)?;
    }
    Ok(())
}

/// Sequential reference execution: loops run in scheduled order, parallel
/// flags are ignored for ordering purposes.
pub fn interpret(
    program: &Program,
    ast: &Ast,
    sp: &ScheduledProgram,
    store: &mut BufferStore,
) -> Result<(), RuntimeError> {
    let plan = build_plan(program, ast, sp);
    run_plan(&plan, store, 1, None)
}

/// Sequential execution that also records the (computation, point) sequence;
/// used by the dependence oracle.
pub fn interpret_logged(
    program: &Program,
    ast: &Ast,
    sp: &ScheduledProgram,
    store: &mut BufferStore,
) -> Result<ExecLog, RuntimeError> {
    let plan = build_plan(program, ast, sp);
    let mut log = ExecLog::new();
    run_plan(&plan, store, 1, Some(&mut log))?;
    Ok(log)
}

/// Execution with `lanes` worker lanes on parallel-flagged loops.
pub fn execute_parallel(
    program: &Program,
    ast: &Ast,
    sp: &ScheduledProgram,
    store: &mut BufferStore,
    lanes: usize,
) -> Result<(), RuntimeError> {
    let plan = build_plan(program, ast, sp);
    run_plan(&plan, store, lanes.max(1), None)
}

/// Number of statement instances the plan executes (guard-passing points).
pub fn executed_points(program: &Program, ast: &Ast, sp: &ScheduledProgram) -> Result<u64, RuntimeError> {
    let mut store = BufferStore::zeroed(program);
    let log = interpret_logged(program, ast, sp, &mut store)?;
    Ok(log.len() as u64)
}
