//! Training-program generation and desk-scale benchmark analogs.
//!
//! The generator draws loop nests from four pattern families (elementwise,
//! stencil, reduction, transposed-read). Adjacent computations may share an
//! outer-loop prefix, sometimes with a producer-consumer read, so that
//! multi-branch trees and inter-computation dependences both appear
//! routinely in training data.

use crate::ir::{
    Access, AffineForm, Buffer, Computation, ElemKind, Expr, IterVar, Program,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternWeights {
    pub elementwise: f64,
    pub stencil: f64,
    pub reduction: f64,
    pub transposed: f64,
}

impl Default for PatternWeights {
    fn default() -> Self {
        PatternWeights {
            elementwise: 0.35,
            stencil: 0.25,
            reduction: 0.25,
            transposed: 0.15,
        }
    }
}

impl PatternWeights {
    fn sum(&self) -> f64 {
        self.elementwise + self.stencil + self.reduction + self.transposed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub depth_range: (usize, usize),
    pub comps_range: (usize, usize),
    /// Loop extents are drawn from these (powers of two by default).
    pub bound_choices: Vec<i64>,
    pub pattern_weights: PatternWeights,
    /// Upper bound on one computation's iteration count.
    pub max_points: i64,
    /// Chance that a computation reuses a loop prefix of its predecessor.
    pub share_prefix_prob: f64,
    /// Chance that a prefix-sharing computation reads its predecessor's
    /// output (requires fully matching nests).
    pub consume_prob: f64,
    /// Chance that a computation works on integer buffers.
    pub int_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            depth_range: (2, 5),
            comps_range: (1, 4),
            bound_choices: vec![32, 64, 128, 256, 512],
            pattern_weights: PatternWeights::default(),
            max_points: 1 << 22,
            share_prefix_prob: 0.35,
            consume_prob: 0.5,
            int_prob: 0.15,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.depth_range.0 < 1 || self.depth_range.0 > self.depth_range.1 || self.depth_range.1 > 5
        {
            return Err(format!("bad depth range {:?}", self.depth_range));
        }
        if self.comps_range.0 < 1 || self.comps_range.0 > self.comps_range.1 {
            return Err(format!("bad computation range {:?}", self.comps_range));
        }
        if self.bound_choices.is_empty() || self.bound_choices.iter().any(|&b| b < 2) {
            return Err("bound choices must be non-empty and >= 2".into());
        }
        if (self.pattern_weights.sum() - 1.0).abs() > 1e-9 {
            return Err(format!(
                "pattern weights sum to {}, expected 1",
                self.pattern_weights.sum()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Pattern {
    Elementwise,
    Stencil,
    Reduction,
    Transposed,
}

struct Gen<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    buffers: Vec<Buffer>,
    comps: Vec<Computation>,
    next_iter: usize,
}

impl<'a> Gen<'a> {
    fn pick_pattern(&mut self, depth: usize) -> Pattern {
        let w = &self.cfg.pattern_weights;
        let mut r = self.rng.random::<f64>() * w.sum();
        for (p, wt) in [
            (Pattern::Elementwise, w.elementwise),
            (Pattern::Stencil, w.stencil),
            (Pattern::Reduction, w.reduction),
            (Pattern::Transposed, w.transposed),
        ] {
            if r < wt {
                // transposed and reduced patterns need at least two loops
                if depth < 2 && p != Pattern::Elementwise && p != Pattern::Stencil {
                    return Pattern::Elementwise;
                }
                return p;
            }
            r -= wt;
        }
        Pattern::Elementwise
    }

    fn pick_extent(&mut self, budget: i64) -> i64 {
        let fits: Vec<i64> = self
            .cfg
            .bound_choices
            .iter()
            .copied()
            .filter(|&b| b <= budget)
            .collect();
        let pool = if fits.is_empty() {
            vec![*self.cfg.bound_choices.iter().min().unwrap()]
        } else {
            fits
        };
        pool[self.rng.random_range(0..pool.len())]
    }

    fn fresh_buffer(&mut self, dims: Vec<i64>, kind: ElemKind) -> usize {
        let name = format!("B{}", self.buffers.len());
        self.buffers.push(Buffer { name, dims, kind });
        self.buffers.len() - 1
    }

    fn identity_access(buffer: usize, nest: &[IterVar], ranks: &[usize]) -> Access {
        Access {
            buffer,
            subscripts: ranks
                .iter()
                .map(|&lvl| {
                    let mut coeffs = vec![0i64; nest.len()];
                    coeffs[lvl] = 1;
                    AffineForm {
                        coeffs,
                        constant: 0,
                    }
                })
                .collect(),
        }
    }

    fn combine(&mut self, kind: ElemKind, reads: Vec<Expr>) -> Expr {
        let ops = [
            crate::ir::BinOp::Add,
            crate::ir::BinOp::Sub,
            crate::ir::BinOp::Mul,
            crate::ir::BinOp::Min,
            crate::ir::BinOp::Max,
        ];
        let mut it = reads.into_iter();
        let mut expr = it.next().expect("at least one read");
        for r in it {
            let op = ops[self.rng.random_range(0..ops.len())];
            expr = Expr::Bin(op, Box::new(expr), Box::new(r));
        }
        // sprinkle a constant to vary the operator histogram
        if self.rng.random::<f64>() < 0.6 {
            let c = match kind {
                ElemKind::Float => Expr::Const([0.25, 0.5, 2.0, 3.0][self.rng.random_range(0..4)]),
                ElemKind::Int => Expr::Const([1.0, 2.0, 3.0][self.rng.random_range(0..3)]),
            };
            let op = if kind == ElemKind::Float && self.rng.random::<f64>() < 0.3 {
                crate::ir::BinOp::Div
            } else {
                ops[self.rng.random_range(0..ops.len())]
            };
            expr = Expr::Bin(op, Box::new(expr), Box::new(c));
        }
        expr
    }

    fn next_computation(&mut self) {
        let (dlo, dhi) = self.cfg.depth_range;
        let depth = self.rng.random_range(dlo..=dhi);
        let pattern = self.pick_pattern(depth);

        // stencil offsets only touch fresh innermost loops, whose bounds are
        // inset by one on both sides
        let stencil_axes: Vec<usize> = if pattern == Pattern::Stencil {
            let n_axes = 1 + usize::from(depth >= 2 && self.rng.random::<f64>() < 0.5);
            (depth - n_axes..depth).collect()
        } else {
            Vec::new()
        };

        // optionally reuse an outer-loop prefix of the previous computation
        let prev = self.comps.last().cloned();
        let mut nest: Vec<IterVar> = Vec::new();
        let mut consumed_prev = None;
        if let Some(prev) = &prev {
            if self.rng.random::<f64>() < self.cfg.share_prefix_prob {
                let k_max = depth
                    .min(prev.depth())
                    .min(stencil_axes.first().copied().unwrap_or(depth));
                if k_max >= 1 {
                    let k = self.rng.random_range(1..=k_max);
                    nest.extend(prev.nest[..k].iter().cloned());
                    if k == depth && depth == prev.depth() && pattern == Pattern::Elementwise {
                        if self.rng.random::<f64>() < self.cfg.consume_prob {
                            consumed_prev = Some(prev.write.clone());
                        }
                    }
                }
            }
        }

        let mut budget = self.cfg.max_points;
        for it in &nest {
            budget /= it.extent().max(1);
        }
        while nest.len() < depth {
            let lvl = nest.len();
            let e = self.pick_extent(budget.max(2));
            budget = (budget / e).max(1);
            let (lower, upper) = if stencil_axes.contains(&lvl) {
                (1, 1 + e)
            } else {
                (0, e)
            };
            nest.push(IterVar {
                name: format!("i{}", self.next_iter),
                lower,
                upper,
                level: lvl,
            });
            self.next_iter += 1;
        }
        for (lvl, it) in nest.iter_mut().enumerate() {
            it.level = lvl;
        }

        let kind = if consumed_prev.is_some() {
            self.buffers[consumed_prev.as_ref().unwrap().buffer].kind
        } else if self.rng.random::<f64>() < self.cfg.int_prob {
            ElemKind::Int
        } else {
            ElemKind::Float
        };

        // buffer dimension covering an identity subscript over a loop,
        // padded by one on stencil axes for the +1 offset
        let dim_for = |it: &IterVar, stencil: bool| -> i64 {
            debug_assert!(it.lower >= i64::from(stencil));
            it.upper + i64::from(stencil)
        };

        let full_ranks: Vec<usize> = (0..depth).collect();
        let full_dims: Vec<i64> = nest
            .iter()
            .enumerate()
            .map(|(l, it)| dim_for(it, stencil_axes.contains(&l)))
            .collect();

        let (write, reads): (Access, Vec<Access>) = match pattern {
            Pattern::Elementwise => {
                let out = self.fresh_buffer(full_dims.clone(), kind);
                let write = Self::identity_access(out, &nest, &full_ranks);
                let mut reads = Vec::new();
                if let Some(prev_write) = consumed_prev {
                    reads.push(prev_write);
                }
                let extra = self.rng.random_range(1..=(3 - reads.len().min(2)));
                for _ in 0..extra {
                    let b = self.fresh_buffer(full_dims.clone(), kind);
                    reads.push(Self::identity_access(b, &nest, &full_ranks));
                }
                (write, reads)
            }
            Pattern::Stencil => {
                let input = self.fresh_buffer(full_dims.clone(), kind);
                let out = self.fresh_buffer(full_dims.clone(), kind);
                let write = Self::identity_access(out, &nest, &full_ranks);
                let mut reads = vec![Self::identity_access(input, &nest, &full_ranks)];
                let mut offsets: Vec<(usize, i64)> = Vec::new();
                for &axis in &stencil_axes {
                    offsets.push((axis, 1));
                    offsets.push((axis, -1));
                }
                let picks = self.rng.random_range(1..=offsets.len().min(3));
                for &(axis, off) in offsets.iter().take(picks) {
                    let mut acc = Self::identity_access(input, &nest, &full_ranks);
                    acc.subscripts[axis].constant = off;
                    reads.push(acc);
                }
                (write, reads)
            }
            Pattern::Reduction => {
                let out_ranks: Vec<usize> = (0..depth - 1).collect();
                let out_dims: Vec<i64> = out_ranks.iter().map(|&l| full_dims[l]).collect();
                let out = self.fresh_buffer(out_dims, kind);
                let write = Self::identity_access(out, &nest, &out_ranks);
                let mut reads = vec![write.clone()];
                let b = self.fresh_buffer(full_dims.clone(), kind);
                reads.push(Self::identity_access(b, &nest, &full_ranks));
                if self.rng.random::<f64>() < 0.4 {
                    let w1 = self.fresh_buffer(vec![full_dims[depth - 1]], kind);
                    reads.push(Self::identity_access(w1, &nest, &[depth - 1]));
                }
                (write, reads)
            }
            Pattern::Transposed => {
                let out = self.fresh_buffer(full_dims.clone(), kind);
                let write = Self::identity_access(out, &nest, &full_ranks);
                let mut in_ranks = full_ranks.clone();
                in_ranks.swap(0, 1);
                let in_dims: Vec<i64> = in_ranks.iter().map(|&l| full_dims[l]).collect();
                let b = self.fresh_buffer(in_dims, kind);
                let reads = vec![Self::identity_access(b, &nest, &in_ranks)];
                (write, reads)
            }
        };

        let read_exprs: Vec<Expr> = (0..reads.len()).map(Expr::Read).collect();
        let expr = self.combine(kind, read_exprs);
        self.comps.push(Computation {
            id: format!("c{}", self.comps.len()),
            nest,
            write,
            reads,
            expr,
        });
    }
}

/// Deterministic in the seed: the same configuration always yields the same
/// program, and the output satisfies every program invariant.
pub fn generate_random_program(cfg: &GeneratorConfig) -> Program {
    cfg.validate().expect("valid generator config");
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        buffers: Vec::new(),
        comps: Vec::new(),
        next_iter: 0,
    };
    let n = g.rng.random_range(cfg.comps_range.0..=cfg.comps_range.1);
    for _ in 0..n {
        g.next_computation();
    }
    let program = Program {
        name: format!("rand_{}", cfg.seed),
        buffers: g.buffers,
        computations: g.comps,
    };
    program
        .validate(&crate::ir::Caps::default())
        .expect("generated program is valid");
    program
}

/// Desk-scale analogs of the eight benchmark kernels, expressed in the DSL.
/// Structure matches the originals; sizes default to seconds-scale runs.
pub fn benchmark_suite() -> Vec<Program> {
    benchmark_suite_sized(96)
}

pub fn benchmark_suite_sized(n: i64) -> Vec<Program> {
    let n = n.max(8);
    let cube = (n / 4).max(8);
    let dg = (n / 6).max(8);
    let texts: Vec<(String, String)> = vec![
        (
            "blur".into(),
            format!(
                "program blur;\n\
                 buffer Img[{0}][{0}] float;\nbuffer Bx[{0}][{0}] float;\nbuffer Out[{0}][{0}] float;\n\
                 for i in 0..{0} {{ for j in 1..{1} {{ Bx[i][j] = (Img[i][j-1] + Img[i][j] + Img[i][j+1]) / 3.0; }} }}\n\
                 for p in 1..{1} {{ for q in 1..{1} {{ Out[p][q] = (Bx[p-1][q] + Bx[p][q] + Bx[p+1][q]) / 3.0; }} }}",
                n + 2,
                n + 1
            ),
        ),
        (
            "cvtcolor".into(),
            format!(
                "program cvtcolor;\n\
                 buffer Img[3][{0}][{0}] float;\nbuffer Wc[3] float;\nbuffer Gray[{0}][{0}] float;\n\
                 for c in 0..3 {{ for i in 0..{0} {{ for j in 0..{0} {{ Gray[i][j] = Gray[i][j] + Wc[c] * Img[c][i][j]; }} }} }}",
                n
            ),
        ),
        (
            "doitgen".into(),
            format!(
                "program doitgen;\n\
                 buffer A[{0}][{0}][{0}] float;\nbuffer C4[{0}][{0}] float;\nbuffer S[{0}][{0}][{0}] float;\n\
                 for r in 0..{0} {{ for q in 0..{0} {{ for p in 0..{0} {{ for s in 0..{0} {{\n\
                   S[r][q][p] = S[r][q][p] + A[r][q][s] * C4[s][p];\n\
                 }} }} }} }}",
                dg
            ),
        ),
        (
            "heat2d".into(),
            format!(
                "program heat2d;\n\
                 buffer A[{0}][{0}] float;\nbuffer L[{0}][{0}] float;\nbuffer B[{0}][{0}] float;\n\
                 for i in 1..{1} {{ for j in 1..{1} {{ L[i][j] = A[i-1][j] + A[i+1][j] + A[i][j-1] + A[i][j+1]; }} }}\n\
                 for p in 1..{1} {{ for q in 1..{1} {{ B[p][q] = 0.5 * A[p][q] + 0.125 * L[p][q]; }} }}",
                n + 2,
                n + 1
            ),
        ),
        (
            "heat3d".into(),
            format!(
                "program heat3d;\n\
                 buffer A[{0}][{0}][{0}] float;\nbuffer L[{0}][{0}][{0}] float;\nbuffer B[{0}][{0}][{0}] float;\n\
                 for i in 1..{1} {{ for j in 1..{1} {{ for k in 1..{1} {{\n\
                   L[i][j][k] = A[i-1][j][k] + A[i+1][j][k] + A[i][j-1][k] + A[i][j+1][k];\n\
                 }} }} }}\n\
                 for p in 1..{1} {{ for q in 1..{1} {{ for r in 1..{1} {{\n\
                   B[p][q][r] = 0.5 * A[p][q][r] + 0.125 * (L[p][q][r] + A[p][q][r-1] + A[p][q][r+1]);\n\
                 }} }} }}",
                cube + 2,
                cube + 1
            ),
        ),
        (
            "jacobi2d".into(),
            format!(
                "program jacobi2d;\n\
                 buffer A[{0}][{0}] float;\nbuffer T[{0}][{0}] float;\nbuffer B[{0}][{0}] float;\n\
                 for i in 0..{0} {{ for j in 1..{1} {{ T[i][j] = A[i][j-1] + A[i][j] + A[i][j+1]; }} }}\n\
                 for p in 1..{1} {{ for q in 1..{1} {{ B[p][q] = 0.2 * (T[p][q] + A[p-1][q] + A[p+1][q]); }} }}",
                n + 2,
                n + 1
            ),
        ),
        (
            "mvt".into(),
            format!(
                "program mvt;\n\
                 buffer A[{0}][{0}] float;\nbuffer y1[{0}] float;\nbuffer y2[{0}] float;\n\
                 buffer x1[{0}] float;\nbuffer x2[{0}] float;\n\
                 for i in 0..{0} {{ for j in 0..{0} {{ x1[i] = x1[i] + A[i][j] * y1[j]; }} }}\n\
                 for k in 0..{0} {{ for l in 0..{0} {{ x2[k] = x2[k] + A[l][k] * y2[l]; }} }}",
                n
            ),
        ),
        (
            "seidel2d".into(),
            format!(
                "program seidel2d;\n\
                 buffer A[{0}][{0}] float;\n\
                 for i in 1..{1} {{ for j in 1..{1} {{ A[i][j] = 0.2 * (A[i-1][j] + A[i][j-1] + A[i][j] + A[i+1][j]); }} }}",
                n + 2,
                n + 1
            ),
        ),
    ];
    texts
        .into_iter()
        .map(|(name, text)| {
            let p = crate::ir::parse_program(&text)
                .unwrap_or_else(|e| panic!("benchmark {name} failed to parse: {e}"));
            assert_eq!(p.name, name);
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{access_matrix, build_ast, enumerate_branches, parse_program, serialize_program};
    use crate::legality::compute_dependences;

    #[test]
    fn same_seed_gives_identical_programs() {
        let cfg = GeneratorConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate_random_program(&cfg), generate_random_program(&cfg));
    }

    #[test]
    fn depths_stay_within_the_configured_range() {
        for seed in 0..1000 {
            let cfg = GeneratorConfig {
                seed,
                ..Default::default()
            };
            let p = generate_random_program(&cfg);
            for c in &p.computations {
                assert!((2..=5).contains(&c.depth()), "seed {seed}");
            }
        }
    }

    #[test]
    fn generated_programs_roundtrip_through_the_dsl() {
        for seed in 0..200 {
            let cfg = GeneratorConfig {
                seed,
                ..Default::default()
            };
            let p = generate_random_program(&cfg);
            let text = serialize_program(&p);
            let back = parse_program(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
            assert_eq!(p, back, "seed {seed}");
        }
    }

    #[test]
    fn stencil_draws_have_nonzero_constant_columns() {
        let cfg = GeneratorConfig {
            seed: 7,
            pattern_weights: PatternWeights {
                elementwise: 0.0,
                stencil: 1.0,
                reduction: 0.0,
                transposed: 0.0,
            },
            ..Default::default()
        };
        let p = generate_random_program(&cfg);
        let has_offset = p.computations.iter().any(|c| {
            c.reads.iter().any(|r| {
                access_matrix(r, c.depth())
                    .iter()
                    .any(|row| row[c.depth()] != 0)
            })
        });
        assert!(has_offset);
    }

    #[test]
    fn corpus_covers_carried_and_parallel_programs() {
        let mut carried = 0;
        let mut fully_parallel = 0;
        let mut multi_branch = 0;
        let total = 200;
        for seed in 0..total {
            let cfg = GeneratorConfig {
                seed,
                ..Default::default()
            };
            let p = generate_random_program(&cfg);
            let deps = compute_dependences(&p);
            if deps.deps.iter().any(|d| {
                d.dist
                    .iter()
                    .any(|c| !c.is_exact_zero())
            }) {
                carried += 1;
            }
            if deps.is_empty() {
                fully_parallel += 1;
            }
            let ast = build_ast(&p);
            if enumerate_branches(&ast).len() >= 2 {
                multi_branch += 1;
            }
        }
        assert!(carried * 100 >= total, "carried: {carried}/{total}");
        assert!(fully_parallel * 100 >= total, "parallel: {fully_parallel}/{total}");
        assert!(
            multi_branch * 100 / total >= 30,
            "multi-branch: {multi_branch}/{total}"
        );
    }

    #[test]
    fn benchmarks_validate_and_have_expected_shapes() {
        let suite = benchmark_suite();
        assert_eq!(suite.len(), 8);
        let names: Vec<&str> = suite.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            vec!["blur", "cvtcolor", "doitgen", "heat2d", "heat3d", "jacobi2d", "mvt", "seidel2d"]
        );
        for p in &suite {
            let ast = build_ast(p);
            assert!(!enumerate_branches(&ast).is_empty());
        }
    }

    #[test]
    fn mvt_second_computation_reads_transposed() {
        let suite = benchmark_suite();
        let mvt = suite.iter().find(|p| p.name == "mvt").unwrap();
        assert_eq!(mvt.computations.len(), 2);
        let second = &mvt.computations[1];
        let a_read = second
            .reads
            .iter()
            .find(|r| mvt.buffers[r.buffer].name == "A")
            .unwrap();
        let m = access_matrix(a_read, 2);
        // A[l][k] under nest (k, l): row 0 selects the inner, row 1 the outer
        assert_eq!(m, vec![vec![0, 1, 0], vec![1, 0, 0]]);
    }

    #[test]
    fn jacobi2d_covers_the_five_point_cross() {
        let suite = benchmark_suite();
        let j2d = suite.iter().find(|p| p.name == "jacobi2d").unwrap();
        let a = j2d.buffer_index("A").unwrap();
        let mut offsets = std::collections::HashSet::new();
        for c in &j2d.computations {
            for r in c.reads.iter().filter(|r| r.buffer == a) {
                let di = r.subscripts[0].constant;
                let dj = r.subscripts[1].constant;
                offsets.insert((di, dj));
            }
        }
        let five_point: std::collections::HashSet<(i64, i64)> =
            [(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0)].into_iter().collect();
        assert_eq!(offsets, five_point);
    }

    #[test]
    fn cvtcolor_outer_loop_has_extent_three() {
        let suite = benchmark_suite();
        let cvt = suite.iter().find(|p| p.name == "cvtcolor").unwrap();
        let outer = &cvt.computations[0].nest[0];
        assert_eq!(outer.extent(), 3);
    }
}
