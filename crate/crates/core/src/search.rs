//! Exhaustive enumeration of short legal schedules: the baseline the policy
//! is judged against, and a fallback optimizer for small programs.
//!
//! The search walks exactly the environment's reachable set: catalogue
//! actions applied branch by branch with non-decreasing branch indices.
//! Times flow through the memo store, so repeated searches are cheap.

use crate::env::{ActionCatalogue, ActionKind};
use crate::ir::{build_ast, enumerate_branches, Program};
use crate::legality::{compute_dependences_with_ast, resolve_skew_factor, state_is_legal};
use crate::memo::{host_fingerprint, MemoKey, MemoRecord, MemoStore};
use crate::runtime::{Backend, BackendTag, RuntimeError};
use crate::transforms::{canonical_key, Schedule, ScheduleStep, ScheduledProgram, Transformation};
use std::collections::HashSet;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_schedule: Schedule,
    pub best_time: f64,
    pub baseline_time: f64,
    /// Number of distinct legal schedules evaluated (including the empty
    /// one).
    pub evaluated: usize,
}

impl SearchResult {
    pub fn best_speedup(&self) -> f64 {
        self.baseline_time / self.best_time
    }

    /// The optimum episode return in base-4 log units.
    pub fn best_return(&self) -> f64 {
        self.best_speedup().ln() / 4f64.ln()
    }
}

/// Enumerates every legal schedule of at most `max_actions` transformations
/// and returns the fastest, with times served and recorded through the memo
/// store.
pub fn exhaustive_search(
    program: &Program,
    backend: &Arc<dyn Backend>,
    memo: &Arc<MemoStore>,
    catalogue: &ActionCatalogue,
    max_actions: usize,
) -> Result<SearchResult, RuntimeError> {
    let ast = build_ast(program);
    let branches = enumerate_branches(&ast);
    let deps = compute_dependences_with_ast(program, &ast);
    let program_id = crate::memo::program_id(program);
    let host = || match backend.tag() {
        BackendTag::Measured => Some(host_fingerprint()),
        BackendTag::Synthetic => None,
    };

    let time_of = |sp: &ScheduledProgram, key: &str| -> Result<f64, RuntimeError> {
        let memo_key = MemoKey {
            program_id: program_id.clone(),
            schedule_key: key.to_string(),
            backend: backend.tag(),
        };
        if let Some(rec) = memo.lookup(&memo_key) {
            if let Some(t) = rec.exec_time {
                return Ok(t);
            }
        }
        let t = backend.time(program, &ast, sp)?;
        memo.insert(memo_key, MemoRecord::legal(t, backend.runs(), host()))
            .map_err(|e| RuntimeError::MeasureFailure(e.to_string()))?;
        Ok(t)
    };

    let identity = ScheduledProgram::identity(program);
    let baseline = time_of(&identity, &canonical_key(&Schedule::empty()))?;

    let mut best_time = baseline;
    let mut best_schedule = Schedule::empty();
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(canonical_key(&Schedule::empty()));
    let mut evaluated = 1usize;

    // stack of (schedule, state, minimum branch index)
    let mut stack: Vec<(Schedule, ScheduledProgram, usize)> =
        vec![(Schedule::empty(), identity, 0)];
    while let Some((schedule, state, min_branch)) = stack.pop() {
        if schedule.len() >= max_actions {
            continue;
        }
        for branch_idx in min_branch..branches.len() {
            for kind in &catalogue.actions {
                let transform = match *kind {
                    ActionKind::Next => continue,
                    ActionKind::Interchange { i } => Transformation::Interchange { i, j: i + 1 },
                    ActionKind::Reversal { i } => Transformation::Reversal { i },
                    ActionKind::Parallelization { i } => Transformation::Parallelization { i },
                    ActionKind::Unrolling { factor } => Transformation::Unrolling { factor },
                    ActionKind::Tiling { i, tx, ty } => Transformation::Tiling {
                        i,
                        j: i + 1,
                        tx,
                        ty,
                    },
                    ActionKind::Skewing { i } => {
                        let factor = resolve_skew_factor(
                            &deps,
                            &state,
                            &branches[branch_idx].comps,
                            i,
                            i + 1,
                        );
                        Transformation::Skewing {
                            i,
                            j: i + 1,
                            factor,
                        }
                    }
                };
                let mut next = state.clone();
                if next
                    .apply_step(
                        &ast,
                        &branches,
                        &ScheduleStep {
                            branch: branch_idx,
                            transform,
                        },
                    )
                    .is_err()
                {
                    continue;
                }
                let candidate = schedule.extended(branch_idx, transform);
                let key = canonical_key(&candidate);
                if !seen.insert(key.clone()) {
                    continue;
                }
                let legal = match memo.lookup(&MemoKey {
                    program_id: program_id.clone(),
                    schedule_key: key.clone(),
                    backend: backend.tag(),
                }) {
                    Some(rec) => rec.legal,
                    None => {
                        let ok = state_is_legal(&deps, &next);
                        if !ok {
                            memo.insert(
                                MemoKey {
                                    program_id: program_id.clone(),
                                    schedule_key: key.clone(),
                                    backend: backend.tag(),
                                },
                                MemoRecord::illegal(),
                            )
                            .map_err(|e| RuntimeError::MeasureFailure(e.to_string()))?;
                        }
                        ok
                    }
                };
                if !legal {
                    continue;
                }
                let t = time_of(&next, &key)?;
                evaluated += 1;
                if t < best_time {
                    best_time = t;
                    best_schedule = candidate.clone();
                }
                stack.push((candidate, next, branch_idx));
            }
        }
    }

    Ok(SearchResult {
        best_schedule,
        best_time,
        baseline_time: baseline,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;
    use crate::runtime::SyntheticBackend;

    #[test]
    fn search_finds_parallelization_on_an_elementwise_kernel() {
        let p = parse_program(
            "buffer A[512][512] float;\nbuffer B[512][512] float;\n\
             for i in 0..512 { for j in 0..512 { A[i][j] = B[i][j] + 1.0; } }",
        )
        .unwrap();
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let result = exhaustive_search(
            &p,
            &backend,
            &memo,
            &ActionCatalogue::default_56(),
            1,
        )
        .unwrap();
        assert!(result.best_speedup() > 1.0);
        // with one action the best move is parallelizing the outer loop
        assert_eq!(
            canonical_key(&result.best_schedule),
            "B0:P(0)"
        );
    }

    #[test]
    fn deeper_searches_only_improve() {
        let p = parse_program(
            "buffer A[256][256] float;\nbuffer B[256][256] float;\n\
             for i in 0..256 { for j in 0..256 { A[i][j] = B[j][i] * 2.0; } }",
        )
        .unwrap();
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let cat = ActionCatalogue::default_56();
        let t1 = exhaustive_search(&p, &backend, &memo, &cat, 1).unwrap();
        let t2 = exhaustive_search(&p, &backend, &memo, &cat, 2).unwrap();
        assert!(t2.best_time <= t1.best_time);
        assert!(t2.evaluated >= t1.evaluated);
    }

    #[test]
    fn rerunning_a_search_is_all_memo_hits() {
        let p = parse_program(
            "buffer A[128][128] float;\n\
             for i in 0..128 { for j in 0..128 { A[i][j] = A[i][j] + 1.0; } }",
        )
        .unwrap();
        let backend: Arc<dyn Backend> = Arc::new(SyntheticBackend::default());
        let memo = Arc::new(MemoStore::new());
        let cat = ActionCatalogue::default_56();
        let first = exhaustive_search(&p, &backend, &memo, &cat, 2).unwrap();
        let misses_before = memo.stats().misses;
        let second = exhaustive_search(&p, &backend, &memo, &cat, 2).unwrap();
        assert_eq!(memo.stats().misses, misses_before, "warm search never misses");
        assert_eq!(first.best_time, second.best_time);
        assert_eq!(
            canonical_key(&first.best_schedule),
            canonical_key(&second.best_schedule)
        );
    }
}
