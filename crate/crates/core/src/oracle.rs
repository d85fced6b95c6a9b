//! Brute-force reference checks used by the test suite.
//!
//! The dependence oracle enumerates every statement instance on a small
//! domain, collects per-cell access orderings from the identity execution,
//! and verifies that a scheduled execution replays each dependent pair in
//! the same direction. It shares nothing with the analytical dependence
//! machinery, so the two can check each other.

use crate::ir::{Ast, Program};
use crate::runtime::{interpret_logged, BufferStore, RuntimeError};
use crate::transforms::ScheduledProgram;
use std::collections::HashMap;

/// One dependent instance pair: the earlier event must stay before the
/// later one under any legal schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstancePair {
    pub src: (usize, Vec<i64>),
    pub snk: (usize, Vec<i64>),
}

fn cell_events(
    program: &Program,
    ast: &Ast,
) -> Result<HashMap<(usize, i64), Vec<(usize, Vec<i64>, bool)>>, RuntimeError> {
    let sp = ScheduledProgram::identity(program);
    let mut store = BufferStore::zeroed(program);
    let log = interpret_logged(program, ast, &sp, &mut store)?;
    let mut cells: HashMap<(usize, i64), Vec<(usize, Vec<i64>, bool)>> = HashMap::new();
    for (comp, x) in &log {
        let c = &program.computations[*comp];
        let linear = |acc: &crate::ir::Access| -> i64 {
            let strides = program.buffers[acc.buffer].strides();
            acc.subscripts
                .iter()
                .zip(&strides)
                .map(|(s, st)| s.eval(x) * st)
                .sum()
        };
        // reads happen before the write of the same instance
        for r in &c.reads {
            cells
                .entry((r.buffer, linear(r)))
                .or_default()
                .push((*comp, x.clone(), false));
        }
        cells
            .entry((c.write.buffer, linear(&c.write)))
            .or_default()
            .push((*comp, x.clone(), true));
    }
    Ok(cells)
}

/// All flow/anti/output instance pairs of a program, derived purely from
/// enumeration: per cell, each write pairs with the previous write, and each
/// read pairs with its defining write and with the next write.
pub fn dependent_pairs(program: &Program, ast: &Ast) -> Result<Vec<InstancePair>, RuntimeError> {
    let cells = cell_events(program, ast)?;
    let mut pairs = Vec::new();
    for (_, events) in cells {
        let mut last_write: Option<usize> = None;
        let mut reads_since: Vec<usize> = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            let same = |a: usize, b: usize| {
                events[a].0 == events[b].0 && events[a].1 == events[b].1
            };
            if ev.2 {
                if let Some(w) = last_write {
                    if !same(w, i) {
                        pairs.push(InstancePair {
                            src: (events[w].0, events[w].1.clone()),
                            snk: (ev.0, ev.1.clone()),
                        });
                    }
                }
                for &r in &reads_since {
                    if !same(r, i) {
                        pairs.push(InstancePair {
                            src: (events[r].0, events[r].1.clone()),
                            snk: (ev.0, ev.1.clone()),
                        });
                    }
                }
                reads_since.clear();
                last_write = Some(i);
            } else {
                if let Some(w) = last_write {
                    if !same(w, i) {
                        pairs.push(InstancePair {
                            src: (events[w].0, events[w].1.clone()),
                            snk: (ev.0, ev.1.clone()),
                        });
                    }
                }
                reads_since.push(i);
            }
        }
    }
    Ok(pairs)
}

/// Whether a scheduled execution preserves every dependent pair's order.
pub fn schedule_preserves_pairs(
    program: &Program,
    ast: &Ast,
    sp: &ScheduledProgram,
    pairs: &[InstancePair],
) -> Result<bool, RuntimeError> {
    let mut store = BufferStore::zeroed(program);
    let log = interpret_logged(program, ast, sp, &mut store)?;
    let mut position: HashMap<(usize, Vec<i64>), usize> = HashMap::new();
    for (i, (comp, x)) in log.into_iter().enumerate() {
        position.insert((comp, x), i);
    }
    for pair in pairs {
        let a = position.get(&pair.src);
        let b = position.get(&pair.snk);
        match (a, b) {
            (Some(pa), Some(pb)) if pa < pb => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{build_ast, enumerate_branches, parse_program};
    use crate::transforms::{apply_schedule, Schedule, Transformation};

    #[test]
    fn oracle_confirms_stencil_carried_level() {
        let p = parse_program(
            "buffer A[10][10] float;\n\
             for i in 1..10 { for j in 0..10 { A[i][j] = A[i-1][j] + 1.0; } }",
        )
        .unwrap();
        let ast = build_ast(&p);
        let branches = enumerate_branches(&ast);
        let pairs = dependent_pairs(&p, &ast).unwrap();
        assert!(!pairs.is_empty());

        // reversing the carrying loop breaks pairs, reversing the inner one
        // does not
        let mut bad = Schedule::empty();
        bad.push(0, Transformation::Reversal { i: 0 });
        let sp = apply_schedule(&p, &ast, &branches, &bad).unwrap();
        assert!(!schedule_preserves_pairs(&p, &ast, &sp, &pairs).unwrap());

        let mut good = Schedule::empty();
        good.push(0, Transformation::Reversal { i: 1 });
        let sp = apply_schedule(&p, &ast, &branches, &good).unwrap();
        assert!(schedule_preserves_pairs(&p, &ast, &sp, &pairs).unwrap());
    }

    #[test]
    fn no_pairs_for_independent_cells() {
        let p = parse_program(
            "buffer A[8] float;\nbuffer B[8] float;\n\
             for i in 0..8 { A[i] = B[i]; }",
        )
        .unwrap();
        let ast = build_ast(&p);
        assert!(dependent_pairs(&p, &ast).unwrap().is_empty());
    }
}
