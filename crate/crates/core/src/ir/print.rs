//! Canonical text form of a program. `parse_program(serialize_program(p))`
//! yields a program structurally identical to `p`; serializing again yields
//! the same bytes.

use super::ast::{build_ast, Ast, NodeKind};
use super::{Access, AffineForm, BinOp, Computation, ElemKind, Expr, Program};
use std::fmt::Write;

pub fn serialize_program(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "program {};", p.name);
    out.push('\n');
    for b in &p.buffers {
        let dims: String = b.dims.iter().map(|d| format!("[{d}]")).collect();
        let kind = match b.kind {
            ElemKind::Float => "float",
            ElemKind::Int => "int",
        };
        let _ = writeln!(out, "buffer {}{} {};", b.name, dims, kind);
    }
    out.push('\n');
    let ast = build_ast(p);
    for &root in &ast.roots {
        write_node(&mut out, p, &ast, root, 0);
    }
    out
}

fn write_node(out: &mut String, p: &Program, ast: &Ast, id: usize, indent: usize) {
    let pad = "  ".repeat(indent);
    match &ast.node(id).kind {
        NodeKind::Iter {
            name, lower, upper, ..
        } => {
            let _ = writeln!(out, "{pad}for {name} in {lower}..{upper} {{");
            for &c in &ast.node(id).children {
                write_node(out, p, ast, c, indent + 1);
            }
            let _ = writeln!(out, "{pad}}}");
        }
        NodeKind::Comp { comp } => {
            let c = &p.computations[*comp];
            let _ = writeln!(out, "{pad}{} = {};", access_text(p, c, &c.write), expr_text(p, c, &c.expr, 0));
        }
    }
}

fn access_text(p: &Program, c: &Computation, a: &Access) -> String {
    let mut s = p.buffers[a.buffer].name.clone();
    for sub in &a.subscripts {
        let _ = write!(s, "[{}]", affine_text(c, sub));
    }
    s
}

fn affine_text(c: &Computation, f: &AffineForm) -> String {
    let mut parts: Vec<(bool, String)> = Vec::new();
    for (lvl, &coef) in f.coeffs.iter().enumerate() {
        if coef == 0 {
            continue;
        }
        let name = &c.nest[lvl].name;
        let mag = coef.abs();
        let term = if mag == 1 {
            name.clone()
        } else {
            format!("{mag}*{name}")
        };
        parts.push((coef < 0, term));
    }
    if f.constant != 0 || parts.is_empty() {
        parts.push((f.constant < 0, f.constant.abs().to_string()));
    }
    let mut s = String::new();
    for (i, (neg, term)) in parts.iter().enumerate() {
        if i == 0 {
            if *neg {
                s.push('-');
            }
        } else {
            s.push_str(if *neg { " - " } else { " + " });
        }
        s.push_str(term);
    }
    s
}

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Add | BinOp::Sub => 1,
        BinOp::Mul | BinOp::Div => 2,
        BinOp::Min | BinOp::Max => 3,
    }
}

fn expr_text(p: &Program, c: &Computation, e: &Expr, parent_prec: u8) -> String {
    match e {
        Expr::Const(v) => {
            debug_assert!(*v >= 0.0, "negative constants are spelled 0 - x");
            format!("{v:?}")
        }
        Expr::Read(idx) => access_text(p, c, &c.reads[*idx]),
        Expr::Bin(op @ (BinOp::Min | BinOp::Max), a, b) => {
            let name = if *op == BinOp::Min { "min" } else { "max" };
            format!(
                "{name}({}, {})",
                expr_text(p, c, a, 0),
                expr_text(p, c, b, 0)
            )
        }
        Expr::Bin(op, a, b) => {
            let pr = prec(*op);
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                _ => unreachable!(),
            };
            let left = expr_text(p, c, a, pr);
            // right operand of - and / needs parens at equal precedence
            let right_min = pr + u8::from(matches!(op, BinOp::Sub | BinOp::Div));
            let right = expr_text(p, c, b, right_min);
            let s = format!("{left} {sym} {right}");
            if pr < parent_prec {
                format!("({s})")
            } else {
                s
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn roundtrip(text: &str) {
        let p1 = parse_program(text).unwrap();
        let s1 = serialize_program(&p1);
        let p2 = parse_program(&s1).unwrap_or_else(|e| panic!("reparse failed: {e}\n{s1}"));
        assert_eq!(p1, p2, "serialized form:\n{s1}");
        assert_eq!(s1, serialize_program(&p2));
    }

    #[test]
    fn roundtrip_simple_copy() {
        roundtrip(
            "buffer A[2][2] float;\nbuffer B[2][2] float;\n\
             for i in 1..3 { for j in 1..3 { A[i][j] = B[i][j]; } }",
        );
    }

    #[test]
    fn roundtrip_preserves_operator_structure() {
        roundtrip(
            "buffer A[8] float;\nbuffer B[8] float;\n\
             for i in 0..8 { A[i] = (B[i] + 1.0) * max(B[i], 2.5) - B[i] / 4.0; }",
        );
    }

    #[test]
    fn roundtrip_mixed_nest() {
        roundtrip(
            "buffer A[8] float;\nbuffer B[8][8] float;\n\
             for i in 0..8 {\n  A[i] = 0.5;\n  for j in 0..8 { B[i][j] = A[i] + A[j]; }\n}",
        );
    }

    #[test]
    fn roundtrip_negative_bounds_and_offsets() {
        roundtrip(
            "buffer A[16] int;\n\
             for i in -4..4 { A[2*i + 8] = A[2*i + 8] + 1; }",
        );
    }

    #[test]
    fn roundtrip_unary_minus() {
        roundtrip(
            "buffer A[8] float;\nbuffer B[8] float;\n\
             for i in 0..8 { A[i] = -B[i] + 1.0; }",
        );
    }
}
