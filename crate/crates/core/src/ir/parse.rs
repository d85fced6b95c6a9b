//! Recursive-descent parser for the loop-nest DSL.
//!
//! Grammar (comments run `//` to end of line):
//!
//! ```text
//! program  := header? decl* nest+
//! header   := "program" IDENT ";"
//! decl     := "buffer" IDENT ("[" INT "]")+ ("float" | "int") ";"
//! nest     := "for" IDENT "in" INT ".." INT "{" item+ "}"
//! item     := nest | stmt
//! stmt     := IDENT ("[" affine "]")+ "=" expr ";"
//! affine   := ["-"] aterm (("+" | "-") aterm)*
//! aterm    := INT | INT "*" IDENT | IDENT "*" INT | IDENT
//! expr     := mul (("+" | "-") mul)*
//! mul      := unary (("*" | "/") unary)*
//! unary    := "-" unary | atom
//! atom     := NUMBER | IDENT ("[" affine "]")+
//!           | ("min" | "max") "(" expr "," expr ")" | "(" expr ")"
//! ```
//!
//! Statements must sit inside at least one loop. Every subscript must be an
//! affine function of the enclosing iterators; anything else (e.g. `A[i*j]`)
//! is rejected with [`IrError::NonAffine`].

use super::{
    Access, AffineForm, BinOp, Buffer, Caps, Computation, ElemKind, Expr, IrError, IterVar,
    Program,
};
use std::collections::HashMap;

pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        buffers: Vec::new(),
        buffer_ids: HashMap::new(),
        computations: Vec::new(),
    };
    let program = p.program()?;
    program.validate(&Caps::default())?;
    Ok(program)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Sym(char),
    DotDot,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, IrError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        let (tl, tc) = (line, col);
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => {
                col += 1;
                i += 1;
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == '/' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '.' if i + 1 < bytes.len() && bytes[i + 1] == '.' => {
                out.push(Token {
                    tok: Tok::DotDot,
                    line: tl,
                    col: tc,
                });
                i += 2;
                col += 2;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                // a '.' starts a fraction only if not the range operator
                if i + 1 < bytes.len() && bytes[i] == '.' && bytes[i + 1].is_ascii_digit() {
                    is_float = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = bytes[start..i].iter().collect();
                col += i - start;
                let tok = if is_float {
                    Tok::Float(s.parse().map_err(|_| IrError::Syntax {
                        line: tl,
                        col: tc,
                        msg: format!("bad number `{s}`"),
                    })?)
                } else {
                    Tok::Int(s.parse().map_err(|_| IrError::Syntax {
                        line: tl,
                        col: tc,
                        msg: format!("integer literal `{s}` out of range"),
                    })?)
                };
                out.push(Token {
                    tok,
                    line: tl,
                    col: tc,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                col += i - start;
                out.push(Token {
                    tok: Tok::Ident(s),
                    line: tl,
                    col: tc,
                });
            }
            '[' | ']' | '{' | '}' | '(' | ')' | ';' | ',' | '=' | '+' | '-' | '*' | '/' => {
                out.push(Token {
                    tok: Tok::Sym(c),
                    line: tl,
                    col: tc,
                });
                i += 1;
                col += 1;
            }
            other => {
                return Err(IrError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    buffers: Vec<Buffer>,
    buffer_ids: HashMap<String, usize>,
    computations: Vec<Computation>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, IrError> {
        let t = self.peek();
        Err(IrError::Syntax {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        })
    }

    fn expect_sym(&mut self, c: char) -> Result<(), IrError> {
        match &self.peek().tok {
            Tok::Sym(s) if *s == c => {
                self.bump();
                Ok(())
            }
            other => self.err(format!("expected `{c}`, found {other:?}")),
        }
    }

    fn expect_ident(&mut self) -> Result<String, IrError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {other:?}")),
        }
    }

    fn expect_int(&mut self) -> Result<i64, IrError> {
        // allow a leading minus on integer literals in bounds positions
        let neg = matches!(self.peek().tok, Tok::Sym('-'));
        if neg {
            self.bump();
        }
        match self.peek().tok.clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            other => self.err(format!("expected integer, found {other:?}")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn program(&mut self) -> Result<Program, IrError> {
        let mut name = "main".to_string();
        if self.at_keyword("program") {
            self.bump();
            name = self.expect_ident()?;
            self.expect_sym(';')?;
        }
        while self.at_keyword("buffer") {
            self.buffer_decl()?;
        }
        while self.at_keyword("for") {
            let nest: Vec<IterVar> = Vec::new();
            self.nest(nest)?;
        }
        if !matches!(self.peek().tok, Tok::Eof) {
            return self.err("expected `for` or end of input");
        }
        if self.computations.is_empty() {
            return Err(IrError::NoComputations);
        }
        Ok(Program {
            name,
            buffers: std::mem::take(&mut self.buffers),
            computations: std::mem::take(&mut self.computations),
        })
    }

    fn buffer_decl(&mut self) -> Result<(), IrError> {
        self.bump(); // `buffer`
        let t = self.peek().clone();
        let name = self.expect_ident()?;
        if self.buffer_ids.contains_key(&name) {
            return Err(IrError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("duplicate buffer `{name}`"),
            });
        }
        let mut dims = Vec::new();
        while matches!(self.peek().tok, Tok::Sym('[')) {
            self.bump();
            dims.push(self.expect_int()?);
            self.expect_sym(']')?;
        }
        if dims.is_empty() {
            return self.err("buffer needs at least one extent");
        }
        let kind = match self.expect_ident()?.as_str() {
            "float" => ElemKind::Float,
            "int" => ElemKind::Int,
            other => return self.err(format!("expected `float` or `int`, found `{other}`")),
        };
        self.expect_sym(';')?;
        self.buffer_ids.insert(name.clone(), self.buffers.len());
        self.buffers.push(Buffer { name, dims, kind });
        Ok(())
    }

    fn nest(&mut self, mut outer: Vec<IterVar>) -> Result<(), IrError> {
        self.bump(); // `for`
        let t = self.peek().clone();
        let name = self.expect_ident()?;
        if outer.iter().any(|it| it.name == name) {
            return Err(IrError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("iterator `{name}` shadows an enclosing loop"),
            });
        }
        if !self.at_keyword("in") {
            return self.err("expected `in`");
        }
        self.bump();
        let lower = self.expect_int()?;
        match self.peek().tok {
            Tok::DotDot => {
                self.bump();
            }
            _ => return self.err("expected `..`"),
        }
        let upper = self.expect_int()?;
        if upper <= lower {
            return Err(IrError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("loop `{name}`: empty range {lower}..{upper}"),
            });
        }
        outer.push(IterVar {
            name: name.clone(),
            lower,
            upper,
            level: outer.len(),
        });
        self.expect_sym('{')?;
        let mut items = 0usize;
        loop {
            match &self.peek().tok {
                Tok::Sym('}') => {
                    self.bump();
                    break;
                }
                Tok::Ident(s) if s == "for" => {
                    self.nest(outer.clone())?;
                    items += 1;
                }
                Tok::Ident(_) => {
                    self.statement(&outer)?;
                    items += 1;
                }
                other => return self.err(format!("expected statement or `for`, found {other:?}")),
            }
        }
        if items == 0 {
            return Err(IrError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("loop `{name}` has an empty body"),
            });
        }
        Ok(())
    }

    fn statement(&mut self, nest: &[IterVar]) -> Result<(), IrError> {
        let id = format!("c{}", self.computations.len());
        let write = self.access(nest)?;
        self.expect_sym('=')?;
        let mut reads = Vec::new();
        let expr = self.expr(nest, &mut reads)?;
        self.expect_sym(';')?;
        self.computations.push(Computation {
            id,
            nest: nest.to_vec(),
            write,
            reads,
            expr,
        });
        Ok(())
    }

    fn access(&mut self, nest: &[IterVar]) -> Result<Access, IrError> {
        let t = self.peek().clone();
        let name = self.expect_ident()?;
        let buffer = *self
            .buffer_ids
            .get(&name)
            .ok_or_else(|| IrError::UndeclaredBuffer {
                line: t.line,
                col: t.col,
                name: name.clone(),
            })?;
        let mut subscripts = Vec::new();
        while matches!(self.peek().tok, Tok::Sym('[')) {
            self.bump();
            subscripts.push(self.affine(nest)?);
            self.expect_sym(']')?;
        }
        if subscripts.is_empty() {
            return self.err(format!("access to `{name}` needs subscripts"));
        }
        Ok(Access { buffer, subscripts })
    }

    /// Parses one affine subscript expression into coefficients + constant.
    fn affine(&mut self, nest: &[IterVar]) -> Result<AffineForm, IrError> {
        let mut form = AffineForm::constant_only(nest.len(), 0);
        let mut sign = 1i64;
        if matches!(self.peek().tok, Tok::Sym('-')) {
            self.bump();
            sign = -1;
        }
        loop {
            self.affine_term(nest, sign, &mut form)?;
            match self.peek().tok {
                Tok::Sym('+') => {
                    self.bump();
                    sign = 1;
                }
                Tok::Sym('-') => {
                    self.bump();
                    sign = -1;
                }
                _ => break,
            }
        }
        Ok(form)
    }

    fn affine_term(
        &mut self,
        nest: &[IterVar],
        sign: i64,
        form: &mut AffineForm,
    ) -> Result<(), IrError> {
        let t = self.peek().clone();
        match self.peek().tok.clone() {
            Tok::Int(v) => {
                self.bump();
                if matches!(self.peek().tok, Tok::Sym('*')) {
                    self.bump();
                    let name = self.expect_ident()?;
                    let level = self.iter_level(nest, &name, &t)?;
                    form.coeffs[level] += sign * v;
                } else {
                    form.constant += sign * v;
                }
            }
            Tok::Ident(name) => {
                self.bump();
                let level = self.iter_level(nest, &name, &t)?;
                if matches!(self.peek().tok, Tok::Sym('*')) {
                    self.bump();
                    match self.peek().tok.clone() {
                        Tok::Int(v) => {
                            self.bump();
                            form.coeffs[level] += sign * v;
                        }
                        // `i * j` and anything non-constant on the right
                        _ => {
                            return Err(IrError::NonAffine {
                                line: t.line,
                                col: t.col,
                            });
                        }
                    }
                } else {
                    form.coeffs[level] += sign;
                }
            }
            Tok::Float(_) => {
                return Err(IrError::NonAffine {
                    line: t.line,
                    col: t.col,
                });
            }
            _ => return self.err("expected affine term"),
        }
        Ok(())
    }

    fn iter_level(&self, nest: &[IterVar], name: &str, t: &Token) -> Result<usize, IrError> {
        nest.iter()
            .position(|it| it.name == name)
            .ok_or_else(|| IrError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("`{name}` is not an enclosing iterator"),
            })
    }

    fn expr(&mut self, nest: &[IterVar], reads: &mut Vec<Access>) -> Result<Expr, IrError> {
        let mut lhs = self.mul(nest, reads)?;
        loop {
            let op = match self.peek().tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.mul(nest, reads)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn mul(&mut self, nest: &[IterVar], reads: &mut Vec<Access>) -> Result<Expr, IrError> {
        let mut lhs = self.unary(nest, reads)?;
        loop {
            let op = match self.peek().tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary(nest, reads)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self, nest: &[IterVar], reads: &mut Vec<Access>) -> Result<Expr, IrError> {
        if matches!(self.peek().tok, Tok::Sym('-')) {
            self.bump();
            let inner = self.unary(nest, reads)?;
            // represent negation as 0 - x so the operator set stays closed
            return Ok(Expr::Bin(
                BinOp::Sub,
                Box::new(Expr::Const(0.0)),
                Box::new(inner),
            ));
        }
        self.atom(nest, reads)
    }

    fn atom(&mut self, nest: &[IterVar], reads: &mut Vec<Access>) -> Result<Expr, IrError> {
        match self.peek().tok.clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Const(v as f64))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Sym('(') => {
                self.bump();
                let e = self.expr(nest, reads)?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Ident(name) if name == "min" || name == "max" => {
                self.bump();
                let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                self.expect_sym('(')?;
                let a = self.expr(nest, reads)?;
                self.expect_sym(',')?;
                let b = self.expr(nest, reads)?;
                self.expect_sym(')')?;
                Ok(Expr::Bin(op, Box::new(a), Box::new(b)))
            }
            Tok::Ident(_) => {
                let acc = self.access(nest)?;
                let idx = match reads.iter().position(|r| *r == acc) {
                    Some(i) => i,
                    None => {
                        reads.push(acc);
                        reads.len() - 1
                    }
                };
                Ok(Expr::Read(idx))
            }
            other => self.err(format!("expected expression, found {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_program_is_rejected() {
        let err = parse_program("buffer A[4] float;").unwrap_err();
        assert_eq!(err, IrError::NoComputations);
    }

    #[test]
    fn non_affine_subscript_is_rejected() {
        let err = parse_program(
            "buffer B[16] float;\nfor i in 0..4 { B[i*i] = 1.0; }",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::NonAffine { .. }), "{err}");
    }

    #[test]
    fn undeclared_buffer_is_rejected() {
        let err = parse_program("for i in 0..4 { B[i] = 1.0; }").unwrap_err();
        assert!(matches!(err, IrError::UndeclaredBuffer { ref name, .. } if name == "B"));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_program("buffer A[4] float;\nfor i in 0..4 { A[i] = ; }").unwrap_err();
        match err {
            IrError::Syntax { line, col, .. } => {
                assert_eq!(line, 2);
                assert!(col > 0);
            }
            other => panic!("expected syntax error, got {other}"),
        }
    }

    #[test]
    fn duplicate_reads_are_deduplicated() {
        let p = parse_program(
            "buffer A[8] float;\nbuffer B[8] float;\n\
             for i in 0..8 { A[i] = B[i] * B[i] + B[i]; }",
        )
        .unwrap();
        assert_eq!(p.computations[0].reads.len(), 1);
    }

    #[test]
    fn mixed_nest_orders_computations_textually() {
        let p = parse_program(
            "buffer A[8] float;\nbuffer B[8][8] float;\n\
             for i in 0..8 {\n  A[i] = 1.0;\n  for j in 0..8 { B[i][j] = A[i]; }\n}",
        )
        .unwrap();
        assert_eq!(p.computations.len(), 2);
        assert_eq!(p.computations[0].id, "c0");
        assert_eq!(p.computations[0].depth(), 1);
        assert_eq!(p.computations[1].depth(), 2);
    }

    #[test]
    fn operator_histogram_counts() {
        let p = parse_program(
            "buffer A[8] float;\nbuffer B[8] float;\n\
             for i in 0..8 { A[i] = min(B[i] + 2.0, B[i] / 3.0) - 1.0; }",
        )
        .unwrap();
        let h = p.computations[0].expr.op_histogram();
        // add, sub, mul, div, min, max
        assert_eq!(h, [1, 1, 0, 1, 1, 0]);
    }
}
