use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, ParseErrorKind};
use crate::kernels::Kernel;

const KEYWORDS: &[&str] = &[
    "program",
    "param",
    "matrix",
    "input",
    "intermediate",
    "output",
    "for",
    "in",
    "range",
    "if",
    "else",
    "and",
    "or",
    "not",
    "def",
    "log",
    "log2",
    "ceiling",
    "ceil",
    "floor",
    "return",
];

/// Parses `.lp` source into a [`Program`].
pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(tokens);
    p.program()
}

/// Parses a standalone scalar expression (no scope checking).
pub fn parse_expr(source: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(tokens);
    let e = p.expr()?;
    while p.peek() == &Tok::Newline {
        p.bump();
    }
    if p.peek() != &Tok::Eof {
        return Err(p.unexpected("end of expression"));
    }
    Ok(e)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ScopeKind {
    Param,
    Loop,
    Scalar,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    name: String,
    params: Vec<Param>,
    matrices: Vec<MatrixDecl>,
    scope: Vec<(String, ScopeKind)>,
    next_line: LineId,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Self {
            tokens,
            pos: 0,
            name: String::new(),
            params: Vec::new(),
            matrices: Vec::new(),
            scope: Vec::new(),
            next_line: 0,
        }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        let (line, col) = self.here();
        ParseError { line, col, kind }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            Tok::Newline => "end of line".to_string(),
            Tok::Indent => "indentation".to_string(),
            Tok::Dedent => "dedent".to_string(),
            t => format!("{t:?}"),
        };
        self.err(ParseErrorKind::Syntax(format!("expected {wanted}, found {found}")))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn end_of_line(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof => Ok(()),
            _ => Err(self.unexpected("end of line")),
        }
    }

    fn lookup(&self, name: &str) -> Option<ScopeKind> {
        self.scope.iter().rev().find(|(n, _)| n == name).map(|(_, k)| *k)
    }

    fn declare(&mut self, name: &str, kind: ScopeKind) -> Result<(), ParseError> {
        if self.lookup(name).is_some() || self.matrices.iter().any(|m| m.name == name) {
            return Err(self.err(ParseErrorKind::Redefined(name.into())));
        }
        self.scope.push((name.into(), kind));
        Ok(())
    }

    fn check_refs(&self, e: &Expr) -> Result<(), ParseError> {
        let mut missing = None;
        e.for_each_ref(&mut |r| {
            if missing.is_none() && self.lookup(r).is_none() {
                missing = Some(r.to_string());
            }
        });
        match missing {
            Some(name) => Err(self.err(ParseErrorKind::UndefinedVariable(name))),
            None => Ok(()),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        self.skip_newlines();
        if self.is_kw("def") {
            return Err(self.err(ParseErrorKind::Syntax("programs start with `program NAME`, not `def`".into())));
        }
        if *self.peek() == Tok::Eof {
            return Err(self.err(ParseErrorKind::Syntax("empty program".into())));
        }
        self.expect_kw("program")?;
        self.name = self.ident("program name")?;
        self.end_of_line()?;

        let mut body = Vec::new();
        let mut outputs = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::Eof => break,
                Tok::Indent => return Err(self.err(ParseErrorKind::Syntax("unexpected indentation".into()))),
                _ => {}
            }
            if self.is_kw("param") {
                self.param_decl()?;
            } else if self.is_kw("matrix") {
                self.matrix_decl()?;
            } else if self.is_kw("output") {
                outputs.push(self.output_decl()?);
            } else {
                body.push(self.stmt()?);
            }
        }
        Ok(Program {
            name: core::mem::take(&mut self.name),
            params: core::mem::take(&mut self.params),
            matrices: core::mem::take(&mut self.matrices),
            body,
            outputs,
        })
    }

    fn skip_newlines(&mut self) {
        while *self.peek() == Tok::Newline {
            self.bump();
        }
    }

    fn param_decl(&mut self) -> Result<(), ParseError> {
        self.expect_kw("param")?;
        let name = self.ident("parameter name")?;
        let value = if *self.peek() == Tok::Assign {
            self.bump();
            let neg = if *self.peek() == Tok::Minus {
                self.bump();
                true
            } else {
                false
            };
            match self.bump() {
                Tok::Int(v) => Some(if neg { -v } else { v }),
                _ => {
                    self.pos -= 1;
                    return Err(self.unexpected("integer parameter value"));
                }
            }
        } else {
            None
        };
        self.declare(&name, ScopeKind::Param)?;
        self.params.push(Param { name, value });
        self.end_of_line()
    }

    fn matrix_decl(&mut self) -> Result<(), ParseError> {
        self.expect_kw("matrix")?;
        let name = self.ident("matrix name")?;
        if self.lookup(&name).is_some() || self.matrices.iter().any(|m| m.name == name) {
            return Err(self.err(ParseErrorKind::Redefined(name)));
        }
        self.expect(Tok::LBracket, "`[`")?;
        let arity = match self.bump() {
            Tok::Int(v) if v >= 1 => v as usize,
            _ => {
                self.pos -= 1;
                return Err(self.unexpected("positive matrix arity"));
            }
        };
        self.expect(Tok::RBracket, "`]`")?;
        let role = if self.is_kw("input") {
            Role::Input
        } else if self.is_kw("intermediate") {
            Role::Intermediate
        } else if self.is_kw("output") {
            Role::Output
        } else {
            return Err(self.unexpected("`input`, `intermediate` or `output`"));
        };
        self.bump();
        self.matrices.push(MatrixDecl { name, arity, role });
        self.end_of_line()
    }

    fn output_decl(&mut self) -> Result<OutputDecl, ParseError> {
        self.expect_kw("output")?;
        let mark = self.pos;
        // Range variables are bound after the tile expression, so parse the tile twice.
        self.idx_expr_unchecked()?;
        let mut ranges = Vec::new();
        let depth = self.scope.len();
        while self.is_kw("for") {
            self.bump();
            let var = self.ident("range variable")?;
            self.expect_kw("in")?;
            let (start, end, step) = self.range_args()?;
            self.declare(&var, ScopeKind::Loop)?;
            ranges.push(OutputRange { var, start, end, step });
        }
        let after = self.pos;
        self.pos = mark;
        let tile = self.idx_expr()?;
        self.pos = after;
        self.scope.truncate(depth);
        self.end_of_line()?;
        Ok(OutputDecl { tile, ranges })
    }

    fn range_args(&mut self) -> Result<(Expr, Expr, Expr), ParseError> {
        self.expect_kw("range")?;
        self.expect(Tok::LParen, "`(`")?;
        let a = self.expr()?;
        self.check_refs(&a)?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.expr()?;
        self.check_refs(&b)?;
        let step = if *self.peek() == Tok::Comma {
            self.bump();
            let s = self.expr()?;
            self.check_refs(&s)?;
            s
        } else {
            Expr::Int(1)
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok((a, b, step))
    }

    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::Colon, "`:`")?;
        self.expect(Tok::Newline, "end of line after `:`")?;
        self.skip_newlines();
        self.expect(Tok::Indent, "indented block")?;
        let depth = self.scope.len();
        let mut body = Vec::new();
        loop {
            self.skip_newlines();
            if matches!(self.peek(), Tok::Dedent | Tok::Eof) {
                break;
            }
            body.push(self.stmt()?);
        }
        if *self.peek() == Tok::Dedent {
            self.bump();
        }
        self.scope.truncate(depth);
        Ok(body)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        if self.is_kw("def") {
            return Err(self.err(ParseErrorKind::NestedFunction));
        }
        if self.is_kw("param") || self.is_kw("matrix") || self.is_kw("output") {
            return Err(self.err(ParseErrorKind::Syntax("declarations are only allowed at top level".into())));
        }
        if self.is_kw("for") {
            self.bump();
            let var = self.ident("loop variable")?;
            self.expect_kw("in")?;
            let (start, end, step) = self.range_args()?;
            let depth = self.scope.len();
            self.declare(&var, ScopeKind::Loop)?;
            let body = self.suite()?;
            self.scope.truncate(depth);
            return Ok(Stmt::For(ForLoop { var, start, end, step, body }));
        }
        if self.is_kw("if") {
            self.bump();
            let cond = self.expr()?;
            self.check_refs(&cond)?;
            let then_body = self.suite()?;
            self.skip_newlines();
            let else_body = if self.is_kw("else") {
                self.bump();
                Some(self.suite()?)
            } else {
                None
            };
            return Ok(Stmt::If { cond, then_body, else_body });
        }
        match (self.peek().clone(), self.peek_at(1).clone()) {
            (Tok::Ident(name), Tok::Assign) if !KEYWORDS.contains(&name.as_str()) => {
                self.bump();
                self.bump();
                let value = self.expr()?;
                self.check_refs(&value)?;
                self.declare(&name, ScopeKind::Scalar)?;
                self.end_of_line()?;
                Ok(Stmt::Assign { name, value })
            }
            (Tok::Ident(_), Tok::LBracket) => self.kernel_call(),
            _ => Err(self.unexpected("statement")),
        }
    }

    fn kernel_call(&mut self) -> Result<Stmt, ParseError> {
        let mut outputs = alloc::vec![self.idx_expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            outputs.push(self.idx_expr()?);
        }
        self.expect(Tok::Assign, "`=`")?;
        let (kline, kcol) = self.here();
        let fname = match self.bump() {
            Tok::Ident(s) => s,
            _ => {
                self.pos -= 1;
                return Err(self.unexpected("kernel name"));
            }
        };
        let kernel = match Kernel::from_name(&fname) {
            Some(k) => k,
            None if fname == self.name => {
                return Err(ParseError { line: kline, col: kcol, kind: ParseErrorKind::Recursion(fname) })
            }
            None => return Err(ParseError { line: kline, col: kcol, kind: ParseErrorKind::UnknownKernel(fname) }),
        };
        self.expect(Tok::LParen, "`(`")?;
        let mut inputs = Vec::new();
        let mut scalars = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let is_tile = matches!((self.peek(), self.peek_at(1)), (Tok::Ident(_), Tok::LBracket));
                if is_tile {
                    if !scalars.is_empty() {
                        return Err(
                            self.err(ParseErrorKind::Syntax("tile arguments must precede scalar arguments".into()))
                        );
                    }
                    inputs.push(self.idx_expr()?);
                } else {
                    let e = self.expr()?;
                    self.check_refs(&e)?;
                    scalars.push(e);
                }
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        if !kernel.accepts(inputs.len(), scalars.len()) || outputs.len() != kernel.output_count() {
            return Err(ParseError {
                line: kline,
                col: kcol,
                kind: ParseErrorKind::KernelArity { kernel: fname, inputs: inputs.len(), outputs: outputs.len() },
            });
        }
        self.end_of_line()?;
        let line = self.next_line;
        self.next_line += 1;
        Ok(Stmt::Call(KernelCall { line, kernel, outputs, inputs, scalars }))
    }

    fn idx_expr(&mut self) -> Result<IdxExpr, ParseError> {
        let (line, col) = self.here();
        let ie = self.idx_expr_unchecked()?;
        let decl = self.matrices.iter().find(|m| m.name == ie.matrix).ok_or(ParseError {
            line,
            col,
            kind: ParseErrorKind::UnknownMatrix(ie.matrix.clone()),
        })?;
        if decl.arity != ie.indices.len() {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::MatrixArity {
                    matrix: ie.matrix.clone(),
                    expected: decl.arity,
                    found: ie.indices.len(),
                },
            });
        }
        for e in &ie.indices {
            self.check_refs(e)?;
        }
        Ok(ie)
    }

    fn idx_expr_unchecked(&mut self) -> Result<IdxExpr, ParseError> {
        let matrix = self.ident("matrix name")?;
        self.expect(Tok::LBracket, "`[`")?;
        let mut indices = alloc::vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            indices.push(self.expr()?);
        }
        self.expect(Tok::RBracket, "`]`")?;
        Ok(IdxExpr { matrix, indices })
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.and_expr()?;
        while self.is_kw("or") {
            self.bump();
            let r = self.and_expr()?;
            l = Expr::binary(BinaryOp::Or, l, r);
        }
        Ok(l)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.not_expr()?;
        while self.is_kw("and") {
            self.bump();
            let r = self.not_expr()?;
            l = Expr::binary(BinaryOp::And, l, r);
        }
        Ok(l)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.is_kw("not") {
            self.bump();
            return Ok(Expr::unary(UnaryOp::Not, self.not_expr()?));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let l = self.add_expr()?;
        let op = match self.peek() {
            Tok::EqEq => CmpOp::Eq,
            Tok::NotEq => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Gt => CmpOp::Gt,
            Tok::Le => CmpOp::Le,
            Tok::Ge => CmpOp::Ge,
            _ => return Ok(l),
        };
        self.bump();
        let r = self.add_expr()?;
        if matches!(self.peek(), Tok::EqEq | Tok::NotEq | Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge) {
            return Err(self.err(ParseErrorKind::Syntax("comparisons do not chain; use `and`".into())));
        }
        Ok(Expr::compare(op, l, r))
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(l),
            };
            self.bump();
            let r = self.mul_expr()?;
            l = Expr::binary(op, l, r);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut l = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                Tok::Percent => BinaryOp::Mod,
                _ => return Ok(l),
            };
            self.bump();
            let r = self.unary_expr()?;
            l = Expr::binary(op, l, r);
        }
    }

    fn unary_expr(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            // `-3` is a literal; `-(3)` and `-2**k` are negations.
            match (self.peek().clone(), self.peek_at(1)) {
                (Tok::Int(v), next) if *next != Tok::StarStar => {
                    self.bump();
                    return Ok(Expr::Int(-v));
                }
                (Tok::Float(v), next) if *next != Tok::StarStar => {
                    self.bump();
                    return Ok(Expr::Float(-v));
                }
                _ => {}
            }
            return Ok(Expr::unary(UnaryOp::Neg, self.unary_expr()?));
        }
        self.power_expr()
    }

    fn power_expr(&mut self) -> Result<Expr, ParseError> {
        let (line, col) = self.here();
        let base = self.atom()?;
        if *self.peek() != Tok::StarStar {
            return Ok(base);
        }
        self.bump();
        let exponent = self.unary_expr()?;
        match base {
            Expr::Int(b) if b >= 0 => Ok(Expr::Pow { base: b, exponent: Box::new(exponent) }),
            _ => Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::Syntax("the base of `**` must be a non-negative integer literal".into()),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "log" => Some(UnaryOp::Log),
                    "log2" => Some(UnaryOp::Log2),
                    "ceiling" | "ceil" => Some(UnaryOp::Ceiling),
                    "floor" => Some(UnaryOp::Floor),
                    _ => None,
                };
                if let Some(op) = func {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    let e = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::unary(op, e));
                }
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(self.unexpected("expression"));
                }
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.pos -= 1;
                    return Err(self.err(ParseErrorKind::Syntax(format!(
                        "`{name}` is not a scalar function; kernels may only be called as statements"
                    ))));
                }
                Ok(Expr::Ref(name))
            }
            _ => Err(self.unexpected("expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::programs::{CHOLESKY_SRC, TSQR_SRC};

    fn kind(src: &str) -> ParseErrorKind {
        parse_program(src).unwrap_err().kind
    }

    #[test]
    fn shipped_listings() {
        let p = parse_program(CHOLESKY_SRC).unwrap();
        let kernels: Vec<_> = p.calls().iter().map(|c| c.kernel.name()).collect();
        assert_eq!(kernels, ["chol", "trsm", "syrk"]);
        let Stmt::For(outer) = &p.body[0] else { panic!() };
        let Stmt::For(mid) = &outer.body[1] else { panic!() };
        assert!(matches!(mid.body[1], Stmt::For(_)));

        let t = parse_program(TSQR_SRC).unwrap();
        assert_eq!(t.line_count(), 2);
        let Stmt::For(levels) = &t.body[1] else { panic!() };
        let Stmt::For(inner) = &levels.body[0] else { panic!() };
        assert_eq!(inner.step, parse_expr("2**(level + 1)").unwrap());
    }

    #[test]
    fn rejects_bad_programs() {
        assert!(matches!(kind(""), ParseErrorKind::Syntax(_)));
        assert!(matches!(kind("program p\nmatrix A[1] input\nA[0] = gemm(A[0])\n"), ParseErrorKind::UnknownKernel(_)));
        assert!(matches!(
            kind("program p\nmatrix A[1] input\nmatrix B[1] output\nB[0] = chol(A[0, 1])\n"),
            ParseErrorKind::MatrixArity { .. }
        ));
        assert!(matches!(
            kind("program p\nmatrix A[1] input\nmatrix B[1] output\nB[0] = trsm(A[0])\n"),
            ParseErrorKind::KernelArity { .. }
        ));
        assert!(matches!(kind("program p\nmatrix A[1] input\nA[0] = chol(C[0])\n"), ParseErrorKind::UnknownMatrix(_)));
        assert!(matches!(
            kind("program p\nmatrix A[1] input\nA[i] = chol(A[0])\n"),
            ParseErrorKind::UndefinedVariable(_)
        ));
        assert!(matches!(
            kind("program p\nparam N\nmatrix A[1] input\nfor N in range(0, 2):\n    A[N] = chol(A[0])\n"),
            ParseErrorKind::Redefined(_)
        ));
        assert!(matches!(kind("program p\nmatrix A[1] input\nA[0] = p(A[0])\n"), ParseErrorKind::Recursion(_)));
        assert!(matches!(kind("program p\nfor i in range(0, 2):\n    def f():\n"), ParseErrorKind::NestedFunction));
    }

    #[test]
    fn error_positions() {
        let e =
            parse_program("program p\nmatrix A[1] input\nfor i in range(0, 2)\n    A[i] = chol(A[i])\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.col > 1);
    }

    #[test]
    fn tabs_are_rejected() {
        assert!(parse_program("program p\nmatrix A[1] input\nfor i in range(0, 2):\n\tA[i] = chol(A[i])\n").is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(parse_expr("1 + 2 * 3").unwrap(), parse_expr("1 + (2 * 3)").unwrap());
        assert_eq!(parse_expr("2**1 + 1").unwrap(), parse_expr("(2**1) + 1").unwrap());
        assert_eq!(parse_expr("a < b and not c").unwrap(), parse_expr("(a < b) and (not c)").unwrap());
        assert!(parse_expr("a < b < c").is_err());
    }
}
