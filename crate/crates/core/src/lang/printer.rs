use alloc::string::String;
use core::fmt::{self, Write};

use super::ast::*;

const OR: u8 = 1;
const AND: u8 = 2;
const NOT: u8 = 3;
const CMP: u8 = 4;
const ADD: u8 = 5;
const MUL: u8 = 6;
const UNARY: u8 = 7;
const POW: u8 = 8;
const ATOM: u8 = 9;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Or, ..) => OR,
        Expr::Binary(BinaryOp::And, ..) => AND,
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => ADD,
        Expr::Binary(..) => MUL,
        Expr::Compare(..) => CMP,
        Expr::Unary(UnaryOp::Not, _) => NOT,
        Expr::Unary(UnaryOp::Neg, _) => UNARY,
        Expr::Unary(..) => ATOM,
        Expr::Pow { .. } => POW,
        Expr::Int(v) if *v < 0 => UNARY,
        Expr::Float(v) if v.is_sign_negative() => UNARY,
        Expr::Ref(_) | Expr::Int(_) | Expr::Float(_) => ATOM,
    }
}

fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if prec(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Binary(op, l, r) => {
                let (sym, p) = match op {
                    BinaryOp::Or => ("or", OR),
                    BinaryOp::And => ("and", AND),
                    BinaryOp::Add => ("+", ADD),
                    BinaryOp::Sub => ("-", ADD),
                    BinaryOp::Mul => ("*", MUL),
                    BinaryOp::Div => ("/", MUL),
                    BinaryOp::Mod => ("%", MUL),
                };
                // `and`/`or` operands one level up: `not` binds looser than `and`'s operand slot.
                let (lmin, rmin) = match op {
                    BinaryOp::Or => (OR, AND),
                    BinaryOp::And => (AND, NOT),
                    _ => (p, p + 1),
                };
                child(f, l, lmin)?;
                write!(f, " {sym} ")?;
                child(f, r, rmin)
            }
            Expr::Compare(op, l, r) => {
                let sym = match op {
                    CmpOp::Eq => "==",
                    CmpOp::Ne => "!=",
                    CmpOp::Lt => "<",
                    CmpOp::Gt => ">",
                    CmpOp::Le => "<=",
                    CmpOp::Ge => ">=",
                };
                child(f, l, ADD)?;
                write!(f, " {sym} ")?;
                child(f, r, ADD)
            }
            Expr::Unary(UnaryOp::Neg, e) => {
                if matches!(**e, Expr::Int(_) | Expr::Float(_)) {
                    write!(f, "-({e})")
                } else {
                    f.write_str("-")?;
                    child(f, e, UNARY)
                }
            }
            Expr::Unary(UnaryOp::Not, e) => {
                f.write_str("not ")?;
                child(f, e, NOT)
            }
            Expr::Unary(op, e) => {
                let name = match op {
                    UnaryOp::Log => "log",
                    UnaryOp::Log2 => "log2",
                    UnaryOp::Ceiling => "ceiling",
                    UnaryOp::Floor => "floor",
                    UnaryOp::Neg | UnaryOp::Not => unreachable!(),
                };
                write!(f, "{name}({e})")
            }
            Expr::Pow { base, exponent } => {
                write!(f, "{base}**")?;
                child(f, exponent, UNARY)
            }
            Expr::Ref(n) => f.write_str(n),
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Float(v) => write!(f, "{v:?}"),
        }
    }
}

impl fmt::Display for IdxExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.matrix)?;
        for (i, e) in self.indices.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("]")
    }
}

fn write_range(out: &mut String, start: &Expr, end: &Expr, step: &Expr) -> fmt::Result {
    if *step == Expr::Int(1) {
        write!(out, "range({start}, {end})")
    } else {
        write!(out, "range({start}, {end}, {step})")
    }
}

fn write_stmts(out: &mut String, stmts: &[Stmt], depth: usize) -> fmt::Result {
    for s in stmts {
        write_stmt(out, s, depth)?;
    }
    Ok(())
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn write_stmt(out: &mut String, s: &Stmt, depth: usize) -> fmt::Result {
    match s {
        Stmt::Block(b) => return write_stmts(out, b, depth),
        Stmt::Call(c) => {
            indent(out, depth);
            for (i, o) in c.outputs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "{o}")?;
            }
            write!(out, " = {}(", c.kernel.name())?;
            let args =
                c.inputs.iter().map(|i| alloc::format!("{i}")).chain(c.scalars.iter().map(|s| alloc::format!("{s}")));
            for (i, a) in args.enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&a);
            }
            out.push_str(")\n");
        }
        Stmt::Assign { name, value } => {
            indent(out, depth);
            writeln!(out, "{name} = {value}")?;
        }
        Stmt::If { cond, then_body, else_body } => {
            indent(out, depth);
            writeln!(out, "if {cond}:")?;
            write_stmts(out, then_body, depth + 1)?;
            if let Some(e) = else_body {
                indent(out, depth);
                out.push_str("else:\n");
                write_stmts(out, e, depth + 1)?;
            }
        }
        Stmt::For(l) => {
            indent(out, depth);
            write!(out, "for {} in ", l.var)?;
            write_range(out, &l.start, &l.end, &l.step)?;
            out.push_str(":\n");
            write_stmts(out, &l.body, depth + 1)?;
        }
    }
    Ok(())
}

impl Program {
    /// Canonical `.lp` source. Parameter values are omitted when `with_values` is false.
    pub fn to_source(&self, with_values: bool) -> String {
        let mut out = String::new();
        // Writing into a String cannot fail.
        let _ = self.write_source(&mut out, with_values);
        out
    }

    fn write_source(&self, out: &mut String, with_values: bool) -> fmt::Result {
        writeln!(out, "program {}", self.name)?;
        for p in &self.params {
            match p.value {
                Some(v) if with_values => writeln!(out, "param {} = {v}", p.name)?,
                _ => writeln!(out, "param {}", p.name)?,
            }
        }
        for m in &self.matrices {
            writeln!(out, "matrix {}[{}] {}", m.name, m.arity, m.role.as_str())?;
        }
        write_stmts(out, &self.body, 0)?;
        for o in &self.outputs {
            write!(out, "output {}", o.tile)?;
            for r in &o.ranges {
                write!(out, " for {} in ", r.var)?;
                write_range(out, &r.start, &r.end, &r.step)?;
            }
            out.push('\n');
        }
        Ok(())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source(true))
    }
}
