//! Syntax tree for tiled single-assignment programs.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::kernels::Kernel;

/// Identifies one kernel-call statement. Assigned in source order starting at 0.
pub type LineId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
    Log,
    Ceiling,
    Floor,
    Log2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

/// Scalar expression over loop variables, parameters and assigned scalars.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Ref(String),
    Int(i64),
    Float(f64),
    /// `base ** exponent` with a literal, non-negative base.
    Pow {
        base: i64,
        exponent: Box<Expr>,
    },
}

impl Expr {
    pub fn var(name: &str) -> Self {
        Expr::Ref(name.into())
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Self {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn compare(op: CmpOp, l: Expr, r: Expr) -> Self {
        Expr::Compare(op, Box::new(l), Box::new(r))
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    pub fn pow(base: i64, exponent: Expr) -> Self {
        Expr::Pow { base, exponent: Box::new(exponent) }
    }

    /// Calls `f` on every variable reference in the expression.
    pub fn for_each_ref<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Binary(_, l, r) | Expr::Compare(_, l, r) => {
                l.for_each_ref(f);
                r.for_each_ref(f);
            }
            Expr::Unary(_, e) => e.for_each_ref(f),
            Expr::Pow { exponent, .. } => exponent.for_each_ref(f),
            Expr::Ref(name) => f(name),
            Expr::Int(_) | Expr::Float(_) => {}
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        let mut found = false;
        self.for_each_ref(&mut |r| found |= r == name);
        found
    }

    /// Replaces references found in `subst` by the mapped expressions.
    pub fn substitute(&self, subst: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Binary(op, l, r) => Expr::binary(*op, l.substitute(subst), r.substitute(subst)),
            Expr::Compare(op, l, r) => Expr::compare(*op, l.substitute(subst), r.substitute(subst)),
            Expr::Unary(op, e) => Expr::unary(*op, e.substitute(subst)),
            Expr::Pow { base, exponent } => Expr::pow(*base, exponent.substitute(subst)),
            Expr::Ref(name) => subst.get(name).cloned().unwrap_or_else(|| self.clone()),
            Expr::Int(_) | Expr::Float(_) => self.clone(),
        }
    }
}

/// A symbolic tile reference such as `S[i, j, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxExpr {
    pub matrix: String,
    pub indices: Vec<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Input,
    Intermediate,
    Output,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Input => "input",
            Role::Intermediate => "intermediate",
            Role::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixDecl {
    pub name: String,
    pub arity: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    /// Default value; runtime bindings override it.
    pub value: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCall {
    pub line: LineId,
    pub kernel: Kernel,
    pub outputs: Vec<IdxExpr>,
    pub inputs: Vec<IdxExpr>,
    pub scalars: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForLoop {
    pub var: String,
    pub start: Expr,
    pub end: Expr,
    pub step: Expr,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Call(KernelCall),
    Assign { name: String, value: Expr },
    Block(Vec<Stmt>),
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Option<Vec<Stmt>> },
    For(ForLoop),
}

/// A range clause in an `output` declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRange {
    pub var: String,
    pub start: Expr,
    pub end: Expr,
    pub step: Expr,
}

/// Tiles that mark the run as complete once they all exist.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDecl {
    pub tile: IdxExpr,
    pub ranges: Vec<OutputRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub name: String,
    pub params: Vec<Param>,
    pub matrices: Vec<MatrixDecl>,
    pub body: Vec<Stmt>,
    pub outputs: Vec<OutputDecl>,
}

impl Program {
    pub fn matrix(&self, name: &str) -> Option<&MatrixDecl> {
        self.matrices.iter().find(|m| m.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Kernel calls in line-id order.
    pub fn calls(&self) -> Vec<&KernelCall> {
        fn walk<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a KernelCall>) {
            for s in stmts {
                match s {
                    Stmt::Call(c) => out.push(c),
                    Stmt::Assign { .. } => {}
                    Stmt::Block(b) => walk(b, out),
                    Stmt::If { then_body, else_body, .. } => {
                        walk(then_body, out);
                        if let Some(e) = else_body {
                            walk(e, out);
                        }
                    }
                    Stmt::For(f) => walk(&f.body, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }

    pub fn call(&self, line: LineId) -> Option<&KernelCall> {
        self.calls().into_iter().find(|c| c.line == line)
    }

    pub fn line_count(&self) -> usize {
        self.calls().len()
    }

    /// Sets parameter defaults, e.g. the block-grid dimension.
    pub fn with_params(mut self, values: &[(&str, i64)]) -> Self {
        for (name, v) in values {
            if let Some(p) = self.params.iter_mut().find(|p| p.name == *name) {
                p.value = Some(*v);
            }
        }
        self
    }

    /// Merges parameter defaults with `overrides`; every parameter must end up bound.
    pub fn bind_params(&self, overrides: &Binding) -> Result<Binding, UnboundParam> {
        let mut b = Binding::new();
        for p in &self.params {
            match overrides.get(&p.name).or(p.value) {
                Some(v) => b.insert(&p.name, v),
                None => return Err(UnboundParam(p.name.clone())),
            }
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parameter `{0}` has no value")]
pub struct UnboundParam(pub String);

/// Values of named integer variables (loop variables or parameters).
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Binding(BTreeMap<String, i64>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.0.get(name).copied()
    }

    pub fn insert(&mut self, name: &str, value: i64) {
        self.0.insert(name.into(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<i64> {
        self.0.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Entries of `self` overlaid by `other`.
    pub fn merged(&self, other: &Binding) -> Binding {
        let mut b = self.clone();
        for (k, v) in other.iter() {
            b.insert(k, v);
        }
        b
    }
}

impl<'a> FromIterator<(&'a str, i64)> for Binding {
    fn from_iter<T: IntoIterator<Item = (&'a str, i64)>>(iter: T) -> Self {
        let mut b = Binding::new();
        for (k, v) in iter {
            b.insert(k, v);
        }
        b
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// One dynamic task: a kernel-call line together with the values of its enclosing loop variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub line: LineId,
    pub binding: Binding,
}

impl NodeRef {
    pub fn new(line: LineId, binding: Binding) -> Self {
        Self { line, binding }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.binding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed node `{0}`, expected `line:var=val,...`")]
pub struct NodeParseError(pub String);

impl core::str::FromStr for NodeRef {
    type Err = NodeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || NodeParseError(s.into());
        let (line, rest) = s.trim().split_once(':').ok_or_else(err)?;
        let line = line.trim().parse().map_err(|_| err())?;
        let mut binding = Binding::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(err)?;
            let k = k.trim();
            if k.is_empty() || binding.contains(k) {
                return Err(err());
            }
            binding.insert(k, v.trim().parse().map_err(|_| err())?);
        }
        Ok(NodeRef { line, binding })
    }
}
