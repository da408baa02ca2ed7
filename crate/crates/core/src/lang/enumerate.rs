//! Brute-force walk of a program's iteration space.
//!
//! This is the reference the implicit analysis is tested against, and the
//! "materialize everything" baseline: cost grows with the full node count.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::ast::*;
use super::eval::{eval_int, DivMode, EvalError};

/// A concrete tile: matrix name plus integer index tuple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileRef {
    pub matrix: String,
    pub index: Vec<i64>,
}

impl TileRef {
    pub fn new(matrix: &str, index: &[i64]) -> Self {
        Self { matrix: matrix.into(), index: index.to_vec() }
    }
}

impl fmt::Display for TileRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.matrix)?;
        for (i, v) in self.index.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

/// A node together with the concrete tiles it reads and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeAccess {
    pub node: NodeRef,
    pub reads: Vec<TileRef>,
    pub writes: Vec<TileRef>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnumError {
    #[error(transparent)]
    UnboundParam(#[from] UnboundParam),
    #[error("loop over `{var}` has step 0")]
    ZeroStep { var: String },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Values taken by `range(start, end, step)`; half-open, empty when the step points away from `end`.
pub fn range_values(start: i64, end: i64, step: i64) -> impl Iterator<Item = i64> {
    let mut next = Some(start);
    core::iter::from_fn(move || {
        let v = next?;
        let more = if step > 0 { v < end } else { v > end };
        if step == 0 || !more {
            return None;
        }
        next = v.checked_add(step);
        Some(v)
    })
}

struct Walker<'a> {
    env: Binding,
    loop_vars: Vec<&'a str>,
    out: Vec<NodeAccess>,
}

impl<'a> Walker<'a> {
    fn tile(&self, ie: &IdxExpr) -> Result<TileRef, EnumError> {
        let index = ie.indices.iter().map(|e| eval_int(e, &self.env, DivMode::Exact)).collect::<Result<Vec<_>, _>>()?;
        Ok(TileRef { matrix: ie.matrix.clone(), index })
    }

    fn walk(&mut self, stmts: &'a [Stmt]) -> Result<(), EnumError> {
        let mut assigned: Vec<&str> = Vec::new();
        for s in stmts {
            match s {
                Stmt::Call(c) => {
                    let binding =
                        self.loop_vars.iter().map(|v| (*v, self.env.get(v).expect("loop var bound"))).collect();
                    let reads = c.inputs.iter().map(|i| self.tile(i)).collect::<Result<_, _>>()?;
                    let writes = c.outputs.iter().map(|o| self.tile(o)).collect::<Result<_, _>>()?;
                    self.out.push(NodeAccess { node: NodeRef::new(c.line, binding), reads, writes });
                }
                Stmt::Assign { name, value } => {
                    let v = eval_int(value, &self.env, DivMode::Floor)?;
                    self.env.insert(name, v);
                    assigned.push(name);
                }
                Stmt::Block(b) => self.walk(b)?,
                Stmt::If { cond, then_body, else_body } => {
                    if eval_int(cond, &self.env, DivMode::Floor)? != 0 {
                        self.walk(then_body)?;
                    } else if let Some(e) = else_body {
                        self.walk(e)?;
                    }
                }
                Stmt::For(l) => {
                    let start = eval_int(&l.start, &self.env, DivMode::Floor)?;
                    let end = eval_int(&l.end, &self.env, DivMode::Floor)?;
                    let step = eval_int(&l.step, &self.env, DivMode::Floor)?;
                    if step == 0 {
                        return Err(EnumError::ZeroStep { var: l.var.clone() });
                    }
                    self.loop_vars.push(&l.var);
                    for v in range_values(start, end, step) {
                        self.env.insert(&l.var, v);
                        self.walk(&l.body)?;
                    }
                    self.env.remove(&l.var);
                    self.loop_vars.pop();
                }
            }
        }
        for name in assigned {
            self.env.remove(name);
        }
        Ok(())
    }
}

/// Every node with its concrete tile accesses, in program order.
pub fn enumerate_accesses(p: &Program, params: &Binding) -> Result<Vec<NodeAccess>, EnumError> {
    let env = p.bind_params(params)?;
    let mut w = Walker { env, loop_vars: Vec::new(), out: Vec::new() };
    w.walk(&p.body)?;
    Ok(w.out)
}

/// Every `(line, binding)` node of the iteration space, in program order.
pub fn enumerate_nodes(p: &Program, params: &Binding) -> Result<Vec<NodeRef>, EnumError> {
    Ok(enumerate_accesses(p, params)?.into_iter().map(|a| a.node).collect())
}

/// A tile written by more than one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsaViolation {
    pub tile: TileRef,
    pub writers: Vec<NodeRef>,
}

impl fmt::Display for SsaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} written by", self.tile)?;
        for w in &self.writers {
            write!(f, " ({w})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("{} tile(s) written more than once", .0.len())]
    Violations(Vec<SsaViolation>),
    #[error(transparent)]
    Enumeration(#[from] EnumError),
}

/// Checks that every concrete tile is written by at most one node.
pub fn validate_ssa(p: &Program, params: &Binding) -> Result<(), ValidationError> {
    let mut writers: BTreeMap<TileRef, Vec<NodeRef>> = BTreeMap::new();
    for a in enumerate_accesses(p, params)? {
        for w in a.writes {
            writers.entry(w).or_default().push(a.node.clone());
        }
    }
    let violations: Vec<_> = writers
        .into_iter()
        .filter(|(_, w)| w.len() > 1)
        .map(|(tile, writers)| SsaViolation { tile, writers })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationError::Violations(violations))
    }
}

/// Tiles whose existence marks the run complete.
///
/// Uses the `output` declarations when present, otherwise every tile of an
/// `output`-role matrix that some node writes.
pub fn output_tiles(p: &Program, params: &Binding) -> Result<Vec<TileRef>, EnumError> {
    let env = p.bind_params(params)?;
    if p.outputs.is_empty() {
        let mut tiles: Vec<TileRef> = enumerate_accesses(p, params)?
            .into_iter()
            .flat_map(|a| a.writes)
            .filter(|t| p.matrix(&t.matrix).is_some_and(|m| m.role == Role::Output))
            .collect();
        tiles.sort();
        tiles.dedup();
        return Ok(tiles);
    }
    let mut out = Vec::new();
    for decl in &p.outputs {
        expand_output(decl, 0, &mut env.clone(), &mut out)?;
    }
    Ok(out)
}

fn expand_output(decl: &OutputDecl, depth: usize, env: &mut Binding, out: &mut Vec<TileRef>) -> Result<(), EnumError> {
    let Some(r) = decl.ranges.get(depth) else {
        let index =
            decl.tile.indices.iter().map(|e| eval_int(e, env, DivMode::Exact)).collect::<Result<Vec<_>, _>>()?;
        out.push(TileRef { matrix: decl.tile.matrix.clone(), index });
        return Ok(());
    };
    let start = eval_int(&r.start, env, DivMode::Floor)?;
    let end = eval_int(&r.end, env, DivMode::Floor)?;
    let step = eval_int(&r.step, env, DivMode::Floor)?;
    if step == 0 {
        return Err(EnumError::ZeroStep { var: r.var.clone() });
    }
    for v in range_values(start, end, step) {
        env.insert(&r.var, v);
        expand_output(decl, depth + 1, env, out)?;
    }
    env.remove(&r.var);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;
    use crate::programs::{gen_cholesky, gen_tsqr};

    #[test]
    fn ranges() {
        assert_eq!(range_values(0, 4, 1).collect::<Vec<_>>(), [0, 1, 2, 3]);
        assert_eq!(range_values(0, 8, 4).collect::<Vec<_>>(), [0, 4]);
        assert_eq!(range_values(3, 0, -1).collect::<Vec<_>>(), [3, 2, 1]);
        assert_eq!(range_values(0, 3, -1).count(), 0);
        assert_eq!(range_values(2, 2, 1).count(), 0);
        assert_eq!(range_values(i64::MAX - 1, i64::MAX, 5).collect::<Vec<_>>(), [i64::MAX - 1]);
    }

    #[test]
    fn node_counts() {
        let p = Binding::new();
        assert_eq!(enumerate_nodes(&gen_cholesky(2), &p).unwrap().len(), 4);
        for b in 1..=8i64 {
            let closed = b + b * (b - 1) / 2 + (b * b * b - b) / 6;
            assert_eq!(enumerate_nodes(&gen_cholesky(b), &p).unwrap().len() as i64, closed);
        }
        assert_eq!(enumerate_nodes(&gen_tsqr(4), &p).unwrap().len(), 7);
    }

    #[test]
    fn ssa() {
        assert!(validate_ssa(&gen_cholesky(4), &Binding::new()).is_ok());
        assert!(validate_ssa(&gen_tsqr(4), &Binding::new()).is_ok());
        let twice = parse_program(
            "program twice\nparam N = 2\nmatrix S[3] input\nmatrix O[2] output\n\
             for i in range(0, N):\n    O[i, i] = chol(S[i, i, i])\n\
             for i2 in range(0, N):\n    O[i2, i2] = chol(S[i2, i2, i2])\n",
        )
        .unwrap();
        let Err(ValidationError::Violations(v)) = validate_ssa(&twice, &Binding::new()) else { panic!() };
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].tile, TileRef::new("O", &[0, 0]));
        assert_eq!(v[0].writers.len(), 2);
        let unbound =
            parse_program("program u\nparam N\nmatrix A[1] input\nfor i in range(0, N):\n    A[i] = chol(A[i])\n")
                .unwrap();
        assert!(matches!(
            validate_ssa(&unbound, &Binding::new()),
            Err(ValidationError::Enumeration(EnumError::UnboundParam(_)))
        ));
    }

    #[test]
    fn zero_step() {
        let p =
            parse_program("program z\nmatrix A[1] input\nfor i in range(0, 4, 0):\n    A[i] = chol(A[i])\n").unwrap();
        assert!(matches!(enumerate_nodes(&p, &Binding::new()), Err(EnumError::ZeroStep { .. })));
    }

    #[test]
    fn declared_outputs() {
        let out = output_tiles(&gen_cholesky(2), &Binding::new()).unwrap();
        assert_eq!(out, [TileRef::new("O", &[0, 0]), TileRef::new("O", &[1, 0]), TileRef::new("O", &[1, 1])]);
        assert_eq!(output_tiles(&gen_tsqr(8), &Binding::new()).unwrap(), [TileRef::new("R", &[0, 3])]);
    }
}
