//! Implicit-DAG queries.
//!
//! The task graph is never built. To find who reads a tile, every kernel-call
//! input with a matching matrix name is equated with the concrete index and
//! the resulting system is solved for the enclosing loop variables. Variables
//! the equations leave open are enumerated over their loop range, outermost
//! first. Every candidate is then re-checked against the iteration space and
//! by evaluating the index expression under the candidate binding.

mod affine;
mod solve;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

pub use affine::{extract, Affine, Extracted, Q};
pub use solve::{solve_index_system, CandidateSolution, IndexSystem, SolveStatus};

use crate::kernels::Kernel;
use crate::lang::{
    eval_int, range_values, BinaryOp, Binding, DivMode, EvalError, Expr, IdxExpr, LineId, NodeRef, Program, Stmt,
    TileRef, UnboundParam,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    UnboundParam(#[from] UnboundParam),
    #[error("unknown matrix `{0}`")]
    UnknownMatrix(String),
    #[error("matrix `{matrix}` has {expected} indices, got {found}")]
    Arity { matrix: String, expected: usize, found: usize },
    #[error("no kernel call with line id {0}")]
    UnknownLine(LineId),
    #[error("node {0} is outside the iteration space")]
    InvalidNode(NodeRef),
    #[error("tile {tile} has {} writers", writers.len())]
    MultipleWriters { tile: TileRef, writers: Vec<NodeRef> },
    #[error("index evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Who produces a tile.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Writer {
    Node(NodeRef),
    /// No node writes the tile; it must be supplied before the run.
    InitialInput,
}

#[derive(Debug, Clone)]
enum Scope {
    Loop { var: String, start: Expr, end: Expr, step: Expr },
    Assign { name: String, value: Expr },
    Guard { cond: Expr, holds: bool },
}

#[derive(Debug, Clone)]
struct LineInfo {
    kernel: Kernel,
    scope: Vec<Scope>,
    loop_vars: Vec<String>,
    inputs: Vec<IdxExpr>,
    outputs: Vec<IdxExpr>,
    /// The same accesses with scalar assignments inlined, for solving.
    inputs_sym: Vec<IdxExpr>,
    outputs_sym: Vec<IdxExpr>,
}

fn has_div(e: &Expr) -> bool {
    match e {
        Expr::Binary(BinaryOp::Div, _, _) => true,
        Expr::Binary(_, l, r) | Expr::Compare(_, l, r) => has_div(l) || has_div(r),
        Expr::Unary(_, x) => has_div(x),
        Expr::Pow { exponent, .. } => has_div(exponent),
        Expr::Ref(_) | Expr::Int(_) | Expr::Float(_) => false,
    }
}

/// Inlines assignments so the solver sees loop variables directly.
/// Assignments using division keep their name (floor semantics differ from
/// index semantics), which makes the equation opaque to the solver; such
/// lines fall back to enumeration.
fn inline(ie: &IdxExpr, scope: &[Scope]) -> IdxExpr {
    let mut out = ie.clone();
    for s in scope.iter().rev() {
        if let Scope::Assign { name, value } = s {
            if !has_div(value) {
                let mut m = BTreeMap::new();
                m.insert(name.clone(), value.clone());
                out.indices = out.indices.iter().map(|e| e.substitute(&m)).collect();
            }
        }
    }
    out
}

fn collect(stmts: &[Stmt], scope: &mut Vec<Scope>, out: &mut BTreeMap<LineId, LineInfo>) {
    let depth = scope.len();
    for s in stmts {
        match s {
            Stmt::Call(c) => {
                let loop_vars = scope
                    .iter()
                    .filter_map(|s| match s {
                        Scope::Loop { var, .. } => Some(var.clone()),
                        _ => None,
                    })
                    .collect();
                out.insert(
                    c.line,
                    LineInfo {
                        kernel: c.kernel,
                        scope: scope.clone(),
                        loop_vars,
                        inputs_sym: c.inputs.iter().map(|i| inline(i, scope)).collect(),
                        outputs_sym: c.outputs.iter().map(|o| inline(o, scope)).collect(),
                        inputs: c.inputs.clone(),
                        outputs: c.outputs.clone(),
                    },
                );
            }
            Stmt::Assign { name, value } => scope.push(Scope::Assign { name: name.clone(), value: value.clone() }),
            Stmt::Block(b) => collect(b, scope, out),
            Stmt::If { cond, then_body, else_body } => {
                scope.push(Scope::Guard { cond: cond.clone(), holds: true });
                collect(then_body, scope, out);
                scope.pop();
                if let Some(e) = else_body {
                    scope.push(Scope::Guard { cond: cond.clone(), holds: false });
                    collect(e, scope, out);
                    scope.pop();
                }
            }
            Stmt::For(l) => {
                scope.push(Scope::Loop {
                    var: l.var.clone(),
                    start: l.start.clone(),
                    end: l.end.clone(),
                    step: l.step.clone(),
                });
                collect(&l.body, scope, out);
                scope.pop();
            }
        }
    }
    scope.truncate(depth);
}

fn in_range(v: i64, start: i64, end: i64, step: i64) -> bool {
    match step {
        0 => false,
        s if s > 0 => start <= v && v < end && (v - start) % s == 0,
        s => end < v && v <= start && (start - v) % -s == 0,
    }
}

fn bounds(start: &Expr, end: &Expr, step: &Expr, env: &Binding) -> Option<(i64, i64, i64)> {
    Some((
        eval_int(start, env, DivMode::Floor).ok()?,
        eval_int(end, env, DivMode::Floor).ok()?,
        eval_int(step, env, DivMode::Floor).ok()?,
    ))
}

#[derive(Clone, Copy)]
enum Access {
    Read,
    Write,
}

/// Dependency queries for one program under fixed parameter values.
#[derive(Debug, Clone)]
pub struct Analyzer {
    program: Program,
    params: Binding,
    lines: BTreeMap<LineId, LineInfo>,
}

impl Analyzer {
    /// `params` overrides the program's own parameter values.
    pub fn new(program: &Program, params: &Binding) -> Result<Self, AnalysisError> {
        let params = program.bind_params(params)?;
        let mut lines = BTreeMap::new();
        collect(&program.body, &mut Vec::new(), &mut lines);
        Ok(Self { program: program.clone(), params, lines })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn params(&self) -> &Binding {
        &self.params
    }

    pub fn kernel(&self, line: LineId) -> Option<Kernel> {
        self.lines.get(&line).map(|l| l.kernel)
    }

    /// Loop variables enclosing `line`, outermost first.
    pub fn loop_vars(&self, line: LineId) -> Option<&[String]> {
        self.lines.get(&line).map(|l| l.loop_vars.as_slice())
    }

    /// Evaluation environment of a node, or `None` if the binding lies
    /// outside the iteration space (loop bounds, steps and guards, checked
    /// outside-in).
    fn env_for(&self, line: LineId, b: &Binding) -> Option<Binding> {
        let info = self.lines.get(&line)?;
        if b.len() != info.loop_vars.len() || !info.loop_vars.iter().all(|v| b.contains(v)) {
            return None;
        }
        let mut env = self.params.clone();
        for s in &info.scope {
            match s {
                Scope::Loop { var, start, end, step } => {
                    let (lo, hi, st) = bounds(start, end, step, &env)?;
                    let v = b.get(var)?;
                    if !in_range(v, lo, hi, st) {
                        return None;
                    }
                    env.insert(var, v);
                }
                Scope::Assign { name, value } => {
                    let v = eval_int(value, &env, DivMode::Floor).ok()?;
                    env.insert(name, v);
                }
                Scope::Guard { cond, holds } => {
                    let v = eval_int(cond, &env, DivMode::Floor).ok()?;
                    if (v != 0) != *holds {
                        return None;
                    }
                }
            }
        }
        Some(env)
    }

    /// Whether `b` is a point of the iteration space of `line`.
    pub fn verify_binding(&self, line: LineId, b: &Binding) -> bool {
        self.env_for(line, b).is_some()
    }

    fn tile(ie: &IdxExpr, env: &Binding) -> Result<TileRef, EvalError> {
        let index = ie.indices.iter().map(|e| eval_int(e, env, DivMode::Exact)).collect::<Result<_, _>>()?;
        Ok(TileRef { matrix: ie.matrix.clone(), index })
    }

    fn node_env(&self, n: &NodeRef) -> Result<(&LineInfo, Binding), AnalysisError> {
        let info = self.lines.get(&n.line).ok_or(AnalysisError::UnknownLine(n.line))?;
        let env = self.env_for(n.line, &n.binding).ok_or_else(|| AnalysisError::InvalidNode(n.clone()))?;
        Ok((info, env))
    }

    /// Concrete tiles a node reads, in argument order.
    pub fn node_inputs(&self, n: &NodeRef) -> Result<Vec<TileRef>, AnalysisError> {
        let (info, env) = self.node_env(n)?;
        Ok(info.inputs.iter().map(|i| Self::tile(i, &env)).collect::<Result<_, _>>()?)
    }

    /// Concrete tiles a node writes.
    pub fn node_outputs(&self, n: &NodeRef) -> Result<Vec<TileRef>, AnalysisError> {
        let (info, env) = self.node_env(n)?;
        Ok(info.outputs.iter().map(|o| Self::tile(o, &env)).collect::<Result<_, _>>()?)
    }

    fn check_tile(&self, matrix: &str, idx: &[i64]) -> Result<(), AnalysisError> {
        let decl = self.program.matrix(matrix).ok_or_else(|| AnalysisError::UnknownMatrix(matrix.into()))?;
        if decl.arity != idx.len() {
            return Err(AnalysisError::Arity { matrix: matrix.into(), expected: decl.arity, found: idx.len() });
        }
        Ok(())
    }

    fn matching(&self, matrix: &str, idx: &[i64], access: Access) -> Vec<NodeRef> {
        let mut out = Vec::new();
        for (&line, info) in &self.lines {
            let (raw, sym) = match access {
                Access::Read => (&info.inputs, &info.inputs_sym),
                Access::Write => (&info.outputs, &info.outputs_sym),
            };
            for (r, s) in raw.iter().zip(sym) {
                if r.matrix == matrix {
                    self.search(line, info, r, s, idx, Binding::new(), &mut out);
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        line: LineId,
        info: &LineInfo,
        raw: &IdxExpr,
        sym: &IdxExpr,
        idx: &[i64],
        fixed: Binding,
        out: &mut Vec<NodeRef>,
    ) {
        let sys = IndexSystem {
            unknowns: info.loop_vars.iter().filter(|v| !fixed.contains(v)).cloned().collect(),
            equations: sym.indices.iter().cloned().zip(idx.iter().copied()).collect(),
            context: self.params.merged(&fixed),
        };
        let sol = solve_index_system(&sys);
        let partial = fixed.merged(&sol.binding);
        match sol.status {
            SolveStatus::None => {}
            SolveStatus::Unique => {
                if let Some(env) = self.env_for(line, &partial) {
                    if Self::tile(raw, &env).is_ok_and(|t| t.index == idx) {
                        out.push(NodeRef::new(line, partial));
                    }
                }
            }
            SolveStatus::Underdetermined => {
                // Walk outside-in to the first open loop variable, pruning on
                // anything already known to be out of range.
                let mut env = self.params.clone();
                for s in &info.scope {
                    match s {
                        Scope::Loop { var, start, end, step } => {
                            let Some((lo, hi, st)) = bounds(start, end, step, &env) else { return };
                            match partial.get(var) {
                                Some(v) => {
                                    if !in_range(v, lo, hi, st) {
                                        return;
                                    }
                                    env.insert(var, v);
                                }
                                None => {
                                    for v in range_values(lo, hi, st) {
                                        let mut next = partial.clone();
                                        next.insert(var, v);
                                        self.search(line, info, raw, sym, idx, next, out);
                                    }
                                    return;
                                }
                            }
                        }
                        Scope::Assign { name, value } => {
                            let Ok(v) = eval_int(value, &env, DivMode::Floor) else { return };
                            env.insert(name, v);
                        }
                        Scope::Guard { cond, holds } => match eval_int(cond, &env, DivMode::Floor) {
                            Ok(v) if (v != 0) == *holds => {}
                            _ => return,
                        },
                    }
                }
            }
        }
    }

    /// Every node that takes `matrix[idx]` as an input.
    pub fn find_readers(&self, matrix: &str, idx: &[i64]) -> Result<Vec<NodeRef>, AnalysisError> {
        self.check_tile(matrix, idx)?;
        Ok(self.matching(matrix, idx, Access::Read))
    }

    /// The unique node writing `matrix[idx]`, or [`Writer::InitialInput`].
    pub fn find_writer(&self, matrix: &str, idx: &[i64]) -> Result<Writer, AnalysisError> {
        self.check_tile(matrix, idx)?;
        let mut w = self.matching(matrix, idx, Access::Write);
        match w.len() {
            0 => Ok(Writer::InitialInput),
            1 => Ok(Writer::Node(w.pop().unwrap())),
            _ => Err(AnalysisError::MultipleWriters { tile: TileRef::new(matrix, idx), writers: w }),
        }
    }

    /// Nodes reading any tile that `n` writes, sorted.
    pub fn children_of(&self, n: &NodeRef) -> Result<Vec<NodeRef>, AnalysisError> {
        let mut out = Vec::new();
        for t in self.node_outputs(n)? {
            out.extend(self.find_readers(&t.matrix, &t.index)?);
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Nodes writing any tile that `n` reads, sorted. Program inputs are omitted.
    pub fn parents_of(&self, n: &NodeRef) -> Result<Vec<NodeRef>, AnalysisError> {
        let mut out = Vec::new();
        for t in self.node_inputs(n)? {
            if let Writer::Node(w) = self.find_writer(&t.matrix, &t.index)? {
                out.push(w);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

pub fn find_readers(p: &Program, params: &Binding, matrix: &str, idx: &[i64]) -> Result<Vec<NodeRef>, AnalysisError> {
    Analyzer::new(p, params)?.find_readers(matrix, idx)
}

pub fn find_writer(p: &Program, params: &Binding, matrix: &str, idx: &[i64]) -> Result<Writer, AnalysisError> {
    Analyzer::new(p, params)?.find_writer(matrix, idx)
}

pub fn children_of(p: &Program, params: &Binding, n: &NodeRef) -> Result<Vec<NodeRef>, AnalysisError> {
    Analyzer::new(p, params)?.children_of(n)
}

pub fn parents_of(p: &Program, params: &Binding, n: &NodeRef) -> Result<Vec<NodeRef>, AnalysisError> {
    Analyzer::new(p, params)?.parents_of(n)
}

pub fn verify_binding(p: &Program, line: LineId, b: &Binding, params: &Binding) -> Result<bool, AnalysisError> {
    Ok(Analyzer::new(p, params)?.verify_binding(line, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::programs::{cholesky, gen_cholesky, gen_tsqr, tsqr};

    fn b(pairs: &[(&str, i64)]) -> Binding {
        pairs.iter().copied().collect()
    }

    fn node(line: LineId, pairs: &[(&str, i64)]) -> NodeRef {
        NodeRef::new(line, b(pairs))
    }

    #[test]
    fn cholesky_queries() {
        let a = Analyzer::new(&gen_cholesky(4), &Binding::new()).unwrap();
        assert_eq!(a.find_readers("S", &[1, 1, 1]).unwrap(), [node(cholesky::CHOL, &[("i", 1)])]);
        assert_eq!(
            a.find_writer("S", &[1, 1, 1]).unwrap(),
            Writer::Node(node(cholesky::SYRK, &[("i", 0), ("j", 1), ("k", 1)]))
        );
        assert_eq!(a.find_writer("S", &[0, 2, 1]).unwrap(), Writer::InitialInput);
        assert_eq!(a.find_writer("O", &[0, 0]).unwrap(), Writer::Node(node(cholesky::CHOL, &[("i", 0)])));
        assert!(a.find_readers("O", &[3, 3]).unwrap().is_empty());
        assert!(!a.verify_binding(cholesky::TRSM, &b(&[("i", 2), ("j", 1)])));
        assert!(matches!(a.find_readers("Q", &[0]), Err(AnalysisError::UnknownMatrix(_))));
        assert!(matches!(a.find_readers("O", &[0]), Err(AnalysisError::Arity { .. })));
    }

    #[test]
    fn cholesky_two_block_edges() {
        let a = Analyzer::new(&gen_cholesky(2), &Binding::new()).unwrap();
        let chol0 = node(cholesky::CHOL, &[("i", 0)]);
        let trsm = node(cholesky::TRSM, &[("i", 0), ("j", 1)]);
        let syrk = node(cholesky::SYRK, &[("i", 0), ("j", 1), ("k", 1)]);
        let chol1 = node(cholesky::CHOL, &[("i", 1)]);
        assert_eq!(a.children_of(&chol0).unwrap(), core::slice::from_ref(&trsm));
        assert_eq!(a.children_of(&syrk).unwrap(), core::slice::from_ref(&chol1));
        assert!(a.parents_of(&chol0).unwrap().is_empty());
        assert_eq!(a.parents_of(&trsm).unwrap(), [chol0]);
        assert_eq!(a.parents_of(&chol1).unwrap(), [syrk]);
    }

    #[test]
    fn tsqr_step_rejection() {
        let a = Analyzer::new(&gen_tsqr(8), &Binding::new()).unwrap();
        assert_eq!(a.find_readers("R", &[6, 1]).unwrap(), [node(tsqr::MERGE, &[("i", 4), ("level", 1)])]);
        assert!(!a.verify_binding(tsqr::MERGE, &b(&[("i", 6), ("level", 1)])));
        assert!(a.verify_binding(tsqr::MERGE, &b(&[("i", 4), ("level", 1)])));
        let a4 = Analyzer::new(&gen_tsqr(4), &Binding::new()).unwrap();
        assert!(a4.children_of(&node(tsqr::MERGE, &[("i", 0), ("level", 1)])).unwrap().is_empty());
    }

    #[test]
    fn invalid_nodes() {
        let a = Analyzer::new(&gen_cholesky(2), &Binding::new()).unwrap();
        assert!(matches!(a.children_of(&node(9, &[])), Err(AnalysisError::UnknownLine(9))));
        assert!(matches!(a.children_of(&node(0, &[("i", 5)])), Err(AnalysisError::InvalidNode(_))));
        assert!(matches!(a.children_of(&node(0, &[("i", 0), ("z", 0)])), Err(AnalysisError::InvalidNode(_))));
    }
}
