//! Exact solution of index equation systems.
//!
//! Affine equations are reduced with Gauss-Jordan elimination over the
//! rationals. Every variable pinned to an integer is substituted back, which
//! may turn nonlinear equations (`i + 2**level = 6`) into affine ones; the
//! process repeats until nothing new is determined.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::{One, Zero};

use super::affine::{extract, Extracted, Q};
use crate::lang::{Binding, Expr};

/// Equations `index_expr = value`, one per tile dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSystem {
    pub unknowns: Vec<String>,
    pub equations: Vec<(Expr, i64)>,
    /// Values of parameters and already-fixed variables.
    pub context: Binding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Unique,
    None,
    Underdetermined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSolution {
    /// Values of the unknowns that were determined; total when `Unique`.
    pub binding: Binding,
    pub status: SolveStatus,
}

impl CandidateSolution {
    fn none() -> Self {
        Self { binding: Binding::new(), status: SolveStatus::None }
    }
}

/// Reduces `rows` (coefficients then right-hand side) in place to reduced
/// row echelon form. Returns false if a row reads `0 = c` with `c ≠ 0`.
fn rref(rows: &mut [Vec<Q>], cols: usize) -> bool {
    let mut pivot_row = 0;
    for c in 0..cols {
        let Some(p) = (pivot_row..rows.len()).find(|&r| !rows[r][c].is_zero()) else {
            continue;
        };
        rows.swap(pivot_row, p);
        let inv = rows[pivot_row][c].recip();
        for v in rows[pivot_row].iter_mut() {
            *v *= inv;
        }
        let pivot = rows[pivot_row].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != pivot_row && !row[c].is_zero() {
                let f = row[c];
                for (x, p) in row.iter_mut().zip(&pivot) {
                    *x -= *p * f;
                }
            }
        }
        pivot_row += 1;
    }
    rows.iter().all(|row| !(row[..cols].iter().all(Q::is_zero) && !row[cols].is_zero()))
}

pub fn solve_index_system(sys: &IndexSystem) -> CandidateSolution {
    let mut known = sys.context.clone();
    let mut solved = Binding::new();
    loop {
        let free: Vec<&str> = sys.unknowns.iter().map(String::as_str).filter(|u| !solved.contains(u)).collect();
        let is_unknown = |n: &str| free.contains(&n);
        let mut rows = Vec::new();
        for (e, v) in &sys.equations {
            match extract(e, &known, &is_unknown) {
                Extracted::Invalid => return CandidateSolution::none(),
                Extracted::Nonlinear => {}
                Extracted::Affine(a) => {
                    let rhs = Q::from_integer(*v as i128) - a.constant;
                    if a.is_constant() {
                        if !rhs.is_zero() {
                            return CandidateSolution::none();
                        }
                        continue;
                    }
                    let mut row: Vec<Q> = free.iter().map(|u| a.coeff(u)).collect();
                    row.push(rhs);
                    rows.push(row);
                }
            }
        }
        if !rref(&mut rows, free.len()) {
            return CandidateSolution::none();
        }
        let mut progressed = false;
        for row in &rows {
            let mut nz = row[..free.len()].iter().enumerate().filter(|(_, c)| !c.is_zero());
            let (Some((col, c)), None) = (nz.next(), nz.next()) else { continue };
            debug_assert!(c.is_one());
            let value = row[free.len()];
            if !value.is_integer() {
                return CandidateSolution::none();
            }
            let Ok(v) = i64::try_from(value.to_integer()) else {
                return CandidateSolution::none();
            };
            known.insert(free[col], v);
            solved.insert(free[col], v);
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    let status = if sys.unknowns.iter().all(|u| solved.contains(u)) {
        SolveStatus::Unique
    } else {
        SolveStatus::Underdetermined
    };
    CandidateSolution { binding: solved, status }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_expr;

    fn system(unknowns: &[&str], eqs: &[(&str, i64)], ctx: &[(&str, i64)]) -> IndexSystem {
        IndexSystem {
            unknowns: unknowns.iter().map(|s| String::from(*s)).collect(),
            equations: eqs.iter().map(|(e, v)| (parse_expr(e).unwrap(), *v)).collect(),
            context: ctx.iter().copied().collect(),
        }
    }

    #[test]
    fn inverted_update_write() {
        let s = solve_index_system(&system(&["i", "j", "k"], &[("i + 1", 1), ("j", 1), ("k", 1)], &[]));
        assert_eq!(s.status, SolveStatus::Unique);
        assert_eq!(s.binding, [("i", 0), ("j", 1), ("k", 1)].into_iter().collect());
    }

    #[test]
    fn power_term_resolved_after_substitution() {
        let s = solve_index_system(&system(&["i", "level"], &[("i + 2**level", 6), ("level", 1)], &[]));
        assert_eq!(s.status, SolveStatus::Unique);
        assert_eq!(s.binding, [("i", 4), ("level", 1)].into_iter().collect());
    }

    #[test]
    fn inconsistent_and_fractional() {
        let s = solve_index_system(&system(&["i"], &[("i", 3), ("i", 4)], &[]));
        assert_eq!(s.status, SolveStatus::None);
        let s = solve_index_system(&system(&["i"], &[("2 * i", 3)], &[]));
        assert_eq!(s.status, SolveStatus::None);
        let s = solve_index_system(&system(&["i"], &[("N", 3)], &[("N", 4)]));
        assert_eq!(s.status, SolveStatus::None);
    }

    #[test]
    fn coupled_equations() {
        let s = solve_index_system(&system(&["i", "j"], &[("i + j", 5), ("i - j", 1)], &[]));
        assert_eq!(s.binding, [("i", 3), ("j", 2)].into_iter().collect());
        assert_eq!(s.status, SolveStatus::Unique);
    }

    #[test]
    fn free_variable_left_open() {
        let s = solve_index_system(&system(&["i", "j", "k"], &[("j", 2), ("i", 0)], &[]));
        assert_eq!(s.status, SolveStatus::Underdetermined);
        assert_eq!(s.binding, [("i", 0), ("j", 2)].into_iter().collect());
        let s = solve_index_system(&system(&["i", "level"], &[("i + 2**level", 6)], &[]));
        assert_eq!(s.status, SolveStatus::Underdetermined);
        assert!(s.binding.is_empty());
    }
}
