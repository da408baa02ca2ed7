//! Affine forms of index expressions over exact rationals.

use alloc::collections::BTreeMap;
use alloc::string::String;

use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::lang::{eval, BinaryOp, Binding, DivMode, Expr, UnaryOp, Value};

pub type Q = Ratio<i128>;

/// `Σ coeff·var + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Affine {
    pub terms: BTreeMap<String, Q>,
    pub constant: Q,
}

impl Affine {
    pub fn constant(c: Q) -> Self {
        Self { terms: BTreeMap::new(), constant: c }
    }

    pub fn var(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(name.into(), Q::one());
        Self { terms, constant: Q::zero() }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, name: &str) -> Q {
        self.terms.get(name).copied().unwrap_or_else(Q::zero)
    }

    fn add(mut self, other: Affine, sign: i128) -> Affine {
        for (v, c) in other.terms {
            let e = self.terms.entry(v).or_insert_with(Q::zero);
            *e += c * sign;
        }
        self.terms.retain(|_, c| !c.is_zero());
        self.constant += other.constant * sign;
        self
    }

    fn scale(mut self, k: Q) -> Affine {
        if k.is_zero() {
            return Affine::default();
        }
        for c in self.terms.values_mut() {
            *c *= k;
        }
        self.constant *= k;
        self
    }
}

/// Outcome of classifying one index expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Extracted {
    Affine(Affine),
    /// Depends on an unknown in a way that is not affine (powers, logs,
    /// modulo, products of unknowns, opaque scalars).
    Nonlinear,
    /// A constant part fails to evaluate, so no binding can satisfy it.
    Invalid,
}

/// Affine form of `e` in the unknowns, with every name in `known` treated as
/// a constant. Constant subtrees are evaluated with index semantics, so
/// `2**level` becomes a number once `level` is known.
pub fn extract(e: &Expr, known: &Binding, is_unknown: &dyn Fn(&str) -> bool) -> Extracted {
    let mut has_unknown = false;
    let mut opaque = false;
    e.for_each_ref(&mut |n| {
        if !known.contains(n) {
            if is_unknown(n) {
                has_unknown = true;
            } else {
                opaque = true;
            }
        }
    });
    if opaque {
        return Extracted::Nonlinear;
    }
    if !has_unknown {
        return match eval(e, known, DivMode::Exact) {
            Ok(Value::Int(v)) => Extracted::Affine(Affine::constant(Q::from_integer(v as i128))),
            Ok(f @ Value::Float(_)) => match f.to_int() {
                Ok(v) => Extracted::Affine(Affine::constant(Q::from_integer(v as i128))),
                Err(_) => Extracted::Nonlinear,
            },
            Err(_) => Extracted::Invalid,
        };
    }
    let sub = |x: &Expr| extract(x, known, is_unknown);
    match e {
        Expr::Ref(n) => Extracted::Affine(Affine::var(n)),
        Expr::Unary(UnaryOp::Neg, x) => match sub(x) {
            Extracted::Affine(a) => Extracted::Affine(a.scale(-Q::one())),
            other => other,
        },
        Expr::Binary(op @ (BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div), l, r) => {
            let (l, r) = match (sub(l), sub(r)) {
                (Extracted::Invalid, _) | (_, Extracted::Invalid) => return Extracted::Invalid,
                (Extracted::Affine(l), Extracted::Affine(r)) => (l, r),
                _ => return Extracted::Nonlinear,
            };
            match op {
                BinaryOp::Add => Extracted::Affine(l.add(r, 1)),
                BinaryOp::Sub => Extracted::Affine(l.add(r, -1)),
                BinaryOp::Mul if l.is_constant() => Extracted::Affine(r.scale(l.constant)),
                BinaryOp::Mul if r.is_constant() => Extracted::Affine(l.scale(r.constant)),
                BinaryOp::Div if r.is_constant() => {
                    if r.constant.is_zero() {
                        Extracted::Invalid
                    } else {
                        Extracted::Affine(l.scale(r.constant.recip()))
                    }
                }
                _ => Extracted::Nonlinear,
            }
        }
        _ => Extracted::Nonlinear,
    }
}
