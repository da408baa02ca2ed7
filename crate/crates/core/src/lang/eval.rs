use alloc::string::String;
use core::fmt;

use super::ast::{BinaryOp, Binding, CmpOp, Expr, UnaryOp};

/// Result of evaluating a scalar expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(v) => v as f64,
            Value::Float(v) => v,
        }
    }

    fn truthy(self) -> bool {
        match self {
            Value::Int(v) => v != 0,
            Value::Float(v) => v != 0.0,
        }
    }

    /// Integer view; floats must be integral and in range.
    pub fn to_int(self) -> Result<i64, EvalError> {
        match self {
            Value::Int(v) => Ok(v),
            Value::Float(v) => {
                if libm::trunc(v) == v && v >= i64::MIN as f64 && v < i64::MAX as f64 {
                    Ok(v as i64)
                } else {
                    Err(EvalError::NonIntegral(v))
                }
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
        }
    }
}

/// How integer division behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivMode {
    /// Tile indices: integer division must be exact.
    Exact,
    /// Loop bounds, guards and scalar assignments: floor division.
    Floor,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("integer overflow")]
    Overflow,
    #[error("{0} is not an integer")]
    NonIntegral(f64),
    #[error("{0} / {1} is not exact in an index expression")]
    InexactDivision(i64, i64),
    #[error("logarithm of non-positive value {0}")]
    LogDomain(f64),
}

/// Evaluates `e` with floor-division semantics for integers.
pub fn eval_scalar(e: &Expr, b: &Binding) -> Result<Value, EvalError> {
    eval(e, b, DivMode::Floor)
}

/// Evaluates `e` to an integer under the given division mode.
pub fn eval_int(e: &Expr, b: &Binding, mode: DivMode) -> Result<i64, EvalError> {
    eval(e, b, mode)?.to_int()
}

pub fn eval(e: &Expr, b: &Binding, mode: DivMode) -> Result<Value, EvalError> {
    Ok(match e {
        Expr::Int(v) => Value::Int(*v),
        Expr::Float(v) => Value::Float(*v),
        Expr::Ref(name) => Value::Int(b.get(name).ok_or_else(|| EvalError::Unbound(name.clone()))?),
        Expr::Pow { base, exponent } => {
            let x = eval(exponent, b, mode)?;
            match x {
                Value::Int(k) if k >= 0 => {
                    let k = u32::try_from(k).map_err(|_| EvalError::Overflow)?;
                    Value::Int(base.checked_pow(k).ok_or(EvalError::Overflow)?)
                }
                _ => Value::Float(libm::pow(*base as f64, x.as_f64())),
            }
        }
        Expr::Unary(op, inner) => {
            let v = eval(inner, b, mode)?;
            unary(*op, v)?
        }
        Expr::Compare(op, l, r) => {
            let l = eval(l, b, mode)?;
            let r = eval(r, b, mode)?;
            let ord = match (l, r) {
                (Value::Int(x), Value::Int(y)) => x.partial_cmp(&y),
                _ => l.as_f64().partial_cmp(&r.as_f64()),
            };
            use core::cmp::Ordering::*;
            let t = match (op, ord) {
                (_, None) => matches!(op, CmpOp::Ne),
                (CmpOp::Eq, Some(o)) => o == Equal,
                (CmpOp::Ne, Some(o)) => o != Equal,
                (CmpOp::Lt, Some(o)) => o == Less,
                (CmpOp::Gt, Some(o)) => o == Greater,
                (CmpOp::Le, Some(o)) => o != Greater,
                (CmpOp::Ge, Some(o)) => o != Less,
            };
            Value::Int(t as i64)
        }
        Expr::Binary(BinaryOp::And, l, r) => {
            Value::Int((eval(l, b, mode)?.truthy() && eval(r, b, mode)?.truthy()) as i64)
        }
        Expr::Binary(BinaryOp::Or, l, r) => {
            Value::Int((eval(l, b, mode)?.truthy() || eval(r, b, mode)?.truthy()) as i64)
        }
        Expr::Binary(op, l, r) => {
            let l = eval(l, b, mode)?;
            let r = eval(r, b, mode)?;
            binary(*op, l, r, mode)?
        }
    })
}

fn unary(op: UnaryOp, v: Value) -> Result<Value, EvalError> {
    Ok(match (op, v) {
        (UnaryOp::Neg, Value::Int(x)) => Value::Int(x.checked_neg().ok_or(EvalError::Overflow)?),
        (UnaryOp::Neg, Value::Float(x)) => Value::Float(-x),
        (UnaryOp::Not, v) => Value::Int(!v.truthy() as i64),
        (UnaryOp::Log2, Value::Int(x)) if x > 0 && (x as u64).is_power_of_two() => {
            Value::Int(x.trailing_zeros() as i64)
        }
        (UnaryOp::Log2, v) => {
            let x = v.as_f64();
            if x <= 0.0 {
                return Err(EvalError::LogDomain(x));
            }
            Value::Float(libm::log2(x))
        }
        (UnaryOp::Log, v) => {
            let x = v.as_f64();
            if x <= 0.0 {
                return Err(EvalError::LogDomain(x));
            }
            Value::Float(libm::log(x))
        }
        (UnaryOp::Ceiling, Value::Int(x)) | (UnaryOp::Floor, Value::Int(x)) => Value::Int(x),
        (UnaryOp::Ceiling, Value::Float(x)) => Value::Int(Value::Float(libm::ceil(x)).to_int()?),
        (UnaryOp::Floor, Value::Float(x)) => Value::Int(Value::Float(libm::floor(x)).to_int()?),
    })
}

fn binary(op: BinaryOp, l: Value, r: Value, mode: DivMode) -> Result<Value, EvalError> {
    if let (Value::Int(x), Value::Int(y)) = (l, r) {
        let v = match op {
            BinaryOp::Add => x.checked_add(y),
            BinaryOp::Sub => x.checked_sub(y),
            BinaryOp::Mul => x.checked_mul(y),
            BinaryOp::Div => {
                if y == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                if mode == DivMode::Exact && x % y != 0 {
                    return Err(EvalError::InexactDivision(x, y));
                }
                floor_div(x, y)
            }
            BinaryOp::Mod => {
                if y == 0 {
                    return Err(EvalError::DivisionByZero);
                }
                floor_div(x, y).and_then(|q| q.checked_mul(y)).and_then(|p| x.checked_sub(p))
            }
            BinaryOp::And | BinaryOp::Or => unreachable!("short-circuit ops handled by caller"),
        };
        return v.map(Value::Int).ok_or(EvalError::Overflow);
    }
    let (x, y) = (l.as_f64(), r.as_f64());
    Ok(Value::Float(match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => {
            if y == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            x / y
        }
        BinaryOp::Mod => {
            if y == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            x - y * libm::floor(x / y)
        }
        BinaryOp::And | BinaryOp::Or => unreachable!("short-circuit ops handled by caller"),
    }))
}

fn floor_div(x: i64, y: i64) -> Option<i64> {
    let q = x.checked_div(y)?;
    if (x % y != 0) && ((x < 0) != (y < 0)) {
        q.checked_sub(1)
    } else {
        Some(q)
    }
}
