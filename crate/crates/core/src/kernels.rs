//! Dense tile kernels. All arithmetic is f64 in a fixed loop order, so equal
//! inputs give bit-identical outputs.

use alloc::vec::Vec;

use crate::tile::Tile;

/// Relative tolerance for the symmetry precondition of [`chol`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("{kernel}: expected a square tile, got {rows}x{cols}")]
    NotSquare { kernel: &'static str, rows: usize, cols: usize },
    #[error("chol: tile is not symmetric (|a_ij - a_ji| = {0:e})")]
    NotSymmetric(f64),
    #[error("chol: tile is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("trsm: zero diagonal entry at {index}")]
    SingularTriangular { index: usize },
    #[error("{kernel}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { kernel: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("qr_factor: need rows >= cols, got {rows}x{cols}")]
    TooFewRows { rows: usize, cols: usize },
    #[error("qr_factor: merge input is not upper triangular")]
    NotUpperTriangular,
    #[error("{kernel}: called with {got} inputs")]
    Arity { kernel: &'static str, got: usize },
}

/// The closed set of kernels a program may call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Chol,
    Trsm,
    Syrk,
    QrFactor,
    Matmul,
    Add,
}

impl Kernel {
    pub const ALL: [Kernel; 6] =
        [Kernel::Chol, Kernel::Trsm, Kernel::Syrk, Kernel::QrFactor, Kernel::Matmul, Kernel::Add];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Chol => "chol",
            Kernel::Trsm => "trsm",
            Kernel::Syrk => "syrk",
            Kernel::QrFactor => "qr_factor",
            Kernel::Matmul => "matmul",
            Kernel::Add => "add",
        }
    }

    pub fn from_name(name: &str) -> Option<Kernel> {
        Kernel::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Whether a call with this many tile and scalar inputs is well formed.
    pub fn accepts(self, tiles: usize, scalars: usize) -> bool {
        scalars == 0
            && match self {
                Kernel::Chol => tiles == 1,
                Kernel::Trsm | Kernel::Matmul | Kernel::Add => tiles == 2,
                Kernel::Syrk => tiles == 3,
                Kernel::QrFactor => tiles == 1 || tiles == 2,
            }
    }

    pub fn output_count(self) -> usize {
        1
    }

    /// Output shape for the given input shapes, checking conformance.
    pub fn output_shape(self, shapes: &[(usize, usize)]) -> Result<(usize, usize), KernelError> {
        let arity = |n: usize| {
            if shapes.len() == n {
                Ok(())
            } else {
                Err(KernelError::Arity { kernel: self.name(), got: shapes.len() })
            }
        };
        let mismatch = |a, b| KernelError::ShapeMismatch { kernel: self.name(), lhs: a, rhs: b };
        match self {
            Kernel::Chol => {
                arity(1)?;
                let (r, c) = shapes[0];
                if r != c {
                    return Err(KernelError::NotSquare { kernel: "chol", rows: r, cols: c });
                }
                Ok((r, c))
            }
            Kernel::Trsm => {
                arity(2)?;
                let (l, a) = (shapes[0], shapes[1]);
                if l.0 != l.1 {
                    return Err(KernelError::NotSquare { kernel: "trsm", rows: l.0, cols: l.1 });
                }
                if a.1 != l.0 {
                    return Err(mismatch(l, a));
                }
                Ok(a)
            }
            Kernel::Syrk => {
                arity(3)?;
                let (s, x, y) = (shapes[0], shapes[1], shapes[2]);
                if x.1 != y.1 {
                    return Err(mismatch(x, y));
                }
                if s != (x.0, y.0) {
                    return Err(mismatch(s, (x.0, y.0)));
                }
                Ok(s)
            }
            Kernel::QrFactor => match shapes {
                [(r, c)] if r < c => Err(KernelError::TooFewRows { rows: *r, cols: *c }),
                [(_, c)] => Ok((*c, *c)),
                [a, b] => {
                    if a.0 != a.1 {
                        return Err(KernelError::NotSquare { kernel: "qr_factor", rows: a.0, cols: a.1 });
                    }
                    if a != b {
                        return Err(mismatch(*a, *b));
                    }
                    Ok(*a)
                }
                _ => Err(KernelError::Arity { kernel: "qr_factor", got: shapes.len() }),
            },
            Kernel::Matmul => {
                arity(2)?;
                let (a, b) = (shapes[0], shapes[1]);
                if a.1 != b.0 {
                    return Err(mismatch(a, b));
                }
                Ok((a.0, b.1))
            }
            Kernel::Add => {
                arity(2)?;
                if shapes[0] != shapes[1] {
                    return Err(mismatch(shapes[0], shapes[1]));
                }
                Ok(shapes[0])
            }
        }
    }

    pub fn apply(self, inputs: &[&Tile]) -> Result<Tile, KernelError> {
        let shapes: Vec<_> = inputs.iter().map(|t| t.shape()).collect();
        self.output_shape(&shapes)?;
        match (self, inputs) {
            (Kernel::Chol, [a]) => chol(a),
            (Kernel::Trsm, [l, a]) => trsm(l, a),
            (Kernel::Syrk, [s, x, y]) => syrk(s, x, y),
            (Kernel::QrFactor, [a]) => qr_leaf(a),
            (Kernel::QrFactor, [r1, r2]) => qr_merge(r1, r2),
            (Kernel::Matmul, [a, b]) => matmul(a, b),
            (Kernel::Add, [a, b]) => add(a, b),
            _ => Err(KernelError::Arity { kernel: self.name(), got: inputs.len() }),
        }
    }

    /// Nominal floating-point operation count for the given input shapes.
    pub fn flops(self, shapes: &[(usize, usize)]) -> u64 {
        let f = |x: usize| x as u64;
        match (self, shapes) {
            (Kernel::Chol, [(n, _)]) => f(*n) * f(*n) * f(*n) / 3,
            (Kernel::Trsm, [(n, _), (m, _)]) => f(*m) * f(*n) * f(*n),
            (Kernel::Syrk, [(m, p), (_, q), _]) => 2 * f(*m) * f(*p) * f(*q),
            (Kernel::QrFactor, [(m, n)]) => 2 * f(*m) * f(*n) * f(*n),
            (Kernel::QrFactor, [(n, _), _]) => 4 * f(*n) * f(*n) * f(*n),
            (Kernel::Matmul, [(m, k), (_, n)]) => 2 * f(*m) * f(*k) * f(*n),
            (Kernel::Add, [(m, n), _]) => f(*m) * f(*n),
            _ => 0,
        }
    }
}

/// Lower-triangular `L` with positive diagonal such that `L·Lᵀ = A`.
pub fn chol(a: &Tile) -> Result<Tile, KernelError> {
    let (n, c) = a.shape();
    if n != c {
        return Err(KernelError::NotSquare { kernel: "chol", rows: n, cols: c });
    }
    let scale = a.max_abs();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            let d = (a[(i, j)] - a[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(KernelError::NotSymmetric(worst));
    }

    let mut l = Tile::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // NaN fails this comparison too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(d > 0.0) {
            return Err(KernelError::NotPositiveDefinite { pivot: j });
        }
        let djj = libm::sqrt(d);
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `X·Lᵀ = A` for `X`, i.e. `X = A·L⁻ᵀ`, with `L` lower triangular.
///
/// Only the lower triangle of `L` is read. This is the panel update of a
/// right-looking blocked Cholesky: `L_ji = A_ji · L_ii⁻ᵀ`.
pub fn trsm(l: &Tile, a: &Tile) -> Result<Tile, KernelError> {
    let n = l.rows();
    Kernel::Trsm.output_shape(&[l.shape(), a.shape()])?;
    for i in 0..n {
        if l[(i, i)] == 0.0 {
            return Err(KernelError::SingularTriangular { index: i });
        }
    }
    let m = a.rows();
    let mut x = Tile::zeros(m, n);
    for r in 0..m {
        for c in 0..n {
            let mut s = a[(r, c)];
            for k in 0..c {
                s -= x[(r, k)] * l[(c, k)];
            }
            x[(r, c)] = s / l[(c, c)];
        }
    }
    Ok(x)
}

/// `S − X·Yᵀ`, accumulated per entry before the single subtraction.
pub fn syrk(s: &Tile, x: &Tile, y: &Tile) -> Result<Tile, KernelError> {
    Kernel::Syrk.output_shape(&[s.shape(), x.shape(), y.shape()])?;
    let q = x.cols();
    Ok(Tile::from_fn(s.rows(), s.cols(), |a, b| {
        let mut acc = 0.0;
        for k in 0..q {
            acc += x[(a, k)] * y[(b, k)];
        }
        s[(a, b)] - acc
    }))
}

pub fn matmul(a: &Tile, b: &Tile) -> Result<Tile, KernelError> {
    Kernel::Matmul.output_shape(&[a.shape(), b.shape()])?;
    let k = a.cols();
    Ok(Tile::from_fn(a.rows(), b.cols(), |r, c| {
        let mut acc = 0.0;
        for i in 0..k {
            acc += a[(r, i)] * b[(i, c)];
        }
        acc
    }))
}

pub fn add(a: &Tile, b: &Tile) -> Result<Tile, KernelError> {
    Kernel::Add.output_shape(&[a.shape(), b.shape()])?;
    Ok(Tile::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)] + b[(r, c)]))
}

/// Upper-triangular `R` of a Householder QR of `A` (rows ≥ cols), with
/// non-negative diagonal. `Q` is not formed.
pub fn qr_leaf(a: &Tile) -> Result<Tile, KernelError> {
    let (m, n) = a.shape();
    if m < n {
        return Err(KernelError::TooFewRows { rows: m, cols: n });
    }
    let mut w = a.clone();
    let mut v = alloc::vec![0.0; m];
    for k in 0..n {
        let mut tail = 0.0;
        for i in k + 1..m {
            tail += w[(i, k)] * w[(i, k)];
        }
        if tail == 0.0 {
            // Column already reduced; reflecting would only flip signs.
            continue;
        }
        let x0 = w[(k, k)];
        let norm = libm::sqrt(x0 * x0 + tail);
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        v[k] = x0 - alpha;
        for i in k + 1..m {
            v[i] = w[(i, k)];
        }
        let vtv = v[k] * v[k] + tail;
        for j in k..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * w[(i, j)];
            }
            let f = 2.0 * dot / vtv;
            for i in k..m {
                w[(i, j)] -= f * v[i];
            }
        }
        w[(k, k)] = alpha;
        for i in k + 1..m {
            w[(i, k)] = 0.0;
        }
    }
    let mut r = Tile::from_fn(n, n, |i, j| if j >= i { w[(i, j)] } else { 0.0 });
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in i..n {
                r[(i, j)] = -r[(i, j)];
            }
        }
    }
    Ok(r)
}

/// `R` factor of `[R1; R2]` for two upper-triangular tiles of equal size.
pub fn qr_merge(r1: &Tile, r2: &Tile) -> Result<Tile, KernelError> {
    Kernel::QrFactor.output_shape(&[r1.shape(), r2.shape()])?;
    let n = r1.rows();
    for t in [r1, r2] {
        for i in 0..n {
            for j in 0..i {
                if t[(i, j)] != 0.0 {
                    return Err(KernelError::NotUpperTriangular);
                }
            }
        }
    }
    let stacked = Tile::from_fn(2 * n, n, |i, j| if i < n { r1[(i, j)] } else { r2[(i - n, j)] });
    qr_leaf(&stacked)
}
