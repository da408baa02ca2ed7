//! Input generation, output assembly and numerical checks per workload.

use std::collections::BTreeSet;

use lambdapack_core::kernels::{self, KernelError};
use lambdapack_core::lang::{enumerate_accesses, EnumError, UnboundParam};
use lambdapack_core::programs::{gen_cholesky, gen_gemm, gen_tsqr};
use lambdapack_core::tile::{assemble, partition, partition_rect, BigMatrix, TileError};
use lambdapack_core::{Binding, Program, Tile, TileRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Enumeration(#[from] EnumError),
    #[error(transparent)]
    Param(#[from] UnboundParam),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// Factor a `size`×`size` SPD matrix cut into `block`-sized tiles.
    Cholesky { size: usize, block: usize },
    /// R factor of a `rows`×`cols` matrix split into `leaves` row panels.
    Tsqr { rows: usize, cols: usize, leaves: usize },
    /// `grid`×`grid` output tiles, `inner` blocks along the shared dimension.
    Gemm { grid: usize, inner: usize, block: usize },
    /// Any program; inputs are random `block`×`block` tiles and nothing is checked.
    Custom { program: Program, params: Binding, block: usize },
}

/// Dense inputs kept for the numerical check.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Cholesky(Tile),
    Tsqr(Tile),
    Gemm(Tile, Tile),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Staged {
    pub inputs: Vec<(TileRef, Tile)>,
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub metric: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

pub const CHOLESKY_TOL: f64 = 1e-10;
pub const TSQR_TOL: f64 = 1e-10;
pub const GEMM_TOL: f64 = 1e-12;

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tile {
    Tile::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `M·Mᵀ + n·I` with `M` standard normal.
pub fn spd_matrix(n: usize, seed: u64) -> Tile {
    let m = normal(n, n, &mut ChaCha8Rng::seed_from_u64(seed));
    let mmt = kernels::matmul(&m, &m.transpose()).expect("square");
    Tile::from_fn(n, n, |i, j| mmt[(i, j)] + if i == j { n as f64 } else { 0.0 })
}

fn log2_exact(n: usize, what: &str) -> Result<i64, WorkloadError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(WorkloadError::Invalid(format!("{what} must be a power of two, got {n}")));
    }
    Ok(n.trailing_zeros() as i64)
}

fn positive(v: usize, what: &str) -> Result<(), WorkloadError> {
    if v == 0 {
        return Err(WorkloadError::Invalid(format!("{what} must be positive")));
    }
    Ok(())
}

fn rel(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

impl Workload {
    pub fn name(&self) -> &str {
        match self {
            Workload::Cholesky { .. } => "cholesky",
            Workload::Tsqr { .. } => "tsqr",
            Workload::Gemm { .. } => "gemm",
            Workload::Custom { program, .. } => &program.name,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            Workload::Cholesky { size, block } => {
                positive(size, "matrix size")?;
                positive(block, "block size")
            }
            Workload::Tsqr { rows, cols, leaves } => {
                positive(cols, "column count")?;
                log2_exact(leaves, "leaf count")?;
                if rows % leaves != 0 || rows / leaves < cols {
                    return Err(WorkloadError::Invalid(format!(
                        "{rows} rows do not split into {leaves} panels of at least {cols} rows"
                    )));
                }
                Ok(())
            }
            Workload::Gemm { grid, inner, block } => {
                positive(grid, "grid")?;
                positive(block, "block size")?;
                log2_exact(inner, "inner block count").map(|_| ())
            }
            Workload::Custom { block, .. } => positive(block, "block size"),
        }
    }

    /// Tiles per side of the Cholesky grid.
    fn cholesky_grid(size: usize, block: usize) -> usize {
        size.div_ceil(block)
    }

    pub fn program(&self) -> Program {
        match self {
            Workload::Cholesky { size, block } => gen_cholesky(Self::cholesky_grid(*size, *block) as i64),
            Workload::Tsqr { leaves, .. } => gen_tsqr(*leaves as i64),
            Workload::Gemm { grid, inner, .. } => gen_gemm(*grid as i64, *inner as i64),
            Workload::Custom { program, .. } => program.clone(),
        }
    }

    pub fn params(&self) -> Result<Binding, WorkloadError> {
        let overrides = match self {
            Workload::Custom { params, .. } => params.clone(),
            _ => Binding::new(),
        };
        Ok(self.program().bind_params(&overrides)?)
    }

    /// Generates the input tiles from `seed`.
    pub fn stage(&self, seed: u64) -> Result<Staged, WorkloadError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match *self {
            Workload::Cholesky { size, block } => {
                let a = spd_matrix(size, seed);
                let inputs = partition(&a, block)?
                    .into_iter()
                    .filter(|((r, c), _)| c <= r)
                    .map(|((r, c), t)| (TileRef::new("S", &[0, r as i64, c as i64]), t))
                    .collect();
                Staged { inputs, reference: Reference::Cholesky(a) }
            }
            Workload::Tsqr { rows, cols, leaves } => {
                let a = normal(rows, cols, &mut rng);
                let inputs = partition_rect(&a, rows / leaves, cols)?
                    .into_iter()
                    .map(|((i, _), t)| (TileRef::new("A", &[i as i64]), t))
                    .collect();
                Staged { inputs, reference: Reference::Tsqr(a) }
            }
            Workload::Gemm { grid, inner, block } => {
                let a = normal(grid * block, inner * block, &mut rng);
                let b = normal(inner * block, grid * block, &mut rng);
                let mut inputs = Vec::new();
                for (name, m) in [("A", &a), ("B", &b)] {
                    for ((i, j), t) in partition(m, block)? {
                        inputs.push((TileRef::new(name, &[i as i64, j as i64]), t));
                    }
                }
                Staged { inputs, reference: Reference::Gemm(a, b) }
            }
            Workload::Custom { ref program, ref params, block } => {
                let accesses = enumerate_accesses(program, params)?;
                let written: BTreeSet<TileRef> = accesses.iter().flat_map(|a| a.writes.iter().cloned()).collect();
                let read: BTreeSet<TileRef> = accesses.iter().flat_map(|a| a.reads.iter().cloned()).collect();
                let inputs = read.difference(&written).map(|t| (t.clone(), normal(block, block, &mut rng))).collect();
                Staged { inputs, reference: Reference::None }
            }
        })
    }

    /// Builds the dense result from output tiles fetched by `get`.
    pub fn assemble(
        &self,
        mut get: impl FnMut(&TileRef) -> Result<Tile, String>,
    ) -> Result<Option<Tile>, WorkloadError> {
        let fetch = |get: &mut dyn FnMut(&TileRef) -> Result<Tile, String>, t: TileRef| {
            get(&t).map_err(|e| WorkloadError::Invalid(format!("cannot fetch {t}: {e}")))
        };
        Ok(match *self {
            Workload::Cholesky { size, block } => {
                let shape = BigMatrix::new(size, size, block);
                let n = shape.grid_rows();
                let mut grid = Vec::with_capacity(n);
                for i in 0..n {
                    let mut row = Vec::with_capacity(n);
                    for j in 0..n {
                        row.push(if j <= i {
                            fetch(&mut get, TileRef::new("O", &[i as i64, j as i64]))?
                        } else {
                            let (r, c) = shape.tile_shape(i, j);
                            Tile::zeros(r, c)
                        });
                    }
                    grid.push(row);
                }
                Some(assemble(&grid)?)
            }
            Workload::Tsqr { leaves, .. } => {
                Some(fetch(&mut get, TileRef::new("R", &[0, log2_exact(leaves, "leaf count")?]))?)
            }
            Workload::Gemm { grid, inner, .. } => {
                let top = log2_exact(inner, "inner block count")?;
                let mut rows = Vec::with_capacity(grid);
                for i in 0..grid {
                    let mut row = Vec::with_capacity(grid);
                    for j in 0..grid {
                        row.push(fetch(&mut get, TileRef::new("P", &[i as i64, j as i64, 0, top]))?);
                    }
                    rows.push(row);
                }
                Some(assemble(&rows)?)
            }
            Workload::Custom { .. } => None,
        })
    }

    /// Relative error of `output` against the dense reference.
    pub fn check(&self, reference: &Reference, output: &Tile) -> Result<Option<CheckResult>, WorkloadError> {
        Ok(match reference {
            Reference::Cholesky(a) => {
                let llt = kernels::matmul(output, &output.transpose())?;
                Some(CheckResult {
                    metric: "|LL^T - A|_F / |A|_F",
                    error: rel(llt.frobenius_distance(a), a.frobenius_norm()),
                    tolerance: CHOLESKY_TOL,
                })
            }
            Reference::Tsqr(a) => {
                let ata = kernels::matmul(&a.transpose(), a)?;
                let rtr = kernels::matmul(&output.transpose(), output)?;
                Some(CheckResult {
                    metric: "|R^T R - A^T A|_F / |A^T A|_F",
                    error: rel(rtr.frobenius_distance(&ata), ata.frobenius_norm()),
                    tolerance: TSQR_TOL,
                })
            }
            Reference::Gemm(a, b) => {
                let c = kernels::matmul(a, b)?;
                Some(CheckResult {
                    metric: "|C - AB|_F / |AB|_F",
                    error: rel(output.frobenius_distance(&c), c.frobenius_norm()),
                    tolerance: GEMM_TOL,
                })
            }
            Reference::None => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lambdapack_core::lang::enumerate_nodes;

    #[test]
    fn spd_input_is_symmetric_and_seeded() {
        let a = spd_matrix(8, 3);
        assert_eq!(a, a.transpose());
        assert_eq!(a, spd_matrix(8, 3));
        assert_ne!(a, spd_matrix(8, 4));
        assert!(kernels::chol(&a).is_ok());
    }

    #[test]
    fn ragged_cholesky_staging() {
        let w = Workload::Cholesky { size: 10, block: 4 };
        let s = w.stage(1).unwrap();
        assert_eq!(s.inputs.len(), 6);
        assert_eq!(s.inputs.last().unwrap().1.shape(), (2, 2));
        assert_eq!(w.params().unwrap().get("N"), Some(3));
    }

    #[test]
    fn custom_inputs_are_unwritten_reads() {
        let w = Workload::Gemm { grid: 2, inner: 2, block: 3 };
        let custom = Workload::Custom { program: w.program(), params: w.params().unwrap(), block: 3 };
        let mut names: Vec<TileRef> = custom.stage(0).unwrap().inputs.into_iter().map(|(t, _)| t).collect();
        let mut expect: Vec<TileRef> = w.stage(0).unwrap().inputs.into_iter().map(|(t, _)| t).collect();
        names.sort();
        expect.sort();
        assert_eq!(names, expect);
        assert_eq!(enumerate_nodes(&w.program(), &w.params().unwrap()).unwrap().len(), 12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Workload::Tsqr { rows: 20, cols: 8, leaves: 4 }.validate().is_err());
        assert!(Workload::Tsqr { rows: 64, cols: 8, leaves: 3 }.validate().is_err());
        assert!(Workload::Gemm { grid: 2, inner: 3, block: 2 }.validate().is_err());
        assert!(Workload::Cholesky { size: 4, block: 0 }.validate().is_err());
    }

    #[test]
    fn check_detects_wrong_output() {
        let w = Workload::Cholesky { size: 4, block: 2 };
        let s = w.stage(0).unwrap();
        let Reference::Cholesky(a) = &s.reference else { panic!() };
        let good = w.check(&s.reference, &kernels::chol(a).unwrap()).unwrap().unwrap();
        assert!(good.passed(), "{good:?}");
        let bad = w.check(&s.reference, &Tile::identity(4)).unwrap().unwrap();
        assert!(!bad.passed());
    }
}
