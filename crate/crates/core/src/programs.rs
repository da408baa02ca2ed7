//! The shipped workload programs.

use crate::lang::{parse_program, Program};

pub const CHOLESKY_SRC: &str = include_str!("../programs/cholesky.lp");
pub const TSQR_SRC: &str = include_str!("../programs/tsqr.lp");
pub const GEMM_SRC: &str = include_str!("../programs/gemm.lp");

/// Line ids of the Cholesky program.
pub mod cholesky {
    pub const CHOL: usize = 0;
    pub const TRSM: usize = 1;
    pub const SYRK: usize = 2;
}

/// Line ids of the TSQR program.
pub mod tsqr {
    pub const LEAF: usize = 0;
    pub const MERGE: usize = 1;
}

/// Line ids of the GEMM program.
pub mod gemm {
    pub const MATMUL: usize = 0;
    pub const ADD: usize = 1;
}

fn builtin(src: &str) -> Program {
    parse_program(src).expect("shipped program parses")
}

/// Blocked Cholesky on a `b`×`b` tile grid.
pub fn gen_cholesky(b: i64) -> Program {
    builtin(CHOLESKY_SRC).with_params(&[("N", b)])
}

/// TSQR over `n` row blocks; `n` must be a power of two.
pub fn gen_tsqr(n: i64) -> Program {
    builtin(TSQR_SRC).with_params(&[("N", n)])
}

/// GEMM on a `b`×`b` output grid with `k` inner blocks; `k` must be a power of two.
pub fn gen_gemm(b: i64, k: i64) -> Program {
    builtin(GEMM_SRC).with_params(&[("N", b), ("K", k)])
}

/// Looks up a shipped program by name, without parameter values.
pub fn by_name(name: &str) -> Option<Program> {
    match name {
        "cholesky" => Some(builtin(CHOLESKY_SRC)),
        "tsqr" => Some(builtin(TSQR_SRC)),
        "gemm" => Some(builtin(GEMM_SRC)),
        _ => None,
    }
}
