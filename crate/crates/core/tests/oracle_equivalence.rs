//! The implicit analysis against brute-force enumeration of the whole DAG.

mod common;

use std::collections::BTreeSet;

use common::{random_program, BruteDag};
use lambdapack_core::analysis::{AnalysisError, Analyzer, Writer};
use lambdapack_core::lang::{parse_program, validate_ssa, Binding, Program};
use lambdapack_core::programs::{gen_cholesky, gen_gemm, gen_tsqr};
use proptest::prelude::*;

/// Checks readers and writers of every tile the program touches.
fn check_tile_queries(p: &Program) {
    let a = Analyzer::new(p, &Binding::new()).unwrap();
    let dag = BruteDag::new(p, &Binding::new());
    for t in dag.tiles() {
        let expect: Vec<_> = dag.readers.get(&t).into_iter().flatten().cloned().collect();
        let got = a.find_readers(&t.matrix, &t.index).unwrap();
        assert_eq!(got, expect, "readers of {t}\n{}", p.to_source(true));
        for n in &got {
            assert!(a.verify_binding(n.line, &n.binding));
        }
        let writers: Vec<_> = dag.writers.get(&t).into_iter().flatten().cloned().collect();
        match (a.find_writer(&t.matrix, &t.index), writers.len()) {
            (Ok(Writer::InitialInput), 0) => {}
            (Ok(Writer::Node(n)), 1) => assert_eq!(n, writers[0], "writer of {t}"),
            (Err(AnalysisError::MultipleWriters { writers: w, .. }), k) if k > 1 => assert_eq!(w, writers),
            (got, _) => panic!("writer of {t}: got {got:?}, expected {writers:?}\n{}", p.to_source(true)),
        }
    }
}

/// Checks the edge set and parent/child duality. Requires single assignment.
fn check_edges(p: &Program) {
    let a = Analyzer::new(p, &Binding::new()).unwrap();
    let dag = BruteDag::new(p, &Binding::new());
    let mut implicit = BTreeSet::new();
    let mut reverse = BTreeSet::new();
    for acc in &dag.accesses {
        for c in a.children_of(&acc.node).unwrap() {
            implicit.insert((acc.node.clone(), c));
        }
        for q in a.parents_of(&acc.node).unwrap() {
            reverse.insert((q, acc.node.clone()));
        }
    }
    let oracle = dag.edges();
    assert_eq!(implicit, oracle, "children_of edge set\n{}", p.to_source(true));
    assert_eq!(reverse, oracle, "parents_of edge set\n{}", p.to_source(true));
}

#[test]
fn cholesky_grids() {
    for b in 1..=8 {
        let p = gen_cholesky(b);
        check_tile_queries(&p);
        check_edges(&p);
    }
}

#[test]
fn tsqr_leaf_counts() {
    for n in [1, 2, 4, 8, 16] {
        let p = gen_tsqr(n);
        check_tile_queries(&p);
        check_edges(&p);
    }
}

#[test]
fn gemm_grids() {
    for (b, k) in [(1, 1), (2, 1), (2, 2), (3, 2), (4, 4), (2, 8)] {
        let p = gen_gemm(b, k);
        check_tile_queries(&p);
        check_edges(&p);
    }
}

const MIXED: &str = "\
program mixed
param N = 4
matrix A[2] input
matrix B[2] intermediate
matrix C[2] output
for i in range(0, N):
    for j in range(0, N):
        if i <= j:
            B[i, j] = chol(A[i, j])
        else:
            B[i, j] = add(A[i, j], A[j, i])
for i in range(N - 1, -1, -1):
    h = i / 2
    C[i, 0] = matmul(B[h, i], B[i % 2, N - 1 - i])
    for k in range(1, 3):
        s = k + i
        C[i, k] = add(C[i, k - 1], B[s % N, 2 * i / 2])
";

#[test]
fn guards_assignments_and_reverse_loops() {
    for n in 1..=5 {
        let p = parse_program(MIXED).unwrap().with_params(&[("N", n)]);
        validate_ssa(&p, &Binding::new()).unwrap();
        check_tile_queries(&p);
        check_edges(&p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_programs(seed in any::<u64>()) {
        let p = parse_program(&random_program(seed)).unwrap();
        check_tile_queries(&p);
        if validate_ssa(&p, &Binding::new()).is_ok() {
            check_edges(&p);
        }
    }
}
