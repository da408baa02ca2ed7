mod common;

use lambdapack_core::lang::{
    enumerate_nodes, eval_scalar, parse_expr, parse_program, BinaryOp, Binding, CmpOp, Expr, Program, UnaryOp, Value,
};
use lambdapack_core::programs::{gen_cholesky, gen_gemm, gen_tsqr, CHOLESKY_SRC};
use proptest::prelude::*;

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-1_000_000i64..1_000_000).prop_map(Expr::Int),
        (-1e6f64..1e6).prop_map(Expr::Float),
        prop::sample::select(vec!["i", "j", "level", "N"]).prop_map(Expr::var),
    ];
    leaf.prop_recursive(4, 32, 2, |inner| {
        let bin = prop::sample::select(vec![
            BinaryOp::Add,
            BinaryOp::Sub,
            BinaryOp::Mul,
            BinaryOp::Div,
            BinaryOp::Mod,
            BinaryOp::And,
            BinaryOp::Or,
        ]);
        let cmp = prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge]);
        let un = prop::sample::select(vec![
            UnaryOp::Neg,
            UnaryOp::Not,
            UnaryOp::Log,
            UnaryOp::Ceiling,
            UnaryOp::Floor,
            UnaryOp::Log2,
        ]);
        prop_oneof![
            (bin, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            (cmp, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::compare(op, l, r)),
            (un, inner.clone()).prop_map(|(op, e)| Expr::unary(op, e)),
            (0i64..5, inner).prop_map(|(b, e)| Expr::pow(b, e)),
        ]
    })
}

proptest! {
    #[test]
    fn expression_print_parse_identity(e in arb_expr()) {
        let printed = e.to_string();
        let back = parse_expr(&printed).unwrap_or_else(|err| panic!("{printed}: {err}"));
        prop_assert_eq!(back, e, "{}", printed);
    }

    #[test]
    fn program_print_parse_identity(seed in any::<u64>()) {
        let p = parse_program(&common::random_program(seed)).unwrap();
        prop_assert_eq!(parse_program(&p.to_source(true)).unwrap(), p.clone());
        prop_assert_eq!(Program::from_bytes(&p.to_bytes()).unwrap(), p);
    }

    #[test]
    fn evaluation_survives_printing(e in arb_expr(), i in -5i64..5, j in -5i64..5) {
        let b: Binding = [("i", i), ("j", j), ("level", 2), ("N", 8)].into_iter().collect();
        let back = parse_expr(&e.to_string()).unwrap();
        match (eval_scalar(&e, &b), eval_scalar(&back, &b)) {
            (Ok(Value::Float(x)), Ok(Value::Float(y))) => prop_assert!(x == y || (x.is_nan() && y.is_nan())),
            (x, y) => prop_assert_eq!(x, y),
        }
    }
}

#[test]
fn shipped_programs_round_trip() {
    for p in [gen_cholesky(4), gen_tsqr(8), gen_gemm(2, 4)] {
        assert_eq!(parse_program(&p.to_source(true)).unwrap(), p);
        assert_eq!(parse_program(&p.to_source(false)).unwrap().with_params(&[]).calls().len(), p.calls().len());
    }
}

#[test]
fn worked_expression_values() {
    let e = |s: &str, b: &[(&str, i64)]| eval_scalar(&parse_expr(s).unwrap(), &b.iter().copied().collect()).unwrap();
    assert_eq!(e("log2(8)", &[]), Value::Int(3));
    assert_eq!(e("2**(level + 1)", &[("level", 1)]), Value::Int(4));
    assert_eq!(e("i + 2**level", &[("i", 4), ("level", 1)]), Value::Int(6));
}

#[test]
fn program_size_is_independent_of_grid() {
    let images: Vec<_> = [4, 8, 16, 32].iter().map(|&b| gen_cholesky(b)).collect();
    let base = images[0].to_bytes();
    let ranges = images[0].param_value_ranges();
    for p in &images {
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), base.len());
        assert_eq!(p.param_value_ranges(), ranges);
        for (k, (x, y)) in bytes.iter().zip(&base).enumerate() {
            if !ranges.iter().any(|r| r.contains(&k)) {
                assert_eq!(x, y, "byte {k}");
            }
        }
        assert_eq!(&Program::from_bytes(&bytes).unwrap(), p);
    }
}

#[test]
fn decode_rejects_garbage() {
    let bytes = gen_tsqr(4).to_bytes();
    assert!(Program::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Program::from_bytes(b"LPPROG02").is_err());
    assert!(Program::from_bytes(&[]).is_err());
}

#[test]
fn node_count_closed_forms() {
    for b in 1..=8i64 {
        let n = enumerate_nodes(&gen_cholesky(b), &Binding::new()).unwrap().len() as i64;
        assert_eq!(n, b + b * (b - 1) / 2 + (b * b * b - b) / 6);
    }
    for n in [1i64, 2, 4, 8, 16] {
        assert_eq!(enumerate_nodes(&gen_tsqr(n), &Binding::new()).unwrap().len() as i64, 2 * n - 1);
    }
    assert_eq!(parse_program(CHOLESKY_SRC).unwrap().line_count(), 3);
}
