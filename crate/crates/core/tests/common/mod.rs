#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use lambdapack_core::lang::{enumerate_accesses, Binding, NodeAccess, NodeRef, Program, TileRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The full DAG built by scanning every node's reads against every node's writes.
pub struct BruteDag {
    pub accesses: Vec<NodeAccess>,
    pub readers: BTreeMap<TileRef, BTreeSet<NodeRef>>,
    pub writers: BTreeMap<TileRef, BTreeSet<NodeRef>>,
}

impl BruteDag {
    pub fn new(p: &Program, params: &Binding) -> Self {
        let accesses = enumerate_accesses(p, params).expect("enumerable");
        let mut readers: BTreeMap<TileRef, BTreeSet<NodeRef>> = BTreeMap::new();
        let mut writers: BTreeMap<TileRef, BTreeSet<NodeRef>> = BTreeMap::new();
        for a in &accesses {
            for t in &a.reads {
                readers.entry(t.clone()).or_default().insert(a.node.clone());
            }
            for t in &a.writes {
                writers.entry(t.clone()).or_default().insert(a.node.clone());
            }
        }
        Self { accesses, readers, writers }
    }

    /// All `(parent, child)` pairs: child reads a tile the parent writes.
    pub fn edges(&self) -> BTreeSet<(NodeRef, NodeRef)> {
        let mut out = BTreeSet::new();
        for a in &self.accesses {
            for t in &a.reads {
                for w in self.writers.get(t).into_iter().flatten() {
                    out.insert((w.clone(), a.node.clone()));
                }
            }
        }
        out
    }

    pub fn tiles(&self) -> BTreeSet<TileRef> {
        self.readers.keys().chain(self.writers.keys()).cloned().collect()
    }
}

fn affine_index(rng: &mut ChaCha8Rng, vars: &[String]) -> String {
    if !vars.is_empty() {
        let v = &vars[rng.random_range(0..vars.len())];
        match rng.random_range(0..10) {
            0 => return format!("{v} % 2"),
            1 => return format!("2**{v} + {}", rng.random_range(0..3)),
            _ => {}
        }
    }
    let mut terms = Vec::new();
    for v in vars {
        match rng.random_range(0..6) {
            0 => terms.push(format!("-{v}")),
            1 | 2 => terms.push(v.clone()),
            3 => terms.push(format!("5 * {v}")),
            _ => {}
        }
    }
    terms.push(rng.random_range(-1..3).to_string());
    terms.join(" + ")
}

/// `v0 + 5 * v1 + 25 * v2 ...`, injective for loop ranges below 5.
fn injective_index(vars: &[String]) -> String {
    let mut terms = vec!["0".to_string()];
    let mut k = 1;
    for v in vars {
        terms.push(format!("{k} * {v}"));
        k *= 5;
    }
    terms.join(" + ")
}

/// Source text of a random two-dimensional program over `X` (input), `Y`
/// and `Z`, with affine, modular and power-of-two indices, guards,
/// assignments and loops of varying direction and stride. Not necessarily
/// single-assignment.
pub fn random_program(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let mut src =
        format!("program rnd\nparam N = {n}\nmatrix X[2] input\nmatrix Y[2] intermediate\nmatrix Z[2] output\n");
    let mut next_var = 0;
    let mut sid = 0;
    for _ in 0..rng.random_range(1..=3) {
        let depth = rng.random_range(1..=3);
        let mut vars: Vec<String> = Vec::new();
        let mut indent = String::new();
        for _ in 0..depth {
            let v = format!("v{next_var}");
            next_var += 1;
            let header = match (rng.random_range(0..5), vars.last()) {
                (0, _) => "range(N - 1, -1, -1)".to_string(),
                (1, _) => "range(0, N, 2)".to_string(),
                (2, Some(o)) => format!("range({o}, N)"),
                (3, Some(o)) => format!("range(0, {o} + 1)"),
                _ => "range(0, N)".to_string(),
            };
            writeln!(src, "{indent}for {v} in {header}:").unwrap();
            indent.push_str("    ");
            vars.push(v);
        }
        if rng.random_bool(0.3) {
            let v = &vars[rng.random_range(0..vars.len())];
            let name = format!("t{next_var}");
            next_var += 1;
            writeln!(src, "{indent}{name} = {v} + 1").unwrap();
            vars.push(name);
        }
        let mut else_branch = false;
        if rng.random_bool(0.3) && vars.len() >= 2 {
            writeln!(src, "{indent}if {} <= {}:", vars[0], vars[1]).unwrap();
            indent.push_str("    ");
            else_branch = rng.random_bool(0.5);
        }
        let loop_vars: Vec<String> = vars.iter().filter(|v| v.starts_with('v')).cloned().collect();
        let mut stmt = |rng: &mut ChaCha8Rng, indent: &str, src: &mut String| {
            let out = if rng.random_bool(0.5) { "Y" } else { "Z" };
            let w = if rng.random_bool(0.7) {
                format!("{}, {sid}", injective_index(&loop_vars))
            } else {
                format!("{}, {}", affine_index(rng, &vars), affine_index(rng, &vars))
            };
            let read = |rng: &mut ChaCha8Rng| {
                let m = if rng.random_bool(0.3) { "X" } else { "Y" };
                let d1 =
                    if rng.random_bool(0.6) { rng.random_range(0..=sid).to_string() } else { affine_index(rng, &vars) };
                format!("{m}[{}, {d1}]", affine_index(rng, &vars))
            };
            let (a, b) = (read(rng), read(rng));
            writeln!(src, "{indent}{out}[{w}] = add({a}, {b})").unwrap();
            sid += 1;
        };
        stmt(&mut rng, &indent, &mut src);
        if else_branch {
            indent.truncate(indent.len() - 4);
            writeln!(src, "{indent}else:").unwrap();
            indent.push_str("    ");
            stmt(&mut rng, &indent, &mut src);
        }
    }
    src
}
