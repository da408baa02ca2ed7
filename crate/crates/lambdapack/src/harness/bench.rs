//! Implicit per-node analysis against full DAG enumeration, across grid sizes.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use lambdapack_core::analysis::AnalysisError;
use lambdapack_core::lang::{enumerate_accesses, enumerate_nodes, EnumError};
use lambdapack_core::{Analyzer, Binding, NodeRef, Program, TileRef};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Enumeration(#[from] EnumError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub grid: i64,
    pub nodes: usize,
    pub edges: usize,
    pub program_bytes: usize,
    pub enumerate_s: f64,
    pub children_median_s: f64,
    pub parents_median_s: f64,
}

/// Every edge of the DAG by walking all nodes and matching tiles.
pub fn enumerate_edges(p: &Program, params: &Binding) -> Result<Vec<(NodeRef, NodeRef)>, EnumError> {
    let accesses = enumerate_accesses(p, params)?;
    let mut writer: HashMap<&TileRef, &NodeRef> = HashMap::new();
    for a in &accesses {
        for t in &a.writes {
            writer.insert(t, &a.node);
        }
    }
    let mut edges = Vec::new();
    for a in &accesses {
        for t in &a.reads {
            if let Some(w) = writer.get(t) {
                edges.push(((*w).clone(), a.node.clone()));
            }
        }
    }
    edges.sort();
    edges.dedup();
    Ok(edges)
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v.get(v.len() / 2).copied().unwrap_or_default()
}

/// Times both analysis modes for `gen(grid)` at each grid size.
///
/// Enumeration is timed `reps` times and the fastest is kept. `samples`
/// random nodes are queried, each `reps` times, and the median of per-query
/// times is reported.
pub fn bench_analysis(
    gen: impl Fn(i64) -> Program,
    grids: &[i64],
    samples: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &grid in grids {
        let p = gen(grid);
        let params = p.bind_params(&Binding::new()).map_err(EnumError::from)?;

        let mut edges = Vec::new();
        let mut fastest = Duration::MAX;
        for _ in 0..reps.max(1) {
            let t = Instant::now();
            edges = enumerate_edges(&p, &params)?;
            fastest = fastest.min(t.elapsed());
        }
        let enumerate_s = fastest.as_secs_f64();

        let nodes = enumerate_nodes(&p, &params)?;
        let analyzer = Analyzer::new(&p, &params)?;
        let picked: Vec<&NodeRef> = (0..samples).filter_map(|_| nodes.choose(&mut rng)).collect();
        let mut children = Vec::new();
        let mut parents = Vec::new();
        for n in picked {
            for _ in 0..reps {
                let t = Instant::now();
                std::hint::black_box(analyzer.children_of(n)?);
                children.push(t.elapsed());
                let t = Instant::now();
                std::hint::black_box(analyzer.parents_of(n)?);
                parents.push(t.elapsed());
            }
        }
        rows.push(BenchRow {
            grid,
            nodes: nodes.len(),
            edges: edges.len(),
            program_bytes: p.to_bytes().len(),
            enumerate_s,
            children_median_s: median(children).as_secs_f64(),
            parents_median_s: median(parents).as_secs_f64(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lambdapack_core::programs::gen_cholesky;

    #[test]
    fn edge_counts_match_closed_form() {
        // Cholesky on a 2×2 grid: chol→trsm, trsm→syrk (twice, as X and Y
        // collapse to one edge), syrk→chol.
        let p = gen_cholesky(2);
        let e = enumerate_edges(&p, &p.bind_params(&Binding::new()).unwrap()).unwrap();
        assert_eq!(e.len(), 3);
        let rows = bench_analysis(gen_cholesky, &[2, 3], 3, 1, 0).unwrap();
        assert_eq!(rows[0].program_bytes, rows[1].program_bytes);
        assert_eq!((rows[0].nodes, rows[1].nodes), (4, 10));
    }
}
