use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use lambdapack::clock::{Clock, ManualClock};
use lambdapack::control::{DeleteOutcome, MemQueue, MemStateStore, NodeStatus, StateStore, TaskQueue};
use lambdapack::executor::children_with_totals;
use lambdapack_core::lang::enumerate_nodes;
use lambdapack_core::programs::{gen_cholesky, gen_tsqr};
use lambdapack_core::{Analyzer, Binding, NodeRef, Program};
use proptest::prelude::*;

type Dag = Vec<(NodeRef, Vec<(NodeRef, usize)>)>;

fn dag(p: &Program) -> Dag {
    let params = p.bind_params(&Binding::new()).unwrap();
    let a = Analyzer::new(p, &params).unwrap();
    enumerate_nodes(p, &params)
        .unwrap()
        .into_iter()
        .map(|n| {
            let c = children_with_totals(&a, &n).unwrap();
            (n, c)
        })
        .collect()
}

fn parent_counts(d: &Dag) -> HashMap<NodeRef, usize> {
    let mut m: HashMap<NodeRef, usize> = HashMap::new();
    for (_, children) in d {
        for (c, total) in children {
            m.insert(c.clone(), *total);
        }
    }
    m
}

/// A completion order that may repeat nodes: the permutation, then `repeats`
/// re-completions spliced in at arbitrary points.
fn order(n: usize) -> impl Strategy<Value = Vec<usize>> {
    (Just((0..n).collect::<Vec<_>>()).prop_shuffle(), prop::collection::vec((0..n, 0..=n), 0..n)).prop_map(
        |(mut perm, repeats)| {
            for (node, at) in repeats {
                perm.insert(at.min(perm.len()), node);
            }
            perm
        },
    )
}

fn check_threshold(d: &Dag, order: &[usize]) -> Result<(), TestCaseError> {
    let totals = parent_counts(d);
    let s = MemStateStore::new();
    let mut done = BTreeSet::new();
    let mut credited: HashMap<&NodeRef, usize> = HashMap::new();
    let mut ready_seen: BTreeMap<NodeRef, usize> = BTreeMap::new();
    for &i in order {
        let (node, children) = &d[i];
        let first = done.insert(node.clone());
        let ready = s.record_completion(node, children).unwrap();
        if !first {
            prop_assert!(ready.is_empty(), "repeat completion of {node} readied {ready:?}");
            continue;
        }
        let mut expected = Vec::new();
        for (c, _) in children {
            let k = credited.entry(c).or_default();
            *k += 1;
            if *k == totals[c] {
                expected.push(c.clone());
            }
        }
        let mut got = ready.clone();
        got.sort();
        expected.sort();
        prop_assert_eq!(&got, &expected, "after completing {}", node);
        for c in ready {
            *ready_seen.entry(c).or_default() += 1;
        }
        prop_assert_eq!(s.status(node).unwrap(), NodeStatus::Done);
    }
    prop_assert!(ready_seen.values().all(|&k| k == 1));
    prop_assert_eq!(ready_seen.len(), totals.len());
    let stats = s.stats().unwrap();
    prop_assert_eq!(stats.done, d.len());
    prop_assert_eq!(stats.duplicate_completions, order.len() - d.len());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn each_child_becomes_ready_exactly_once_at_its_last_parent(o in order(20)) {
        check_threshold(&dag(&gen_cholesky(4)), &o)?;
    }

    #[test]
    fn tree_merges_become_ready_exactly_once(o in order(15)) {
        check_threshold(&dag(&gen_tsqr(8)), &o)?;
    }
}

#[derive(Debug, Clone)]
enum Op {
    Enqueue,
    Receive,
    /// Delete the `k`th outstanding receipt.
    Delete(usize),
    Renew(usize),
    Advance(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => Just(Op::Enqueue),
        3 => Just(Op::Receive),
        2 => any::<usize>().prop_map(Op::Delete),
        1 => any::<usize>().prop_map(Op::Renew),
        2 => (1u64..150).prop_map(Op::Advance),
    ]
}

const LEASE: Duration = Duration::from_millis(100);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// No message is lost, none is leased twice at once, and only a live
    /// lease can delete.
    #[test]
    fn queue_delivers_at_least_once(ops in prop::collection::vec(op(), 1..80)) {
        let clock = ManualClock::new();
        let q = MemQueue::new("p", Arc::new(clock.clone()));
        let mut enqueued = 0i64;
        let mut deleted = BTreeSet::new();
        let mut receipts = Vec::new();
        // Message id -> lease expiry of its current holder.
        let mut leased: HashMap<u64, Duration> = HashMap::new();
        for o in ops {
            match o {
                Op::Enqueue => {
                    q.enqueue(NodeRef::new(0, [("i", enqueued)].into_iter().collect())).unwrap();
                    enqueued += 1;
                }
                Op::Receive => {
                    if let Some((m, r)) = q.receive(LEASE).unwrap() {
                        let now = clock.now();
                        if let Some(&exp) = leased.get(&m.id) {
                            prop_assert!(exp <= now, "message {} leased twice", m.id);
                        }
                        prop_assert!(!deleted.contains(&m.id));
                        leased.insert(m.id, r.expiry);
                        receipts.push(r);
                    }
                }
                Op::Delete(k) if !receipts.is_empty() => {
                    let r = receipts[k % receipts.len()];
                    let live = leased.get(&r.msg_id) == Some(&r.expiry) && clock.now() < r.expiry;
                    match q.delete(&r).unwrap() {
                        DeleteOutcome::Deleted => {
                            prop_assert!(live);
                            deleted.insert(r.msg_id);
                        }
                        DeleteOutcome::AlreadyDeleted => prop_assert!(deleted.contains(&r.msg_id)),
                        DeleteOutcome::Stale => prop_assert!(!live),
                    }
                }
                Op::Renew(k) if !receipts.is_empty() => {
                    let i = k % receipts.len();
                    if let Ok(r) = q.renew(&receipts[i], LEASE) {
                        leased.insert(r.msg_id, r.expiry);
                        receipts[i] = r;
                    }
                }
                Op::Advance(ms) => clock.advance(Duration::from_millis(ms)),
                _ => {}
            }
        }
        // Once every lease has lapsed, each undeleted message comes back.
        clock.advance(LEASE * 2);
        let mut redelivered = BTreeSet::new();
        while let Some((m, r)) = q.receive(LEASE).unwrap() {
            prop_assert!(m.delivery_count >= 1);
            redelivered.insert(m.id);
            prop_assert_eq!(q.delete(&r).unwrap(), DeleteOutcome::Deleted);
        }
        let all: BTreeSet<u64> = (0..enqueued as u64).collect();
        let missing: BTreeSet<u64> = all.difference(&deleted).copied().collect();
        prop_assert_eq!(redelivered, missing);
        prop_assert_eq!(q.depth().unwrap().pending, 0);
    }
}
