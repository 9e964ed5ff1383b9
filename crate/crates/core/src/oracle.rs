//! Brute-force ground truth. Shares the inner-product kernel with the
//! engine but none of the index or filter code.

use std::cmp::Ordering;

use serde::Serialize;

use crate::index::Index;
use crate::model::{dot, Record};

/// Absolute slack allowed when comparing stored bounds to exact values.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// The `k` items with the highest inner product with `u`, value-descending,
/// ties by ascending item id.
pub fn brute_kmips(u: &[f64], items: &[Record], k: usize) -> Vec<(u64, f64)> {
    let mut scored: Vec<(u64, f64)> = items.iter().map(|p| (p.id, dot(u, p.vector.as_slice()))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Whether `q` is in the top-k of `u` over `items ∪ {q}`.
pub fn brute_decision(u: &[f64], items: &[Record], q: &[f64], k: usize) -> bool {
    let uq = dot(u, q);
    // full enumeration, no early exit: cost is always m products
    let greater = items.iter().filter(|p| dot(u, p.vector.as_slice()) > uq).count();
    greater < k
}

/// Ids of every user whose top-k over `items ∪ {q}` contains `q`, ascending.
pub fn brute_reverse_kmips(users: &[Record], items: &[Record], q: &[f64], k: usize) -> Vec<u64> {
    let mut ids: Vec<u64> = users
        .iter()
        .filter(|u| brute_decision(u.vector.as_slice(), items, q, k))
        .map(|u| u.id)
        .collect();
    ids.sort_unstable();
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundOwner {
    User(u64),
    /// Position in the block table.
    Block(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub owner: BoundOwner,
    /// 1-based rank.
    pub rank: usize,
    pub stored: f64,
    pub exact: f64,
}

/// j-th highest inner products of `u` over all items, `-inf` past `m`.
fn exact_ranks(u: &[f64], items: &[Record], k_max: usize) -> Vec<f64> {
    let mut all: Vec<f64> = items.iter().map(|p| dot(u, p.vector.as_slice())).collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.resize(k_max, f64::NEG_INFINITY);
    all
}

fn exceeds(stored: f64, exact: f64) -> bool {
    if exact == f64::NEG_INFINITY {
        return stored != f64::NEG_INFINITY;
    }
    stored.partial_cmp(&(exact + BOUND_TOLERANCE)) == Some(Ordering::Greater)
}

/// Every stored user or block bound that exceeds its exact counterpart.
pub fn check_bound_soundness(index: &Index, users: &[Record], items: &[Record]) -> Vec<BoundViolation> {
    let k_max = index.k_max();
    let by_id: std::collections::HashMap<u64, &Record> = users.iter().map(|u| (u.id, u)).collect();
    let mut violations = Vec::new();

    let mut exact_by_position = Vec::with_capacity(index.n());
    for stored in index.users() {
        let exact = match by_id.get(&stored.id) {
            Some(u) => exact_ranks(u.vector.as_slice(), items, k_max),
            None => vec![f64::NEG_INFINITY; k_max],
        };
        for (j, (&s, &e)) in stored.lower_bounds.iter().zip(&exact).enumerate() {
            if exceeds(s, e) {
                violations.push(BoundViolation {
                    owner: BoundOwner::User(stored.id),
                    rank: j + 1,
                    stored: s,
                    exact: e,
                });
            }
        }
        exact_by_position.push(exact);
    }

    for (b, block) in index.blocks().iter().enumerate() {
        for (j, &s) in block.lower_bounds.iter().enumerate() {
            let exact = block
                .members
                .clone()
                .map(|i| exact_by_position[i][j])
                .fold(f64::INFINITY, f64::min);
            if exceeds(s, exact) {
                violations.push(BoundViolation {
                    owner: BoundOwner::Block(b),
                    rank: j + 1,
                    stored: s,
                    exact,
                });
            }
        }
    }
    violations
}
