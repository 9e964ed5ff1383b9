//! Reverse k-MIPS query processing.
//!
//! For every block the engine first tries to discard all members at once
//! (first member's norm times `‖q‖` against the block's rank-k bound). Users
//! of surviving blocks get one inner product with `q`, then two O(1) tests:
//! below their own rank-k lower bound means "no", at or above
//! `‖u‖·‖p_k‖` means "yes". Whatever is left is settled by a linear scan
//! over the norm-sorted items that stops as soon as either answer is
//! certain.
//!
//! Membership follows the strict-greater convention: `q` is in the top-k of
//! `u` iff fewer than `k` items `p` satisfy `u·p > u·q`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{Block, Index, UserRecord};
use crate::model::{dot, euclidean_norm, NormBound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Included,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecidedBy {
    BlockFilter,
    LowerBoundFilter,
    NormUpperFilter,
    ScanYes,
    ScanNo,
    ScanExhausted,
    /// `k` exceeds the number of items, so every user qualifies.
    TooFewItems,
}

impl DecidedBy {
    pub fn verdict(self) -> Verdict {
        match self {
            DecidedBy::BlockFilter | DecidedBy::LowerBoundFilter | DecidedBy::ScanNo => Verdict::Excluded,
            _ => Verdict::Included,
        }
    }

    fn is_scan(self) -> bool {
        matches!(self, DecidedBy::ScanYes | DecidedBy::ScanNo | DecidedBy::ScanExhausted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub verdict: Verdict,
    pub decided_by: DecidedBy,
    pub scanned_items: u64,
}

impl DecisionOutcome {
    fn filtered(decided_by: DecidedBy) -> Self {
        debug_assert!(!decided_by.is_scan());
        Self {
            verdict: decided_by.verdict(),
            decided_by,
            scanned_items: 0,
        }
    }

    fn scanned(decided_by: DecidedBy, scanned_items: u64) -> Self {
        Self {
            verdict: decided_by.verdict(),
            decided_by,
            scanned_items,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockDecision {
    Pruned,
    MustInspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Excluded,
    Included,
    Undecided,
}

/// Prunes `block` when no member can reach its rank-`k` lower bound.
///
/// `first_norm` is the norm of the block's first (largest-norm) member.
pub fn block_filter(block: &Block, first_norm: f64, q_norm: f64, k: usize, bound: NormBound) -> BlockDecision {
    if bound.upper(first_norm, q_norm) < block.bound(k) {
        BlockDecision::Pruned
    } else {
        BlockDecision::MustInspect
    }
}

/// O(1) per-user tests given `uq = u·q` and `‖p_k‖`.
pub fn user_filters(user: &UserRecord<'_>, uq: f64, k: usize, kth_item_norm: f64, bound: NormBound) -> FilterDecision {
    if uq < user.lower_bounds[k - 1] {
        FilterDecision::Excluded
    } else if uq >= bound.upper(user.norm, kth_item_norm) {
        FilterDecision::Included
    } else {
        FilterDecision::Undecided
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Score(f64);

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Running top-k of competitor inner products seen during a scan.
#[derive(Debug, Clone)]
pub struct ScanState {
    k: usize,
    top: BinaryHeap<Reverse<Score>>,
}

impl ScanState {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            top: BinaryHeap::with_capacity(k + 1),
        }
    }

    /// k-th largest value offered so far, `-inf` until `k` values arrived.
    pub fn threshold(&self) -> f64 {
        if self.top.len() < self.k {
            f64::NEG_INFINITY
        } else {
            self.top.peek().map_or(f64::NEG_INFINITY, |r| r.0 .0)
        }
    }

    pub fn offer(&mut self, value: f64) {
        if value <= self.threshold() {
            return;
        }
        self.top.push(Reverse(Score(value)));
        if self.top.len() > self.k {
            self.top.pop();
        }
    }

    pub fn len(&self) -> usize {
        self.top.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top.is_empty()
    }
}

/// Early-terminating scan over the norm-sorted items of `index`.
pub fn linear_scan(index: &Index, user: &UserRecord<'_>, uq: f64, k: usize) -> DecisionOutcome {
    let bound = index.norm_bound();
    let dim = index.dim();
    let mut state = ScanState::new(k);
    let mut scanned = 0u64;
    for (norm, item) in index.item_norms().iter().zip(index.item_vectors().chunks_exact(dim)) {
        if uq >= bound.upper(user.norm, *norm) {
            return DecisionOutcome::scanned(DecidedBy::ScanYes, scanned);
        }
        scanned += 1;
        state.offer(dot(user.vector, item));
        if state.threshold() > uq {
            return DecisionOutcome::scanned(DecidedBy::ScanNo, scanned);
        }
    }
    DecisionOutcome::scanned(DecidedBy::ScanExhausted, scanned)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    /// Test each block before touching its members.
    pub use_blocks: bool,
    /// Record the per-user decision in [`QueryReport::outcomes`].
    pub trace: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            use_blocks: true,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user_id: u64,
    pub outcome: DecisionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    /// Ascending user ids.
    pub result_ids: Vec<u64>,
    /// Full inner products evaluated (`u·q` plus scan products).
    pub ip_count: u64,
    pub blocks_total: usize,
    pub blocks_pruned: usize,
    /// `blocks_pruned / blocks_total`, 0 without blocks.
    pub alpha: f64,
    /// Users that reached the per-user lower-bound test.
    pub lower_bound_evaluations: u64,
    pub scanned_users: u64,
    pub scanned_items: u64,
    /// Mean items inspected per scanned user.
    pub mean_scan_length: f64,
    pub elapsed_seconds: f64,
    /// Time spent rebuilding for `k > k_max`, included in `elapsed_seconds`.
    pub rebuild_seconds: Option<f64>,
    /// Per-user decisions sorted by user id, when tracing.
    pub outcomes: Option<Vec<UserOutcome>>,
}

impl QueryReport {
    /// True when everything but timings matches.
    pub fn same_answer_and_work(&self, other: &Self) -> bool {
        let strip = |r: &Self| Self {
            elapsed_seconds: 0.0,
            rebuild_seconds: r.rebuild_seconds.map(|_| 0.0),
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Debug, Default)]
struct Partial {
    result_ids: Vec<u64>,
    ip_count: u64,
    blocks_pruned: usize,
    lower_bound_evaluations: u64,
    scanned_users: u64,
    scanned_items: u64,
    outcomes: Vec<UserOutcome>,
}

impl Partial {
    fn merge(&mut self, other: Partial) {
        self.result_ids.extend(other.result_ids);
        self.ip_count += other.ip_count;
        self.blocks_pruned += other.blocks_pruned;
        self.lower_bound_evaluations += other.lower_bound_evaluations;
        self.scanned_users += other.scanned_users;
        self.scanned_items += other.scanned_items;
        self.outcomes.extend(other.outcomes);
    }

    fn record(&mut self, trace: bool, user_id: u64, outcome: DecisionOutcome) {
        if outcome.verdict == Verdict::Included {
            self.result_ids.push(user_id);
        }
        if trace {
            self.outcomes.push(UserOutcome { user_id, outcome });
        }
    }
}

struct Query<'a> {
    index: &'a Index,
    q: &'a [f64],
    q_norm: f64,
    k: usize,
    kth_item_norm: f64,
    bound: NormBound,
    options: QueryOptions,
}

impl Query<'_> {
    fn run_blocks(&self, blocks: Range<usize>, acc: &mut Partial) {
        for block in &self.index.blocks()[blocks] {
            if self.options.use_blocks {
                let first = self.index.user(block.members.start);
                if block_filter(block, first.norm, self.q_norm, self.k, self.bound) == BlockDecision::Pruned {
                    acc.blocks_pruned += 1;
                    if self.options.trace {
                        for i in block.members.clone() {
                            acc.record(
                                true,
                                self.index.user(i).id,
                                DecisionOutcome::filtered(DecidedBy::BlockFilter),
                            );
                        }
                    }
                    continue;
                }
            }
            for i in block.members.clone() {
                let user = self.index.user(i);
                let outcome = self.decide(&user, acc);
                acc.record(self.options.trace, user.id, outcome);
            }
        }
    }

    fn decide(&self, user: &UserRecord<'_>, acc: &mut Partial) -> DecisionOutcome {
        let uq = dot(user.vector, self.q);
        acc.ip_count += 1;
        acc.lower_bound_evaluations += 1;
        match user_filters(user, uq, self.k, self.kth_item_norm, self.bound) {
            FilterDecision::Excluded => DecisionOutcome::filtered(DecidedBy::LowerBoundFilter),
            FilterDecision::Included => DecisionOutcome::filtered(DecidedBy::NormUpperFilter),
            FilterDecision::Undecided => {
                let outcome = linear_scan(self.index, user, uq, self.k);
                acc.ip_count += outcome.scanned_items;
                acc.scanned_users += 1;
                acc.scanned_items += outcome.scanned_items;
                outcome
            }
        }
    }
}

fn check_query(index: &Index, q: &[f64], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidK(k));
    }
    if q.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: q.len(),
        });
    }
    if let Some(component) = q.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { record: 0, component });
    }
    Ok(())
}

fn execute(index: &Index, q: &[f64], k: usize, options: QueryOptions, workers: usize) -> Result<QueryReport> {
    let started = Instant::now();
    check_query(index, q, k)?;
    if workers < 1 {
        return Err(Error::InvalidWorkers(workers));
    }

    let rebuilt;
    let (index, rebuild_seconds) = if k > index.k_max() {
        let t = Instant::now();
        rebuilt = index.rebuild_with_k_max(k)?;
        (&rebuilt, Some(t.elapsed().as_secs_f64()))
    } else {
        (index, None)
    };

    let mut acc = Partial::default();
    if k > index.m() {
        for user in index.users() {
            acc.record(
                options.trace,
                user.id,
                DecisionOutcome::filtered(DecidedBy::TooFewItems),
            );
        }
    } else {
        let query = Query {
            index,
            q,
            q_norm: euclidean_norm(q),
            k,
            kth_item_norm: index.item(k - 1).norm,
            bound: index.norm_bound(),
            options,
        };
        let n_blocks = index.blocks().len();
        if workers == 1 || n_blocks <= 1 {
            query.run_blocks(0..n_blocks, &mut acc);
        } else {
            acc = run_parallel(&query, n_blocks, workers);
        }
    }

    acc.result_ids.sort_unstable();
    acc.outcomes.sort_unstable_by_key(|o| o.user_id);
    let blocks_total = index.blocks().len();
    Ok(QueryReport {
        alpha: if blocks_total == 0 {
            0.0
        } else {
            acc.blocks_pruned as f64 / blocks_total as f64
        },
        mean_scan_length: if acc.scanned_users == 0 {
            0.0
        } else {
            acc.scanned_items as f64 / acc.scanned_users as f64
        },
        result_ids: acc.result_ids,
        ip_count: acc.ip_count,
        blocks_total,
        blocks_pruned: acc.blocks_pruned,
        lower_bound_evaluations: acc.lower_bound_evaluations,
        scanned_users: acc.scanned_users,
        scanned_items: acc.scanned_items,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        rebuild_seconds,
        outcomes: options.trace.then_some(acc.outcomes),
    })
}

/// Blocks handed out per claim; small enough to balance the skew between
/// the high-norm head and the low-norm tail.
const BLOCKS_PER_CLAIM: usize = 16;

fn run_parallel(query: &Query<'_>, n_blocks: usize, workers: usize) -> Partial {
    let next = AtomicUsize::new(0);
    let partials: Vec<Partial> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut acc = Partial::default();
                    loop {
                        let start = next.fetch_add(BLOCKS_PER_CLAIM, AtomicOrdering::Relaxed);
                        if start >= n_blocks {
                            break;
                        }
                        query.run_blocks(start..(start + BLOCKS_PER_CLAIM).min(n_blocks), &mut acc);
                    }
                    acc
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("query worker panicked"))
            .collect()
    });
    let mut acc = Partial::default();
    for p in partials {
        acc.merge(p);
    }
    acc
}

/// Every user whose top-k over `P ∪ {q}` contains `q`.
///
/// A `k` above the index's `k_max` rebuilds a temporary index first.
pub fn reverse_kmips(index: &Index, q: &[f64], k: usize) -> Result<QueryReport> {
    execute(index, q, k, QueryOptions::default(), 1)
}

pub fn reverse_kmips_with(index: &Index, q: &[f64], k: usize, options: QueryOptions) -> Result<QueryReport> {
    execute(index, q, k, options, 1)
}

/// Same answer as [`reverse_kmips`], with blocks spread over `workers` threads.
pub fn reverse_kmips_parallel(index: &Index, q: &[f64], k: usize, workers: usize) -> Result<QueryReport> {
    execute(index, q, k, QueryOptions::default(), workers)
}

pub fn reverse_kmips_parallel_with(
    index: &Index,
    q: &[f64],
    k: usize,
    workers: usize,
    options: QueryOptions,
) -> Result<QueryReport> {
    execute(index, q, k, options, workers)
}
