//! Pre-processing: norm-ordered user/item stores, per-user lower-bound
//! arrays built from the largest-norm items, and fixed-size user blocks.

use std::cmp::Ordering;
use std::ops::Range;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{dot, validate_records, NormBound, Record, Vector};

/// Placeholder for ranks that have no candidate (only when the pool holds
/// fewer than `k_max` items).
pub const NO_BOUND: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildConfig {
    pub k_max: usize,
    /// The candidate pool is the `min(m, factor * k_max)` largest-norm items.
    pub candidate_pool_factor: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            k_max: 25,
            candidate_pool_factor: 2,
        }
    }
}

impl BuildConfig {
    pub fn with_k_max(k_max: usize) -> Self {
        Self {
            k_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::InvalidKMax(self.k_max));
        }
        if self.candidate_pool_factor < 1 {
            return Err(Error::InvalidPoolFactor(self.candidate_pool_factor));
        }
        Ok(())
    }

    pub fn pool_size(&self, m: usize) -> usize {
        m.min(self.candidate_pool_factor.saturating_mul(self.k_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildStats {
    pub build_seconds: f64,
    pub n: usize,
    pub m: usize,
}

/// Borrowed view of one user in the sorted user store.
#[derive(Debug, Clone, Copy)]
pub struct UserRecord<'a> {
    pub id: u64,
    pub vector: &'a [f64],
    pub norm: f64,
    /// `lower_bounds[j - 1]` bounds the j-th highest inner product from below.
    pub lower_bounds: &'a [f64],
}

/// Borrowed view of one item in the sorted item store.
#[derive(Debug, Clone, Copy)]
pub struct ItemRecord<'a> {
    pub id: u64,
    pub vector: &'a [f64],
    pub norm: f64,
}

/// A contiguous run of norm-sorted users with element-wise minimum bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub members: Range<usize>,
    pub lower_bounds: Vec<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Block bound for rank `k` (1-based).
    pub fn bound(&self, k: usize) -> f64 {
        self.lower_bounds[k - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct UserStore {
    pub(crate) ids: Vec<u64>,
    pub(crate) norms: Vec<f64>,
    pub(crate) vectors: Vec<f64>,
    pub(crate) lower_bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct ItemStore {
    pub(crate) ids: Vec<u64>,
    pub(crate) norms: Vec<f64>,
    pub(crate) vectors: Vec<f64>,
}

/// The pre-built structure queried by the engine. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub(crate) dim: usize,
    pub(crate) k_max: usize,
    pub(crate) pool_factor: usize,
    pub(crate) pool_size: usize,
    pub(crate) block_capacity: usize,
    pub(crate) users: UserStore,
    pub(crate) items: ItemStore,
    pub(crate) blocks: Vec<Block>,
    pub(crate) stats: BuildStats,
}

/// `⌈log2 n⌉`, clamped to at least 1.
pub fn block_capacity(n: usize) -> usize {
    if n <= 2 {
        return 1;
    }
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

fn by_norm_desc<'a>(norms: &'a [f64], ids: &'a [u64]) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| norms[b].total_cmp(&norms[a]).then(ids[a].cmp(&ids[b]))
}

fn sorted_store(records: &[Record], dim: usize) -> (Vec<u64>, Vec<f64>, Vec<f64>) {
    let norms: Vec<f64> = records.iter().map(|r| r.vector.norm()).collect();
    let ids: Vec<u64> = records.iter().map(|r| r.id).collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_unstable_by(by_norm_desc(&norms, &ids));

    let mut vectors = Vec::with_capacity(records.len() * dim);
    for &i in &order {
        vectors.extend_from_slice(records[i].vector.as_slice());
    }
    (
        order.iter().map(|&i| ids[i]).collect(),
        order.iter().map(|&i| norms[i]).collect(),
        vectors,
    )
}

/// Builds the index.
pub fn build_index(users: &[Record], items: &[Record], config: BuildConfig) -> Result<Index> {
    let started = Instant::now();
    config.validate()?;
    if items.is_empty() {
        return Err(Error::EmptyItems);
    }
    let dim = validate_records(items, None)?.expect("items are non-empty");
    validate_records(users, Some(dim))?;

    let (item_ids, item_norms, item_vectors) = sorted_store(items, dim);
    let (user_ids, user_norms, user_vectors) = sorted_store(users, dim);

    let k_max = config.k_max;
    let pool_size = config.pool_size(items.len());
    let pool = &item_vectors[..pool_size * dim];

    let mut lower_bounds = vec![NO_BOUND; users.len() * k_max];
    for (user, out) in user_vectors.chunks_exact(dim).zip(lower_bounds.chunks_exact_mut(k_max)) {
        fill_lower_bounds(user, pool, dim, out);
    }

    let capacity = block_capacity(users.len());
    let blocks = blocks_from_bounds(&lower_bounds, k_max, capacity);

    Ok(Index {
        dim,
        k_max,
        pool_factor: config.candidate_pool_factor,
        pool_size,
        block_capacity: capacity,
        users: UserStore {
            ids: user_ids,
            norms: user_norms,
            vectors: user_vectors,
            lower_bounds,
        },
        items: ItemStore {
            ids: item_ids,
            norms: item_norms,
            vectors: item_vectors,
        },
        blocks,
        stats: BuildStats {
            build_seconds: started.elapsed().as_secs_f64(),
            n: users.len(),
            m: items.len(),
        },
    })
}

/// Top-`out.len()` inner products of `user` over the flat `pool`, highest
/// first; unfilled ranks keep [`NO_BOUND`].
fn fill_lower_bounds(user: &[f64], pool: &[f64], dim: usize, out: &mut [f64]) {
    out.fill(NO_BOUND);
    let k = out.len();
    for item in pool.chunks_exact(dim) {
        let ip = dot(user, item);
        if ip <= out[k - 1] {
            continue;
        }
        // insertion into the descending selection buffer
        let mut pos = k - 1;
        while pos > 0 && out[pos - 1] < ip {
            out[pos] = out[pos - 1];
            pos -= 1;
        }
        out[pos] = ip;
    }
}

/// Lower-bound array of `user` over `pool`: entry `j - 1` is the j-th highest
/// inner product, [`NO_BOUND`] past the pool size.
pub fn build_lower_bound_array(user: &[f64], pool: &[ItemRecord<'_>], k_max: usize) -> Vec<f64> {
    let mut out = vec![NO_BOUND; k_max];
    if k_max == 0 {
        return out;
    }
    let flat: Vec<f64> = pool.iter().flat_map(|p| p.vector.iter().copied()).collect();
    fill_lower_bounds(user, &flat, user.len(), &mut out);
    out
}

fn blocks_from_bounds(lower_bounds: &[f64], k_max: usize, capacity: usize) -> Vec<Block> {
    let n = lower_bounds.len() / k_max;
    let mut blocks = Vec::with_capacity(n.div_ceil(capacity));
    let mut start = 0;
    for chunk in lower_bounds.chunks(capacity * k_max) {
        let mut bounds = vec![f64::INFINITY; k_max];
        for member in chunk.chunks_exact(k_max) {
            for (b, &l) in bounds.iter_mut().zip(member) {
                *b = b.min(l);
            }
        }
        let len = chunk.len() / k_max;
        blocks.push(Block {
            members: start..start + len,
            lower_bounds: bounds,
        });
        start += len;
    }
    blocks
}

/// Partitions norm-sorted users into blocks of `capacity`, each carrying
/// the element-wise minimum of its members' lower-bound arrays.
pub fn build_blocks(users: &[UserRecord<'_>], k_max: usize, capacity: usize) -> Vec<Block> {
    assert!(capacity >= 1, "block capacity must be positive");
    let flat: Vec<f64> = users
        .iter()
        .flat_map(|u| u.lower_bounds[..k_max].iter().copied())
        .collect();
    blocks_from_bounds(&flat, k_max, capacity)
}

impl Index {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.users.ids.len()
    }

    pub fn m(&self) -> usize {
        self.items.ids.len()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn candidate_pool_factor(&self) -> usize {
        self.pool_factor
    }

    pub fn candidate_pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn block_capacity(&self) -> usize {
        self.block_capacity
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn stats(&self) -> &BuildStats {
        &self.stats
    }

    pub fn norm_bound(&self) -> NormBound {
        NormBound::for_dim(self.dim)
    }

    pub fn config(&self) -> BuildConfig {
        BuildConfig {
            k_max: self.k_max,
            candidate_pool_factor: self.pool_factor,
        }
    }

    /// User at sorted position `i`.
    pub fn user(&self, i: usize) -> UserRecord<'_> {
        let (d, k) = (self.dim, self.k_max);
        UserRecord {
            id: self.users.ids[i],
            vector: &self.users.vectors[i * d..(i + 1) * d],
            norm: self.users.norms[i],
            lower_bounds: &self.users.lower_bounds[i * k..(i + 1) * k],
        }
    }

    /// Item at sorted position `j`.
    pub fn item(&self, j: usize) -> ItemRecord<'_> {
        let d = self.dim;
        ItemRecord {
            id: self.items.ids[j],
            vector: &self.items.vectors[j * d..(j + 1) * d],
            norm: self.items.norms[j],
        }
    }

    pub fn users(&self) -> impl ExactSizeIterator<Item = UserRecord<'_>> + '_ {
        (0..self.n()).map(|i| self.user(i))
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = ItemRecord<'_>> + '_ {
        (0..self.m()).map(|j| self.item(j))
    }

    pub(crate) fn item_norms(&self) -> &[f64] {
        &self.items.norms
    }

    pub(crate) fn item_vectors(&self) -> &[f64] {
        &self.items.vectors
    }

    /// Item sorted position for an external id.
    pub fn item_position(&self, id: u64) -> Option<usize> {
        self.items.ids.iter().position(|&x| x == id)
    }

    /// Owned copies of the user set, in sorted order.
    pub fn user_records(&self) -> Vec<Record> {
        self.users()
            .map(|u| Record::new(u.id, Vector::new(u.vector.to_vec()).expect("stored vectors are valid")))
            .collect()
    }

    /// Owned copies of the item set, in sorted order.
    pub fn item_records(&self) -> Vec<Record> {
        self.items()
            .map(|p| Record::new(p.id, Vector::new(p.vector.to_vec()).expect("stored vectors are valid")))
            .collect()
    }

    /// A fresh index over the same data with a larger `k_max`.
    pub fn rebuild_with_k_max(&self, k_max: usize) -> Result<Index> {
        build_index(
            &self.user_records(),
            &self.item_records(),
            BuildConfig {
                k_max,
                candidate_pool_factor: self.pool_factor,
            },
        )
    }

    /// Number of stored lower-bound entries, users plus blocks.
    pub fn lower_bound_entries(&self) -> usize {
        self.users.lower_bounds.len() + self.blocks.iter().map(|b| b.lower_bounds.len()).sum::<usize>()
    }

    /// Replaces every user and block bound with [`NO_BOUND`].
    #[cfg(test)]
    pub(crate) fn without_lower_bounds(mut self) -> Self {
        self.users.lower_bounds.fill(NO_BOUND);
        for b in &mut self.blocks {
            b.lower_bounds.fill(NO_BOUND);
        }
        self
    }

    #[cfg(test)]
    pub(crate) fn user_lower_bounds_mut(&mut self, i: usize) -> &mut [f64] {
        let k = self.k_max;
        &mut self.users.lower_bounds[i * k..(i + 1) * k]
    }
}
