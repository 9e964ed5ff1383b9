//! Exact reverse maximum inner product search.
//!
//! Given users `Q`, items `P`, a query item `q` and `k`, find every user whose
//! top-k items by inner product over `P ∪ {q}` include `q`. The [`index`]
//! pre-computes norms, per-user lower bounds on the k-th best inner product
//! and norm-ordered user blocks; the [`engine`] uses them to discard most
//! users in O(1) and falls back to an early-terminating scan otherwise.
//! [`oracle`] is the brute-force reference every result can be checked
//! against.

pub mod bench;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod index;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod persist;

pub use engine::{
    reverse_kmips, reverse_kmips_parallel, reverse_kmips_parallel_with, reverse_kmips_with, DecidedBy, DecisionOutcome,
    QueryOptions, QueryReport, Verdict,
};
pub use error::{Error, Result};
pub use index::{build_index, Block, BuildConfig, Index, ItemRecord, UserRecord};
pub use model::{euclidean_norm, inner_product, Record, Vector};
