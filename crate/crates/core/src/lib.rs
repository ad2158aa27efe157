//! Speed limits of speculative decoding, modelled as a branching random walk.
//!
//! The target model's token tree is realized lazily from a [`Family`] of
//! i.i.d. child distributions. On top of that sit the optimal best-first
//! drafter ([`drafting`]), a stochastic verifier and iteration loop
//! ([`verify_sim`]), closed-form bounds ([`bounds`]), moment estimation from
//! log-probability traces ([`moments`]) and executable checks of the
//! probabilistic identities the bounds rest on ([`lemma_checks`]).
//!
//! All logarithms are natural; values are in nats.

pub mod bounds;
pub mod brw_tree;
pub mod distfam;
pub mod drafting;
mod error;
pub mod lemma_checks;
pub mod moments;
pub mod seed;
pub mod stats;
pub mod verify_sim;

pub use bounds::{BoundReport, MomentParams};
pub use brw_tree::{Count, NodeRef, TokenTree};
pub use distfam::{Family, FamilyKind, FamilySpec, NodeDistribution, PairedDistribution, TokenDistribution};
pub use drafting::{DraftConstraints, DraftTree};
pub use error::{Error, Result};
pub use verify_sim::{DraftMode, IterationOutcome, RunReport};

/// Default expansion budget for enumeration and counting.
pub const DEFAULT_BUDGET: u64 = 10_000_000;
