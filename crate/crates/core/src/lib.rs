//! Fixed-length feedback coding over discrete memoryless channels.
//!
//! The transmitter maps each message to a subinterval of `[0, 1]` whose length
//! tracks its pseudo-posterior probability, applies a fresh shared-random
//! cyclic shift before every channel use, and picks the input symbol by a
//! maximal-information-gain greedy rule. Encoder and decoder mirror each other
//! through noiseless feedback, so both maintain the same posterior state.
//!
//! The crate provides:
//!
//! * [`channel`] — discrete memoryless channels, their input distributions and
//!   the unit-interval partition induced by the input cdf;
//! * [`ivtree`] — the paired message-space / probability-space splay tree that
//!   stores the piecewise-linear cumulative pseudo-posterior map and supports
//!   queries and updates in amortized logarithmic time;
//! * [`codec`] — the feedback encoder/decoder built on the dual tree, plus a
//!   naive array-based reference codec used as a cross-implementation oracle;
//! * [`exponents`] — numerical analysis of the scheme's error exponent: the
//!   ideal and actual moment generating functions, the minimax constant Ψ,
//!   the exponent lower bound and the sphere-packing / random-coding
//!   comparison curves;
//! * [`rng`] — the seeded generator used for shared randomness and trial
//!   derivation.

pub mod channel;
pub mod codec;
pub mod dyadic;
pub mod exponents;
pub mod ivtree;
pub mod rng;

pub use channel::{ChannelError, Dmc, RedundantPolicy, WPartition};
pub use ivtree::{AuditReport, DualTree, TreeError};
