#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::len_without_is_empty,
    clippy::needless_range_loop
)]
pub mod basis;
pub mod error;
pub mod extremes;
pub mod ou_field;
pub mod parallel;
pub mod quad;
pub mod quadvar;
pub mod rng;
pub mod semigroup;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
