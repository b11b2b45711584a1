//! Disclosure-risk and utility analysis for noisy census-like count tables.
//!
//! The crate covers the full chain from a static table programme to a
//! parameter recommendation:
//!
//! * [`table`]: breakdown catalogs, table programmes, microdata, tabulation.
//! * [`noise`]: Laplace, geometric, truncated and cell-key noise, p-tables.
//! * [`accounting`]: differential-privacy accounting for count outputs.
//! * [`irr`]: counting independent redundant representations of statistics.
//! * [`release`]: noisy releases of a whole programme.
//! * [`attack`]: bound disclosure, margin exploitation and averaging attacks.
//! * [`utility`]: small-area tail distortions.
//! * [`scan`]: combined risk/utility parameter grids.

// `!(x > 0.0)` guards reject NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod attack;
pub mod error;
pub mod irr;
pub mod noise;
pub mod release;
pub mod rng;
pub mod scan;
pub mod table;
pub mod utility;

pub use error::{Result, SdcError};
