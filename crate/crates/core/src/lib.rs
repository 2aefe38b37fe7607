//! Document-level n-ary relation extraction. A relation holds in a document
//! when some short segment expresses it locally and each of the segment's
//! argument mentions resolves, through a chain of coreference, ISA and
//! part-of links, to the queried entity.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod learning;
pub mod linear;
pub mod pipeline;
pub mod protocol;
pub mod relation;
pub mod resolution;
pub mod supervision;
pub mod synth;

pub use error::{Error, Result};
