//! The guide's code listings, compiled as doc-tests. mdbook cannot run them
//! against a workspace crate, so each chapter is pulled in as the docs of an
//! empty module and `cargo test --doc` does the work.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/kernel.md")]
pub mod kernel {}
#[doc = include_str!("../../../book/src/learner.md")]
pub mod learner {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
