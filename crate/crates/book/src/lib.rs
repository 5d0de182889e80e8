//! The rigfield guide. Each module holds one chapter, so every code listing
//! in the book runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/rigs.md")]
pub mod rigs {}

#[doc = include_str!("../../../book/src/skeleton_fields.md")]
pub mod skeleton_fields {}

#[doc = include_str!("../../../book/src/skin_embeddings.md")]
pub mod skin_embeddings {}

#[doc = include_str!("../../../book/src/transfer.md")]
pub mod transfer {}

#[doc = include_str!("../../../book/src/posing.md")]
pub mod posing {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/command_line.md")]
pub mod command_line {}
