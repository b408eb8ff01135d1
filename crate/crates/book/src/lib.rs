//! The chapters of `book/`, one module each, so that `cargo test --doc`
//! compiles and runs every listing in the guide.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/forward-process.md")]
pub mod forward_process {}
#[doc = include_str!("../../../book/src/reverse-sampling.md")]
pub mod reverse_sampling {}
#[doc = include_str!("../../../book/src/structure-prior.md")]
pub mod structure_prior {}
#[doc = include_str!("../../../book/src/score-network.md")]
pub mod score_network {}
#[doc = include_str!("../../../book/src/semantic-guidance.md")]
pub mod semantic_guidance {}
#[doc = include_str!("../../../book/src/saem.md")]
pub mod saem {}
#[doc = include_str!("../../../book/src/phantoms-and-metrics.md")]
pub mod phantoms_and_metrics {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
