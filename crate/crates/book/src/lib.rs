// mdbook cannot run listings that depend on workspace crates, so every
// chapter is pulled in as a module doc and `cargo test --doc` runs it. One
// module per chapter keeps failures traceable to their file.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scenario.md")]
pub mod scenario {}

#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}

#[doc = include_str!("../../../book/src/trainer.md")]
pub mod trainer {}

#[doc = include_str!("../../../book/src/affordances.md")]
pub mod affordances {}

#[doc = include_str!("../../../book/src/learning.md")]
pub mod learning {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/live-sessions.md")]
pub mod live_sessions {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
