//! mdbook cannot run a book's code blocks as tests, so this crate includes
//! every chapter as a module's documentation and lets `cargo test --doc`
//! do the work. One module per chapter keeps failures attributable to
//! their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/events.md")]
pub mod events {}

#[doc = include_str!("../../../book/src/spiking.md")]
pub mod spiking {}

#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/energy.md")]
pub mod energy {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
