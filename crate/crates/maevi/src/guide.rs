//! The book under `book/` rendered as rustdoc, chapter per module, so the
//! guide's code blocks run as doc-tests and cannot rot.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/events-and-voxels.md")]
pub mod events_and_voxels {}

#[doc = include_str!("../../../book/src/motion-filter.md")]
pub mod motion_filter {}

#[doc = include_str!("../../../book/src/encoder.md")]
pub mod encoder {}

#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
