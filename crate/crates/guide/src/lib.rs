//! The guide chapters, compiled so their examples run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/workflow.md")]
pub mod workflow {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}

#[doc = include_str!("../../../book/src/labels.md")]
pub mod labels {}

#[doc = include_str!("../../../book/src/ground.md")]
pub mod ground {}

#[doc = include_str!("../../../book/src/costmap.md")]
pub mod costmap {}

#[doc = include_str!("../../../book/src/planner.md")]
pub mod planner {}

#[doc = include_str!("../../../book/src/http-api.md")]
pub mod http_api {}

#[doc = include_str!("../../../book/src/persistence.md")]
pub mod persistence {}
