pub mod error;
pub mod factors;
pub mod geodesy;
pub mod gp;
pub mod graph;
pub mod lie;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coordinates.md")]
    mod coordinates {}
    #[doc = include_str!("../../../book/src/lie.md")]
    mod lie {}
    #[doc = include_str!("../../../book/src/motion-priors.md")]
    mod motion_priors {}
    #[doc = include_str!("../../../book/src/factors.md")]
    mod factors {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
