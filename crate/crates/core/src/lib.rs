pub mod dataset;
pub mod error;
pub mod gpr;
pub mod metrics;
pub mod modelstore;
pub mod mlp;
pub mod multifid;
pub mod preprocess;
pub mod rng;
pub mod surrogate;
pub mod synthbench;
pub mod tuner;

pub use error::{Error, ErrorClass, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/gpr.md")]
    mod gpr {}
    #[doc = include_str!("../../../book/src/mlp.md")]
    mod mlp {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/multifidelity.md")]
    mod multifidelity {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
}
