pub mod analysis;
pub mod burden;
pub mod cohort;
pub mod error;
pub mod logistic;
pub mod matching;
pub mod optim;
pub mod pipeline;
pub mod pkpd;
pub mod sensibase;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/library.md")]
    mod library {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
}
