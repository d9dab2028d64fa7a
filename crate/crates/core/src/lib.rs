//! Multi-class classification from aggregate observations.
//!
//! Training data arrive as groups of instances `x_1:m` tagged with a single
//! aggregate label `z = g(y_1, ..., y_m)` of the hidden class labels: whether
//! two instances share a class, which of two is closer to an anchor, how many
//! of each class a bag holds, whether a bag contains a positive, or how two
//! ordinal labels compare. The crate learns an ordinary `k`-class classifier
//! from such groups by minimizing an importance-weighted instance loss whose
//! expectation equals the supervised classification risk.
//!
//! The pieces:
//!
//! - [`aggregate`]: tasks, their aggregate functions and label spaces.
//! - [`data`]: labeled datasets, synthetic mixtures, group sampling, I/O.
//! - [`posterior`]: `p(z | x)` and `p(z, y_i = j | x)` in closed form, with a
//!   brute-force reference.
//! - [`loss`]: the weighted aggregate loss, the log-likelihood baseline, the
//!   EM lower bound.
//! - [`model`]: linear and one-hidden-layer models, Adam.
//! - [`train`]: the epoch loop with warm-up and cached confidences.
//! - [`eval`]: accuracy, permutation-matched accuracy, bag accuracy.
//! - [`verify`]: self-checks that can be run from the command line.
//!
//! ```
//! use aggclass::aggregate::{Task, TaskKind};
//! use aggclass::posterior::{posterior, ClassProbabilities};
//!
//! let task = Task::new(TaskKind::Pairwise, 2, 3)?;
//! let a = ClassProbabilities::new(vec![0.6, 0.2, 0.2])?;
//! let b = ClassProbabilities::new(vec![0.2, 0.6, 0.2])?;
//! let post = posterior(&task, &[a, b], &true.into())?;
//! assert!((post.pz - 0.28).abs() < 1e-12);
//! # Ok::<(), aggclass::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod train;
pub mod verify;

pub use aggregate::{AggregateLabel, Task, TaskKind};
pub use data::{AggregateObservation, Dataset};
pub use error::{Error, Result};
pub use model::{Architecture, Head, Model};
pub use train::{TrainConfig, TrainOutcome};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/aggregate-observations.md")]
    mod aggregate_observations {}
    #[doc = include_str!("../../../book/src/posteriors.md")]
    mod posteriors {}
    #[doc = include_str!("../../../book/src/unbiased-loss.md")]
    mod unbiased_loss {}
    #[doc = include_str!("../../../book/src/em-view.md")]
    mod em_view {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
}
