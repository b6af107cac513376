//! Non-monotone additively preconditioned trust-region training.
//!
//! The parameter vector of a layered network is split into subdomains, one
//! per contiguous block of layers. Each outer iteration solves every
//! subdomain locally with a step-bounded Adam against frozen boundary data,
//! sums the local steps into a global proposal, and accepts or corrects that
//! proposal with a non-monotone trust-region test before a final smoothing
//! trust-region step.
//!
//! Modules, bottom up:
//!
//! - [`tensor_ad`]: dense tensors and a reverse-mode tape;
//! - [`model`]: layered networks, global evaluation and block caches;
//! - [`partition`]: restriction/prolongation over parameter index sets;
//! - [`local_solver`]: constrained Adam for one subdomain;
//! - [`globalization`]: window, agreement ratios, radius policy, corrections;
//! - [`driver`]: outer iteration for every method preset and the training loop;
//! - [`harness`]: datasets, config files, metrics CSV and SVG figures.

pub mod driver;
pub mod globalization;
pub mod harness;
pub mod local_solver;
pub mod model;
pub mod partition;
pub mod tensor_ad;

pub use driver::{run_training, Method, MethodConfig, Optimizer, RunStatus, TrainingOptions, TrainingRun};
pub use globalization::{NtrConstants, NtrDirection, NtrState};
pub use model::{Activation, Architecture, Batch, BlockCache, BlockSplit, LossKind, SequentialNet, Targets};
pub use partition::ParamPartition;
