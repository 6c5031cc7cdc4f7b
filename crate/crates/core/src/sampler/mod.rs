//! Hierarchical MCMC: posterior assembly, adaptive Metropolis–Hastings,
//! diagnostics and field postprocessing.

pub mod chain;
pub mod ess;
pub mod posterior;
pub mod postprocess;

pub use chain::{adapt_proposal, mh_step, run_chain, Chain, Checkpoint, McmcConfig, RunControl, Sample};
pub use ess::{coordinate_ess, multi_ess};
pub use posterior::{ChainState, CocModel, ExactCoc, ExactPrior, FnForward, ForwardModel, Layout, Mode, Posterior, PriorEval, PriorModel};
pub use postprocess::{postprocess, FieldSummary, MapMode, PostConfig, QUANTILES};
