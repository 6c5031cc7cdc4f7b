//! Polynomial-chaos machinery on nested sparse grids.

pub mod forward;
pub mod grid;
pub mod polynomials;
pub mod prior;
pub mod rules;
pub mod surrogate;

pub use forward::{build_forward_surrogate, field_model, ForwardBuild, NodeCache};
pub use grid::{MultiIndexSet, ProjectionGrid};
pub use polynomials::Family;
pub use prior::{length_input_map, CocSurrogate, PriorRrmse, PriorSurrogates};
pub use surrogate::{rrmse, rrmse_pairs, InputMap, PCSurrogate};
