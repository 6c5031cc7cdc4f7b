pub mod diffusion;
pub mod eikonal;
