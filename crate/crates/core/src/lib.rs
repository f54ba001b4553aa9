pub mod diffusion;
pub mod env;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod trust;
