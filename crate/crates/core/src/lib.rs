pub mod checkpoint;
pub mod detector;
pub mod diffusion;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod residual;
pub mod rng;
pub mod synthesis;
