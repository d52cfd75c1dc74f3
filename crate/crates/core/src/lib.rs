pub mod fixtures;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod problem;
pub mod quad;
pub mod settings;
pub mod spectral;
pub mod surgery;
pub mod wave;
