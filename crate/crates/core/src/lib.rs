pub mod assess;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod diff;
pub mod econ;
pub mod model;
pub mod plot;
pub mod qas;
pub mod quadrature;
pub mod sampler;
pub mod synth;
