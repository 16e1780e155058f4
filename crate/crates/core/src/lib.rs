pub mod autodiff;
pub mod data;
pub mod model;
pub mod awl;
pub mod augment;
pub mod eval;
pub mod experiment;
pub mod synthetic;
pub mod trainer;
