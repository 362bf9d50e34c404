pub mod delay_policy;
pub mod error;
pub mod estimator;
pub mod formulation;
pub mod lqg;
pub mod lti;
pub mod milp;
pub mod resource_manager;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use lti::{LinkSelection, NetworkModel, NoiseStream, PlantModel};
