pub mod clock;
pub mod control;
pub mod executor;
pub mod harness;
pub mod provisioner;
pub mod sim;
pub mod store;
