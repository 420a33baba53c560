pub mod cli;
pub mod consensus;
pub mod ekf;
pub mod fusvaf;
pub mod sim;
pub mod trace;
