pub mod error;
pub mod linalg;
pub mod problems;
pub mod local_solver;
pub mod qp_solver;
pub mod aladin;
pub mod consensus_admm;
pub mod fed;
pub mod diagnostics;
pub mod harness;
