//! Active coverage in episodic tabular MDPs.

pub mod envs;
pub mod mdp;
pub mod lp;
pub mod flow;
pub mod learners;
pub mod covgame;
pub mod reachability;
pub mod pce;
pub mod principle;
pub mod bench;
