//! Distributed state estimation for LTI plants over delayed networks with
//! identity-spoofing adversaries.

pub mod adversary;
pub mod config;
pub mod export;
pub mod filter;
pub mod graph;
pub mod lti;
pub mod medag;
pub mod observer;
pub mod scenarios;
pub mod sim;

/// Node identifier shared by regular nodes and spoofers.
pub type NodeId = u32;
