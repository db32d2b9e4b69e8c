//! Learner performance scoring, local logistic training and a federated
//! model hub exchanging encrypted parameter updates over a simulated network.

pub mod harness;
pub mod hub;
pub mod privacy;
pub mod scoring;
pub mod trainer;
pub mod transport;
