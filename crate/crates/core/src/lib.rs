//! Factored-action reinforcement learning: tabular MDPs, linear Q
//! decompositions over sub-actions, sufficient-condition checks, a bandit
//! analysis, a sepsis simulator and an offline pipeline.

pub mod bandit;
pub mod conditions;
pub mod experiment;
pub mod factorization;
pub mod gallery;
pub mod mdp;
pub mod offline;
pub mod sepsis;
pub mod svg;
