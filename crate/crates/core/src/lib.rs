//! Staged robust parsing and anytime translation over word lattices.

pub mod chart;
pub mod corpus;
pub mod decoder;
pub mod ebl;
pub mod grammar;
pub mod lattice;
pub mod lr;
pub mod pipeline;
pub mod pruner;
pub mod semantics;
pub mod store;
pub mod sexpr;
pub mod translator;
pub mod treebanker;
pub mod service;
