//! Graph transformer language model: a decoder whose attention scores carry additive
//! node-pair biases derived from graph topology.

pub mod autodiff;
pub mod bias;
pub mod cli;
pub mod data;
pub mod features;
pub mod graph;
pub mod layout;
pub mod model;
pub mod params;
pub mod tensor;
pub mod tokenizer;
pub mod verify;
