pub mod catalog;
pub mod corpus;
pub mod embedding;
pub mod latent;
pub mod lexical;
pub mod pruning;
pub mod ranking;
pub mod recommend;
pub mod resources;
pub mod retrieval;
pub mod text;
pub mod metadata;
pub mod config;
pub mod pipeline;
pub mod session;
pub mod demo;
pub mod eval;
