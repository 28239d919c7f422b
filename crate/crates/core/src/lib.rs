pub mod constraints;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod parser;
pub mod pipeline;
pub mod treebank_init;
