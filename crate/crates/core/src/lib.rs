pub mod expr;
pub mod tokenizer;
pub mod generator;
pub mod seed;
pub mod artifact;
pub mod sampler;
pub mod model;
pub mod trainer;
pub mod scaling;
pub mod evaluator;
pub mod pipeline;
