pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod model;
pub mod seeds;
pub mod tensor;
pub mod training;
