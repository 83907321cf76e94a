pub mod data;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod kv;
pub mod model;
pub mod par;
pub mod sim;
pub mod tensor;
pub mod train;
