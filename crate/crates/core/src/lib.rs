pub mod eval;
pub mod ingest;
pub mod models;
pub mod sampling;
pub mod seed;
pub mod splits;
pub mod tensor;
pub mod train;
