pub mod checkpoint;
pub mod clustering;
pub mod data;
pub mod eval;
pub mod latent;
pub mod models;
pub mod studio;
pub mod tensor;
pub mod training;
